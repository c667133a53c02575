//! Concept graph learning.
//!
//! Fits a linear SEM `C ~ CW` over the most frequently active concepts by
//! full-batch Adam with a cosine-annealed learning rate, penalising the L1
//! norm of the weights and the trace-exponential acyclicity measure
//! `h(W) = tr(exp(W o W)) - M`, which is zero exactly when the support of W
//! is a DAG. The diagonal is masked to zero on every step.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::linalg::{expm, trace};
use crate::optim::{cosine_lr, Adam};
use crate::rng::{stage_rng, STAGE_GRAPH};
use crate::types::ConceptMatrix;

/// Learned weighted adjacency over `node_ids.len()` selected concepts.
/// Edges are the entries strictly above `edge_threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGraph {
    pub w: Array2<f64>,
    pub node_ids: Vec<usize>,
    pub edge_threshold: f64,
}

impl ConceptGraph {
    pub fn new(w: Array2<f64>, node_ids: Vec<usize>, edge_threshold: f64) -> Result<Self> {
        let m = w.nrows();
        if w.ncols() != m {
            return Err(CcgError::invalid("adjacency must be square"));
        }
        if node_ids.len() != m {
            return Err(CcgError::invalid(format!(
                "{} node ids for a {m}x{m} adjacency",
                node_ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if !node_ids.iter().all(|id| seen.insert(id)) {
            return Err(CcgError::invalid("node ids must be distinct"));
        }
        if w.diag().iter().any(|v| *v != 0.0) {
            return Err(CcgError::invalid("adjacency diagonal must be zero"));
        }
        Ok(Self {
            w,
            node_ids,
            edge_threshold,
        })
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    /// Ordered pairs `(i, j, w_ij)` with `w_ij > edge_threshold`, sorted by
    /// descending weight, ties by `(i, j)`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = self
            .w
            .indexed_iter()
            .filter(|((i, j), v)| i != j && **v > self.edge_threshold)
            .map(|((i, j), v)| (i, j, *v))
            .collect();
        out.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        out
    }

    /// Out-degree of every node under the edge threshold.
    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.m())
            .map(|i| {
                self.w
                    .row(i)
                    .indexed_iter()
                    .filter(|(j, v)| *j != i && **v > self.edge_threshold)
                    .count()
            })
            .collect()
    }
}

/// Graph-stage hyperparameters. Defaults: 64 nodes, lambda1 0.02, lambda2
/// 0.05, 300 epochs, Adam annealed from 1e-2 to 1e-4.
///
/// A fixed small acyclicity weight cannot push `h` to zero once the SEM term
/// finds a cyclic basin, so the effective weight is `lambda2 * rho(t)` with
/// `rho` ramping exponentially from 1 to `rho_max` over the first
/// three-quarters of training (continuation). `lambda2 = 0` disables the
/// constraint entirely, ramp included.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GraphTrainConfig {
    pub m: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub edge_threshold: f64,
    /// Final acyclicity continuation factor.
    pub rho_max: f64,
    /// Divide the SEM objective by N so lambda1/lambda2 are dataset-size
    /// invariant. Turn off to recover the raw Frobenius objective.
    pub normalize_by_n: bool,
    pub seed: u64,
}

impl Default for GraphTrainConfig {
    fn default() -> Self {
        Self {
            m: 64,
            lambda1: 0.02,
            lambda2: 0.05,
            epochs: 300,
            learning_rate: 0.01,
            lr_min: 1e-4,
            edge_threshold: 0.01,
            rho_max: 1e5,
            normalize_by_n: true,
            seed: 42,
        }
    }
}

impl GraphTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(CcgError::invalid("m must be at least 2"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(CcgError::invalid("lambda weights must be nonnegative"));
        }
        if self.epochs == 0 {
            return Err(CcgError::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_min > 0.0) {
            return Err(CcgError::invalid("learning rates must be positive"));
        }
        if !(self.rho_max >= 1.0) {
            return Err(CcgError::invalid("rho_max must be at least 1"));
        }
        Ok(())
    }

    /// Continuation factor at `epoch`: exponential ramp from 1 to `rho_max`
    /// over the first 75% of training, flat afterwards.
    pub fn rho(&self, epoch: usize) -> f64 {
        let ramp_end = (0.75 * self.epochs as f64).max(1.0);
        let t = (epoch as f64 / ramp_end).min(1.0);
        self.rho_max.powf(t)
    }
}

/// Summary of a trained graph.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphStats {
    pub sem_loss: f64,
    pub dag_violation: f64,
    pub edge_count: usize,
    pub density: f64,
}

/// Per-epoch training telemetry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphEpochRecord {
    pub epoch: usize,
    pub sem_loss: f64,
    pub l1: f64,
    pub dag_violation: f64,
    pub total: f64,
    pub lr: f64,
}

/// Pick the `m` concepts that fire most often (count of examples with a
/// strictly positive entry), ties to the lowest index. Returns the chosen
/// dictionary indices in descending-frequency order and the concept matrix
/// restricted to those columns in the same order.
pub fn select_top_concepts(
    c: &ConceptMatrix,
    m: usize,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let k_total = c.n_concepts();
    if m > k_total {
        return Err(CcgError::invalid(format!(
            "cannot select m={m} concepts from a dictionary of {k_total}"
        )));
    }
    let data = c.data();
    let mut freq: Vec<(usize, usize)> = (0..k_total)
        .map(|j| {
            let fires = data.column(j).iter().filter(|v| **v > 0.0).count();
            (j, fires)
        })
        .collect();
    freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let indices: Vec<usize> = freq.iter().take(m).map(|(j, _)| *j).collect();

    let mut c_sub = Array2::zeros((c.n_rows(), m));
    for (dst, &src) in indices.iter().enumerate() {
        c_sub.column_mut(dst).assign(&data.column(src));
    }
    Ok((indices, c_sub))
}

/// Acyclicity penalty `h(W) = tr(exp(W o W)) - M` and its gradient
/// `exp(W o W)^T o 2W`. Nonnegative everywhere, zero exactly on DAGs.
pub fn acyclicity(w: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(CcgError::numeric("acyclicity: non-finite weights"));
    }
    let m = w.nrows();
    let hadamard = w * w;
    let e = expm(&hadamard)?;
    let h = trace(&e) - m as f64;
    let grad = &e.t().to_owned() * &w.mapv(|v| 2.0 * v);
    Ok((h, grad))
}

/// SEM fit `||C - CW||_F^2 / N` with gradient `-2 C^T (C - CW) / N`,
/// diagonal zeroed.
pub fn sem_loss(c_sub: &Array2<f64>, w: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let (n, m) = (c_sub.nrows(), c_sub.ncols());
    if w.nrows() != m || w.ncols() != m {
        return Err(CcgError::invalid(format!(
            "adjacency is {}x{}, expected {m}x{m}",
            w.nrows(),
            w.ncols()
        )));
    }
    let resid = c_sub - &c_sub.dot(w);
    let loss = resid.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut grad = c_sub.t().dot(&resid).mapv(|v| -2.0 * v / n as f64);
    grad.diag_mut().fill(0.0);
    Ok((loss, grad))
}

/// Fit a sparse DAG over the given concept columns. `node_ids` records which
/// dictionary concepts the columns refer to (pass `0..m` when the columns are
/// already in canonical order). Deterministic per seed.
pub fn train_graph(
    c_sub: &Array2<f64>,
    node_ids: &[usize],
    cfg: &GraphTrainConfig,
) -> Result<(ConceptGraph, GraphStats, Vec<GraphEpochRecord>)> {
    cfg.validate()?;
    let m = c_sub.ncols();
    let mut rng = stage_rng(cfg.seed, STAGE_GRAPH);
    let mut w0 = Array2::zeros((m, m));
    for v in w0.iter_mut() {
        *v = rng.random_range(-0.01..0.01);
    }
    w0.diag_mut().fill(0.0);
    train_graph_from_init(c_sub, node_ids, w0, cfg)
}

/// Same as [`train_graph`] but starting from a caller-provided adjacency
/// (warm restarts, equivariance checks).
pub fn train_graph_from_init(
    c_sub: &Array2<f64>,
    node_ids: &[usize],
    mut w: Array2<f64>,
    cfg: &GraphTrainConfig,
) -> Result<(ConceptGraph, GraphStats, Vec<GraphEpochRecord>)> {
    cfg.validate()?;
    let (n, m) = (c_sub.nrows(), c_sub.ncols());
    if n < 2 {
        return Err(CcgError::invalid("graph training needs at least 2 examples"));
    }
    if m < 2 {
        return Err(CcgError::invalid("graph training needs at least 2 concepts"));
    }
    if node_ids.len() != m {
        return Err(CcgError::invalid(format!(
            "{} node ids for {m} concept columns",
            node_ids.len()
        )));
    }
    if w.nrows() != m || w.ncols() != m {
        return Err(CcgError::invalid("initial adjacency shape mismatch"));
    }
    w.diag_mut().fill(0.0);

    // The SEM term only touches C through its Gram matrix.
    let gram = c_sub.t().dot(c_sub);
    let c_norm_sq = trace(&gram);
    let scale = if cfg.normalize_by_n { n as f64 } else { 1.0 };

    let mut opt = Adam::for_param(&w);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let gw = gram.dot(&w);
        let sem = (c_norm_sq - 2.0 * trace(&gw) + (&gw * &w).sum()) / scale;
        let l1: f64 = w.iter().map(|v| v.abs()).sum();
        let (h, h_grad) = acyclicity(&w).map_err(|e| match e {
            CcgError::Numeric(msg) => CcgError::numeric(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;
        let total = sem + cfg.lambda1 * l1 + cfg.lambda2 * h;
        if !total.is_finite() || total > 1e6 {
            return Err(CcgError::numeric(format!(
                "graph training diverged at epoch {epoch} (loss {total:.3e})"
            )));
        }

        let mut grad = (&gram - &gw).mapv(|v| -2.0 * v / scale);
        // L1 subgradient, zero at zero. (signum(0.0) is 1.0, so branch.)
        grad.zip_mut_with(&w, |g, &wij| {
            if wij != 0.0 {
                *g += cfg.lambda1 * wij.signum();
            }
        });
        grad += &h_grad.mapv(|v| v * cfg.lambda2 * cfg.rho(epoch));
        grad.diag_mut().fill(0.0);

        let lr = cosine_lr(cfg.learning_rate, cfg.lr_min, epoch, cfg.epochs);
        opt.step(&mut w, &grad, lr);
        w.diag_mut().fill(0.0);

        log.push(GraphEpochRecord {
            epoch,
            sem_loss: sem,
            l1,
            dag_violation: h,
            total,
            lr,
        });
    }

    let graph = ConceptGraph::new(w, node_ids.to_vec(), cfg.edge_threshold)?;
    let (final_sem, _) = sem_loss(c_sub, &graph.w)?;
    let (final_h, _) = acyclicity(&graph.w)?;
    let edge_count = graph.edges().len();
    let stats = GraphStats {
        sem_loss: if cfg.normalize_by_n {
            final_sem
        } else {
            final_sem * n as f64
        },
        dag_violation: final_h,
        edge_count,
        density: edge_count as f64 / (m * (m - 1)) as f64,
    };
    Ok((graph, stats, log))
}
