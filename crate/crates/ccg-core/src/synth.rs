//! Planted-ground-truth generators.
//!
//! Every pipeline stage gets a recoverable instance: a random DAG with
//! designated hub nodes, concept activations propagated through the linear
//! SEM it defines, and activation rows synthesised from a planted unit-norm
//! dictionary. Oracle metrics (structural Hamming distance, dictionary match
//! score) measure how much of the planted structure a trained model found.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::graph::ConceptGraph;
use crate::io;
use crate::rng::{stage_rng, STAGE_SYNTH};
use crate::sae::SaeModel;
use crate::types::ActivationMatrix;

/// Generator parameters. Defaults mirror the target regime: 64 concepts,
/// 5.5% edge density with a few hub sources, 2000 examples, 8-sparse
/// exogenous codes (12.5% of nodes, matching the 13-of-64 active regime the
/// selected-concept matrices show downstream) and a 128-dimensional
/// activation space.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthConfig {
    pub m: usize,
    pub dag_density: f64,
    pub n_examples: usize,
    pub noise_sigma: f64,
    pub dict_dim: usize,
    pub concept_sparsity: usize,
    pub hub_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            m: 64,
            dag_density: 0.055,
            n_examples: 2000,
            noise_sigma: 0.05,
            dict_dim: 128,
            concept_sparsity: 8,
            hub_count: 4,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n_examples < 1 || self.dict_dim < 1 {
            return Err(CcgError::invalid("counts must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.dag_density) {
            return Err(CcgError::invalid("dag_density must lie in [0, 0.5]"));
        }
        if self.noise_sigma < 0.0 {
            return Err(CcgError::invalid("noise_sigma must be nonnegative"));
        }
        if self.concept_sparsity < 1 || self.concept_sparsity > self.m {
            return Err(CcgError::invalid("concept_sparsity must lie in 1..=m"));
        }
        Ok(())
    }
}

/// Hidden structure behind a generated instance.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub w_star: Array2<f64>,
    pub dictionary: Array2<f64>,
    pub c_star: Array2<f64>,
    /// Topological order the DAG was planted in: `node_permutation[p]` is the
    /// node at position `p`.
    pub node_permutation: Vec<usize>,
    pub clamp_events: usize,
}

/// Everything one instance provides.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub config: SynthConfig,
    pub truth: GroundTruth,
    pub activations: ActivationMatrix,
}

/// Concept matrix plus the exogenous input it was propagated from.
#[derive(Debug, Clone)]
pub struct ConceptData {
    pub c: Array2<f64>,
    pub exogenous: Array2<f64>,
    pub clamp_events: usize,
}

/// Sample a DAG with `floor(density * m * (m-1))` weighted edges placed only
/// forward along a hidden random topological order. The first `hub_count`
/// positions are hubs and receive at least three times the mean out-degree
/// where the budget and their forward capacity allow. Weights are uniform in
/// [0.3, 1.0].
///
/// Edge sources concentrate on the earliest positions (hubs plus a small
/// source pool), giving the hub-and-spoke "gate node" shape the pipeline is
/// meant to probe. Concentrated sources also bound path multiplicity, so
/// concept values propagated through the SEM stay O(1) instead of growing
/// with walk counts.
pub fn gen_dag(
    m: usize,
    density: f64,
    hub_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if m < 1 {
        return Err(CcgError::invalid("m must be at least 1"));
    }
    if !(0.0..=0.5).contains(&density) {
        return Err(CcgError::invalid("density must lie in [0, 0.5]"));
    }
    let ordered_pairs = (m * m.saturating_sub(1)) as f64;
    let budget = (density * ordered_pairs).floor() as usize;
    if (budget as f64) < hub_count as f64 {
        return Err(CcgError::invalid(format!(
            "edge budget {budget} cannot support {hub_count} hubs"
        )));
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut w = Array2::zeros((m, m));
    if budget == 0 {
        return Ok((w, order));
    }

    let mut used = vec![false; m * m];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(budget);

    let mean_out = budget as f64 / m as f64;
    let hub_floor = (3.0 * mean_out).ceil() as usize;
    for hub_pos in 0..hub_count.min(m) {
        let capacity = m - 1 - hub_pos;
        let want = hub_floor.min(capacity).min(budget - edges.len());
        if want == 0 {
            continue;
        }
        let targets = rand::seq::index::sample(rng, capacity, want);
        for t in targets.iter() {
            let q = hub_pos + 1 + t;
            let (src, dst) = (order[hub_pos], order[q]);
            if !used[src * m + dst] {
                used[src * m + dst] = true;
                edges.push((src, dst));
            }
        }
    }

    // Fill the remaining budget from a pool of early source positions,
    // widening the pool only when it runs out of free forward pairs.
    let mut pool = (2 * hub_count).clamp(1, m.saturating_sub(1)).max(m / 16);
    while edges.len() < budget {
        let mut free: Vec<(usize, usize)> = Vec::new();
        for p in 0..pool.min(m - 1) {
            for q in (p + 1)..m {
                let (src, dst) = (order[p], order[q]);
                if !used[src * m + dst] {
                    free.push((p, q));
                }
            }
        }
        if free.is_empty() {
            pool += 1;
            continue;
        }
        free.shuffle(rng);
        for &(p, q) in free.iter().take(budget - edges.len()) {
            let (src, dst) = (order[p], order[q]);
            used[src * m + dst] = true;
            edges.push((src, dst));
        }
        pool += 1;
    }

    for (src, dst) in edges {
        w[[src, dst]] = rng.random_range(0.3..1.0);
    }
    Ok((w, order))
}

/// Propagate sparse exogenous inputs through the SEM defined by `w_star`.
/// Each exogenous row has `sparsity_k` active entries uniform in [0.5, 2.0]
/// plus Gaussian noise on those entries; node values accumulate parent
/// contributions in topological order and clamp at zero.
pub fn gen_concepts(
    w_star: &Array2<f64>,
    n: usize,
    sparsity_k: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ConceptData> {
    let m = w_star.nrows();
    if w_star.ncols() != m {
        return Err(CcgError::invalid("w_star must be square"));
    }
    if sparsity_k > m {
        return Err(CcgError::invalid(format!(
            "sparsity {sparsity_k} exceeds node count {m}"
        )));
    }
    let topo = topological_order(w_star)?;

    let mut exogenous = Array2::zeros((n, m));
    for mut row in exogenous.rows_mut() {
        let active = rand::seq::index::sample(rng, m, sparsity_k);
        for j in active.iter() {
            let base: f64 = rng.random_range(0.5..2.0);
            let noise: f64 = if noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                z * noise_sigma
            } else {
                0.0
            };
            row[j] = base + noise;
        }
    }

    let mut c = Array2::zeros((n, m));
    let mut clamp_events = 0usize;
    for r in 0..n {
        for &j in &topo {
            let mut val = exogenous[[r, j]];
            for i in 0..m {
                if w_star[[i, j]] != 0.0 {
                    val += c[[r, i]] * w_star[[i, j]];
                }
            }
            if val < 0.0 {
                clamp_events += 1;
                val = 0.0;
            }
            c[[r, j]] = val;
        }
    }
    Ok(ConceptData {
        c,
        exogenous,
        clamp_events,
    })
}

/// Kahn's algorithm, smallest index first. Errors if the support has a cycle.
fn topological_order(w: &Array2<f64>) -> Result<Vec<usize>> {
    let m = w.nrows();
    let mut in_degree = vec![0usize; m];
    for ((_, j), v) in w.indexed_iter() {
        if *v != 0.0 {
            in_degree[j] += 1;
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..m)
        .filter(|&j| in_degree[j] == 0)
        .collect();
    let mut order = Vec::with_capacity(m);
    while let Some(&next) = ready.iter().next() {
        ready.remove(&next);
        order.push(next);
        for j in 0..m {
            if w[[next, j]] != 0.0 {
                in_degree[j] -= 1;
                if in_degree[j] == 0 {
                    ready.insert(j);
                }
            }
        }
    }
    if order.len() != m {
        return Err(CcgError::invalid("w_star contains a cycle"));
    }
    Ok(order)
}

/// Synthesise activation rows `H = C D^T + noise` from a random unit-norm
/// dictionary of `c_star.ncols()` directions in `d` dimensions.
pub fn gen_activations(
    c_star: &Array2<f64>,
    d: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ActivationMatrix, Array2<f64>)> {
    if d < 8 {
        return Err(CcgError::invalid("activation dimension must be at least 8"));
    }
    let k_total = c_star.ncols();
    let mut dictionary = Array2::zeros((d, k_total));
    for mut col in dictionary.columns_mut() {
        let mut norm_sq = 0.0;
        for v in col.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = z;
            norm_sq += z * z;
        }
        let norm = norm_sq.sqrt();
        col.mapv_inplace(|v| v / norm);
    }
    let mut h = c_star.dot(&dictionary.t());
    if noise_sigma > 0.0 {
        for v in h.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += z * noise_sigma;
        }
    }
    Ok((ActivationMatrix::new(h)?, dictionary))
}

/// Generate a full instance from one seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    cfg.validate()?;
    let mut rng = stage_rng(cfg.seed, STAGE_SYNTH);
    let (w_star, node_permutation) = gen_dag(cfg.m, cfg.dag_density, cfg.hub_count, &mut rng)?;
    let concepts = gen_concepts(
        &w_star,
        cfg.n_examples,
        cfg.concept_sparsity,
        cfg.noise_sigma,
        &mut rng,
    )?;
    let (activations, dictionary) =
        gen_activations(&concepts.c, cfg.dict_dim, cfg.noise_sigma, &mut rng)?;
    Ok(SynthBundle {
        config: cfg.clone(),
        truth: GroundTruth {
            w_star,
            dictionary,
            c_star: concepts.c,
            node_permutation,
            clamp_events: concepts.clamp_events,
        },
        activations,
    })
}

/// Structural Hamming distance between the learned graph and the planted
/// adjacency, both thresholded at the learned graph's edge threshold. A
/// missing or extra edge costs 1; a reversed edge costs 1, not 2.
pub fn shd(learned: &ConceptGraph, w_star: &Array2<f64>) -> Result<usize> {
    let m = learned.m();
    if w_star.nrows() != m || w_star.ncols() != m {
        return Err(CcgError::invalid(format!(
            "planted graph is {}x{}, learned graph has {m} nodes",
            w_star.nrows(),
            w_star.ncols()
        )));
    }
    let thresh = learned.edge_threshold;
    let has = |w: &Array2<f64>, i: usize, j: usize| w[[i, j]] > thresh;
    let mut dist = 0usize;
    for i in 0..m {
        for j in (i + 1)..m {
            let truth = (has(w_star, i, j), has(w_star, j, i));
            let guess = (has(&learned.w, i, j), has(&learned.w, j, i));
            if truth == guess {
                continue;
            }
            let reversed = truth == (guess.1, guess.0) && truth.0 != truth.1;
            if reversed {
                dist += 1;
            } else {
                dist += usize::from(truth.0 != guess.0) + usize::from(truth.1 != guess.1);
            }
        }
    }
    Ok(dist)
}

/// Mean over planted dictionary columns of the best absolute cosine match
/// among the learned decoder columns. 1.0 means every planted direction was
/// recovered up to sign and permutation.
pub fn dictionary_match_score(model: &SaeModel, dictionary: &Array2<f64>) -> Result<f64> {
    if model.input_dim() != dictionary.nrows() || model.dict_size() != dictionary.ncols() {
        return Err(CcgError::invalid(format!(
            "model is {}x{}, dictionary is {}x{}",
            model.input_dim(),
            model.dict_size(),
            dictionary.nrows(),
            dictionary.ncols()
        )));
    }
    let learned_norms: Vec<f64> = model
        .w_dec
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut acc = 0.0;
    for gt_col in dictionary.columns() {
        let gt_norm = gt_col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut best = 0.0f64;
        for (j, col) in model.w_dec.columns().into_iter().enumerate() {
            if learned_norms[j] == 0.0 || gt_norm == 0.0 {
                continue;
            }
            let dot: f64 = gt_col.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            best = best.max((dot / (gt_norm * learned_norms[j])).abs());
        }
        acc += best;
    }
    Ok(acc / dictionary.ncols() as f64)
}

/// On-disk layout of a generated instance.
#[derive(Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub config: SynthConfig,
    pub w_star: Vec<f64>,
    pub node_permutation: Vec<usize>,
    pub clamp_events: usize,
    pub activations_path: String,
    pub c_star_path: String,
    pub dictionary_path: String,
}

pub const BUNDLE_MANIFEST: &str = "ground_truth.json";
pub const BUNDLE_ACTIVATIONS: &str = "activations.ccga";
pub const BUNDLE_C_STAR: &str = "c_star.ccga";
pub const BUNDLE_DICTIONARY: &str = "dictionary.ccga";

/// Write a bundle into `dir`. Returns the paths written.
pub fn write_bundle(dir: &Path, bundle: &SynthBundle) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let acts = dir.join(BUNDLE_ACTIVATIONS);
    let c_star = dir.join(BUNDLE_C_STAR);
    let dict = dir.join(BUNDLE_DICTIONARY);
    let manifest_path = dir.join(BUNDLE_MANIFEST);

    io::write_ccga(&acts, bundle.activations.data())?;
    io::write_ccga(&c_star, &bundle.truth.c_star)?;
    io::write_ccga(&dict, &bundle.truth.dictionary)?;
    let manifest = BundleManifest {
        config: bundle.config.clone(),
        w_star: bundle.truth.w_star.iter().copied().collect(),
        node_permutation: bundle.truth.node_permutation.clone(),
        clamp_events: bundle.truth.clamp_events,
        activations_path: BUNDLE_ACTIVATIONS.to_string(),
        c_star_path: BUNDLE_C_STAR.to_string(),
        dictionary_path: BUNDLE_DICTIONARY.to_string(),
    };
    io::write_json_atomic(&manifest_path, &manifest)?;
    Ok(vec![manifest_path, acts, c_star, dict])
}

/// Read a bundle previously written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<SynthBundle> {
    let manifest_path = dir.join(BUNDLE_MANIFEST);
    let manifest: BundleManifest =
        serde_json::from_reader(std::fs::File::open(&manifest_path)?)?;
    let m = manifest.config.m;
    if manifest.w_star.len() != m * m {
        return Err(CcgError::format(
            manifest_path.display().to_string(),
            format!("w_star has {} entries, expected {}", manifest.w_star.len(), m * m),
        ));
    }
    let w_star = Array2::from_shape_vec((m, m), manifest.w_star.clone())
        .map_err(|e| CcgError::invalid(e.to_string()))?;
    let activations = ActivationMatrix::new(io::read_ccga(&dir.join(&manifest.activations_path))?)?;
    let c_star = io::read_ccga(&dir.join(&manifest.c_star_path))?;
    let dictionary = io::read_ccga(&dir.join(&manifest.dictionary_path))?;
    Ok(SynthBundle {
        config: manifest.config,
        truth: GroundTruth {
            w_star,
            dictionary,
            c_star,
            node_permutation: manifest.node_permutation,
            clamp_events: manifest.clamp_events,
        },
        activations,
    })
}

/// Convenience for tests: one-hot exogenous rows make each activation row a
/// dictionary column.
pub fn one_hot_rows(m: usize) -> Array2<f64> {
    let mut e = Array2::zeros((m, m));
    for i in 0..m {
        e[[i, i]] = 1.0;
    }
    e
}
