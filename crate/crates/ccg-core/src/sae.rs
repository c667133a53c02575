//! TopK sparse autoencoder.
//!
//! The encoder maps an activation row through an affine layer and a hard
//! TopK gate that keeps the k largest pre-activations at their exact
//! magnitude, zeroes the rest and clamps surviving negatives to zero. The
//! gate gives an exact L0 constraint with no shrinkage, so downstream SEM
//! fitting sees unbiased magnitudes. Training minimises reconstruction MSE
//! plus an L1 code penalty and an off-diagonal code-covariance penalty, with
//! periodic resampling of neurons that stopped firing.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::optim::Adam;
use crate::rng::{stage_rng, STAGE_SAE};
use crate::types::{ActivationMatrix, ConceptMatrix};

/// Encoder/decoder parameters. `w_enc` is K x d, `w_dec` is d x K.
#[derive(Debug, Clone)]
pub struct SaeModel {
    pub w_enc: Array2<f64>,
    pub w_dec: Array2<f64>,
    pub b_pre: Array1<f64>,
    pub b_enc: Array1<f64>,
    pub k: usize,
}

impl SaeModel {
    pub fn dict_size(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (k_dict, d) = (self.dict_size(), self.input_dim());
        if self.w_dec.nrows() != d || self.w_dec.ncols() != k_dict {
            return Err(CcgError::invalid(format!(
                "w_dec is {}x{}, expected {}x{}",
                self.w_dec.nrows(),
                self.w_dec.ncols(),
                d,
                k_dict
            )));
        }
        if self.b_pre.len() != d || self.b_enc.len() != k_dict {
            return Err(CcgError::invalid("bias lengths do not match weights"));
        }
        if self.k == 0 || self.k > k_dict {
            return Err(CcgError::invalid(format!(
                "k={} must lie in 1..={}",
                self.k, k_dict
            )));
        }
        let finite = self.w_enc.iter().all(|v| v.is_finite())
            && self.w_dec.iter().all(|v| v.is_finite())
            && self.b_pre.iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CcgError::numeric("model parameters are non-finite"));
        }
        for (j, col) in self.w_dec.columns().into_iter().enumerate() {
            let norm_sq: f64 = col.iter().map(|v| v * v).sum();
            if norm_sq == 0.0 {
                return Err(CcgError::invalid(format!(
                    "decoder column {j} has zero norm"
                )));
            }
        }
        Ok(())
    }
}

/// Training hyperparameters. The defaults are the reference configuration:
/// a 256-concept dictionary keeping 13 per example, lambda 0.05, beta 0.1,
/// 60 epochs with dead-neuron resampling every 10 at a 0.5% fire-rate
/// threshold.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SaeTrainConfig {
    pub dict_size: usize,
    pub k: usize,
    pub lambda_l1: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub resample_interval_epochs: usize,
    pub fire_rate_threshold: f64,
    /// Scale applied to a resampled neuron's fresh encoder row so it re-enters
    /// competition gently. Any small constant works.
    pub resample_enc_scale: f64,
    pub seed: u64,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self {
            dict_size: 256,
            k: 13,
            lambda_l1: 0.05,
            beta: 0.1,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            resample_interval_epochs: 10,
            fire_rate_threshold: 0.005,
            resample_enc_scale: 0.2,
            seed: 42,
        }
    }
}

impl SaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.dict_size {
            return Err(CcgError::invalid(format!(
                "k={} must lie in 1..=dict_size={}",
                self.k, self.dict_size
            )));
        }
        if self.epochs == 0 {
            return Err(CcgError::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(CcgError::invalid("batch_size must be at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CcgError::invalid("learning_rate must be positive"));
        }
        if self.lambda_l1 < 0.0 || self.beta < 0.0 {
            return Err(CcgError::invalid("lambda_l1 and beta must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.fire_rate_threshold) {
            return Err(CcgError::invalid("fire_rate_threshold must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One epoch of training telemetry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SaeEpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub mse: f64,
    pub l1: f64,
    pub decor: f64,
    pub l0_rate: f64,
    pub resampled: usize,
}

pub type SaeTrainLog = Vec<SaeEpochRecord>;

/// Loss terms for one batch: `total = mse + lambda * l1 + beta * decor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeLossTerms {
    pub total: f64,
    pub mse: f64,
    pub l1: f64,
    pub decor: f64,
}

/// Gradients of the batch loss with respect to every parameter.
#[derive(Debug, Clone)]
pub struct SaeGrads {
    pub w_enc: Array2<f64>,
    pub w_dec: Array2<f64>,
    pub b_pre: Array1<f64>,
    pub b_enc: Array1<f64>,
}

/// Keep the k largest entries by signed value (ties to the lowest index),
/// zero the rest, then clamp surviving negatives to zero. Kept positives pass
/// through at their exact magnitude.
pub fn topk_gate(z: &Array1<f64>, k: usize) -> Result<Array1<f64>> {
    if k > z.len() {
        return Err(CcgError::invalid(format!(
            "k={} exceeds vector length {}",
            k,
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(CcgError::invalid("topk_gate: non-finite input"));
    }
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    let mut out = Array1::zeros(z.len());
    for &i in idx.iter().take(k) {
        out[i] = z[i].max(0.0);
    }
    Ok(out)
}

/// Encoder: TopK gate over the affine pre-activation.
pub fn encode(h: &Array1<f64>, model: &SaeModel) -> Result<Array1<f64>> {
    if h.len() != model.input_dim() {
        return Err(CcgError::invalid(format!(
            "input has {} dims, model expects {}",
            h.len(),
            model.input_dim()
        )));
    }
    let z = model.w_enc.dot(&(h - &model.b_pre)) + &model.b_enc;
    topk_gate(&z, model.k)
}

/// Decoder: linear map back to activation space.
pub fn decode(c: &Array1<f64>, model: &SaeModel) -> Result<Array1<f64>> {
    if c.len() != model.dict_size() {
        return Err(CcgError::invalid(format!(
            "code has {} dims, model expects {}",
            c.len(),
            model.dict_size()
        )));
    }
    Ok(model.w_dec.dot(c) + &model.b_pre)
}

/// Encode every row of an activation matrix into a concept matrix.
pub fn encode_matrix(acts: &ActivationMatrix, model: &SaeModel) -> Result<ConceptMatrix> {
    if acts.n_cols() != model.input_dim() {
        return Err(CcgError::invalid(format!(
            "activations have {} dims, model expects {}",
            acts.n_cols(),
            model.input_dim()
        )));
    }
    let fwd = forward(acts.data(), model)?;
    ConceptMatrix::new(fwd.codes, model.k)
}

/// Batched forward pass. `open` marks the coordinates the gate passes
/// gradient through: selected and strictly positive.
struct Forward {
    codes: Array2<f64>,
    open: Array2<f64>,
}

fn forward(batch: &Array2<f64>, model: &SaeModel) -> Result<Forward> {
    let k_dict = model.dict_size();
    let centered = batch - &model.b_pre;
    let z = centered.dot(&model.w_enc.t()) + &model.b_enc; // B x K
    let mut codes = Array2::zeros((batch.nrows(), k_dict));
    let mut open = Array2::zeros((batch.nrows(), k_dict));
    let mut idx: Vec<usize> = Vec::with_capacity(k_dict);
    for (r, z_row) in z.rows().into_iter().enumerate() {
        if z_row.iter().any(|v| !v.is_finite()) {
            return Err(CcgError::numeric(format!(
                "non-finite pre-activation in batch row {r}"
            )));
        }
        idx.clear();
        idx.extend(0..k_dict);
        idx.sort_by(|&a, &b| z_row[b].partial_cmp(&z_row[a]).unwrap().then(a.cmp(&b)));
        for &i in idx.iter().take(model.k) {
            if z_row[i] > 0.0 {
                codes[[r, i]] = z_row[i];
                open[[r, i]] = 1.0;
            }
        }
    }
    Ok(Forward { codes, open })
}

/// Squared Frobenius norm of the off-diagonal of the biased (divide-by-B)
/// sample covariance of the batch codes.
pub fn offdiag_cov_penalty(c_batch: &Array2<f64>) -> Result<f64> {
    let b = c_batch.nrows();
    if b < 2 {
        return Err(CcgError::invalid(format!(
            "covariance penalty needs a batch of at least 2 rows, got {b}"
        )));
    }
    let mean = c_batch.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = c_batch - &mean;
    let cov = centered.t().dot(&centered) / b as f64;
    let mut acc = 0.0;
    for ((i, j), v) in cov.indexed_iter() {
        if i != j {
            acc += v * v;
        }
    }
    Ok(acc)
}

/// Evaluate the training loss on one batch.
pub fn sae_loss(batch: &Array2<f64>, model: &SaeModel, cfg: &SaeTrainConfig) -> Result<SaeLossTerms> {
    let (terms, _, _) = loss_grads_inner(batch, model, cfg)?;
    Ok(terms)
}

/// Loss together with analytic gradients. Gradient flows through the gate on
/// selected, strictly positive coordinates only.
pub fn sae_loss_grads(
    batch: &Array2<f64>,
    model: &SaeModel,
    cfg: &SaeTrainConfig,
) -> Result<(SaeLossTerms, SaeGrads)> {
    let (terms, grads, _) = loss_grads_inner(batch, model, cfg)?;
    Ok((terms, grads))
}

fn loss_grads_inner(
    batch: &Array2<f64>,
    model: &SaeModel,
    cfg: &SaeTrainConfig,
) -> Result<(SaeLossTerms, SaeGrads, Array2<f64>)> {
    if batch.ncols() != model.input_dim() {
        return Err(CcgError::invalid(format!(
            "batch has {} dims, model expects {}",
            batch.ncols(),
            model.input_dim()
        )));
    }
    let b = batch.nrows() as f64;
    let fwd = forward(batch, model)?;

    let recon = fwd.codes.dot(&model.w_dec.t()) + &model.b_pre; // B x d
    let resid = &recon - batch;
    let mse = resid.iter().map(|v| v * v).sum::<f64>() / b;
    let l1 = fwd.codes.iter().sum::<f64>() / b;
    let decor = offdiag_cov_penalty(&fwd.codes)?;
    let total = mse + cfg.lambda_l1 * l1 + cfg.beta * decor;
    if !total.is_finite() {
        return Err(CcgError::numeric(format!(
            "loss is non-finite (mse={mse}, l1={l1}, decor={decor})"
        )));
    }

    // Reconstruction path.
    let d_recon = resid.mapv(|v| 2.0 * v / b); // dL/d recon
    let g_wdec = d_recon.t().dot(&fwd.codes); // d x K
    let g_bpre_dec = d_recon.sum_axis(Axis(0));

    // Code path: MSE back through the decoder, plus L1 and decorrelation.
    let mut d_codes = d_recon.dot(&model.w_dec); // B x K
    d_codes += cfg.lambda_l1 / b;
    if cfg.beta != 0.0 {
        let mean = fwd.codes.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &fwd.codes - &mean;
        let mut cov = centered.t().dot(&centered) / b;
        cov.diag_mut().fill(0.0);
        let mut g_decor = centered.dot(&cov) * (4.0 / b);
        let col_means = g_decor.mean_axis(Axis(0)).expect("non-empty batch");
        g_decor -= &col_means; // centering projects the gradient back
        d_codes += &g_decor.mapv(|v| v * cfg.beta);
    }

    // Through the gate, then the encoder affine map.
    let d_z = &d_codes * &fwd.open; // B x K
    let g_benc = d_z.sum_axis(Axis(0));
    let centered_in = batch - &model.b_pre;
    let g_wenc = d_z.t().dot(&centered_in); // K x d
    let g_bpre = &g_bpre_dec - &model.w_enc.t().dot(&g_benc);

    Ok((
        SaeLossTerms {
            total,
            mse,
            l1,
            decor,
        },
        SaeGrads {
            w_enc: g_wenc,
            w_dec: g_wdec,
            b_pre: g_bpre,
            b_enc: g_benc,
        },
        fwd.codes,
    ))
}

/// Reset neurons whose cumulative fire rate fell below the threshold.
///
/// A dead neuron's decoder column is pointed at a unit-normalised batch row
/// drawn with probability proportional to per-example reconstruction loss,
/// its encoder row becomes a small multiple of the same direction and its
/// encoder bias is cleared. Returns how many neurons were reset; their fire
/// counts are zeroed.
pub fn resample_dead_neurons(
    model: &mut SaeModel,
    fire_counts: &mut [u64],
    total_examples: u64,
    batch: &Array2<f64>,
    per_example_loss: &[f64],
    cfg: &SaeTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    Ok(resample_dead_neurons_impl(
        model,
        fire_counts,
        total_examples,
        batch,
        per_example_loss,
        cfg,
        rng,
    )?
    .len())
}

fn resample_dead_neurons_impl(
    model: &mut SaeModel,
    fire_counts: &mut [u64],
    total_examples: u64,
    batch: &Array2<f64>,
    per_example_loss: &[f64],
    cfg: &SaeTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if total_examples == 0 {
        return Err(CcgError::invalid("resampling before any example was seen"));
    }
    if fire_counts.len() != model.dict_size() {
        return Err(CcgError::invalid("fire_counts length mismatch"));
    }
    if per_example_loss.len() != batch.nrows() {
        return Err(CcgError::invalid("per_example_loss length mismatch"));
    }
    // Zero-norm rows cannot provide a direction; give them zero weight.
    let weights: Vec<f64> = per_example_loss
        .iter()
        .enumerate()
        .map(|(r, &l)| {
            let norm_sq: f64 = batch.row(r).iter().map(|v| v * v).sum();
            if norm_sq > 0.0 {
                l.max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum <= 0.0 {
        return Ok(Vec::new());
    }

    let total = total_examples as f64;
    let mut resampled = Vec::new();
    for neuron in 0..model.dict_size() {
        let rate = fire_counts[neuron] as f64 / total;
        if rate >= cfg.fire_rate_threshold {
            continue;
        }
        let draw: f64 = rng.random_range(0.0..weight_sum);
        let mut acc = 0.0;
        let mut chosen = weights.len() - 1;
        for (r, &w) in weights.iter().enumerate() {
            acc += w;
            if draw < acc {
                chosen = r;
                break;
            }
        }
        let row = batch.row(chosen);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let direction = row.mapv(|v| v / norm);
        model.w_dec.column_mut(neuron).assign(&direction);
        model
            .w_enc
            .row_mut(neuron)
            .assign(&direction.mapv(|v| v * cfg.resample_enc_scale));
        model.b_enc[neuron] = 0.0;
        fire_counts[neuron] = 0;
        resampled.push(neuron);
    }
    Ok(resampled)
}

fn init_model(acts: &ActivationMatrix, cfg: &SaeTrainConfig, rng: &mut ChaCha8Rng) -> SaeModel {
    let d = acts.n_cols();
    let k_dict = cfg.dict_size;
    let scale = 1.0 / (d as f64).sqrt();
    let mut w_enc = Array2::zeros((k_dict, d));
    for v in w_enc.iter_mut() {
        let sample: f64 = StandardNormal.sample(rng);
        *v = sample * scale;
    }
    let mut w_dec = w_enc.t().to_owned();
    for mut col in w_dec.columns_mut() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        } else {
            col[0] = 1.0;
        }
    }
    let b_pre = acts.data().mean_axis(Axis(0)).expect("non-empty input");
    SaeModel {
        w_enc,
        w_dec,
        b_pre,
        b_enc: Array1::zeros(k_dict),
        k: cfg.k,
    }
}

/// Train a TopK SAE on the given activations. Deterministic for a fixed
/// seed: identical configuration and data reproduce the model and log
/// bit for bit.
pub fn train_sae(acts: &ActivationMatrix, cfg: &SaeTrainConfig) -> Result<(SaeModel, SaeTrainLog)> {
    cfg.validate()?;
    let n = acts.n_rows();
    if n < cfg.batch_size {
        return Err(CcgError::invalid(format!(
            "need at least batch_size={} examples, got {n}",
            cfg.batch_size
        )));
    }
    let mut rng = stage_rng(cfg.seed, STAGE_SAE);
    let mut model = init_model(acts, cfg, &mut rng);
    let mut opt_wenc = Adam::for_param(&model.w_enc);
    let mut opt_wdec = Adam::for_param(&model.w_dec);
    let mut opt_bpre = Adam::for_param(&model.b_pre);
    let mut opt_benc = Adam::for_param(&model.b_enc);

    let mut fire_counts = vec![0u64; cfg.dict_size];
    let mut total_examples: u64 = 0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut seen = 0usize;
        let mut last_batch: Option<Array2<f64>> = None;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // covariance term needs at least two rows
            }
            let batch = select_rows(acts.data(), chunk);
            let (terms, grads, codes) =
                loss_grads_inner(&batch, &model, cfg).map_err(|e| match e {
                    CcgError::Numeric(msg) => {
                        CcgError::numeric(format!("epoch {epoch}, batch {batch_idx}: {msg}"))
                    }
                    other => other,
                })?;

            opt_wenc.step(&mut model.w_enc, &grads.w_enc, cfg.learning_rate);
            opt_wdec.step(&mut model.w_dec, &grads.w_dec, cfg.learning_rate);
            opt_bpre.step(&mut model.b_pre, &grads.b_pre, cfg.learning_rate);
            opt_benc.step(&mut model.b_enc, &grads.b_enc, cfg.learning_rate);

            for (j, col) in codes.columns().into_iter().enumerate() {
                fire_counts[j] += col.iter().filter(|v| **v > 0.0).count() as u64;
            }
            total_examples += chunk.len() as u64;

            let w = chunk.len() as f64;
            sums.0 += terms.total * w;
            sums.1 += terms.mse * w;
            sums.2 += terms.l1 * w;
            sums.3 += terms.decor * w;
            seen += chunk.len();
            last_batch = Some(batch);
        }

        let mut resampled = 0usize;
        if cfg.resample_interval_epochs > 0 && epoch % cfg.resample_interval_epochs == 0 {
            if let Some(batch) = &last_batch {
                let losses = per_example_recon_loss(batch, &model)?;
                let reset = resample_dead_neurons_impl(
                    &mut model,
                    &mut fire_counts,
                    total_examples,
                    batch,
                    &losses,
                    cfg,
                    &mut rng,
                )?;
                for &neuron in &reset {
                    opt_wenc.reset_lane(neuron);
                    opt_benc.reset_lane(neuron);
                }
                resampled = reset.len();
            }
        }

        let codes = encode_matrix(acts, &model)?;
        let denom = seen.max(1) as f64;
        log.push(SaeEpochRecord {
            epoch,
            total: sums.0 / denom,
            mse: sums.1 / denom,
            l1: sums.2 / denom,
            decor: sums.3 / denom,
            l0_rate: codes.l0_rate(),
            resampled,
        });
    }

    model.validate()?;
    Ok((model, log))
}

/// Mean squared reconstruction error of each row under the current model.
pub fn per_example_recon_loss(batch: &Array2<f64>, model: &SaeModel) -> Result<Vec<f64>> {
    let fwd = forward(batch, model)?;
    let recon = fwd.codes.dot(&model.w_dec.t()) + &model.b_pre;
    let resid = &recon - batch;
    Ok(resid
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v * v).sum())
        .collect())
}

fn select_rows(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (dst, &src) in rows.iter().enumerate() {
        out.row_mut(dst).assign(&data.row(src));
    }
    out
}
