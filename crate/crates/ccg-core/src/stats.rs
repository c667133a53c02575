//! Statistical protocol for paired method comparisons, plus the auxiliary
//! analyses (probe accuracy, correlation matrices with degenerate-variance
//! guards, pairwise cosine distance).
//!
//! The Student-t survival function is computed through the regularized
//! incomplete beta function with continued-fraction evaluation, keeping the
//! crate free of external stats dependencies while staying accurate to well
//! under 1e-10.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::rng::{keyed_rng, stage_rng, STAGE_BOOTSTRAP, STAGE_PROBE};
use crate::types::{ActivationMatrix, ConceptMatrix};

/// Paired per-run scores for two methods.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub labels: Vec<String>,
}

impl PairedSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let labels = (0..x.len()).map(|i| format!("run-{i}")).collect();
        Self::with_labels(x, y, labels)
    }

    pub fn with_labels(x: Vec<f64>, y: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if x.len() != y.len() || x.len() != labels.len() {
            return Err(CcgError::invalid("paired sample lengths differ"));
        }
        if x.len() < 2 {
            return Err(CcgError::invalid("paired sample needs n >= 2"));
        }
        Ok(Self { x, y, labels })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn diffs(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| a - b).collect()
    }
}

/// One row of the significance table. The JSON form carries the interval as
/// `"ci": [low, high]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SignificanceResult {
    pub comparison: String,
    pub t_stat: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub significant: bool,
    pub cohens_d: f64,
    pub ci: CiPair,
    pub n: usize,
    pub comparisons: usize,
    pub replicates: usize,
}

/// Confidence interval endpoints; serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiPair {
    pub low: f64,
    pub high: f64,
}

impl Serialize for CiPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.low, self.high].serialize(s)
    }
}

impl<'de> Deserialize<'de> for CiPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pair = <[f64; 2]>::deserialize(d)?;
        Ok(CiPair {
            low: pair[0],
            high: pair[1],
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One-sided paired t-test of `x > y`. Returns `(t, p)` where
/// `p = P(T_{n-1} > t)`. Degenerate differences with zero spread map to the
/// infinite-t convention when the mean is nonzero and error otherwise.
pub fn paired_t_one_sided(s: &PairedSample) -> Result<(f64, f64)> {
    let d = s.diffs();
    let n = d.len() as f64;
    let md = mean(&d);
    let sd = sample_sd(&d);
    if sd == 0.0 {
        return if md == 0.0 {
            Err(CcgError::invalid(
                "paired t-test undefined: zero spread and zero mean difference",
            ))
        } else if md > 0.0 {
            Ok((f64::INFINITY, 0.0))
        } else {
            Ok((f64::NEG_INFINITY, 1.0))
        };
    }
    let t = md / (sd / n.sqrt());
    Ok((t, student_t_sf(t, n - 1.0)))
}

/// Bonferroni correction: `min(1, p * m)`.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

/// Paired Cohen's d: mean difference over its sample standard deviation.
pub fn cohens_d_paired(s: &PairedSample) -> Result<f64> {
    let d = s.diffs();
    let sd = sample_sd(&d);
    if sd == 0.0 {
        return Err(CcgError::invalid("Cohen's d undefined: zero spread"));
    }
    Ok(mean(&d) / sd)
}

/// Percentile bootstrap CI for the mean of `diffs`. Each replicate draws its
/// own keyed stream, so replicates can be computed in any order (or in
/// parallel) without changing the result.
pub fn bootstrap_ci(
    diffs: &[f64],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = diffs.len();
    if n < 2 {
        return Err(CcgError::invalid("bootstrap needs n >= 2"));
    }
    if replicates < 100 {
        return Err(CcgError::invalid("bootstrap needs at least 100 replicates"));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(CcgError::invalid("confidence level must be in (0, 1)"));
    }
    let base = seed ^ STAGE_BOOTSTRAP;
    let mut means = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let mut rng = keyed_rng(base, r as u64);
        let mut acc = 0.0;
        for _ in 0..n {
            acc += diffs[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 1.0 - level;
    Ok((
        quantile_sorted(&means, alpha / 2.0),
        quantile_sorted(&means, 1.0 - alpha / 2.0),
    ))
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Full Table-style row: one-sided paired t with Bonferroni correction over
/// `comparisons` simultaneous tests, paired Cohen's d and a percentile
/// bootstrap CI for the mean difference.
pub fn significance_row(
    comparison: impl Into<String>,
    s: &PairedSample,
    comparisons: usize,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<SignificanceResult> {
    let (t, p_raw) = paired_t_one_sided(s)?;
    let p_corrected = bonferroni(p_raw, comparisons);
    let d = cohens_d_paired(s)?;
    let (low, high) = bootstrap_ci(&s.diffs(), replicates, 0.95, seed)?;
    Ok(SignificanceResult {
        comparison: comparison.into(),
        t_stat: t,
        p_raw,
        p_corrected,
        significant: p_corrected < alpha,
        cohens_d: d,
        ci: CiPair { low, high },
        n: s.n(),
        comparisons,
        replicates,
    })
}

/// k-fold cross-validated accuracy of a multinomial logistic probe trained
/// by plain gradient descent (500 iterations, lr 0.1, L2 1e-4).
pub fn linear_probe_accuracy(
    c: &ConceptMatrix,
    labels: &[usize],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let n = c.n_rows();
    if labels.len() != n {
        return Err(CcgError::invalid("label count must match rows"));
    }
    if folds < 2 {
        return Err(CcgError::invalid("need at least 2 folds"));
    }
    let n_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    if n_classes < 2 {
        return Err(CcgError::invalid("probe needs at least 2 classes"));
    }
    let mut class_counts = vec![0usize; n_classes];
    for &l in labels {
        class_counts[l] += 1;
    }
    if class_counts.iter().any(|&count| count < folds) {
        return Err(CcgError::invalid(format!(
            "every class needs at least {folds} examples"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = stage_rng(seed, STAGE_PROBE);
        order.shuffle(&mut rng);
    }

    let data = c.data();
    let mut correct = 0usize;
    for fold in 0..folds {
        let test_idx: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % folds == fold)
            .map(|(_, &i)| i)
            .collect();
        let train_idx: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % folds != fold)
            .map(|(_, &i)| i)
            .collect();

        let w = fit_softmax(data, labels, &train_idx, n_classes);
        for &i in &test_idx {
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for class in 0..n_classes {
                let score: f64 = data
                    .row(i)
                    .iter()
                    .zip(w.row(class).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + w[[class, data.ncols()]];
                if score > best_score {
                    best_score = score;
                    best = class;
                }
            }
            if best == labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Softmax regression weights, last column is the bias.
fn fit_softmax(
    data: &Array2<f64>,
    labels: &[usize],
    train_idx: &[usize],
    n_classes: usize,
) -> Array2<f64> {
    const ITERS: usize = 500;
    const LR: f64 = 0.1;
    const L2: f64 = 1e-4;
    let dims = data.ncols();
    let n = train_idx.len() as f64;
    let mut w = Array2::<f64>::zeros((n_classes, dims + 1));
    let mut probs = vec![0.0f64; n_classes];
    for _ in 0..ITERS {
        let mut grad = Array2::<f64>::zeros((n_classes, dims + 1));
        for &i in train_idx {
            let row = data.row(i);
            let mut max_logit = f64::NEG_INFINITY;
            for class in 0..n_classes {
                let logit: f64 = row
                    .iter()
                    .zip(w.row(class).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + w[[class, dims]];
                probs[class] = logit;
                max_logit = max_logit.max(logit);
            }
            let mut z = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - max_logit).exp();
                z += *p;
            }
            for class in 0..n_classes {
                let err = probs[class] / z - if labels[i] == class { 1.0 } else { 0.0 };
                for (j, &v) in row.iter().enumerate() {
                    grad[[class, j]] += err * v / n;
                }
                grad[[class, dims]] += err / n;
            }
        }
        grad += &w.mapv(|v| v * L2);
        w -= &grad.mapv(|v| v * LR);
    }
    w
}

/// Pearson correlation matrix with a guard for degenerate columns: a
/// zero-variance column correlates 0 with everything off-diagonal and 1 with
/// itself, so the output never carries NaN or infinities.
pub fn pearson_corr_matrix(c_top: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, q) = (c_top.nrows(), c_top.ncols());
    if n < 2 {
        return Err(CcgError::invalid("correlation needs at least 2 rows"));
    }
    let means = c_top.mean_axis(Axis(0)).expect("non-empty");
    let centered = c_top - &means;
    let variances: Vec<f64> = centered
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>())
        .collect();

    let mut out = Array2::<f64>::zeros((q, q));
    for i in 0..q {
        out[[i, i]] = 1.0;
        for j in (i + 1)..q {
            let r = if variances[i] == 0.0 || variances[j] == 0.0 {
                0.0
            } else {
                let num: f64 = centered
                    .column(i)
                    .iter()
                    .zip(centered.column(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                (num / (variances[i] * variances[j]).sqrt()).clamp(-1.0, 1.0)
            };
            out[[i, j]] = r;
            out[[j, i]] = r;
        }
    }
    Ok(out)
}

/// Mean over all sampled unordered row pairs of `1 - cos(h_a, h_b)`. Rows
/// beyond `sample_cap` are subsampled deterministically from the seed;
/// zero-norm rows are excluded. Returns the mean and the number of excluded
/// rows so callers can surface a warning.
pub fn mean_pairwise_cosine_distance(
    h: &ActivationMatrix,
    sample_cap: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    let n = h.n_rows();
    if n < 2 {
        return Err(CcgError::invalid("cosine distance needs at least 2 rows"));
    }
    let rows: Vec<usize> = if n > sample_cap {
        let mut rng = stage_rng(seed, STAGE_PROBE);
        let mut idx = rand::seq::index::sample(&mut rng, n, sample_cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };

    let mut usable: Vec<(usize, f64)> = Vec::with_capacity(rows.len());
    let mut excluded = 0usize;
    for &r in &rows {
        let norm = h.data().row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            excluded += 1;
        } else {
            usable.push((r, norm));
        }
    }
    if usable.len() < 2 {
        return Err(CcgError::invalid(
            "fewer than 2 usable rows after excluding zero-norm rows",
        ));
    }

    let data = h.data();
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for a in 0..usable.len() {
        for b in (a + 1)..usable.len() {
            let (ra, na) = usable[a];
            let (rb, nb) = usable[b];
            let dot: f64 = data
                .row(ra)
                .iter()
                .zip(data.row(rb).iter())
                .map(|(x, y)| x * y)
                .sum();
            acc += 1.0 - dot / (na * nb);
            pairs += 1;
        }
    }
    Ok((acc / pairs as f64, excluded))
}

// ---------------------------------------------------------------------------
// Student-t survival function via the regularized incomplete beta function.
// ---------------------------------------------------------------------------

/// `P(T_df > t)` for Student's t distribution with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = df / (df + t * t);
    let half = 0.5 * betai_reg(0.5 * df, 0.5, x);
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn betai_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta function, modified Lentz.
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 relative.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    let t = x + 7.5;
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ln_gamma_matches_factorials() {
        for n in 1..10u32 {
            let expected: f64 = (1..n).map(|i| f64::from(i)).product::<f64>().ln();
            assert!((ln_gamma(f64::from(n)) - expected).abs() < 1e-12);
        }
        // Gamma(1/2) = sqrt(pi)
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn t_sf_at_zero_is_half() {
        for df in [1.0, 2.0, 14.0, 100.0] {
            assert!((student_t_sf(0.0, df) - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn t_sf_df2_closed_form() {
        // P(T_2 > t) = (1 - t / sqrt(t^2 + 2)) / 2
        for t in [-3.0, -0.5, 0.7, 2.0, 3.4641016151377544] {
            let expected = 0.5 * (1.0 - t / (t * t + 2.0f64).sqrt());
            assert!((student_t_sf(t, 2.0) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn paired_t_hand_example() {
        let s = PairedSample::new(vec![2.0, 4.0, 6.0], vec![1.0, 2.0, 3.0]).unwrap();
        let (t, p) = paired_t_one_sided(&s).unwrap();
        assert!((t - 3.4641016151377544).abs() < 1e-12);
        assert!((p - 0.037089950113724269).abs() < 1e-10);
    }

    #[test]
    fn paired_t_identical_inputs_is_undefined() {
        let s = PairedSample::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(paired_t_one_sided(&s).is_err());
    }

    #[test]
    fn paired_t_constant_positive_shift_is_infinite() {
        let s = PairedSample::new(vec![2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0]).unwrap();
        let (t, p) = paired_t_one_sided(&s).unwrap();
        assert!(t.is_infinite() && t > 0.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn paired_t_antisymmetry() {
        let x = vec![2.0, 4.5, 6.0, 3.0];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let fwd = PairedSample::new(x.clone(), y.clone()).unwrap();
        let rev = PairedSample::new(y, x).unwrap();
        let (t1, p1) = paired_t_one_sided(&fwd).unwrap();
        let (t2, p2) = paired_t_one_sided(&rev).unwrap();
        assert!((t1 + t2).abs() < 1e-12);
        assert!((p1 + p2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_on_shuffled_labels_is_at_chance() {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut rng = crate::rng::stage_rng(5, crate::rng::STAGE_PROBE);
        let n = 60;
        let mut data = Array2::zeros((n, 6));
        for v in data.iter_mut() {
            *v = rng.random_range(0.0..2.0);
        }
        let c = ConceptMatrix::from_data(data).unwrap();
        let mut labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut total = 0.0;
        for shuffle in 0..20u64 {
            labels.shuffle(&mut rng);
            total += linear_probe_accuracy(&c, &labels, 5, shuffle).unwrap();
        }
        let mean = total / 20.0;
        assert!(
            (mean - 1.0 / 3.0).abs() < 0.1,
            "shuffled-label accuracy {mean} is not at chance"
        );
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert!((bonferroni(0.01, 3) - 0.03).abs() < 1e-15);
        assert_eq!(bonferroni(0.5, 3), 1.0);
        assert_eq!(bonferroni(0.2, 1), 0.2);
    }

    #[test]
    fn cohens_d_hand_example() {
        let s = PairedSample::new(vec![2.0, 4.0, 6.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert!((cohens_d_paired(&s).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_constant_data_is_degenerate() {
        let diffs = vec![0.5; 10];
        let (lo, hi) = bootstrap_ci(&diffs, 500, 0.95, 42).unwrap();
        assert_eq!(lo, 0.5);
        assert_eq!(hi, 0.5);
    }

    #[test]
    fn bootstrap_translation_equivariance() {
        // integer diffs keep the arithmetic exact under translation
        let diffs = vec![1.0, 3.0, 2.0, 5.0, 4.0, 2.0];
        let shifted: Vec<f64> = diffs.iter().map(|v| v + 1000.0).collect();
        let (lo, hi) = bootstrap_ci(&diffs, 400, 0.95, 7).unwrap();
        let (slo, shi) = bootstrap_ci(&shifted, 400, 0.95, 7).unwrap();
        assert_eq!(slo, lo + 1000.0);
        assert_eq!(shi, hi + 1000.0);
    }

    #[test]
    fn probe_separates_one_hot_classes() {
        let mut data = Array2::zeros((30, 3));
        let mut labels = Vec::new();
        for i in 0..30 {
            let class = i % 3;
            data[[i, class]] = 1.0;
            labels.push(class);
        }
        let c = ConceptMatrix::new(data, 1).unwrap();
        let acc = linear_probe_accuracy(&c, &labels, 5, 42).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn probe_rejects_single_class() {
        let c = ConceptMatrix::new(Array2::ones((10, 2)), 2).unwrap();
        assert!(linear_probe_accuracy(&c, &vec![0; 10], 5, 42).is_err());
    }

    #[test]
    fn correlation_perfectly_collinear() {
        let c = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let r = pearson_corr_matrix(&c).unwrap();
        assert!((r[[0, 1]] - 1.0).abs() < 1e-12);
        assert_eq!(r[[0, 0]], 1.0);
    }

    #[test]
    fn correlation_zero_variance_guard() {
        let c = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let r = pearson_corr_matrix(&c).unwrap();
        assert_eq!(r[[0, 1]], 0.0);
        assert_eq!(r[[1, 1]], 1.0);
        assert!(r.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cosine_distance_identical_rows_is_zero() {
        let h = ActivationMatrix::new(array![[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let (dist, excluded) = mean_pairwise_cosine_distance(&h, 100, 1).unwrap();
        assert!(dist.abs() < 1e-15);
        assert_eq!(excluded, 0);
    }

    #[test]
    fn cosine_distance_orthogonal_rows_is_one() {
        let h = ActivationMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (dist, _) = mean_pairwise_cosine_distance(&h, 100, 1).unwrap();
        assert!((dist - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_distance_three_row_hand_example() {
        let h = ActivationMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let (dist, _) = mean_pairwise_cosine_distance(&h, 100, 1).unwrap();
        assert!((dist - 0.52859547920896832).abs() < 1e-12);
    }

    #[test]
    fn cosine_distance_excludes_zero_rows() {
        let h = ActivationMatrix::new(array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]).unwrap();
        let (dist, excluded) = mean_pairwise_cosine_distance(&h, 100, 1).unwrap();
        assert_eq!(excluded, 1);
        assert!((dist - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_distance_scale_invariant() {
        let h1 = ActivationMatrix::new(array![[1.0, 2.0], [3.0, 1.0], [0.5, 0.5]]).unwrap();
        let h2 = ActivationMatrix::new(array![[2.0, 4.0], [30.0, 10.0], [0.05, 0.05]]).unwrap();
        let (d1, _) = mean_pairwise_cosine_distance(&h1, 100, 1).unwrap();
        let (d2, _) = mean_pairwise_cosine_distance(&h2, 100, 1).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }
}
