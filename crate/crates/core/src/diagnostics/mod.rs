//! Training-dynamics diagnostics computed once per policy update.
//!
//! Everything here is a pure function of matrices and vectors produced by the
//! update: the feature matrix, per-neuron activation scores, the flat parameter
//! vector, one flattened gradient, log-likelihood ratios and action probabilities.

mod snapshot;

pub use snapshot::{MetricSnapshot, CSV_HEADER};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::linalg::{symmetric_eigenvalues, top_eigenpairs};
use crate::numerics::{HiddenRecord, Matrix};

pub const DEFAULT_RANK_TAU: f64 = 0.99;
pub const DEFAULT_DORMANT_EPS: f64 = 1e-5;
pub const DEFAULT_KURTOSIS_EPS: f64 = 1e-12;
pub const DEFAULT_COVERAGE_GRID: usize = 30;

/// Eigenvalues below this fraction of the largest are treated as exact zeros.
const RANK_CUTOFF: f64 = 1e-10;
const PROJECTION_TOL: f64 = 1e-10;
const PROJECTION_MAX_ITER: usize = 1000;
const PROJECTION_MARGIN: f64 = 1e-9;

/// Smallest `k` whose top-`k` squared singular values hold at least `tau` of the
/// total. An all-zero matrix has rank 0.
pub fn feature_rank(features: &Matrix, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must be in (0, 1], got {tau}")));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("feature matrix"));
    }
    let mut eig = symmetric_eigenvalues(&features.gram());
    let top = eig.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok(0);
    }
    for e in eig.iter_mut() {
        if *e < RANK_CUTOFF * top {
            *e = 0.0;
        }
    }
    let total: f64 = eig.iter().sum();
    let mut acc = 0.0;
    for (k, e) in eig.iter().enumerate() {
        acc += e;
        if acc >= tau * total {
            return Ok(k + 1);
        }
    }
    Ok(eig.iter().filter(|&&e| e > 0.0).count())
}

/// Batch-mean absolute post-activation of every hidden unit, layers concatenated.
pub fn neuron_scores(hidden: &[HiddenRecord]) -> Vec<f64> {
    let mut scores = Vec::new();
    for rec in hidden {
        let m = &rec.post;
        let n = m.rows().max(1) as f64;
        let mut s = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (acc, v) in s.iter_mut().zip(m.row(r)) {
                *acc += v.abs();
            }
        }
        scores.extend(s.into_iter().map(|v| v / n));
    }
    scores
}

/// Percentage of neurons whose score is below `eps`.
pub fn dormant_fraction(scores: &[f64], eps: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let dormant = scores.iter().filter(|s| s.abs() < eps).count();
    dormant as f64 / scores.len() as f64 * 100.0
}

/// Global L2 norm of all parameters.
pub fn weight_norm<'a>(params: impl IntoIterator<Item = &'a f64>) -> f64 {
    params.into_iter().map(|t| t * t).sum::<f64>().sqrt()
}

/// Non-excess kurtosis of `log(|g| + eps)`. `None` when the log-magnitudes have no spread.
pub fn grad_log_kurtosis(grads: &[f64], eps: f64) -> Result<Option<f64>> {
    if grads.is_empty() {
        return Err(Error::InvalidArgument("no gradient samples".into()));
    }
    ensure_finite(grads, "gradient samples")?;
    let logs: Vec<f64> = grads.iter().map(|g| (g.abs() + eps).ln()).collect();
    if logs.iter().any(|l| !l.is_finite()) {
        // zero gradient with eps = 0
        return Ok(None);
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let (m2, m4) = logs.iter().fold((0.0, 0.0), |(m2, m4), l| {
        let d = (l - mean) * (l - mean);
        (m2 + d, m4 + d * d)
    });
    let var = m2 / n;
    if var <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Ok(None);
    }
    Ok(Some((m4 / n) / (var * var)))
}

/// Effective sample size of the importance weights `exp(new − old)`, as a
/// percentage of the sample count.
pub fn ess_percent(new_log_probs: &[f64], old_log_probs: &[f64]) -> Result<f64> {
    if new_log_probs.len() != old_log_probs.len() {
        return Err(Error::dim("ess_percent", old_log_probs.len(), new_log_probs.len()));
    }
    if new_log_probs.is_empty() {
        return Err(Error::InvalidArgument("ESS of an empty sample".into()));
    }
    ensure_finite(new_log_probs, "ESS log-probs")?;
    ensure_finite(old_log_probs, "ESS log-probs")?;
    let diffs: Vec<f64> = new_log_probs.iter().zip(old_log_probs).map(|(a, b)| a - b).collect();
    let max = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // shifting every log-ratio by the max leaves the normalized weights unchanged
    let w: Vec<f64> = diffs.iter().map(|d| (d - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|x| (x / sum) * (x / sum)).sum();
    let n = diffs.len() as f64;
    let ess = (1.0 / sum_sq).clamp(1.0, n);
    Ok(ess / n * 100.0)
}

/// Mean over actions of the population variance (over states) of each action's probability.
pub fn policy_variance(probs: &Matrix) -> Result<f64> {
    let b = probs.rows();
    let a = probs.cols();
    if b == 0 || a == 0 {
        return Err(Error::InvalidArgument("policy variance of an empty batch".into()));
    }
    let mut mean = vec![0.0; a];
    for r in 0..b {
        for (m, p) in mean.iter_mut().zip(probs.row(r)) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut var = vec![0.0; a];
    for r in 0..b {
        for ((v, p), m) in var.iter_mut().zip(probs.row(r)).zip(&mean) {
            *v += (p - m) * (p - m);
        }
    }
    Ok(var.iter().map(|v| v / b as f64).sum::<f64>() / a as f64)
}

/// 2-D projection of a batch with coordinates in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Matrix,
    /// Unit principal directions (one per row).
    pub components: Matrix,
    /// The data had no variance; every point sits at the origin.
    pub degenerate: bool,
}

/// Projects rows onto their top two principal components (power iteration with
/// deflation) and min-max scales each coordinate into `[0, 1 − 1e-9]`.
pub fn project_2d(features: &Matrix) -> Result<Projection> {
    let n = features.rows();
    let d = features.cols();
    if n < 2 {
        return Err(Error::InvalidArgument("projection needs at least two points".into()));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("projection input"));
    }
    let mut centered = features.clone();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centered.gram();
    cov.data_mut().iter_mut().for_each(|v| *v /= n as f64);
    let trace: f64 = (0..d).map(|i| cov.get(i, i)).sum();
    let mut points = Matrix::zeros(n, 2);
    let mut components = Matrix::zeros(2, d);
    let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
    if trace <= 1e-24 * mean_sq.max(1.0) {
        return Ok(Projection {
            points,
            components,
            degenerate: true,
        });
    }
    let pairs = top_eigenpairs(&cov, 2, PROJECTION_TOL, PROJECTION_MAX_ITER);
    let scale = trace.sqrt();
    for (c, (_, v)) in pairs.iter().enumerate() {
        components.row_mut(c).copy_from_slice(v);
        let coords: Vec<f64> = (0..n)
            .map(|r| centered.row(r).iter().zip(v).map(|(x, y)| x * y).sum())
            .collect();
        let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for (r, &y) in coords.iter().enumerate() {
            let p = if range > 1e-10 * scale {
                (y - lo) / range * (1.0 - PROJECTION_MARGIN)
            } else {
                0.0
            };
            points.set(r, c, p);
        }
    }
    Ok(Projection {
        points,
        components,
        degenerate: false,
    })
}

/// Fraction of cells of a `grid × grid` partition of `[0, 1)²` holding at least one point.
pub fn coverage(points: &Matrix, grid: usize) -> Result<f64> {
    if grid == 0 {
        return Err(Error::InvalidArgument("coverage grid must be >= 1".into()));
    }
    if points.cols() != 2 {
        return Err(Error::dim("coverage points", 2, points.cols()));
    }
    let mut occupied = vec![false; grid * grid];
    for r in 0..points.rows() {
        let (x, y) = (points.get(r, 0), points.get(r, 1));
        if !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y) {
            return Err(Error::InvalidArgument(format!("point ({x}, {y}) outside [0, 1)")));
        }
        let ix = ((x * grid as f64).floor() as usize).min(grid - 1);
        let iy = ((y * grid as f64).floor() as usize).min(grid - 1);
        occupied[iy * grid + ix] = true;
    }
    let used = occupied.iter().filter(|&&o| o).count();
    Ok(used as f64 / (grid * grid) as f64)
}
