//! Density-ratio weights for the validation fold.
//!
//! The validation series is split into an early window (proxy for the source
//! law) and a late window (proxy for the deployment law). A ridge-penalized
//! logistic classifier separates the two; its odds `p(late|ξ)/(1−p(late|ξ))`
//! are proportional to the density ratio and, after clipping and
//! normalization, become the row weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{ReturnSeries, WeightedSample};

/// Minimum number of rows in each of the early and late windows.
pub const MIN_WINDOW: usize = 10;

/// Classifier inputs derived from a return vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    /// `ξ` only; can detect location shifts.
    Linear,
    /// `ξ` and `ξ∘ξ`; also detects volatility shifts.
    #[default]
    Quadratic,
}

impl FeatureMap {
    pub fn width(self, d: usize) -> usize {
        match self {
            FeatureMap::Linear => d,
            FeatureMap::Quadratic => 2 * d,
        }
    }

    fn expand(self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(row);
        if self == FeatureMap::Quadratic {
            out.extend(row.iter().map(|v| v * v));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatioConfig {
    /// Late-window share `m/n₂` of the validation fold.
    pub recent_fraction: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Ridge penalty on the (standardized) coefficients.
    pub l2: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub features: FeatureMap,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            recent_fraction: 0.25,
            clip_lo: 0.1,
            clip_hi: 10.0,
            l2: 1e-3,
            max_iter: 10_000,
            grad_tol: 1e-8,
            features: FeatureMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Late-window length.
    pub m: usize,
    /// Total rows used for fitting (early + late).
    pub n2: usize,
    pub iterations: usize,
    pub final_loss: f64,
    pub grad_norm: f64,
}

/// Fitted late-vs-early classifier in standardized feature coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub features: FeatureMap,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub means: Vec<f64>,
    /// Per-feature standard deviations; `0` marks a dropped constant feature.
    pub scales: Vec<f64>,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub training_meta: TrainingMeta,
}

/// Splits `series` into its first `n − m` and last `m = round(n·fraction)` rows.
pub fn split_early_late(series: &ReturnSeries, recent_fraction: f64) -> Result<(ReturnSeries, ReturnSeries)> {
    if !(recent_fraction > 0.0 && recent_fraction < 1.0) {
        return Err(Error::OutOfRange { name: "recent_fraction", value: recent_fraction });
    }
    let n = series.n();
    let m = (n as f64 * recent_fraction).round() as usize;
    if m < MIN_WINDOW || n - m < MIN_WINDOW {
        return Err(Error::WindowTooShort(format!(
            "n = {n}, recent_fraction = {recent_fraction} gives early = {}, late = {m} (need ≥ {MIN_WINDOW} each)",
            n.saturating_sub(m)
        )));
    }
    Ok((series.slice(0..n - m)?, series.slice(n - m..n)?))
}

fn validate_clip(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::Config(format!("odds clip bounds [{lo}, {hi}] must satisfy 0 < lo ≤ hi < ∞")));
    }
    Ok(())
}

/// Fits the late-vs-early logistic classifier.
///
/// Minimizes the mean cross-entropy plus `(λ/2)‖β‖²` (intercept unpenalized)
/// from a zero start with damped Newton steps on the full batch, stopping when
/// the gradient norm drops below `grad_tol` or after `max_iter` steps.
pub fn fit_ratio_model(early: &ReturnSeries, late: &ReturnSeries, config: &RatioConfig) -> Result<RatioModel> {
    if early.d() != late.d() {
        return Err(Error::DimensionMismatch { expected: early.d(), got: late.d() });
    }
    validate_clip(config.clip_lo, config.clip_hi)?;
    if !(config.l2 > 0.0) {
        return Err(Error::OutOfRange { name: "l2", value: config.l2 });
    }
    let fmap = config.features;
    let p = fmap.width(early.d());
    let n = early.n() + late.n();

    // Pooled standardization.
    let mut raw = Vec::with_capacity(n * p);
    let mut buf = Vec::with_capacity(p);
    for row in early.rows().chain(late.rows()) {
        fmap.expand(row, &mut buf);
        raw.extend_from_slice(&buf);
    }
    let mut means = vec![0.0; p];
    for f in raw.chunks_exact(p) {
        means.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut scales = vec![0.0; p];
    for f in raw.chunks_exact(p) {
        scales.iter_mut().zip(f.iter().zip(&means)).for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    for (j, s) in scales.iter_mut().enumerate() {
        *s = (*s / n as f64).sqrt();
        if !(*s > 1e-12 * (1.0 + means[j].abs())) {
            log::warn!("ratio model: feature {j} has zero variance and is dropped");
            *s = 0.0;
        }
    }
    // Design matrix with a leading intercept column.
    let q = p + 1;
    let mut z = Vec::with_capacity(n * q);
    for f in raw.chunks_exact(p) {
        z.push(1.0);
        for j in 0..p {
            z.push(if scales[j] > 0.0 { (f[j] - means[j]) / scales[j] } else { 0.0 });
        }
    }
    let labels: Vec<f64> = (0..n).map(|i| if i < early.n() { 0.0 } else { 1.0 }).collect();

    let objective = |theta: &[f64]| -> f64 {
        let mut loss = 0.0;
        for (row, y) in z.chunks_exact(q).zip(&labels) {
            let s: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
            loss += softplus(s) - y * s;
        }
        loss / n as f64 + 0.5 * config.l2 * theta[1..].iter().map(|b| b * b).sum::<f64>()
    };

    let mut theta = vec![0.0; q];
    let mut loss = objective(&theta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut grad = vec![0.0; q];
    let mut hess = vec![0.0; q * q];
    while iterations < config.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        for (row, y) in z.chunks_exact(q).zip(&labels) {
            let s: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let pr = sigmoid(s);
            let r = pr - y;
            let c = pr * (1.0 - pr);
            for a in 0..q {
                grad[a] += r * row[a];
                let ca = c * row[a];
                for b in a..q {
                    hess[a * q + b] += ca * row[b];
                }
            }
        }
        for a in 0..q {
            grad[a] /= n as f64;
            for b in a..q {
                hess[a * q + b] /= n as f64;
                hess[b * q + a] = hess[a * q + b];
            }
        }
        for a in 1..q {
            grad[a] += config.l2 * theta[a];
            hess[a * q + a] += config.l2;
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !grad_norm.is_finite() || !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss or gradient at iteration {iterations}")));
        }
        if grad_norm < config.grad_tol {
            break;
        }
        // Dropped features carry no curvature from data; ridge keeps H SPD.
        let step = cholesky_solve(&hess, &grad, q).ok_or_else(|| Error::Training("singular Hessian".into()))?;
        let slope: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
        let mut eta = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - eta * s).collect();
            let trial_loss = objective(&trial);
            if trial_loss <= loss + 1e-4 * eta * slope {
                theta = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No further decrease is representable in floating point.
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Training("non-finite final loss".into()));
    }

    Ok(RatioModel {
        features: fmap,
        coefficients: theta[1..].to_vec(),
        intercept: theta[0],
        means,
        scales,
        clip_lo: config.clip_lo,
        clip_hi: config.clip_hi,
        training_meta: TrainingMeta { m: late.n(), n2: n, iterations, final_loss: loss, grad_norm },
    })
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `q × q`).
fn cholesky_solve(a: &[f64], b: &[f64], q: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            let mut s = a[i * q + j];
            for k in 0..j {
                s -= l[i * q + k] * l[j * q + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * q + i] = s.sqrt();
            } else {
                l[i * q + j] = s / l[j * q + j];
            }
        }
    }
    let mut y = vec![0.0; q];
    for i in 0..q {
        let s: f64 = (0..i).map(|k| l[i * q + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * q + i];
    }
    let mut x = vec![0.0; q];
    for i in (0..q).rev() {
        let s: f64 = (i + 1..q).map(|k| l[k * q + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * q + i];
    }
    Some(x)
}

impl RatioModel {
    pub fn d(&self) -> usize {
        match self.features {
            FeatureMap::Linear => self.means.len(),
            FeatureMap::Quadratic => self.means.len() / 2,
        }
    }

    /// Log-odds of "late" for one return vector.
    pub fn score(&self, row: &[f64]) -> f64 {
        let mut f = Vec::with_capacity(self.means.len());
        self.features.expand(row, &mut f);
        self.intercept
            + f.iter()
                .zip(&self.means)
                .zip(&self.scales)
                .zip(&self.coefficients)
                .filter(|(((_, _), s), _)| **s > 0.0)
                .map(|(((v, m), s), b)| b * (v - m) / s)
                .sum::<f64>()
    }

    /// Unclipped odds for every row of `series`.
    pub fn raw_odds(&self, series: &ReturnSeries) -> Result<Vec<f64>> {
        if series.d() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: series.d() });
        }
        Ok(series.rows().map(|r| self.score(r).exp()).collect())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        validate_clip(m.clip_lo, m.clip_hi)?;
        let p = m.means.len();
        if m.coefficients.len() != p || m.scales.len() != p || m.features.width(m.d()) != p {
            return Err(Error::Parse("inconsistent ratio model vector lengths".into()));
        }
        if m.coefficients.iter().chain([&m.intercept]).any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite coefficient".into()));
        }
        Ok(m)
    }
}

/// Clips odds into `[lo, hi]` and normalizes them to sum to one.
pub fn normalize_clipped_odds(odds: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    validate_clip(lo, hi)?;
    if odds.is_empty() {
        return Err(Error::InvalidWeights("no odds to normalize".into()));
    }
    let clipped: Vec<f64> = odds.iter().map(|o| if o.is_nan() { lo } else { o.clamp(lo, hi) }).collect();
    let s: f64 = clipped.iter().sum();
    Ok(clipped.into_iter().map(|o| o / s).collect())
}

/// Clipped, normalized density-ratio weights over the rows of `series`.
pub fn compute_weights(model: &RatioModel, series: &ReturnSeries) -> Result<WeightedSample> {
    let odds = model.raw_odds(series)?;
    let w = normalize_clipped_odds(&odds, model.clip_lo, model.clip_hi)?;
    WeightedSample::new(series.clone(), w)
}
