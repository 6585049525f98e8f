//! Weighted CVaR in Rockafellar–Uryasev form, scores, effective sample size
//! and the Wasserstein-robust left-hand side.
//!
//! Losses are always `ℓ_i = −ξ_i·x` (loss = negative portfolio return).

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ w_i = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;
/// Tolerance on `Σ x_l = 1` for portfolios.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Floor applied to `σ̂_w` wherever it is used as a denominator.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Absolute slack used when deciding whether the cumulative tail mass has
/// reached `α`; keeps `k/n == α` exact ties on the same side.
const TAIL_MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Validation,
    Test,
}

/// Time-ordered `n × d` matrix of per-period asset returns (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    data: Vec<f64>,
    n: usize,
    d: usize,
    origin: Fold,
}

impl ReturnSeries {
    pub fn from_flat(data: Vec<f64>, d: usize, origin: Fold) -> Result<Self> {
        if d == 0 || data.is_empty() || data.len() % d != 0 {
            return Err(Error::InvalidSeries(format!(
                "{} values cannot form rows of width {d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite entry at row {}", pos / d)));
        }
        let n = data.len() / d;
        Ok(Self { data, n, d, origin })
    }

    pub fn from_rows(rows: &[Vec<f64>], origin: Fold) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
        Self::from_flat(rows.concat(), d, origin)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn origin(&self) -> Fold {
        self.origin
    }

    pub fn with_origin(mut self, origin: Fold) -> Self {
        self.origin = origin;
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Contiguous sub-series over `range` (time order preserved).
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n {
            return Err(Error::InvalidSeries(format!("bad row range {range:?} for n = {}", self.n)));
        }
        Self::from_flat(self.data[range.start * self.d..range.end * self.d].to_vec(), self.d, self.origin)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: other.d });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::from_flat(data, self.d, self.origin)
    }

    /// Portfolio losses `ℓ_i = −ξ_i·x`.
    pub fn losses(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        let mut out = vec![0.0; self.n];
        losses_into(&self.data, self.d, x, &mut out);
        Ok(out)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }
}

#[inline]
pub(crate) fn losses_into(flat: &[f64], d: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(flat.chunks_exact(d)) {
        *o = -row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// A long-only, fully invested allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    /// Validates the budget constraint; entries in `[−1e−12, 0)` are clamped to zero.
    pub fn new(mut x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidWeights("empty portfolio".into()));
        }
        for v in x.iter_mut() {
            if !v.is_finite() || *v < -1e-12 {
                return Err(Error::InvalidWeights(format!("portfolio entry {v} is negative or non-finite")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s: f64 = x.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidWeights(format!("portfolio sums to {s}, not 1")));
        }
        Ok(Self(x))
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, c: &[f64]) -> f64 {
        self.0.iter().zip(c).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for PortfolioWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PortfolioWeights> for Vec<f64> {
    fn from(p: PortfolioWeights) -> Self {
        p.0
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if let Some(v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidWeights(format!("weight {v} is negative or non-finite")));
    }
    let s: f64 = w.iter().sum();
    if s == 0.0 {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// `n_eff = 1 / Σ w_i²` for normalized nonnegative weights.
pub fn effective_sample_size(w: &[f64]) -> Result<f64> {
    check_weights(w)?;
    Ok(1.0 / w.iter().map(|v| v * v).sum::<f64>())
}

/// A return series paired with probability weights over its rows.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    series: ReturnSeries,
    w: Vec<f64>,
    n_eff: f64,
}

impl WeightedSample {
    pub fn new(series: ReturnSeries, w: Vec<f64>) -> Result<Self> {
        if w.len() != series.n() {
            return Err(Error::DimensionMismatch { expected: series.n(), got: w.len() });
        }
        let n_eff = effective_sample_size(&w)?;
        Ok(Self { series, w, n_eff })
    }

    /// Renormalizes arbitrary nonnegative masses before construction.
    pub fn from_masses(series: ReturnSeries, masses: Vec<f64>) -> Result<Self> {
        let s: f64 = masses.iter().sum();
        if !(s > 0.0) || masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidWeights("masses must be nonnegative with positive total".into()));
        }
        Self::new(series, masses.into_iter().map(|m| m / s).collect())
    }

    pub fn uniform(series: ReturnSeries) -> Self {
        let n = series.n();
        Self { series, w: vec![1.0 / n as f64; n], n_eff: n as f64 }
    }

    pub fn series(&self) -> &ReturnSeries {
        &self.series
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn n_eff(&self) -> f64 {
        self.n_eff
    }

    pub fn n(&self) -> usize {
        self.series.n()
    }

    pub fn d(&self) -> usize {
        self.series.d()
    }

    /// Restriction to a contiguous row range with weights renormalized inside it.
    pub fn restrict(&self, range: Range<usize>) -> Result<Self> {
        let series = self.series.slice(range.clone())?;
        Self::from_masses(series, self.w[range].to_vec())
    }
}

/// Result of a weighted Rockafellar–Uryasev minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct CvarEstimate {
    /// Minimizing threshold (weighted upper `α`-quantile of losses).
    pub t_w: f64,
    /// Weighted CVaR `Σ w_i φ_i`.
    pub h_w: f64,
    /// Weighted standard deviation of the scores.
    pub sigma_w: f64,
    /// `φ_i = t_w + (1/α)(ℓ_i − t_w)₊`.
    pub scores: Vec<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange { name: "alpha", value: alpha });
    }
    Ok(())
}

/// Weighted CVaR of `x` on `sample` at tail level `alpha`.
pub fn weighted_cvar(sample: &WeightedSample, x: &PortfolioWeights, alpha: f64) -> Result<CvarEstimate> {
    check_alpha(alpha)?;
    let losses = sample.series().losses(x.as_slice())?;
    cvar_of_losses(&losses, sample.weights(), alpha)
}

/// Weighted CVaR of a loss vector. Weights must be normalized.
pub fn cvar_of_losses(losses: &[f64], w: &[f64], alpha: f64) -> Result<CvarEstimate> {
    check_alpha(alpha)?;
    if losses.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: losses.len(), got: w.len() });
    }
    check_weights(w)?;
    let mut order = Vec::new();
    let t_w = tail_threshold(losses, w, alpha, &mut order);
    let inv_a = 1.0 / alpha;
    let scores: Vec<f64> = losses.iter().map(|&l| t_w + inv_a * (l - t_w).max(0.0)).collect();
    let h_w: f64 = scores.iter().zip(w).map(|(p, wi)| wi * p).sum();
    let var: f64 = scores.iter().zip(w).map(|(p, wi)| wi * (p - h_w) * (p - h_w)).sum();
    Ok(CvarEstimate { t_w, h_w, sigma_w: var.max(0.0).sqrt(), scores })
}

/// Weighted upper `α`-quantile: the largest loss whose cumulative weight,
/// accumulated from the worst loss downwards, reaches `α`.
///
/// Only the top of the order is sorted when possible. `order` is scratch
/// space reused across calls.
pub(crate) fn tail_threshold(losses: &[f64], w: &[f64], alpha: f64, order: &mut Vec<u32>) -> f64 {
    let n = losses.len();
    order.clear();
    order.extend(0..n as u32);
    let desc = |a: &u32, b: &u32| losses[*b as usize].total_cmp(&losses[*a as usize]).then(a.cmp(b));
    let target = alpha - TAIL_MASS_TOL;

    let head = ((4.0 * alpha * n as f64).ceil() as usize + 16).min(n);
    if head < n {
        order.select_nth_unstable_by(head - 1, desc);
        order[..head].sort_unstable_by(desc);
        let mut cum = 0.0;
        for &i in &order[..head] {
            cum += w[i as usize];
            if cum >= target {
                return losses[i as usize];
            }
        }
    }
    order.sort_unstable_by(desc);
    let mut cum = 0.0;
    for &i in order.iter() {
        cum += w[i as usize];
        if cum >= target {
            return losses[i as usize];
        }
    }
    // Σw = 1 > α, so this is only reachable through rounding.
    losses[*order.last().expect("nonempty") as usize]
}

/// Same threshold computed from the rows with loss at least `floor`, or `None`
/// when those rows carry less than `α` mass. Exact whenever it returns.
pub(crate) fn tail_threshold_above(losses: &[f64], w: &[f64], alpha: f64, floor: f64, order: &mut Vec<u32>) -> Option<f64> {
    order.clear();
    let mut mass = 0.0;
    for (i, (&l, &wi)) in losses.iter().zip(w).enumerate() {
        if l >= floor {
            order.push(i as u32);
            mass += wi;
        }
    }
    let target = alpha - TAIL_MASS_TOL;
    if mass < target {
        return None;
    }
    order.sort_unstable_by(|a, b| losses[*b as usize].total_cmp(&losses[*a as usize]).then(a.cmp(b)));
    let mut cum = 0.0;
    for &i in order.iter() {
        cum += w[i as usize];
        if cum >= target {
            return Some(losses[i as usize]);
        }
    }
    None
}

/// `CVaR + (δ/α)‖x‖₂`, the worst case over a W₁ ball of radius `δ`.
pub fn robust_lhs(cvar_value: f64, delta: f64, alpha: f64, x: &PortfolioWeights) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::OutOfRange { name: "delta", value: delta });
    }
    check_alpha(alpha)?;
    Ok(cvar_value + delta / alpha * x.norm2())
}
