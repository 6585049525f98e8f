//! Stationary Gaussian AR(1) return generator and the two benchmark scenarios.
//!
//! `ξ_t = μ + φ(ξ_{t−1} − μ) + ε_t` with `ε_t ~ N(0, Σ)` i.i.d. and `ξ_1` drawn
//! from the stationary law `N(μ, Σ/(1−φ²))`. `Σ` is the innovation covariance.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{cvar_of_losses, Fold, PortfolioWeights, ReturnSeries};
use crate::seed;

/// Regime change applied to the deployment law `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// `μ_Q = μ_P − delta_mu`.
    pub delta_mu: Vec<f64>,
    /// `Σ_Q = vol_multiplier² · Σ_P`.
    pub vol_multiplier: f64,
    pub phi_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub d: usize,
    pub mu_p: Vec<f64>,
    /// Row-major `d × d` innovation covariance.
    pub sigma_p: Vec<Vec<f64>>,
    pub phi_p: f64,
    pub shift: Option<ShiftSpec>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Share of the validation fold drawn from `Q` (at its end) in scenario 2.
    pub val_late_fraction: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Risk budget; calibrated from scenario-1 training data when absent.
    pub gamma: Option<f64>,
    pub gamma_margin: f64,
}

/// `vol_i vol_j ρ` off the diagonal, `vol_i²` on it.
pub fn equicorrelated(vols: &[f64], rho: f64) -> Vec<Vec<f64>> {
    vols.iter()
        .enumerate()
        .map(|(i, vi)| vols.iter().enumerate().map(|(j, vj)| if i == j { vi * vi } else { rho * vi * vj }).collect())
        .collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let d = 8;
        let vols = [0.01, 0.015, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15];
        Self {
            d,
            mu_p: vols.iter().map(|v| 0.1 * v).collect(),
            sigma_p: equicorrelated(&vols, 0.3),
            phi_p: 0.3,
            shift: Some(ShiftSpec { delta_mu: vec![0.0015; d], vol_multiplier: 1.7, phi_q: 0.45 }),
            n_train: 1000,
            n_val: 1200,
            n_test: 15000,
            val_late_fraction: 0.25,
            alpha: 0.05,
            beta: 0.1,
            gamma: None,
            gamma_margin: 0.10,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.mu_p.len() != self.d {
            return bad(format!("mu_p has {} entries for d = {}", self.mu_p.len(), self.d));
        }
        if self.sigma_p.len() != self.d || self.sigma_p.iter().any(|r| r.len() != self.d) {
            return bad("sigma_p must be d × d".into());
        }
        for i in 0..self.d {
            for j in 0..i {
                if (self.sigma_p[i][j] - self.sigma_p[j][i]).abs() > 1e-12 * (1.0 + self.sigma_p[i][j].abs()) {
                    return bad("sigma_p is not symmetric".into());
                }
            }
        }
        cholesky(&self.sigma_p)?;
        if !(self.phi_p.abs() < 1.0) {
            return bad(format!("|phi_p| = {} must be < 1", self.phi_p.abs()));
        }
        if let Some(s) = &self.shift {
            if s.delta_mu.len() != self.d {
                return bad("shift.delta_mu must have d entries".into());
            }
            if !(s.phi_q.abs() < 1.0) || !(s.vol_multiplier > 0.0) {
                return bad("shift needs |phi_q| < 1 and vol_multiplier > 0".into());
            }
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("fold sizes must be positive".into());
        }
        if !(self.val_late_fraction > 0.0 && self.val_late_fraction < 1.0) {
            return bad("val_late_fraction must lie in (0, 1)".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("alpha and beta must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// `(μ_Q, Σ_Q, φ_Q)`; the source law when no shift is configured.
    pub fn target_law(&self) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
        match &self.shift {
            None => (self.mu_p.clone(), self.sigma_p.clone(), self.phi_p),
            Some(s) => {
                let mu = self.mu_p.iter().zip(&s.delta_mu).map(|(m, dm)| m - dm).collect();
                let k = s.vol_multiplier * s.vol_multiplier;
                let sigma = self.sigma_p.iter().map(|r| r.iter().map(|v| k * v).collect()).collect();
                (mu, sigma, s.phi_q)
            }
        }
    }
}

/// Lower Cholesky factor (row-major).
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = a.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Simulates `n` periods of a stationary Gaussian AR(1) started from its stationary law.
pub fn simulate_var1(mu: &[f64], sigma: &[Vec<f64>], phi: f64, n: usize, seed: u64, origin: Fold) -> Result<ReturnSeries> {
    if !(phi.abs() < 1.0) {
        return Err(Error::OutOfRange { name: "phi", value: phi });
    }
    let d = mu.len();
    if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: sigma.len() });
    }
    let l = cholesky(sigma)?;
    let mut rng = seed::rng(seed, &[]);
    let mut z = vec![0.0; d];
    let draw = |z: &mut Vec<f64>, rng: &mut rand_chacha::ChaCha8Rng| {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
    };
    let mut data = Vec::with_capacity(n * d);
    let mut prev = vec![0.0; d];
    let stationary = 1.0 / (1.0 - phi * phi).sqrt();
    for t in 0..n {
        draw(&mut z, &mut rng);
        for i in 0..d {
            let eps: f64 = (0..=i).map(|k| l[i][k] * z[k]).sum();
            let dev = if t == 0 { stationary * eps } else { phi * prev[i] + eps };
            prev[i] = dev;
        }
        data.extend(prev.iter().zip(mu).map(|(dev, m)| m + dev));
    }
    ReturnSeries::from_flat(data, d, origin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Every fold from `P`.
    NoShift = 1,
    /// Training from `P`; validation ends with a `Q` window; test from `Q`.
    Shift = 2,
}

impl Scenario {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Scenario::NoShift),
            2 => Ok(Scenario::Shift),
            _ => Err(Error::Config(format!("unknown scenario {id}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Folds {
    pub train: ReturnSeries,
    pub val: ReturnSeries,
    pub test: ReturnSeries,
}

/// Generates train/validation/test folds with independent seed streams.
pub fn make_scenario(scenario: Scenario, cfg: &ScenarioConfig, rep_seed: u64) -> Result<Folds> {
    cfg.validate()?;
    let stream = |name: &str| seed::derive(rep_seed, &[seed::tag(name)]);
    let (mu_p, sig_p, phi_p) = (&cfg.mu_p, &cfg.sigma_p, cfg.phi_p);
    let train = simulate_var1(mu_p, sig_p, phi_p, cfg.n_train, stream("train"), Fold::Train)?;
    match scenario {
        Scenario::NoShift => Ok(Folds {
            train,
            val: simulate_var1(mu_p, sig_p, phi_p, cfg.n_val, stream("val"), Fold::Validation)?,
            test: simulate_var1(mu_p, sig_p, phi_p, cfg.n_test, stream("test"), Fold::Test)?,
        }),
        Scenario::Shift => {
            let (mu_q, sig_q, phi_q) = cfg.target_law();
            let m = ((cfg.n_val as f64) * cfg.val_late_fraction).round() as usize;
            let m = m.clamp(1, cfg.n_val - 1);
            let early = simulate_var1(mu_p, sig_p, phi_p, cfg.n_val - m, stream("val-early"), Fold::Validation)?;
            let late = simulate_var1(&mu_q, &sig_q, phi_q, m, stream("val-late"), Fold::Validation)?;
            Ok(Folds {
                train,
                val: early.concat(&late)?,
                test: simulate_var1(&mu_q, &sig_q, phi_q, cfg.n_test, stream("test"), Fold::Test)?,
            })
        }
    }
}

/// `(1 + margin) ·` empirical CVaR of the equal-weight portfolio on `train`.
pub fn calibrate_gamma(train: &ReturnSeries, alpha: f64, margin: f64) -> Result<f64> {
    let x = PortfolioWeights::uniform(train.d());
    let losses = train.losses(x.as_slice())?;
    let w = vec![1.0 / losses.len() as f64; losses.len()];
    Ok((1.0 + margin) * cvar_of_losses(&losses, &w, alpha)?.h_w)
}

/// Writes `t,asset_1..asset_d` followed by one row per period (t from 1).
pub fn write_series_csv<W: Write>(series: &ReturnSeries, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=series.d()).map(|j| format!("asset_{j}")));
    wtr.write_record(&header)?;
    for (t, row) in series.rows().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
