//! Brute-force oracles shared by the integration targets.
#![allow(dead_code)]

use cvar_dro::risk::{Fold, ReturnSeries, WeightedSample};
use cvar_dro::seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `Φ⁻¹(0.9)`.
pub const Z90: f64 = 1.2815515655446004;
/// `Φ⁻¹(0.95)`.
pub const Z95: f64 = 1.6448536269514722;

/// Rockafellar–Uryasev objective at threshold `t`.
pub fn ru_objective(losses: &[f64], w: &[f64], alpha: f64, t: f64) -> f64 {
    t + losses.iter().zip(w).map(|(l, wi)| wi * (l - t).max(0.0)).sum::<f64>() / alpha
}

/// Minimum of the RU objective over every loss breakpoint.
pub fn ru_breakpoints(losses: &[f64], w: &[f64], alpha: f64) -> f64 {
    losses.iter().map(|&t| ru_objective(losses, w, alpha, t)).fold(f64::INFINITY, f64::min)
}

/// Breakpoints plus `grid + 1` evenly spaced thresholds between the extreme losses.
pub fn ru_oracle(losses: &[f64], w: &[f64], alpha: f64, grid: usize) -> f64 {
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = ru_breakpoints(losses, w, alpha);
    for k in 0..=grid {
        let t = lo + (hi - lo) * k as f64 / grid as f64;
        best = best.min(ru_objective(losses, w, alpha, t));
    }
    best
}

/// `CVaR_α` of `N(m, s²)`.
pub fn gaussian_cvar(m: f64, s: f64, alpha: f64) -> f64 {
    assert!((alpha - 0.05).abs() < 1e-15, "oracle only tabulated at α = 0.05");
    let pdf = (-0.5 * Z95 * Z95).exp() / (2.0 * std::f64::consts::PI).sqrt();
    m + s * pdf / alpha
}

/// Rows of i.i.d. `N(mu, diag(vol²))` returns.
pub fn iid_series(n: usize, mu: &[f64], vol: &[f64], seed: u64) -> ReturnSeries {
    let mut rng = seed::rng(seed, &[]);
    let mut data = Vec::with_capacity(n * mu.len());
    for _ in 0..n {
        for (m, v) in mu.iter().zip(vol) {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(m + v * z);
        }
    }
    ReturnSeries::from_flat(data, mu.len(), Fold::Validation).unwrap()
}

/// Random weights on the simplex with roughly a fifth of the entries zeroed.
pub fn random_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() }).collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.into_iter().map(|v| v / s).collect();
        }
    }
}

/// Reduced robust constraint value at `x = (θ, 1 − θ)` by breakpoint scan.
pub fn robust_value_2d(sample: &WeightedSample, theta: f64, delta: f64, alpha: f64) -> f64 {
    let x = [theta, 1.0 - theta];
    let losses = sample.series().losses(&x).unwrap();
    let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
    ru_breakpoints(&losses, sample.weights(), alpha) + delta / alpha * norm
}

/// Best `c·x` over a `step`-spaced sweep of `θ ∈ [0, 1]`; `None` when nothing fits.
pub fn grid_oracle_2d(sample: &WeightedSample, delta: f64, alpha: f64, gamma: f64, c: &[f64], step: f64) -> Option<f64> {
    let count = (1.0 / step).round() as usize;
    (0..=count)
        .map(|k| k as f64 / count as f64)
        .filter(|&th| robust_value_2d(sample, th, delta, alpha) <= gamma)
        .map(|th| c[0] * th + c[1] * (1.0 - th))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
}

/// A d = 2 instance whose budget cuts the segment strictly inside.
pub fn d2_instance(seed: u64) -> (WeightedSample, f64, f64) {
    let n = 20 + (seed % 21) as usize;
    let s = iid_series(n, &[0.6, 0.1], &[1.5, 0.4], seed);
    let w = if seed % 2 == 0 {
        WeightedSample::uniform(s)
    } else {
        let masses = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        WeightedSample::from_masses(s, masses).unwrap()
    };
    let delta = [0.0, 0.01, 0.05, 0.2][(seed % 4) as usize];
    let lo = (0..=100).map(|k| robust_value_2d(&w, k as f64 / 100.0, delta, 0.1)).fold(f64::INFINITY, f64::min);
    let at_best = robust_value_2d(&w, 1.0, delta, 0.1);
    (w, delta, lo + 0.5 * (at_best - lo).max(0.0) + 1e-3)
}

/// Sample mean, variance and lag-1 autocorrelation of one column.
pub fn column_moments(s: &ReturnSeries, j: usize) -> (f64, f64, f64) {
    let v: Vec<f64> = s.rows().map(|r| r[j]).collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let cov1 = v.windows(2).map(|p| (p[0] - m) * (p[1] - m)).sum::<f64>() / n;
    (m, var, cov1 / var)
}
