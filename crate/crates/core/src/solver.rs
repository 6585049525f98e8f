//! Phase I: candidate portfolios from the Wasserstein–CVaR reformulation.
//!
//! For a fixed allocation `x` the tightest auxiliary variables of the conic
//! set are `v = ‖x‖₂`, `r = γ − t` and `z_i = (ℓ_i − t)₊`, so membership
//! reduces to the scalar condition
//!
//! ```text
//! g(x) = CVaR_w(ℓ(x)) + (δ/α)‖x‖₂ − γ ≤ 0.
//! ```
//!
//! `g` is convex on the simplex. We minimize `c·x + ρ·g(x)₊` by projected
//! subgradient descent with normalized steps `η₀/√k`, keep the best feasible
//! iterate, and certify it against the explicit constraint set afterwards.
//! Subgradients of `g` also give a lower bound on `min g`, which certifies
//! infeasibility when it turns positive.

use std::fmt::Write as _;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{cvar_of_losses, losses_into, tail_threshold, tail_threshold_above, PortfolioWeights, WeightedSample};

/// Tolerance for the post-hoc membership check.
pub const CERT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub iterations: usize,
    pub eta0: f64,
    /// `ρ = penalty_factor · ‖c‖₂`.
    pub penalty_factor: f64,
    /// Bisection steps of the final line search toward the best vertex.
    pub polish_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { iterations: 5000, eta0: 0.1, penalty_factor: 100.0, polish_steps: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ReformulationSolution {
    pub x: Vec<f64>,
    pub v: f64,
    pub r: f64,
    pub z: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    /// Constraint value `g(x)` at the returned point.
    pub constraint: f64,
    /// Best certified lower bound on `min_x g(x)` over the simplex.
    pub lower_bound: f64,
    pub iterations: usize,
}

impl ReformulationSolution {
    /// Checks every inequality of the conic set at `(x, v, r, z)`.
    pub fn certify(&self, sample: &WeightedSample, delta: f64, alpha: f64, gamma: f64, tol: f64) -> Result<(), String> {
        let s = sample.series();
        let w = sample.weights();
        let sum_x: f64 = self.x.iter().sum();
        if (sum_x - 1.0).abs() > tol || self.x.iter().any(|v| *v < -tol) {
            return Err(format!("x leaves the simplex (Σx = {sum_x})"));
        }
        let budget = delta * self.v + w.iter().zip(&self.z).map(|(a, b)| a * b).sum::<f64>() - alpha * self.r;
        if budget > tol {
            return Err(format!("δv + Σ w z − αr = {budget:.3e} > tol"));
        }
        for (i, row) in s.rows().enumerate() {
            let ret: f64 = row.iter().zip(&self.x).map(|(a, b)| a * b).sum();
            if self.r > self.z[i] + gamma + ret + tol {
                return Err(format!("row {i}: r > z_i + γ + ξ_i·x"));
            }
        }
        let norm = self.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.v + tol {
            return Err(format!("‖x‖₂ = {norm} > v = {}", self.v));
        }
        if self.v < -tol || self.r < -tol || self.z.iter().any(|z| *z < -tol) {
            return Err("negative auxiliary variable".into());
        }
        Ok(())
    }
}

/// `c = −Σ w_i ξ_i`.
pub fn training_cost_vector(sample: &WeightedSample) -> Vec<f64> {
    let mut c = vec![0.0; sample.d()];
    for (row, w) in sample.series().rows().zip(sample.weights()) {
        c.iter_mut().zip(row).for_each(|(ci, r)| *ci -= w * r);
    }
    c
}

/// Euclidean projection onto `{x ≥ 0, Σx = 1}`.
pub fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
    // Remove rounding drift so Σx = 1 to machine precision.
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Scratch state for repeated evaluations of `g` on one sample.
struct Evaluator<'a> {
    flat: &'a [f64],
    w: &'a [f64],
    d: usize,
    delta: f64,
    alpha: f64,
    gamma: f64,
    losses: Vec<f64>,
    order: Vec<u32>,
    /// Last threshold and search window for the warm-started tail selection.
    warm: Option<(f64, f64)>,
}

impl<'a> Evaluator<'a> {
    fn new(sample: &'a WeightedSample, delta: f64, alpha: f64, gamma: f64) -> Self {
        Self {
            flat: sample.series().as_flat(),
            w: sample.weights(),
            d: sample.d(),
            delta,
            alpha,
            gamma,
            losses: vec![0.0; sample.n()],
            order: Vec::with_capacity(sample.n()),
            warm: None,
        }
    }

    fn threshold(&mut self) -> f64 {
        let n = self.losses.len();
        if let Some((prev, slack)) = self.warm {
            if let Some(t) = tail_threshold_above(&self.losses, self.w, self.alpha, prev - slack, &mut self.order) {
                let crowded = self.order.len() as f64 > 8.0 * self.alpha * n as f64 + 32.0;
                self.warm = Some((t, if crowded { 0.5 * slack } else { slack }));
                return t;
            }
        }
        let t = tail_threshold(&self.losses, self.w, self.alpha, &mut self.order);
        let top = self.losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = match self.warm {
            Some((_, s)) => 2.0 * s,
            None => 0.25 * (top - t) + f64::EPSILON * top.abs(),
        };
        self.warm = Some((t, slack.max(f64::MIN_POSITIVE)));
        t
    }

    /// `(g(x), t)`.
    fn value(&mut self, x: &[f64]) -> (f64, f64) {
        losses_into(self.flat, self.d, x, &mut self.losses);
        let t = self.threshold();
        let tail: f64 = self.losses.iter().zip(self.w).map(|(l, w)| w * (l - t).max(0.0)).sum();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        (t + tail / self.alpha + self.delta / self.alpha * norm - self.gamma, t)
    }

    /// Subgradient of `g` at the point last passed to `value`.
    fn subgradient(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let (mut above, mut at) = (0.0, 0.0);
        for (l, w) in self.losses.iter().zip(self.w) {
            if *l > t {
                above += w;
            } else if *l == t {
                at += w;
            }
        }
        let theta = if at > 0.0 { ((self.alpha - above) / at).clamp(0.0, 1.0) } else { 0.0 };
        out.iter_mut().for_each(|g| *g = 0.0);
        for (i, (l, w)) in self.losses.iter().zip(self.w).enumerate() {
            let coef = if *l > t {
                *w
            } else if *l == t {
                theta * w
            } else {
                continue;
            };
            let row = &self.flat[i * self.d..(i + 1) * self.d];
            out.iter_mut().zip(row).for_each(|(g, r)| *g -= coef * r);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let k = self.delta / self.alpha / norm;
        out.iter_mut().zip(x).for_each(|(g, xi)| *g = *g / self.alpha + k * xi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_params(sample: &WeightedSample, delta: f64, alpha: f64, c: &[f64]) -> Result<()> {
    if !(delta >= 0.0) {
        return Err(Error::OutOfRange { name: "delta", value: delta });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange { name: "alpha", value: alpha });
    }
    if c.len() != sample.d() {
        return Err(Error::DimensionMismatch { expected: sample.d(), got: c.len() });
    }
    Ok(())
}

/// `CVaR_w(−ξ·x) + (δ/α)‖x‖₂ − γ`; nonpositive iff `x` belongs to the robust feasible set.
pub fn robust_constraint(sample: &WeightedSample, x: &[f64], delta: f64, alpha: f64, gamma: f64) -> Result<f64> {
    if x.len() != sample.d() {
        return Err(Error::DimensionMismatch { expected: sample.d(), got: x.len() });
    }
    let mut ev = Evaluator::new(sample, delta, alpha, gamma);
    Ok(ev.value(x).0)
}

/// Minimizes `c·x` over the simplex subject to the weighted robust CVaR constraint.
pub fn solve_reformulation(
    sample: &WeightedSample,
    delta: f64,
    alpha: f64,
    gamma: f64,
    c: &[f64],
    config: &SolverConfig,
) -> Result<ReformulationSolution> {
    check_params(sample, delta, alpha, c)?;
    let d = sample.d();
    let mut ev = Evaluator::new(sample, delta, alpha, gamma);
    let c_norm = dot(c, c).sqrt();
    let rho = config.penalty_factor * if c_norm > 0.0 { c_norm } else { 1.0 };

    let mut x = vec![1.0 / d as f64; d];
    let mut sg = vec![0.0; d];
    let mut step = vec![0.0; d];
    let mut best_feasible: Option<(f64, Vec<f64>)> = None;
    let mut best_penalty = (f64::INFINITY, x.clone());
    let mut lower_bound = f64::NEG_INFINITY;
    let mut iterations = 0;

    for k in 1..=config.iterations {
        iterations = k;
        let (g, t) = ev.value(&x);
        let obj = dot(c, &x);
        if g <= 0.0 && best_feasible.as_ref().is_none_or(|(o, _)| obj < *o) {
            best_feasible = Some((obj, x.clone()));
        }
        let pen = obj + rho * g.max(0.0);
        if pen < best_penalty.0 {
            best_penalty = (pen, x.clone());
        }
        ev.subgradient(&x, t, &mut sg);
        let lb = g + sg.iter().cloned().fold(f64::INFINITY, f64::min) - dot(&sg, &x);
        lower_bound = lower_bound.max(lb);
        if lower_bound > 0.0 {
            break;
        }
        for j in 0..d {
            step[j] = if g > 0.0 { c[j] + rho * sg[j] } else { c[j] };
        }
        let norm = dot(&step, &step).sqrt();
        if norm == 0.0 {
            break;
        }
        let eta = config.eta0 / (k as f64).sqrt() / norm;
        x.iter_mut().zip(&step).for_each(|(xi, s)| *xi -= eta * s);
        project_simplex(&mut x);
    }

    let (status, mut x) = match best_feasible {
        Some((_, xf)) => (SolveStatus::Optimal, xf),
        None if lower_bound > 0.0 => (SolveStatus::Infeasible, best_penalty.1),
        None => (SolveStatus::MaxIter, best_penalty.1),
    };
    if status == SolveStatus::Optimal {
        polish(&mut ev, &mut x, c, config.polish_steps);
    }
    let (constraint, t) = ev.value(&x);
    let r = gamma - t;
    let z = ev.losses.iter().map(|l| (l - t).max(0.0)).collect();
    Ok(ReformulationSolution {
        v: dot(&x, &x).sqrt(),
        objective: dot(c, &x),
        x,
        r,
        z,
        status,
        constraint,
        lower_bound,
        iterations,
    })
}

/// Moves a feasible `x` toward the cheapest vertex as far as feasibility allows.
fn polish(ev: &mut Evaluator<'_>, x: &mut Vec<f64>, c: &[f64], steps: usize) {
    let (best, cbest) = c.iter().enumerate().fold((0, f64::INFINITY), |acc, (j, v)| if *v < acc.1 { (j, *v) } else { acc });
    if cbest >= dot(c, x) {
        return;
    }
    let point = |lam: f64, x: &[f64]| -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| (1.0 - lam) * v).collect();
        y[best] += lam;
        y
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if ev.value(&point(1.0, x)).0 <= 0.0 {
        lo = 1.0;
    } else {
        for _ in 0..steps {
            let mid = 0.5 * (lo + hi);
            if ev.value(&point(mid, x)).0 <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    if lo > 0.0 {
        *x = point(lo, x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Grid { delta: f64 },
    Dirichlet { index: usize },
    /// Produced outside a menu, e.g. a cross-validated re-solve.
    Refit { delta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub x: PortfolioWeights,
    pub provenance: Provenance,
    /// `c·x` under the generating cost vector.
    pub objective: f64,
    pub norm2: f64,
}

impl Candidate {
    pub fn new(x: PortfolioWeights, provenance: Provenance, c: &[f64]) -> Self {
        let objective = x.dot(c);
        let norm2 = x.norm2();
        Self { x, provenance, objective, norm2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MenuConfig {
    pub delta_grid: Vec<f64>,
    pub n_dirichlet: usize,
    pub dirichlet_concentration: f64,
    /// Candidates closer than this in ℓ∞ are merged.
    pub dedup_tol: f64,
}

/// `count` log-spaced radii between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect(),
    }
}

impl Default for MenuConfig {
    fn default() -> Self {
        Self { delta_grid: log_grid(1e-3, 2e-2, 8), n_dirichlet: 8, dirichlet_concentration: 1.0, dedup_tol: 1e-6 }
    }
}

/// Solves one grid radius and wraps the result as a candidate when certified.
pub fn grid_candidate(
    train: &WeightedSample,
    delta: f64,
    alpha: f64,
    gamma: f64,
    c: &[f64],
    config: &SolverConfig,
) -> Result<Option<Candidate>> {
    let sol = solve_reformulation(train, delta, alpha, gamma, c, config)?;
    match sol.status {
        SolveStatus::Optimal => {
            if let Err(why) = sol.certify(train, delta, alpha, gamma, CERT_TOL) {
                log::warn!("radius {delta}: solution failed certification ({why}); skipped");
                return Ok(None);
            }
            let x = PortfolioWeights::new(sol.x)?;
            Ok(Some(Candidate::new(x, Provenance::Grid { delta }, c)))
        }
        status => {
            log::warn!("radius {delta}: {status:?} (g = {:.3e}, bound {:.3e}); skipped", sol.constraint, sol.lower_bound);
            Ok(None)
        }
    }
}

/// Draws `count` portfolios from a symmetric Dirichlet law.
pub fn dirichlet_menu(d: usize, count: usize, concentration: f64, seed: u64) -> Result<Vec<PortfolioWeights>> {
    let gamma = Gamma::new(concentration, 1.0).map_err(|_| Error::OutOfRange { name: "dirichlet_concentration", value: concentration })?;
    (0..count)
        .map(|i| {
            let mut rng = crate::seed::rng(seed, &[crate::seed::tag("dirichlet"), i as u64]);
            let g: Vec<f64> = (0..d).map(|_| gamma.sample(&mut rng)).collect();
            let s: f64 = g.iter().sum();
            PortfolioWeights::new(g.into_iter().map(|v| v / s).collect())
        })
        .collect()
}

/// Grid candidates (infeasible radii skipped) plus a Dirichlet menu, deduplicated.
pub fn generate_candidates(
    train: &WeightedSample,
    menu: &MenuConfig,
    alpha: f64,
    gamma: f64,
    seed: u64,
    solver: &SolverConfig,
) -> Result<Vec<Candidate>> {
    if menu.delta_grid.windows(2).any(|p| p[1] < p[0]) || menu.delta_grid.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Config("delta grid must be nonnegative and sorted ascending".into()));
    }
    let c = training_cost_vector(train);
    let mut out: Vec<Candidate> = Vec::new();
    for &delta in &menu.delta_grid {
        if let Some(cand) = grid_candidate(train, delta, alpha, gamma, &c, solver)? {
            out.push(cand);
        }
    }
    for (index, x) in dirichlet_menu(train.d(), menu.n_dirichlet, menu.dirichlet_concentration, seed)?.into_iter().enumerate() {
        out.push(Candidate::new(x, Provenance::Dirichlet { index }, &c));
    }
    let mut menu_out: Vec<Candidate> = Vec::with_capacity(out.len());
    for cand in out {
        let dup = menu_out.iter().any(|m| {
            m.x.as_slice().iter().zip(cand.x.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < menu.dedup_tol
        });
        if !dup {
            menu_out.push(cand);
        }
    }
    if menu_out.is_empty() {
        return Err(Error::EmptyMenu);
    }
    Ok(menu_out)
}

/// One CSV record per candidate: `id,kind,param,objective,norm2,x_1..x_d`.
pub fn menu_to_csv(menu: &[Candidate]) -> String {
    let d = menu.first().map_or(0, |c| c.x.dim());
    let mut s = String::from("id,kind,param,objective,norm2");
    for j in 1..=d {
        let _ = write!(s, ",x_{j}");
    }
    s.push('\n');
    for (id, c) in menu.iter().enumerate() {
        let (kind, param) = match c.provenance {
            Provenance::Grid { delta } => ("grid", delta),
            Provenance::Dirichlet { index } => ("dirichlet", index as f64),
            Provenance::Refit { delta } => ("refit", delta),
        };
        let _ = write!(s, "{id},{kind},{param},{},{}", c.objective, c.norm2);
        for v in c.x.as_slice() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Unweighted empirical CVaR of `x` on a whole series.
pub fn empirical_cvar(series: &crate::risk::ReturnSeries, x: &PortfolioWeights, alpha: f64) -> Result<f64> {
    let losses = series.losses(x.as_slice())?;
    let w = vec![1.0 / losses.len() as f64; losses.len()];
    Ok(cvar_of_losses(&losses, &w, alpha)?.h_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{Fold, ReturnSeries};
    use proptest::prelude::*;
    use rand::Rng;

    fn gaussianish(n: usize, d: usize, seed: u64) -> ReturnSeries {
        let mut rng = crate::seed::rng(seed, &[]);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| {
                        let u: f64 = (0..4).map(|_| rng.random::<f64>()).sum::<f64>() - 2.0;
                        0.01 * (j + 1) as f64 + 0.1 * (j + 1) as f64 * u
                    })
                    .collect()
            })
            .collect();
        ReturnSeries::from_rows(&rows, Fold::Train).unwrap()
    }

    #[test]
    fn projection_examples() {
        let mut v = vec![0.2, 0.3, 0.5];
        project_simplex(&mut v);
        assert!((v[0] - 0.2).abs() < 1e-15 && (v[2] - 0.5).abs() < 1e-15);
        let mut v = vec![2.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0]);
        let mut v = vec![0.0, 0.0, 0.0];
        project_simplex(&mut v);
        assert!(v.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn cost_vector_examples() {
        let s = ReturnSeries::from_rows(&vec![vec![0.01, 0.02]; 3], Fold::Train).unwrap();
        let c = training_cost_vector(&WeightedSample::uniform(s));
        assert!((c[0] + 0.01).abs() < 1e-15 && (c[1] + 0.02).abs() < 1e-15);

        let s = ReturnSeries::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], Fold::Train).unwrap();
        let c = training_cost_vector(&WeightedSample::new(s, vec![1.0, 0.0]).unwrap());
        assert_eq!(c, vec![-1.0, 0.0]);

        let s = gaussianish(57, 4, 3);
        let mut rng = crate::seed::rng(11, &[]);
        let m: Vec<f64> = (0..57).map(|_| rng.random::<f64>()).collect();
        let ws = WeightedSample::from_masses(s.clone(), m).unwrap();
        let c = training_cost_vector(&ws);
        for j in 0..4 {
            let direct: f64 = -(0..57).map(|i| ws.weights()[i] * s.row(i)[j]).sum::<f64>();
            assert!((c[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_budget_picks_best_mean_vertex() {
        let train = WeightedSample::uniform(gaussianish(300, 4, 1));
        let c = training_cost_vector(&train);
        let sol = solve_reformulation(&train, 0.0, 0.1, 1e6, &c, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let best = c.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((sol.x[best] - 1.0).abs() < 1e-9, "{:?}", sol.x);
    }

    #[test]
    fn impossible_budget_is_certified_infeasible() {
        let train = WeightedSample::uniform(gaussianish(200, 3, 2));
        let c = training_cost_vector(&train);
        let sol = solve_reformulation(&train, 0.01, 0.1, -5.0, &c, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.lower_bound > 0.0);
        assert!(sol.iterations < 5000);
    }

    #[test]
    fn optimal_solutions_are_certified_and_monotone_in_delta() {
        let train = WeightedSample::uniform(gaussianish(400, 5, 7));
        let c = training_cost_vector(&train);
        let ew = PortfolioWeights::uniform(5);
        let gamma = empirical_cvar(train.series(), &ew, 0.1).unwrap() * 1.1;
        let mut prev = f64::NEG_INFINITY;
        for delta in log_grid(1e-3, 2e-2, 10) {
            let sol = solve_reformulation(&train, delta, 0.1, gamma, &c, &SolverConfig::default()).unwrap();
            if sol.status != SolveStatus::Optimal {
                continue;
            }
            sol.certify(&train, delta, 0.1, gamma, CERT_TOL).unwrap();
            assert!(sol.objective >= prev - 1e-5, "objective decreased at δ = {delta}");
            prev = sol.objective;
        }
        assert!(prev.is_finite());
    }

    #[test]
    fn degenerate_menu_and_dirichlet_support() {
        let train = WeightedSample::uniform(gaussianish(200, 3, 4));
        let gamma = 1e3;
        let menu = MenuConfig { delta_grid: vec![0.0], n_dirichlet: 0, ..Default::default() };
        let out = generate_candidates(&train, &menu, 0.1, gamma, 1, &SolverConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0].provenance, Provenance::Grid { delta } if delta == 0.0));

        let draws = dirichlet_menu(6, 5, 1.0, 99).unwrap();
        assert_eq!(draws.len(), 5);
        for x in &draws {
            assert!((x.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(x.as_slice().iter().all(|v| *v >= 0.0));
            let n = x.norm2();
            assert!(n >= 1.0 / 6f64.sqrt() - 1e-12 && n <= 1.0 + 1e-12);
        }
        assert_eq!(draws, dirichlet_menu(6, 5, 1.0, 99).unwrap());
    }

    #[test]
    fn empty_menu_and_bad_grid() {
        let train = WeightedSample::uniform(gaussianish(100, 2, 5));
        let menu = MenuConfig { delta_grid: vec![0.01], n_dirichlet: 0, ..Default::default() };
        assert!(matches!(generate_candidates(&train, &menu, 0.1, -10.0, 1, &SolverConfig::default()), Err(Error::EmptyMenu)));
        let menu = MenuConfig { delta_grid: vec![0.02, 0.01], ..Default::default() };
        assert!(generate_candidates(&train, &menu, 0.1, 1.0, 1, &SolverConfig::default()).is_err());
    }

    #[test]
    fn menu_csv_has_one_row_per_candidate() {
        let menu: Vec<Candidate> = dirichlet_menu(3, 4, 1.0, 1)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, x)| Candidate::new(x, Provenance::Dirichlet { index: i }, &[0.1, 0.2, 0.3]))
            .collect();
        let text = menu_to_csv(&menu);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "id,kind,param,objective,norm2,x_1,x_2,x_3");
        assert!(lines[1].starts_with("0,dirichlet,0,"));
    }

    /// Feasibility of the explicit conic set for fixed `x`, by scanning `r`
    /// over breakpoints and a fine grid with `v = ‖x‖₂` and minimal `z`.
    fn conic_feasible(sample: &WeightedSample, x: &[f64], delta: f64, alpha: f64, gamma: f64) -> bool {
        let rets: Vec<f64> = sample.series().rows().map(|r| dot(r, x)).collect();
        let v = dot(x, x).sqrt();
        let ok = |r: f64| {
            r >= 0.0 && delta * v + rets.iter().zip(sample.weights()).map(|(ret, w)| w * (r - gamma - ret).max(0.0)).sum::<f64>() <= alpha * r
        };
        let mut rs: Vec<f64> = rets.iter().map(|ret| gamma + ret).filter(|r| *r >= 0.0).collect();
        let hi = rs.iter().cloned().fold(gamma.abs() + 1.0, f64::max) * 2.0;
        rs.extend((0..=20_000).map(|k| hi * k as f64 / 20_000.0));
        rs.into_iter().any(ok)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn reduced_constraint_matches_conic_set(
            n in 2usize..=40, d in 1usize..5, seed in 0u64..10_000,
            delta in 0.0f64..0.05, alpha in 0.05f64..0.5, gamma in -0.2f64..0.6,
            raw in prop::collection::vec(0.01f64..1.0, 5),
        ) {
            let s = gaussianish(n, d, seed);
            let mut rng = crate::seed::rng(seed, &[1]);
            let ws = WeightedSample::from_masses(s, (0..n).map(|_| 0.1 + rng.random::<f64>()).collect()).unwrap();
            let tot: f64 = raw[..d].iter().sum();
            let x: Vec<f64> = raw[..d].iter().map(|v| v / tot).collect();
            let g = robust_constraint(&ws, &x, delta, alpha, gamma).unwrap();
            prop_assume!(g.abs() > 1e-6);
            prop_assert_eq!(g <= 0.0, conic_feasible(&ws, &x, delta, alpha, gamma));
        }
    }
}
