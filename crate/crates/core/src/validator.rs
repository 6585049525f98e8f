//! Phase II: block multiplier Gaussian-supremum calibration, the analytical
//! radius, feasibility filtering and least-conservative selection.
//!
//! Also hosts the baselines (uniform-weight i.i.d. validator, importance
//! weighted plug-in, importance weighted cross-validation).

use std::io::Write;
use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{cvar_of_losses, weighted_cvar, CvarEstimate, PortfolioWeights, ReturnSeries, WeightedSample, SIGMA_FLOOR};
use crate::seed;
use crate::solver::Candidate;

/// Slack on `U ≤ γ`.
pub const FEAS_TOL: f64 = 1e-9;

/// Contiguous blocks `B_1..B_K` of length `b` over `0..n`; the tail is dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub block_len: usize,
    pub blocks: usize,
    pub discarded_tail: usize,
}

impl BlockPartition {
    pub fn new(n: usize, block_len: usize) -> Result<Self> {
        if block_len == 0 || block_len > n {
            return Err(Error::Config(format!("block length {block_len} invalid for n = {n}")));
        }
        let blocks = n / block_len;
        Ok(Self { block_len, blocks, discarded_tail: n - blocks * block_len })
    }

    /// `b = round(n^{1/3})`, at least 1.
    pub fn cube_root(n: usize) -> Result<Self> {
        Self::new(n, auto_block_length(n))
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        k * self.block_len..(k + 1) * self.block_len
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.blocks).map(|k| self.range(k))
    }

    pub fn covered(&self) -> usize {
        self.blocks * self.block_len
    }
}

pub fn auto_block_length(n: usize) -> usize {
    ((n as f64).cbrt().round() as usize).max(1)
}

/// Alias of [`weighted_cvar`] kept for the validator's vocabulary.
pub fn candidate_scores(sample: &WeightedSample, x: &PortfolioWeights, alpha: f64) -> Result<CvarEstimate> {
    weighted_cvar(sample, x, alpha)
}

/// `S_k = Σ_{i∈B_k} w_i (φ_i − h_w)`.
pub fn block_sums(partition: &BlockPartition, w: &[f64], scores: &[f64], h_w: f64) -> Result<Vec<f64>> {
    if w.len() != scores.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), got: scores.len() });
    }
    if partition.covered() > w.len() {
        return Err(Error::DimensionMismatch { expected: partition.covered(), got: w.len() });
    }
    Ok(partition.ranges().map(|r| r.map(|i| w[i] * (scores[i] - h_w)).sum()).collect())
}

/// Bootstrap output: the shared critical value and the statistics behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GsCalibration {
    pub q_hat: f64,
    /// `T^(r)` in draw order.
    pub draws: Vec<f64>,
    /// `S_kj`, one inner vector of length `K` per candidate.
    pub block_sums: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Index (0-based) of the `ceil(B(1−β))`-th order statistic.
pub fn quantile_rank(draws: usize, beta: f64) -> usize {
    let k = ((draws as f64) * (1.0 - beta) - 1e-9).ceil() as usize;
    k.clamp(1, draws) - 1
}

/// Block multiplier quantile of `T = max_j √n_eff Σ_k ε_k S_kj / σ_j`.
///
/// Draw `r` uses its own generator seeded from `(seed, r)`, so the result does
/// not depend on how the draws are scheduled.
pub fn gs_quantile(sums: &[Vec<f64>], sigma: &[f64], n_eff: f64, draws: usize, beta: f64, seed: u64) -> Result<GsCalibration> {
    let p = sums.len();
    if p == 0 {
        return Err(Error::EmptyMenu);
    }
    if sigma.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: sigma.len() });
    }
    if draws == 0 {
        return Err(Error::OutOfRange { name: "bootstrap_draws", value: 0.0 });
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::OutOfRange { name: "beta", value: beta });
    }
    let k = sums[0].len();
    if sums.iter().any(|s| s.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: sums.iter().map(Vec::len).find(|&l| l != k).unwrap_or(k) });
    }
    // Row-major K × p with the per-candidate scale folded in.
    let root = n_eff.sqrt();
    let mut scaled = vec![0.0; k * p];
    for (j, col) in sums.iter().enumerate() {
        let s = root / sigma[j].max(SIGMA_FLOOR);
        for (kk, v) in col.iter().enumerate() {
            scaled[kk * p + j] = v * s;
        }
    }
    let one = |r: usize| -> f64 {
        let mut rng = seed::rng(seed, &[r as u64]);
        let mut acc = vec![0.0; p];
        for row in scaled.chunks_exact(p) {
            let e: f64 = StandardNormal.sample(&mut rng);
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += e * v);
        }
        acc.into_iter().fold(f64::NEG_INFINITY, f64::max)
    };
    #[cfg(feature = "parallel")]
    let t: Vec<f64> = {
        use rayon::prelude::*;
        (0..draws).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let t: Vec<f64> = (0..draws).map(one).collect();

    let mut sorted = t.clone();
    let idx = quantile_rank(draws, beta);
    let (_, q, _) = sorted.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(GsCalibration { q_hat: *q, draws: t, block_sums: sums.to_vec(), seed })
}

/// `clip(α [γ − h − q̂σ/√n_eff]₊ / ‖x‖₂; δ_min, δ_max)`.
#[allow(clippy::too_many_arguments)]
pub fn analytical_radius(
    h_w: f64,
    sigma_w: f64,
    q_hat: f64,
    n_eff: f64,
    gamma: f64,
    alpha: f64,
    norm2: f64,
    delta_min: f64,
    delta_max: f64,
) -> f64 {
    let slack = gamma - h_w - band(q_hat, sigma_w, n_eff);
    (alpha * slack.max(0.0) / norm2).clamp(delta_min, delta_max)
}

/// `q̂ σ / √n_eff`.
pub fn band(q_hat: f64, sigma_w: f64, n_eff: f64) -> f64 {
    q_hat * sigma_w / n_eff.sqrt()
}

/// `U = h + (δ/α)‖x‖₂ + q̂σ/√n_eff`.
pub fn validated_upper_bound(h_w: f64, sigma_w: f64, q_hat: f64, n_eff: f64, delta: f64, alpha: f64, norm2: f64) -> f64 {
    h_w + delta / alpha * norm2 + band(q_hat, sigma_w, n_eff)
}

/// Knobs shared by every validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    pub delta_min: f64,
    pub delta_max: f64,
    pub bootstrap_draws: usize,
    /// Fixed block length; `round(n^{1/3})` when absent.
    pub block_length: Option<usize>,
    pub n_eff_min: f64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self { delta_min: 1e-3, delta_max: 2e-2, bootstrap_draws: 800, block_length: None, n_eff_min: 30.0 }
    }
}

impl ValidatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min >= 0.0 && self.delta_min <= self.delta_max) {
            return Err(Error::Config(format!("need 0 ≤ delta_min ≤ delta_max, got [{}, {}]", self.delta_min, self.delta_max)));
        }
        if self.bootstrap_draws == 0 {
            return Err(Error::Config("bootstrap_draws must be positive".into()));
        }
        if self.block_length == Some(0) {
            return Err(Error::Config("block_length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Multiplier seed.
    pub seed: u64,
    pub config: ValidatorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainReason {
    EmptyFeasibleSet,
    NEffCollapse,
}

impl AbstainReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AbstainReason::EmptyFeasibleSet => "empty_feasible_set",
            AbstainReason::NEffCollapse => "n_eff_collapse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Selected { id: usize, delta_star: f64 },
    Abstain(AbstainReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    pub id: usize,
    pub t_w: f64,
    pub h_w: f64,
    pub sigma_w: f64,
    pub delta_star: f64,
    pub upper_bound: f64,
    pub feasible: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<CandidateRow>,
    pub q_hat: f64,
    pub n_eff: f64,
    /// 0 when no bootstrap was run.
    pub block_length: usize,
    pub decision: Decision,
}

impl ValidationReport {
    pub fn selected(&self) -> Option<(usize, f64)> {
        match self.decision {
            Decision::Selected { id, delta_star } => Some((id, delta_star)),
            Decision::Abstain(_) => None,
        }
    }

    /// One `candidate` record per row followed by a `decision` record.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "kind", "id", "t_w", "h_w", "sigma_w", "delta_star", "upper_bound", "feasible", "objective", "q_hat", "n_eff", "outcome",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                "candidate".to_string(),
                r.id.to_string(),
                r.t_w.to_string(),
                r.h_w.to_string(),
                r.sigma_w.to_string(),
                r.delta_star.to_string(),
                r.upper_bound.to_string(),
                r.feasible.to_string(),
                r.objective.to_string(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        let (id, delta, outcome) = match self.decision {
            Decision::Selected { id, delta_star } => (id.to_string(), delta_star.to_string(), "selected".to_string()),
            Decision::Abstain(r) => (String::new(), String::new(), format!("abstain:{}", r.as_str())),
        };
        let blank = String::new;
        wtr.write_record([
            "decision".to_string(),
            id,
            blank(),
            blank(),
            blank(),
            delta,
            blank(),
            blank(),
            blank(),
            self.q_hat.to_string(),
            self.n_eff.to_string(),
            outcome,
        ])?;
        wtr.flush()?;
        Ok(())
    }
}

/// Exhaustive argmin of `δ*` over feasible rows, ties broken by objective.
fn select(rows: &[CandidateRow], n_eff: f64, n_eff_min: f64) -> Decision {
    if n_eff < n_eff_min {
        return Decision::Abstain(AbstainReason::NEffCollapse);
    }
    rows.iter()
        .filter(|r| r.feasible)
        .min_by(|a, b| a.delta_star.total_cmp(&b.delta_star).then(a.objective.total_cmp(&b.objective)).then(a.id.cmp(&b.id)))
        .map_or(Decision::Abstain(AbstainReason::EmptyFeasibleSet), |r| Decision::Selected { id: r.id, delta_star: r.delta_star })
}

fn check_menu(menu: &[Candidate], val: &WeightedSample, params: &ValidatorParams) -> Result<()> {
    params.config.validate()?;
    if menu.is_empty() {
        return Err(Error::EmptyMenu);
    }
    if let Some(c) = menu.iter().find(|c| c.x.dim() != val.d()) {
        return Err(Error::DimensionMismatch { expected: val.d(), got: c.x.dim() });
    }
    Ok(())
}

fn rows_from(menu: &[Candidate], est: &[CvarEstimate], q_hat: f64, n_eff: f64, params: &ValidatorParams) -> Vec<CandidateRow> {
    let cfg = &params.config;
    menu.iter()
        .zip(est)
        .enumerate()
        .map(|(id, (c, e))| {
            let delta_star =
                analytical_radius(e.h_w, e.sigma_w, q_hat, n_eff, params.gamma, params.alpha, c.norm2, cfg.delta_min, cfg.delta_max);
            let upper_bound = validated_upper_bound(e.h_w, e.sigma_w, q_hat, n_eff, delta_star, params.alpha, c.norm2);
            CandidateRow {
                id,
                t_w: e.t_w,
                h_w: e.h_w,
                sigma_w: e.sigma_w,
                delta_star,
                upper_bound,
                feasible: upper_bound <= params.gamma + FEAS_TOL,
                objective: c.objective,
            }
        })
        .collect()
}

/// Shared-quantile validation with an explicit block length.
pub fn validate_with_block(menu: &[Candidate], val: &WeightedSample, params: &ValidatorParams, block_len: usize) -> Result<ValidationReport> {
    check_menu(menu, val, params)?;
    let partition = BlockPartition::new(val.n(), block_len)?;
    let est: Vec<CvarEstimate> = menu.iter().map(|c| candidate_scores(val, &c.x, params.alpha)).collect::<Result<_>>()?;
    let sums: Vec<Vec<f64>> =
        est.iter().map(|e| block_sums(&partition, val.weights(), &e.scores, e.h_w)).collect::<Result<_>>()?;
    let sigma: Vec<f64> = est.iter().map(|e| e.sigma_w).collect();
    let n_eff = val.n_eff();
    let cal = gs_quantile(&sums, &sigma, n_eff, params.config.bootstrap_draws, params.beta, params.seed)?;
    let rows = rows_from(menu, &est, cal.q_hat, n_eff, params);
    let decision = select(&rows, n_eff, params.config.n_eff_min);
    Ok(ValidationReport { rows, q_hat: cal.q_hat, n_eff, block_length: block_len, decision })
}

/// Weighted validation with block multipliers (block length from the config).
pub fn validate_and_select(menu: &[Candidate], val: &WeightedSample, params: &ValidatorParams) -> Result<ValidationReport> {
    let b = params.config.block_length.unwrap_or_else(|| auto_block_length(val.n()));
    validate_with_block(menu, val, params, b)
}

/// Uniform weights and unit blocks.
pub fn old_ngs_validate(menu: &[Candidate], val: &ReturnSeries, params: &ValidatorParams) -> Result<ValidationReport> {
    validate_with_block(menu, &WeightedSample::uniform(val.clone()), params, 1)
}

/// Weighted point estimate with no band: `q̂ = 0`.
pub fn iw_plugin_select(menu: &[Candidate], val: &WeightedSample, params: &ValidatorParams) -> Result<ValidationReport> {
    check_menu(menu, val, params)?;
    let est: Vec<CvarEstimate> = menu.iter().map(|c| candidate_scores(val, &c.x, params.alpha)).collect::<Result<_>>()?;
    let n_eff = val.n_eff();
    let rows = rows_from(menu, &est, 0.0, n_eff, params);
    let decision = select(&rows, n_eff, params.config.n_eff_min);
    Ok(ValidationReport { rows, q_hat: 0.0, n_eff, block_length: 0, decision })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    /// Fall back to the largest radius when none qualifies.
    pub fallback: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, fallback: true }
    }
}

/// `K` contiguous folds over `0..n`; the last absorbs the remainder.
pub fn contiguous_folds(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k < 2 || n < k {
        return Err(Error::Config(format!("cannot cut {n} rows into {k} folds")));
    }
    let size = n / k;
    Ok((0..k).map(|f| f * size..if f + 1 == k { n } else { (f + 1) * size }).collect())
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    /// One row per grid radius: `h_w`, `t_w` are cross-fold means of the held-out
    /// estimates, `upper_bound` the mean held-out robust LHS, `delta_star` the radius.
    pub report: ValidationReport,
    pub candidate: Option<Candidate>,
    pub fell_back: bool,
}

/// Cross-validated radius choice.
///
/// `build(δ, Some(fold))` must return the training solution with `fold` held
/// out of the weight model; `build(δ, None)` the solution on everything.
/// Calls are made fold by fold, each fold sweeping the whole grid, followed by
/// one final call. A `None` candidate counts as a failure on that fold.
pub fn iw_cv_select<F>(
    mut build: F,
    val: &WeightedSample,
    delta_grid: &[f64],
    cv: &CvConfig,
    params: &ValidatorParams,
) -> Result<CvOutcome>
where
    F: FnMut(f64, Option<Range<usize>>) -> Result<Option<Candidate>>,
{
    if delta_grid.is_empty() {
        return Err(Error::Config("empty delta grid".into()));
    }
    if delta_grid.windows(2).any(|p| p[1] < p[0]) || delta_grid.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Config("delta grid must be nonnegative and sorted ascending".into()));
    }
    let folds = contiguous_folds(val.n(), cv.folds)?;
    let p = delta_grid.len();
    let mut lhs = vec![0.0; p];
    let mut h = vec![0.0; p];
    let mut t = vec![0.0; p];
    let mut obj = vec![0.0; p];
    for fold in &folds {
        let held = val.restrict(fold.clone())?;
        for (j, &delta) in delta_grid.iter().enumerate() {
            match build(delta, Some(fold.clone()))? {
                Some(c) => {
                    let losses = held.series().losses(c.x.as_slice())?;
                    let e = cvar_of_losses(&losses, held.weights(), params.alpha)?;
                    lhs[j] += e.h_w + delta / params.alpha * c.norm2;
                    h[j] += e.h_w;
                    t[j] += e.t_w;
                    obj[j] += c.objective;
                }
                None => lhs[j] = f64::INFINITY,
            }
        }
    }
    let kf = folds.len() as f64;
    let rows: Vec<CandidateRow> = (0..p)
        .map(|j| CandidateRow {
            id: j,
            t_w: t[j] / kf,
            h_w: h[j] / kf,
            sigma_w: 0.0,
            delta_star: delta_grid[j],
            upper_bound: lhs[j] / kf,
            feasible: lhs[j] / kf <= params.gamma + FEAS_TOL,
            objective: obj[j] / kf,
        })
        .collect();
    let first = rows.iter().position(|r| r.feasible);
    let (chosen, fell_back) = match first {
        Some(j) => (Some(j), false),
        None if cv.fallback => (Some(p - 1), true),
        None => (None, false),
    };
    let mut report =
        ValidationReport { rows, q_hat: 0.0, n_eff: val.n_eff(), block_length: 0, decision: Decision::Abstain(AbstainReason::EmptyFeasibleSet) };
    let Some(j) = chosen else {
        return Ok(CvOutcome { report, candidate: None, fell_back });
    };
    let delta = delta_grid[j];
    let candidate = build(delta, None)?;
    if candidate.is_some() {
        report.decision = Decision::Selected { id: j, delta_star: delta };
    }
    Ok(CvOutcome { report, candidate, fell_back })
}
