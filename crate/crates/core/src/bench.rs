//! Monte Carlo harness: replications, aggregation and report emission.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{PortfolioWeights, ReturnSeries, WeightedSample};
use crate::seed::{derive, tag};
use crate::shift::{compute_weights, fit_ratio_model, normalize_clipped_odds, split_early_late, RatioConfig, RatioModel};
use crate::sim::{calibrate_gamma, make_scenario, Scenario, ScenarioConfig};
use crate::solver::{empirical_cvar, generate_candidates, grid_candidate, training_cost_vector, MenuConfig, SolverConfig};
use crate::validator::{
    iw_cv_select, iw_plugin_select, old_ngs_validate, validate_and_select, CvConfig, ValidationReport, ValidatorConfig, ValidatorParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    New,
    OldNgs,
    IwCv,
    IwPlugin,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::New, Method::OldNgs, Method::IwCv, Method::IwPlugin];

    /// Command-line spelling.
    pub fn key(self) -> &'static str {
        match self {
            Method::New => "new",
            Method::OldNgs => "old-ngs",
            Method::IwCv => "iw-cv",
            Method::IwPlugin => "iw-plugin",
        }
    }

    /// Table label.
    pub fn label(self) -> &'static str {
        match self {
            Method::New => "NEW",
            Method::OldNgs => "OLD-NGS",
            Method::IwCv => "IW-CV",
            Method::IwPlugin => "IW-plugin",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.key().eq_ignore_ascii_case(s.trim()) || m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Every tunable of the benchmark in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenario: ScenarioConfig,
    pub ratio: RatioConfig,
    pub validator: ValidatorConfig,
    pub menu: MenuConfig,
    pub solver: SolverConfig,
    pub cv: CvConfig,
    /// Training weights are `(1 − blend)·uniform + blend·ratio`.
    pub train_weight_blend: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            ratio: RatioConfig::default(),
            validator: ValidatorConfig::default(),
            menu: MenuConfig::default(),
            solver: SolverConfig::default(),
            cv: CvConfig::default(),
            train_weight_blend: 0.5,
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.validator.validate()?;
        if !(0.0..=1.0).contains(&self.train_weight_blend) {
            return Err(Error::Config(format!("train_weight_blend = {} outside [0, 1]", self.train_weight_blend)));
        }
        if self.cv.folds < 2 {
            return Err(Error::Config("cv.folds must be at least 2".into()));
        }
        Ok(())
    }

    fn params(&self, gamma: f64, seed: u64) -> ValidatorParams {
        ValidatorParams { alpha: self.scenario.alpha, beta: self.scenario.beta, gamma, seed, config: self.validator.clone() }
    }
}

/// Risk budget from one scenario-1 training draw, or the configured value.
pub fn resolve_gamma(cfg: &BenchConfig, master: u64) -> Result<f64> {
    if let Some(g) = cfg.scenario.gamma {
        return Ok(g);
    }
    let folds = make_scenario(Scenario::NoShift, &cfg.scenario, derive(master, &[tag("gamma")]))?;
    calibrate_gamma(&folds.train, cfg.scenario.alpha, cfg.scenario.gamma_margin)
}

/// Validation weights, blended training weights and the fitted model.
pub fn shift_weights(
    val: &ReturnSeries,
    train: &ReturnSeries,
    ratio: &RatioConfig,
    blend: f64,
) -> Result<(WeightedSample, WeightedSample, RatioModel)> {
    let model = fit_on(val, ratio)?;
    let val_w = compute_weights(&model, val)?;
    let train_w = blended_training_weights(&model, train, blend)?;
    Ok((val_w, train_w, model))
}

fn fit_on(series: &ReturnSeries, ratio: &RatioConfig) -> Result<RatioModel> {
    let (early, late) = split_early_late(series, ratio.recent_fraction)?;
    fit_ratio_model(&early, &late, ratio)
}

/// Training rows scored by the validation model and mixed with uniform mass.
pub fn blended_training_weights(model: &RatioModel, train: &ReturnSeries, blend: f64) -> Result<WeightedSample> {
    let n = train.n() as f64;
    let ratio = normalize_clipped_odds(&model.raw_odds(train)?, model.clip_lo, model.clip_hi)?;
    let w = ratio.into_iter().map(|r| (1.0 - blend) / n + blend * r).collect();
    WeightedSample::from_masses(train.clone(), w)
}

/// `series` without the rows in `hole`.
fn excise(series: &ReturnSeries, hole: &Range<usize>) -> Result<ReturnSeries> {
    let n = series.n();
    match (hole.start == 0, hole.end >= n) {
        (true, true) => Err(Error::WindowTooShort("fold covers the whole series".into())),
        (true, false) => series.slice(hole.end..n),
        (false, true) => series.slice(0..hole.start),
        (false, false) => series.slice(0..hole.start)?.concat(&series.slice(hole.end..n)?),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Selected,
    Abstained,
    Failed(String),
}

impl Outcome {
    fn as_str(&self) -> &'static str {
        match self {
            Outcome::Selected => "selected",
            Outcome::Abstained => "abstained",
            Outcome::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub method: Method,
    pub scenario: u8,
    pub rep: u64,
    pub outcome: Outcome,
    /// Test robust LHS ≤ γ; false unless a portfolio was selected.
    pub feasible: bool,
    /// `c·x` with `c` the unweighted negative training mean.
    pub objective: f64,
    pub test_cvar: f64,
    pub robust_lhs: f64,
    pub delta_selected: f64,
    pub norm2: f64,
    pub gamma: f64,
    pub runtime_seconds: f64,
}

impl ReplicationResult {
    pub fn abstained(&self) -> bool {
        self.outcome == Outcome::Abstained
    }

    pub fn selected(&self) -> bool {
        self.outcome == Outcome::Selected
    }

    fn empty(method: Method, scenario: u8, rep: u64, gamma: f64, outcome: Outcome) -> Self {
        Self {
            method,
            scenario,
            rep,
            outcome,
            feasible: false,
            objective: f64::NAN,
            test_cvar: f64::NAN,
            robust_lhs: f64::NAN,
            delta_selected: f64::NAN,
            norm2: f64::NAN,
            gamma,
            runtime_seconds: f64::NAN,
        }
    }

    /// Equality ignoring the runtime column.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.method == other.method
            && self.scenario == other.scenario
            && self.rep == other.rep
            && self.outcome == other.outcome
            && self.feasible == other.feasible
            && eq(self.objective, other.objective)
            && eq(self.test_cvar, other.test_cvar)
            && eq(self.robust_lhs, other.robust_lhs)
            && eq(self.delta_selected, other.delta_selected)
            && eq(self.norm2, other.norm2)
            && eq(self.gamma, other.gamma)
    }
}

/// Runs one method on one simulated replication.
pub fn run_replication(method: Method, scenario: Scenario, cfg: &BenchConfig, gamma: f64, master: u64, rep: u64) -> Result<ReplicationResult> {
    let sid = scenario.id() as u64;
    let folds = make_scenario(scenario, &cfg.scenario, derive(master, &[tag("data"), sid, rep]))?;
    let menu_seed = derive(master, &[tag("menu"), sid, rep]);
    let params = cfg.params(gamma, derive(master, &[tag(method.key()), sid, rep]));
    let alpha = cfg.scenario.alpha;

    let start = Instant::now();
    let picked: Option<(PortfolioWeights, f64)> = match method {
        Method::New | Method::IwPlugin => {
            let (val_w, train_w, _) = shift_weights(&folds.val, &folds.train, &cfg.ratio, cfg.train_weight_blend)?;
            let menu = generate_candidates(&train_w, &cfg.menu, alpha, gamma, menu_seed, &cfg.solver)?;
            let report = if method == Method::New {
                validate_and_select(&menu, &val_w, &params)?
            } else {
                iw_plugin_select(&menu, &val_w, &params)?
            };
            pick(&report, &menu)
        }
        Method::OldNgs => {
            let train_w = WeightedSample::uniform(folds.train.clone());
            let menu = generate_candidates(&train_w, &cfg.menu, alpha, gamma, menu_seed, &cfg.solver)?;
            pick(&old_ngs_validate(&menu, &folds.val, &params)?, &menu)
        }
        Method::IwCv => {
            let (val_w, full_train, _) = shift_weights(&folds.val, &folds.train, &cfg.ratio, cfg.train_weight_blend)?;
            let full_c = training_cost_vector(&full_train);
            let mut cache: Option<(Range<usize>, WeightedSample, Vec<f64>)> = None;
            let build = |delta: f64, fold: Option<Range<usize>>| {
                let Some(fold) = fold else {
                    return grid_candidate(&full_train, delta, alpha, gamma, &full_c, &cfg.solver);
                };
                if cache.as_ref().is_none_or(|(r, _, _)| *r != fold) {
                    let model = fit_on(&excise(&folds.val, &fold)?, &cfg.ratio)?;
                    let tw = blended_training_weights(&model, &folds.train, cfg.train_weight_blend)?;
                    let c = training_cost_vector(&tw);
                    cache = Some((fold, tw, c));
                }
                let (_, tw, c) = cache.as_ref().expect("cache filled above");
                grid_candidate(tw, delta, alpha, gamma, c, &cfg.solver)
            };
            let out = iw_cv_select(build, &val_w, &cfg.menu.delta_grid, &cfg.cv, &params)?;
            match (out.report.selected(), out.candidate) {
                (Some((_, delta)), Some(c)) => Some((c.x, delta)),
                _ => None,
            }
        }
    };
    let runtime = start.elapsed().as_secs_f64();

    let Some((x, delta)) = picked else {
        let mut r = ReplicationResult::empty(method, scenario.id(), rep, gamma, Outcome::Abstained);
        r.runtime_seconds = runtime;
        return Ok(r);
    };
    let c = training_cost_vector(&WeightedSample::uniform(folds.train.clone()));
    let test_cvar = empirical_cvar(&folds.test, &x, alpha)?;
    let norm2 = x.norm2();
    let robust_lhs = test_cvar + delta / alpha * norm2;
    Ok(ReplicationResult {
        method,
        scenario: scenario.id(),
        rep,
        outcome: Outcome::Selected,
        feasible: robust_lhs <= gamma,
        objective: x.dot(&c),
        test_cvar,
        robust_lhs,
        delta_selected: delta,
        norm2,
        gamma,
        runtime_seconds: runtime,
    })
}

fn pick(report: &ValidationReport, menu: &[crate::solver::Candidate]) -> Option<(PortfolioWeights, f64)> {
    report.selected().map(|(id, delta)| (menu[id].x.clone(), delta))
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub gamma: f64,
    /// Sorted by `(method, scenario, rep)`.
    pub results: Vec<ReplicationResult>,
}

impl BenchRun {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| matches!(r.outcome, Outcome::Failed(_))).count()
    }
}

/// Runs `reps × methods × scenarios` replications on `parallelism` workers.
pub fn run_benchmark(
    cfg: &BenchConfig,
    reps: u64,
    methods: &[Method],
    scenarios: &[Scenario],
    master: u64,
    parallelism: usize,
) -> Result<BenchRun> {
    if methods.is_empty() || scenarios.is_empty() {
        return Err(Error::Config("need at least one method and one scenario".into()));
    }
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    cfg.validate()?;
    let gamma = resolve_gamma(cfg, master)?;
    let mut jobs = Vec::new();
    for &m in methods {
        for &s in scenarios {
            for rep in 0..reps {
                jobs.push((m, s, rep));
            }
        }
    }
    let job = |&(m, s, rep): &(Method, Scenario, u64)| match run_replication(m, s, cfg, gamma, master, rep) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{} scenario {} rep {rep}: {e}", m.label(), s.id());
            ReplicationResult::empty(m, s.id(), rep, gamma, Outcome::Failed(e.to_string()))
        }
    };
    #[cfg(feature = "parallel")]
    let mut results: Vec<ReplicationResult> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(job).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let mut results: Vec<ReplicationResult> = {
        let _ = parallelism;
        jobs.iter().map(job).collect()
    };
    results.sort_by(|a, b| (a.method, a.scenario, a.rep).cmp(&(b.method, b.scenario, b.rep)));
    let run = BenchRun { gamma, results };
    let failed = run.failures();
    if failed > 0 {
        log::warn!("{failed} replication(s) failed and were excluded");
    }
    Ok(run)
}

pub const RAW_HEADER: [&str; 12] = [
    "method",
    "scenario",
    "rep",
    "outcome",
    "feasible",
    "objective",
    "test_cvar",
    "robust_lhs",
    "delta_selected",
    "norm2",
    "gamma",
    "runtime_seconds",
];

/// Per-replication CSV with shortest round-trip float formatting.
pub fn write_raw_csv<W: Write>(results: &[ReplicationResult], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(RAW_HEADER)?;
    for r in results {
        wtr.write_record([
            r.method.key().to_string(),
            r.scenario.to_string(),
            r.rep.to_string(),
            r.outcome.as_str().to_string(),
            r.feasible.to_string(),
            r.objective.to_string(),
            r.test_cvar.to_string(),
            r.robust_lhs.to_string(),
            r.delta_selected.to_string(),
            r.norm2.to_string(),
            r.gamma.to_string(),
            r.runtime_seconds.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_raw_csv<R: Read>(input: R) -> Result<Vec<ReplicationResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RAW_HEADER) {
        return Err(Error::Parse(format!("unexpected raw.csv header: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let outcome = match &rec[3] {
            "selected" => Outcome::Selected,
            "abstained" => Outcome::Abstained,
            "failed" => Outcome::Failed(String::new()),
            o => return Err(Error::Parse(format!("unknown outcome `{o}`"))),
        };
        out.push(ReplicationResult {
            method: rec[0].parse()?,
            scenario: rec[1].parse().map_err(|e| Error::Parse(format!("scenario: {e}")))?,
            rep: rec[2].parse().map_err(|e| Error::Parse(format!("rep: {e}")))?,
            outcome,
            feasible: rec[4].parse().map_err(|e| Error::Parse(format!("feasible: {e}")))?,
            objective: num(&rec[5])?,
            test_cvar: num(&rec[6])?,
            robust_lhs: num(&rec[7])?,
            delta_selected: num(&rec[8])?,
            norm2: num(&rec[9])?,
            gamma: num(&rec[10])?,
            runtime_seconds: num(&rec[11])?,
        });
    }
    Ok(out)
}

/// Aggregates for one `(method, scenario)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub scenario: u8,
    /// Replications attempted, failures included.
    pub reps: usize,
    pub failed: usize,
    pub abstention_rate: f64,
    /// Means over replications that selected a portfolio.
    pub feasibility: f64,
    pub objective: f64,
    pub test_cvar: f64,
    pub robust_lhs: f64,
    pub delta: f64,
    /// Median over completed (selected or abstained) replications.
    pub runtime_median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub gamma: f64,
    pub rows: Vec<SummaryRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn summarize(results: &[ReplicationResult]) -> Result<SummaryTable> {
    if results.is_empty() {
        return Err(Error::Config("nothing to summarize".into()));
    }
    let mut keys: Vec<(u8, Method)> = results.iter().map(|r| (r.scenario, r.method)).collect();
    keys.sort();
    keys.dedup();
    let rows = keys
        .into_iter()
        .map(|(scenario, method)| {
            let cell: Vec<&ReplicationResult> = results.iter().filter(|r| r.method == method && r.scenario == scenario).collect();
            let sel: Vec<&&ReplicationResult> = cell.iter().filter(|r| r.selected()).collect();
            let done = cell.iter().filter(|r| !matches!(r.outcome, Outcome::Failed(_))).count();
            SummaryRow {
                method,
                scenario,
                reps: cell.len(),
                failed: cell.len() - done,
                abstention_rate: if done == 0 { f64::NAN } else { cell.iter().filter(|r| r.abstained()).count() as f64 / done as f64 },
                feasibility: mean(sel.iter().map(|r| if r.feasible { 1.0 } else { 0.0 })),
                objective: mean(sel.iter().map(|r| r.objective)),
                test_cvar: mean(sel.iter().map(|r| r.test_cvar)),
                robust_lhs: mean(sel.iter().map(|r| r.robust_lhs)),
                delta: mean(sel.iter().map(|r| r.delta_selected)),
                runtime_median: median(
                    cell.iter().filter(|r| !matches!(r.outcome, Outcome::Failed(_))).map(|r| r.runtime_seconds).collect(),
                ),
            }
        })
        .collect();
    Ok(SummaryTable { gamma: results[0].gamma, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

/// Shared cell formatting so both formats carry the same numbers.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v != 0.0 && v.abs() < 1e-2 {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

pub const SUMMARY_HEADER: [&str; 11] =
    ["scenario", "method", "feas", "objective", "cvar", "lhs", "delta", "runtime_s", "reps", "abstain_rate", "failed"];

fn cells(r: &SummaryRow) -> [String; 8] {
    [
        fmt_num(r.feasibility),
        fmt_num(r.objective),
        fmt_num(r.test_cvar),
        fmt_num(r.robust_lhs),
        fmt_num(r.delta),
        fmt_num(r.runtime_median),
        r.reps.to_string(),
        fmt_num(r.abstention_rate),
    ]
}

pub fn emit_report(summary: &SummaryTable, format: ReportFormat) -> Result<String> {
    if summary.rows.is_empty() {
        return Err(Error::Config("empty summary".into()));
    }
    let mut s = String::new();
    match format {
        ReportFormat::Csv => {
            s.push_str(&SUMMARY_HEADER.join(","));
            s.push('\n');
            for r in &summary.rows {
                let _ = writeln!(s, "{},{},{},{}", r.scenario, r.method.label(), cells(r).join(","), r.failed);
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(s, "# Benchmark summary\n\nRisk budget γ = {}.", fmt_num(summary.gamma));
            let mut scen: Vec<u8> = summary.rows.iter().map(|r| r.scenario).collect();
            scen.dedup();
            for sc in scen {
                let title = match sc {
                    1 => "no shift",
                    2 => "shift",
                    _ => "other",
                };
                let _ = writeln!(s, "\n## Scenario {sc} ({title})\n");
                s.push_str("| Method | Feas. | Obj. | CVaR | LHS | δ | Runtime (s) | R | Abstain | Failed |\n");
                s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
                for r in summary.rows.iter().filter(|r| r.scenario == sc) {
                    let _ = writeln!(s, "| {} | {} | {} |", r.method.label(), cells(r).join(" | "), r.failed);
                }
            }
        }
    }
    Ok(s)
}
