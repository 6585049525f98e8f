//! `bench`: runs the Monte Carlo comparison and renders its tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use cvar_dro::bench::{emit_report, read_raw_csv, run_benchmark, summarize, write_raw_csv, BenchConfig, Method, ReportFormat};
use cvar_dro::sim::Scenario;

#[derive(Parser)]
#[command(name = "bench", version, about = "Wasserstein-DRO CVaR validator benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replications and write raw.csv, summary.md and summary.csv.
    Run(RunArgs),
    /// Re-aggregate raw.csv from a previous run.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

impl ScenarioArg {
    fn scenarios(self) -> Vec<Scenario> {
        match self {
            ScenarioArg::One => vec![Scenario::NoShift],
            ScenarioArg::Two => vec![Scenario::Shift],
            ScenarioArg::All => vec![Scenario::NoShift, Scenario::Shift],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    scenario: ScenarioArg,
    /// Comma-separated: new, old-ngs, iw-cv, iw-plugin.
    #[arg(long, default_value = "new,old-ngs,iw-cv")]
    methods: String,
    #[arg(long, default_value_t = 100, conflicts_with = "full")]
    reps: u64,
    /// Full-scale run (R = 1000).
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let m: Method = tok.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("--methods names no method");
    }
    Ok(out)
}

fn load_config(path: Option<&Path>) -> Result<BenchConfig> {
    match path {
        None => Ok(BenchConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            BenchConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    let cfg = load_config(args.config.as_deref())?;
    let reps = if args.full { 1000 } else { args.reps };
    let workers = args.parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let scenarios = args.scenario.scenarios();

    let start = Instant::now();
    let bench = run_benchmark(&cfg, reps, &methods, &scenarios, args.seed, workers)?;
    log::info!("{} replications in {:.1} s", bench.results.len(), start.elapsed().as_secs_f64());

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let raw = fs::File::create(args.out.join("raw.csv"))?;
    write_raw_csv(&bench.results, raw)?;
    let summary = summarize(&bench.results)?;
    let md = emit_report(&summary, ReportFormat::Markdown)?;
    fs::write(args.out.join("summary.md"), &md)?;
    fs::write(args.out.join("summary.csv"), emit_report(&summary, ReportFormat::Csv)?)?;
    fs::write(args.out.join("config.toml"), cfg.to_toml()?)?;

    print!("{md}");
    let failed = bench.failures();
    if failed > 0 {
        eprintln!("{failed} replication(s) failed and were excluded");
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let path = args.input.join("raw.csv");
    let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let results = read_raw_csv(file)?;
    let format = match args.format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
    };
    print!("{}", emit_report(&summarize(&results)?, format)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    }
}
