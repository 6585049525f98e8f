use cvar_dro::bench::{
    emit_report, median, read_raw_csv, resolve_gamma, run_benchmark, run_replication, summarize, write_raw_csv, BenchConfig, Method,
    Outcome, ReplicationResult, ReportFormat,
};
use cvar_dro::sim::Scenario;

const DEFAULT_TOML: &str = include_str!("../../../configs/default.toml");

fn raw_bytes(results: &[ReplicationResult]) -> String {
    let mut buf = Vec::new();
    write_raw_csv(results, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn shipped_config_is_the_default() {
    let cfg = BenchConfig::from_toml(DEFAULT_TOML).unwrap();
    assert_eq!(cfg, BenchConfig::default());
    assert_eq!(BenchConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}

#[test]
fn replications_are_reproducible_and_clipped() {
    let cfg = BenchConfig::default();
    let gamma = resolve_gamma(&cfg, 3).unwrap();
    assert_eq!(gamma.to_bits(), resolve_gamma(&cfg, 3).unwrap().to_bits());
    for method in [Method::New, Method::OldNgs, Method::IwPlugin] {
        let a = run_replication(method, Scenario::NoShift, &cfg, gamma, 3, 1).unwrap();
        let b = run_replication(method, Scenario::NoShift, &cfg, gamma, 3, 1).unwrap();
        assert!(a.same_outcome(&b), "{method:?}");
        if a.selected() {
            assert!((1e-3..=2e-2).contains(&a.delta_selected));
            assert!((a.robust_lhs - (a.test_cvar + a.delta_selected / 0.05 * a.norm2)).abs() <= 1e-9);
        }
    }
}

#[test]
fn impossible_budget_abstains() {
    let mut cfg = BenchConfig::default();
    cfg.scenario.gamma = Some(-1e6);
    for method in [Method::New, Method::OldNgs, Method::IwPlugin] {
        for scenario in [Scenario::NoShift, Scenario::Shift] {
            let r = run_replication(method, scenario, &cfg, -1e6, 4, 0).unwrap();
            assert_eq!(r.outcome, Outcome::Abstained, "{method:?} {scenario:?}");
            assert!(!r.feasible);
        }
    }
}

#[test]
fn single_replication_gives_one_row() {
    let run = run_benchmark(&BenchConfig::default(), 1, &[Method::OldNgs], &[Scenario::NoShift], 5, 1).unwrap();
    let csv = raw_bytes(&run.results);
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn empty_method_list_is_rejected() {
    assert!(run_benchmark(&BenchConfig::default(), 1, &[], &[Scenario::NoShift], 5, 1).is_err());
    assert!(run_benchmark(&BenchConfig::default(), 0, &[Method::New], &[Scenario::NoShift], 5, 1).is_err());
}

#[test]
fn parallel_runs_match_serial_and_aggregates_match_raw() {
    let cfg = BenchConfig::default();
    let methods = [Method::New, Method::OldNgs];
    let scen = [Scenario::NoShift, Scenario::Shift];
    let serial = run_benchmark(&cfg, 2, &methods, &scen, 17, 1).unwrap();
    let parallel = run_benchmark(&cfg, 2, &methods, &scen, 17, 3).unwrap();
    assert_eq!(serial.results.len(), 8);
    for (a, b) in serial.results.iter().zip(&parallel.results) {
        assert!(a.same_outcome(b), "{a:?} vs {b:?}");
    }

    let back = read_raw_csv(raw_bytes(&serial.results).as_bytes()).unwrap();
    for (a, b) in serial.results.iter().zip(&back) {
        assert!(a.same_outcome(b) && a.runtime_seconds.to_bits() == b.runtime_seconds.to_bits());
    }

    let table = summarize(&back).unwrap();
    for row in &table.rows {
        let cell: Vec<&ReplicationResult> = back.iter().filter(|r| r.method == row.method && r.scenario == row.scenario).collect();
        let sel: Vec<&&ReplicationResult> = cell.iter().filter(|r| r.outcome == Outcome::Selected).collect();
        let avg = |f: &dyn Fn(&ReplicationResult) -> f64| {
            if sel.is_empty() {
                f64::NAN
            } else {
                sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64
            }
        };
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        assert!(same(row.feasibility, avg(&|r| r.feasible as u8 as f64)));
        assert!(same(row.objective, avg(&|r| r.objective)));
        assert!(same(row.test_cvar, avg(&|r| r.test_cvar)));
        assert!(same(row.robust_lhs, avg(&|r| r.robust_lhs)));
        assert!(same(row.delta, avg(&|r| r.delta_selected)));
        assert!(same(row.runtime_median, median(cell.iter().map(|r| r.runtime_seconds).collect())));
        let abst = cell.iter().filter(|r| r.outcome == Outcome::Abstained).count() as f64 / cell.len() as f64;
        assert!(same(row.abstention_rate, abst));
        assert_eq!(row.reps, 2);
    }
}

/// Cells of every markdown table row, label first.
fn markdown_cells(md: &str) -> Vec<Vec<String>> {
    md.lines()
        .filter(|l| l.starts_with("| ") && !l.starts_with("| Method"))
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
        .collect()
}

#[test]
fn markdown_and_csv_carry_the_same_numbers() {
    let run = run_benchmark(&BenchConfig::default(), 2, &[Method::New, Method::OldNgs], &[Scenario::Shift], 23, 2).unwrap();
    let table = summarize(&run.results).unwrap();
    let md = emit_report(&table, ReportFormat::Markdown).unwrap();
    let csv = emit_report(&table, ReportFormat::Csv).unwrap();
    assert!(md.contains("| Method | Feas. | Obj. | CVaR | LHS | δ | Runtime (s) |"));
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let from_csv: Vec<Vec<String>> =
        rdr.records().map(|r| r.unwrap().iter().skip(1).map(str::to_string).collect()).collect();
    assert_eq!(markdown_cells(&md), from_csv);
    assert_eq!(emit_report(&table, ReportFormat::Markdown).unwrap(), md);
}
