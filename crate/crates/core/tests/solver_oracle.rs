mod common;

use common::{d2_instance, grid_oracle_2d, iid_series, robust_value_2d};
use cvar_dro::risk::{ReturnSeries, WeightedSample};
use cvar_dro::sim::{calibrate_gamma, make_scenario, Scenario, ScenarioConfig};
use cvar_dro::solver::{solve_reformulation, training_cost_vector, SolveStatus, SolverConfig, CERT_TOL};

#[test]
fn two_asset_solutions_match_the_grid_sweep() {
    let cfg = SolverConfig::default();
    for seed in 0..50 {
        let (w, delta, gamma) = d2_instance(seed);
        let c = training_cost_vector(&w);
        let sol = solve_reformulation(&w, delta, 0.1, gamma, &c, &cfg).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
        sol.certify(&w, delta, 0.1, gamma, CERT_TOL).unwrap();
        let want = grid_oracle_2d(&w, delta, 0.1, gamma, &c, 1e-4).expect("oracle found no feasible point");
        assert!((sol.objective - want).abs() <= 1e-4, "seed {seed}: solver {} vs grid {want}", sol.objective);
    }
}

#[test]
fn saa_radius_zero_matches_the_sweep() {
    let cfg = SolverConfig::default();
    for seed in 100..110 {
        let s = iid_series(30, &[0.4, 0.0], &[1.0, 0.3], seed);
        let w = WeightedSample::uniform(s);
        let gamma = 0.5 * (robust_value_2d(&w, 0.0, 0.0, 0.2) + robust_value_2d(&w, 1.0, 0.0, 0.2));
        let c = training_cost_vector(&w);
        let sol = solve_reformulation(&w, 0.0, 0.2, gamma, &c, &cfg).unwrap();
        let want = grid_oracle_2d(&w, 0.0, 0.2, gamma, &c, 1e-4);
        match want {
            Some(v) => assert!((sol.objective - v).abs() <= 1e-4),
            None => assert_eq!(sol.status, SolveStatus::Infeasible),
        }
    }
}

#[test]
fn norm_tends_to_shrink_as_the_radius_grows() {
    let cfg = ScenarioConfig::default();
    let solver = SolverConfig::default();
    let grid = [0.001, 0.005, 0.01, 0.02];
    let mut monotone = 0;
    let mut total = 0;
    for rep in 0..100u64 {
        let folds = make_scenario(Scenario::NoShift, &cfg, 900 + rep).unwrap();
        let gamma = calibrate_gamma(&folds.train, cfg.alpha, cfg.gamma_margin).unwrap();
        let train: ReturnSeries = folds.train;
        let w = WeightedSample::uniform(train);
        let c = training_cost_vector(&w);
        // Feasible radii form a prefix of the grid.
        let norms: Vec<f64> = grid
            .iter()
            .map_while(|&d| {
                let sol = solve_reformulation(&w, d, cfg.alpha, gamma, &c, &solver).unwrap();
                (sol.status == SolveStatus::Optimal).then(|| sol.x.iter().map(|v| v * v).sum::<f64>().sqrt())
            })
            .collect();
        if norms.len() >= 2 {
            total += 1;
            if norms.windows(2).all(|p| p[1] <= p[0] + 1e-6) {
                monotone += 1;
            }
        }
    }
    assert!(total >= 80, "only {total} seeds solved two radii");
    assert!(monotone as f64 >= 0.8 * total as f64, "{monotone}/{total} monotone");
}
