//! wasm-bindgen exports for `www/index.html`.
//!
//! Every export returns a JSON string; errors come back as `{"error": …}`.

use cvar_dro::bench::{resolve_gamma, run_replication, BenchConfig, Method, Outcome};
use cvar_dro::risk::cvar_of_losses;
use cvar_dro::sim::Scenario;
use cvar_dro::validator::{analytical_radius, band, validated_upper_bound};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(r: cvar_dro::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

#[derive(Serialize)]
struct CvarOut {
    t_w: f64,
    h_w: f64,
    sigma_w: f64,
}

/// Weighted CVaR of `losses`. Empty `weights` means uniform.
#[wasm_bindgen]
pub fn cvar(losses: Vec<f64>, weights: Vec<f64>, alpha: f64) -> String {
    let w = if weights.is_empty() { vec![1.0 / losses.len().max(1) as f64; losses.len()] } else { weights };
    to_json(cvar_of_losses(&losses, &w, alpha).map(|e| CvarOut { t_w: e.t_w, h_w: e.h_w, sigma_w: e.sigma_w }))
}

#[derive(Serialize)]
struct RadiusOut {
    band: f64,
    delta_star: f64,
    upper_bound: f64,
    feasible: bool,
}

/// Analytical radius and validated bound for one candidate.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn radius(h_w: f64, sigma_w: f64, q_hat: f64, n_eff: f64, gamma: f64, alpha: f64, norm2: f64, delta_min: f64, delta_max: f64) -> String {
    let b = band(q_hat, sigma_w, n_eff);
    let delta_star = analytical_radius(h_w, sigma_w, q_hat, n_eff, gamma, alpha, norm2, delta_min, delta_max);
    let upper_bound = validated_upper_bound(h_w, sigma_w, q_hat, n_eff, delta_star, alpha, norm2);
    to_json(Ok(RadiusOut { band: b, delta_star, upper_bound, feasible: upper_bound <= gamma + 1e-9 }))
}

#[derive(Serialize)]
struct ReplicationOut {
    method: &'static str,
    outcome: &'static str,
    feasible: bool,
    objective: f64,
    test_cvar: f64,
    robust_lhs: f64,
    delta: f64,
    gamma: f64,
    runtime_seconds: f64,
}

/// One simulated replication of `method` (`new`, `old-ngs`, `iw-plugin`, `iw-cv`) under the default config.
#[wasm_bindgen]
pub fn replicate(method: &str, scenario: u8, seed: u32, rep: u32) -> String {
    let run = || -> cvar_dro::Result<ReplicationOut> {
        let method: Method = method.parse()?;
        let scenario = Scenario::from_id(scenario)?;
        let cfg = BenchConfig::default();
        let gamma = resolve_gamma(&cfg, seed as u64)?;
        let r = run_replication(method, scenario, &cfg, gamma, seed as u64, rep as u64)?;
        Ok(ReplicationOut {
            method: r.method.label(),
            outcome: match r.outcome {
                Outcome::Selected => "selected",
                Outcome::Abstained => "abstained",
                Outcome::Failed(_) => "failed",
            },
            feasible: r.feasible,
            objective: r.objective,
            test_cvar: r.test_cvar,
            robust_lhs: r.robust_lhs,
            delta: r.delta_selected,
            gamma: r.gamma,
            runtime_seconds: r.runtime_seconds,
        })
    };
    to_json(run())
}
