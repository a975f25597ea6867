//! Browser demo: three small operations exposed to `www/index.html`. Each
//! returns a JSON string so the page needs no extra glue.

use rnhedge::dlv::{calls_from_dlv, dlv_from_calls, static_arbitrage_report, DlvSurface};
use rnhedge::market::CostSpec;
use rnhedge::measure::{binomial_oracle, bs_memm_density, relative_entropy, train_statarb, StatArbConfig};
use rnhedge::policy::{Arch, Dataset, TrainConfig};
use rnhedge::simulators::{simulate_bs, BinomialParams, BsParams};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Optimal position and `g` of the one-period tree as the cost rises from 0
/// to `gamma_max`.
pub fn binomial_curve(u: f64, d: f64, p: f64, lambda: f64, gamma_max: f64, n: usize) -> rnhedge::Result<Value> {
    let n = n.clamp(2, 400);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let gamma = gamma_max * k as f64 / (n - 1) as f64;
        let o = binomial_oracle(&BinomialParams { u, d, p, gamma }, lambda)?;
        rows.push(json!({ "gamma": gamma, "a": o.a_star, "g": o.g, "q_up": o.q_up }));
    }
    Ok(json!({ "drift": u * p + d * (1.0 - p), "rows": rows }))
}

/// Call prices from a skewed DLV surface, optionally with one price bumped,
/// re-encoded to DLV with the static-arbitrage lint.
pub fn dlv_demo(sigma: f64, skew: f64, bump: f64, bump_maturity: usize, bump_strike: usize) -> rnhedge::Result<Value> {
    let maturities: Vec<f64> = [20.0, 40.0, 60.0].iter().map(|d| d / 252.0).collect();
    let strikes: Vec<f64> = (0..7).map(|i| 0.85 + 0.05 * i as f64).collect();
    let values = maturities
        .iter()
        .flat_map(|_| strikes.iter().map(|k| (sigma + skew * (1.0 - k)).max(1e-4)))
        .collect();
    let mut calls = calls_from_dlv(&DlvSurface::new(maturities, strikes, values)?)?;
    let n = calls.strikes.len();
    if bump != 0.0 && bump_maturity < calls.maturities.len() && bump_strike < n {
        calls.prices[bump_maturity * n + bump_strike] += bump;
    }
    let dlv = dlv_from_calls(&calls);
    let finite_or_null = |v: &f64| if v.is_finite() { json!(v) } else { Value::Null };
    Ok(json!({
        "maturities": calls.maturities,
        "strikes": calls.strikes,
        "calls": calls.prices,
        "dlv": dlv.values.iter().map(finite_or_null).collect::<Vec<_>>(),
        "violations": static_arbitrage_report(&calls),
    }))
}

/// Train a small policy on a Black-Scholes world and compare the learned
/// path weights with the analytic density.
pub fn bs_reweight(mu: f64, sigma: f64, n_paths: usize, epochs: usize, seed: u64) -> rnhedge::Result<Value> {
    let n_steps = 10;
    let ps = simulate_bs(&BsParams {
        mu,
        sigma_realized: sigma,
        sigma_implied: None,
        n_steps,
        dt: 1.0 / 252.0,
        n_paths: n_paths.clamp(100, 20_000),
        seed,
        option_tenor_steps: None,
    })?;
    let cfg = StatArbConfig {
        arch: Arch::Feedforward { hidden: vec![16, 16] },
        train: TrainConfig {
            learning_rate: 1e-2,
            lr_final: Some(1e-4),
            epochs: epochs.clamp(1, 20),
            seed,
            ..TrainConfig::default()
        },
        ..StatArbConfig::default()
    };
    let cost = CostSpec::zero(n_steps, 1);
    let res = train_statarb(&Dataset::new(&ps), None, &cost, &cfg, |_, _| Ok(()))?;
    let w = rnhedge::measure::measure_weights(&res.train_gains, None)?;
    let horizon = ps.horizon_years();
    let analytic: Vec<f64> = (0..ps.n_paths)
        .map(|p| bs_memm_density(ps.spot_at(p, n_steps), mu, sigma, horizon))
        .collect();
    let sample: Vec<Value> = (0..ps.n_paths.min(400))
        .map(|p| json!([ps.spot_at(p, n_steps), w.q[p] * ps.n_paths as f64, analytic[p]]))
        .collect();
    Ok(json!({
        "rel_entropy": relative_entropy(&w.q, None),
        "target": mu * mu * horizon / (2.0 * sigma * sigma),
        "ess": w.ess,
        "points": sample,
    }))
}

#[wasm_bindgen(js_name = binomialCurve)]
pub fn binomial_curve_js(u: f64, d: f64, p: f64, lambda: f64, gamma_max: f64, n: usize) -> Result<String, JsError> {
    binomial_curve(u, d, p, lambda, gamma_max, n).map(|v| v.to_string()).map_err(err)
}

#[wasm_bindgen(js_name = dlvDemo)]
pub fn dlv_demo_js(sigma: f64, skew: f64, bump: f64, bump_maturity: usize, bump_strike: usize) -> Result<String, JsError> {
    dlv_demo(sigma, skew, bump, bump_maturity, bump_strike).map(|v| v.to_string()).map_err(err)
}

#[wasm_bindgen(js_name = bsReweight)]
pub fn bs_reweight_js(mu: f64, sigma: f64, n_paths: usize, epochs: usize, seed: u64) -> Result<String, JsError> {
    bs_reweight(mu, sigma, n_paths, epochs, seed).map(|v| v.to_string()).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_hits_zero_inside_the_band() {
        let v = binomial_curve(0.1, -0.1, 0.6, 1.0, 0.05, 11).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert!(rows[0]["a"].as_f64().unwrap() > 2.0);
        // drift 0.02: zero position once gamma >= 0.02
        assert_eq!(rows[10]["a"].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn bumped_cell_shows_as_null() {
        let clean = dlv_demo(0.2, 0.3, 0.0, 0, 0).unwrap();
        assert!(clean["violations"].as_array().unwrap().is_empty());
        let bumped = dlv_demo(0.2, 0.3, 0.01, 2, 3).unwrap();
        assert!(bumped["dlv"][2 * 7 + 3].is_null());
        assert!(!bumped["violations"].as_array().unwrap().is_empty());
    }

    #[test]
    fn reweighting_demo_runs() {
        let v = bs_reweight(0.2, 0.15, 500, 2, 1).unwrap();
        assert!(v["rel_entropy"].as_f64().unwrap() >= 0.0);
        assert_eq!(v["points"].as_array().unwrap().len(), 400);
    }
}
