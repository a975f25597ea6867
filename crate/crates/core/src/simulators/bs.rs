use serde::{Deserialize, Serialize};

use super::blocks;
use crate::market::{InstrumentKind, InstrumentSpec, PathSet};
use crate::rng;
use crate::{Error, Result};

/// Zero-rate Black–Scholes call on unit strike, as a function of spot/strike.
/// Non-positive `tau` or `sigma` gives the intrinsic value.
pub fn bs_call_price(spot_over_strike: f64, sigma: f64, tau: f64) -> f64 {
    let s = spot_over_strike;
    if tau <= 0.0 || sigma <= 0.0 {
        return (s - 1.0).max(0.0);
    }
    let v = sigma * tau.sqrt();
    let d1 = s.ln() / v + 0.5 * v;
    let d2 = d1 - v;
    s * rng::norm_cdf(d1) - rng::norm_cdf(d2)
}

/// Put by zero-rate parity.
pub fn bs_put_price(spot_over_strike: f64, sigma: f64, tau: f64) -> f64 {
    bs_call_price(spot_over_strike, sigma, tau) - (spot_over_strike - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsParams {
    pub mu: f64,
    pub sigma_realized: f64,
    #[serde(default)]
    pub sigma_implied: Option<f64>,
    pub n_steps: usize,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Fixed option tenor in steps; by default each option expires at the
    /// horizon. Tenors reaching past the horizon are capped there.
    #[serde(default)]
    pub option_tenor_steps: Option<usize>,
}

impl BsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_realized > 0.0) || !(self.dt > 0.0) || self.n_steps == 0 || self.n_paths == 0 {
            return Err(Error::InvalidParam(
                "BS world needs sigma > 0, dt > 0, at least one step and one path".into(),
            ));
        }
        if let Some(s) = self.sigma_implied {
            if !(s > 0.0) {
                return Err(Error::InvalidParam("implied vol must be positive".into()));
            }
        }
        Ok(())
    }
}

fn spot_paths(params: &BsParams) -> Vec<f64> {
    let m = params.n_steps;
    let drift = (params.mu - 0.5 * params.sigma_realized.powi(2)) * params.dt;
    let vol = params.sigma_realized * params.dt.sqrt();
    blocks(params.n_paths, |b, _first, count| {
        let mut r = rng::stream(params.seed, b as u64);
        let mut out = Vec::with_capacity(count * (m + 1));
        for _ in 0..count {
            let mut log_s = 0.0;
            out.push(1.0);
            out.extend((0..m).map(|_| {
                log_s += drift + vol * rng::normal(&mut r);
                log_s.exp()
            }));
        }
        out
    })
    .concat()
}

/// Spot-only world: the instrument bought at `t` is the spot, marked at `S_T`.
pub fn simulate_bs(params: &BsParams) -> Result<PathSet> {
    params.validate()?;
    let m = params.n_steps;
    let spot = spot_paths(params);
    let mut mids = Vec::with_capacity(params.n_paths * m);
    let mut marks = Vec::with_capacity(params.n_paths * m);
    for p in 0..params.n_paths {
        let s = &spot[p * (m + 1)..(p + 1) * (m + 1)];
        for t in 0..m {
            mids.push(s[t]);
            marks.push(s[m]);
        }
    }
    PathSet::new(
        params.n_paths,
        m,
        params.dt,
        params.seed,
        m + 1,
        spot,
        vec![vec![InstrumentSpec::spot()]; m],
        mids,
        marks,
    )
}

/// Spot plus an at-the-money call and put at every step, quoted at the implied
/// vol while spot moves at the realised vol. Options are held to expiry.
pub fn simulate_bs_with_options(params: &BsParams) -> Result<PathSet> {
    params.validate()?;
    let sigma_impl = params
        .sigma_implied
        .ok_or_else(|| Error::InvalidParam("sigma_implied is required for the options world".into()))?;
    let m = params.n_steps;
    if let Some(k) = params.option_tenor_steps {
        if k == 0 || k > m {
            return Err(Error::InvalidParam(format!(
                "option tenor of {k} steps does not fit a {m}-step horizon"
            )));
        }
    }
    let tenor = |t: usize| match params.option_tenor_steps {
        Some(k) => k.min(m - t),
        None => m - t,
    };
    let instruments: Vec<Vec<InstrumentSpec>> = (0..m)
        .map(|t| {
            vec![
                InstrumentSpec::spot(),
                InstrumentSpec::option(InstrumentKind::Call, 1.0, tenor(t)),
                InstrumentSpec::option(InstrumentKind::Put, 1.0, tenor(t)),
            ]
        })
        .collect();
    let quotes: Vec<(f64, f64)> = (0..m)
        .map(|t| {
            let tau = tenor(t) as f64 * params.dt;
            (bs_call_price(1.0, sigma_impl, tau), bs_put_price(1.0, sigma_impl, tau))
        })
        .collect();
    let spot = spot_paths(params);
    let mut mids = Vec::with_capacity(params.n_paths * m * 3);
    let mut marks = Vec::with_capacity(params.n_paths * m * 3);
    for p in 0..params.n_paths {
        let s = &spot[p * (m + 1)..(p + 1) * (m + 1)];
        for t in 0..m {
            let (c, put) = quotes[t];
            mids.extend_from_slice(&[s[t], c, put]);
            for spec in &instruments[t] {
                marks.push(spec.payoff(s, t, m));
            }
        }
    }
    PathSet::new(params.n_paths, m, params.dt, params.seed, m + 1, spot, instruments, mids, marks)
}
