//! Statistical-arbitrage values, the minimal-entropy reweighting and its
//! verification.

mod oracle;
mod statarb;
mod verify;

use serde::{Deserialize, Serialize};

use crate::{stats, Error, Result};

pub use oracle::{binomial_oracle, bs_memm_density, bs_memm_relative_entropy, BinomialOracle};
pub use statarb::{
    g_lambda_ladder, train_ladder, train_statarb, LadderPoint, StatArbConfig, StatArbResult,
};
pub use verify::{verify_no_statarb, BandCell, RetrainCheck, StatArbReport, VerifyConfig};

/// Entropic certainty equivalent `U_lambda(X) = -(1/lambda) log E[exp(-lambda X)]`.
///
/// `lambda = 0` gives the mean and `lambda = inf` the smallest sample with
/// positive weight. Weights default to uniform and are renormalised.
pub fn entropy_utility(x: &[f64], lambda: f64, weights: Option<&[f64]>) -> f64 {
    let w = |k: usize| weights.map_or(1.0, |w| w[k]);
    let total: f64 = (0..x.len()).map(w).sum();
    if lambda == 0.0 {
        return (0..x.len()).map(|k| w(k) * x[k]).sum::<f64>() / total;
    }
    let live = (0..x.len()).filter(|&k| w(k) > 0.0);
    if lambda == f64::INFINITY {
        return live.map(|k| x[k]).fold(f64::INFINITY, f64::min);
    }
    let mx = live.map(|k| -lambda * x[k]).fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = (0..x.len())
        .filter(|&k| w(k) > 0.0)
        .map(|k| w(k) * (-lambda * x[k] - mx).exp())
        .sum();
    -((s / total).ln() + mx) / lambda
}

/// Path probabilities `q* ∝ p e^{-G(a*)}` of the reweighted measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureWeights {
    pub q: Vec<f64>,
    /// `log E_P[e^{-G(a*)}]`.
    pub log_normalizer: f64,
    pub gains: Vec<f64>,
    pub ess: f64,
    pub config_digest: Option<String>,
}

impl MeasureWeights {
    /// Weight quantiles at the given levels.
    pub fn quantiles(&self, levels: &[f64]) -> Vec<f64> {
        let mut s = self.q.clone();
        s.sort_by(f64::total_cmp);
        levels.iter().map(|&l| stats::quantile(&s, l)).collect()
    }
}

/// `base` defaults to equiprobable paths.
pub fn measure_weights(gains: &[f64], base: Option<&[f64]>) -> Result<MeasureWeights> {
    if gains.is_empty() {
        return Err(Error::DegenerateGains);
    }
    if let Some(b) = base {
        if b.len() != gains.len() {
            return Err(Error::Shape("base probabilities must align with gains".into()));
        }
    }
    if gains.iter().any(|g| !g.is_finite()) {
        return Err(Error::DegenerateGains);
    }
    let n = gains.len() as f64;
    let p = |k: usize| base.map_or(1.0 / n, |b| b[k]);
    let mx = (0..gains.len())
        .filter(|&k| p(k) > 0.0)
        .map(|k| -gains[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = (0..gains.len()).map(|k| p(k) * (-gains[k] - mx).exp()).collect();
    let s: f64 = raw.iter().sum();
    if !(s > 0.0) {
        return Err(Error::DegenerateGains);
    }
    let q: Vec<f64> = raw.iter().map(|r| r / s).collect();
    Ok(MeasureWeights {
        ess: stats::ess(&q),
        q,
        log_normalizer: s.ln() + mx,
        gains: gains.to_vec(),
        config_digest: None,
    })
}

/// `H(Q|P) = sum q log(q / p)`; `base` defaults to equiprobable paths.
pub fn relative_entropy(q: &[f64], base: Option<&[f64]>) -> f64 {
    let n = q.len() as f64;
    q.iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(k, &x)| x * (x / base.map_or(1.0 / n, |b| b[k])).ln())
        .sum()
}

/// `(1/lambda) log(1 + eps)` with `eps = loss_tilde / loss_star - 1`: how far
/// the utility of an approximate minimiser can be from the optimum.
pub fn epsilon_bound(loss_tilde: f64, loss_star: f64, lambda: f64) -> Result<f64> {
    if !(loss_star > 0.0) || !(loss_tilde >= loss_star) || !(lambda > 0.0) {
        return Err(Error::InvalidParam(format!(
            "need loss_tilde >= loss_star > 0 and lambda > 0, got {loss_tilde}, {loss_star}, {lambda}"
        )));
    }
    Ok((loss_tilde / loss_star).ln() / lambda)
}
