//! Closed-form reference values.

use serde::{Deserialize, Serialize};

use super::entropy_utility;
use crate::simulators::BinomialParams;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialOracle {
    pub a_star: f64,
    pub g: f64,
    /// Reweighted probabilities of the up and down outcomes.
    pub q_up: f64,
    pub q_dn: f64,
    /// Riskless profit is available (`d >= gamma` or `u <= -gamma`); `g = inf`.
    pub classical_arbitrage: bool,
}

/// Optimal single-period position and value in the binomial market with
/// symmetric proportional cost `gamma` and risk aversion `lambda`.
pub fn binomial_oracle(params: &BinomialParams, lambda: f64) -> Result<BinomialOracle> {
    params.validate()?;
    let BinomialParams { u, d, p, gamma } = *params;
    if d >= gamma || u <= -gamma {
        let sign = if d >= gamma { 1.0 } else { -1.0 };
        return Ok(BinomialOracle {
            a_star: sign * f64::INFINITY,
            g: f64::INFINITY,
            q_up: f64::NAN,
            q_dn: f64::NAN,
            classical_arbitrage: true,
        });
    }
    let drift = u * p + d * (1.0 - p);
    let a_star = if drift > gamma {
        (p * (u - gamma) / (-(1.0 - p) * (d - gamma))).ln() / (lambda * (u - d))
    } else if drift < -gamma {
        (p * (u + gamma) / (-(1.0 - p) * (d + gamma))).ln() / (lambda * (u - d))
    } else {
        0.0
    };
    let gain = |x: f64| a_star * x - gamma * a_star.abs();
    let (g_up, g_dn) = (gain(u), gain(d));
    let g = entropy_utility(&[g_up, g_dn], lambda, Some(&[p, 1.0 - p])).max(0.0);
    // exp(-lambda G(a*_lambda)) = exp(-G(a*_1)) by positive homogeneity
    let e_up = p * (-lambda * g_up).exp();
    let e_dn = (1.0 - p) * (-lambda * g_dn).exp();
    Ok(BinomialOracle {
        a_star,
        g,
        q_up: e_up / (e_up + e_dn),
        q_dn: e_dn / (e_up + e_dn),
        classical_arbitrage: false,
    })
}

/// `dQ*/dP` of the minimal entropy martingale measure in the Black–Scholes
/// model, from the terminal spot of a path started at 1.
pub fn bs_memm_density(s_terminal: f64, mu: f64, sigma: f64, horizon: f64) -> f64 {
    let w = (s_terminal.ln() - (mu - 0.5 * sigma * sigma) * horizon) / sigma;
    (-(mu / sigma) * w - mu * mu * horizon / (2.0 * sigma * sigma)).exp()
}

/// `H(Q*|P) = mu^2 T / (2 sigma^2)`.
pub fn bs_memm_relative_entropy(mu: f64, sigma: f64, horizon: f64) -> f64 {
    mu * mu * horizon / (2.0 * sigma * sigma)
}
