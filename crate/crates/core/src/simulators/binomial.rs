use serde::{Deserialize, Serialize};

use super::blocks;
use crate::market::{InstrumentSpec, PathSet};
use crate::rng;
use crate::{Error, Result};

/// One-period model with `H_1 - H_0 in {u, d}` and `P(u) = p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinomialParams {
    pub u: f64,
    pub d: f64,
    pub p: f64,
    /// Symmetric proportional cost.
    #[serde(default)]
    pub gamma: f64,
}

impl BinomialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.u > self.d) {
            return Err(Error::InvalidParam("binomial model needs u > d".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidParam("p must lie in [0, 1]".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParam("gamma must be non-negative".into()));
        }
        Ok(())
    }
}

fn build(n_paths: usize, seed: u64, ups: &[bool], params: &BinomialParams) -> Result<PathSet> {
    let mut spot = Vec::with_capacity(2 * n_paths);
    let mut mids = Vec::with_capacity(n_paths);
    let mut marks = Vec::with_capacity(n_paths);
    for &up in ups {
        let h1 = 1.0 + if up { params.u } else { params.d };
        spot.extend_from_slice(&[1.0, h1]);
        mids.push(1.0);
        marks.push(h1);
    }
    PathSet::new(
        n_paths,
        1,
        1.0,
        seed,
        2,
        spot,
        vec![vec![InstrumentSpec::spot()]],
        mids,
        marks,
    )
}

/// Bernoulli-sampled paths.
pub fn simulate_binomial(params: &BinomialParams, n_paths: usize, seed: u64) -> Result<PathSet> {
    params.validate()?;
    let ups: Vec<bool> = blocks(n_paths, |b, _, count| {
        let mut r = rng::stream(seed, b as u64);
        (0..count).map(|_| rng::uniform(&mut r) < params.p).collect::<Vec<_>>()
    })
    .concat();
    build(n_paths, seed, &ups, params)
}

/// Exact two-path enumeration: the up path with probability `p`, the down path
/// with `1 - p`.
pub fn binomial_tree(params: &BinomialParams) -> Result<PathSet> {
    params.validate()?;
    build(2, 0, &[true, false], params)?.with_probs(vec![params.p, 1.0 - params.p])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64) -> BinomialParams {
        BinomialParams {
            u: 0.1,
            d: -0.1,
            p,
            gamma: 0.0,
        }
    }

    #[test]
    fn certain_up() {
        let ps = simulate_binomial(&params(1.0), 1000, 1).unwrap();
        assert!((0..1000).all(|k| (ps.mark(k, 0, 0) - 1.1).abs() < 1e-15));
    }

    #[test]
    fn up_fraction_matches_p() {
        let n = 100_000;
        let ps = simulate_binomial(&params(0.6), n, 2).unwrap();
        let ups = (0..n).filter(|&k| ps.mark(k, 0, 0) > 1.0).count() as f64 / n as f64;
        let se = (0.6f64 * 0.4 / n as f64).sqrt();
        assert!((ups - 0.6).abs() < 3.0 * se);
    }

    #[test]
    fn symmetric_tree_has_zero_drift() {
        let ps = binomial_tree(&params(0.5)).unwrap();
        let probs = ps.base_probs();
        let drift: f64 = (0..2).map(|k| probs[k] * (ps.mark(k, 0, 0) - ps.mid(k, 0, 0))).sum();
        assert!(drift.abs() < 1e-15);
    }

    #[test]
    fn invalid_order_rejected() {
        let bad = BinomialParams { u: -0.1, d: 0.1, p: 0.5, gamma: 0.0 };
        assert!(binomial_tree(&bad).is_err());
    }
}
