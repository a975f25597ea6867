//! Searching for statistical arbitrage with a trained policy.

use serde::{Deserialize, Serialize};

use super::entropy_utility;
use crate::market::CostSpec;
use crate::policy::{train, Arch, Dataset, FeatureSpec, PolicyNet, Projection, TrainConfig, TrainReport};
use crate::{stats, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatArbConfig {
    #[serde(default = "Arch::default_feedforward")]
    pub arch: Arch,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Bootstrap resamples for the standard error of `g`.
    #[serde(default = "default_boot")]
    pub n_boot: usize,
}

fn default_boot() -> usize {
    200
}

impl Default for StatArbConfig {
    fn default() -> Self {
        Self {
            arch: Arch::default_feedforward(),
            features: FeatureSpec::default(),
            train: TrainConfig::default(),
            n_boot: default_boot(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StatArbResult {
    pub net: PolicyNet,
    /// `U_lambda(G(a))` on the training set (may be slightly negative).
    pub g_train: f64,
    pub g_val: Option<f64>,
    pub g_val_se: Option<f64>,
    pub train_gains: Vec<f64>,
    pub val_gains: Option<Vec<f64>>,
    pub report: TrainReport,
}

impl StatArbResult {
    /// Out-of-sample estimate when available, in-sample otherwise.
    pub fn g(&self) -> f64 {
        self.g_val.unwrap_or(self.g_train)
    }
}

/// Train a policy maximising `U_lambda(Z + G(a))` with `lambda` taken from
/// `cfg.train.risk_aversion`. `on_eval` is called at every validation point.
pub fn train_statarb<F>(
    data: &Dataset,
    val: Option<&Dataset>,
    cost: &CostSpec,
    cfg: &StatArbConfig,
    on_eval: F,
) -> Result<StatArbResult>
where
    F: FnMut(usize, &PolicyNet) -> Result<()>,
{
    let lambda = cfg.train.risk_aversion;
    let mut net = PolicyNet::new(
        cfg.arch.clone(),
        data.paths,
        cfg.features,
        Projection::for_cost(cost),
        cfg.train.seed,
    )?;
    let report = train(&mut net, data, val, cost, &cfg.train, on_eval)?;
    let (_, train_gains) = data.evaluate(&net, cost, lambda)?;
    let g_train = utility_of(&train_gains, data, lambda);
    let (g_val, g_val_se, val_gains) = match val {
        Some(v) => {
            let (_, g) = v.evaluate(&net, cost, lambda)?;
            let x = with_offset(&g, v);
            let w = normalised(&v.weights);
            let se = stats::bootstrap_se(&x, &w, cfg.n_boot, cfg.train.seed, |x, w| {
                entropy_utility(x, lambda, Some(w))
            });
            (Some(entropy_utility(&x, lambda, Some(&w))), Some(se), Some(g))
        }
        None => (None, None, None),
    };
    Ok(StatArbResult {
        net,
        g_train,
        g_val,
        g_val_se,
        train_gains,
        val_gains,
        report,
    })
}

fn normalised(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn with_offset(g: &[f64], d: &Dataset) -> Vec<f64> {
    match &d.offset {
        Some(z) => g.iter().zip(z).map(|(a, b)| a + b).collect(),
        None => g.to_vec(),
    }
}

fn utility_of(g: &[f64], d: &Dataset, lambda: f64) -> f64 {
    entropy_utility(&with_offset(g, d), lambda, Some(&d.weights))
}

/// `g_lambda` estimates from a common pool of candidate policies: for each
/// `lambda`, the best utility over the candidates' gains and the no-trade
/// policy. Non-negative and non-increasing in `lambda` by construction.
pub fn g_lambda_ladder(candidates: &[Vec<f64>], weights: Option<&[f64]>, lambdas: &[f64]) -> Vec<f64> {
    lambdas
        .iter()
        .map(|&l| {
            candidates
                .iter()
                .map(|g| entropy_utility(g, l, weights))
                .fold(0.0, f64::max)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub lambda: f64,
    pub g: f64,
}

/// Train one policy per finite positive `lambda` and evaluate the ladder on
/// `eval` (the training set when `None`).
pub fn train_ladder(
    data: &Dataset,
    eval: Option<&Dataset>,
    cost: &CostSpec,
    cfg: &StatArbConfig,
    lambdas: &[f64],
) -> Result<Vec<LadderPoint>> {
    if lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidParam("risk aversions must be >= 0".into()));
    }
    let target = eval.unwrap_or(data);
    let mut candidates = Vec::new();
    for &l in lambdas.iter().filter(|l| **l > 0.0 && l.is_finite()) {
        let mut c = cfg.clone();
        c.train.risk_aversion = l;
        let res = train_statarb(data, None, cost, &c, |_, _| Ok(()))?;
        let (_, g) = target.evaluate(&res.net, cost, l)?;
        candidates.push(with_offset(&g, target));
    }
    let g = g_lambda_ladder(&candidates, Some(&target.weights), lambdas);
    Ok(lambdas
        .iter()
        .zip(g)
        .map(|(&lambda, g)| LadderPoint { lambda, g })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{binomial_tree, simulate_bs, BinomialParams, BsParams};

    #[test]
    fn ladder_is_monotone_and_non_negative() {
        let cands = vec![vec![0.5, -0.2, 0.1], vec![2.0, -1.5, 0.3], vec![-0.1, -0.1, -0.1]];
        let lambdas = [0.0, 0.1, 1.0, 5.0, f64::INFINITY];
        let g = g_lambda_ladder(&cands, None, &lambdas);
        assert!(g.windows(2).all(|w| w[0] >= w[1]));
        assert!(g.iter().all(|x| *x >= 0.0));
        assert_eq!(g[4], 0.0);
    }

    #[test]
    fn binomial_policy_learns_oracle_position() {
        let prm = BinomialParams { u: 0.1, d: -0.1, p: 0.6, gamma: 0.0 };
        let ps = binomial_tree(&prm).unwrap();
        let cfg = StatArbConfig {
            arch: Arch::Feedforward { hidden: vec![4] },
            train: TrainConfig {
                learning_rate: 0.05,
                lr_final: Some(1e-5),
                batch_size: 2,
                epochs: 3000,
                ..TrainConfig::default()
            },
            ..StatArbConfig::default()
        };
        let res = train_statarb(&Dataset::new(&ps), None, &CostSpec::zero(1, 1), &cfg, |_, _| Ok(())).unwrap();
        let a = res.net.forward(&ps).unwrap();
        assert!((a.data[0] - 1.5f64.ln() / 0.2).abs() < 1e-3, "{}", a.data[0]);
    }

    #[test]
    fn driftless_world_has_no_statarb() {
        let mk = |seed| {
            simulate_bs(&BsParams {
                mu: 0.0,
                sigma_realized: 0.15,
                sigma_implied: None,
                n_steps: 10,
                dt: 1.0 / 252.0,
                n_paths: 4000,
                seed,
                option_tenor_steps: None,
            })
            .unwrap()
        };
        let (tr, va) = (mk(1), mk(2));
        let cfg = StatArbConfig {
            arch: Arch::Feedforward { hidden: vec![8] },
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 3,
                ..TrainConfig::default()
            },
            ..StatArbConfig::default()
        };
        let res = train_statarb(&Dataset::new(&tr), Some(&Dataset::new(&va)), &CostSpec::zero(10, 1), &cfg, |_, _| Ok(())).unwrap();
        let (g, se) = (res.g_val.unwrap(), res.g_val_se.unwrap());
        assert!(g.abs() < 3.0 * se.max(1e-5), "{g} +- {se}");
    }
}
