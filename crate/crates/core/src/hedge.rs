//! Deep hedging of a terminal payoff `Z` under the statistical measure or the
//! reweighted measure `Q*`, indifference prices, and the consistency checks
//! between the two.

use serde::{Deserialize, Serialize};

use crate::market::{gains, CostSpec, PathSet};
use crate::measure::{entropy_utility, measure_weights, train_statarb, StatArbConfig};
use crate::policy::{Dataset, PolicyNet};
use crate::{stats, Error, Result};

/// Terminal payoff built from the spot path and instrument marks. Spot-based
/// payoffs refer to the trading horizon `T` with `S_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PortfolioPayoff {
    Cash { amount: f64 },
    Spot { notional: f64 },
    Call { strike: f64, notional: f64 },
    Put { strike: f64, notional: f64 },
    /// Terminal mark `H_T` of instrument `instrument` listed at step `step`.
    Mark { step: usize, instrument: usize, notional: f64 },
    Sum { parts: Vec<PortfolioPayoff> },
}

impl PortfolioPayoff {
    pub fn atm_call(notional: f64) -> Self {
        PortfolioPayoff::Call {
            strike: 1.0,
            notional,
        }
    }

    pub fn evaluate(&self, paths: &PathSet) -> Result<Vec<f64>> {
        let m = paths.n_steps;
        let out: Vec<f64> = match self {
            PortfolioPayoff::Cash { amount } => vec![*amount; paths.n_paths],
            PortfolioPayoff::Spot { notional } => {
                (0..paths.n_paths).map(|p| notional * paths.spot_at(p, m)).collect()
            }
            PortfolioPayoff::Call { strike, notional } => (0..paths.n_paths)
                .map(|p| notional * (paths.spot_at(p, m) - strike).max(0.0))
                .collect(),
            PortfolioPayoff::Put { strike, notional } => (0..paths.n_paths)
                .map(|p| notional * (strike - paths.spot_at(p, m)).max(0.0))
                .collect(),
            PortfolioPayoff::Mark {
                step,
                instrument,
                notional,
            } => {
                if *step >= m || *instrument >= paths.n_instruments() {
                    return Err(Error::InvalidParam(format!(
                        "payoff refers to instrument {instrument} at step {step}"
                    )));
                }
                (0..paths.n_paths)
                    .map(|p| notional * paths.mark(p, *step, *instrument))
                    .collect()
            }
            PortfolioPayoff::Sum { parts } => {
                let mut acc = vec![0.0; paths.n_paths];
                for part in parts {
                    for (a, v) in acc.iter_mut().zip(part.evaluate(paths)?) {
                        *a += v;
                    }
                }
                acc
            }
        };
        if let Some(p) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("payoff is not finite on path {p}")));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureTag {
    P,
    QStar,
}

#[derive(Debug, Clone)]
pub struct HedgeResult {
    pub net: PolicyNet,
    /// `max(U(Z + G(a)), U(Z))` on the evaluation set.
    pub g: f64,
    pub se: f64,
    /// `U(Z + G(a))` per evaluation path, before the no-trade floor.
    pub utility: f64,
    /// `Z + G(a)` per evaluation path.
    pub pnl: Vec<f64>,
    pub measure: MeasureTag,
    pub config_digest: Option<String>,
}

/// A weighted path set with a payoff attached.
#[derive(Debug, Clone)]
pub struct HedgeSet<'a> {
    pub paths: &'a PathSet,
    pub payoff: Vec<f64>,
    /// `None` means the path set's own probabilities.
    pub weights: Option<Vec<f64>>,
}

impl<'a> HedgeSet<'a> {
    pub fn new(paths: &'a PathSet, payoff: Vec<f64>, weights: Option<Vec<f64>>) -> Self {
        Self {
            paths,
            payoff,
            weights,
        }
    }

    fn dataset(&self) -> Result<Dataset<'a>> {
        let d = Dataset::new(self.paths).with_offset(self.payoff.clone())?;
        match &self.weights {
            Some(w) => d.with_weights(w.clone()),
            None => Ok(d),
        }
    }

    fn weights_or_base(&self) -> Vec<f64> {
        let w = self.weights.clone().unwrap_or_else(|| self.paths.base_probs());
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    fn with_payoff(&self, payoff: Vec<f64>) -> Self {
        Self {
            paths: self.paths,
            payoff,
            weights: self.weights.clone(),
        }
    }
}

fn utility_and_se(x: &[f64], w: &[f64], lambda: f64, n_boot: usize, seed: u64) -> (f64, f64) {
    let u = entropy_utility(x, lambda, Some(w));
    let se = stats::bootstrap_se(x, w, n_boot, seed, |x, w| entropy_utility(x, lambda, Some(w)));
    (u, se)
}

/// `g_lambda(Z) = sup_a U_lambda(Z + G(a))`, trained on `train` and scored on
/// `eval` (the training set when `None`).
pub fn deep_hedge(
    train: &HedgeSet,
    eval: Option<&HedgeSet>,
    cost: &CostSpec,
    cfg: &StatArbConfig,
) -> Result<HedgeResult> {
    let lambda = cfg.train.risk_aversion;
    let data = train.dataset()?;
    let res = train_statarb(&data, None, cost, cfg, |_, _| Ok(()))?;
    let target = eval.unwrap_or(train);
    let g_eval = match eval {
        Some(e) => e.dataset()?.evaluate(&res.net, cost, lambda)?.1,
        None => res.train_gains.clone(),
    };
    let pnl: Vec<f64> = g_eval.iter().zip(&target.payoff).map(|(g, z)| g + z).collect();
    let w = target.weights_or_base();
    let (utility, se) = utility_and_se(&pnl, &w, lambda, cfg.n_boot, cfg.train.seed);
    let floor = entropy_utility(&target.payoff, lambda, Some(&w));
    Ok(HedgeResult {
        net: res.net,
        g: utility.max(floor),
        se,
        utility,
        pnl,
        measure: if train.weights.is_some() { MeasureTag::QStar } else { MeasureTag::P },
        config_digest: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndifferencePrice {
    pub price: f64,
    pub g_z: f64,
    pub g_z_minus_x: f64,
    pub se: f64,
}

/// `pi(X | Z) = g(Z) - g(Z - X)` from two hedges with the same seed.
pub fn indifference_price(
    x_train: &[f64],
    x_eval: Option<&[f64]>,
    train: &HedgeSet,
    eval: Option<&HedgeSet>,
    cost: &CostSpec,
    cfg: &StatArbConfig,
) -> Result<IndifferencePrice> {
    let minus = |set: &HedgeSet, x: &[f64]| -> Result<Vec<f64>> {
        if x.len() != set.payoff.len() {
            return Err(Error::Shape("payoff X must have one value per path".into()));
        }
        Ok(set.payoff.iter().zip(x).map(|(z, x)| z - x).collect())
    };
    let with_z = deep_hedge(train, eval, cost, cfg)?;
    let train_zx = train.with_payoff(minus(train, x_train)?);
    let eval_zx = match (eval, x_eval) {
        (Some(e), Some(x)) => Some(e.with_payoff(minus(e, x)?)),
        (None, _) => None,
        (Some(_), None) => return Err(Error::InvalidParam("X on the evaluation set is missing".into())),
    };
    let with_zx = deep_hedge(&train_zx, eval_zx.as_ref(), cost, cfg)?;
    Ok(IndifferencePrice {
        price: with_z.g - with_zx.g,
        g_z: with_z.g,
        g_z_minus_x: with_zx.g,
        se: (with_z.se.powi(2) + with_zx.se.powi(2)).sqrt(),
    })
}

/// Paths for training and scoring; both are drawn from the statistical measure.
#[derive(Debug, Clone, Copy)]
pub struct DhWorld<'a> {
    pub train: &'a PathSet,
    pub eval: &'a PathSet,
    pub payoff: &'a PortfolioPayoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dh1Report {
    /// `g*_lambda(Z)`, hedging under `Q*`.
    pub g_star_z: f64,
    /// `g_lambda(Z)` under `P`.
    pub g_z: f64,
    /// `g_lambda` (statistical arbitrage value) under `P`.
    pub g_0: f64,
    pub se: f64,
    pub zero_cost: bool,
    pub pass: bool,
}

struct StarMeasure {
    net: PolicyNet,
    q_train: Vec<f64>,
    q_eval: Vec<f64>,
    g: f64,
    se: f64,
}

/// Train `a*` under `P` and build `Q* ∝ exp(-lambda G(a*))` on both sets.
fn star_measure(world: &DhWorld, cost: &CostSpec, cfg: &StatArbConfig) -> Result<StarMeasure> {
    let lambda = cfg.train.risk_aversion;
    let res = train_statarb(&Dataset::new(world.train), None, cost, cfg, |_, _| Ok(()))?;
    let (_, g_eval) = Dataset::new(world.eval).evaluate(&res.net, cost, lambda)?;
    let scale = |g: &[f64]| g.iter().map(|v| lambda * v).collect::<Vec<f64>>();
    let q_train = measure_weights(&scale(&res.train_gains), world.train.probs.as_deref())?.q;
    let q_eval = measure_weights(&scale(&g_eval), world.eval.probs.as_deref())?.q;
    let w = world.eval.base_probs();
    let (u, se) = utility_and_se(&g_eval, &w, lambda, cfg.n_boot, cfg.train.seed);
    Ok(StarMeasure {
        net: res.net,
        q_train,
        q_eval,
        g: u.max(0.0),
        se,
    })
}

/// `g*_lambda(Z) <= g_lambda(Z) - g_lambda` under super-additive cost, with
/// equality at zero cost. Tolerances are three combined standard errors.
pub fn check_prop_dh1(world: &DhWorld, cost: &CostSpec, cfg: &StatArbConfig) -> Result<Dh1Report> {
    let star = star_measure(world, cost, cfg)?;
    let z_train = world.payoff.evaluate(world.train)?;
    let z_eval = world.payoff.evaluate(world.eval)?;
    let p_train = HedgeSet::new(world.train, z_train.clone(), None);
    let p_eval = HedgeSet::new(world.eval, z_eval.clone(), None);
    let q_train = HedgeSet::new(world.train, z_train, Some(star.q_train));
    let q_eval = HedgeSet::new(world.eval, z_eval, Some(star.q_eval));
    let under_p = deep_hedge(&p_train, Some(&p_eval), cost, cfg)?;
    let under_q = deep_hedge(&q_train, Some(&q_eval), cost, cfg)?;
    let se = (star.se.powi(2) + under_p.se.powi(2) + under_q.se.powi(2)).sqrt();
    let lhs = under_q.g;
    let rhs = under_p.g - star.g;
    let zero_cost = cost.is_zero();
    let pass = if zero_cost {
        (lhs - rhs).abs() <= 3.0 * se
    } else {
        lhs <= rhs + 3.0 * se
    };
    Ok(Dh1Report {
        g_star_z: lhs,
        g_z: under_p.g,
        g_0: star.g,
        se,
        zero_cost,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dh2Report {
    /// `U*(Z + G(a' - a*))`.
    pub u_composed: f64,
    /// `U*(Z + G(a''))`.
    pub u_direct: f64,
    pub se: f64,
    pub pass: bool,
}

/// Hedging under `P` and subtracting the statistical-arbitrage policy gives a
/// hedge under `Q*` as good as hedging under `Q*` directly (zero cost only).
pub fn check_corollary_dh2(world: &DhWorld, cost: &CostSpec, cfg: &StatArbConfig) -> Result<Dh2Report> {
    if !cost.is_zero() {
        return Err(Error::InvalidParam(
            "the risk-neutral decomposition needs zero transaction cost".into(),
        ));
    }
    let cost = cost.clone();
    let lambda = cfg.train.risk_aversion;
    let star = star_measure(world, &cost, cfg)?;
    let z_train = world.payoff.evaluate(world.train)?;
    let z_eval = world.payoff.evaluate(world.eval)?;
    let p_train = HedgeSet::new(world.train, z_train.clone(), None);
    let q_train = HedgeSet::new(world.train, z_train, Some(star.q_train));
    let a_prime = deep_hedge(&p_train, None, &cost, cfg)?;
    let a_second = deep_hedge(&q_train, None, &cost, cfg)?;

    let eval = world.eval;
    let composed = a_prime.net.forward(eval)?.combine(&star.net.forward(eval)?, 1.0, -1.0)?;
    let direct = a_second.net.forward(eval)?;
    let pnl = |a| -> Result<Vec<f64>> {
        Ok(gains(eval, a, &cost)?.iter().zip(&z_eval).map(|(g, z)| g + z).collect())
    };
    let x_comp = pnl(&composed)?;
    let x_dir = pnl(&direct)?;
    let (u_c, se_c) = utility_and_se(&x_comp, &star.q_eval, lambda, cfg.n_boot, cfg.train.seed);
    let (u_d, se_d) = utility_and_se(&x_dir, &star.q_eval, lambda, cfg.n_boot, cfg.train.seed);
    let se = (se_c * se_c + se_d * se_d).sqrt();
    Ok(Dh2Report {
        u_composed: u_c,
        u_direct: u_d,
        se,
        pass: (u_c - u_d).abs() <= 3.0 * se,
    })
}
