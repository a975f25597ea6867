//! Checks that a reweighted market is free of statistical arbitrage.
//!
//! Band test: under `q`, the drift of every instrument's performance
//! `H_T - H_t` must lie inside `[-gamma_dn, gamma_up]`. The reported drift is
//! the `q`-mean; a weighted regression on `(1, log S_t, recent squared
//! returns)` also gives the spread of the conditional drift across states.
//!
//! Retrain test: a fresh policy trained on the `q`-weighted paths must not
//! find positive utility.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{entropy_utility, train_statarb, StatArbConfig};
use crate::market::{CostSpec, PathSet};
use crate::policy::Dataset;
use crate::{stats, Error, Result};

/// Number of past squared log returns in the regression basis.
const VOL_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub se_multiple: f64,
    pub min_ess: f64,
    pub n_boot: usize,
    pub seed: u64,
    /// Retrain test settings; skipped when absent.
    pub retrain: Option<StatArbConfig>,
    /// Tolerance floor for the retrained `g`.
    pub g_floor: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            se_multiple: 3.0,
            min_ess: 100.0,
            n_boot: 200,
            seed: 0,
            retrain: None,
            g_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCell {
    pub t: usize,
    pub instrument: String,
    pub drift: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub se: f64,
    pub violation: f64,
    /// 5% and 95% `q`-quantiles of the regression estimate of the conditional drift.
    pub cond_q05: f64,
    pub cond_q95: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainCheck {
    /// `U_lambda(G)` of the retrained policy on the evaluation set.
    pub utility: f64,
    /// `max(0, utility)`: the no-trade policy is always available.
    pub g: f64,
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatArbReport {
    pub cells: Vec<BandCell>,
    pub ess: f64,
    /// Effective sample size below the configured minimum.
    pub unreliable: bool,
    pub retrain: Option<RetrainCheck>,
    pub pass: bool,
}

impl StatArbReport {
    pub fn worst_cell(&self) -> Option<&BandCell> {
        self.cells
            .iter()
            .max_by(|a, b| (a.violation / a.se.max(1e-300)).total_cmp(&(b.violation / b.se.max(1e-300))))
    }

    pub fn write_csv<W: Write>(&self, w: W, digest: Option<&str>) -> Result<()> {
        let mut w = w;
        if let Some(d) = digest {
            writeln!(w, "# digest: {d}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["t", "instrument", "drift", "band_lo", "band_hi", "se", "violation"])?;
        for c in &self.cells {
            csv.write_record([
                c.t.to_string(),
                c.instrument.clone(),
                c.drift.to_string(),
                c.band_lo.to_string(),
                c.band_hi.to_string(),
                c.se.to_string(),
                c.violation.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let failed = self.cells.iter().filter(|c| !c.pass).count();
        let mut s = format!(
            "band test: {}/{} cells inside the bid/ask band, ESS {:.1}{}\n",
            self.cells.len() - failed,
            self.cells.len(),
            self.ess,
            if self.unreliable { " (unreliable)" } else { "" }
        );
        if let Some(c) = self.worst_cell() {
            s += &format!(
                "worst cell: t={} {} drift {:.3e} band [{:.3e}, {:.3e}] se {:.2e}\n",
                c.t, c.instrument, c.drift, c.band_lo, c.band_hi, c.se
            );
        }
        if let Some(r) = &self.retrain {
            s += &format!(
                "retrain test: g {:.3e} (utility {:.3e}) tolerance {:.3e} -> {}\n",
                r.g,
                r.utility,
                r.tolerance,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        s += if self.pass { "PASS\n" } else { "FAIL\n" };
        s
    }
}

fn weighted_quantile(values: &[f64], w: &[f64], level: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut acc = 0.0;
    for &k in &order {
        acc += w[k];
        if acc >= level {
            return values[k];
        }
    }
    values[*order.last().expect("non-empty")]
}

/// Regression basis per path at step `t`.
fn basis(paths: &PathSet, p: usize, t: usize) -> [f64; 3] {
    let s = paths.spot_path(p);
    let lo = t.saturating_sub(VOL_WINDOW);
    let rv: f64 = (lo..t).map(|k| (s[k + 1] / s[k]).ln().powi(2)).sum();
    [1.0, s[t].ln(), rv]
}

/// Fitted conditional means of `y` under weights `q`.
fn conditional_fit(x: &DMatrix<f64>, y: &[f64], q: &[f64]) -> Vec<f64> {
    let n = y.len();
    let sw: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
    let xw = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_fn(n, |i, _| y[i] * sw[i]);
    let svd = xw.svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    match svd.solve(&yw, eps) {
        Ok(beta) => (x * beta).iter().copied().collect(),
        Err(_) => vec![y.iter().zip(q).map(|(a, b)| a * b).sum(); n],
    }
}

/// Band test of `paths` under weights `q` against `cost` (the verification
/// cost), plus the optional retrain test. `holdout` supplies a separate
/// weighted set on which the retrained policy is scored. When
/// `training_cost` is given, `cost` must dominate it.
pub fn verify_no_statarb(
    paths: &PathSet,
    q: &[f64],
    cost: &CostSpec,
    training_cost: Option<&CostSpec>,
    cfg: &VerifyConfig,
    holdout: Option<(&PathSet, &[f64])>,
) -> Result<StatArbReport> {
    let n = paths.n_instruments();
    let m = paths.n_steps;
    cost.check_shape(m, n)?;
    if q.len() != paths.n_paths {
        return Err(Error::Shape("one weight per path is required".into()));
    }
    let total: f64 = q.iter().sum();
    if q.iter().any(|v| !(*v >= 0.0)) || !((total - 1.0).abs() < 1e-9) {
        return Err(Error::InvalidParam("weights must be a probability vector".into()));
    }
    if let Some(tc) = training_cost {
        tc.check_shape(m, n)?;
        let dominated = cost.gamma_up.iter().zip(&tc.gamma_up).all(|(a, b)| a >= b)
            && cost.gamma_dn.iter().zip(&tc.gamma_dn).all(|(a, b)| a >= b);
        if !dominated {
            return Err(Error::InvalidParam(
                "verification cost must be at least the training cost".into(),
            ));
        }
    }
    let ess = stats::ess(q);
    let exact = paths.probs.is_some();
    let unreliable = !exact && ess < cfg.min_ess;
    let np = paths.n_paths;

    let per_t: Vec<Vec<BandCell>> = crate::par::map(m, |t| {
        let x = DMatrix::from_fn(np, 3, |p, j| basis(paths, p, t)[j]);
        (0..n)
            .map(|i| {
                let y: Vec<f64> = (0..np).map(|p| paths.mark(p, t, i) - paths.mid(p, t, i)).collect();
                let (drift, se) = stats::weighted_mean_se(&y, q);
                // enumerated worlds give the exact expectation
                let se = if exact { 0.0 } else { se };
                let (lo, hi) = (-cost.dn(t)[i], cost.up(t)[i]);
                let violation = (drift - hi).max(lo - drift).max(0.0);
                let fit = if exact { y.clone() } else { conditional_fit(&x, &y, q) };
                let pass = violation <= cfg.se_multiple * se + 1e-12;
                BandCell {
                    t,
                    instrument: paths.instruments[t][i].id.clone(),
                    drift,
                    band_lo: lo,
                    band_hi: hi,
                    se,
                    violation,
                    cond_q05: weighted_quantile(&fit, q, 0.05),
                    cond_q95: weighted_quantile(&fit, q, 0.95),
                    pass,
                }
            })
            .collect()
    });
    let cells: Vec<BandCell> = per_t.into_iter().flatten().collect();

    let retrain = match &cfg.retrain {
        None => None,
        Some(rc) => {
            let lambda = rc.train.risk_aversion;
            let data = Dataset::new(paths).with_weights(q.to_vec())?;
            let res = train_statarb(&data, None, cost, rc, |_, _| Ok(()))?;
            let (eval_gains, eval_q) = match holdout {
                Some((hp, hq)) => {
                    let d = Dataset::new(hp).with_weights(hq.to_vec())?;
                    (d.evaluate(&res.net, cost, lambda)?.1, hq.to_vec())
                }
                None => (res.train_gains.clone(), q.to_vec()),
            };
            let utility = entropy_utility(&eval_gains, lambda, Some(&eval_q));
            let se = stats::bootstrap_se(&eval_gains, &eval_q, cfg.n_boot, cfg.seed, |x, w| {
                entropy_utility(x, lambda, Some(w))
            });
            let g = utility.max(0.0);
            let tolerance = cfg.g_floor.max(cfg.se_multiple * se);
            Some(RetrainCheck {
                utility,
                g,
                se,
                tolerance,
                pass: g <= tolerance,
            })
        }
    };
    let pass = cells.iter().all(|c| c.pass) && retrain.as_ref().is_none_or(|r| r.pass);
    Ok(StatArbReport {
        cells,
        ess,
        unreliable,
        retrain,
        pass,
    })
}
