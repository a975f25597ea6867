//! Config-driven batch runs: simulate, train the statistical-arbitrage
//! policy, reweight, verify and optionally hedge, writing every intermediate
//! result to an artifact directory.

mod artifacts;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use artifacts::{
    metrics_export, read_weights, write_metrics_csv, Manifest, MetricsRow, WeightsMeta, BAND_CSV,
    CHECKPOINT, FAILED, METRICS_CSV, SUMMARY, WEIGHTS_HIST_CSV,
};
pub use config::{CostConfig, ExperimentConfig, HedgeSection, PolicyConfig, VerifySection, World};

use crate::hedge::{self, DhWorld, HedgeSet, MeasureTag};
use crate::market::{io, CostSpec, PathSet};
use crate::measure::{
    binomial_oracle, bs_memm_density, bs_memm_relative_entropy, entropy_utility, g_lambda_ladder,
    measure_weights, relative_entropy, train_statarb, verify_no_statarb, MeasureWeights, StatArbReport,
};
use crate::policy::{load_checkpoint, save_checkpoint, Dataset, PolicyNet, RngState};
use crate::simulators::bs_call_price;
use crate::{stats, Error, Result};

/// Strikes of the reweighted call-price metric.
pub const OPTION_STRIKES: [f64; 9] = [0.8, 0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2];

/// Fraction of paths in each tail of the weight-ordered path fans.
pub const TAIL_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, target: String, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            target,
            pass,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub digest: String,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub digest: String,
    pub dir: PathBuf,
}

impl Pipeline {
    /// `out` overrides the config's output directory.
    pub fn new(cfg: ExperimentConfig, out: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        if let Some(b) = cfg.world.binomial_params(cfg.cost.gamma) {
            b.validate()?;
        }
        let digest = cfg.digest();
        let dir = match (out, &cfg.out) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => o.clone(),
            (None, None) => PathBuf::from(format!("runs/{}-{}", cfg.world.name(), digest)),
        };
        std::fs::create_dir_all(&dir)?;
        let manifest = Manifest {
            digest: digest.clone(),
            world: cfg.world.name().to_string(),
            config: serde_json::to_value(&cfg)?,
        };
        artifacts::write_json(&dir.join(artifacts::MANIFEST), &manifest)?;
        Ok(Self { cfg, digest, dir })
    }

    fn digest(&self) -> Option<&str> {
        Some(&self.digest)
    }

    fn lambda(&self) -> f64 {
        self.cfg.lambda()
    }

    pub fn training_cost(&self, paths: &PathSet) -> CostSpec {
        self.cfg.cost_for(paths, self.cfg.cost.gamma)
    }

    pub fn simulate(&self) -> Result<(PathSet, PathSet)> {
        let (train, val) = self.cfg.world.simulate(self.cfg.seed, self.cfg.cost.gamma)?;
        io::save(&train, &self.dir.join("train"), self.digest())?;
        io::save(&val, &self.dir.join("val"), self.digest())?;
        Ok((train, val))
    }

    pub fn load_paths(&self) -> Result<(PathSet, PathSet)> {
        let load = |name: &str| {
            let d = self.dir.join(name);
            require(&d, "simulate")?;
            io::load(&d)
        };
        Ok((load("train")?, load("val")?))
    }

    pub fn load_policy(&self) -> Result<PolicyNet> {
        let p = self.dir.join(CHECKPOINT);
        require(&p, "train-arb")?;
        Ok(load_checkpoint(&p)?.0)
    }

    /// `Q* ∝ p exp(-lambda G(a*))` on `paths`.
    pub fn star_weights(&self, net: &PolicyNet, paths: &PathSet) -> Result<MeasureWeights> {
        let cost = self.training_cost(paths);
        let lambda = self.lambda();
        let (_, gains) = Dataset::new(paths).evaluate(net, &cost, lambda)?;
        let scaled: Vec<f64> = gains.iter().map(|g| lambda * g).collect();
        let mut w = measure_weights(&scaled, paths.probs.as_deref())?;
        w.gains = gains;
        w.config_digest = Some(self.digest.clone());
        Ok(w)
    }

    fn analytic_density(&self, paths: &PathSet) -> Result<Option<Vec<f64>>> {
        let m = paths.n_steps;
        Ok(match self.cfg.world {
            World::Bs { mu, sigma, .. } => {
                let horizon = paths.horizon_years();
                Some(
                    (0..paths.n_paths)
                        .map(|p| bs_memm_density(paths.spot_at(p, m), mu, sigma, horizon))
                        .collect(),
                )
            }
            World::Binomial { p, .. } => {
                let b = self.cfg.world.binomial_params(self.cfg.cost.gamma).expect("binomial world");
                let o = binomial_oracle(&b, self.lambda())?;
                Some(
                    (0..paths.n_paths)
                        .map(|k| if paths.spot_at(k, 1) > 1.0 { o.q_up / p } else { o.q_dn / (1.0 - p) })
                        .collect(),
                )
            }
            _ => None,
        })
    }

    fn option_prices(&self, paths: &PathSet, q: &[f64]) -> Vec<f64> {
        let m = paths.n_steps;
        OPTION_STRIKES
            .iter()
            .map(|k| (0..paths.n_paths).map(|p| q[p] * (paths.spot_at(p, m) - k).max(0.0)).sum())
            .collect()
    }

    fn metrics_row(&self, step: usize, net: &PolicyNet, val: &PathSet, density: Option<&[f64]>) -> Result<MetricsRow> {
        let w = self.star_weights(net, val)?;
        let base = val.base_probs();
        let density_mse = density.map(|d| {
            (0..val.n_paths)
                .map(|p| base[p] * (w.q[p] / base[p] - d[p]).powi(2))
                .sum()
        });
        let option_mse = match self.cfg.world {
            World::Bs { sigma, .. } => {
                let tau = val.horizon_years();
                let prices = self.option_prices(val, &w.q);
                let mse = OPTION_STRIKES
                    .iter()
                    .zip(&prices)
                    .map(|(k, c)| (c - k * bs_call_price(1.0 / k, sigma, tau)).powi(2))
                    .sum::<f64>()
                    / OPTION_STRIKES.len() as f64;
                Some(mse)
            }
            _ => None,
        };
        Ok(MetricsRow {
            step,
            density_mse,
            rel_entropy: relative_entropy(&w.q, val.probs.as_deref()),
            option_mse,
        })
    }

    /// Train the statistical-arbitrage policy, logging validation metrics
    /// every `eval_every` steps.
    pub fn train_arb(&self, train: &PathSet, val: &PathSet) -> Result<(PolicyNet, Vec<MetricsRow>)> {
        let cost = self.training_cost(train);
        let sa = self.cfg.statarb();
        let density = self.analytic_density(val)?;
        let mut rows = Vec::new();
        let res = train_statarb(&Dataset::new(train), Some(&Dataset::new(val)), &cost, &sa, |step, net| {
            rows.push(self.metrics_row(step, net, val, density.as_deref())?);
            Ok(())
        })?;
        let rng = RngState {
            seed: sa.train.seed,
            stream: 0x7a1,
            word_pos: res.report.steps as u64,
        };
        save_checkpoint(&res.net, rng, self.digest(), &self.dir.join(CHECKPOINT))?;
        artifacts::write_json(&self.dir.join(artifacts::METRICS_JSON), &rows)?;
        Ok((res.net, rows))
    }

    /// Weights on the validation set, plus the per-path and tail-path CSVs.
    pub fn reweight(&self, net: &PolicyNet, val: &PathSet) -> Result<MeasureWeights> {
        let w = self.star_weights(net, val)?;
        let meta = WeightsMeta {
            n_paths: val.n_paths,
            log_normalizer: w.log_normalizer,
            ess: w.ess,
            config_digest: w.config_digest.clone(),
        };
        artifacts::write_weights(&self.dir, &w.q, &w.gains, &meta)?;

        let mut wr = artifacts::csv_with_digest(&self.dir.join("weights.csv"), self.digest())?;
        wr.write_record(["path", "q", "gain", "realized_vol"])?;
        for p in 0..val.n_paths {
            wr.write_record([
                p.to_string(),
                w.q[p].to_string(),
                w.gains[p].to_string(),
                realized_vol(val, p).to_string(),
            ])?;
        }
        wr.flush()?;

        let (low, high) = tails(&w.q, TAIL_FRACTION);
        let mut wr = artifacts::csv_with_digest(&self.dir.join("weight_paths.csv"), self.digest())?;
        wr.write_record(["group", "path", "t", "spot"])?;
        for (group, idx) in [("low", &low), ("high", &high)] {
            for &p in idx.iter() {
                for (t, s) in val.spot_path(p)[..=val.n_steps].iter().enumerate() {
                    wr.write_record([group.to_string(), p.to_string(), t.to_string(), s.to_string()])?;
                }
            }
        }
        wr.flush()?;
        Ok(w)
    }

    /// Band test (and optional retrain) of the validation set under `q`.
    pub fn verify(&self, val: &PathSet, q: &[f64]) -> Result<Option<StatArbReport>> {
        let (Some(sec), Some(vc)) = (&self.cfg.verify, self.cfg.verify_config()) else {
            return Ok(None);
        };
        let cost = self.cfg.cost_for(val, sec.gamma);
        let training = self.training_cost(val);
        let report = verify_no_statarb(val, q, &cost, Some(&training), &vc, None)?;
        artifacts::write_json(&self.dir.join(artifacts::REPORT_JSON), &report)?;
        Ok(Some(report))
    }

    fn ladder(&self, gains: &[f64], val: &PathSet) -> Result<()> {
        let Some(sec) = &self.cfg.verify else { return Ok(()) };
        if sec.lambdas.is_empty() {
            return Ok(());
        }
        let base = val.base_probs();
        let g = g_lambda_ladder(&[gains.to_vec()], Some(&base), &sec.lambdas);
        let mut wr = artifacts::csv_with_digest(&self.dir.join("ladder.csv"), self.digest())?;
        wr.write_record(["lambda", "g"])?;
        for (l, v) in sec.lambdas.iter().zip(g) {
            wr.write_record([l.to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Pass/fail checks for the chosen world against its declared tolerances.
    pub fn world_checks(
        &self,
        net: &PolicyNet,
        val: &PathSet,
        w: &MeasureWeights,
        rows: &[MetricsRow],
    ) -> Result<Vec<Check>> {
        let mut out = Vec::new();
        match self.cfg.world {
            World::Binomial { .. } => {
                let b = self.cfg.world.binomial_params(self.cfg.cost.gamma).expect("binomial world");
                let o = binomial_oracle(&b, self.lambda())?;
                let a = net.forward(val)?.data[0];
                let g = entropy_utility(&w.gains, self.lambda(), val.probs.as_deref()).max(0.0);
                out.push(Check::new(
                    "binomial_a_star",
                    a,
                    format!("|a - {:.6}| <= 1e-3", o.a_star),
                    (a - o.a_star).abs() <= 1e-3,
                ));
                out.push(Check::new(
                    "binomial_g",
                    g,
                    format!("|g - {:.6e}| <= 1e-4", o.g),
                    (g - o.g).abs() <= 1e-4,
                ));
            }
            World::Bs { sigma, mu, .. } => {
                let target = bs_memm_relative_entropy(mu, sigma, val.horizon_years());
                let h = rows.last().map_or(f64::NAN, |r| r.rel_entropy);
                out.push(Check::new(
                    "rel_entropy",
                    h,
                    format!("within 15% of {target:.7}"),
                    (h - target).abs() <= 0.15 * target,
                ));
                let d: Vec<f64> = rows.iter().filter_map(|r| r.density_mse).collect();
                if let (Some(first), Some(last)) = (d.first(), d.last()) {
                    out.push(Check::new(
                        "density_mse_ratio",
                        last / first,
                        "final <= 0.1 x initial".into(),
                        *last <= 0.1 * first,
                    ));
                    out.push(Check::new(
                        "density_mse_trend",
                        trend_excess(&d),
                        "smoothed trend non-increasing (excess <= 0.1 x initial)".into(),
                        trend_excess(&d) <= 0.1 * first,
                    ));
                }
                let tau = val.horizon_years();
                let n_boot = self.cfg.verify.as_ref().map_or(200, |v| v.n_boot);
                let m = val.n_steps;
                let prices = self.option_prices(val, &w.q);
                let mut worst: f64 = 0.0;
                for (j, k) in OPTION_STRIKES.iter().enumerate() {
                    let payoff: Vec<f64> = (0..val.n_paths).map(|p| (val.spot_at(p, m) - k).max(0.0)).collect();
                    let se = stats::bootstrap_se(&payoff, &w.q, n_boot, self.cfg.seed, |x, q| {
                        x.iter().zip(q).map(|(a, b)| a * b).sum()
                    });
                    let bs = k * bs_call_price(1.0 / k, sigma, tau);
                    worst = worst.max((prices[j] - bs).abs() / se.max(1e-300));
                }
                out.push(Check::new("option_prices_in_se", worst, "max |error| / s.e. <= 3".into(), worst <= 3.0));
            }
            World::BsOptions { sigma_realized, sigma_implied, .. } => {
                let rv: Vec<f64> = (0..val.n_paths).map(|p| realized_vol(val, p)).collect();
                let var_p = stats::mean(&rv.iter().map(|v| v * v).collect::<Vec<_>>());
                let var_q: f64 = rv.iter().zip(&w.q).map(|(v, q)| q * v * v).sum();
                let closure = (var_q - var_p) / (sigma_implied.powi(2) - var_p);
                out.push(Check::new(
                    "variance_gap_closure",
                    closure,
                    format!(">= 0.7 of the gap from {:.4} to {:.4}", sigma_realized.powi(2), sigma_implied.powi(2)),
                    closure >= 0.7,
                ));
                let mut sorted = rv.clone();
                sorted.sort_by(f64::total_cmp);
                let median = stats::quantile(&sorted, 0.5);
                let (low, high) = tails(&w.q, TAIL_FRACTION);
                let low_ok = low.iter().filter(|&&p| rv[p] < median).count();
                let high_ok = high.iter().filter(|&&p| rv[p] > median).count();
                out.push(Check::new(
                    "low_weight_paths_below_median_vol",
                    low_ok as f64 / low.len() as f64,
                    "all lowest-0.1% paths".into(),
                    low_ok == low.len(),
                ));
                out.push(Check::new(
                    "high_weight_paths_above_median_vol",
                    high_ok as f64 / high.len() as f64,
                    "all highest-0.1% paths".into(),
                    high_ok == high.len(),
                ));
            }
            World::Var { .. } => {}
        }
        Ok(out)
    }

    fn report_checks(report: &StatArbReport) -> Vec<Check> {
        let inside = report.cells.iter().filter(|c| c.pass).count();
        let mut out = vec![Check::new(
            "band_test",
            inside as f64 / report.cells.len().max(1) as f64,
            "every cell inside its bid/ask band at 3 s.e.".into(),
            inside == report.cells.len() && !report.unreliable,
        )];
        if let Some(r) = &report.retrain {
            out.push(Check::new("retrain_g", r.g, format!("<= {:.3e}", r.tolerance), r.pass));
        }
        out
    }

    /// Hedge `[hedge].payoff` on the training set, scored on validation.
    pub fn hedge(&self, train: &PathSet, val: &PathSet, star: Option<&PolicyNet>) -> Result<Vec<Check>> {
        let Some(sec) = &self.cfg.hedge else {
            return Err(Error::Config("the config has no [hedge] section".into()));
        };
        let mut sa = self.cfg.statarb();
        if let Some(l) = sec.risk_aversion {
            sa.train.risk_aversion = l;
        }
        let cost = self.training_cost(train);
        let z_train = sec.payoff.evaluate(train)?;
        let z_val = sec.payoff.evaluate(val)?;
        let (w_train, w_val) = match sec.measure {
            MeasureTag::P => (None, None),
            MeasureTag::QStar => {
                let net = star.ok_or_else(|| Error::Config("hedging under Q* needs a trained policy".into()))?;
                (Some(self.star_weights(net, train)?.q), Some(self.star_weights(net, val)?.q))
            }
        };
        let hs_train = HedgeSet::new(train, z_train, w_train);
        let hs_val = HedgeSet::new(val, z_val, w_val);
        let mut res = hedge::deep_hedge(&hs_train, Some(&hs_val), &cost, &sa)?;
        res.config_digest = Some(self.digest.clone());
        let floor = entropy_utility(&hs_val.payoff, sa.train.risk_aversion, hs_val.weights.as_deref());
        let mut checks = vec![Check::new(
            "hedge_g_above_no_trade",
            res.g,
            format!(">= U(Z) = {floor:.6e}"),
            res.g >= floor,
        )];
        let mut record = serde_json::json!({
            "measure": res.measure,
            "g": res.g,
            "utility": res.utility,
            "se": res.se,
            "config_digest": res.config_digest,
        });
        if let Some(x) = &sec.price {
            let xt = x.evaluate(train)?;
            let xv = x.evaluate(val)?;
            let pi = hedge::indifference_price(&xt, Some(&xv), &hs_train, Some(&hs_val), &cost, &sa)?;
            record["indifference_price"] = serde_json::to_value(&pi)?;
        }
        if sec.consistency {
            let world = DhWorld { train, eval: val, payoff: &sec.payoff };
            let dh1 = hedge::check_prop_dh1(&world, &cost, &sa)?;
            let target = if dh1.zero_cost { "|g*(Z) - (g(Z) - g)| <= 3 s.e." } else { "g*(Z) <= g(Z) - g + 3 s.e." };
            checks.push(Check::new("prop_dh1", dh1.g_star_z - (dh1.g_z - dh1.g_0), target.into(), dh1.pass));
            record["prop_dh1"] = serde_json::to_value(&dh1)?;
            if cost.is_zero() {
                let dh2 = hedge::check_corollary_dh2(&world, &cost, &sa)?;
                checks.push(Check::new(
                    "corollary_dh2",
                    dh2.u_composed - dh2.u_direct,
                    "|U*(Z + G(a' - a*)) - U*(Z + G(a''))| <= 3 s.e.".into(),
                    dh2.pass,
                ));
                record["corollary_dh2"] = serde_json::to_value(&dh2)?;
            }
        }
        artifacts::write_json(&self.dir.join("hedge.json"), &record)?;
        Ok(checks)
    }

    /// Write `summary.txt` and the CSV exports.
    pub fn finish(&self, checks: Vec<Check>) -> Result<Outcome> {
        metrics_export(&self.dir)?;
        let pass = checks.iter().all(|c| c.pass);
        let mut f = std::io::BufWriter::new(std::fs::File::create(self.dir.join(SUMMARY))?);
        writeln!(f, "# digest: {}", self.digest)?;
        writeln!(f, "world: {}", self.cfg.world.name())?;
        for c in &checks {
            let tag = if c.pass { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {} value={} target: {}", c.name, c.value, c.target)?;
        }
        writeln!(f, "result: {}", if pass { "PASS" } else { "FAIL" })?;
        f.flush()?;
        Ok(Outcome {
            dir: self.dir.clone(),
            digest: self.digest.clone(),
            checks,
            pass,
        })
    }

    fn run_stages(&self) -> Result<Outcome> {
        let (train, val) = self.simulate()?;
        let (net, rows) = self.train_arb(&train, &val)?;
        let w = self.reweight(&net, &val)?;
        self.ladder(&w.gains, &val)?;
        let mut checks = self.world_checks(&net, &val, &w, &rows)?;
        if let Some(report) = self.verify(&val, &w.q)? {
            checks.extend(Self::report_checks(&report));
        }
        if self.cfg.hedge.is_some() {
            checks.extend(self.hedge(&train, &val, Some(&net))?);
        }
        self.finish(checks)
    }

    /// All stages. A failing stage leaves its partial artifacts and a
    /// `FAILED` marker holding the error.
    pub fn run(&self) -> Result<Outcome> {
        let _ = std::fs::remove_file(self.dir.join(FAILED));
        self.run_stages().inspect_err(|e| {
            let _ = std::fs::write(self.dir.join(FAILED), format!("{e}\n"));
        })
    }

    /// Checks recomputed from artifacts on disk, for the stage-wise CLI.
    pub fn verify_from_disk(&self) -> Result<Outcome> {
        let (_, val) = self.load_paths()?;
        let (q, _) = read_weights(&self.dir)?;
        let mut checks = Vec::new();
        if let Some(report) = self.verify(&val, &q)? {
            checks.extend(Self::report_checks(&report));
        }
        self.finish(checks)
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    match path.exists() {
        true => Ok(()),
        false => Err(Error::Config(format!("{} not found; run `{stage}` first", path.display()))),
    }
}

/// Annualised realised volatility of the spot path over the horizon.
pub fn realized_vol(paths: &PathSet, p: usize) -> f64 {
    let s = &paths.spot_path(p)[..=paths.n_steps];
    let sum: f64 = s.windows(2).map(|w| (w[1] / w[0]).ln().powi(2)).sum();
    (sum / paths.horizon_years()).sqrt()
}

/// Indices of the lowest and highest `frac` of weights (at least one each),
/// ties broken by path index.
pub fn tails(q: &[f64], frac: f64) -> (Vec<usize>, Vec<usize>) {
    let n = q.len();
    let k = ((n as f64 * frac).ceil() as usize).clamp(1, n.max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)));
    let low = idx[..k.min(n)].to_vec();
    let mut high = idx[n - k.min(n)..].to_vec();
    high.reverse();
    (low, high)
}

/// Largest rise of the smoothed series above its running minimum.
pub fn trend_excess(xs: &[f64]) -> f64 {
    let s = stats::smooth(xs, 5);
    let mut lo = f64::INFINITY;
    let mut excess: f64 = 0.0;
    for v in s {
        lo = lo.min(v);
        excess = excess.max(v - lo);
    }
    excess
}

/// Parse a config file and run every stage.
pub fn run_pipeline(cfg: ExperimentConfig, out: Option<&Path>) -> Result<Outcome> {
    Pipeline::new(cfg, out)?.run()
}
