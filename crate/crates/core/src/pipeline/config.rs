use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::hedge::{MeasureTag, PortfolioPayoff};
use crate::market::{CostSpec, PathSet};
use crate::measure::{StatArbConfig, VerifyConfig};
use crate::policy::{Arch, FeatureSpec, TrainConfig};
use crate::simulators::{
    binomial_tree, synthetic_fixture, simulate_bs, simulate_bs_with_options, simulate_var,
    BinomialParams, BsParams,
};
use crate::{Error, Result};

fn daily() -> f64 {
    1.0 / 252.0
}

fn thirty() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum World {
    /// One-period tree enumerated exactly; training and validation coincide.
    Binomial { u: f64, d: f64, p: f64 },
    Bs {
        mu: f64,
        sigma: f64,
        #[serde(default = "thirty")]
        n_steps: usize,
        #[serde(default = "daily")]
        dt: f64,
        n_train: usize,
        n_val: usize,
    },
    BsOptions {
        mu: f64,
        sigma_realized: f64,
        sigma_implied: f64,
        #[serde(default = "thirty")]
        n_steps: usize,
        #[serde(default = "daily")]
        dt: f64,
        #[serde(default)]
        option_tenor_steps: Option<usize>,
        n_train: usize,
        n_val: usize,
    },
    /// VAR on log returns and log DLVs, built-in synthetic fixture.
    Var {
        #[serde(default = "thirty")]
        n_steps: usize,
        #[serde(default = "daily")]
        dt: f64,
        n_train: usize,
        n_val: usize,
    },
}

impl World {
    pub fn name(&self) -> &'static str {
        match self {
            World::Binomial { .. } => "binomial",
            World::Bs { .. } => "bs",
            World::BsOptions { .. } => "bs_options",
            World::Var { .. } => "var",
        }
    }

    fn sizes(&self) -> Option<(usize, usize)> {
        match *self {
            World::Binomial { .. } => None,
            World::Bs { n_train, n_val, .. }
            | World::BsOptions { n_train, n_val, .. }
            | World::Var { n_train, n_val, .. } => Some((n_train, n_val)),
        }
    }

    pub fn binomial_params(&self, gamma: f64) -> Option<BinomialParams> {
        match *self {
            World::Binomial { u, d, p } => Some(BinomialParams { u, d, p, gamma }),
            _ => None,
        }
    }

    fn bs_params(&self, n_paths: usize, seed: u64) -> Option<BsParams> {
        match *self {
            World::Bs { mu, sigma, n_steps, dt, .. } => Some(BsParams {
                mu,
                sigma_realized: sigma,
                sigma_implied: None,
                n_steps,
                dt,
                n_paths,
                seed,
                option_tenor_steps: None,
            }),
            World::BsOptions {
                mu,
                sigma_realized,
                sigma_implied,
                n_steps,
                dt,
                option_tenor_steps,
                ..
            } => Some(BsParams {
                mu,
                sigma_realized,
                sigma_implied: Some(sigma_implied),
                n_steps,
                dt,
                n_paths,
                seed,
                option_tenor_steps,
            }),
            _ => None,
        }
    }

    /// Training and validation path sets. Validation draws from `seed + 1`.
    pub fn simulate(&self, seed: u64, gamma: f64) -> Result<(PathSet, PathSet)> {
        let val_seed = seed.wrapping_add(1);
        match self {
            World::Binomial { .. } => {
                let tree = binomial_tree(&self.binomial_params(gamma).expect("binomial world"))?;
                Ok((tree.clone(), tree))
            }
            World::Bs { n_train, n_val, .. } => Ok((
                simulate_bs(&self.bs_params(*n_train, seed).expect("bs world"))?,
                simulate_bs(&self.bs_params(*n_val, val_seed).expect("bs world"))?,
            )),
            World::BsOptions { n_train, n_val, .. } => Ok((
                simulate_bs_with_options(&self.bs_params(*n_train, seed).expect("bs world"))?,
                simulate_bs_with_options(&self.bs_params(*n_val, val_seed).expect("bs world"))?,
            )),
            World::Var { n_steps, dt, n_train, n_val } => {
                let params = synthetic_fixture(*dt);
                let train = simulate_var(&params, *n_train, *n_steps, seed)?.0;
                let val = simulate_var(&params, *n_val, *n_steps, val_seed)?.0;
                Ok((train, val))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Proportional cost on every instrument, both sides.
    #[serde(default)]
    pub gamma: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { gamma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "Arch::default_feedforward")]
    pub arch: Arch,
    #[serde(default)]
    pub features: FeatureSpec,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            arch: Arch::default_feedforward(),
            features: FeatureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Verification cost, at least the training cost.
    pub gamma: f64,
    #[serde(default = "three")]
    pub se_multiple: f64,
    #[serde(default = "hundred")]
    pub min_ess: f64,
    #[serde(default = "boot")]
    pub n_boot: usize,
    /// Retrain a fresh policy on the reweighted paths.
    #[serde(default)]
    pub retrain: bool,
    /// Training settings for the retrain; the main `[train]` section otherwise.
    #[serde(default)]
    pub retrain_train: Option<TrainConfig>,
    /// Risk aversions for the `g_lambda` ladder of the trained policy.
    #[serde(default)]
    pub lambdas: Vec<f64>,
}

fn three() -> f64 {
    3.0
}

fn hundred() -> f64 {
    100.0
}

fn boot() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeSection {
    pub payoff: PortfolioPayoff,
    /// Claim to price by indifference against `payoff`.
    #[serde(default)]
    pub price: Option<PortfolioPayoff>,
    #[serde(default = "measure_p")]
    pub measure: MeasureTag,
    /// Overrides `train.risk_aversion` for the hedge.
    #[serde(default)]
    pub risk_aversion: Option<f64>,
    /// Also run the P versus Q* consistency checks.
    #[serde(default)]
    pub consistency: bool,
}

fn measure_p() -> MeasureTag {
    MeasureTag::P
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives path simulation, initialisation and shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub world: World,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub hedge: Option<HedgeSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.cost.gamma >= 0.0) || self.cost.gamma.is_infinite() {
            return Err(Error::Config("cost.gamma must be finite and >= 0".into()));
        }
        if let Some((a, b)) = self.world.sizes() {
            if a == 0 || b == 0 {
                return Err(Error::Config("n_train and n_val must be positive".into()));
            }
        }
        if let Some(v) = &self.verify {
            if !(v.gamma >= self.cost.gamma) {
                return Err(Error::Config("verify.gamma must be at least cost.gamma".into()));
            }
            if let Some(t) = &v.retrain_train {
                t.validate()?;
            }
        }
        Ok(())
    }

    /// Replace the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Content hash of the effective configuration (output path excluded).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn lambda(&self) -> f64 {
        self.train.risk_aversion
    }

    pub fn statarb(&self) -> StatArbConfig {
        StatArbConfig {
            arch: self.policy.arch.clone(),
            features: self.policy.features,
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            ..StatArbConfig::default()
        }
    }

    pub fn cost_for(&self, paths: &PathSet, gamma: f64) -> CostSpec {
        CostSpec::uniform(paths.n_steps, paths.n_instruments(), gamma)
    }

    pub fn verify_config(&self) -> Option<VerifyConfig> {
        let v = self.verify.as_ref()?;
        let retrain = v.retrain.then(|| {
            let mut rc = self.statarb();
            if let Some(t) = &v.retrain_train {
                rc.train = TrainConfig {
                    seed: self.seed.wrapping_add(2),
                    ..t.clone()
                };
            } else {
                rc.train.seed = self.seed.wrapping_add(2);
            }
            rc.n_boot = v.n_boot;
            rc
        });
        Some(VerifyConfig {
            se_multiple: v.se_multiple,
            min_ess: v.min_ess,
            n_boot: v.n_boot,
            seed: self.seed,
            retrain,
            g_floor: 1e-4,
        })
    }
}
