//! Mini-batch Adam training of a policy on the entropy loss.

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{evaluate, loss_and_grad, Batch};
use super::PolicyNet;
use crate::market::{CostSpec, PathSet};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate reached at the last step (geometric decay); constant if unset.
    pub lr_final: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub risk_aversion: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Validation cadence in gradient steps.
    pub eval_every: usize,
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            lr_final: None,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            risk_aversion: 1.0,
            clip_norm: None,
            eval_every: 100,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.lr_final.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::InvalidParam("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidParam("batch_size and eval_every must be at least 1".into()));
        }
        if !(self.risk_aversion >= 0.0) || self.risk_aversion.is_infinite() {
            return Err(Error::InvalidParam("risk_aversion must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_paths: usize) -> usize {
        let per_epoch = n_paths.div_ceil(self.batch_size);
        let total = per_epoch * self.epochs;
        self.max_steps.map_or(total, |m| m.min(total))
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_final {
            Some(f) if total > 1 => {
                self.learning_rate * (f / self.learning_rate).powf(step as f64 / (total - 1) as f64)
            }
            _ => self.learning_rate,
        }
    }
}

/// Paths with path probabilities and an optional payoff `Z`.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    pub paths: &'a PathSet,
    pub weights: Vec<f64>,
    pub offset: Option<Vec<f64>>,
}

impl<'a> Dataset<'a> {
    pub fn new(paths: &'a PathSet) -> Self {
        Self {
            paths,
            weights: paths.base_probs(),
            offset: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.paths.n_paths || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Shape("one non-negative weight per path is required".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != self.paths.n_paths || offset.iter().any(|z| !z.is_finite()) {
            return Err(Error::Shape("one finite payoff per path is required".into()));
        }
        self.offset = Some(offset);
        Ok(self)
    }

    fn batch<'b>(&'b self, idx: &'b [usize], w: &'b [f64], z: Option<&'b [f64]>) -> Batch<'b> {
        Batch {
            paths: self.paths,
            idx,
            weights: w,
            offset: z,
        }
    }

    /// Loss and gains of `net` on the whole set.
    pub fn evaluate(&self, net: &PolicyNet, cost: &CostSpec, lambda: f64) -> Result<(f64, Vec<f64>)> {
        let idx: Vec<usize> = (0..self.paths.n_paths).collect();
        evaluate(net, self.batch(&idx, &self.weights, self.offset.as_deref()), cost, lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean batch loss since the previous evaluation.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub history: Vec<EvalPoint>,
    pub clipped: usize,
    pub adam: AdamState,
}

/// Train `net` in place. `on_eval(step, net)` runs at step 0, every
/// `eval_every` steps and after the last step.
pub fn train<F>(
    net: &mut PolicyNet,
    data: &Dataset,
    val: Option<&Dataset>,
    cost: &CostSpec,
    cfg: &TrainConfig,
    mut on_eval: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &PolicyNet) -> Result<()>,
{
    cfg.validate()?;
    let n = data.paths.n_paths;
    let total = cfg.total_steps(n);
    let lambda = cfg.risk_aversion;
    let adam_cfg = AdamConfig::default();
    let mut adam = AdamState::new(net.params.len());
    let mut history = Vec::new();
    let mut clipped = 0usize;
    let mut running = (0.0, 0usize);
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(cfg.seed, 0x7a1);
    let full_batch = cfg.batch_size >= n;

    let mut record = |step: usize, net: &PolicyNet, running: &mut (f64, usize), clipped: &mut usize| -> Result<()> {
        let val_loss = match val {
            Some(v) => {
                let (l, g) = v.evaluate(net, cost, lambda)?;
                let x: Vec<f64> = match &v.offset {
                    Some(z) => g.iter().zip(z).map(|(a, b)| a + b).collect(),
                    None => g,
                };
                *clipped += x.iter().filter(|x| (lambda * **x).abs() > super::loss::EXP_CLIP).count();
                Some(l)
            }
            None => None,
        };
        let train_loss = if running.1 > 0 { running.0 / running.1 as f64 } else { f64::NAN };
        history.push(EvalPoint {
            step,
            train_loss,
            val_loss,
        });
        *running = (0.0, 0);
        on_eval(step, net)
    };

    record(0, net, &mut running, &mut clipped)?;
    let mut step = 0;
    let mut cursor = n;
    let mut epoch = 0u64;
    let mut idx_buf = Vec::with_capacity(cfg.batch_size);
    let mut w_buf = Vec::with_capacity(cfg.batch_size);
    let mut z_buf = Vec::with_capacity(cfg.batch_size);
    while step < total {
        if cursor >= n {
            if !full_batch {
                rng::shuffle(&mut r, &mut order);
            }
            cursor = 0;
            epoch += 1;
        }
        let hi = if full_batch { n } else { (cursor + cfg.batch_size).min(n) };
        idx_buf.clear();
        idx_buf.extend_from_slice(&order[cursor..hi]);
        cursor = hi;
        w_buf.clear();
        w_buf.extend(idx_buf.iter().map(|&p| data.weights[p]));
        let z = data.offset.as_ref().map(|z| {
            z_buf.clear();
            z_buf.extend(idx_buf.iter().map(|&p| z[p]));
            z_buf.as_slice()
        });
        if w_buf.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        let out = loss_and_grad(net, data.batch(&idx_buf, &w_buf, z), cost, lambda)?;
        clipped += out.clipped;
        if out.clipped * 2 > idx_buf.len() {
            return Err(Error::Diverged(format!(
                "step {step} (epoch {epoch}): {} of {} exponents clipped, loss {}",
                out.clipped,
                idx_buf.len(),
                out.loss
            )));
        }
        let mut grad = out.grad;
        if let Some(c) = cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                grad.iter_mut().for_each(|g| *g *= c / norm);
            }
        }
        adam_step(&mut net.params, &mut adam, &grad, cfg.lr_at(step, total), &adam_cfg);
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged(format!("non-finite parameters after step {step}")));
        }
        running.0 += out.loss;
        running.1 += 1;
        step += 1;
        if step % cfg.eval_every == 0 || step == total {
            record(step, net, &mut running, &mut clipped)?;
        }
    }
    Ok(TrainReport {
        steps: step,
        history,
        clipped,
        adam,
    })
}
