//! Entropy loss `(1/lambda) log sum_p w_p exp(-lambda (G_p + Z_p))` and its
//! gradient with respect to the policy parameters.
//!
//! Paths are processed in fixed shards; per-shard gradients are combined by a
//! pairwise tree whose shape depends only on the batch size, so the result is
//! bit-identical for any number of threads.

use super::{HeadOut, PolicyNet};
use crate::market::{CostSpec, PathSet};
use crate::par;
use crate::{Error, Result};

const SHARD: usize = 64;
/// Exponents beyond this are clipped and counted.
pub const EXP_CLIP: f64 = 60.0;

/// A weighted set of paths, optionally with a terminal payoff `Z` per path.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub paths: &'a PathSet,
    pub idx: &'a [usize],
    /// Weights aligned with `idx`; renormalised internally.
    pub weights: &'a [f64],
    /// Payoff aligned with `idx`.
    pub offset: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// `G_p` per batch path (excluding the offset).
    pub gains: Vec<f64>,
    pub clipped: usize,
}

struct ShardState {
    head: HeadOut,
    cache: super::net::Cache,
    actions: Vec<f64>,
    gains: Vec<f64>,
}

fn shard_forward(net: &PolicyNet, paths: &PathSet, idx: &[usize], cost: &CostSpec) -> Result<ShardState> {
    let (head, cache) = net.forward_cached(paths, idx)?;
    let actions = head.pre_actions_to_actions(net);
    let n = net.n_out();
    let m = paths.n_steps;
    let mut gains = Vec::with_capacity(idx.len());
    for (r, &p) in idx.iter().enumerate() {
        let mut g = 0.0;
        for t in 0..m {
            let a = &actions[(r * m + t) * n..(r * m + t + 1) * n];
            let c = cost.cost(a, t);
            let base = paths.cell(p, t, 0);
            let (marks, mids) = (&paths.marks[base..base + n], &paths.mids[base..base + n]);
            g += a.iter().zip(marks).zip(mids).map(|((ai, mk), md)| ai * (mk - md)).sum::<f64>();
            g -= c;
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteLoss {
                path: p,
                detail: format!("gain {g}; an action fell outside the admissible set or a price is not finite"),
            });
        }
        gains.push(g);
    }
    Ok(ShardState {
        head,
        cache,
        actions,
        gains,
    })
}

/// Loss value and `d loss / d G_p` for gains `g`.
pub(crate) fn entropy_head(
    g: &[f64],
    w: &[f64],
    offset: Option<&[f64]>,
    lambda: f64,
) -> Result<(f64, Vec<f64>, usize)> {
    if !(lambda >= 0.0) || lambda.is_infinite() {
        return Err(Error::InvalidParam(format!("training needs a finite lambda >= 0, got {lambda}")));
    }
    let total_w: f64 = w.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::InvalidParam("batch weights must have positive mass".into()));
    }
    let x = |k: usize| g[k] + offset.map_or(0.0, |z| z[k]);
    if lambda == 0.0 {
        let loss = -(0..g.len()).map(|k| w[k] * x(k)).sum::<f64>() / total_w;
        return Ok((loss, w.iter().map(|wk| -wk / total_w).collect(), 0));
    }
    let mut clipped = 0;
    let e: Vec<f64> = (0..g.len())
        .map(|k| {
            let v = -lambda * x(k);
            if v.abs() > EXP_CLIP {
                clipped += 1;
                v.clamp(-EXP_CLIP, EXP_CLIP)
            } else {
                v
            }
        })
        .collect();
    let mx = e
        .iter()
        .zip(w)
        .filter(|(_, wk)| **wk > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let terms: Vec<f64> = e.iter().zip(w).map(|(v, wk)| wk * (v - mx).exp()).collect();
    let s: f64 = terms.iter().sum();
    let loss = ((s / total_w).ln() + mx) / lambda;
    let d = (0..g.len())
        .map(|k| {
            let raw = -lambda * x(k);
            if raw.abs() > EXP_CLIP {
                0.0
            } else {
                -terms[k] / s
            }
        })
        .collect();
    Ok((loss, d, clipped))
}

fn shards(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(SHARD))
        .map(|s| (s * SHARD, ((s + 1) * SHARD).min(n)))
        .collect()
}

fn check(batch: &Batch) -> Result<()> {
    if batch.weights.len() != batch.idx.len() || batch.offset.is_some_and(|z| z.len() != batch.idx.len()) {
        return Err(Error::Shape("batch weights/offset must align with the path index".into()));
    }
    if batch.idx.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    Ok(())
}

/// Loss and per-path gains without the reverse pass.
pub fn evaluate(net: &PolicyNet, batch: Batch, cost: &CostSpec, lambda: f64) -> Result<(f64, Vec<f64>)> {
    check(&batch)?;
    cost.check_shape(batch.paths.n_steps, net.n_out())?;
    let parts = shards(batch.idx.len());
    let gains: Vec<Vec<f64>> = par::map(parts.len(), |s| {
        let (a, b) = parts[s];
        shard_forward(net, batch.paths, &batch.idx[a..b], cost).map(|st| st.gains)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let gains: Vec<f64> = gains.concat();
    let (loss, _, _) = entropy_head(&gains, batch.weights, batch.offset, lambda)?;
    Ok((loss, gains))
}

pub fn loss_and_grad(net: &PolicyNet, batch: Batch, cost: &CostSpec, lambda: f64) -> Result<LossOutput> {
    check(&batch)?;
    cost.check_shape(batch.paths.n_steps, net.n_out())?;
    let paths = batch.paths;
    let parts = shards(batch.idx.len());
    let states: Vec<ShardState> = par::map(parts.len(), |s| {
        let (a, b) = parts[s];
        shard_forward(net, paths, &batch.idx[a..b], cost)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let gains: Vec<f64> = states.iter().flat_map(|s| s.gains.iter().copied()).collect();
    let (loss, d_gain, clipped) = entropy_head(&gains, batch.weights, batch.offset, lambda)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            path: batch.idx[0],
            detail: format!("loss {loss}"),
        });
    }
    let n = net.n_out();
    let m = paths.n_steps;
    let n_params = net.params.len();
    let grads = par::map(parts.len(), |s| {
        let (lo, hi) = parts[s];
        let st = &states[s];
        let mut d_act = vec![0.0; st.actions.len()];
        let mut sub = vec![0.0; n];
        for (r, &p) in batch.idx[lo..hi].iter().enumerate() {
            let dg = d_gain[lo + r];
            if dg == 0.0 {
                continue;
            }
            for t in 0..m {
                let o = (r * m + t) * n;
                cost.subgradient(&st.actions[o..o + n], t, &mut sub);
                let base = paths.cell(p, t, 0);
                for i in 0..n {
                    let perf = paths.marks[base + i] - paths.mids[base + i];
                    d_act[o + i] = dg * (perf - sub[i]);
                }
            }
        }
        let d_raw = st.head.pullback(net, &d_act);
        let mut grad = vec![0.0; n_params];
        net.backward(&st.cache, &d_raw, &mut grad);
        grad
    });
    Ok(LossOutput {
        loss,
        grad: par::tree_sum(grads),
        gains,
        clipped,
    })
}
