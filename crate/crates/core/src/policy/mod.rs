//! Trading policies `a_t = a_t(theta | s_t)`, their gradients and training.
//!
//! A policy maps per-step features to one raw output per instrument. Spot-like
//! instruments use a holdings head (the output is the position, the action is
//! its change); options, which are new instruments every step, use the output
//! directly. Constrained cost specs are honoured by a smooth projection so the
//! produced actions are always admissible.

mod adam;
mod checkpoint;
mod loss;
mod net;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::market::{ActionMatrix, Constraint, CostSpec, InstrumentKind, PathSet};
use crate::{rng, Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, RngState};
pub use loss::{evaluate, loss_and_grad, Batch, LossOutput};
pub use net::Arch;
pub use train::{train, Dataset, EvalPoint, TrainConfig, TrainReport};

/// Subgradient of `|x|` with the choice `0` at the kink.
pub fn subgradient_abs(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Holdings,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Projection {
    None,
    /// `a_i = b_i tanh(x_i / b_i)`.
    Box {
        #[serde(with = "crate::extended_f64")]
        bounds: Vec<f64>,
    },
    /// `a = x / sqrt(1 + x.Sx / M)`.
    Quadratic { sigma: Vec<f64>, max_risk: f64 },
}

impl Projection {
    pub fn for_cost(cost: &CostSpec) -> Self {
        match &cost.constraint {
            None => Projection::None,
            Some(Constraint::Box { bounds }) => Projection::Box {
                bounds: bounds.clone(),
            },
            Some(Constraint::Quadratic { sigma, max_risk }) => Projection::Quadratic {
                sigma: sigma.clone(),
                max_risk: *max_risk,
            },
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Projection::None => out.copy_from_slice(x),
            Projection::Box { bounds } => {
                for ((o, &v), &b) in out.iter_mut().zip(x).zip(bounds) {
                    *o = if b.is_finite() { b * (v / b).tanh() } else { v };
                }
            }
            Projection::Quadratic { sigma, max_risk } => {
                let q = crate::market::quad_form(sigma, x);
                let s = (1.0 + q / max_risk).sqrt().recip();
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = s * v;
                }
            }
        }
    }

    /// Pull `d_out` back through the projection at input `x`, in place.
    fn pullback(&self, x: &[f64], d: &mut [f64]) {
        match self {
            Projection::None => {}
            Projection::Box { bounds } => {
                for ((g, &v), &b) in d.iter_mut().zip(x).zip(bounds) {
                    if b.is_finite() {
                        let th = (v / b).tanh();
                        *g *= 1.0 - th * th;
                    }
                }
            }
            Projection::Quadratic { sigma, max_risk } => {
                let n = x.len();
                let q = crate::market::quad_form(sigma, x);
                let base = 1.0 + q / max_risk;
                let s = base.sqrt().recip();
                let ds_dq = -0.5 * base.powf(-1.5) / max_risk;
                let dx: f64 = d.iter().zip(x).map(|(g, v)| g * v).sum();
                for i in 0..n {
                    let sx: f64 = (0..n).map(|j| sigma[i * n + j] * x[j]).sum();
                    d[i] = s * d[i] + dx * ds_dq * 2.0 * sx;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    /// Feed all instrument mids.
    pub mids: bool,
    /// Feed the simulator's state features (log DLVs in the VAR world).
    pub state: bool,
}

/// Standardised features `[t / T, log S_t, mids.., state..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub spec: FeatureSpec,
    pub horizon_steps: usize,
    pub n_instruments: usize,
    pub state_dim: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureMap {
    pub fn fit(paths: &PathSet, spec: FeatureSpec) -> Result<Self> {
        let state_dim = match (&paths.state, spec.state) {
            (Some(s), true) => s.dim,
            (None, true) => {
                return Err(Error::FeatureMismatch(
                    "state features requested but the path set carries none".into(),
                ))
            }
            _ => 0,
        };
        let mut fm = FeatureMap {
            spec,
            horizon_steps: paths.n_steps,
            n_instruments: paths.n_instruments(),
            state_dim,
            mean: Vec::new(),
            scale: Vec::new(),
        };
        let d = fm.dim();
        fm.mean = vec![0.0; d];
        fm.scale = vec![1.0; d];
        let rows = (paths.n_paths * paths.n_steps) as f64;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut buf = vec![0.0; d];
        for p in 0..paths.n_paths {
            for t in 0..paths.n_steps {
                fm.raw(paths, p, t, &mut buf);
                for k in 0..d {
                    sum[k] += buf[k];
                    sq[k] += buf[k] * buf[k];
                }
            }
        }
        for k in 0..d {
            let m = sum[k] / rows;
            let var = (sq[k] / rows - m * m).max(0.0);
            fm.mean[k] = m;
            fm.scale[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(fm)
    }

    pub fn dim(&self) -> usize {
        2 + if self.spec.mids { self.n_instruments } else { 0 } + self.state_dim
    }

    pub fn check(&self, paths: &PathSet) -> Result<()> {
        if paths.n_instruments() != self.n_instruments {
            return Err(Error::FeatureMismatch(format!(
                "policy expects {} instruments, path set has {}",
                self.n_instruments,
                paths.n_instruments()
            )));
        }
        if self.state_dim > 0 {
            match &paths.state {
                Some(s) if s.dim == self.state_dim => {}
                _ => {
                    return Err(Error::FeatureMismatch(format!(
                        "policy expects {} state features",
                        self.state_dim
                    )))
                }
            }
        }
        Ok(())
    }

    fn raw(&self, paths: &PathSet, p: usize, t: usize, out: &mut [f64]) {
        out[0] = t as f64 / self.horizon_steps as f64;
        out[1] = paths.spot_at(p, t).ln();
        let mut k = 2;
        if self.spec.mids {
            let c = paths.cell(p, t, 0);
            out[k..k + self.n_instruments].copy_from_slice(&paths.mids[c..c + self.n_instruments]);
            k += self.n_instruments;
        }
        if self.state_dim > 0 {
            let s = paths.state.as_ref().expect("checked");
            let o = (p * paths.n_steps + t) * s.dim;
            out[k..k + s.dim].copy_from_slice(&s.values[o..o + s.dim]);
        }
    }

    /// Feature matrix for the paths in `idx`, rows ordered `(path, step)`.
    pub fn matrix(&self, paths: &PathSet, idx: &[usize]) -> Array2<f64> {
        let d = self.dim();
        let m = paths.n_steps;
        let mut x = Array2::zeros((idx.len() * m, d));
        let mut buf = vec![0.0; d];
        for (r, &p) in idx.iter().enumerate() {
            for t in 0..m {
                self.raw(paths, p, t, &mut buf);
                let mut row = x.row_mut(r * m + t);
                for k in 0..d {
                    row[k] = (buf[k] - self.mean[k]) / self.scale[k];
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub arch: Arch,
    pub features: FeatureMap,
    pub heads: Vec<Head>,
    pub projection: Projection,
    pub params: Vec<f64>,
    pub init_seed: u64,
}

impl PolicyNet {
    /// Fresh policy for `paths` with zero output layer (the no-trade policy).
    pub fn new(
        arch: Arch,
        paths: &PathSet,
        spec: FeatureSpec,
        projection: Projection,
        seed: u64,
    ) -> Result<Self> {
        if arch.hidden().contains(&0) {
            return Err(Error::InvalidParam("hidden layers must be non-empty".into()));
        }
        let features = FeatureMap::fit(paths, spec)?;
        let heads = paths.instruments[0]
            .iter()
            .map(|s| match s.kind {
                InstrumentKind::Spot => Head::Holdings,
                _ => Head::Direct,
            })
            .collect();
        let mut r = rng::stream(seed, 0x5eed);
        let params = net::init_params(&arch, features.dim(), paths.n_instruments(), &mut r);
        Ok(Self {
            arch,
            features,
            heads,
            projection,
            params,
            init_seed: seed,
        })
    }

    pub fn n_in(&self) -> usize {
        self.features.dim()
    }

    pub fn n_out(&self) -> usize {
        self.heads.len()
    }

    /// Offsets of the output-layer weights and bias in `params`.
    pub fn output_offsets(&self) -> (usize, usize) {
        net::output_block(&self.arch, self.n_in(), self.n_out())
    }

    pub fn forward(&self, paths: &PathSet) -> Result<ActionMatrix> {
        let idx: Vec<usize> = (0..paths.n_paths).collect();
        let (a, _) = self.forward_cached(paths, &idx)?;
        ActionMatrix::from_vec(paths.n_paths, paths.n_steps, self.n_out(), a.pre_actions_to_actions(self))
    }

    pub(crate) fn forward_cached(&self, paths: &PathSet, idx: &[usize]) -> Result<(HeadOut, net::Cache)> {
        self.features.check(paths)?;
        let x = self.features.matrix(paths, idx);
        let (out, cache) = net::forward(&self.arch, &self.params, self.n_in(), self.n_out(), x, paths.n_steps);
        Ok((HeadOut::new(self, out, paths.n_steps), cache))
    }

    pub(crate) fn backward(&self, cache: &net::Cache, d_out: &Array2<f64>, grad: &mut [f64]) {
        net::backward(&self.arch, &self.params, self.n_in(), self.n_out(), cache, d_out, grad);
    }
}

/// Raw network outputs mapped through the heads (before projection).
pub(crate) struct HeadOut {
    pub pre: Array2<f64>,
    n_steps: usize,
}

impl HeadOut {
    fn new(net: &PolicyNet, raw: Array2<f64>, n_steps: usize) -> Self {
        let mut pre = raw.clone();
        for (i, h) in net.heads.iter().enumerate() {
            if *h == Head::Holdings {
                for r in (0..raw.nrows()).rev() {
                    if r % n_steps > 0 {
                        pre[[r, i]] = raw[[r, i]] - raw[[r - 1, i]];
                    }
                }
            }
        }
        Self { pre, n_steps }
    }

    /// Projected actions, flat in `ActionMatrix` order.
    pub fn pre_actions_to_actions(&self, net: &PolicyNet) -> Vec<f64> {
        let n = self.pre.ncols();
        let mut out = vec![0.0; self.pre.len()];
        for (r, row) in self.pre.rows().into_iter().enumerate() {
            let x = row.to_vec();
            net.projection.apply(&x, &mut out[r * n..(r + 1) * n]);
        }
        out
    }

    /// `d loss / d raw outputs` from `d loss / d actions` (flat, same order).
    pub fn pullback(&self, net: &PolicyNet, d_actions: &[f64]) -> Array2<f64> {
        let n = self.pre.ncols();
        let mut d_pre = Array2::zeros(self.pre.dim());
        for (r, row) in self.pre.rows().into_iter().enumerate() {
            let x = row.to_vec();
            let mut g = d_actions[r * n..(r + 1) * n].to_vec();
            net.projection.pullback(&x, &mut g);
            for i in 0..n {
                d_pre[[r, i]] = g[i];
            }
        }
        let mut d_raw = d_pre.clone();
        for (i, h) in net.heads.iter().enumerate() {
            if *h == Head::Holdings {
                for r in 0..d_pre.nrows() {
                    if r % self.n_steps + 1 < self.n_steps {
                        d_raw[[r, i]] -= d_pre[[r + 1, i]];
                    }
                }
            }
        }
        d_raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{simulate_bs, simulate_bs_with_options, BsParams};

    fn bs(n_paths: usize, implied: Option<f64>) -> PathSet {
        let p = BsParams {
            mu: 0.05,
            sigma_realized: 0.15,
            sigma_implied: implied,
            n_steps: 5,
            dt: 1.0 / 252.0,
            n_paths,
            seed: 3,
            option_tenor_steps: None,
        };
        match implied {
            Some(_) => simulate_bs_with_options(&p).unwrap(),
            None => simulate_bs(&p).unwrap(),
        }
    }

    fn randomise(net: &mut PolicyNet, seed: u64) {
        let mut r = rng::stream(seed, 1);
        for v in &mut net.params {
            *v = 0.3 * rng::normal(&mut r);
        }
    }

    #[test]
    fn subgradient_of_abs() {
        assert_eq!(subgradient_abs(3.0), 1.0);
        assert_eq!(subgradient_abs(-2.0), -1.0);
        assert_eq!(subgradient_abs(0.0), 0.0);
    }

    #[test]
    fn fresh_policy_does_not_trade() {
        let ps = bs(20, Some(0.2));
        for arch in [Arch::default_feedforward(), Arch::default_recurrent()] {
            let net = PolicyNet::new(arch, &ps, FeatureSpec::default(), Projection::None, 1).unwrap();
            assert!(net.forward(&ps).unwrap().data.iter().all(|a| *a == 0.0));
        }
    }

    #[test]
    fn permuting_paths_permutes_actions() {
        let ps = bs(12, Some(0.2));
        for arch in [Arch::default_feedforward(), Arch::default_recurrent()] {
            let mut net = PolicyNet::new(arch, &ps, FeatureSpec { mids: true, state: false }, Projection::None, 2).unwrap();
            randomise(&mut net, 5);
            let perm: Vec<usize> = (0..12).rev().collect();
            let a = net.forward(&ps).unwrap();
            let b = net.forward(&ps.select(&perm)).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                for t in 0..ps.n_steps {
                    assert_eq!(a.step(p, t), b.step(k, t));
                }
            }
        }
    }

    #[test]
    fn recurrent_policy_is_causal() {
        let ps = bs(6, None);
        let mut net = PolicyNet::new(Arch::default_recurrent(), &ps, FeatureSpec::default(), Projection::None, 4).unwrap();
        randomise(&mut net, 8);
        let full = net.forward(&ps).unwrap();
        let k = 3;
        let m = ps.n_steps;
        let mut short = ps.clone();
        short.n_steps = k;
        short.spot_len = k + 1;
        short.spot = (0..6).flat_map(|p| ps.spot_path(p)[..=k].to_vec()).collect();
        short.instruments.truncate(k);
        short.mids = (0..6).flat_map(|p| ps.mids[p * m..p * m + k].to_vec()).collect();
        short.marks = short.mids.clone();
        let part = net.forward(&short).unwrap();
        for p in 0..6 {
            for t in 0..k {
                assert_eq!(full.step(p, t), part.step(p, t));
            }
        }
    }

    #[test]
    fn projections_are_admissible() {
        let bx = Projection::Box { bounds: vec![0.5, 2.0] };
        let q = Projection::Quadratic { sigma: vec![2.0, 0.5, 0.5, 1.0], max_risk: 3.0 };
        let mut out = [0.0; 2];
        for x in [[100.0, -100.0], [0.1, 0.2], [-3.0, 7.0]] {
            bx.apply(&x, &mut out);
            assert!(out[0].abs() <= 0.5 && out[1].abs() <= 2.0);
            q.apply(&x, &mut out);
            assert!(crate::market::quad_form(&[2.0, 0.5, 0.5, 1.0], &out) <= 3.0);
        }
    }

    #[test]
    fn projection_pullbacks_match_differences() {
        let projs = [
            Projection::Box { bounds: vec![0.5, f64::INFINITY] },
            Projection::Quadratic { sigma: vec![2.0, 0.5, 0.5, 1.0], max_risk: 3.0 },
        ];
        let x = [0.3, -1.2];
        let w = [0.7, -0.4];
        for pr in &projs {
            let mut g = w.to_vec();
            pr.pullback(&x, &mut g);
            for k in 0..2 {
                let h = 1e-6;
                let (mut xp, mut xm) = (x, x);
                xp[k] += h;
                xm[k] -= h;
                let (mut op, mut om) = ([0.0; 2], [0.0; 2]);
                pr.apply(&xp, &mut op);
                pr.apply(&xm, &mut om);
                let fd = (w[0] * (op[0] - om[0]) + w[1] * (op[1] - om[1])) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8, "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn feature_mismatch_rejected() {
        let ps = bs(4, Some(0.2));
        let net = PolicyNet::new(Arch::default_feedforward(), &ps, FeatureSpec::default(), Projection::None, 1).unwrap();
        assert!(matches!(net.forward(&bs(4, None)), Err(Error::FeatureMismatch(_))));
        assert!(PolicyNet::new(Arch::default_feedforward(), &ps, FeatureSpec { mids: false, state: true }, Projection::None, 1).is_err());
    }
}
