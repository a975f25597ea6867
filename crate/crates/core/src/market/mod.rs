//! Market data model: instruments, path sets, costs, actions and the terminal
//! gains functional.
//!
//! Prices are stored in units of the initial spot (`S_0 = 1`). Every tradable
//! instrument is "floating": the instrument bought at step `t` is held until
//! the end of the path and contributes `a_t * (H_T - H_t)` to the gains, where
//! `H_t` is its mid at `t` and `H_T` its terminal mark (realised payoff).

mod cost;
pub mod io;

pub(crate) use cost::quad_form;
pub use cost::{generalized_cost, proportional_cost, Constraint, CostMode, CostSpec};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstrumentKind {
    Spot,
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub id: String,
    pub kind: InstrumentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_strike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturity_steps: Option<usize>,
}

impl InstrumentSpec {
    pub fn spot() -> Self {
        Self {
            id: "spot".into(),
            kind: InstrumentKind::Spot,
            relative_strike: None,
            maturity_steps: None,
        }
    }

    pub fn option(kind: InstrumentKind, relative_strike: f64, maturity_steps: usize) -> Self {
        let tag = match kind {
            InstrumentKind::Call => "C",
            InstrumentKind::Put => "P",
            InstrumentKind::Spot => "S",
        };
        Self {
            id: format!("{tag}_k{relative_strike:.4}_m{maturity_steps}"),
            kind,
            relative_strike: Some(relative_strike),
            maturity_steps: Some(maturity_steps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            InstrumentKind::Spot => {
                if self.relative_strike.is_some() || self.maturity_steps.is_some() {
                    return Err(Error::InvalidParam(format!(
                        "spot instrument {} must not carry strike or maturity",
                        self.id
                    )));
                }
            }
            InstrumentKind::Call | InstrumentKind::Put => {
                match self.relative_strike {
                    Some(k) if k > 0.0 && k.is_finite() => {}
                    _ => {
                        return Err(Error::InvalidParam(format!(
                            "option {} needs a positive relative strike",
                            self.id
                        )))
                    }
                }
                match self.maturity_steps {
                    Some(m) if m >= 1 => {}
                    _ => {
                        return Err(Error::InvalidParam(format!(
                            "option {} needs a maturity of at least one step",
                            self.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Realised payoff of the instrument bought at `t` given the spot trajectory
    /// of one path. Spot is marked at the horizon `m`.
    pub fn payoff(&self, spot: &[f64], t: usize, horizon: usize) -> f64 {
        match self.kind {
            InstrumentKind::Spot => spot[horizon],
            InstrumentKind::Call | InstrumentKind::Put => {
                let k = self.relative_strike.unwrap_or(1.0);
                let tau = self.maturity_steps.unwrap_or(1);
                let ret = spot[t + tau] / spot[t];
                if self.kind == InstrumentKind::Call {
                    (ret - k).max(0.0)
                } else {
                    (k - ret).max(0.0)
                }
            }
        }
    }
}

/// Extra per-step state made available to policies (for example log discrete
/// local volatilities in the VAR world).
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub dim: usize,
    /// `[n_paths x n_steps x dim]`, row-major.
    pub values: Vec<f64>,
}

/// A batch of simulated market paths.
///
/// `spot` has `spot_len >= n_steps + 1` columns; columns past the horizon hold
/// the post-horizon trajectory that options held to maturity settle against.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub n_paths: usize,
    pub n_steps: usize,
    pub step_dt: f64,
    pub seed: u64,
    pub spot_len: usize,
    pub spot: Vec<f64>,
    /// One instrument list per trading step, each of identical length.
    pub instruments: Vec<Vec<InstrumentSpec>>,
    pub mids: Vec<f64>,
    pub marks: Vec<f64>,
    pub state: Option<StateFeatures>,
    /// Base path probabilities for exactly enumerated worlds; `None` means
    /// equiprobable paths.
    pub probs: Option<Vec<f64>>,
}

impl PathSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_paths: usize,
        n_steps: usize,
        step_dt: f64,
        seed: u64,
        spot_len: usize,
        spot: Vec<f64>,
        instruments: Vec<Vec<InstrumentSpec>>,
        mids: Vec<f64>,
        marks: Vec<f64>,
    ) -> Result<Self> {
        let ps = Self {
            n_paths,
            n_steps,
            step_dt,
            seed,
            spot_len,
            spot,
            instruments,
            mids,
            marks,
            state: None,
            probs: None,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn with_state(mut self, state: StateFeatures) -> Result<Self> {
        if state.values.len() != self.n_paths * self.n_steps * state.dim {
            return Err(Error::Shape(format!(
                "state features have {} values, expected {}",
                state.values.len(),
                self.n_paths * self.n_steps * state.dim
            )));
        }
        if state.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite state feature".into()));
        }
        self.state = Some(state);
        Ok(self)
    }

    pub fn with_probs(mut self, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != self.n_paths {
            return Err(Error::Shape(format!(
                "{} path probabilities for {} paths",
                probs.len(),
                self.n_paths
            )));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(
                "path probabilities must be non-negative and sum to one".into(),
            ));
        }
        self.probs = Some(probs);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParam("path set needs at least one step".into()));
        }
        if !(self.step_dt > 0.0) {
            return Err(Error::InvalidParam("step_dt must be positive".into()));
        }
        if self.spot_len < self.n_steps + 1 {
            return Err(Error::Shape("spot must cover the trading horizon".into()));
        }
        if self.spot.len() != self.n_paths * self.spot_len {
            return Err(Error::Shape(format!(
                "spot has {} values, expected {}",
                self.spot.len(),
                self.n_paths * self.spot_len
            )));
        }
        if self.instruments.len() != self.n_steps {
            return Err(Error::Shape(format!(
                "{} instrument lists for {} steps",
                self.instruments.len(),
                self.n_steps
            )));
        }
        let n = self.n_instruments();
        if n == 0 {
            return Err(Error::Shape("no instruments".into()));
        }
        for (t, list) in self.instruments.iter().enumerate() {
            if list.len() != n {
                return Err(Error::Shape(format!(
                    "step {t} has {} instruments, expected {n}",
                    list.len()
                )));
            }
            for spec in list {
                spec.validate()?;
                if let Some(tau) = spec.maturity_steps {
                    if t + tau >= self.spot_len {
                        return Err(Error::Shape(format!(
                            "instrument {} at step {t} matures beyond the stored spot path",
                            spec.id
                        )));
                    }
                }
            }
        }
        let cells = self.n_paths * self.n_steps * n;
        if self.mids.len() != cells || self.marks.len() != cells {
            return Err(Error::Shape(format!(
                "mids/marks have {}/{} values, expected {cells}",
                self.mids.len(),
                self.marks.len()
            )));
        }
        if self.spot.iter().chain(&self.mids).chain(&self.marks).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite price in path set".into()));
        }
        Ok(())
    }

    pub fn n_instruments(&self) -> usize {
        self.instruments.first().map_or(0, Vec::len)
    }

    pub fn horizon_years(&self) -> f64 {
        self.n_steps as f64 * self.step_dt
    }

    pub fn spot_path(&self, p: usize) -> &[f64] {
        &self.spot[p * self.spot_len..(p + 1) * self.spot_len]
    }

    pub fn spot_at(&self, p: usize, t: usize) -> f64 {
        self.spot[p * self.spot_len + t]
    }

    #[inline]
    pub fn cell(&self, p: usize, t: usize, i: usize) -> usize {
        (p * self.n_steps + t) * self.n_instruments() + i
    }

    pub fn mid(&self, p: usize, t: usize, i: usize) -> f64 {
        self.mids[self.cell(p, t, i)]
    }

    pub fn mark(&self, p: usize, t: usize, i: usize) -> f64 {
        self.marks[self.cell(p, t, i)]
    }

    /// Instrument performance to maturity `H_T - H_t`, laid out like `mids`.
    pub fn performance(&self) -> Vec<f64> {
        self.marks.iter().zip(&self.mids).map(|(m, h)| m - h).collect()
    }

    /// Largest deviation between stored marks and the payoff recomputed from
    /// the spot trajectory.
    pub fn mark_consistency_error(&self) -> f64 {
        let n = self.n_instruments();
        let mut worst = 0.0f64;
        for p in 0..self.n_paths {
            let s = self.spot_path(p);
            for t in 0..self.n_steps {
                for i in 0..n {
                    let expect = self.instruments[t][i].payoff(s, t, self.n_steps);
                    worst = worst.max((expect - self.mark(p, t, i)).abs());
                }
            }
        }
        worst
    }

    /// Path probabilities, uniform when none were attached.
    pub fn base_probs(&self) -> Vec<f64> {
        match &self.probs {
            Some(p) => p.clone(),
            None => vec![1.0 / self.n_paths as f64; self.n_paths],
        }
    }

    /// Copy of the subset of paths given by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> PathSet {
        let n = self.n_instruments();
        let per = self.n_steps * n;
        let mut spot = Vec::with_capacity(idx.len() * self.spot_len);
        let mut mids = Vec::with_capacity(idx.len() * per);
        let mut marks = Vec::with_capacity(idx.len() * per);
        for &p in idx {
            spot.extend_from_slice(self.spot_path(p));
            mids.extend_from_slice(&self.mids[p * per..(p + 1) * per]);
            marks.extend_from_slice(&self.marks[p * per..(p + 1) * per]);
        }
        let state = self.state.as_ref().map(|s| {
            let w = self.n_steps * s.dim;
            let mut values = Vec::with_capacity(idx.len() * w);
            for &p in idx {
                values.extend_from_slice(&s.values[p * w..(p + 1) * w]);
            }
            StateFeatures { dim: s.dim, values }
        });
        let probs = self.probs.as_ref().map(|pr| {
            let sel: Vec<f64> = idx.iter().map(|&p| pr[p]).collect();
            let total: f64 = sel.iter().sum();
            sel.into_iter().map(|x| x / total).collect()
        });
        PathSet {
            n_paths: idx.len(),
            n_steps: self.n_steps,
            step_dt: self.step_dt,
            seed: self.seed,
            spot_len: self.spot_len,
            spot,
            instruments: self.instruments.clone(),
            mids,
            marks,
            state,
            probs,
        }
    }
}

/// Holdings per path, step and instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMatrix {
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_instruments: usize,
    pub data: Vec<f64>,
}

impl ActionMatrix {
    pub fn zeros(n_paths: usize, n_steps: usize, n_instruments: usize) -> Self {
        Self {
            n_paths,
            n_steps,
            n_instruments,
            data: vec![0.0; n_paths * n_steps * n_instruments],
        }
    }

    pub fn zeros_like(paths: &PathSet) -> Self {
        Self::zeros(paths.n_paths, paths.n_steps, paths.n_instruments())
    }

    pub fn from_vec(
        n_paths: usize,
        n_steps: usize,
        n_instruments: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != n_paths * n_steps * n_instruments {
            return Err(Error::Shape(format!(
                "action data has {} values, expected {}",
                data.len(),
                n_paths * n_steps * n_instruments
            )));
        }
        Ok(Self {
            n_paths,
            n_steps,
            n_instruments,
            data,
        })
    }

    pub fn step(&self, p: usize, t: usize) -> &[f64] {
        let o = (p * self.n_steps + t) * self.n_instruments;
        &self.data[o..o + self.n_instruments]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            data: self.data.iter().map(|a| a * k).collect(),
            ..self.clone()
        }
    }

    pub fn combine(&self, other: &Self, wa: f64, wb: f64) -> Result<Self> {
        if self.data.len() != other.data.len() {
            return Err(Error::Shape("action matrices differ in shape".into()));
        }
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| wa * a + wb * b)
                .collect(),
            ..self.clone()
        })
    }
}

/// Terminal gains `G(a) = sum_t a_t . (H_T - H_t) - c_t(a_t)` per path; `-inf`
/// on paths where some action is inadmissible.
pub fn gains(paths: &PathSet, actions: &ActionMatrix, cost: &CostSpec) -> Result<Vec<f64>> {
    let n = paths.n_instruments();
    if actions.n_paths != paths.n_paths
        || actions.n_steps != paths.n_steps
        || actions.n_instruments != n
    {
        return Err(Error::Shape(format!(
            "actions [{} x {} x {}] vs paths [{} x {} x {}]",
            actions.n_paths,
            actions.n_steps,
            actions.n_instruments,
            paths.n_paths,
            paths.n_steps,
            n
        )));
    }
    cost.check_shape(paths.n_steps, n)?;
    let out = (0..paths.n_paths)
        .map(|p| {
            let mut g = 0.0;
            for t in 0..paths.n_steps {
                let a = actions.step(p, t);
                let c = cost.cost(a, t);
                if c.is_infinite() {
                    return f64::NEG_INFINITY;
                }
                let base = paths.cell(p, t, 0);
                let (marks, mids) = (&paths.marks[base..base + n], &paths.mids[base..base + n]);
                for ((&ai, mk), md) in a.iter().zip(marks).zip(mids) {
                    if ai != 0.0 {
                        g += ai * (mk - md);
                    }
                }
                g -= c;
            }
            g
        })
        .collect();
    Ok(out)
}
