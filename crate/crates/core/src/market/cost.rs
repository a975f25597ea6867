use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Convex admissible set layered on top of proportional costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Constraint {
    /// `|a_i| <= bounds[i]`.
    Box {
        #[serde(with = "crate::extended_f64")]
        bounds: Vec<f64>,
    },
    /// `a . sigma a <= max_risk`, `sigma` row-major `n x n`.
    Quadratic { sigma: Vec<f64>, max_risk: f64 },
}

impl Constraint {
    pub fn admits(&self, a: &[f64]) -> bool {
        match self {
            Constraint::Box { bounds } => a.iter().zip(bounds).all(|(x, b)| x.abs() <= *b),
            Constraint::Quadratic { sigma, max_risk } => quad_form(sigma, a) <= *max_risk,
        }
    }
}

pub(crate) fn quad_form(sigma: &[f64], a: &[f64]) -> f64 {
    let n = a.len();
    let mut q = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += sigma[i * n + j] * a[j];
        }
        q += a[i] * row;
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    Proportional,
    Generalized,
}

/// Proportional ask/bid spreads per step and instrument, optionally restricted
/// to a convex constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub n_steps: usize,
    pub n_instruments: usize,
    /// `[n_steps x n_instruments]`; `+inf` marks an instrument that cannot be bought.
    #[serde(with = "crate::extended_f64")]
    pub gamma_up: Vec<f64>,
    /// `[n_steps x n_instruments]`; `+inf` marks an instrument that cannot be sold.
    #[serde(with = "crate::extended_f64")]
    pub gamma_dn: Vec<f64>,
    pub mode: CostMode,
    pub constraint: Option<Constraint>,
}

impl CostSpec {
    pub fn new(
        n_steps: usize,
        n_instruments: usize,
        gamma_up: Vec<f64>,
        gamma_dn: Vec<f64>,
    ) -> Result<Self> {
        let len = n_steps * n_instruments;
        if gamma_up.len() != len || gamma_dn.len() != len {
            return Err(Error::Shape(format!(
                "cost vectors need {len} entries, got {}/{}",
                gamma_up.len(),
                gamma_dn.len()
            )));
        }
        if gamma_up.iter().chain(&gamma_dn).any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidParam("spreads must be non-negative".into()));
        }
        Ok(Self {
            n_steps,
            n_instruments,
            gamma_up,
            gamma_dn,
            mode: CostMode::Proportional,
            constraint: None,
        })
    }

    pub fn uniform(n_steps: usize, n_instruments: usize, gamma: f64) -> Self {
        let len = n_steps * n_instruments;
        Self {
            n_steps,
            n_instruments,
            gamma_up: vec![gamma; len],
            gamma_dn: vec![gamma; len],
            mode: CostMode::Proportional,
            constraint: None,
        }
    }

    pub fn zero(n_steps: usize, n_instruments: usize) -> Self {
        Self::uniform(n_steps, n_instruments, 0.0)
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = Some(constraint);
        self.mode = CostMode::Generalized;
        self
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.gamma_up.iter_mut().for_each(|g| *g *= k);
        out.gamma_dn.iter_mut().for_each(|g| *g *= k);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.gamma_up.iter().chain(&self.gamma_dn).all(|g| *g == 0.0) && self.constraint.is_none()
    }

    pub fn check_shape(&self, n_steps: usize, n_instruments: usize) -> Result<()> {
        if self.n_steps != n_steps || self.n_instruments != n_instruments {
            return Err(Error::Shape(format!(
                "cost spec is [{} x {}], paths are [{n_steps} x {n_instruments}]",
                self.n_steps, self.n_instruments
            )));
        }
        if let Some(Constraint::Box { bounds }) = &self.constraint {
            if bounds.len() != n_instruments {
                return Err(Error::Shape("box bounds length".into()));
            }
        }
        if let Some(Constraint::Quadratic { sigma, .. }) = &self.constraint {
            if sigma.len() != n_instruments * n_instruments {
                return Err(Error::Shape("quadratic constraint matrix size".into()));
            }
        }
        Ok(())
    }

    pub fn up(&self, t: usize) -> &[f64] {
        &self.gamma_up[t * self.n_instruments..(t + 1) * self.n_instruments]
    }

    pub fn dn(&self, t: usize) -> &[f64] {
        &self.gamma_dn[t * self.n_instruments..(t + 1) * self.n_instruments]
    }

    /// Cost of trading `a` at step `t`.
    pub fn cost(&self, a: &[f64], t: usize) -> f64 {
        match self.mode {
            CostMode::Proportional => proportional_cost(a, self.up(t), self.dn(t)),
            CostMode::Generalized => generalized_cost(a, self, t),
        }
    }

    /// Subgradient of the proportional part at `a`, using 0 at kinks.
    pub fn subgradient(&self, a: &[f64], t: usize, out: &mut [f64]) {
        let up = self.up(t);
        let dn = self.dn(t);
        for i in 0..a.len() {
            out[i] = if a[i] > 0.0 {
                up[i]
            } else if a[i] < 0.0 {
                -dn[i]
            } else {
                0.0
            };
        }
    }
}

/// `gamma_up . a^+ + gamma_dn . a^-`; infinite spreads only bite when the
/// corresponding side is actually traded.
pub fn proportional_cost(a: &[f64], gamma_up: &[f64], gamma_dn: &[f64]) -> f64 {
    let mut c = 0.0;
    for ((x, u), d) in a.iter().zip(gamma_up).zip(gamma_dn) {
        if *x > 0.0 {
            c += u * x;
        } else if *x < 0.0 {
            c -= d * x;
        }
    }
    c
}

/// Proportional cost inside the constraint set, `+inf` outside.
pub fn generalized_cost(a: &[f64], spec: &CostSpec, t: usize) -> f64 {
    if let Some(c) = &spec.constraint {
        if !c.admits(a) {
            return f64::INFINITY;
        }
    }
    proportional_cost(a, spec.up(t), spec.dn(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_action_is_free() {
        assert_eq!(proportional_cost(&[0.0, 0.0], &[0.3, f64::INFINITY], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn mixed_signs() {
        let c = proportional_cost(&[2.0, -3.0], &[0.01, 0.01], &[0.02, 0.02]);
        assert!((c - 0.08).abs() < 1e-15);
    }

    #[test]
    fn unbuyable_asset() {
        assert_eq!(proportional_cost(&[1.0, 0.0], &[f64::INFINITY, 0.0], &[0.0, 0.0]), f64::INFINITY);
        // selling an unbuyable asset is fine
        assert_eq!(proportional_cost(&[-1.0], &[f64::INFINITY], &[0.5]), 0.5);
    }

    #[test]
    fn box_constraint() {
        let spec = CostSpec::uniform(1, 2, 0.01).with_constraint(Constraint::Box {
            bounds: vec![1.0, 1.0],
        });
        assert!((spec.cost(&[0.5, -1.0], 0) - 0.015).abs() < 1e-15);
        assert_eq!(spec.cost(&[1.5, 0.0], 0), f64::INFINITY);
    }

    #[test]
    fn quadratic_constraint_boundary_and_outside() {
        let sigma = vec![2.0, 0.5, 0.5, 1.0];
        let max_risk = 3.0;
        let spec = CostSpec::uniform(1, 2, 0.01).with_constraint(Constraint::Quadratic {
            sigma: sigma.clone(),
            max_risk,
        });
        // a = s * (1, 1): a.Sigma.a = s^2 * 4 = max_risk at s = sqrt(3)/2
        let s = (max_risk / 4.0f64).sqrt();
        let a = [s, s];
        assert!((quad_form(&sigma, &a) - max_risk).abs() < 1e-12);
        let inside = [s * (1.0 - 1e-12), s * (1.0 - 1e-12)];
        assert!((spec.cost(&inside, 0) - 0.02 * s).abs() < 1e-12);
        assert_eq!(spec.cost(&[2.0, 2.0], 0), f64::INFINITY);
    }

    #[test]
    fn generalized_reduces_to_proportional() {
        let mut spec = CostSpec::uniform(1, 2, 0.01);
        spec.mode = CostMode::Generalized;
        assert_eq!(spec.cost(&[3.0, -1.0], 0), proportional_cost(&[3.0, -1.0], spec.up(0), spec.dn(0)));
    }

    proptest! {
        #[test]
        fn cost_is_convex(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            lam in 0.0f64..1.0,
            up in proptest::collection::vec(0.0f64..0.1, 3),
            dn in proptest::collection::vec(0.0f64..0.1, 3),
        ) {
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
            let lhs = proportional_cost(&mid, &up, &dn);
            let rhs = lam * proportional_cost(&a, &up, &dn) + (1.0 - lam) * proportional_cost(&b, &up, &dn);
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
