//! Discrete local volatility (DLV) surfaces.
//!
//! Calls are quoted on maturities `0 < tau_1 < .. < tau_m` (years) and relative
//! strikes `x_1 < .. < x_n` with `S_0 = 1`. Two ghost strikes `x_0 = 0` and
//! `x_{n+1} = 1 + 2 x_n` carry intrinsic value, as does maturity `tau_0 = 0`.
//!
//! With `Delta^{j,i} = (C^{j,i+1} - C^{j,i}) / (x_{i+1} - x_i)`,
//! `Gamma^{j,i} = (Delta^{j,i} - Delta^{j,i-1}) / ((x_{i+1} - x_{i-1}) / 2)` and the
//! calendar difference `Theta^{j,i} = (C^{j,i} - C^{j-1,i}) / (tau_j - tau_{j-1})`,
//! the DLV is `sqrt(2 Theta / (x_i^2 Gamma))`, or `+inf` on a negative butterfly,
//! a negative calendar spread, or `Gamma = 0` with `Theta > 0`.
//!
//! Rearranged, the same relation is an implicit finite-difference step
//! `(I - dtau L(sigma^j)) C^j = C^{j-1}`, so prices are recovered maturity by
//! maturity with one tridiagonal solve each.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const DOMINANCE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallGrid {
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
    /// `[m x n]`, row per maturity.
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlvSurface {
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
    /// `[m x n]`, row per maturity; `+inf` flags a static-arbitrage cell.
    pub values: Vec<f64>,
}

fn check_grids(maturities: &[f64], strikes: &[f64], len: usize) -> Result<()> {
    if maturities.is_empty() || strikes.is_empty() {
        return Err(Error::InvalidParam("empty grid".into()));
    }
    if maturities[0] <= 0.0 || maturities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam(
            "maturities must be positive and strictly increasing".into(),
        ));
    }
    if strikes[0] <= 0.0 || strikes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam(
            "strikes must be positive and strictly increasing".into(),
        ));
    }
    if len != maturities.len() * strikes.len() {
        return Err(Error::Shape(format!(
            "grid values: {len}, expected {}",
            maturities.len() * strikes.len()
        )));
    }
    Ok(())
}

/// Strike grid including both ghost strikes.
pub fn extended_strikes(strikes: &[f64]) -> Vec<f64> {
    let n = strikes.len();
    let mut x = Vec::with_capacity(n + 2);
    x.push(0.0);
    x.extend_from_slice(strikes);
    x.push(1.0 + 2.0 * strikes[n - 1]);
    x
}

pub fn intrinsic(x: f64) -> f64 {
    (1.0 - x).max(0.0)
}

impl CallGrid {
    pub fn new(maturities: Vec<f64>, strikes: Vec<f64>, prices: Vec<f64>) -> Result<Self> {
        check_grids(&maturities, &strikes, prices.len())?;
        Ok(Self {
            maturities,
            strikes,
            prices,
        })
    }

    pub fn price(&self, j: usize, i: usize) -> f64 {
        self.prices[j * self.strikes.len() + i]
    }

    /// Prices of row `j` (`j = 0` is the zero maturity) on the extended strike grid.
    fn extended_row(&self, j: usize) -> Vec<f64> {
        let x = extended_strikes(&self.strikes);
        let n = self.strikes.len();
        let mut row: Vec<f64> = x.iter().map(|&k| intrinsic(k)).collect();
        if j > 0 {
            row[1..=n].copy_from_slice(&self.prices[(j - 1) * n..j * n]);
        }
        row
    }

    /// `(Gamma, Theta)` per cell, `[m x n]` each.
    pub fn greeks(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.strikes.len();
        let m = self.maturities.len();
        let x = extended_strikes(&self.strikes);
        let mut gamma = vec![0.0; m * n];
        let mut theta = vec![0.0; m * n];
        let mut prev = self.extended_row(0);
        for j in 0..m {
            let cur = self.extended_row(j + 1);
            let tau_prev = if j == 0 { 0.0 } else { self.maturities[j - 1] };
            let dtau = self.maturities[j] - tau_prev;
            for i in 1..=n {
                let d_up = (cur[i + 1] - cur[i]) / (x[i + 1] - x[i]);
                let d_dn = (cur[i] - cur[i - 1]) / (x[i] - x[i - 1]);
                gamma[j * n + i - 1] = (d_up - d_dn) / (0.5 * (x[i + 1] - x[i - 1]));
                theta[j * n + i - 1] = (cur[i] - prev[i]) / dtau;
            }
            prev = cur;
        }
        (gamma, theta)
    }
}

impl DlvSurface {
    pub fn new(maturities: Vec<f64>, strikes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_grids(&maturities, &strikes, values.len())?;
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::InvalidParam("DLV values must be >= 0 or +inf".into()));
        }
        Ok(Self {
            maturities,
            strikes,
            values,
        })
    }

    pub fn flat(maturities: Vec<f64>, strikes: Vec<f64>, sigma: f64) -> Result<Self> {
        let len = maturities.len() * strikes.len();
        Self::new(maturities, strikes, vec![sigma; len])
    }

    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.strikes.len() + i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn dlv_cell(gamma: f64, theta: f64, x: f64) -> f64 {
    if gamma < 0.0 || theta < 0.0 || (gamma == 0.0 && theta > 0.0) {
        f64::INFINITY
    } else if theta == 0.0 {
        0.0
    } else {
        (2.0 * theta / (x * x * gamma)).sqrt()
    }
}

pub fn dlv_from_calls(grid: &CallGrid) -> DlvSurface {
    let n = grid.strikes.len();
    let (gamma, theta) = grid.greeks();
    let values = (0..gamma.len())
        .map(|c| dlv_cell(gamma[c], theta[c], grid.strikes[c % n]))
        .collect();
    DlvSurface {
        maturities: grid.maturities.clone(),
        strikes: grid.strikes.clone(),
        values,
    }
}

/// Solve a tridiagonal system. `lower[0]` and `upper[n-1]` are ignored.
/// Diagonally dominant systems use the Thomas algorithm; others fall back to
/// elimination with partial pivoting.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> std::result::Result<Vec<f64>, (usize, String)> {
    let n = diag.len();
    let dominant = (0..n).all(|i| {
        let off = if i > 0 { lower[i].abs() } else { 0.0 } + if i + 1 < n { upper[i].abs() } else { 0.0 };
        diag[i].abs() + DOMINANCE_TOL >= off
    });
    if dominant {
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut b = diag[0];
        if b.abs() < DOMINANCE_TOL {
            return Err((0, "zero pivot".into()));
        }
        c[0] = if n > 1 { upper[0] / b } else { 0.0 };
        d[0] = rhs[0] / b;
        for i in 1..n {
            b = diag[i] - lower[i] * c[i - 1];
            if b.abs() < DOMINANCE_TOL {
                return Err((i, "zero pivot".into()));
            }
            c[i] = if i + 1 < n { upper[i] / b } else { 0.0 };
            d[i] = (rhs[i] - lower[i] * d[i - 1]) / b;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        return Ok(d);
    }
    // banded elimination with partial pivoting: rows get at most one extra
    // super-diagonal entry
    let mut a = vec![[0.0f64; 4]; n]; // columns i-1, i, i+1, i+2 relative to row i
    let mut r = rhs.to_vec();
    for i in 0..n {
        a[i][0] = if i > 0 { lower[i] } else { 0.0 };
        a[i][1] = diag[i];
        a[i][2] = if i + 1 < n { upper[i] } else { 0.0 };
    }
    // represent row i as dense entries on columns i-1..i+2
    let get = |a: &Vec<[f64; 4]>, row: usize, col: usize| -> f64 {
        let off = col as isize - row as isize + 1;
        if (0..4).contains(&off) {
            a[row][off as usize]
        } else {
            0.0
        }
    };
    let set = |a: &mut Vec<[f64; 4]>, row: usize, col: usize, v: f64| {
        let off = col as isize - row as isize + 1;
        a[row][off as usize] = v;
    };
    for k in 0..n {
        if k + 1 < n && get(&a, k + 1, k).abs() > get(&a, k, k).abs() {
            // swap rows k and k+1 over columns k..k+2
            for col in k..(k + 3).min(n) {
                let x = get(&a, k, col);
                let y = get(&a, k + 1, col);
                set(&mut a, k, col, y);
                set(&mut a, k + 1, col, x);
            }
            if k > 0 {
                // row k+1 had no entry at k-1 after elimination
            }
            r.swap(k, k + 1);
        }
        let piv = get(&a, k, k);
        if piv.abs() < DOMINANCE_TOL {
            return Err((k, "singular system".into()));
        }
        if k + 1 < n {
            let f = get(&a, k + 1, k) / piv;
            for col in k..(k + 3).min(n) {
                let v = get(&a, k + 1, col) - f * get(&a, k, col);
                set(&mut a, k + 1, col, v);
            }
            r[k + 1] -= f * r[k];
        }
    }
    let mut xs = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = r[k];
        for (col, x) in xs.iter().enumerate().take((k + 3).min(n)).skip(k + 1) {
            s -= get(&a, k, col) * x;
        }
        xs[k] = s / get(&a, k, k);
    }
    Ok(xs)
}

/// Rebuild call prices from a finite DLV surface by sequential implicit steps.
pub fn calls_from_dlv(surface: &DlvSurface) -> Result<CallGrid> {
    let n = surface.strikes.len();
    let m = surface.maturities.len();
    if let Some(c) = surface.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Tridiagonal {
            maturity: c / n,
            strike: c % n,
            detail: format!("DLV value {} is not a finite non-negative number", surface.values[c]),
        });
    }
    let x = extended_strikes(&surface.strikes);
    let hi = intrinsic(x[n + 1]);
    let mut prev: Vec<f64> = surface.strikes.iter().map(|&k| intrinsic(k)).collect();
    let mut prices = Vec::with_capacity(m * n);
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for j in 0..m {
        let dtau = surface.maturities[j] - if j == 0 { 0.0 } else { surface.maturities[j - 1] };
        let mut rhs = prev.clone();
        for r in 0..n {
            let i = r + 1;
            let h_dn = x[i] - x[i - 1];
            let h_up = x[i + 1] - x[i];
            let sig = surface.values[j * n + r];
            let alpha = dtau * 0.5 * sig * sig * x[i] * x[i] / (0.5 * (h_up + h_dn));
            lower[r] = -alpha / h_dn;
            upper[r] = -alpha / h_up;
            diag[r] = 1.0 + alpha / h_dn + alpha / h_up;
            if r == 0 {
                rhs[r] += alpha / h_dn * 1.0; // ghost x_0 = 0 has intrinsic 1
            }
            if r == n - 1 {
                rhs[r] += alpha / h_up * hi;
            }
        }
        let sol = solve_tridiagonal(&lower, &diag, &upper, &rhs).map_err(|(r, detail)| {
            Error::Tridiagonal {
                maturity: j,
                strike: r,
                detail,
            }
        })?;
        prices.extend_from_slice(&sol);
        prev = sol;
    }
    Ok(CallGrid {
        maturities: surface.maturities.clone(),
        strikes: surface.strikes.clone(),
        prices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArbKind {
    /// `Gamma < 0`.
    Butterfly,
    /// `Theta < 0`.
    Calendar,
    /// `Gamma = 0` with `Theta > 0`.
    FlatGammaWithTheta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbViolation {
    pub maturity_index: usize,
    pub strike_index: usize,
    pub kind: ArbKind,
    pub magnitude: f64,
}

pub fn static_arbitrage_report(grid: &CallGrid) -> Vec<ArbViolation> {
    let n = grid.strikes.len();
    let (gamma, theta) = grid.greeks();
    let mut out = Vec::new();
    for c in 0..gamma.len() {
        let (j, i) = (c / n, c % n);
        let mut push = |kind, magnitude| {
            out.push(ArbViolation {
                maturity_index: j,
                strike_index: i,
                kind,
                magnitude,
            })
        };
        if gamma[c] < 0.0 {
            push(ArbKind::Butterfly, -gamma[c]);
        }
        if theta[c] < 0.0 {
            push(ArbKind::Calendar, -theta[c]);
        }
        if gamma[c] == 0.0 && theta[c] > 0.0 {
            push(ArbKind::FlatGammaWithTheta, theta[c]);
        }
    }
    out
}

/// Surface CSV: header `maturity,<strikes..>`, one row per maturity.
pub fn write_surface_csv<W: Write>(
    w: W,
    maturities: &[f64],
    strikes: &[f64],
    values: &[f64],
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["maturity".to_string()];
    header.extend(strikes.iter().map(|k| k.to_string()));
    wr.write_record(&header)?;
    let n = strikes.len();
    for (j, tau) in maturities.iter().enumerate() {
        let mut row = vec![tau.to_string()];
        row.extend(values[j * n..(j + 1) * n].iter().map(|v| v.to_string()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Inverse of [`write_surface_csv`]: `(maturities, strikes, values)`.
pub fn read_surface_csv<R: Read>(r: R) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("not a number: {s:?}")))
    };
    let header = rd.headers()?.clone();
    if header.get(0) != Some("maturity") {
        return Err(Error::Format("first header column must be 'maturity'".into()));
    }
    let strikes = header.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
    let mut maturities = Vec::new();
    let mut values = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != strikes.len() + 1 {
            return Err(Error::Format(format!(
                "row has {} fields, expected {}",
                rec.len(),
                strikes.len() + 1
            )));
        }
        maturities.push(parse(&rec[0])?);
        for f in rec.iter().skip(1) {
            values.push(parse(f)?);
        }
    }
    Ok((maturities, strikes, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::bs_call_price;

    fn bs_grid(maturities: &[f64], strikes: &[f64], sigma: f64) -> CallGrid {
        let prices = maturities
            .iter()
            .flat_map(|&t| strikes.iter().map(move |&k| bs_call_price(1.0 / k, sigma, t) * k))
            .collect();
        CallGrid::new(maturities.to_vec(), strikes.to_vec(), prices).unwrap()
    }

    fn coarse_grid() -> (Vec<f64>, Vec<f64>) {
        let mats = vec![20.0 / 252.0, 40.0 / 252.0, 60.0 / 252.0];
        let strikes = (0..7).map(|i| 0.85 + 0.05 * i as f64).collect();
        (mats, strikes)
    }

    #[test]
    fn flat_bs_surface_is_finite() {
        let (mats, strikes) = coarse_grid();
        let s = dlv_from_calls(&bs_grid(&mats, &strikes, 0.15));
        assert!(s.is_finite());
    }

    #[test]
    fn flat_bs_dlv_close_to_sigma_on_fine_grid() {
        // daily maturities and a fine strike grid: away from the shortest
        // maturities and the wings the discrete local vol is close to sigma
        let mats: Vec<f64> = (1..=60).map(|d| d as f64 / 252.0).collect();
        let strikes: Vec<f64> = (0..=100).map(|i| 0.5 + 0.01 * i as f64).collect();
        let s = dlv_from_calls(&bs_grid(&mats, &strikes, 0.15));
        for j in 20..60 {
            for (i, k) in strikes.iter().enumerate() {
                if (0.9 - 1e-9..=1.1 + 1e-9).contains(k) {
                    let v = s.value(j, i);
                    assert!((v / 0.15 - 1.0).abs() < 0.05, "cell ({j},{i}) = {v}");
                }
            }
        }
    }

    #[test]
    fn butterfly_bump_flags_one_cell() {
        let (mats, strikes) = coarse_grid();
        let mut g = bs_grid(&mats, &strikes, 0.15);
        let c = 2 * 7 + 3;
        g.prices[c] += 0.01;
        let rep = static_arbitrage_report(&g);
        assert_eq!(rep.len(), 1, "{rep:?}");
        assert_eq!((rep[0].maturity_index, rep[0].strike_index, rep[0].kind), (2, 3, ArbKind::Butterfly));
        assert_eq!(dlv_from_calls(&g).value(2, 3), f64::INFINITY);
    }

    #[test]
    fn calendar_violation_flags_one_cell() {
        let (mats, strikes) = coarse_grid();
        let mut g = bs_grid(&mats, &strikes, 0.15);
        // at the money, the longest maturity dips just below the one before
        g.prices[2 * 7 + 3] = g.prices[7 + 3] - 1e-5;
        let rep = static_arbitrage_report(&g);
        assert_eq!(rep.len(), 1, "{rep:?}");
        assert_eq!((rep[0].maturity_index, rep[0].strike_index, rep[0].kind), (2, 3, ArbKind::Calendar));
        assert_eq!(dlv_from_calls(&g).value(2, 3), f64::INFINITY);
    }

    #[test]
    fn intrinsic_grid_has_zero_dlv() {
        let strikes = vec![0.9, 1.0, 1.1];
        let prices = strikes.iter().map(|&k| intrinsic(k)).collect();
        let g = CallGrid::new(vec![0.1], strikes, prices).unwrap();
        // the kink at x = 1 has positive gamma but zero theta
        let s = dlv_from_calls(&g);
        assert!(s.values.iter().all(|v| *v == 0.0), "{:?}", s.values);
    }

    #[test]
    fn zero_dlv_gives_intrinsic() {
        let (mats, strikes) = coarse_grid();
        let s = DlvSurface::flat(mats, strikes.clone(), 0.0).unwrap();
        let g = calls_from_dlv(&s).unwrap();
        for j in 0..3 {
            for (i, k) in strikes.iter().enumerate() {
                assert!((g.price(j, i) - intrinsic(*k)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn round_trip_from_bs_prices() {
        let (mats, strikes) = coarse_grid();
        let g = bs_grid(&mats, &strikes, 0.2);
        let back = calls_from_dlv(&dlv_from_calls(&g)).unwrap();
        let err = g.prices.iter().zip(&back.prices).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn infinite_cell_rejected() {
        let (mats, strikes) = coarse_grid();
        let mut s = DlvSurface::flat(mats, strikes, 0.15).unwrap();
        s.values[5] = f64::INFINITY;
        assert!(matches!(calls_from_dlv(&s), Err(Error::Tridiagonal { maturity: 0, strike: 5, .. })));
    }

    #[test]
    fn bumping_one_dlv_never_lowers_prices() {
        let (mats, strikes) = coarse_grid();
        let base = DlvSurface::flat(mats, strikes, 0.15).unwrap();
        let c0 = calls_from_dlv(&base).unwrap();
        for cell in 0..base.values.len() {
            let mut s = base.clone();
            s.values[cell] += 0.05;
            let c1 = calls_from_dlv(&s).unwrap();
            assert!(c1.prices[cell] > c0.prices[cell]);
            assert!(c1.prices.iter().zip(&c0.prices).all(|(a, b)| *a >= *b - 1e-15));
        }
    }

    #[test]
    fn pivoting_fallback_matches_dense_solution() {
        // not diagonally dominant
        let lower = [0.0, 3.0, 1.0];
        let diag = [1.0, 1.0, 1.0];
        let upper = [2.0, 4.0, 0.0];
        let x_true = [1.0, -2.0, 0.5];
        let rhs = [
            diag[0] * x_true[0] + upper[0] * x_true[1],
            lower[1] * x_true[0] + diag[1] * x_true[1] + upper[1] * x_true[2],
            lower[2] * x_true[1] + diag[2] * x_true[2],
        ];
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for k in 0..3 {
            assert!((x[k] - x_true[k]).abs() < 1e-12, "{x:?}");
        }
    }

    #[test]
    fn csv_round_trip_keeps_infinity() {
        let mut buf = Vec::new();
        write_surface_csv(&mut buf, &[0.1, 0.2], &[0.9, 1.1], &[0.1, f64::INFINITY, 0.2, 0.3]).unwrap();
        let (m, k, v) = read_surface_csv(&buf[..]).unwrap();
        assert_eq!(m, vec![0.1, 0.2]);
        assert_eq!(k, vec![0.9, 1.1]);
        assert_eq!(v[1], f64::INFINITY);
    }
}
