//! Small statistics helpers shared by metrics and acceptance checks.

use crate::rng;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Weighted mean `sum w x` (weights summing to one) and the standard error of
/// that self-normalised estimator.
pub fn weighted_mean_se(xs: &[f64], w: &[f64]) -> (f64, f64) {
    let m: f64 = xs.iter().zip(w).map(|(x, q)| x * q).sum();
    let var: f64 = xs.iter().zip(w).map(|(x, q)| q * q * (x - m).powi(2)).sum();
    (m, var.sqrt())
}

/// Effective sample size `1 / sum q^2`.
pub fn ess(q: &[f64]) -> f64 {
    1.0 / q.iter().map(|x| x * x).sum::<f64>()
}

/// Bootstrap standard error of a weighted statistic. Paths are resampled with
/// replacement; the weights travel with their path and are renormalised.
pub fn bootstrap_se<F>(xs: &[f64], w: &[f64], n_boot: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let n = xs.len();
    if n < 2 || n_boot < 2 {
        return 0.0;
    }
    let mut rng = rng::stream(seed, 0xb007);
    let mut bx = vec![0.0; n];
    let mut bw = vec![0.0; n];
    let mut vals = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut tot = 0.0;
        for k in 0..n {
            let j = rng::index(&mut rng, n);
            bx[k] = xs[j];
            bw[k] = w[j];
            tot += w[j];
        }
        if tot <= 0.0 {
            continue;
        }
        bw.iter_mut().for_each(|q| *q /= tot);
        vals.push(stat(&bx, &bw));
    }
    let (_, se) = mean_se(&vals);
    se * (vals.len() as f64).sqrt()
}

/// Quantile by linear interpolation on the sorted sample, `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Centred moving average with window `w` (shrinking at the ends).
pub fn smooth(xs: &[f64], w: usize) -> Vec<f64> {
    let h = w / 2;
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(xs.len());
            mean(&xs[lo..hi])
        })
        .collect()
}
