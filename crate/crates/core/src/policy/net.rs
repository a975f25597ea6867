//! Dense feedforward and Elman recurrent networks over a flat parameter
//! vector, with a hand-written reverse pass.
//!
//! Inputs are `[rows x n_in]` with rows ordered `(path, step)`, path-major.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Arch {
    /// ReLU hidden layers shared across steps.
    Feedforward { hidden: Vec<usize> },
    /// Stacked tanh Elman layers unrolled over the steps of each path.
    Recurrent { hidden: Vec<usize> },
}

impl Arch {
    pub fn default_feedforward() -> Self {
        Arch::Feedforward { hidden: vec![64, 64] }
    }

    pub fn default_recurrent() -> Self {
        Arch::Recurrent { hidden: vec![32, 32] }
    }

    pub fn hidden(&self) -> &[usize] {
        match self {
            Arch::Feedforward { hidden } | Arch::Recurrent { hidden } => hidden,
        }
    }

    pub fn n_params(&self, n_in: usize, n_out: usize) -> usize {
        let h = self.hidden();
        let mut total = 0;
        let mut prev = n_in;
        for &w in h {
            total += prev * w + w;
            if matches!(self, Arch::Recurrent { .. }) {
                total += w * w;
            }
            prev = w;
        }
        total + prev * n_out + n_out
    }
}

/// Offsets of one layer's blocks in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Block {
    rows: usize,
    cols: usize,
    w: usize,
    u: Option<usize>,
    b: usize,
}

fn layout(arch: &Arch, n_in: usize, n_out: usize) -> Vec<Block> {
    let recurrent = matches!(arch, Arch::Recurrent { .. });
    let mut out = Vec::new();
    let mut off = 0;
    let mut prev = n_in;
    for &w in arch.hidden().iter().chain(std::iter::once(&n_out)) {
        let is_output = out.len() == arch.hidden().len();
        let wo = off;
        off += prev * w;
        let u = if recurrent && !is_output {
            let uo = off;
            off += w * w;
            Some(uo)
        } else {
            None
        };
        let b = off;
        off += w;
        out.push(Block {
            rows: prev,
            cols: w,
            w: wo,
            u,
            b,
        });
        prev = w;
    }
    out
}

fn mat<'a>(p: &'a [f64], off: usize, r: usize, c: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((r, c), &p[off..off + r * c]).expect("layout")
}

fn mat_mut<'a>(p: &'a mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((r, c), &mut p[off..off + r * c]).expect("layout")
}

fn vec_view(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn vec_mut(p: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + n])
}

/// Initialise: He-uniform hidden weights, zero biases, zero output layer.
pub(crate) fn init_params(arch: &Arch, n_in: usize, n_out: usize, r: &mut crate::rng::Stream) -> Vec<f64> {
    let mut p = vec![0.0; arch.n_params(n_in, n_out)];
    let blocks = layout(arch, n_in, n_out);
    let last = blocks.len() - 1;
    for blk in &blocks[..last] {
        let bound = (6.0 / blk.rows as f64).sqrt();
        for v in &mut p[blk.w..blk.w + blk.rows * blk.cols] {
            *v = bound * (2.0 * crate::rng::uniform(r) - 1.0);
        }
        if let Some(u) = blk.u {
            // keep the recurrence contractive at the start
            let bound = 0.5 * (3.0 / blk.cols as f64).sqrt();
            for v in &mut p[u..u + blk.cols * blk.cols] {
                *v = bound * (2.0 * crate::rng::uniform(r) - 1.0);
            }
        }
    }
    p
}

pub(crate) enum Cache {
    /// Layer inputs (`acts[0]` is the feature matrix) and pre-activations.
    Ff { acts: Vec<Array2<f64>>, pre: Vec<Array2<f64>> },
    /// `h[t][l]` is the hidden state of layer `l` after step `t`, `[paths x width]`.
    Rnn { x: Array2<f64>, h: Vec<Vec<Array2<f64>>>, n_steps: usize },
}

pub(crate) fn forward(
    arch: &Arch,
    params: &[f64],
    n_in: usize,
    n_out: usize,
    x: Array2<f64>,
    n_steps: usize,
) -> (Array2<f64>, Cache) {
    let blocks = layout(arch, n_in, n_out);
    let last = blocks.len() - 1;
    match arch {
        Arch::Feedforward { .. } => {
            let mut acts = vec![x];
            let mut pre = Vec::with_capacity(blocks.len());
            for (k, blk) in blocks.iter().enumerate() {
                let w = mat(params, blk.w, blk.rows, blk.cols);
                let mut z = acts[k].dot(&w);
                z += &vec_view(params, blk.b, blk.cols);
                if k == last {
                    return (z, Cache::Ff { acts, pre });
                }
                acts.push(z.mapv(|v| v.max(0.0)));
                pre.push(z);
            }
            unreachable!("output layer always present")
        }
        Arch::Recurrent { .. } => {
            let rows = x.nrows();
            let n_paths = rows / n_steps;
            let out_blk = blocks[last];
            let mut out = Array2::zeros((rows, n_out));
            let mut h: Vec<Vec<Array2<f64>>> = Vec::with_capacity(n_steps);
            for t in 0..n_steps {
                let mut layer_in = x.slice(s![t..;n_steps, ..]).to_owned();
                let mut hs = Vec::with_capacity(last);
                for (l, blk) in blocks[..last].iter().enumerate() {
                    let mut z = layer_in.dot(&mat(params, blk.w, blk.rows, blk.cols));
                    if t > 0 {
                        let u = mat(params, blk.u.expect("recurrent"), blk.cols, blk.cols);
                        general_mat_mul(1.0, &h[t - 1][l], &u, 1.0, &mut z);
                    }
                    z += &vec_view(params, blk.b, blk.cols);
                    z.mapv_inplace(f64::tanh);
                    hs.push(z.clone());
                    layer_in = z;
                }
                let mut o = layer_in.dot(&mat(params, out_blk.w, out_blk.rows, out_blk.cols));
                o += &vec_view(params, out_blk.b, out_blk.cols);
                out.slice_mut(s![t..;n_steps, ..]).assign(&o);
                debug_assert_eq!(o.nrows(), n_paths);
                h.push(hs);
            }
            (out, Cache::Rnn { x, h, n_steps })
        }
    }
}

/// Accumulate `d loss / d params` into `grad` given `d loss / d outputs`.
pub(crate) fn backward(
    arch: &Arch,
    params: &[f64],
    n_in: usize,
    n_out: usize,
    cache: &Cache,
    d_out: &Array2<f64>,
    grad: &mut [f64],
) {
    let blocks = layout(arch, n_in, n_out);
    let last = blocks.len() - 1;
    match cache {
        Cache::Ff { acts, pre } => {
            let mut delta = d_out.clone();
            for k in (0..blocks.len()).rev() {
                let blk = blocks[k];
                general_mat_mul(
                    1.0,
                    &acts[k].t(),
                    &delta,
                    1.0,
                    &mut mat_mut(grad, blk.w, blk.rows, blk.cols),
                );
                let mut gb = vec_mut(grad, blk.b, blk.cols);
                gb += &delta.sum_axis(Axis(0));
                if k == 0 {
                    break;
                }
                let mut up = delta.dot(&mat(params, blk.w, blk.rows, blk.cols).t());
                ndarray::Zip::from(&mut up)
                    .and(&pre[k - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0
                        }
                    });
                delta = up;
            }
        }
        Cache::Rnn { x, h, n_steps } => {
            let n_steps = *n_steps;
            let out_blk = blocks[last];
            let v = mat(params, out_blk.w, out_blk.rows, out_blk.cols);
            let mut carry: Vec<Option<Array2<f64>>> = vec![None; last];
            for t in (0..n_steps).rev() {
                let d_o = d_out.slice(s![t..;n_steps, ..]);
                general_mat_mul(
                    1.0,
                    &h[t][last - 1].t(),
                    &d_o,
                    1.0,
                    &mut mat_mut(grad, out_blk.w, out_blk.rows, out_blk.cols),
                );
                let mut gc = vec_mut(grad, out_blk.b, out_blk.cols);
                gc += &d_o.sum_axis(Axis(0));
                let mut from_above = d_o.dot(&v.t());
                for l in (0..last).rev() {
                    let blk = blocks[l];
                    let mut dz = from_above;
                    if let Some(c) = &carry[l] {
                        dz += c;
                    }
                    ndarray::Zip::from(&mut dz)
                        .and(&h[t][l])
                        .for_each(|d, &hv| *d *= 1.0 - hv * hv);
                    let owned_x;
                    let inp: ArrayView2<f64> = if l == 0 {
                        owned_x = x.slice(s![t..;n_steps, ..]).to_owned();
                        owned_x.view()
                    } else {
                        h[t][l - 1].view()
                    };
                    general_mat_mul(1.0, &inp.t(), &dz, 1.0, &mut mat_mut(grad, blk.w, blk.rows, blk.cols));
                    let u_off = blk.u.expect("recurrent");
                    if t > 0 {
                        general_mat_mul(
                            1.0,
                            &h[t - 1][l].t(),
                            &dz,
                            1.0,
                            &mut mat_mut(grad, u_off, blk.cols, blk.cols),
                        );
                        carry[l] = Some(dz.dot(&mat(params, u_off, blk.cols, blk.cols).t()));
                    } else {
                        carry[l] = None;
                    }
                    let mut gb = vec_mut(grad, blk.b, blk.cols);
                    gb += &dz.sum_axis(Axis(0));
                    from_above = dz.dot(&mat(params, blk.w, blk.rows, blk.cols).t());
                }
            }
        }
    }
}

/// Offsets of the output layer weights and bias.
pub(crate) fn output_block(arch: &Arch, n_in: usize, n_out: usize) -> (usize, usize) {
    let b = *layout(arch, n_in, n_out).last().expect("output layer");
    (b.w, b.b)
}
