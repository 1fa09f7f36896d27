//! Two-hidden-layer MLP with tanh activations and an optional layer
//! normalization (learned scale/shift) on the output. Forward returns a cache
//! holding exactly the intermediates the hand-written backward needs.

use super::matrix::Mat;

/// Shape and flags of one MLP slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub layer_norm: bool,
}

impl MlpSpec {
    pub fn parameter_count(&self) -> usize {
        let MlpSpec {
            in_dim,
            hidden,
            out_dim,
            layer_norm,
        } = *self;
        let linear = hidden * in_dim + hidden + hidden * hidden + hidden + out_dim * hidden + out_dim;
        linear + if layer_norm { 2 * out_dim } else { 0 }
    }

    /// Multiply-add FLOPs for one row, per the 2 * (in*h + h*h + h*out) rule.
    pub fn flops_per_row(&self) -> u64 {
        2 * (self.in_dim * self.hidden + self.hidden * self.hidden + self.hidden * self.out_dim)
            as u64
    }
}

/// Borrowed views of one MLP's tensors inside the flat parameter vector.
pub struct MlpParams<'a> {
    pub spec: MlpSpec,
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub w3: &'a [f64],
    pub b3: &'a [f64],
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
}

/// Mutable gradient views with the same layout.
pub struct MlpGrads<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
    pub w3: &'a mut [f64],
    pub b3: &'a mut [f64],
    pub gamma: &'a mut [f64],
    pub beta: &'a mut [f64],
}

pub struct MlpCache {
    pub input: Mat,
    a1: Mat,
    a2: Mat,
    /// Layer-norm intermediates: normalized rows and per-row 1/std.
    ln: Option<(Mat, Vec<f64>)>,
}

const LN_EPSILON: f64 = 1e-8;

fn wrap(mat: &[f64], rows: usize, cols: usize) -> Mat {
    Mat {
        rows,
        cols,
        data: mat.to_vec(),
    }
}

fn tanh_inplace(m: &mut Mat) {
    for v in &mut m.data {
        *v = v.tanh();
    }
}

/// Forward pass over a batch of rows; returns output and cache.
pub fn mlp_forward(params: &MlpParams, input: Mat) -> (Mat, MlpCache) {
    let spec = params.spec;
    debug_assert_eq!(input.cols, spec.in_dim);
    let w1 = wrap(params.w1, spec.hidden, spec.in_dim);
    let w2 = wrap(params.w2, spec.hidden, spec.hidden);
    let w3 = wrap(params.w3, spec.out_dim, spec.hidden);

    let mut a1 = Mat::matmul_wt(&input, &w1);
    a1.add_bias(params.b1);
    tanh_inplace(&mut a1);
    let mut a2 = Mat::matmul_wt(&a1, &w2);
    a2.add_bias(params.b2);
    tanh_inplace(&mut a2);
    let mut out = Mat::matmul_wt(&a2, &w3);
    out.add_bias(params.b3);

    let ln = if spec.layer_norm {
        let d = spec.out_dim as f64;
        let mut normalized = Mat::zeros(out.rows, out.cols);
        let mut inv_std = Vec::with_capacity(out.rows);
        for i in 0..out.rows {
            let (mean, var) = {
                let row = out.row(i);
                let mean = row.iter().sum::<f64>() / d;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                (mean, var)
            };
            let s = 1.0 / (var + LN_EPSILON).sqrt();
            inv_std.push(s);
            for c in 0..out.cols {
                let xhat = (out.row(i)[c] - mean) * s;
                normalized.row_mut(i)[c] = xhat;
                out.row_mut(i)[c] = xhat * params.gamma[c] + params.beta[c];
            }
        }
        Some((normalized, inv_std))
    } else {
        None
    };

    let cache = MlpCache { input, a1, a2, ln };
    (out, cache)
}

/// Backward pass: accumulates parameter gradients and returns the adjoint of
/// the input batch.
pub fn mlp_backward(
    params: &MlpParams,
    grads: &mut MlpGrads,
    cache: &MlpCache,
    d_out: &Mat,
) -> Mat {
    let spec = params.spec;
    let dz3 = if let Some((normalized, inv_std)) = &cache.ln {
        // y = gamma * xhat + beta
        let rows = d_out.rows;
        let d = spec.out_dim;
        let mut dz = Mat::zeros(rows, d);
        for i in 0..rows {
            let dy = d_out.row(i);
            let xh = normalized.row(i);
            for c in 0..d {
                grads.gamma[c] += dy[c] * xh[c];
                grads.beta[c] += dy[c];
            }
            // dxhat = dy * gamma; dz = s * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for c in 0..d {
                let dxh = dy[c] * params.gamma[c];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[c];
            }
            let dd = d as f64;
            mean_dxh /= dd;
            mean_dxh_xh /= dd;
            let s = inv_std[i];
            let dzrow = dz.row_mut(i);
            for c in 0..d {
                let dxh = dy[c] * params.gamma[c];
                dzrow[c] = s * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
            }
        }
        dz
    } else {
        d_out.clone()
    };

    let w2 = wrap(params.w2, spec.hidden, spec.hidden);
    let w3 = wrap(params.w3, spec.out_dim, spec.hidden);
    let w1 = wrap(params.w1, spec.hidden, spec.in_dim);

    Mat::accumulate_wt_grad(grads.w3, &dz3, &cache.a2);
    Mat::accumulate_bias_grad(grads.b3, &dz3);
    let mut da2 = Mat::matmul_w(&dz3, &w3);

    // through tanh: dz2 = da2 * (1 - a2^2)
    for (v, a) in da2.data.iter_mut().zip(&cache.a2.data) {
        *v *= 1.0 - a * a;
    }
    Mat::accumulate_wt_grad(grads.w2, &da2, &cache.a1);
    Mat::accumulate_bias_grad(grads.b2, &da2);
    let mut da1 = Mat::matmul_w(&da2, &w2);

    for (v, a) in da1.data.iter_mut().zip(&cache.a1.data) {
        *v *= 1.0 - a * a;
    }
    Mat::accumulate_wt_grad(grads.w1, &da1, &cache.input);
    Mat::accumulate_bias_grad(grads.b1, &da1);
    Mat::matmul_w(&da1, &w1)
}
