//! Dense row-major matrix with the handful of kernels the network needs.
//! All parallel paths keep a fixed summation order so results are
//! bit-reproducible regardless of worker count.

use rayon::prelude::*;

/// Row-parallel kernels only engage above this many multiply-adds.
const PAR_FLOP_THRESHOLD: usize = 1 << 16;

/// Dot product over eight fixed partial accumulators. The strict scalar form
/// cannot be vectorized (floating-point sums may not be reassociated), so the
/// lanes are spelled out; the combination order is fixed, keeping results
/// bit-reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let a8 = &a[c * 8..c * 8 + 8];
        let b8 = &b[c * 8..c * 8 + 8];
        for j in 0..8 {
            acc[j] += a8[j] * b8[j];
        }
    }
    let mut sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for l in chunks * 8..a.len() {
        sum += a[l] * b[l];
    }
    sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            debug_assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y = x * w^T where w is (out x in); y is (n x out).
    pub fn matmul_wt(x: &Mat, w: &Mat) -> Mat {
        debug_assert_eq!(x.cols, w.cols);
        let n = x.rows;
        let out = w.rows;
        let inner = x.cols;
        let mut y = Mat::zeros(n, out);
        let work = n * out * inner;
        let body = |(i, yrow): (usize, &mut [f64])| {
            let xrow = &x.data[i * inner..(i + 1) * inner];
            for o in 0..out {
                let wrow = &w.data[o * inner..(o + 1) * inner];
                yrow[o] = dot(xrow, wrow);
            }
        };
        if work >= PAR_FLOP_THRESHOLD {
            y.data
                .par_chunks_mut(out)
                .enumerate()
                .for_each(body);
        } else {
            y.data.chunks_mut(out).enumerate().for_each(body);
        }
        y
    }

    /// dx = dy * w where dy is (n x out) and w is (out x in); dx is (n x in).
    pub fn matmul_w(dy: &Mat, w: &Mat) -> Mat {
        debug_assert_eq!(dy.cols, w.rows);
        let n = dy.rows;
        let inner = w.cols;
        let out = w.rows;
        let mut dx = Mat::zeros(n, inner);
        let work = n * out * inner;
        let body = |(i, dxrow): (usize, &mut [f64])| {
            let dyrow = &dy.data[i * out..(i + 1) * out];
            for o in 0..out {
                let g = dyrow[o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &w.data[o * inner..(o + 1) * inner];
                for l in 0..inner {
                    dxrow[l] += g * wrow[l];
                }
            }
        };
        if work >= PAR_FLOP_THRESHOLD {
            dx.data
                .par_chunks_mut(inner)
                .enumerate()
                .for_each(body);
        } else {
            dx.data.chunks_mut(inner).enumerate().for_each(body);
        }
        dx
    }

    /// dw += dy^T * x, accumulated into a flat slice of shape (out x in).
    /// Row blocks are reduced in a fixed order for determinism.
    pub fn accumulate_wt_grad(dw: &mut [f64], dy: &Mat, x: &Mat) {
        let n = dy.rows;
        let out = dy.cols;
        let inner = x.cols;
        debug_assert_eq!(x.rows, n);
        debug_assert_eq!(dw.len(), out * inner);
        let work = n * out * inner;
        if work >= PAR_FLOP_THRESHOLD && n >= 64 {
            // Fixed block size: partial sums and their reduction order do not
            // depend on the worker count.
            let block = 256;
            let partials: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .step_by(block)
                .map(|start| {
                    let end = (start + block).min(n);
                    let mut part = vec![0.0; out * inner];
                    for i in start..end {
                        let dyrow = &dy.data[i * out..(i + 1) * out];
                        let xrow = &x.data[i * inner..(i + 1) * inner];
                        for o in 0..out {
                            let g = dyrow[o];
                            if g == 0.0 {
                                continue;
                            }
                            let prow = &mut part[o * inner..(o + 1) * inner];
                            for l in 0..inner {
                                prow[l] += g * xrow[l];
                            }
                        }
                    }
                    part
                })
                .collect();
            for part in partials {
                for (d, p) in dw.iter_mut().zip(part) {
                    *d += p;
                }
            }
        } else {
            for i in 0..n {
                let dyrow = &dy.data[i * out..(i + 1) * out];
                let xrow = &x.data[i * inner..(i + 1) * inner];
                for o in 0..out {
                    let g = dyrow[o];
                    if g == 0.0 {
                        continue;
                    }
                    let drow = &mut dw[o * inner..(o + 1) * inner];
                    for l in 0..inner {
                        drow[l] += g * xrow[l];
                    }
                }
            }
        }
    }

    /// db += column sums of dy.
    pub fn accumulate_bias_grad(db: &mut [f64], dy: &Mat) {
        debug_assert_eq!(db.len(), dy.cols);
        for i in 0..dy.rows {
            for (d, v) in db.iter_mut().zip(dy.row(i)) {
                *d += v;
            }
        }
    }

    pub fn add_bias(&mut self, bias: &[f64]) {
        debug_assert_eq!(bias.len(), self.cols);
        for i in 0..self.rows {
            for (v, b) in self.row_mut(i).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Horizontal concatenation of equal-height blocks.
    pub fn concat_cols(blocks: &[&Mat]) -> Mat {
        let rows = blocks[0].rows;
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let orow = out.row_mut(i);
            let mut at = 0;
            for b in blocks {
                debug_assert_eq!(b.rows, rows);
                orow[at..at + b.cols].copy_from_slice(b.row(i));
                at += b.cols;
            }
        }
        out
    }

    /// Split `self` back into column blocks of the given widths.
    pub fn split_cols(&self, widths: &[usize]) -> Vec<Mat> {
        debug_assert_eq!(widths.iter().sum::<usize>(), self.cols);
        let mut out: Vec<Mat> = widths.iter().map(|&w| Mat::zeros(self.rows, w)).collect();
        for i in 0..self.rows {
            let row = self.row(i);
            let mut at = 0;
            for (b, &w) in out.iter_mut().zip(widths) {
                b.row_mut(i).copy_from_slice(&row[at..at + w]);
                at += w;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_against_hand_values() {
        // x (2x3) * w^T with w (2x3): y[i][o] = dot(x_i, w_o)
        let x = Mat::from_rows(vec![vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 2.0]]);
        let w = Mat::from_rows(vec![vec![1.0, 0.0, -1.0], vec![2.0, 1.0, 0.0]]);
        let y = Mat::matmul_wt(&x, &w);
        assert_eq!(y.row(0), &[-2.0, 4.0]);
        assert_eq!(y.row(1), &[-1.5, 0.0]);
    }

    #[test]
    fn grad_kernels_match_naive() {
        let dy = Mat::from_rows(vec![vec![1.0, -2.0], vec![0.5, 3.0]]);
        let x = Mat::from_rows(vec![vec![2.0, 0.0, 1.0], vec![1.0, 1.0, -1.0]]);
        let w = Mat::from_rows(vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]]);
        let mut dw = vec![0.0; 6];
        Mat::accumulate_wt_grad(&mut dw, &dy, &x);
        // dw[o][l] = sum_i dy[i][o] * x[i][l]
        assert_eq!(dw, vec![2.5, 0.5, 0.5, -1.0, 3.0, -5.0]);
        let dx = Mat::matmul_w(&dy, &w);
        assert_eq!(dx.row(0), &[3.0, 2.0, 1.0]);
        assert_eq!(dx.row(1), &[-2.5, 1.0, 4.5]);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Mat::from_rows(vec![vec![5.0], vec![6.0]]);
        let cat = Mat::concat_cols(&[&a, &b]);
        assert_eq!(cat.row(0), &[1.0, 2.0, 5.0]);
        let parts = cat.split_cols(&[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
