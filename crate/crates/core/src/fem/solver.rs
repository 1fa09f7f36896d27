//! Direct and iterative solvers for the reduced symmetric system: reverse
//! Cuthill-McKee ordering with a banded Cholesky factorization, and a
//! Jacobi-preconditioned conjugate gradient fallback for large meshes.

use std::collections::VecDeque;

use super::SparseSym;

/// Reverse Cuthill-McKee permutation: perm[new] = old.
fn reverse_cuthill_mckee(matrix: &SparseSym) -> Vec<usize> {
    let n = matrix.dim();
    let degree: Vec<usize> = (0..n).map(|i| matrix.row(i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        // Start each component from its minimum-degree unvisited node.
        let Some(start) = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
        else {
            break;
        };
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut neighbors: Vec<usize> = matrix
                .row(u)
                .map(|(j, _)| j)
                .filter(|&j| !visited[j])
                .collect();
            neighbors.sort_unstable_by_key(|&j| (degree[j], j));
            for j in neighbors {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Banded Cholesky factorization of an SPD matrix after RCM reordering.
pub struct BandCholesky {
    bandwidth: usize,
    /// Row-major band storage: factor[i * (b + 1) + (j - i + b)] = L[i][j]
    /// for j in [i - b, i].
    factor: Vec<f64>,
    dim: usize,
    /// perm[new] = old.
    perm: Vec<usize>,
}

impl BandCholesky {
    /// Factor the matrix; returns None when a pivot is not strictly positive
    /// (the system is singular or indefinite).
    pub fn factor(matrix: &SparseSym) -> Option<BandCholesky> {
        let n = matrix.dim();
        let perm = reverse_cuthill_mckee(matrix);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut bandwidth = 0usize;
        for old_i in 0..n {
            for (old_j, _) in matrix.row(old_i) {
                bandwidth = bandwidth.max(inv[old_i].abs_diff(inv[old_j]));
            }
        }
        let stride = bandwidth + 1;
        let mut band = vec![0.0f64; n * stride];
        for old_i in 0..n {
            let i = inv[old_i];
            for (old_j, v) in matrix.row(old_i) {
                let j = inv[old_j];
                if j <= i {
                    band[i * stride + (j + bandwidth - i)] = v;
                }
            }
        }

        // In-place banded LL^T.
        for i in 0..n {
            let j_lo = i.saturating_sub(bandwidth);
            for j in j_lo..=i {
                let k_lo = j_lo.max(j.saturating_sub(bandwidth));
                let mut sum = band[i * stride + (j + bandwidth - i)];
                for k in k_lo..j {
                    sum -= band[i * stride + (k + bandwidth - i)]
                        * band[j * stride + (k + bandwidth - j)];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return None;
                    }
                    band[i * stride + bandwidth] = sum.sqrt();
                } else {
                    band[i * stride + (j + bandwidth - i)] =
                        sum / band[j * stride + bandwidth];
                }
            }
        }
        Some(BandCholesky {
            bandwidth,
            factor: band,
            dim: n,
            perm,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let b = self.bandwidth;
        let stride = b + 1;
        let mut inv = vec![0usize; n];
        for (new, &old) in self.perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = rhs[self.perm[i]];
            let k_lo = i.saturating_sub(b);
            for k in k_lo..i {
                sum -= self.factor[i * stride + (k + b - i)] * y[k];
            }
            y[i] = sum / self.factor[i * stride + b];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            let k_hi = (i + b).min(n - 1);
            for k in i + 1..=k_hi {
                sum -= self.factor[k * stride + (i + b - k)] * x[k];
            }
            x[i] = sum / self.factor[i * stride + b];
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

pub enum PcgResult {
    Converged { x: Vec<f64>, iterations: usize },
    MaxIterations { iterations: usize },
}

/// Jacobi-preconditioned conjugate gradient for SPD systems.
pub fn pcg_jacobi(matrix: &SparseSym, rhs: &[f64], tolerance: f64, max_iter: usize) -> PcgResult {
    let n = matrix.dim();
    let diag: Vec<f64> = (0..n).map(|i| matrix.get(i, i).max(f64::MIN_POSITIVE)).collect();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return PcgResult::Converged {
            x: vec![0.0; n],
            iterations: 0,
        };
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for iter in 1..=max_iter {
        let ap = matrix.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res / rhs_norm < tolerance {
            return PcgResult::Converged { x, iterations: iter };
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    PcgResult::MaxIterations {
        iterations: max_iter,
    }
}
