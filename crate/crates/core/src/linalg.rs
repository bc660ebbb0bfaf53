//! Small dense helpers shared by the modules.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Deterministic start vector with generic overlap on every eigenvector.
fn start_vector(dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|j| 1.0 + ((j * 7919 + 13) % 101) as f64 / 101.0)
        .collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|e| *e /= n);
    v
}

/// Largest eigenvalue of a symmetric positive semidefinite operator given
/// matrix-free as `apply(v, out)`.  Stops when the Rayleigh quotient moves
/// by less than `tol` relative.
pub fn power_iteration<F>(dim: usize, mut apply: F, tol: f64, max_iter: usize) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = start_vector(dim);
    let mut w = vec![0.0; dim];
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        apply(&v, &mut w);
        let next = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return next.max(lambda);
        }
        lambda = next;
    }
    lambda
}

/// Spectral norm of a dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let mut tmp = vec![0.0; r];
    let lam = power_iteration(
        c,
        |v, out| {
            for i in 0..r {
                tmp[i] = (0..c).map(|j| m[(i, j)] * v[j]).sum();
            }
            for j in 0..c {
                out[j] = (0..r).map(|i| m[(i, j)] * tmp[i]).sum();
            }
        },
        POWER_TOL,
        POWER_MAX_ITER,
    );
    libm::sqrt(lam.max(0.0))
}

/// Smallest eigenvalue of a symmetric matrix by power iteration on
/// `s·I − M` with `s` an upper bound on the spectrum (Gershgorin).
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let shift = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let top = power_iteration(
        n,
        |v, out| {
            for i in 0..n {
                out[i] = shift * v[i] - (0..n).map(|j| m[(i, j)] * v[j]).sum::<f64>();
            }
        },
        1e-13,
        50 * POWER_MAX_ITER,
    );
    shift - top
}

/// `true` when `m − shift·I` admits a Cholesky factorization.
pub fn is_pd_shifted(m: &DMatrix<f64>, shift: f64) -> bool {
    let n = m.nrows();
    let shifted = m - DMatrix::<f64>::identity(n, n) * shift;
    nalgebra::Cholesky::new(shifted).is_some()
}

pub fn matvec_into(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let (r, c) = m.shape();
    for i in 0..r {
        let mut s = 0.0;
        for j in 0..c {
            s += m[(i, j)] * v[j];
        }
        out[i] = s;
    }
}

/// `out += mᵀ v`
pub fn matvec_t_add(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let (r, c) = m.shape();
    for j in 0..c {
        let mut s = 0.0;
        for i in 0..r {
            s += m[(i, j)] * v[i];
        }
        out[j] += s;
    }
}

/// Block-wise mean of a stacked vector with `blocks` blocks.
pub fn block_mean(v: &[f64], blocks: usize) -> Vec<f64> {
    let d = v.len() / blocks;
    let mut out = vec![0.0; d];
    for b in 0..blocks {
        for (o, e) in out.iter_mut().zip(&v[b * d..(b + 1) * d]) {
            *o += e;
        }
    }
    out.iter_mut().for_each(|o| *o /= blocks as f64);
    out
}

/// `‖v − 1⊗mean‖`, the distance of a stacked vector to a given consensus value.
pub fn dist_to_consensus(v: &[f64], mean: &[f64]) -> f64 {
    let d = mean.len();
    let mut s = 0.0;
    for chunk in v.chunks(d) {
        for (a, b) in chunk.iter().zip(mean) {
            s += (a - b) * (a - b);
        }
    }
    libm::sqrt(s)
}

pub fn to_dvector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}
