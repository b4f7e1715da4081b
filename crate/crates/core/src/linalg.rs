//! Small dense vector and matrix helpers.
//!
//! Dimensions here are tiny (a few dozen at most), so everything works on
//! plain slices with row-major `d * d` storage.

use alloc::vec;
use alloc::vec::Vec;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `a + s * b`
pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Component-wise mean of equally long vectors, accumulated in slice order.
pub fn mean_of<'a, I>(vectors: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    acc
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Lower Cholesky factor of a symmetric positive definite row-major matrix.
///
/// Returns `None` if a pivot is not strictly positive.
pub fn cholesky(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * dim + i] = libm::sqrt(s);
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &[f64], dim: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; dim];
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * y[k];
        }
        y[i] = s / l[i * dim + i];
    }
    let mut x = vec![0.0; dim];
    for i in (0..dim).rev() {
        let mut s = y[i];
        for k in i + 1..dim {
            s -= l[k * dim + i] * x[k];
        }
        x[i] = s / l[i * dim + i];
    }
    x
}

/// Solves a symmetric positive (semi-)definite system.
///
/// On factorisation failure the diagonal is jittered by `1e-12` times its
/// scale, growing tenfold per retry.
pub fn solve_spd(a: &[f64], dim: usize, b: &[f64]) -> Option<Vec<f64>> {
    if let Some(l) = cholesky(a, dim) {
        return Some(cholesky_solve(&l, dim, b));
    }
    let scale = (0..dim)
        .map(|i| a[i * dim + i].abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let mut jitter = 1e-12 * scale;
    for _ in 0..8 {
        let mut shifted = a.to_vec();
        for i in 0..dim {
            shifted[i * dim + i] += jitter;
        }
        if let Some(l) = cholesky(&shifted, dim) {
            return Some(cholesky_solve(&l, dim, b));
        }
        jitter *= 10.0;
    }
    None
}

/// Matrix-vector product for row-major square matrices.
pub fn mat_vec(a: &[f64], dim: usize, x: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|i| dot(&a[i * dim..(i + 1) * dim], x))
        .collect()
}
