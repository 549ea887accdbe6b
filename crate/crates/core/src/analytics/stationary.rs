//! Stationary distributions of row-stochastic matrices.

use crate::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-9;
const RESIDUAL_LIMIT: f64 = 1e-10;

/// Whether the boolean support of `q` is primitive (irreducible and
/// aperiodic): some power with exponent at least `(k − 1)² + 1` is
/// strictly positive.
pub fn is_primitive(q: &[f64], k: usize) -> bool {
    let mut reach: Vec<bool> = q.iter().map(|v| *v > 0.0).collect();
    let bound = (k - 1) * (k - 1) + 1;
    let mut power = 1;
    while power < bound {
        let mut next = vec![false; k * k];
        for r in 0..k {
            for m in 0..k {
                if reach[r * k + m] {
                    for s in 0..k {
                        next[r * k + s] |= reach[m * k + s];
                    }
                }
            }
        }
        reach = next;
        power *= 2;
    }
    reach.iter().all(|b| *b)
}

/// Solves `A x = b` for a dense row-major `n×n` system by Gaussian
/// elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numerical("singular stationary system".into()));
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[row * n + c] -= f * a[col * n + c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row * n + c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

fn left_multiply(pi: &[f64], q: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|s| (0..k).map(|r| pi[r] * q[r * k + s]).sum()).collect()
}

/// `‖πQ − π‖∞`.
pub fn stationary_residual(pi: &[f64], q: &[f64], k: usize) -> f64 {
    left_multiply(pi, q, k)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// The probability vector π with `πQ = π` for a primitive row-stochastic
/// `k×k` matrix (row-major). Solves `(Qᵀ − I)π = 0` with the last equation
/// replaced by `Σπ = 1`, then applies one step of iterative refinement.
pub fn stationary_distribution(q: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || q.len() != k * k {
        return Err(Error::Dimension(format!("expected a {k}x{k} matrix, got {} entries", q.len())));
    }
    for r in 0..k {
        let row = &q[r * k..(r + 1) * k];
        if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::InvalidInput(format!("row {} is not a probability vector", r + 1)));
        }
    }
    if !is_primitive(q, k) {
        return Err(Error::Numerical("matrix is reducible or periodic; no unique limiting distribution".into()));
    }
    let mut a = vec![0.0; k * k];
    for r in 0..k {
        for s in 0..k {
            a[s * k + r] = q[r * k + s] - if r == s { 1.0 } else { 0.0 };
        }
    }
    for c in 0..k {
        a[(k - 1) * k + c] = 1.0;
    }
    let mut b = vec![0.0; k];
    b[k - 1] = 1.0;
    let mut pi = solve(a.clone(), b.clone(), k)?;
    let resid: Vec<f64> = (0..k)
        .map(|row| b[row] - (0..k).map(|c| a[row * k + c] * pi[c]).sum::<f64>())
        .collect();
    let correction = solve(a, resid, k)?;
    for (p, c) in pi.iter_mut().zip(&correction) {
        *p = (*p + c).max(0.0);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    if stationary_residual(&pi, q, k) > RESIDUAL_LIMIT {
        return Err(Error::Numerical("stationary solve did not converge".into()));
    }
    Ok(pi)
}
