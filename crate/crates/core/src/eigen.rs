//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order with matching unit eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Diagonalizes a symmetric matrix with cyclic Jacobi rotations.
///
/// Sweeps visit pairs `(p, q)` in row-major order, which makes the result
/// bit-reproducible. Converges once every off-diagonal magnitude is below
/// `1e-12` times the Frobenius norm of the input.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * frob;

    let max_off = |m: &Array2<f64>| {
        let mut best = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                best = best.max(m[[p, q]].abs());
            }
        }
        best
    };

    let mut sweeps = 0;
    while max_off(&m) > tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off_norm: max_off(&m) });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s, t);
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        vectors.column_mut(col).assign(&v.column(i));
    }
    Ok(SymmetricEigen { values, vectors })
}

fn rotate(m: &mut Array2<f64>, v: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = m.nrows();
    let apq = m[[p, q]];
    m[[p, p]] -= t * apq;
    m[[q, q]] += t * apq;
    m[[p, q]] = 0.0;
    m[[q, p]] = 0.0;
    for k in 0..n {
        if k != p && k != q {
            let akp = m[[k, p]];
            let akq = m[[k, q]];
            let new_p = c * akp - s * akq;
            let new_q = s * akp + c * akq;
            m[[k, p]] = new_p;
            m[[p, k]] = new_p;
            m[[k, q]] = new_q;
            m[[q, k]] = new_q;
        }
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}
