//! Small dense kernels: complex LU with transpose solves, orthonormality
//! checks, and a thin-SVD based column compression helper.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CoreError, Result};

/// Dense LU factorization with partial pivoting for complex matrices.
///
/// nalgebra's LU does not expose a transpose solve, which the reduced
/// Jacobian needs to reuse one factorization for both the source-side and
/// detector-side systems.
pub struct DenseLu {
    lu: DMatrix<Complex64>,
    piv: Vec<usize>,
    n: usize,
}

impl DenseLu {
    pub fn factor(mut a: DMatrix<Complex64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(CoreError::Dimension("LU requires a square matrix".into()));
        }
        let mut piv = Vec::with_capacity(n);
        for k in 0..n {
            let mut p = k;
            let mut best = a[(k, k)].norm_sqr();
            for i in k + 1..n {
                let m = a[(i, k)].norm_sqr();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(CoreError::SingularReduced(f64::NAN));
            }
            piv.push(p);
            if p != k {
                a.swap_rows(p, k);
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let l = a[(i, k)] / pivot;
                a[(i, k)] = l;
                for j in k + 1..n {
                    let akj = a[(k, j)];
                    a[(i, j)] -= l * akj;
                }
            }
        }
        Ok(DenseLu { lu: a, piv, n })
    }

    /// Solves `A x = b` in place for each column of `b`.
    pub fn solve_mat(&self, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut x = b.clone();
        let n = self.n;
        for col in 0..x.ncols() {
            for k in 0..n {
                let p = self.piv[k];
                if p != k {
                    let t = x[(k, col)];
                    x[(k, col)] = x[(p, col)];
                    x[(p, col)] = t;
                }
            }
            // forward substitution (unit lower)
            for k in 0..n {
                let xk = x[(k, col)];
                for i in k + 1..n {
                    let l = self.lu[(i, k)];
                    x[(i, col)] -= l * xk;
                }
            }
            // back substitution
            for k in (0..n).rev() {
                let mut s = x[(k, col)];
                for j in k + 1..n {
                    s -= self.lu[(k, j)] * x[(j, col)];
                }
                x[(k, col)] = s / self.lu[(k, k)];
            }
        }
        x
    }

    /// Solves `A^T x = b` reusing the same factorization (no conjugation).
    pub fn solve_transpose_mat(&self, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        // A = P^T L U  =>  A^T = U^T L^T P; solve U^T y = b, L^T z = y, x = P^T z.
        let mut x = b.clone();
        let n = self.n;
        for col in 0..x.ncols() {
            // U^T is lower triangular
            for k in 0..n {
                let mut s = x[(k, col)];
                for j in 0..k {
                    s -= self.lu[(j, k)] * x[(j, col)];
                }
                x[(k, col)] = s / self.lu[(k, k)];
            }
            // L^T is unit upper triangular
            for k in (0..n).rev() {
                let mut s = x[(k, col)];
                for j in k + 1..n {
                    s -= self.lu[(j, k)] * x[(j, col)];
                }
                x[(k, col)] = s;
            }
            // undo pivoting: x = P^T z swaps in reverse order
            for k in (0..n).rev() {
                let p = self.piv[k];
                if p != k {
                    let t = x[(k, col)];
                    x[(k, col)] = x[(p, col)];
                    x[(p, col)] = t;
                }
            }
        }
        x
    }
}

/// Largest deviation of `V^T V` from the identity.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Left singular vectors of `m` with singular values above `tau * sigma_max`
/// (numerical-rank floor when `tau == 0`). Returns the basis and the retained
/// singular values.
pub fn truncated_left_singular_vectors(
    m: &DMatrix<f64>,
    tau: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if m.ncols() == 0 {
        return Err(CoreError::validation("compress: need at least one column"));
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("SVD with U requested");
    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    // nalgebra returns singular values unsorted in some paths; sort defensively
    // together with the columns of U.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let sigma_max = sigma[order[0]];
    if sigma_max == 0.0 {
        return Err(CoreError::validation("compress: all columns numerically zero"));
    }
    let floor = if tau > 0.0 {
        tau * sigma_max
    } else {
        sigma_max * m.nrows().max(m.ncols()) as f64 * f64::EPSILON
    };
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| sigma[i] > floor)
        .collect();
    let r = keep.len();
    let mut v = DMatrix::zeros(m.nrows(), r);
    let mut kept_sigma = Vec::with_capacity(r);
    for (k, &i) in keep.iter().enumerate() {
        v.set_column(k, &u.column(i));
        kept_sigma.push(sigma[i]);
    }
    sigma.clear();
    Ok((v, kept_sigma))
}
