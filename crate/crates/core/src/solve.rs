//! Linear solvers for the complex symmetric systems
//! `((i omega / nu) E + A0 + diag(A1)) x = b`.
//!
//! The default iterative method is conjugate-orthogonal CG (COCG) with Jacobi
//! preconditioning; for real data it reduces to plain preconditioned CG. A
//! dense LU path serves small systems and doubles as the test oracle.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grid::DiscreteOperators;
use crate::linalg::DenseLu;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Dense direct for small systems, iterative otherwise.
    Auto,
    Iterative,
    Dense,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    pub kind: SolverKind,
    /// Relative residual tolerance for the iterative solver.
    pub tol: f64,
    /// Iteration cap as a multiple of the system dimension.
    pub max_iter_factor: usize,
    /// Auto switches to the dense path at or below this dimension.
    pub dense_threshold: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            kind: SolverKind::Auto,
            tol: 1e-10,
            max_iter_factor: 10,
            dense_threshold: 1500,
        }
    }
}

impl SolverOpts {
    fn use_dense(&self, n: usize) -> bool {
        match self.kind {
            SolverKind::Dense => true,
            SolverKind::Iterative => false,
            SolverKind::Auto => n <= self.dense_threshold,
        }
    }
}

/// Applies `(i omega / nu) E + A0 + diag(a1)` to `x`.
pub fn system_matvec(
    ops: &DiscreteOperators,
    a1: &[f64],
    omega: f64,
    x: &[Complex64],
    y: &mut [Complex64],
) {
    ops.a0.matvec_complex(x, y);
    let w = omega / ops.domain.speed_of_light;
    for i in 0..ops.n {
        y[i] += x[i] * a1[i] + Complex64::new(0.0, w * ops.e_diag[i]) * x[i];
    }
}

fn system_diagonal(ops: &DiscreteOperators, a1: &[f64], omega: f64) -> Vec<Complex64> {
    let w = omega / ops.domain.speed_of_light;
    (0..ops.n)
        .map(|i| Complex64::new(ops.a0.get(i, i) + a1[i], w * ops.e_diag[i]))
        .collect()
}

/// Dense assembly of the system matrix (test oracle and small-system path).
pub fn dense_system(ops: &DiscreteOperators, a1: &[f64], omega: f64) -> DMatrix<Complex64> {
    let w = omega / ops.domain.speed_of_light;
    let mut m = DMatrix::<Complex64>::zeros(ops.n, ops.n);
    for r in 0..ops.n {
        for (c, v) in ops.a0.row(r) {
            m[(r, c)] += Complex64::new(v, 0.0);
        }
        m[(r, r)] += Complex64::new(a1[r], w * ops.e_diag[r]);
    }
    m
}

/// Solves the system for every column of `rhs`.
pub fn solve_columns(
    ops: &DiscreteOperators,
    a1: &[f64],
    omega: f64,
    rhs: &DMatrix<Complex64>,
    opts: &SolverOpts,
) -> Result<DMatrix<Complex64>> {
    if rhs.nrows() != ops.n {
        return Err(CoreError::Dimension(format!(
            "rhs has {} rows, system dimension is {}",
            rhs.nrows(),
            ops.n
        )));
    }
    if opts.use_dense(ops.n) {
        let lu = DenseLu::factor(dense_system(ops, a1, omega)).map_err(|_| CoreError::Solver {
            omega,
            reason: "dense factorization found a zero pivot".into(),
            iterations: 0,
            residual: f64::NAN,
        })?;
        return Ok(lu.solve_mat(rhs));
    }
    let diag = system_diagonal(ops, a1, omega);
    let mut x = DMatrix::<Complex64>::zeros(ops.n, rhs.ncols());
    let mut col = vec![Complex64::default(); ops.n];
    for j in 0..rhs.ncols() {
        let b: Vec<Complex64> = rhs.column(j).iter().copied().collect();
        cocg(ops, a1, omega, &diag, &b, &mut col, opts)?;
        for i in 0..ops.n {
            x[(i, j)] = col[i];
        }
    }
    Ok(x)
}

fn unconj_dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugate-orthogonal CG for complex symmetric systems, Jacobi-preconditioned.
fn cocg(
    ops: &DiscreteOperators,
    a1: &[f64],
    omega: f64,
    diag: &[Complex64],
    b: &[Complex64],
    x: &mut [Complex64],
    opts: &SolverOpts,
) -> Result<()> {
    let n = ops.n;
    let bnorm = norm(b);
    x.fill(Complex64::default());
    if bnorm == 0.0 {
        return Ok(());
    }
    let max_iter = opts.max_iter_factor * n;
    let mut r = b.to_vec();
    let mut z: Vec<Complex64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rho = unconj_dot(&r, &z);
    let mut q = vec![Complex64::default(); n];
    for iter in 0..max_iter {
        system_matvec(ops, a1, omega, &p, &mut q);
        let pq = unconj_dot(&p, &q);
        if pq.norm() == 0.0 {
            return Err(CoreError::Solver {
                omega,
                reason: "COCG breakdown (p'Ap = 0)".into(),
                iterations: iter,
                residual: norm(&r) / bnorm,
            });
        }
        let alpha = rho / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if norm(&r) / bnorm <= opts.tol {
            return Ok(());
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rho_new = unconj_dot(&r, &z);
        if rho.norm() == 0.0 {
            return Err(CoreError::Solver {
                omega,
                reason: "COCG breakdown (rho = 0)".into(),
                iterations: iter,
                residual: norm(&r) / bnorm,
            });
        }
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CoreError::Solver {
        omega,
        reason: "COCG did not converge".into(),
        iterations: max_iter,
        residual: norm(&r) / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble, Diffusion, DomainSpec, SourceDetectorLayout};

    fn ops(nx: usize) -> DiscreteOperators {
        let d = DomainSpec {
            half_width: 2.5,
            half_height: 2.5,
            nx,
            nz: nx,
            speed_of_light: 1.0,
            robin_constant: 1.0,
            diffusion: Diffusion::Constant(0.03),
        };
        let layout = SourceDetectorLayout::uniform(&d, 4, 4, 0).unwrap();
        assemble(&d, &layout).unwrap()
    }

    fn background_a1(ops: &DiscreteOperators, mu: f64) -> Vec<f64> {
        let h2 = ops.domain.mesh_width().powi(2);
        ops.interior_mask()
            .iter()
            .map(|&m| if m { h2 * mu } else { 0.0 })
            .collect()
    }

    #[test]
    fn iterative_matches_dense_real_and_complex() {
        for nx in [10, 20] {
            let ops = ops(nx);
            let a1 = background_a1(&ops, 0.05);
            let mut rhs = DMatrix::<Complex64>::zeros(ops.n, ops.n_src());
            for (j, col) in ops.b_cols.iter().enumerate() {
                for &(i, v) in col {
                    rhs[(i, j)] = Complex64::new(v, 0.0);
                }
            }
            for omega in [0.0, 2.0e6] {
                let it = SolverOpts {
                    kind: SolverKind::Iterative,
                    ..SolverOpts::default()
                };
                let de = SolverOpts {
                    kind: SolverKind::Dense,
                    ..SolverOpts::default()
                };
                let xi = solve_columns(&ops, &a1, omega, &rhs, &it).unwrap();
                let xd = solve_columns(&ops, &a1, omega, &rhs, &de).unwrap();
                let rel = (&xi - &xd).norm() / xd.norm();
                assert!(rel < 1e-8, "nx={nx} omega={omega}: rel={rel}");
            }
        }
    }

    #[test]
    fn system_is_complex_symmetric() {
        let ops = ops(9);
        let a1 = background_a1(&ops, 0.05);
        let m = dense_system(&ops, &a1, 3.0e5);
        let diff = (&m - m.transpose()).norm();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn nonconvergence_is_reported_with_context() {
        let ops = ops(8);
        let a1 = background_a1(&ops, 0.05);
        let rhs = DMatrix::<Complex64>::from_element(ops.n, 1, Complex64::new(1.0, 0.0));
        // an exhausted iteration budget must surface as a solver error that
        // carries the iteration count and the reached residual
        let opts = SolverOpts {
            kind: SolverKind::Iterative,
            tol: 1e-30,
            max_iter_factor: 0,
            ..SolverOpts::default()
        };
        match solve_columns(&ops, &a1, 0.0, &rhs, &opts) {
            Err(CoreError::Solver { iterations, residual, reason, .. }) => {
                assert_eq!(iterations, 0);
                assert_eq!(residual, 1.0);
                assert!(reason.contains("converge"));
            }
            other => panic!("expected solver error, got {other:?}"),
        }
    }
}
