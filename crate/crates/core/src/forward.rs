//! Full-order frequency response, adjoint solves, and the adjoint-based
//! Jacobian block.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::diagnostics::Counters;
use crate::error::{CoreError, Result};
use crate::grid::DiscreteOperators;
use crate::pals::SparseDiag;
use crate::solve::{solve_columns, SolverOpts};

/// Dense right-hand-side matrix built from the sparse source columns.
pub fn source_rhs(ops: &DiscreteOperators) -> DMatrix<Complex64> {
    let mut rhs = DMatrix::<Complex64>::zeros(ops.n, ops.n_src());
    for (j, col) in ops.b_cols.iter().enumerate() {
        for &(i, v) in col {
            rhs[(i, j)] = Complex64::new(v, 0.0);
        }
    }
    rhs
}

/// Dense right-hand-side matrix `C^T` from the sparse detector rows.
pub fn detector_rhs(ops: &DiscreteOperators) -> DMatrix<Complex64> {
    let mut rhs = DMatrix::<Complex64>::zeros(ops.n, ops.n_det());
    for (j, row) in ops.c_rows.iter().enumerate() {
        for &(i, v) in row {
            rhs[(i, j)] = Complex64::new(v, 0.0);
        }
    }
    rhs
}

/// Applies the detector functionals: `C * X`.
pub fn apply_detectors(ops: &DiscreteOperators, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut psi = DMatrix::<Complex64>::zeros(ops.n_det(), x.ncols());
    for (i, row) in ops.c_rows.iter().enumerate() {
        for j in 0..x.ncols() {
            let mut acc = Complex64::default();
            for &(idx, w) in row {
                acc += x[(idx, j)] * w;
            }
            psi[(i, j)] = acc;
        }
    }
    psi
}

/// Frequency response `Psi = C X` together with the state solutions `X`.
/// Each solved column is counted as one large solve.
pub fn frequency_response_with_state(
    ops: &DiscreteOperators,
    a1: &[f64],
    omega: f64,
    opts: &SolverOpts,
    counters: &Counters,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let rhs = source_rhs(ops);
    let x = solve_columns(ops, a1, omega, &rhs, opts)?;
    counters.add_large_solves(ops.n_src());
    Ok((apply_detectors(ops, &x), x))
}

pub fn frequency_response(
    ops: &DiscreteOperators,
    a1: &[f64],
    omega: f64,
    opts: &SolverOpts,
    counters: &Counters,
) -> Result<DMatrix<Complex64>> {
    frequency_response_with_state(ops, a1, omega, opts, counters).map(|(psi, _)| psi)
}

/// Adjoint (co-state) solutions `Z` with `M^T Z = C^T`. The system matrix is
/// complex symmetric, so the transpose solve reuses the matrix unconjugated.
pub fn adjoint_solutions(
    ops: &DiscreteOperators,
    a1: &[f64],
    omega: f64,
    opts: &SolverOpts,
    counters: &Counters,
) -> Result<DMatrix<Complex64>> {
    let rhs = detector_rhs(ops);
    let z = solve_columns(ops, a1, omega, &rhs, opts)?;
    counters.add_large_solves(ops.n_det());
    Ok(z)
}

/// Jacobian block at one frequency: entry for (detector i', source i,
/// parameter k) is `-Z[:,i']^T diag(dA1/dp_k) X[:,i]`. Rows are ordered with
/// the detector index fastest within each source block.
pub fn full_jacobian_block(
    ops: &DiscreteOperators,
    da1: &[SparseDiag],
    x: &DMatrix<Complex64>,
    z: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let n_det = ops.n_det();
    let n_src = ops.n_src();
    if x.nrows() != ops.n || z.nrows() != ops.n || x.ncols() != n_src || z.ncols() != n_det {
        return Err(CoreError::Dimension(
            "full_jacobian_block: X/Z shapes do not match the operators".into(),
        ));
    }
    let mut jac = DMatrix::<Complex64>::zeros(n_det * n_src, da1.len());
    for (k, d) in da1.iter().enumerate() {
        for (&idx, &v) in d.idx.iter().zip(&d.val) {
            for i in 0..n_src {
                let xv = x[(idx, i)] * v;
                for ip in 0..n_det {
                    jac[(i * n_det + ip, k)] -= z[(idx, ip)] * xv;
                }
            }
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble, Diffusion, DomainSpec, SourceDetectorLayout};
    use crate::pals::{absorption_derivatives, absorption_diagonal, PalsConfig, PalsParams};
    use crate::solve::SolverKind;

    fn setup(nx: usize, n_src: usize, n_det: usize) -> DiscreteOperators {
        let d = DomainSpec {
            half_width: 2.5,
            half_height: 2.5,
            nx,
            nz: nx,
            speed_of_light: 1.0,
            robin_constant: 1.0,
            diffusion: Diffusion::Constant(0.03),
        };
        let layout = SourceDetectorLayout::uniform(&d, n_src, n_det, 0).unwrap();
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
    fn zero_frequency_response_is_real_and_finite() {
        let ops = setup(12, 4, 4);
        let a1 = background_a1(&ops, 0.05);
        let counters = Counters::default();
        let psi = frequency_response(&ops, &a1, 0.0, &SolverOpts::default(), &counters).unwrap();
        for v in psi.iter() {
            assert!(v.re.is_finite());
            assert_eq!(v.im, 0.0);
        }
        assert_eq!(counters.large_solves(), 4);
    }

    #[test]
    fn adjoint_has_one_column_per_detector() {
        let ops = setup(12, 4, 6);
        let a1 = background_a1(&ops, 0.05);
        let counters = Counters::default();
        let z = adjoint_solutions(&ops, &a1, 0.0, &SolverOpts::default(), &counters).unwrap();
        assert_eq!(z.ncols(), 6);
        for v in z.iter() {
            assert!(v.re.is_finite());
            assert_eq!(v.im, 0.0);
        }
    }

    #[test]
    fn reciprocity_with_collocated_sources_and_detectors() {
        let mut ops = setup(12, 4, 4);
        // collocate: B := C^T
        ops.b_cols = ops.c_rows.clone();
        let a1 = background_a1(&ops, 0.05);
        let counters = Counters::default();
        let (psi, _) =
            frequency_response_with_state(&ops, &a1, 0.0, &SolverOpts::default(), &counters).unwrap();
        let z = adjoint_solutions(&ops, &a1, 0.0, &SolverOpts::default(), &counters).unwrap();
        // C X = (B^T Z)^T
        let mut bt_z = DMatrix::<Complex64>::zeros(ops.n_src(), ops.n_det());
        for (j, col) in ops.b_cols.iter().enumerate() {
            for ip in 0..ops.n_det() {
                let mut acc = Complex64::default();
                for &(i, v) in col {
                    acc += z[(i, ip)] * v;
                }
                bt_z[(j, ip)] = acc;
            }
        }
        let rel = (&psi - bt_z.transpose()).norm() / psi.norm();
        assert!(rel < 1e-8, "reciprocity violated: {rel}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let ops = setup(15, 3, 3);
        let cfg = PalsConfig {
            m0: 2,
            ..PalsConfig::default()
        };
        let base = vec![0.25, -0.3, 1.1, 0.9, 0.4, -0.5, -0.6, 0.7];
        let p = PalsParams::new(base.clone(), &cfg).unwrap();
        let a1 = absorption_diagonal(&p, &cfg, &ops.domain);
        let counters = Counters::default();
        let opts = SolverOpts {
            kind: SolverKind::Dense,
            ..SolverOpts::default()
        };
        let (_, x) = frequency_response_with_state(&ops, &a1, 0.0, &opts, &counters).unwrap();
        let z = adjoint_solutions(&ops, &a1, 0.0, &opts, &counters).unwrap();
        let da1 = absorption_derivatives(&p, &cfg, &ops.domain);
        let jac = full_jacobian_block(&ops, &da1, &x, &z).unwrap();

        let step = 1e-6;
        let mut fd = DMatrix::<Complex64>::zeros(jac.nrows(), jac.ncols());
        for k in 0..cfg.param_len() {
            let mut lo = base.clone();
            let mut hi = base.clone();
            lo[k] -= step;
            hi[k] += step;
            let a_lo = absorption_diagonal(&PalsParams(lo), &cfg, &ops.domain);
            let a_hi = absorption_diagonal(&PalsParams(hi), &cfg, &ops.domain);
            let p_lo = frequency_response(&ops, &a_lo, 0.0, &opts, &counters).unwrap();
            let p_hi = frequency_response(&ops, &a_hi, 0.0, &opts, &counters).unwrap();
            for i in 0..ops.n_src() {
                for ip in 0..ops.n_det() {
                    fd[(i * ops.n_det() + ip, k)] =
                        (p_hi[(ip, i)] - p_lo[(ip, i)]) / Complex64::new(2.0 * step, 0.0);
                }
            }
        }
        let rel = (&jac - &fd).norm() / fd.norm();
        assert!(rel <= 1e-5, "jacobian FD mismatch: {rel}");
    }

    #[test]
    fn zero_derivative_gives_zero_column() {
        let ops = setup(10, 3, 3);
        let a1 = background_a1(&ops, 0.05);
        let counters = Counters::default();
        let (_, x) =
            frequency_response_with_state(&ops, &a1, 0.0, &SolverOpts::default(), &counters).unwrap();
        let z = adjoint_solutions(&ops, &a1, 0.0, &SolverOpts::default(), &counters).unwrap();
        let da1 = vec![SparseDiag::default(), SparseDiag::default()];
        let jac = full_jacobian_block(&ops, &da1, &x, &z).unwrap();
        assert_eq!(jac.norm(), 0.0);
    }

    #[test]
    fn mesh_refinement_convergence() {
        // The uniform layouts for 25, 49, and 97 points place sources and
        // detectors at identical physical positions, so the responses must
        // approach each other under refinement. The one-sided Robin rows
        // limit the boundary quantities to first-order accuracy, so the
        // error is expected to roughly halve per refinement.
        let counters = Counters::default();
        let mut psis = Vec::new();
        for nx in [25, 49, 97] {
            let ops = setup(nx, 4, 4);
            let a1 = background_a1(&ops, 0.05);
            let psi = frequency_response(&ops, &a1, 0.0, &SolverOpts::default(), &counters).unwrap();
            psis.push(psi);
        }
        let coarse = (&psis[0] - &psis[2]).norm() / psis[2].norm();
        let fine = (&psis[1] - &psis[2]).norm() / psis[2].norm();
        assert!(fine <= 0.08, "responses do not converge: {fine}");
        assert!(fine < 0.6 * coarse, "refinement does not reduce the error: {coarse} -> {fine}");
    }
}
