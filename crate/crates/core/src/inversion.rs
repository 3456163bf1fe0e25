//! Nonlinear least-squares image reconstruction: measurement stacking,
//! objective backends over the full and reduced models, and a trust-region
//! Gauss-Newton solver.
//!
//! Measurements stack with the source index outermost, then frequency, with
//! the detector index fastest:
//! `index = (i_src * n_omega + j_omega) * n_det + i_det`.
//! The optimization is over real parameters with the complex residual lifted
//! to `[Re; Im]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::diagnostics::Counters;
use crate::error::{CoreError, Result};
use crate::forward::{
    adjoint_solutions, frequency_response_with_state, full_jacobian_block,
};
use crate::grid::DiscreteOperators;
use crate::mor::RomModel;
use crate::pals::{
    absorption_derivatives, absorption_diagonal, diagonal_delta, PalsConfig, PalsParams,
};
use crate::solve::SolverOpts;

/// Stacked complex boundary data for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub omegas: Vec<f64>,
    /// Length `n_src * n_omega * n_det` in the documented stacking order.
    pub data: Vec<Complex64>,
    /// Relative noise fraction the data was generated with (0 = clean).
    pub noise: f64,
}

impl MeasurementSet {
    pub fn expected_len(n_src: usize, n_det: usize, n_omega: usize) -> usize {
        n_src * n_omega * n_det
    }

    pub fn validate(&self, n_src: usize, n_det: usize) -> Result<()> {
        if self.omegas.is_empty() {
            return Err(CoreError::validation("measurements: empty frequency list"));
        }
        let expect = Self::expected_len(n_src, n_det, self.omegas.len());
        if self.data.len() != expect {
            return Err(CoreError::Dimension(format!(
                "measurements: {} entries, layout requires {expect}",
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn stacked_index(&self, n_det: usize, i_src: usize, j_omega: usize, i_det: usize) -> usize {
        (i_src * self.omegas.len() + j_omega) * n_det + i_det
    }
}

/// Scatters per-frequency responses (`n_det x n_src` each) into the stacked
/// order.
pub fn stack_responses(per_omega: &[DMatrix<Complex64>]) -> Vec<Complex64> {
    let n_omega = per_omega.len();
    let (n_det, n_src) = per_omega[0].shape();
    let mut out = vec![Complex64::default(); n_src * n_omega * n_det];
    for (j, psi) in per_omega.iter().enumerate() {
        for i in 0..n_src {
            for ip in 0..n_det {
                out[(i * n_omega + j) * n_det + ip] = psi[(ip, i)];
            }
        }
    }
    out
}

/// Scatters per-frequency Jacobian blocks (rows `i_src * n_det + i_det`) into
/// stacked rows.
pub fn stack_jacobians(per_omega: &[DMatrix<Complex64>], n_det: usize) -> DMatrix<Complex64> {
    let n_omega = per_omega.len();
    let rows_per = per_omega[0].nrows();
    let n_src = rows_per / n_det;
    let ncols = per_omega[0].ncols();
    let mut out = DMatrix::<Complex64>::zeros(rows_per * n_omega, ncols);
    for (j, block) in per_omega.iter().enumerate() {
        for i in 0..n_src {
            for ip in 0..n_det {
                let src_row = i * n_det + ip;
                let dst_row = (i * n_omega + j) * n_det + ip;
                for k in 0..ncols {
                    out[(dst_row, k)] = block[(src_row, k)];
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendTag {
    Full,
    Rom,
}

/// Forward-model evaluator the optimizer is generic over. Both backends
/// produce identically stacked outputs.
pub trait ObjectiveBackend {
    fn tag(&self) -> BackendTag;
    /// `(n_src, n_det, n_omega)`.
    fn dims(&self) -> (usize, usize, usize);
    fn omegas(&self) -> &[f64];
    /// Stacked predicted observations at `p`.
    fn response(&mut self, p: &PalsParams, counters: &Counters) -> Result<Vec<Complex64>>;
    /// Stacked observations and the complex Jacobian at `p`.
    fn response_and_jacobian(
        &mut self,
        p: &PalsParams,
        counters: &Counters,
    ) -> Result<(Vec<Complex64>, DMatrix<Complex64>)>;
}

/// Full-order backend. Function evaluations cache the state solutions, so a
/// Jacobian at the same point adds only the detector-side adjoint solves.
pub struct FullBackend {
    pub ops: DiscreteOperators,
    pub cfg: PalsConfig,
    pub omegas: Vec<f64>,
    pub solver: SolverOpts,
    cache: Option<StateCache>,
}

struct StateCache {
    p: Vec<f64>,
    states: Vec<DMatrix<Complex64>>,
    responses: Vec<DMatrix<Complex64>>,
}

impl FullBackend {
    pub fn new(
        ops: DiscreteOperators,
        cfg: PalsConfig,
        omegas: Vec<f64>,
        solver: SolverOpts,
    ) -> Self {
        FullBackend {
            ops,
            cfg,
            omegas,
            solver,
            cache: None,
        }
    }

    /// Solves all source-side systems, counts one function evaluation, and
    /// fills the state cache.
    fn evaluate_states(&mut self, p: &PalsParams, counters: &Counters) -> Result<()> {
        if let Some(c) = &self.cache {
            if c.p == p.0 {
                return Ok(());
            }
        }
        let a1 = absorption_diagonal(p, &self.cfg, &self.ops.domain);
        counters.bump_k_fun();
        let mut states = Vec::with_capacity(self.omegas.len());
        let mut responses = Vec::with_capacity(self.omegas.len());
        for &w in &self.omegas {
            let (psi, x) =
                frequency_response_with_state(&self.ops, &a1, w, &self.solver, counters)?;
            states.push(x);
            responses.push(psi);
        }
        self.cache = Some(StateCache {
            p: p.0.clone(),
            states,
            responses,
        });
        Ok(())
    }
}

impl ObjectiveBackend for FullBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Full
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.ops.n_src(), self.ops.n_det(), self.omegas.len())
    }

    fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    fn response(&mut self, p: &PalsParams, counters: &Counters) -> Result<Vec<Complex64>> {
        self.evaluate_states(p, counters)?;
        Ok(stack_responses(&self.cache.as_ref().unwrap().responses))
    }

    fn response_and_jacobian(
        &mut self,
        p: &PalsParams,
        counters: &Counters,
    ) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
        self.evaluate_states(p, counters)?;
        let a1 = absorption_diagonal(p, &self.cfg, &self.ops.domain);
        let da1 = absorption_derivatives(p, &self.cfg, &self.ops.domain);
        counters.bump_k_jac();
        let mut blocks = Vec::with_capacity(self.omegas.len());
        for (j, &w) in self.omegas.iter().enumerate() {
            let z = adjoint_solutions(&self.ops, &a1, w, &self.solver, counters)?;
            let x = &self.cache.as_ref().unwrap().states[j];
            blocks.push(full_jacobian_block(&self.ops, &da1, x, &z)?);
        }
        let jac = stack_jacobians(&blocks, self.ops.n_det());
        Ok((
            stack_responses(&self.cache.as_ref().unwrap().responses),
            jac,
        ))
    }
}

/// Reduced-order backend. Absorption changes are applied as incremental
/// diagonal updates to the projected model.
pub struct RomBackend {
    pub rom: RomModel,
    pub cfg: PalsConfig,
    pub domain: crate::grid::DomainSpec,
    pub omegas: Vec<f64>,
}

impl RomBackend {
    pub fn new(
        rom: RomModel,
        cfg: PalsConfig,
        domain: crate::grid::DomainSpec,
        omegas: Vec<f64>,
    ) -> Self {
        RomBackend {
            rom,
            cfg,
            domain,
            omegas,
        }
    }

    fn move_to(&mut self, p: &PalsParams, counters: &Counters) {
        let next = absorption_diagonal(p, &self.cfg, &self.domain);
        let delta = diagonal_delta(self.rom.absorption(), &next);
        if !delta.is_empty() {
            self.rom.update_absorption(&delta, counters);
        }
    }
}

impl ObjectiveBackend for RomBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Rom
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.rom.n_src(), self.rom.n_det(), self.omegas.len())
    }

    fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    fn response(&mut self, p: &PalsParams, counters: &Counters) -> Result<Vec<Complex64>> {
        self.move_to(p, counters);
        let per: Vec<DMatrix<Complex64>> = self
            .omegas
            .iter()
            .map(|&w| self.rom.reduced_frequency_response(w, counters))
            .collect::<Result<_>>()?;
        Ok(stack_responses(&per))
    }

    fn response_and_jacobian(
        &mut self,
        p: &PalsParams,
        counters: &Counters,
    ) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
        self.move_to(p, counters);
        let da1 = absorption_derivatives(p, &self.cfg, &self.domain);
        let mut responses = Vec::with_capacity(self.omegas.len());
        let mut blocks = Vec::with_capacity(self.omegas.len());
        for &w in &self.omegas {
            let (psi, jac) = self.rom.reduced_response_and_jacobian(w, &da1, counters)?;
            responses.push(psi);
            blocks.push(jac);
        }
        let jac = stack_jacobians(&blocks, self.rom.n_det());
        Ok((stack_responses(&responses), jac))
    }
}

/// Complex residual lifted to `[Re; Im]`; its 2-norm equals the complex one.
pub fn lift_residual(m: &[Complex64], d: &[Complex64]) -> DVector<f64> {
    let n = m.len();
    let mut r = DVector::zeros(2 * n);
    for i in 0..n {
        let e = m[i] - d[i];
        r[i] = e.re;
        r[n + i] = e.im;
    }
    r
}

pub fn lift_jacobian(j: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (n, l) = j.shape();
    let mut out = DMatrix::zeros(2 * n, l);
    for k in 0..l {
        for i in 0..n {
            out[(i, k)] = j[(i, k)].re;
            out[(n + i, k)] = j[(i, k)].im;
        }
    }
    out
}

/// Real-lifted residual `M(p) - D`.
pub fn residual(
    backend: &mut dyn ObjectiveBackend,
    p: &PalsParams,
    data: &MeasurementSet,
    counters: &Counters,
) -> Result<DVector<f64>> {
    let (n_src, n_det, _) = backend.dims();
    data.validate(n_src, n_det)?;
    let m = backend.response(p, counters)?;
    Ok(lift_residual(&m, &data.data))
}

/// Real-lifted Jacobian of the residual.
pub fn jacobian(
    backend: &mut dyn ObjectiveBackend,
    p: &PalsParams,
    counters: &Counters,
) -> Result<DMatrix<f64>> {
    let (_, jac) = backend.response_and_jacobian(p, counters)?;
    Ok(lift_jacobian(&jac))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionOptions {
    pub max_iter: usize,
    /// Stop when the gradient norm falls below this fraction of the initial
    /// gradient norm.
    pub gradient_tol: f64,
    pub objective_decrease_tol: f64,
    pub initial_radius: f64,
    pub min_radius: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            max_iter: 200,
            gradient_tol: 1e-8,
            objective_decrease_tol: 1e-10,
            initial_radius: 1.0,
            min_radius: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    ObjectiveDecreaseTolerance,
    MaxIterations,
    RadiusUnderflow,
}

/// One recorded evaluation of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub objective: f64,
    pub radius: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionTrace {
    /// Accepted iterates, starting with the initial guess.
    pub iterates: Vec<Vec<f64>>,
    /// Objective value `||M(p) - D||_2` at each accepted iterate.
    pub objectives: Vec<f64>,
    /// Every evaluation in order, accepted or rejected.
    pub steps: Vec<TraceStep>,
    pub stop: StopReason,
}

/// Trust-region Gauss-Newton. The model step minimizes `||J d + r||` within
/// the radius; the constrained step uses the eigen-decomposition of `J^T J`
/// and a Levenberg shift found by bisection on the step norm.
pub fn solve(
    backend: &mut dyn ObjectiveBackend,
    p0: &PalsParams,
    data: &MeasurementSet,
    options: &InversionOptions,
    cfg: &PalsConfig,
    counters: &Counters,
) -> Result<(PalsParams, InversionTrace)> {
    let mut p = p0.clone();
    let mut r = residual(backend, &p, data, counters)?;
    let mut f = r.norm();
    if !f.is_finite() {
        return Err(CoreError::validation(
            "inversion: objective is not finite at the initial guess",
        ));
    }
    let mut radius = options.initial_radius;
    let mut trace = InversionTrace {
        iterates: vec![p.0.clone()],
        objectives: vec![f],
        steps: vec![TraceStep {
            objective: f,
            radius,
            accepted: true,
        }],
        stop: StopReason::MaxIterations,
    };

    let mut iter = 0;
    let mut g0_norm = None;
    'outer: while iter < options.max_iter {
        iter += 1;
        let (m, jc) = backend.response_and_jacobian(&p, counters)?;
        let j = lift_jacobian(&jc);
        r = lift_residual(&m, &data.data);
        f = r.norm();
        let g = j.transpose() * &r;
        let g0 = *g0_norm.get_or_insert(g.norm());
        if g.norm() <= options.gradient_tol * g0 {
            trace.stop = StopReason::GradientTolerance;
            break;
        }
        let jtj = j.transpose() * &j;
        let eig = jtj.symmetric_eigen();

        // inner loop: shrink the radius until a step is accepted
        loop {
            let d = trust_region_step(&eig, &g, radius);
            let step_norm = d.norm();
            let predicted = {
                let jd = &j * &d;
                let new_sq = (&r + &jd).norm_squared();
                0.5 * (f * f - new_sq)
            };
            if predicted <= 0.0 || step_norm == 0.0 {
                trace.stop = StopReason::GradientTolerance;
                break 'outer;
            }
            let p_trial = PalsParams::new(
                p.0.iter().zip(d.iter()).map(|(a, b)| a + b).collect(),
                cfg,
            )?;
            let r_trial = residual(backend, &p_trial, data, counters)?;
            let f_trial = r_trial.norm();
            let actual = 0.5 * (f * f - f_trial * f_trial);
            let rho = actual / predicted;
            let accepted = rho > 0.1 && f_trial < f;
            trace.steps.push(TraceStep {
                objective: f_trial,
                radius,
                accepted,
            });
            if accepted {
                if rho > 0.75 && step_norm >= 0.99 * radius {
                    radius *= 2.0;
                }
                let f_prev = f;
                p = p_trial;
                f = f_trial;
                trace.iterates.push(p.0.clone());
                trace.objectives.push(f);
                if f_prev - f <= options.objective_decrease_tol * f_prev.max(f64::MIN_POSITIVE) {
                    trace.stop = StopReason::ObjectiveDecreaseTolerance;
                    break 'outer;
                }
                break;
            }
            radius *= 0.25;
            if radius < options.min_radius {
                trace.stop = StopReason::RadiusUnderflow;
                break 'outer;
            }
        }
    }
    Ok((p, trace))
}

/// Minimizes `||J d + r||` over `||d|| <= radius` through the eigenpairs of
/// `J^T J`: `d(lambda) = -sum_i q_i^T g / (e_i + lambda) q_i`, with
/// `lambda >= 0` chosen so the constraint holds.
fn trust_region_step(
    eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>,
    g: &DVector<f64>,
    radius: f64,
) -> DVector<f64> {
    let coeffs = eig.eigenvectors.transpose() * g;
    let emax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tiny = emax.max(1.0) * 1e-14;
    let step_for = |lambda: f64| -> DVector<f64> {
        let mut w = DVector::zeros(coeffs.len());
        for i in 0..coeffs.len() {
            let denom = eig.eigenvalues[i].max(0.0) + lambda;
            if denom > tiny {
                w[i] = -coeffs[i] / denom;
            }
        }
        &eig.eigenvectors * w
    };
    let d0 = step_for(0.0);
    if d0.norm() <= radius {
        return d0;
    }
    // The step norm is strictly decreasing in lambda; bracket then bisect.
    let mut lo = 0.0;
    let mut hi = g.norm() / radius;
    while step_for(hi).norm() > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step_for(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    step_for(hi)
}
