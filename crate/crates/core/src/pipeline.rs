//! End-to-end reconstruction orchestration: warm start, basis construction
//! or reuse, reduced-order inversion, and final image rasterization.

use nalgebra::DMatrix;

use crate::diagnostics::{
    default_hinf_grid, hinf_on_grid, interpolation_error_ratio, subspace_gap, Counters, CostReport,
    ErrorRatioSeries, GapSeries,
};
use crate::error::{CoreError, Result};
use crate::forward::frequency_response;
use crate::grid::DiscreteOperators;
use crate::inversion::{
    solve, FullBackend, InversionOptions, InversionTrace, MeasurementSet, ObjectiveBackend,
    RomBackend,
};
use crate::linalg::truncated_left_singular_vectors;
use crate::mor::{build_local_basis, GlobalBasis, RomModel};
use crate::pals::{absorption_diagonal, absorption_image, initial_guess, PalsConfig, PalsParams};
use crate::solve::SolverOpts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendMode {
    Full,
    Rom,
    /// Reduced inversion with a preloaded basis; performs no large solves.
    RomRecycled,
}

/// Everything `run_reconstruction` needs besides the assembled operators.
#[derive(Debug, Clone)]
pub struct ReconstructionSetup {
    pub cfg: PalsConfig,
    pub data: MeasurementSet,
    pub mode: BackendMode,
    /// Number of leading full-model iterations whose iterates seed the basis.
    pub warm_start_samples: usize,
    /// Preloaded basis (required for `RomRecycled`, optional otherwise).
    pub basis: Option<GlobalBasis>,
    /// Basis truncation tolerance.
    pub tau: f64,
    pub options: InversionOptions,
    pub solver: SolverOpts,
    /// Starting point; the uniform alternating-sign layout when absent.
    pub initial: Option<PalsParams>,
    /// Compute the per-iteration gap and error-ratio series (extra full-order
    /// solves on separate counters).
    pub diagnostics: bool,
}

impl ReconstructionSetup {
    pub fn new(cfg: PalsConfig, data: MeasurementSet, mode: BackendMode) -> Self {
        ReconstructionSetup {
            cfg,
            data,
            mode,
            warm_start_samples: 2,
            basis: None,
            tau: 1e-8,
            options: InversionOptions::default(),
            solver: SolverOpts::default(),
            initial: None,
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub mode: BackendMode,
    pub final_params: PalsParams,
    /// Trace of the main (full or reduced) inversion.
    pub trace: InversionTrace,
    /// Trace of the warm-start phase, when one ran.
    pub warm_trace: Option<InversionTrace>,
    pub initial_misfit: f64,
    pub final_misfit: f64,
    pub counters: CostReport,
    /// Basis built or reused in this run, available for persistence.
    pub basis: Option<GlobalBasis>,
    pub gap_series: GapSeries,
    pub error_ratio_series: ErrorRatioSeries,
    /// Reconstructed absorption values per grid node.
    pub image: Vec<f64>,
}

impl ReconstructionReport {
    pub fn misfit_reduction(&self) -> f64 {
        self.initial_misfit / self.final_misfit.max(f64::MIN_POSITIVE)
    }
}

fn misfit(
    backend: &mut dyn ObjectiveBackend,
    p: &PalsParams,
    data: &MeasurementSet,
    counters: &Counters,
) -> Result<f64> {
    Ok(crate::inversion::residual(backend, p, data, counters)?.norm())
}

/// Runs the configured reconstruction. Phase failures carry a phase tag.
pub fn run_reconstruction(
    ops: &DiscreteOperators,
    setup: &ReconstructionSetup,
) -> Result<ReconstructionReport> {
    setup.cfg.validate().map_err(|e| e.in_phase("setup"))?;
    setup
        .data
        .validate(ops.n_src(), ops.n_det())
        .map_err(|e| e.in_phase("setup"))?;
    let counters = Counters::default();
    let p0 = setup
        .initial
        .clone()
        .unwrap_or_else(|| initial_guess(&setup.cfg, &ops.domain));

    match setup.mode {
        BackendMode::Full => {
            let mut backend = FullBackend::new(
                ops.clone(),
                setup.cfg.clone(),
                setup.data.omegas.clone(),
                setup.solver,
            );
            let initial_misfit =
                misfit(&mut backend, &p0, &setup.data, &counters).map_err(|e| e.in_phase("inversion"))?;
            let (p_final, trace) = solve(
                &mut backend,
                &p0,
                &setup.data,
                &setup.options,
                &setup.cfg,
                &counters,
            )
            .map_err(|e| e.in_phase("inversion"))?;
            let final_misfit = *trace.objectives.last().unwrap();
            counters.set_samples(setup.warm_start_samples.max(1));
            let image = absorption_image(&p_final, &setup.cfg, &ops.domain);
            Ok(ReconstructionReport {
                mode: setup.mode,
                final_params: p_final,
                trace,
                warm_trace: None,
                initial_misfit,
                final_misfit,
                counters: counters.report(),
                basis: None,
                gap_series: GapSeries::default(),
                error_ratio_series: ErrorRatioSeries::default(),
                image,
            })
        }
        BackendMode::Rom | BackendMode::RomRecycled => {
            let mut warm_trace = None;
            let mut rom_start = p0.clone();
            let basis = if let Some(b) = &setup.basis {
                if !b.matches(ops) {
                    return Err(CoreError::validation(
                        "preloaded basis belongs to a different grid or layout",
                    )
                    .in_phase("basis"));
                }
                b.clone()
            } else {
                if setup.mode == BackendMode::RomRecycled {
                    return Err(CoreError::validation(
                        "recycled mode requires a preloaded basis",
                    )
                    .in_phase("basis"));
                }
                // warm start: a few full-model iterations provide the
                // parameter samples the basis interpolates at
                let k = setup.warm_start_samples.max(1);
                let mut samples = vec![p0.clone()];
                if k > 1 {
                    let mut full = FullBackend::new(
                        ops.clone(),
                        setup.cfg.clone(),
                        setup.data.omegas.clone(),
                        setup.solver,
                    );
                    let warm_opts = InversionOptions {
                        max_iter: k - 1,
                        ..setup.options
                    };
                    let (_, tr) = solve(
                        &mut full,
                        &p0,
                        &setup.data,
                        &warm_opts,
                        &setup.cfg,
                        &counters,
                    )
                    .map_err(|e| e.in_phase("warm-start"))?;
                    for it in tr.iterates.iter().skip(1).take(k - 1) {
                        samples.push(PalsParams(it.clone()));
                    }
                    if let Some(last) = samples.last() {
                        rom_start = last.clone();
                    }
                    warm_trace = Some(tr);
                }
                let diagonals: Vec<Vec<f64>> = samples
                    .iter()
                    .map(|p| absorption_diagonal(p, &setup.cfg, &ops.domain))
                    .collect();
                GlobalBasis::build(
                    ops,
                    &diagonals,
                    &setup.data.omegas,
                    setup.tau,
                    &setup.solver,
                    &counters,
                )
                .map_err(|e| e.in_phase("basis"))?
            };
            counters.set_samples(counters.samples().max(1) as usize);

            let a1_start = absorption_diagonal(&rom_start, &setup.cfg, &ops.domain);
            let rom = RomModel::reduce(ops, &basis, &a1_start).map_err(|e| e.in_phase("basis"))?;
            let mut backend = RomBackend::new(
                rom,
                setup.cfg.clone(),
                ops.domain.clone(),
                setup.data.omegas.clone(),
            );
            let initial_misfit = misfit(&mut backend, &p0, &setup.data, &counters)
                .map_err(|e| e.in_phase("inversion"))?;
            let (p_final, trace) = solve(
                &mut backend,
                &rom_start,
                &setup.data,
                &setup.options,
                &setup.cfg,
                &counters,
            )
            .map_err(|e| e.in_phase("inversion"))?;
            let final_misfit = *trace.objectives.last().unwrap();

            let (gap_series, error_ratio_series) = if setup.diagnostics {
                fidelity_series(
                    ops,
                    &setup.cfg,
                    &setup.data.omegas,
                    &setup.solver,
                    &trace.iterates,
                )
                .map_err(|e| e.in_phase("diagnostics"))?
            } else {
                (GapSeries::default(), ErrorRatioSeries::default())
            };

            let image = absorption_image(&p_final, &setup.cfg, &ops.domain);
            Ok(ReconstructionReport {
                mode: setup.mode,
                final_params: p_final,
                trace,
                warm_trace,
                initial_misfit,
                final_misfit,
                counters: counters.report(),
                basis: Some(basis),
                gap_series,
                error_ratio_series,
                image,
            })
        }
    }
}

/// Post-hoc fidelity series over a sequence of iterates: the directed gap
/// between the first iterate's local interpolation space and each later one,
/// next to the relative interpolation error of the ROM *frozen at the first
/// iterate* and evaluated at the later ones — the two curves the gap bound
/// pairs up. All solves run on throwaway counters.
pub fn fidelity_series(
    ops: &DiscreteOperators,
    cfg: &PalsConfig,
    omegas: &[f64],
    solver: &SolverOpts,
    iterates: &[Vec<f64>],
) -> Result<(GapSeries, ErrorRatioSeries)> {
    let scratch = Counters::default();
    let grid = default_hinf_grid(omegas);
    let mut gaps = Vec::new();
    let mut ratios = Vec::new();
    let mut first: Option<(DMatrix<f64>, RomModel, f64)> = None;
    for it in iterates {
        let p = PalsParams(it.clone());
        let a1 = absorption_diagonal(&p, cfg, &ops.domain);
        let local = build_local_basis(ops, &a1, omegas, solver, &scratch)?;
        let (vk, sigma) = truncated_left_singular_vectors(&local.columns, 1e-10)?;
        let basis_k = GlobalBasis {
            v: vk.clone(),
            sigma,
            tau: 1e-10,
            omegas: omegas.to_vec(),
            grid_hash: ops.grid_hash(),
        };
        let rom_k = RomModel::reduce(ops, &basis_k, &a1)?;
        let hinf_k = hinf_on_grid(&rom_k, &grid, &scratch)?;
        if first.is_none() {
            first = Some((vk.clone(), rom_k.clone(), hinf_k));
        }
        let (v1, rom_j, hinf_j) = first.as_mut().unwrap();
        gaps.push(subspace_gap(v1, &vk)?);

        rom_j.set_absorption(&a1)?;
        let mut worst: f64 = 0.0;
        for &w in omegas {
            let full = frequency_response(ops, &a1, w, solver, &scratch)?;
            let red = rom_j.reduced_frequency_response(w, &scratch)?;
            worst = worst.max(interpolation_error_ratio(&full, &red, hinf_k, *hinf_j)?);
        }
        ratios.push(worst);
    }
    Ok((GapSeries(gaps), ErrorRatioSeries(ratios)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble, Diffusion, DomainSpec, SourceDetectorLayout};
    use crate::solve::SolverKind;
    use crate::synth::{rasterize_phantom, simulate_measurements};

    fn small_setup(mode: BackendMode) -> (DiscreteOperators, ReconstructionSetup) {
        let d = DomainSpec {
            half_width: 2.5,
            half_height: 2.5,
            nx: 17,
            nz: 17,
            speed_of_light: 1.0,
            robin_constant: 1.0,
            diffusion: Diffusion::Constant(0.03),
        };
        let layout = SourceDetectorLayout::uniform(&d, 6, 6, 0).unwrap();
        let ops = assemble(&d, &layout).unwrap();
        let cfg = PalsConfig {
            m0: 4,
            ..PalsConfig::default()
        };
        let phantom = rasterize_phantom("block-pair", &d, 5, &cfg).unwrap();
        let solver = SolverOpts {
            kind: SolverKind::Dense,
            ..SolverOpts::default()
        };
        let data = simulate_measurements(&phantom, &ops, &[0.0], 0.001, 5, &solver).unwrap();
        let mut setup = ReconstructionSetup::new(cfg, data, mode);
        setup.solver = solver;
        setup.options.max_iter = 25;
        (ops, setup)
    }

    #[test]
    fn full_mode_reduces_misfit() {
        let (ops, setup) = small_setup(BackendMode::Full);
        let report = run_reconstruction(&ops, &setup).unwrap();
        assert!(report.final_misfit < report.initial_misfit);
        assert!(report.misfit_reduction() > 2.0, "{}", report.misfit_reduction());
        assert_eq!(report.image.len(), ops.n);
        // counter identity for the pure full-model run
        let r = &report.counters;
        let expect = r.k_fun * (setup.data.omegas.len() * ops.n_src()) as u64
            + r.k_jac * (setup.data.omegas.len() * ops.n_det()) as u64;
        assert_eq!(r.large_solves, expect);
        assert!(r.offline_online_ratio.is_some());
    }

    #[test]
    fn rom_mode_builds_basis_and_reduces_misfit() {
        let (ops, mut setup) = small_setup(BackendMode::Rom);
        setup.diagnostics = true;
        let report = run_reconstruction(&ops, &setup).unwrap();
        assert!(report.basis.is_some());
        assert!(report.misfit_reduction() > 2.0, "{}", report.misfit_reduction());
        assert!(report.counters.reduced_solves > 0);
        let gaps = &report.gap_series.0;
        assert_eq!(gaps.len(), report.trace.iterates.len());
        // sqrt(1 - sigma^2) amplifies SVD roundoff, so "zero" is ~sqrt(eps)
        assert!(gaps[0] <= 1e-7, "self-gap {}", gaps[0]);
        assert!(gaps.iter().all(|g| (0.0..=1.0).contains(g)));
        assert_eq!(report.error_ratio_series.0.len(), gaps.len());
        assert!(report.error_ratio_series.0.iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn recycled_mode_uses_no_large_solves() {
        let (ops, setup) = small_setup(BackendMode::Rom);
        let first = run_reconstruction(&ops, &setup).unwrap();
        let cfg = setup.cfg.clone();
        // different phantom, same grid and layout
        let phantom = rasterize_phantom("triple-disc", &ops.domain, 9, &cfg).unwrap();
        let data =
            simulate_measurements(&phantom, &ops, &[0.0], 0.001, 9, &setup.solver).unwrap();
        let mut second = ReconstructionSetup::new(cfg, data, BackendMode::RomRecycled);
        second.basis = first.basis.clone();
        second.solver = setup.solver;
        second.options.max_iter = 25;
        let report = run_reconstruction(&ops, &second).unwrap();
        assert_eq!(report.counters.large_solves, 0);
        assert!(report.final_misfit < report.initial_misfit);
    }

    #[test]
    fn recycled_mode_requires_basis() {
        let (ops, mut setup) = small_setup(BackendMode::RomRecycled);
        setup.basis = None;
        match run_reconstruction(&ops, &setup) {
            Err(CoreError::Phase { phase, .. }) => assert_eq!(phase, "basis"),
            other => panic!("expected basis-phase error, got {other:?}"),
        }
    }
}
