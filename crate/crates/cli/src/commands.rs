//! Subcommand implementations. Every artifact written here is deterministic
//! for a fixed config and seed.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dot_pals_core::error::{CoreError, Result};
use dot_pals_core::linalg::orthonormality_defect;
use dot_pals_core::mor::GlobalBasis;
use dot_pals_core::pals::{absorption_diagonal, PalsParams};
use dot_pals_core::pipeline::fidelity_series;
use dot_pals_core::synth::{
    load_measurements, phantom_from_mask, rasterize_phantom, read_pgm, save_measurements,
    simulate_measurements, write_mask_pgm, write_pgm, Phantom,
};
use dot_pals_core::diagnostics::write_series_csv;
use dot_pals_core::{
    run_reconstruction, Counters, DiscreteOperators, ReconstructionReport, ReconstructionSetup,
};

use crate::config::RunConfig;
use crate::report::write_report;

pub struct GenerateOutputs {
    pub mask_path: PathBuf,
    pub measurements_path: PathBuf,
    pub metadata_path: PathBuf,
}

fn build_phantom(cfg: &RunConfig, ops: &DiscreteOperators) -> Result<Phantom> {
    let pals = cfg.pals_config()?;
    if let Some(file) = &cfg.phantom.mask_file {
        let mut reader = std::io::BufReader::new(std::fs::File::open(file)?);
        let (nx, nz, gray) = read_pgm(&mut reader)?;
        if nx != ops.domain.nx || nz != ops.domain.nz {
            return Err(CoreError::Dimension(format!(
                "phantom.mask_file: mask is {nx}x{nz}, grid is {}x{}",
                ops.domain.nx, ops.domain.nz
            )));
        }
        let mask: Vec<bool> = gray.iter().map(|&g| g >= 128).collect();
        phantom_from_mask(mask, &ops.domain, cfg.phantom.seed, &pals, file)
    } else {
        rasterize_phantom(&cfg.phantom.shape, &ops.domain, cfg.phantom.seed, &pals)
    }
}

pub fn cmd_generate(cfg: &RunConfig, out_dir: &Path) -> Result<GenerateOutputs> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ops = cfg.build_ops()?;
    let phantom = build_phantom(cfg, &ops)?;
    let data = simulate_measurements(
        &phantom,
        &ops,
        &cfg.frequencies.omegas,
        cfg.phantom.noise,
        cfg.phantom.seed,
        &cfg.solver_opts(),
    )?;

    let mask_path = out_dir.join("phantom.pgm");
    let mut f = BufWriter::new(std::fs::File::create(&mask_path)?);
    write_mask_pgm(&mut f, phantom.nx, phantom.nz, &phantom.mask)?;
    f.flush()?;

    let measurements_path = out_dir.join("measurements.dotm");
    save_measurements(
        &measurements_path,
        &data,
        ops.n_src(),
        ops.n_det(),
        ops.grid_hash(),
        cfg.phantom.seed,
    )?;

    // ground-truth absorption on the numeric grid, for later comparison
    write_grid_csv(&out_dir.join("truth.csv"), ops.domain.nx, &phantom.absorption)?;

    let metadata_path = out_dir.join("metadata.toml");
    let mut meta = String::new();
    meta.push_str(&format!("grid_hash = {}\n", ops.grid_hash()));
    meta.push_str(&format!("n_src = {}\n", ops.n_src()));
    meta.push_str(&format!("n_det = {}\n", ops.n_det()));
    meta.push_str(&format!("entries = {}\n", data.data.len()));
    meta.push_str("\n# configuration echo\n");
    meta.push_str(&cfg.to_toml());
    std::fs::write(&metadata_path, meta)?;

    Ok(GenerateOutputs {
        mask_path,
        measurements_path,
        metadata_path,
    })
}

fn write_grid_csv(path: &Path, nx: usize, values: &[f64]) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    for row in values.chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn write_image_pgm(path: &Path, nx: usize, nz: usize, mu: &[f64], lo: f64, hi: f64) -> Result<()> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let gray: Vec<u8> = mu
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write_pgm(&mut f, nx, nz, &gray)?;
    f.flush()?;
    Ok(())
}

pub struct InvertOutputs {
    pub report: ReconstructionReport,
    pub report_path: PathBuf,
}

pub fn cmd_invert(cfg: &RunConfig, out_dir: &Path, data_path: Option<&Path>) -> Result<InvertOutputs> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ops = cfg.build_ops()?;
    let default_data = out_dir.join("measurements.dotm");
    let file = load_measurements(data_path.unwrap_or(&default_data))?;
    if file.grid_hash != ops.grid_hash() {
        return Err(CoreError::validation(
            "measurement file was generated on a different grid or layout",
        ));
    }
    if file.n_src != ops.n_src() || file.n_det != ops.n_det() {
        return Err(CoreError::Dimension(
            "measurement layout does not match the configured layout".into(),
        ));
    }

    let mut setup = ReconstructionSetup::new(
        cfg.pals_config()?,
        file.set,
        cfg.run.mode.to_backend(),
    );
    setup.warm_start_samples = cfg.reduction.warm_start_samples;
    setup.tau = cfg.reduction.tau;
    setup.options = cfg.inversion_options();
    setup.solver = cfg.solver_opts();
    setup.diagnostics = cfg.run.diagnostics;
    if let Some(basis_path) = &cfg.run.basis {
        setup.basis = Some(GlobalBasis::load(Path::new(basis_path))?);
    }

    let report = run_reconstruction(&ops, &setup)?;

    let pals = cfg.pals_config()?;
    write_image_pgm(
        &out_dir.join("image.pgm"),
        ops.domain.nx,
        ops.domain.nz,
        &report.image,
        pals.mu_out,
        pals.mu_in,
    )?;
    write_grid_csv(&out_dir.join("image.csv"), ops.domain.nx, &report.image)?;

    // evaluation trace and accepted iterates (diagnose re-reads the latter)
    {
        let mut f = BufWriter::new(std::fs::File::create(out_dir.join("trace.csv"))?);
        writeln!(f, "evaluation,objective,radius,accepted")?;
        for (i, s) in report.trace.steps.iter().enumerate() {
            writeln!(f, "{i},{:.17e},{:.17e},{}", s.objective, s.radius, s.accepted)?;
        }
        f.flush()?;
    }
    {
        let mut f = BufWriter::new(std::fs::File::create(out_dir.join("iterates.csv"))?);
        for it in &report.trace.iterates {
            let line: Vec<String> = it.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
    }
    if cfg.run.diagnostics {
        let mut f = BufWriter::new(std::fs::File::create(out_dir.join("diagnostics.csv"))?);
        write_series_csv(&mut f, &report.gap_series, &report.error_ratio_series)?;
        f.flush()?;
    }
    if let Some(b) = &report.basis {
        if cfg.run.basis.is_none() {
            b.save(&out_dir.join("basis.bin"))?;
        }
    }

    let report_path = out_dir.join("report.txt");
    let mut f = BufWriter::new(std::fs::File::create(&report_path)?);
    write_report(&mut f, cfg, &report)?;
    f.flush()?;
    Ok(InvertOutputs {
        report,
        report_path,
    })
}

fn read_params_file(path: &Path, expected: usize) -> Result<PalsParams> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CoreError::Format(format!("{}: bad number '{t}'", path.display())))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(CoreError::Dimension(format!(
            "{}: {} values, expected {expected}",
            path.display(),
            values.len()
        )));
    }
    Ok(PalsParams(values))
}

pub fn cmd_basis_build(cfg: &RunConfig, sample_paths: &[PathBuf], out_path: &Path) -> Result<usize> {
    cfg.validate()?;
    if sample_paths.is_empty() {
        return Err(CoreError::validation("basis build: no sample files given"));
    }
    let ops = cfg.build_ops()?;
    let pals = cfg.pals_config()?;
    let samples: Vec<Vec<f64>> = sample_paths
        .iter()
        .map(|p| {
            read_params_file(p, pals.param_len())
                .map(|params| absorption_diagonal(&params, &pals, &ops.domain))
        })
        .collect::<Result<_>>()?;
    let counters = Counters::default();
    let basis = GlobalBasis::build(
        &ops,
        &samples,
        &cfg.frequencies.omegas,
        cfg.reduction.tau,
        &cfg.solver_opts(),
        &counters,
    )?;
    basis.save(out_path)?;
    Ok(basis.rank())
}

pub fn cmd_basis_info(path: &Path) -> Result<String> {
    let basis = GlobalBasis::load(path)?;
    let omegas: Vec<String> = basis.omegas.iter().map(|w| format!("{w:e}")).collect();
    Ok(format!(
        "rank = {}\nstate_dim = {}\ntau = {:e}\nomegas = {}\ngrid_hash = {}\n",
        basis.rank(),
        basis.v.nrows(),
        basis.tau,
        omegas.join(","),
        basis.grid_hash
    ))
}

pub fn cmd_basis_verify(cfg: &RunConfig, path: &Path) -> Result<()> {
    cfg.validate()?;
    let ops = cfg.build_ops()?;
    let basis = GlobalBasis::load(path)?;
    if !basis.matches(&ops) {
        return Err(CoreError::validation(
            "basis verify: grid hash does not match the configured grid/layout",
        ));
    }
    let defect = orthonormality_defect(&basis.v);
    if defect > 1e-10 {
        return Err(CoreError::validation(format!(
            "basis verify: columns are not orthonormal (defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// Recomputes the gap and error-ratio series for a finished run directory
/// (needs its `iterates.csv`).
pub fn cmd_diagnose(cfg: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let ops = cfg.build_ops()?;
    let pals = cfg.pals_config()?;
    let text = std::fs::read_to_string(run_dir.join("iterates.csv"))?;
    let iterates: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| CoreError::Format(format!("iterates.csv: bad number '{t}'")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    if iterates.is_empty() {
        return Err(CoreError::validation("diagnose: empty iterate list"));
    }
    let (gaps, ratios) = fidelity_series(
        &ops,
        &pals,
        &cfg.frequencies.omegas,
        &cfg.solver_opts(),
        &iterates,
    )?;
    let out = run_dir.join("diagnostics.csv");
    let mut f = BufWriter::new(std::fs::File::create(&out)?);
    write_series_csv(&mut f, &gaps, &ratios)?;
    f.flush()?;
    Ok(out)
}
