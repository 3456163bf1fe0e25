use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dot_pals_cli::commands;
use dot_pals_cli::config::{Mode, RunConfig};
use dot_pals_core::error::CoreError;

#[derive(Parser)]
#[command(name = "dotpals", about = "Diffuse optical tomography with parametric level sets", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override `phantom.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phantom and noisy boundary measurements.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct an absorption image from measurements.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Measurement file (defaults to <out_dir>/measurements.dotm).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Override `run.mode` (full, rom, rom-recycled).
        #[arg(long)]
        mode: Option<String>,
        /// Reduction basis to recycle; overrides `run.basis`.
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Also write the per-iteration fidelity diagnostics.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Build, inspect, or verify a reduction basis file.
    Basis {
        #[command(subcommand)]
        action: BasisAction,
    },
    /// Recompute fidelity diagnostics for a finished run directory.
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum BasisAction {
    /// Build a basis from parameter sample files (whitespace-separated text).
    Build {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output basis file.
        #[arg(long, default_value = "basis.bin")]
        out: PathBuf,
        /// One file of level-set parameters per sample point.
        samples: Vec<PathBuf>,
    },
    /// Print the header of a basis file.
    Info { path: PathBuf },
    /// Check grid compatibility and column orthonormality.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        path: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CoreError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_common(cfg: &mut RunConfig, common: &Common) {
    if let Some(out) = &common.out {
        cfg.run.out_dir = out.display().to_string();
    }
    if let Some(seed) = common.seed {
        cfg.phantom.seed = seed;
    }
}

fn run(cli: Cli) -> Result<(), CoreError> {
    match cli.command {
        Command::Generate { common } => {
            let mut cfg = load_config(&common.config)?;
            apply_common(&mut cfg, &common);
            let out_dir = PathBuf::from(&cfg.run.out_dir);
            let outputs = commands::cmd_generate(&cfg, &out_dir)?;
            println!("wrote {}", outputs.mask_path.display());
            println!("wrote {}", outputs.measurements_path.display());
            println!("wrote {}", outputs.metadata_path.display());
            Ok(())
        }
        Command::Invert {
            common,
            data,
            mode,
            basis,
            diagnostics,
        } => {
            let mut cfg = load_config(&common.config)?;
            apply_common(&mut cfg, &common);
            if let Some(m) = mode {
                cfg.run.mode = Mode::parse(&m)?;
            }
            if let Some(b) = basis {
                cfg.run.basis = Some(b.display().to_string());
            }
            if diagnostics {
                cfg.run.diagnostics = true;
            }
            let out_dir = PathBuf::from(&cfg.run.out_dir);
            let outputs = commands::cmd_invert(&cfg, &out_dir, data.as_deref())?;
            println!("wrote {}", outputs.report_path.display());
            println!(
                "misfit {:.6e} -> {:.6e} ({:.1}x)",
                outputs.report.initial_misfit,
                outputs.report.final_misfit,
                outputs.report.misfit_reduction()
            );
            Ok(())
        }
        Command::Basis { action } => match action {
            BasisAction::Build {
                config,
                out,
                samples,
            } => {
                let cfg = load_config(&config)?;
                let rank = commands::cmd_basis_build(&cfg, &samples, &out)?;
                println!("wrote {} (rank {rank})", out.display());
                Ok(())
            }
            BasisAction::Info { path } => {
                print!("{}", commands::cmd_basis_info(&path)?);
                Ok(())
            }
            BasisAction::Verify { config, path } => {
                let cfg = load_config(&config)?;
                commands::cmd_basis_verify(&cfg, &path)?;
                println!("{}: ok", path.display());
                Ok(())
            }
        },
        Command::Diagnose { common } => {
            let mut cfg = load_config(&common.config)?;
            apply_common(&mut cfg, &common);
            let run_dir = PathBuf::from(&cfg.run.out_dir);
            let out = commands::cmd_diagnose(&cfg, &run_dir)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn exit_code(err: &CoreError) -> u8 {
    match err {
        CoreError::Validation(_) | CoreError::Dimension(_) => 2,
        CoreError::Solver { .. } | CoreError::SingularReduced(_) => 3,
        CoreError::Format(_) | CoreError::Io(_) => 4,
        CoreError::Phase { source, .. } => exit_code(source),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
