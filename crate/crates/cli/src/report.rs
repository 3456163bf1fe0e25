//! Key-value run report, deterministic byte-for-byte for identical runs.

use std::io::Write;

use dot_pals_core::error::Result;
use dot_pals_core::{BackendMode, ReconstructionReport};

use crate::config::RunConfig;

fn mode_name(mode: BackendMode) -> &'static str {
    match mode {
        BackendMode::Full => "full",
        BackendMode::Rom => "rom",
        BackendMode::RomRecycled => "rom-recycled",
    }
}

pub fn write_report(
    out: &mut dyn Write,
    cfg: &RunConfig,
    report: &ReconstructionReport,
) -> Result<()> {
    writeln!(out, "schema = 1")?;
    writeln!(out, "mode = {}", mode_name(report.mode))?;
    writeln!(out, "initial_misfit = {:.17e}", report.initial_misfit)?;
    writeln!(out, "final_misfit = {:.17e}", report.final_misfit)?;
    writeln!(out, "misfit_reduction = {:.17e}", report.misfit_reduction())?;
    writeln!(out, "stop = {:?}", report.trace.stop)?;
    writeln!(out, "accepted_iterates = {}", report.trace.iterates.len())?;
    writeln!(out, "evaluations = {}", report.trace.steps.len())?;
    let c = &report.counters;
    writeln!(out, "large_solves = {}", c.large_solves)?;
    writeln!(out, "reduced_solves = {}", c.reduced_solves)?;
    writeln!(out, "delta_flops = {}", c.delta_flops)?;
    writeln!(out, "k_fun = {}", c.k_fun)?;
    writeln!(out, "k_jac = {}", c.k_jac)?;
    writeln!(out, "samples = {}", c.samples)?;
    match c.offline_online_ratio {
        Some(r) => writeln!(out, "offline_online_ratio = {r:.17e}")?,
        None => writeln!(out, "offline_online_ratio = none")?,
    }
    if let Some(b) = &report.basis {
        writeln!(out, "basis_rank = {}", b.rank())?;
    }
    let params: Vec<String> = report
        .final_params
        .0
        .iter()
        .map(|v| format!("{v:.17e}"))
        .collect();
    writeln!(out, "final_params = {}", params.join(","))?;
    let objectives: Vec<String> = report
        .trace
        .objectives
        .iter()
        .map(|v| format!("{v:.17e}"))
        .collect();
    writeln!(out, "objective_history = {}", objectives.join(","))?;
    writeln!(out, "config_echo_begin")?;
    for line in cfg.to_toml().lines() {
        writeln!(out, "  {line}")?;
    }
    writeln!(out, "config_echo_end")?;
    Ok(())
}
