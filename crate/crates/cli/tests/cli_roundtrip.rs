use std::path::Path;
use std::process::Command;

use dot_pals_cli::commands;
use dot_pals_cli::config::{Mode, RunConfig, Solver};

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.domain.nx = 17;
    cfg.domain.nz = 17;
    cfg.layout.sources = 6;
    cfg.layout.detectors = 6;
    cfg.pals.m0 = 4;
    cfg.phantom.noise = 0.001;
    cfg.optimizer.max_iter = 8;
    cfg.run.solver = Solver::Dense;
    cfg
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn generate_then_invert_full_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.run.mode = Mode::Full;
    let out = commands::cmd_generate(&cfg, dir.path()).unwrap();
    assert!(out.mask_path.exists());
    assert!(out.measurements_path.exists());
    assert!(out.metadata_path.exists());

    let res = commands::cmd_invert(&cfg, dir.path(), None).unwrap();
    assert!(res.report_path.exists());
    assert!(dir.path().join("image.pgm").exists());
    assert!(dir.path().join("image.csv").exists());
    assert!(dir.path().join("trace.csv").exists());
    assert!(dir.path().join("iterates.csv").exists());
    assert!(res.report.final_misfit < res.report.initial_misfit);

    let report = std::fs::read_to_string(&res.report_path).unwrap();
    assert!(report.contains("mode = full"));
    assert!(report.contains("large_solves = "));
    assert!(report.contains("config_echo_begin"));
}

#[test]
fn rom_run_is_byte_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.run.mode = Mode::Rom;
    cfg.run.diagnostics = true;

    let mut artifacts: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let dir = root.path().join(format!("run{run}"));
        commands::cmd_generate(&cfg, &dir).unwrap();
        commands::cmd_invert(&cfg, &dir, None).unwrap();
        artifacts.push(
            [
                "phantom.pgm",
                "measurements.dotm",
                "report.txt",
                "image.pgm",
                "image.csv",
                "basis.bin",
                "diagnostics.csv",
            ]
            .iter()
            .map(|f| read_bytes(&dir.join(f)))
            .collect(),
        );
    }
    assert_eq!(artifacts[0], artifacts[1], "identical config+seed must give identical bytes");
}

#[test]
fn basis_build_info_verify_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();

    // two sample parameter vectors as plain text files
    let pals = cfg.pals_config().unwrap();
    let domain = cfg.domain_spec();
    let p = dot_pals_core::pals::initial_guess(&pals, &domain);
    let mut paths = Vec::new();
    for (k, scale) in [1.0, 0.8].iter().enumerate() {
        let path = dir.path().join(format!("sample{k}.txt"));
        let text: Vec<String> = p.0.iter().map(|v| format!("{}", v * scale)).collect();
        std::fs::write(&path, text.join("\n")).unwrap();
        paths.push(path);
    }

    let basis_path = dir.path().join("basis.bin");
    let rank = commands::cmd_basis_build(&cfg, &paths, &basis_path).unwrap();
    assert!(rank > 0);

    let info = commands::cmd_basis_info(&basis_path).unwrap();
    assert!(info.contains(&format!("rank = {rank}")));

    commands::cmd_basis_verify(&cfg, &basis_path).unwrap();

    // a different grid must be rejected
    let mut other = cfg.clone();
    other.domain.nx = 21;
    other.domain.nz = 21;
    let err = commands::cmd_basis_verify(&other, &basis_path).unwrap_err();
    assert!(err.to_string().contains("grid"));
}

#[test]
fn recycled_invert_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.run.mode = Mode::Rom;
    commands::cmd_generate(&cfg, dir.path()).unwrap();
    commands::cmd_invert(&cfg, dir.path(), None).unwrap();

    // reuse the basis the rom run saved, on a different phantom
    let mut cfg2 = cfg.clone();
    cfg2.phantom.seed = 11;
    cfg2.phantom.shape = "triple-disc".into();
    cfg2.run.mode = Mode::RomRecycled;
    cfg2.run.basis = Some(dir.path().join("basis.bin").display().to_string());
    let dir2 = dir.path().join("recycled");
    commands::cmd_generate(&cfg2, &dir2).unwrap();
    let res = commands::cmd_invert(&cfg2, &dir2, None).unwrap();
    assert_eq!(res.report.counters.large_solves, 0);

    // diagnose replays the run's iterates.csv
    let out = commands::cmd_diagnose(&cfg2, &dir2).unwrap();
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("iteration,gap,error_ratio"));
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_dotpals");
    let dir = tempfile::tempdir().unwrap();

    // validation error in the config -> 2
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[phantom]\nshape = \"block-pair\"\nseed = 1\nnoise = 3.0\n").unwrap();
    let status = Command::new(exe)
        .args(["generate", "--config"])
        .arg(&bad_cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // missing measurement file -> 4
    let status = Command::new(exe)
        .args(["invert", "--out"])
        .arg(dir.path().join("nowhere"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));

    // unreadable basis file -> 4
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a basis").unwrap();
    let status = Command::new(exe)
        .args(["basis", "info"])
        .arg(&junk)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}
