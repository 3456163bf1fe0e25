//! TOML run configuration with documented defaults for every field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dot_pals_core::error::{CoreError, Result};
use dot_pals_core::inversion::InversionOptions;
use dot_pals_core::pals::PalsConfig;
use dot_pals_core::solve::{SolverKind, SolverOpts};
use dot_pals_core::{assemble, BackendMode, Diffusion, DiscreteOperators, DomainSpec, SourceDetectorLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub domain: DomainSection,
    #[serde(default)]
    pub layout: LayoutSection,
    #[serde(default)]
    pub frequencies: FrequencySection,
    #[serde(default)]
    pub pals: PalsSection,
    #[serde(default)]
    pub phantom: PhantomSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub reduction: ReductionSection,
    #[serde(default)]
    pub run: RunSection,
}

fn d_schema() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub half_width: f64,
    pub half_height: f64,
    pub nx: usize,
    pub nz: usize,
    pub speed_of_light: f64,
    pub robin_constant: f64,
    pub diffusion: f64,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection {
            half_width: 2.5,
            half_height: 2.5,
            nx: 50,
            nz: 50,
            speed_of_light: 1.0,
            robin_constant: 1.0,
            diffusion: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    pub sources: usize,
    pub detectors: usize,
    pub footprint_half_width: usize,
}

impl Default for LayoutSection {
    fn default() -> Self {
        LayoutSection {
            sources: 24,
            detectors: 24,
            footprint_half_width: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySection {
    pub omegas: Vec<f64>,
}

impl Default for FrequencySection {
    fn default() -> Self {
        FrequencySection { omegas: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PalsSection {
    pub m0: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub level: f64,
    pub mu_in: f64,
    pub mu_out: f64,
    pub sigma: f64,
}

impl Default for PalsSection {
    fn default() -> Self {
        let c = PalsConfig::default();
        PalsSection {
            m0: c.m0,
            epsilon: c.epsilon,
            gamma: c.gamma,
            level: c.level,
            mu_in: c.mu_in,
            mu_out: c.mu_out,
            sigma: c.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    /// Preset name, or a path to a PGM mask when `mask_file` is set.
    pub shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,
    pub seed: u64,
    pub noise: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            shape: "block-pair".into(),
            mask_file: None,
            seed: 7,
            noise: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iter: usize,
    pub gradient_tol: f64,
    pub objective_decrease_tol: f64,
    pub initial_radius: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = InversionOptions::default();
        OptimizerSection {
            max_iter: o.max_iter,
            gradient_tol: o.gradient_tol,
            objective_decrease_tol: o.objective_decrease_tol,
            initial_radius: o.initial_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    pub tau: f64,
    pub warm_start_samples: usize,
}

impl Default for ReductionSection {
    fn default() -> Self {
        ReductionSection {
            tau: 1e-8,
            warm_start_samples: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Full,
    Rom,
    RomRecycled,
}

impl Mode {
    pub fn to_backend(self) -> BackendMode {
        match self {
            Mode::Full => BackendMode::Full,
            Mode::Rom => BackendMode::Rom,
            Mode::RomRecycled => BackendMode::RomRecycled,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "rom" => Ok(Mode::Rom),
            "rom-recycled" => Ok(Mode::RomRecycled),
            other => Err(CoreError::validation(format!(
                "run.mode: unknown mode '{other}' (expected full, rom, or rom-recycled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Auto,
    Iterative,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<String>,
    pub out_dir: String,
    pub diagnostics: bool,
    pub solver: Solver,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: Mode::Rom,
            basis: None,
            out_dir: "out".into(),
            diagnostics: false,
            solver: Solver::Auto,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: d_schema(),
            domain: DomainSection::default(),
            layout: LayoutSection::default(),
            frequencies: FrequencySection::default(),
            pals: PalsSection::default(),
            phantom: PhantomSection::default(),
            optimizer: OptimizerSection::default(),
            reduction: ReductionSection::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CoreError::Format(format!("config: {e}")))?;
        if cfg.schema_version != 1 {
            return Err(CoreError::validation(format!(
                "config: unsupported schema_version {}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn domain_spec(&self) -> DomainSpec {
        DomainSpec {
            half_width: self.domain.half_width,
            half_height: self.domain.half_height,
            nx: self.domain.nx,
            nz: self.domain.nz,
            speed_of_light: self.domain.speed_of_light,
            robin_constant: self.domain.robin_constant,
            diffusion: Diffusion::Constant(self.domain.diffusion),
        }
    }

    pub fn build_ops(&self) -> Result<DiscreteOperators> {
        let d = self.domain_spec();
        let layout = SourceDetectorLayout::uniform(
            &d,
            self.layout.sources,
            self.layout.detectors,
            self.layout.footprint_half_width,
        )?;
        assemble(&d, &layout)
    }

    pub fn pals_config(&self) -> Result<PalsConfig> {
        let cfg = PalsConfig {
            m0: self.pals.m0,
            epsilon: self.pals.epsilon,
            gamma: self.pals.gamma,
            level: self.pals.level,
            mu_in: self.pals.mu_in,
            mu_out: self.pals.mu_out,
            sigma: self.pals.sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn inversion_options(&self) -> InversionOptions {
        InversionOptions {
            max_iter: self.optimizer.max_iter,
            gradient_tol: self.optimizer.gradient_tol,
            objective_decrease_tol: self.optimizer.objective_decrease_tol,
            initial_radius: self.optimizer.initial_radius,
            ..InversionOptions::default()
        }
    }

    pub fn solver_opts(&self) -> SolverOpts {
        SolverOpts {
            kind: match self.run.solver {
                Solver::Auto => SolverKind::Auto,
                Solver::Iterative => SolverKind::Iterative,
                Solver::Dense => SolverKind::Dense,
            },
            ..SolverOpts::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain_spec().validate()?;
        self.pals_config()?;
        if self.frequencies.omegas.is_empty() {
            return Err(CoreError::validation("frequencies.omegas: must not be empty"));
        }
        if !(0.0..1.0).contains(&self.phantom.noise) {
            return Err(CoreError::validation("phantom.noise: must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.reduction.tau) {
            return Err(CoreError::validation("reduction.tau: must be in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_identity() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = RunConfig::from_toml("[domain]\nhalf_width = 2.5\nhalf_height = 2.5\nnx = 25\nnz = 25\nspeed_of_light = 1.0\nrobin_constant = 1.0\ndiffusion = 0.03\n").unwrap();
        assert_eq!(cfg.domain.nx, 25);
        assert_eq!(cfg.layout.sources, 24);
        assert_eq!(cfg.run.mode, Mode::Rom);
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.domain.nz = 14; // non-square cells
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("non-square"), "{err}");
        let mut cfg = RunConfig::default();
        cfg.phantom.noise = 2.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("phantom.noise"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("typo_section = 1").is_err());
    }
}
