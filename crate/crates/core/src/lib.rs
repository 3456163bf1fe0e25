//! Frequency-domain diffuse optical tomography with parametric level-set
//! absorption images and interpolatory model order reduction.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: finite-difference assembly of the forward model operators,
//! - [`pals`]: the parametric level-set absorption map and its derivatives,
//! - [`solve`] / [`forward`]: full-order solves, responses, and Jacobians,
//! - [`mor`]: interpolatory reduction bases and the projected model,
//! - [`inversion`]: trust-region Gauss-Newton over either backend,
//! - [`synth`]: phantom generation and measurement synthesis,
//! - [`diagnostics`]: solve accounting and reduced-model fidelity checks.

pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod grid;
pub mod inversion;
pub mod linalg;
pub mod mor;
pub mod pals;
pub mod pipeline;
pub mod solve;
pub mod sparse;
pub mod synth;

pub use diagnostics::{CostReport, Counters};
pub use error::{CoreError, Result};
pub use grid::{assemble, Diffusion, DiscreteOperators, DomainSpec, NodeKind, SourceDetectorLayout};
pub use inversion::{
    BackendTag, FullBackend, InversionOptions, InversionTrace, MeasurementSet, ObjectiveBackend,
    RomBackend, StopReason,
};
pub use mor::{GlobalBasis, LocalBasis, RomModel};
pub use pals::{PalsConfig, PalsParams, SparseDiag};
pub use pipeline::{run_reconstruction, BackendMode, ReconstructionReport, ReconstructionSetup};
pub use solve::{SolverKind, SolverOpts};
pub use sparse::CsrMatrix;
pub use synth::Phantom;
