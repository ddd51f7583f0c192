pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod output;
pub mod spectral;
pub mod tensor;
pub mod uniaxial;
pub mod verify;

pub use diagnostics::{CutoffProfile, DiagnosticsRecord, DiagnosticsSeries, TailConstants};
pub use dynamics::{InitialData, RunOutput, Solver, SolverConfig, StepReport};
pub use error::{Error, ParamError, Result, SpectralError, StepError};
pub use spectral::{FieldSet, Grid, ScalarField, C64};
pub use tensor::{BulkParams, GradQ, Mat3, TracelessSym3};
