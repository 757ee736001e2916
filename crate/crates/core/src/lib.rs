//! Numerical laboratory for the anomaly flow of conformally balanced metrics
//! on flat complex tori.
pub mod algebra;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod linearization;
pub mod torus;
pub mod verify;

pub use algebra::{CMatrix, PointForm};
pub use diagnostics::{DecayFit, DefectReport, RunRecord, RunRow};
pub use error::{FlowError, Result};
pub use flow::{FlowConfig, FlowState, Formulation, MetricState, RunOutcome, RunStatus};
pub use torus::{FormField, MatrixField, TorusGrid};
