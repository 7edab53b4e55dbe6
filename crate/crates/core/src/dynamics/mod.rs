//! Trajectory integration and loss channels.

pub(crate) mod hardwall;
pub mod integrate;
pub mod loss;
pub mod state;

pub use integrate::{BoundaryModel, IntegratorConfig, PropagationStats, Simulation, StepReport, TrajectoryRow};
pub use loss::{check_losses, Encounter, LossModelConfig, LossStream, MajoranaMode};
pub use state::{MoleculeState, Status, StatusCounts};
