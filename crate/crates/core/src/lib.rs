//! Monte Carlo simulation of polar molecules in a microstructured electric box trap.
//!
//! All numerical code is generic over [`num::Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

pub mod analysis;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod io;
pub mod num;
pub mod protocols;
pub mod rng;
pub mod schedule;
pub mod stark;
pub mod vec3;

pub use error::{Result, TrapError};
pub use num::Real;
pub use vec3::Vec3;

pub type Vector = vec3::Vec3<f64>;
pub type TrapGeometry = fields::TrapGeometry<f64>;
pub type ElectrodeConfig = fields::ElectrodeConfig<f64>;
pub type FieldSample = fields::FieldSample<f64>;
pub type FieldOptions = fields::FieldOptions<f64>;
pub type RampSchedule = schedule::RampSchedule<f64>;
pub type Species = stark::Species<f64>;
pub type MoleculeState = dynamics::MoleculeState<f64>;
pub type LossModelConfig = dynamics::LossModelConfig<f64>;
pub type IntegratorConfig = dynamics::IntegratorConfig<f64>;
pub type DetectionGeometry = detection::DetectionGeometry<f64>;
pub type TofSignal = detection::TofSignal<f64>;
pub type SourceConfig = protocols::SourceConfig<f64>;
pub type ProtocolConfig = protocols::ProtocolConfig<f64>;
pub type ExperimentSetup = protocols::ExperimentSetup<f64>;
pub type ExperimentReport = protocols::ExperimentReport<f64>;
pub type LifetimeFit = analysis::LifetimeFit<f64>;
pub type CoolingResult = analysis::CoolingResult<f64>;
