//! Quantum near-field imaging with higher-order intensity correlation
//! functions: synthetic correlation measurements for pseudo-thermal and SPDC
//! sources, Fisher-information analysis of the pixel-estimation problem, and
//! sliding-window reconstruction of transmission objects, including the
//! super-resolution regime.
//!
//! The numeric core is generic over the scalar type ([`Scalar`], implemented
//! for `f32` and `f64`); concrete f64 aliases for the main types live at the
//! crate root. File formats and the CLI work in f64.

pub mod error;
pub mod fisher;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod measurement;
pub mod optics;
pub mod phantom;
pub mod scalar;
pub mod sim;
pub mod source;
pub mod special;
pub mod swm;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Concrete f64 aliases for the domain types.
pub type ImagingSystem64 = optics::ImagingSystem<f64>;
pub type ObjectModel64 = optics::ObjectModel<f64>;
pub type DetectorGrid64 = optics::DetectorGrid<f64>;
pub type SourceModel64 = source::SourceModel<f64>;
pub type CoefficientTensor64 = forward::CoefficientTensor<f64>;
pub type MeasurementSet64 = measurement::MeasurementSet<f64>;
pub type FisherReport64 = fisher::FisherReport<f64>;
pub type SweepResult64 = sim::SweepResult<f64>;
pub type ReconstructionResult64 = swm::ReconstructionResult<f64>;
