//! Numerical models of a zero-flux fluxonium erasure qubit.
//!
//! Modules follow the experiment: [`spectrum`] diagonalizes the circuit,
//! [`dynamics`] evolves level populations, [`driven`] integrates coherent
//! drives, [`readout`] models dispersive measurement, [`protocol`] runs the
//! erasure-check experiments by Monte Carlo, and [`fit`] extracts parameters
//! from data. Frequencies are angular (rad/s) throughout.

pub mod driven;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod presets;
pub mod protocol;
pub mod readout;
pub mod rng;
pub mod spectrum;
pub mod units;

pub use dynamics::{PopulationState, RampSpec, RateMatrix, TrajectoryPath};
pub use error::{Error, Result};
pub use protocol::{ErasureExperimentConfig, QndSequence, RamseyConfig, ShotRecord, SurvivalPoint};
pub use readout::{CavityResponse, ConfusionMatrix, ReadoutConfig};
pub use spectrum::{CircuitParams, SpectrumResult};
pub use units::{Frequency, FrequencyUnit};
