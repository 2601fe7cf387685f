//! Excitation and entanglement transfer between two weakly coupled ancillas
//! through gapped spin and harmonic chains.

pub mod analysis;
pub mod config;
pub mod ed;
pub mod error;
pub mod gaussian;
pub mod master;
pub mod model;
pub mod mps;
pub mod quad;
pub mod scalar;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::{Complex, Real};

/// Double-precision instances of the generic types.
pub type SpinConfig = model::SpinSystemConfig<f64>;
pub type HarmonicConfig = model::HarmonicSystemConfig<f64>;
pub type Mps = mps::MatrixProductState<f64>;
pub type StateVector = ed::DenseState<f64>;
pub type GaussianState = gaussian::SecondMomentState<f64>;
