pub mod basis;
pub mod error;
pub mod fields;
pub mod montecarlo;
pub mod noise;
pub mod operators;
pub mod output;
pub mod scalar;
pub mod sde;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Basis64 = basis::Basis<f64>;
pub type State64 = basis::SpectralState<f64>;
pub type Simulator64 = sde::Simulator<f64>;
pub type NoiseModel64 = noise::NoiseModel<f64>;
pub type Basis32 = basis::Basis<f32>;
pub type State32 = basis::SpectralState<f32>;
pub type Simulator32 = sde::Simulator<f32>;
