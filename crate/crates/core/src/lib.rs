//! Circuit simulation and characterization toolkit for adaptive-biasing
//! subthreshold OTAs.
//!
//! The device model and the OTA closed forms are generic over [`Scalar`]
//! (`f32` or `f64`); netlists, the MNA engine and the characterization
//! harness work in `f64`. The aliases below fix the scalar type for the
//! common `f64` use.

pub mod characterize;
pub mod device;
pub mod engine;
pub mod netlist;
pub mod ota;
pub mod scalar;

pub use scalar::Scalar;

/// `f64` device-model parameters.
pub type MosParams = device::MosParams<f64>;
/// `f64` process card.
pub type ModelCard = device::ModelCard<f64>;
/// `f64` device linearization.
pub type DeviceEval = device::DeviceEval<f64>;
/// `f64` temperature environment.
pub type ThermalEnv = device::ThermalEnv<f64>;
/// `f64` adaptive-bias parameters.
pub type AdaptiveBiasParams = ota::AdaptiveBiasParams<f64>;
/// `f64` pair currents.
pub type PairCurrents = ota::PairCurrents<f64>;
