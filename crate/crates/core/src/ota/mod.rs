//! Adaptive-bias OTA: closed-form large-signal behavior and transistor-level
//! netlist generators.

mod analytic;
mod template;

use thiserror::Error;

pub use analytic::{
    fig10_curves, output_current, pair_currents, tail_current_series, total_tail_current, AdaptiveBiasParams,
    Fig10Row, PairCurrents,
};
pub use template::{
    build_adaptive_ota, build_adaptive_ota_circuit, build_basic_ota, build_basic_ota_circuit, realize_ratio,
    Geometry, OtaTemplateParams, MAX_MULTIPLICITY,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OtaError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ratio {value} for {what} is not realizable as p/q with p, q <= 64")]
    Ratio { what: &'static str, value: f64 },
    #[error("invalid template: {0}")]
    Template(String),
}
