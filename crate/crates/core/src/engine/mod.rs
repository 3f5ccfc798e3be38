//! Modified nodal analysis: DC operating point, DC sweep, AC small-signal and
//! transient analyses.

mod ac;
mod assemble;
mod dc;
mod results;
mod tran;

use thiserror::Error;

use crate::device::{DeviceError, ThermalEnv};

pub use ac::{ac_analysis, log_frequencies};
pub use dc::{dc_operating_point, dc_operating_point_from, dc_sweep};
pub use results::{AcResult, OperatingPoint, SweepResult, Table, TransientResult};
pub use tran::transient;

/// Newton and continuation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub reltol: f64,
    /// Absolute current tolerance, A.
    pub abstol: f64,
    /// Absolute voltage tolerance, V.
    pub vntol: f64,
    pub max_newton_iters: usize,
    /// Final conductance across MOS channels, S.
    pub gmin: f64,
    /// Number of decades walked by gmin stepping (starting from 1e-2 S).
    pub gmin_steps: usize,
    pub source_steps: usize,
    pub env: ThermalEnv<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            reltol: 1e-3,
            abstol: 1e-12,
            vntol: 1e-6,
            max_newton_iters: 100,
            gmin: 1e-12,
            gmin_steps: 10,
            source_steps: 10,
            env: ThermalEnv::room(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), EngineError> {
        let ok = self.reltol > 0.0
            && self.abstol > 0.0
            && self.vntol > 0.0
            && self.max_newton_iters > 0
            && self.gmin > 0.0
            && self.gmin_steps > 0
            && self.source_steps > 0
            && self.env.temperature > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EngineError::InvalidOptions)
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no convergence: every continuation strategy failed (best residual {best_residual:.3e} A)")]
    Convergence { best_residual: f64 },
    #[error("singular matrix {context}")]
    Singular { context: String },
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("sweep step must be non-zero")]
    ZeroStep,
    #[error("sweep step {step} never reaches {stop} from {start}")]
    StepDirection { start: f64, stop: f64, step: f64 },
    #[error("invalid analysis parameters: {0}")]
    InvalidAnalysis(String),
    #[error("solver options must be strictly positive")]
    InvalidOptions,
    #[error("element `{element}`: {source}")]
    Device { element: String, source: DeviceError },
    #[error("transient failed at t = {time:.6e} s: {reason}")]
    Transient { time: f64, reason: String, partial: Box<TransientResult> },
}
