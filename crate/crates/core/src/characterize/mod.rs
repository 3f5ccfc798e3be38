//! Opamp metric extraction on any netlist that exposes two inputs, an
//! output and two supply rails.
//!
//! The harness removes the DUT's own input, supply and load sources, then
//! wraps it in one of two testbenches:
//!
//! * open loop: `v(inp) - v(inn)` set by `vtb_d`, common mode by `vtb_cm`;
//! * unity follower: `vtb_in` drives `inp`, `inn` is tied to `out`.
//!
//! The supply `vtb_dd` and the negative rail `vtb_ss` are referenced to the
//! true ground so each can carry its own AC stimulus.

mod metrics;
mod report;
mod testbench;

use thiserror::Error;

use crate::engine::{EngineError, SolverOptions};
use crate::netlist::{Circuit, ElaborateError};

pub use metrics::{
    ac_metrics, dc_transfer_offset, range_metrics, rejection_and_power, step_metrics, AcMetrics, RangeMetrics,
    Rejection, StepMetrics,
};
pub use report::{full_report, CharacterizationReport, Interval};
pub use testbench::{Bench, Drive};

#[derive(Debug, Error)]
pub enum CharacterizeError {
    #[error("port error: {0}")]
    Port(String),
    #[error("transfer curve does not cross mid-supply within +/-{window:e} V")]
    NoCrossing { window: f64 },
    #[error("open-loop gain has no 0 dB crossing between {fstart:e} and {fstop:e} Hz")]
    NoUnityGain { fstart: f64, fstop: f64 },
    #[error("DC operating point never converges: {0}")]
    DcNeverConverges(EngineError),
    #[error("measurement failed: {0}")]
    Measurement(String),
    #[error("invalid characterization options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Elaborate(#[from] ElaborateError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Port convention of a device under test.
#[derive(Debug, Clone, PartialEq)]
pub struct DutPorts {
    pub inp: String,
    pub inn: String,
    pub out: String,
    pub vdd: String,
    pub gnd: String,
    /// Supply voltage, V.
    pub supply: f64,
    /// Load capacitance, F. Zero omits the load.
    pub load_cap: f64,
}

impl DutPorts {
    /// Ports `inp`, `inn`, `out`, `vdd`, `0`.
    pub fn standard(supply: f64, load_cap: f64) -> Self {
        Self {
            inp: "inp".into(),
            inn: "inn".into(),
            out: "out".into(),
            vdd: "vdd".into(),
            gnd: "0".into(),
            supply,
            load_cap,
        }
    }
}

/// Knobs of the measurement suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacterizeOptions {
    pub solver: SolverOptions,
    /// Half-width of the open-loop offset sweep, V.
    pub offset_window: f64,
    pub offset_points: usize,
    pub ac_fstart: f64,
    pub ac_fstop: f64,
    pub ac_points_per_decade: usize,
    /// Largest follower error still counted as tracking, V.
    pub icmr_threshold: f64,
    /// ICMR sweep step as a fraction of the supply.
    pub icmr_step_fraction: f64,
    /// Points of each output-swing sweep.
    pub swing_points: usize,
    pub step_tstep: f64,
    /// Time each input level is held after its edge, s.
    pub step_hold: f64,
    pub step_edge: f64,
    /// Input step height as a fraction of the supply.
    pub step_fraction: f64,
    /// Settling band as a fraction of the step height.
    pub settling_band: f64,
    pub rejection_freq: f64,
    /// Run the independent metric groups on separate threads.
    pub concurrent: bool,
}

impl Default for CharacterizeOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            offset_window: 10e-3,
            offset_points: 201,
            ac_fstart: 1.0,
            ac_fstop: 1e9,
            ac_points_per_decade: 20,
            icmr_threshold: 10e-3,
            icmr_step_fraction: 0.01,
            swing_points: 401,
            step_tstep: 10e-9,
            step_hold: 20e-6,
            step_edge: 1e-9,
            step_fraction: 0.6,
            settling_band: 0.01,
            rejection_freq: 10.0,
            concurrent: true,
        }
    }
}

impl CharacterizeOptions {
    fn validate(&self) -> Result<(), CharacterizeError> {
        self.solver.validate()?;
        let pos = [
            ("offset window", self.offset_window),
            ("AC start frequency", self.ac_fstart),
            ("ICMR threshold", self.icmr_threshold),
            ("ICMR step", self.icmr_step_fraction),
            ("time step", self.step_tstep),
            ("hold time", self.step_hold),
            ("edge time", self.step_edge),
            ("step height", self.step_fraction),
            ("settling band", self.settling_band),
            ("rejection frequency", self.rejection_freq),
        ];
        for (what, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CharacterizeError::InvalidOptions(format!("{what} must be positive, got {v}")));
            }
        }
        if self.ac_fstop <= self.ac_fstart || self.ac_points_per_decade == 0 {
            return Err(CharacterizeError::InvalidOptions("AC range is empty".into()));
        }
        if self.offset_points < 3 || self.swing_points < 5 {
            return Err(CharacterizeError::InvalidOptions("too few sweep points".into()));
        }
        if self.step_fraction > 1.0 || self.icmr_step_fraction > 1.0 {
            return Err(CharacterizeError::InvalidOptions("fractions of the supply must not exceed 1".into()));
        }
        Ok(())
    }
}

/// A netlist stripped of its own stimulus, plus its port map.
#[derive(Debug, Clone, PartialEq)]
pub struct Dut {
    pub circuit: Circuit,
    pub ports: DutPorts,
}

impl Dut {
    /// Validates the ports and strips the DUT's stimulus: voltage sources
    /// from an input or the positive supply to ground, to another of those
    /// ports or to a node fed only by voltage sources; any source from a
    /// non-`0` ground port to `0`; capacitors between output and ground; and
    /// all analysis directives. Series sources into internal nodes stay.
    pub fn new(circuit: &Circuit, ports: DutPorts) -> Result<Self, CharacterizeError> {
        testbench::prepare(circuit, ports)
    }

    /// Mid-supply voltage, V.
    pub fn mid(&self) -> f64 {
        0.5 * self.ports.supply
    }
}
