//! All-region MOS compact model and thermal quantities.
//!
//! The drain current uses the charge-based interpolation
//!
//! ```text
//! id = I_spec * (F(vp - vs) - F(vp - vd)) * (1 + lambda*|vds|)
//! F(u) = ln^2(1 + exp(u / (2 V_T)))
//! vp = (vg - vt0) / n
//! I_spec = 2 n (kp W/L) V_T^2
//! ```
//!
//! which is exponential in weak inversion, quadratic in strong inversion and
//! smooth in between. Terminal voltages passed to [`drain_current`] are
//! referenced to the bulk. PMOS devices are evaluated by mirroring every
//! voltage and the threshold through zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sigmoid, softplus, Scalar};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Room temperature used when nothing else is specified, K.
pub const ROOM_TEMPERATURE: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// Thermal environment of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalEnv<T> {
    /// Absolute temperature in kelvin.
    pub temperature: T,
}

impl<T: Scalar> ThermalEnv<T> {
    pub fn new(temperature: T) -> Result<Self, DeviceError> {
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return Err(DeviceError::Domain(format!(
                "temperature must be a positive finite kelvin value, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }

    pub fn room() -> Self {
        Self { temperature: T::lit(ROOM_TEMPERATURE) }
    }

    /// `kT/q` in volts.
    pub fn thermal_voltage(&self) -> T {
        T::lit(BOLTZMANN) * self.temperature / T::lit(ELEMENTARY_CHARGE)
    }
}

impl<T: Scalar> Default for ThermalEnv<T> {
    fn default() -> Self {
        Self::room()
    }
}

/// `kT/q` for the given environment.
pub fn thermal_voltage<T: Scalar>(env: &ThermalEnv<T>) -> Result<T, DeviceError> {
    ThermalEnv::new(env.temperature).map(|e| e.thermal_voltage())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Nmos,
    Pmos,
}

impl Polarity {
    pub fn keyword(self) -> &'static str {
        match self {
            Polarity::Nmos => "NMOS",
            Polarity::Pmos => "PMOS",
        }
    }
}

/// Process parameters of one transistor type, without geometry.
///
/// This is what a `.model` card declares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCard<T> {
    pub polarity: Polarity,
    /// Zero-bias threshold, signed (negative for PMOS).
    pub vt0: T,
    /// Weak-inversion slope factor.
    pub n: T,
    /// Transconductance parameter mu*Cox, A/V^2.
    pub kp: T,
    /// Channel-length modulation, 1/V.
    pub lambda: T,
}

impl<T: Scalar> ModelCard<T> {
    /// Default NMOS card: vt0 = 0.7 V, kp = 100 uA/V^2, n = 1.5, lambda = 0.02 / V.
    pub fn default_nmos() -> Self {
        Self {
            polarity: Polarity::Nmos,
            vt0: T::lit(0.7),
            n: T::lit(1.5),
            kp: T::lit(100e-6),
            lambda: T::lit(0.02),
        }
    }

    /// Default PMOS card: vt0 = -0.9 V, kp = 35 uA/V^2, n = 1.6, lambda = 0.02 / V.
    pub fn default_pmos() -> Self {
        Self {
            polarity: Polarity::Pmos,
            vt0: T::lit(-0.9),
            n: T::lit(1.6),
            kp: T::lit(35e-6),
            lambda: T::lit(0.02),
        }
    }

    pub fn default_for(polarity: Polarity) -> Self {
        match polarity {
            Polarity::Nmos => Self::default_nmos(),
            Polarity::Pmos => Self::default_pmos(),
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let finite = [self.vt0, self.n, self.kp, self.lambda].iter().all(|v| v.is_finite());
        if !finite {
            return Err(DeviceError::Domain("model parameters must be finite".into()));
        }
        if self.n < T::one() {
            return Err(DeviceError::Domain(format!("slope factor n must be >= 1, got {}", self.n)));
        }
        if !(self.kp > T::zero()) {
            return Err(DeviceError::Domain(format!("kp must be > 0, got {}", self.kp)));
        }
        if self.lambda < T::zero() {
            return Err(DeviceError::Domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn with_geometry(&self, w: T, l: T) -> Result<MosParams<T>, DeviceError> {
        let p = MosParams {
            polarity: self.polarity,
            vt0: self.vt0,
            n: self.n,
            kp: self.kp,
            w,
            l,
            lambda: self.lambda,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Complete parameter record of one transistor instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosParams<T> {
    pub polarity: Polarity,
    pub vt0: T,
    pub n: T,
    pub kp: T,
    /// Channel width, m.
    pub w: T,
    /// Channel length, m.
    pub l: T,
    pub lambda: T,
}

impl<T: Scalar> MosParams<T> {
    pub fn card(&self) -> ModelCard<T> {
        ModelCard {
            polarity: self.polarity,
            vt0: self.vt0,
            n: self.n,
            kp: self.kp,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        self.card().validate()?;
        if !(self.w > T::zero()) || !self.w.is_finite() {
            return Err(DeviceError::Domain(format!("W must be > 0, got {}", self.w)));
        }
        if !(self.l > T::zero()) || !self.l.is_finite() {
            return Err(DeviceError::Domain(format!("L must be > 0, got {}", self.l)));
        }
        Ok(())
    }

    /// `I_spec = 2 n (kp W/L) V_T^2`.
    pub fn specific_current(&self, env: &ThermalEnv<T>) -> T {
        let vt = env.thermal_voltage();
        T::lit(2.0) * self.n * self.kp * (self.w / self.l) * vt * vt
    }
}

/// Linearization of a transistor at one bias point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceEval<T> {
    /// Drain current, positive when flowing drain to source.
    pub id: T,
    /// `d id / d vg`.
    pub gm: T,
    /// `-d id / d vs`; positive for a conducting device in forward operation.
    pub gms: T,
    /// `d id / d vd`.
    pub gds: T,
}

/// Charge-interpolation function `F(u)` and its derivative.
#[inline]
fn interp<T: Scalar>(u: T, vt: T) -> (T, T) {
    let z = u / (T::lit(2.0) * vt);
    let sp = softplus(z);
    (sp * sp, sp * sigmoid(z) / vt)
}

/// Drain current of an NMOS-like device with bulk-referenced terminals.
/// Returns `(id, d/dvg, d/dvs, d/dvd)`.
fn eval_n<T: Scalar>(p: &MosParams<T>, vt0: T, vg: T, vs: T, vd: T, vt: T, ispec: T) -> (T, T, T, T) {
    let vp = (vg - vt0) / p.n;
    let (ff, dff) = interp(vp - vs, vt);
    let (fr, dfr) = interp(vp - vd, vt);
    let id0 = ispec * (ff - fr);

    let vds = vd - vs;
    let sgn = if vds > T::zero() {
        T::one()
    } else if vds < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    let m = T::one() + p.lambda * vds.abs();

    let d_vg = m * ispec * (dff - dfr) / p.n;
    let d_vs = -m * ispec * dff - id0 * p.lambda * sgn;
    let d_vd = m * ispec * dfr + id0 * p.lambda * sgn;
    (id0 * m, d_vg, d_vs, d_vd)
}

/// Evaluates the drain current and its partial derivatives.
///
/// `vg`, `vs` and `vd` are measured from the bulk.
pub fn drain_current<T: Scalar>(
    p: &MosParams<T>,
    vg: T,
    vs: T,
    vd: T,
    env: &ThermalEnv<T>,
) -> Result<DeviceEval<T>, DeviceError> {
    if !(vg.is_finite() && vs.is_finite() && vd.is_finite()) {
        return Err(DeviceError::Domain(format!(
            "terminal voltages must be finite (vg={vg}, vs={vs}, vd={vd})"
        )));
    }
    let vt = thermal_voltage(env)?;
    let ispec = p.specific_current(env);
    let (id, d_vg, d_vs, d_vd) = match p.polarity {
        Polarity::Nmos => eval_n(p, p.vt0, vg, vs, vd, vt, ispec),
        Polarity::Pmos => {
            let (id, a, b, c) = eval_n(p, -p.vt0, -vg, -vs, -vd, vt, ispec);
            // d(-f(-x))/dx = f'(-x)
            (-id, a, b, c)
        }
    };
    Ok(DeviceEval { id, gm: d_vg, gms: -d_vs, gds: d_vd })
}

/// Drain current with the bulk tied to the source terminal.
///
/// This is the three-terminal variant the circuit engine stamps. The
/// returned `gms` is `-d id / d vs` of the tied device, i.e. `gm + gds`.
pub fn drain_current_source_tied<T: Scalar>(
    p: &MosParams<T>,
    vg: T,
    vs: T,
    vd: T,
    env: &ThermalEnv<T>,
) -> Result<DeviceEval<T>, DeviceError> {
    let e = drain_current(p, vg - vs, T::zero(), vd - vs, env)?;
    Ok(DeviceEval { id: e.id, gm: e.gm, gms: e.gm + e.gds, gds: e.gds })
}
