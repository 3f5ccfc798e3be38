use serde::Serialize;

use super::OtaError;
use crate::device::ThermalEnv;
use crate::scalar::Scalar;

/// Symbol set of the adaptive-bias closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptiveBiasParams<T> {
    /// Current feedback factor.
    pub a: T,
    /// Second-stage to first-stage current ratio.
    pub b: T,
    /// Constant tail current, A.
    pub ibias: T,
    /// Weak-inversion slope factor.
    pub n: T,
    pub env: ThermalEnv<T>,
}

impl<T: Scalar> AdaptiveBiasParams<T> {
    pub fn new(a: T, b: T, ibias: T, n: T, env: ThermalEnv<T>) -> Result<Self, OtaError> {
        let p = Self { a, b, ibias, n, env };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), OtaError> {
        let fin = |v: T| v.is_finite();
        if !(fin(self.a) && self.a >= T::zero()) {
            return Err(OtaError::Domain(format!("A must be finite and >= 0, got {}", self.a)));
        }
        if !(fin(self.b) && self.b > T::zero()) {
            return Err(OtaError::Domain(format!("b must be finite and > 0, got {}", self.b)));
        }
        if !(fin(self.ibias) && self.ibias > T::zero()) {
            return Err(OtaError::Domain(format!("I_BIAS must be finite and > 0, got {}", self.ibias)));
        }
        if !(fin(self.n) && self.n >= T::one()) {
            return Err(OtaError::Domain(format!("n must be finite and >= 1, got {}", self.n)));
        }
        ThermalEnv::new(self.env.temperature).map_err(|e| OtaError::Domain(e.to_string()))?;
        Ok(())
    }

    /// `n * V_T`, the input voltage unit of the closed forms.
    pub fn n_vt(&self) -> T {
        self.n * self.env.thermal_voltage()
    }

    fn require_a_at_most_one(&self) -> Result<(), OtaError> {
        self.validate()?;
        if self.a > T::one() {
            return Err(OtaError::Domain(format!(
                "closed form requires A <= 1 (denominator vanishes at finite input), got A = {}",
                self.a
            )));
        }
        Ok(())
    }
}

/// Drain currents of the two input devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairCurrents<T> {
    pub i1: T,
    pub i2: T,
}

/// `ibias * sum_{k < terms} a^k`: the tail current after `terms` trips
/// around the feedback loop.
pub fn tail_current_series<T: Scalar>(a: T, ibias: T, terms: usize) -> T {
    let mut sum = T::zero();
    let mut term = ibias;
    for _ in 0..terms {
        sum = sum + term;
        term = term * a;
    }
    sum
}

/// Closed-form limit of the series, `ibias / (1 - a)`.
pub fn total_tail_current<T: Scalar>(a: T, ibias: T) -> Result<T, OtaError> {
    if !(a >= T::zero() && a.is_finite()) {
        return Err(OtaError::Domain(format!("A must be finite and >= 0, got {a}")));
    }
    if a >= T::one() {
        return Err(OtaError::Domain(format!("closed form requires A < 1, got A = {a}")));
    }
    Ok(ibias / (T::one() - a))
}

/// Pair currents for `vin >= 0`: `(large, small)`.
fn pair_positive<T: Scalar>(x: T, p: &AdaptiveBiasParams<T>) -> (T, T) {
    let one = T::one();
    let em = (-x).exp();
    let large = p.ibias / ((one + p.a) * em + (one - p.a));
    let small = large * em;
    (large, small)
}

/// Input-pair currents with the adaptive tail `ibias + a |i1 - i2|`, the
/// pair in weak inversion. `vin` is the differential input; `i1` is the
/// device that conducts more for positive `vin`.
///
/// `a = 1` is accepted: the currents grow without bound in `|vin|` but the
/// expression stays finite for finite input.
pub fn pair_currents<T: Scalar>(vin: T, p: &AdaptiveBiasParams<T>) -> Result<PairCurrents<T>, OtaError> {
    p.require_a_at_most_one()?;
    if !vin.is_finite() {
        return Err(OtaError::Domain(format!("input voltage must be finite, got {vin}")));
    }
    let x = vin / p.n_vt();
    let (large, small) = pair_positive(x.abs(), p);
    Ok(if x >= T::zero() {
        PairCurrents { i1: large, i2: small }
    } else {
        PairCurrents { i1: small, i2: large }
    })
}

/// Output current `b (i1 - i2)`, odd in `vin`.
pub fn output_current<T: Scalar>(vin: T, p: &AdaptiveBiasParams<T>) -> Result<T, OtaError> {
    p.require_a_at_most_one()?;
    if !vin.is_finite() {
        return Err(OtaError::Domain(format!("input voltage must be finite, got {vin}")));
    }
    let one = T::one();
    let x = (vin / p.n_vt()).abs();
    // (e^x - 1) / ((1+a) + (1-a) e^x), rescaled by e^-x to stay finite.
    let em = (-x).exp();
    let mag = p.b * p.ibias * -(-x).exp_m1() / ((one + p.a) * em + (one - p.a));
    Ok(if vin < T::zero() { -mag } else { mag })
}

/// One row of the normalized transfer curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig10Row<T> {
    /// `vin / (n V_T)`.
    pub x: T,
    /// `iout / ibias`.
    pub iout_norm: T,
    /// `(i1 + i2) / ibias`.
    pub supply_norm: T,
}

/// Normalized output and supply current over `x` in `[-x_range, x_range]`
/// at `points` evenly spaced samples.
pub fn fig10_curves<T: Scalar>(
    p: &AdaptiveBiasParams<T>,
    x_range: T,
    points: usize,
) -> Result<Vec<Fig10Row<T>>, OtaError> {
    p.require_a_at_most_one()?;
    if points < 2 {
        return Err(OtaError::Domain(format!("at least 2 points are required, got {points}")));
    }
    if !(x_range > T::zero() && x_range.is_finite()) {
        return Err(OtaError::Domain(format!("range must be positive and finite, got {x_range}")));
    }
    let nvt = p.n_vt();
    let last = T::from_usize(points - 1).expect("point count fits the scalar type");
    let two = T::lit(2.0);
    (0..points)
        .map(|k| {
            let k_t = T::from_usize(k).expect("point index fits the scalar type");
            let mut x = -x_range + two * x_range * k_t / last;
            if 2 * k + 1 == points {
                x = T::zero();
            }
            let vin = x * nvt;
            let pc = pair_currents(vin, p)?;
            Ok(Fig10Row {
                x,
                iout_norm: output_current(vin, p)? / p.ibias,
                supply_norm: (pc.i1 + pc.i2) / p.ibias,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64) -> AdaptiveBiasParams<f64> {
        AdaptiveBiasParams::new(a, 1.0, 1e-6, 1.5, ThermalEnv::room()).unwrap()
    }

    #[test]
    fn series_examples() {
        assert_eq!(tail_current_series(0.0, 1e-6, 7), 1e-6);
        assert!((tail_current_series(1.0_f64, 1e-6, 5) - 5e-6).abs() < 1e-18);
        let mut prev = 0.0;
        for terms in 1..40 {
            let s = tail_current_series(0.5, 1e-6, terms);
            assert!(s > prev && s < 2e-6);
            prev = s;
        }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(total_tail_current(0.0, 1e-6).unwrap(), 1e-6);
        assert!((total_tail_current(0.75_f64, 1e-6).unwrap() - 4e-6).abs() < 1e-18);
        assert!(total_tail_current(1.0, 1e-6).is_err());
        assert!(total_tail_current(-0.1, 1e-6).is_err());
    }

    #[test]
    fn balanced_input() {
        let pc = pair_currents(0.0, &params(0.6)).unwrap();
        assert_eq!(pc.i1, 0.5e-6);
        assert_eq!(pc.i2, 0.5e-6);
        assert_eq!(output_current(0.0, &params(0.6)).unwrap(), 0.0);
    }

    #[test]
    fn a_of_one_limit() {
        let p = params(1.0);
        let vin = 3f64.ln() * p.n_vt();
        let i = output_current(vin, &p).unwrap();
        assert!((i - 1e-6).abs() < 1e-15, "{i}");
        assert!(output_current(0.01, &params(1.5)).is_err());
    }

    #[test]
    fn huge_inputs_stay_finite() {
        let p = params(0.5);
        let i = output_current(50.0, &p).unwrap();
        assert!((i - 2e-6).abs() < 1e-15);
        let pc = pair_currents(-50.0, &p).unwrap();
        assert!((pc.i2 - 2e-6).abs() < 1e-15 && pc.i1 >= 0.0);
    }

    #[test]
    fn fig10_grid() {
        let rows = fig10_curves(&params(0.0), 8.0, 201).unwrap();
        assert_eq!(rows.len(), 201);
        assert_eq!(rows[100].x, 0.0);
        assert_eq!(rows[0].x, -8.0);
        assert_eq!(rows[200].x, 8.0);
        assert!(fig10_curves(&params(0.0), 8.0, 1).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let p = AdaptiveBiasParams::<f32>::new(0.5, 1.0, 1e-6, 1.5, ThermalEnv::room()).unwrap();
        let pc = pair_currents(0.02f32, &p).unwrap();
        let lhs = pc.i1 + pc.i2 - 0.5 * (pc.i1 - pc.i2);
        assert!((lhs - 1e-6).abs() < 1e-12);
    }
}
