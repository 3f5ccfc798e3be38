use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{ac_metrics, dc_transfer_offset, range_metrics, rejection_and_power, step_metrics};
use super::testbench::{Bench, Drive};
use super::{CharacterizeError, CharacterizeOptions, Dut};
use crate::engine::dc_operating_point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    const NAN: Self = Self { lo: f64::NAN, hi: f64::NAN };
}

impl From<(f64, f64)> for Interval {
    fn from((lo, hi): (f64, f64)) -> Self {
        Self { lo, hi }
    }
}

/// Measured opamp figures. A field that could not be measured is `NaN` and
/// has an entry in `annotations`; infinite rejection ratios are `+inf`,
/// also annotated. Non-finite numbers serialize as JSON `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacterizationReport {
    pub dc_gain_db: f64,
    pub ugb_hz: f64,
    pub phase_margin_deg: f64,
    pub input_offset_v: f64,
    pub icmr: Interval,
    pub output_swing: Interval,
    pub slew_rise_v_per_s: f64,
    pub slew_fall_v_per_s: f64,
    pub settling_rise_s: f64,
    pub settling_fall_s: f64,
    pub cmrr_db: f64,
    pub psrr_pos_db: f64,
    pub psrr_neg_db: f64,
    pub power_w: f64,
    /// Field name to explanation.
    pub annotations: BTreeMap<String, String>,
}

impl CharacterizationReport {
    /// Names of the measured fields, in report order.
    pub const FIELDS: [&'static str; 14] = [
        "dc_gain_db",
        "ugb_hz",
        "phase_margin_deg",
        "input_offset_v",
        "icmr",
        "output_swing",
        "slew_rise_v_per_s",
        "slew_fall_v_per_s",
        "settling_rise_s",
        "settling_fall_s",
        "cmrr_db",
        "psrr_pos_db",
        "psrr_neg_db",
        "power_w",
    ];

    fn empty() -> Self {
        Self {
            dc_gain_db: f64::NAN,
            ugb_hz: f64::NAN,
            phase_margin_deg: f64::NAN,
            input_offset_v: f64::NAN,
            icmr: Interval::NAN,
            output_swing: Interval::NAN,
            slew_rise_v_per_s: f64::NAN,
            slew_fall_v_per_s: f64::NAN,
            settling_rise_s: f64::NAN,
            settling_fall_s: f64::NAN,
            cmrr_db: f64::NAN,
            psrr_pos_db: f64::NAN,
            psrr_neg_db: f64::NAN,
            power_w: f64::NAN,
            annotations: BTreeMap::new(),
        }
    }

    /// Every scalar in report order (intervals contribute two values).
    pub fn values(&self) -> Vec<f64> {
        vec![
            self.dc_gain_db,
            self.ugb_hz,
            self.phase_margin_deg,
            self.input_offset_v,
            self.icmr.lo,
            self.icmr.hi,
            self.output_swing.lo,
            self.output_swing.hi,
            self.slew_rise_v_per_s,
            self.slew_fall_v_per_s,
            self.settling_rise_s,
            self.settling_fall_s,
            self.cmrr_db,
            self.psrr_pos_db,
            self.psrr_neg_db,
            self.power_w,
        ]
    }

    pub fn is_complete(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Two-column `Parameter | Simulated Value` table.
    pub fn to_text_table(&self) -> String {
        let db = |v: f64| if v.is_infinite() { "inf dB".to_string() } else { format!("{v:.2} dB") };
        let eng = |v: f64, unit: &str| engineering(v, unit);
        let rows = [
            ("DC Gain", db(self.dc_gain_db)),
            ("Unity Gain Bandwidth", eng(self.ugb_hz, "Hz")),
            ("Phase Margin", format!("{:.1} deg", self.phase_margin_deg)),
            ("Input Offset Voltage", eng(self.input_offset_v, "V")),
            ("ICMR", format!("{:.3} V - {:.3} V", self.icmr.lo, self.icmr.hi)),
            ("Output Voltage Swing", format!("{:.3} V - {:.3} V", self.output_swing.lo, self.output_swing.hi)),
            (
                "Slew Rate (Rise/Fall)",
                format!("{:.3} V/us, {:.3} V/us", self.slew_rise_v_per_s * 1e-6, self.slew_fall_v_per_s * 1e-6),
            ),
            (
                "Settling Time (Rise/Fall) (1%)",
                format!("{}, {}", eng(self.settling_rise_s, "s"), eng(self.settling_fall_s, "s")),
            ),
            ("CMRR", db(self.cmrr_db)),
            ("PSRR (+)", db(self.psrr_pos_db)),
            ("PSRR (-)", db(self.psrr_neg_db)),
            ("Total Power Dissipation", eng(self.power_w, "W")),
        ];
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Parameter".len());
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$} | Simulated Value", "Parameter");
        let _ = writeln!(s, "{}-+-{}", "-".repeat(width), "-".repeat(24));
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<width$} | {v}");
        }
        for (k, v) in &self.annotations {
            let _ = writeln!(s, "note: {k}: {v}");
        }
        s
    }
}

fn engineering(v: f64, unit: &str) -> String {
    if !v.is_finite() {
        return format!("{v} {unit}");
    }
    const PREFIX: [(f64, &str); 8] =
        [(1e9, "G"), (1e6, "M"), (1e3, "k"), (1.0, ""), (1e-3, "m"), (1e-6, "u"), (1e-9, "n"), (1e-12, "p")];
    let a = v.abs();
    let (scale, p) = PREFIX.iter().copied().find(|(s, _)| a >= *s).unwrap_or((1e-15, "f"));
    if a == 0.0 {
        return format!("0 {unit}");
    }
    format!("{:.3} {p}{unit}", v / scale)
}

type Group<T> = Result<T, CharacterizeError>;

/// Runs every metric group. Failures of individual groups leave their
/// fields `NaN` with an annotation; only a DUT whose DC operating point
/// cannot be found at all is a hard error.
pub fn full_report(dut: &Dut, opts: &CharacterizeOptions) -> Result<CharacterizationReport, CharacterizeError> {
    opts.validate()?;
    let bench = Bench::new(dut, Drive::OpenLoop { vcm: dut.mid(), vdiff: 0.0 })?;
    if let Err(e) = dc_operating_point(&bench.flat, &opts.solver) {
        let follower = Bench::new(dut, Drive::Follower { vin: crate::netlist::SourceSpec::dc(dut.mid()) })?;
        if dc_operating_point(&follower.flat, &opts.solver).is_err() {
            return Err(CharacterizeError::DcNeverConverges(e));
        }
    }

    let mut r = CharacterizationReport::empty();
    let note = |r: &mut CharacterizationReport, fields: &[&str], e: &CharacterizeError| {
        for f in fields {
            r.annotations.insert((*f).to_string(), e.to_string());
        }
    };

    let offset = match dc_transfer_offset(dut, opts) {
        Ok((_, off)) => {
            r.input_offset_v = off;
            off
        }
        Err(e) => {
            note(&mut r, &["input_offset_v"], &e);
            r.annotations.insert("offset_fallback".into(), "metrics measured at zero differential input".into());
            0.0
        }
    };

    let run_ac = || ac_metrics(dut, offset, opts);
    let run_range = || range_metrics(dut, offset, opts);
    let run_step = || step_metrics(dut, opts);
    let run_rej = || rejection_and_power(dut, offset, opts);
    let (ac, range, step, rej): (Group<_>, Group<_>, Group<_>, Group<_>) = if opts.concurrent {
        std::thread::scope(|s| {
            let ac = s.spawn(run_ac);
            let range = s.spawn(run_range);
            let step = s.spawn(run_step);
            let rej = run_rej();
            (
                ac.join().expect("AC worker panicked"),
                range.join().expect("range worker panicked"),
                step.join().expect("step worker panicked"),
                rej,
            )
        })
    } else {
        (run_ac(), run_range(), run_step(), run_rej())
    };

    match ac {
        Ok(m) => {
            r.dc_gain_db = m.dc_gain_db;
            r.ugb_hz = m.ugb_hz;
            r.phase_margin_deg = m.phase_margin_deg;
        }
        Err(e) => note(&mut r, &["dc_gain_db", "ugb_hz", "phase_margin_deg"], &e),
    }
    match range {
        Ok(m) => {
            r.icmr = m.icmr.into();
            r.output_swing = m.output_swing.into();
            if !m.warnings.is_empty() {
                r.annotations.insert("range_warnings".into(), m.warnings.join("; "));
            }
        }
        Err(e) => note(&mut r, &["icmr", "output_swing"], &e),
    }
    match step {
        Ok(m) => {
            r.slew_rise_v_per_s = m.slew_rise;
            r.slew_fall_v_per_s = m.slew_fall;
            r.settling_rise_s = m.settling_rise;
            r.settling_fall_s = m.settling_fall;
        }
        Err(e) => note(
            &mut r,
            &["slew_rise_v_per_s", "slew_fall_v_per_s", "settling_rise_s", "settling_fall_s"],
            &e,
        ),
    }
    match rej {
        Ok(m) => {
            r.cmrr_db = m.cmrr_db;
            r.psrr_pos_db = m.psrr_pos_db;
            r.psrr_neg_db = m.psrr_neg_db;
            r.power_w = m.power_w;
            for (k, v) in [("cmrr_db", m.cmrr_db), ("psrr_pos_db", m.psrr_pos_db), ("psrr_neg_db", m.psrr_neg_db)] {
                if v.is_infinite() {
                    r.annotations.insert(k.into(), "infinite: the interfering gain is zero".into());
                }
            }
        }
        Err(e) => note(&mut r, &["cmrr_db", "psrr_pos_db", "psrr_neg_db", "power_w"], &e),
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engineering_format() {
        assert_eq!(engineering(1.09e6, "Hz"), "1.090 MHz");
        assert_eq!(engineering(16.8e-6, "W"), "16.800 uW");
        assert_eq!(engineering(0.0, "V"), "0 V");
        assert_eq!(engineering(-2e-3, "V"), "-2.000 mV");
    }

    #[test]
    fn nan_and_inf_serialize_as_null() {
        let mut r = CharacterizationReport::empty();
        r.cmrr_db = f64::INFINITY;
        let j = r.to_json();
        assert!(j["cmrr_db"].is_null());
        assert!(j["icmr"]["lo"].is_null());
        for f in CharacterizationReport::FIELDS {
            assert!(j.get(f).is_some(), "{f}");
        }
    }
}
