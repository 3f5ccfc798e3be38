use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use super::testbench::{step_input, Bench, Drive, VCM, VDD, VDIFF, VIN, VSS};
use super::{CharacterizeError, CharacterizeOptions, Dut};
use crate::engine::{
    ac_analysis, dc_operating_point, dc_operating_point_from, dc_sweep, transient, AcResult, OperatingPoint,
    SweepResult, TransientResult,
};
use crate::netlist::{AcSpec, SourceSpec};

/// Regula-falsi iterations used to refine the offset inside its bracket.
const OFFSET_REFINE_ITERS: usize = 60;
/// Doublings of the output-swing window before giving up.
const SWING_EXPANSIONS: usize = 12;
/// A rejection ratio above this many dB is reported as infinite.
const INFINITE_DB: f64 = 240.0;

fn open_loop(dut: &Dut, vdiff: f64) -> Result<Bench, CharacterizeError> {
    Bench::new(dut, Drive::OpenLoop { vcm: dut.mid(), vdiff })
}

fn out_voltage(dut: &Dut, op: &OperatingPoint) -> f64 {
    op.voltage(Bench::out_node(dut)).expect("output node exists in the bench")
}

/// Open-loop DC transfer around zero differential input and the input offset
/// at which the output crosses mid-supply.
///
/// The crossing nearest zero is bracketed by the sweep, located by linear
/// interpolation and then refined by regula falsi on the DC solution.
pub fn dc_transfer_offset(dut: &Dut, opts: &CharacterizeOptions) -> Result<(SweepResult, f64), CharacterizeError> {
    opts.validate()?;
    let bench = open_loop(dut, 0.0)?;
    let w = opts.offset_window;
    let step = 2.0 * w / (opts.offset_points - 1) as f64;
    let sweep = dc_sweep(&bench.flat, VDIFF, -w, w + 0.5 * step, step, &opts.solver)?;
    let vout = sweep.trace(&Bench::out_trace(dut)).expect("output trace");
    let mid = dut.mid();

    let mut best: Option<(usize, f64)> = None;
    for k in 0..vout.len().saturating_sub(1) {
        let (a, b) = (vout[k] - mid, vout[k + 1] - mid);
        if !(a.is_finite() && b.is_finite()) || a * b > 0.0 || (a == 0.0 && b == 0.0) {
            continue;
        }
        let x = if a == b { sweep.sweep_values[k] } else {
            sweep.sweep_values[k] + (sweep.sweep_values[k + 1] - sweep.sweep_values[k]) * a / (a - b)
        };
        if best.is_none_or(|(_, bx)| x.abs() < bx.abs()) {
            best = Some((k, x));
        }
    }
    let (k, guess) = best.ok_or(CharacterizeError::NoCrossing { window: w })?;

    let mut fc = bench.flat.clone();
    let mut seed = sweep.values[k].clone();
    let mut eval = |x: f64, seed: &mut Vec<f64>| -> Result<f64, CharacterizeError> {
        fc.source_mut(VDIFF).expect("bench source").dc = x;
        let op = dc_operating_point_from(&fc, seed, &opts.solver)?;
        *seed = op.solution().to_vec();
        Ok(out_voltage(dut, &op) - mid)
    };
    let (mut xa, mut xb) = (sweep.sweep_values[k], sweep.sweep_values[k + 1]);
    let (mut fa, mut fb) = (vout[k] - mid, vout[k + 1] - mid);
    let mut x = guess;
    let tol = 1e-9 * dut.ports.supply;
    for _ in 0..OFFSET_REFINE_ITERS {
        if fa == 0.0 {
            x = xa;
            break;
        }
        if fb == 0.0 {
            x = xb;
            break;
        }
        let fx = eval(x, &mut seed)?;
        if fx.abs() <= tol || (xb - xa).abs() <= 1e-15 {
            break;
        }
        // Illinois variant: halve the stale end to keep superlinear progress.
        if (fx > 0.0) == (fa > 0.0) {
            xa = x;
            fa = fx;
            fb *= 0.5;
        } else {
            xb = x;
            fb = fx;
            fa *= 0.5;
        }
        x = xa + (xb - xa) * fa / (fa - fb);
    }
    Ok((sweep, x))
}

/// Open-loop frequency response figures.
#[derive(Debug, Clone, PartialEq)]
pub struct AcMetrics {
    pub dc_gain_db: f64,
    pub ugb_hz: f64,
    pub phase_margin_deg: f64,
    pub response: AcResult,
}

fn unwrap_phase(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut prev: Option<f64> = None;
    for z in values {
        let mut p = z.arg().to_degrees();
        if let Some(q) = prev {
            while p - q > 180.0 {
                p -= 360.0;
            }
            while p - q < -180.0 {
                p += 360.0;
            }
        }
        out.push(p);
        prev = Some(p);
    }
    out
}

/// Operating point of the open-loop bench with the offset applied.
fn balanced(dut: &Dut, offset: f64, opts: &CharacterizeOptions) -> Result<(Bench, OperatingPoint), CharacterizeError> {
    let bench = open_loop(dut, offset)?;
    let op = dc_operating_point(&bench.flat, &opts.solver)?;
    Ok((bench, op))
}

fn ac_gain(bench: &Bench, op: &OperatingPoint, source: &str, dut: &Dut, f: (f64, f64, usize), opts: &CharacterizeOptions) -> Result<(Vec<f64>, Vec<Complex64>, AcResult), CharacterizeError> {
    let mut fc = bench.flat.clone();
    fc.source_mut(source).expect("bench source").ac = Some(AcSpec { magnitude: 1.0, phase: 0.0 });
    let ac = ac_analysis(&fc, op, f.0, f.1, f.2, &opts.solver)?;
    let h = ac.trace(&Bench::out_trace(dut)).expect("output trace");
    Ok((ac.frequencies.clone(), h, ac))
}

/// DC gain, unity-gain bandwidth and phase margin of the open-loop DUT
/// biased at input offset `offset`.
pub fn ac_metrics(dut: &Dut, offset: f64, opts: &CharacterizeOptions) -> Result<AcMetrics, CharacterizeError> {
    opts.validate()?;
    let (bench, op) = balanced(dut, offset, opts)?;
    let span = (opts.ac_fstart, opts.ac_fstop, opts.ac_points_per_decade);
    let (freqs, h, response) = ac_gain(&bench, &op, VDIFF, dut, span, opts)?;
    let mag: Vec<f64> = h.iter().map(|z| z.norm()).collect();
    let phase = unwrap_phase(&h);
    let no_crossing = CharacterizeError::NoUnityGain { fstart: opts.ac_fstart, fstop: opts.ac_fstop };
    if !(mag[0] > 1.0) {
        return Err(no_crossing);
    }
    let k = (0..mag.len() - 1).find(|&k| mag[k] >= 1.0 && mag[k + 1] < 1.0).ok_or(no_crossing)?;
    let (l0, l1) = (freqs[k].log10(), freqs[k + 1].log10());
    let (m0, m1) = (mag[k].log10(), mag[k + 1].log10());
    let t = m0 / (m0 - m1);
    let ugb_hz = 10f64.powf(l0 + t * (l1 - l0));
    let ph = phase[k] + t * (phase[k + 1] - phase[k]);
    Ok(AcMetrics {
        dc_gain_db: 20.0 * mag[0].log10(),
        ugb_hz,
        phase_margin_deg: 180.0 + ph,
        response,
    })
}

/// Input common-mode range and output swing.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeMetrics {
    pub icmr: (f64, f64),
    pub output_swing: (f64, f64),
    /// Non-fatal problems, such as sweep points that did not converge.
    pub warnings: Vec<String>,
}

/// Longest run of `true` in `pass`.
fn longest_run(pass: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, &p) in pass.iter().chain(std::iter::once(&false)).enumerate() {
        match (p, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| i - 1 - s > b - a) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Position where `y` crosses `level` between samples `i` (passing) and `j`.
fn cross(x: &[f64], y: &[f64], i: usize, j: usize, level: f64) -> f64 {
    if !y[j].is_finite() || y[i] == y[j] {
        return x[i];
    }
    let t = ((y[i] - level) / (y[i] - y[j])).clamp(0.0, 1.0);
    x[i] + t * (x[j] - x[i])
}

fn icmr(dut: &Dut, opts: &CharacterizeOptions, warnings: &mut Vec<String>) -> Result<(f64, f64), CharacterizeError> {
    let supply = dut.ports.supply;
    let bench = Bench::new(dut, Drive::Follower { vin: SourceSpec::dc(0.0) })?;
    let step = opts.icmr_step_fraction * supply;
    let sweep = dc_sweep(&bench.flat, VIN, 0.0, supply + 0.5 * step, step, &opts.solver)?;
    let vin = &sweep.sweep_values;
    let vout = sweep.trace(&Bench::out_trace(dut)).expect("output trace");
    let err: Vec<f64> = vin.iter().zip(&vout).map(|(i, o)| (o - i).abs()).collect();
    let failed = sweep.failed();
    if !failed.is_empty() {
        warnings.push(format!(
            "ICMR sweep: {} point(s) did not converge (first at {:.4} V) and count as out of range",
            failed.len(),
            vin[failed[0]]
        ));
    }
    let pass: Vec<bool> = err.iter().map(|e| *e <= opts.icmr_threshold).collect();
    let (a, b) = longest_run(&pass).ok_or_else(|| {
        CharacterizeError::Measurement(format!(
            "follower error never within {:e} V over 0..{supply} V",
            opts.icmr_threshold
        ))
    })?;
    let lo = if a > 0 { cross(vin, &err, a, a - 1, opts.icmr_threshold) } else { vin[a] };
    let hi = if b + 1 < vin.len() { cross(vin, &err, b, b + 1, opts.icmr_threshold) } else { vin[b] };
    Ok((lo, hi))
}

/// Open-loop small-signal gain at `offset` by a central difference.
fn dc_slope(dut: &Dut, offset: f64, opts: &CharacterizeOptions) -> Result<f64, CharacterizeError> {
    let d = 1e-5 * dut.ports.supply;
    let mut v = [0.0; 2];
    let mut seed: Option<Vec<f64>> = None;
    for (i, x) in [offset - d, offset + d].into_iter().enumerate() {
        let bench = open_loop(dut, x)?;
        let op = match &seed {
            Some(s) => dc_operating_point_from(&bench.flat, s, &opts.solver)?,
            None => dc_operating_point(&bench.flat, &opts.solver)?,
        };
        v[i] = out_voltage(dut, &op);
        seed = Some(op.solution().to_vec());
    }
    Ok((v[1] - v[0]) / (2.0 * d))
}

fn swing(dut: &Dut, offset: f64, opts: &CharacterizeOptions, warnings: &mut Vec<String>) -> Result<(f64, f64), CharacterizeError> {
    let supply = dut.ports.supply;
    let mid = dut.mid();
    let a0 = dc_slope(dut, offset, opts)?;
    if !(a0.abs() > 1.0) {
        return Err(CharacterizeError::Measurement(format!("open-loop gain {a0:.3} is below unity")));
    }
    let bench = open_loop(dut, offset)?;
    let mut w = (2.0 * supply / a0.abs()).min(supply);
    let out = Bench::out_trace(dut);
    for attempt in 0..=SWING_EXPANSIONS {
        let step = 2.0 * w / (opts.swing_points - 1) as f64;
        let sweep = dc_sweep(&bench.flat, VDIFF, offset - w, offset + w + 0.5 * step, step, &opts.solver)?;
        let x = &sweep.sweep_values;
        let v = sweep.trace(&out).expect("output trace");
        let n = v.len();
        let mut g = vec![f64::NAN; n];
        for k in 1..n - 1 {
            g[k] = (v[k + 1] - v[k - 1]) / (x[k + 1] - x[k - 1]);
        }
        let m = (1..n - 1)
            .filter(|&k| g[k].is_finite())
            .min_by(|&i, &j| (v[i] - mid).abs().total_cmp(&(v[j] - mid).abs()))
            .ok_or_else(|| CharacterizeError::Measurement("output swing sweep did not converge".into()))?;
        let rel: Vec<f64> = g.iter().map(|gk| gk / g[m]).collect();
        let ends_low = rel[1] < FRAC_1_SQRT_2 && rel[n - 2] < FRAC_1_SQRT_2;
        if !ends_low && attempt < SWING_EXPANSIONS && w < supply {
            w = (w * 2.0).min(supply);
            continue;
        }
        if !ends_low {
            warnings.push("output swing: gain never dropped to 1/sqrt(2) of its mid value inside the sweep".into());
        }
        if !sweep.failed().is_empty() {
            warnings.push(format!("output swing sweep: {} point(s) did not converge", sweep.failed().len()));
        }
        let ok = |k: usize| rel[k] >= FRAC_1_SQRT_2;
        let mut a = m;
        while a > 1 && ok(a - 1) {
            a -= 1;
        }
        let mut b = m;
        while b + 2 < n && ok(b + 1) {
            b += 1;
        }
        // Interpolate the output voltage where the relative gain crosses the limit.
        let edge = |i: usize, j: usize| {
            if !rel[j].is_finite() || rel[i] == rel[j] {
                return v[i];
            }
            let t = ((rel[i] - FRAC_1_SQRT_2) / (rel[i] - rel[j])).clamp(0.0, 1.0);
            v[i] + t * (v[j] - v[i])
        };
        let va = if a > 1 { edge(a, a - 1) } else { v[a] };
        let vb = if b + 2 < n { edge(b, b + 1) } else { v[b] };
        return Ok((va.min(vb), va.max(vb)));
    }
    unreachable!("loop returns on its last attempt")
}

/// ICMR of the unity follower and open-loop output swing around `offset`.
pub fn range_metrics(dut: &Dut, offset: f64, opts: &CharacterizeOptions) -> Result<RangeMetrics, CharacterizeError> {
    opts.validate()?;
    let mut warnings = Vec::new();
    let icmr = icmr(dut, opts, &mut warnings)?;
    let output_swing = swing(dut, offset, opts, &mut warnings)?;
    Ok(RangeMetrics { icmr, output_swing, warnings })
}

/// Large-signal step response of the unity follower.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub slew_rise: f64,
    pub slew_fall: f64,
    pub settling_rise: f64,
    pub settling_fall: f64,
    pub trace: TransientResult,
}

/// Max slope and 1% settling time of one edge: samples in `[start, end)`.
fn edge_metrics(t: &[f64], v: &[f64], t_edge: f64, start: usize, end: usize, band: f64) -> (f64, f64) {
    let mut slew = 0.0f64;
    for k in start.max(1)..end.min(t.len() - 1) {
        let d = (v[k + 1] - v[k - 1]) / (t[k + 1] - t[k - 1]);
        slew = slew.max(d.abs());
    }
    let last = end.min(t.len()) - 1;
    let fin = v[last];
    let mut settle = 0.0;
    for k in (start..last).rev() {
        if (v[k] - fin).abs() > band {
            // Interpolate between the last sample outside and the next one inside.
            let (e0, e1) = ((v[k] - fin).abs(), (v[k + 1] - fin).abs());
            let frac = if e0 == e1 { 0.0 } else { ((e0 - band) / (e0 - e1)).clamp(0.0, 1.0) };
            settle = t[k] + frac * (t[k + 1] - t[k]) - t_edge;
            break;
        }
    }
    (slew, settle.max(0.0))
}

/// Slew rates and settling times for a follower input stepping across
/// `step_fraction` of the supply, centered at mid-supply.
pub fn step_metrics(dut: &Dut, opts: &CharacterizeOptions) -> Result<StepMetrics, CharacterizeError> {
    opts.validate()?;
    let half = 0.5 * opts.step_fraction * dut.ports.supply;
    let (lo, hi) = (dut.mid() - half, dut.mid() + half);
    let h = opts.step_tstep;
    let delay = 100.0 * h;
    let hold = opts.step_hold;
    let edge = opts.step_edge;
    let vin = step_input(lo, hi, delay, edge, hold);
    let bench = Bench::new(dut, Drive::Follower { vin })?;
    let t_fall = delay + edge + hold;
    let tstop = t_fall + edge + hold;
    let trace = transient(&bench.flat, h, tstop, &opts.solver)?;
    let v = trace.trace(&Bench::out_trace(dut)).expect("output trace");
    let t = &trace.times;
    let idx = |time: f64| t.partition_point(|&x| x < time - 1e-3 * h);
    let band = opts.settling_band * (hi - lo);
    let (rise_start, fall_start) = (idx(delay), idx(t_fall));
    let (slew_rise, settling_rise) = edge_metrics(t, &v, delay, rise_start, fall_start, band);
    let (slew_fall, settling_fall) = edge_metrics(t, &v, t_fall, fall_start, t.len(), band);
    Ok(StepMetrics { slew_rise, slew_fall, settling_rise, settling_fall, trace })
}

/// Rejection ratios (dB) and quiescent power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rejection {
    /// `+inf` when the common-mode gain vanishes.
    pub cmrr_db: f64,
    pub psrr_pos_db: f64,
    pub psrr_neg_db: f64,
    pub power_w: f64,
}

fn ratio_db(num: f64, den: f64) -> f64 {
    let db = 20.0 * (num / den).log10();
    if den == 0.0 || db > INFINITE_DB {
        f64::INFINITY
    } else {
        db
    }
}

/// CMRR and PSRR at `rejection_freq`, and supply power at the nulled
/// balance point.
pub fn rejection_and_power(dut: &Dut, offset: f64, opts: &CharacterizeOptions) -> Result<Rejection, CharacterizeError> {
    opts.validate()?;
    let (bench, op) = balanced(dut, offset, opts)?;
    let f = (opts.rejection_freq, opts.rejection_freq, 1);
    let gain = |src: &str| -> Result<f64, CharacterizeError> {
        Ok(ac_gain(&bench, &op, src, dut, f, opts)?.1[0].norm())
    };
    let adm = gain(VDIFF)?;
    let acm = gain(VCM)?;
    let apos = gain(VDD)?;
    let aneg = gain(VSS)?;
    let idd = op.branch_current(VDD).expect("supply branch");
    Ok(Rejection {
        cmrr_db: ratio_db(adm, acm),
        psrr_pos_db: ratio_db(adm, apos),
        psrr_neg_db: ratio_db(adm, aneg),
        power_w: dut.ports.supply * idd.abs(),
    })
}
