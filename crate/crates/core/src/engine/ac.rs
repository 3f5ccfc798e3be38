use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::assemble::{capacitors, load, LoadParams, Mode};
use super::results::{AcResult, OperatingPoint};
use super::{EngineError, SolverOptions};
use crate::netlist::{FlatCircuit, FlatKind, SourceSpec};

/// `fstart · 10^(k/ppd)` for every k that stays at or below `fstop`.
pub fn log_frequencies(fstart: f64, fstop: f64, points_per_decade: usize) -> Result<Vec<f64>, EngineError> {
    if !(fstart > 0.0 && fstart.is_finite() && fstop.is_finite() && fstop >= fstart) {
        return Err(EngineError::InvalidAnalysis(format!(
            "AC range needs 0 < fstart <= fstop, got {fstart} .. {fstop}"
        )));
    }
    if points_per_decade == 0 {
        return Err(EngineError::InvalidAnalysis("points per decade must be at least 1".into()));
    }
    let decades = (fstop / fstart).log10();
    let count = (decades * points_per_decade as f64 + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| fstart * 10f64.powf(k as f64 / points_per_decade as f64)).collect())
}

fn phasor(src: &SourceSpec) -> Complex64 {
    src.ac.map_or(Complex64::new(0.0, 0.0), |ac| Complex64::from_polar(ac.magnitude, ac.phase.to_radians()))
}

/// Small-signal sweep linearized at `op`. Every source with an AC
/// specification drives the system; all node voltages and branch currents
/// are reported.
pub fn ac_analysis(
    fc: &FlatCircuit,
    op: &OperatingPoint,
    fstart: f64,
    fstop: f64,
    points_per_decade: usize,
    opts: &SolverOptions,
) -> Result<AcResult, EngineError> {
    opts.validate()?;
    let frequencies = log_frequencies(fstart, fstop, points_per_decade)?;
    let n = fc.num_unknowns();
    if op.x.len() != n {
        return Err(EngineError::InvalidAnalysis("operating point does not belong to this circuit".into()));
    }
    let lp = LoadParams { mode: Mode::Dc, source_scale: 1.0, gshunt: 0.0, gmin: opts.gmin, env: opts.env };
    let g = load(fc, &op.x, &lp)?.jac;

    let node_rows = fc.num_nodes().saturating_sub(1);
    let mut rhs = DVector::<Complex64>::zeros(n);
    for e in &fc.elements {
        match &e.kind {
            FlatKind::Vsource { branch, src, .. } => rhs[node_rows + branch] += phasor(src),
            FlatKind::Isource { p, n, src } => {
                let i = phasor(src);
                if let Some(r) = p.checked_sub(1) {
                    rhs[r] -= i;
                }
                if let Some(r) = n.checked_sub(1) {
                    rhs[r] += i;
                }
            }
            _ => {}
        }
    }
    let caps = capacitors(fc);

    let mut values = Vec::with_capacity(frequencies.len());
    for &f in &frequencies {
        let w = 2.0 * PI * f;
        let mut m: DMatrix<Complex64> = g.map(|v| Complex64::new(v, 0.0));
        for &(a, b, c) in &caps {
            let y = Complex64::new(0.0, w * c);
            let (ra, rb) = (a.checked_sub(1), b.checked_sub(1));
            if let Some(ra) = ra {
                m[(ra, ra)] += y;
            }
            if let Some(rb) = rb {
                m[(rb, rb)] += y;
            }
            if let (Some(ra), Some(rb)) = (ra, rb) {
                m[(ra, rb)] -= y;
                m[(rb, ra)] -= y;
            }
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
            .ok_or_else(|| EngineError::Singular { context: format!("in AC analysis at {f:e} Hz") })?;
        values.push(sol.iter().copied().collect());
    }
    Ok(AcResult { frequencies, names: fc.unknown_names(), values })
}
