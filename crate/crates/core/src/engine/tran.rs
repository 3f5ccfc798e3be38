use super::assemble::{capacitors, node_voltage, CapState, Integration, LoadParams, Mode};
use super::dc::{newton, solve_dc, Solved};
use super::results::TransientResult;
use super::{EngineError, SolverOptions};
use crate::netlist::FlatCircuit;

/// Internal subdivisions tried when a step fails to converge.
const SUBSTEPS: [usize; 4] = [2, 4, 8, 16];

struct State {
    x: Vec<f64>,
    caps: Vec<CapState>,
}

fn advance(
    fc: &FlatCircuit,
    caps: &[(usize, usize, f64)],
    state: &State,
    time: f64,
    h: f64,
    method: Integration,
    opts: &SolverOptions,
) -> Result<Option<(State, Solved)>, EngineError> {
    let lp = LoadParams {
        mode: Mode::Tran { time, h, method, caps: &state.caps },
        source_scale: 1.0,
        gshunt: 0.0,
        gmin: opts.gmin,
        env: opts.env,
    };
    let Ok(s) = newton(fc, &state.x, &lp, opts)? else {
        return Ok(None);
    };
    let next = caps
        .iter()
        .zip(&state.caps)
        .map(|(&(a, b, c), prev)| {
            let v = node_voltage(&s.x, a) - node_voltage(&s.x, b);
            let i = match method {
                Integration::BackwardEuler => c / h * (v - prev.v),
                Integration::Trapezoidal => 2.0 * c / h * (v - prev.v) - prev.i,
            };
            CapState { v, i }
        })
        .collect();
    Ok(Some((State { x: s.x.clone(), caps: next }, s)))
}

/// Fixed-step transient from `0` to `tstop`.
///
/// The initial state is the DC solution with every source at its `t = 0`
/// value. The first step uses backward Euler and every later step the
/// trapezoidal rule. A step that fails to converge is retried as 2, 4, 8 and
/// 16 equal substeps; output is reported only on the `tstep` grid.
pub fn transient(fc: &FlatCircuit, tstep: f64, tstop: f64, opts: &SolverOptions) -> Result<TransientResult, EngineError> {
    opts.validate()?;
    if !(tstep > 0.0 && tstep.is_finite() && tstop.is_finite() && tstop > tstep) {
        return Err(EngineError::InvalidAnalysis(format!(
            "transient needs 0 < tstep < tstop, got tstep {tstep}, tstop {tstop}"
        )));
    }
    let mut result = TransientResult {
        times: Vec::new(),
        names: fc.unknown_names(),
        values: Vec::new(),
        residual_norms: Vec::new(),
        residual_bounds: Vec::new(),
    };
    let fail = |time: f64, reason: String, partial: TransientResult| EngineError::Transient {
        time,
        reason,
        partial: Box::new(partial),
    };

    let init = match solve_dc(fc, None, Mode::DcAt { time: 0.0 }, opts) {
        Ok(s) => s,
        Err(e @ (EngineError::Convergence { .. } | EngineError::Singular { .. })) => {
            return Err(fail(0.0, format!("initial operating point: {e}"), result));
        }
        Err(e) => return Err(e),
    };
    let caps = capacitors(fc);
    let mut state = State {
        caps: caps
            .iter()
            .map(|&(a, b, _)| CapState { v: node_voltage(&init.x, a) - node_voltage(&init.x, b), i: 0.0 })
            .collect(),
        x: init.x.clone(),
    };
    result.times.push(0.0);
    result.values.push(init.x);
    result.residual_norms.push(init.residual);
    result.residual_bounds.push(init.bound);

    let mut steps = (tstop / tstep + 1e-9).floor() as usize;
    if (steps as f64) * tstep < tstop * (1.0 - 1e-12) {
        steps += 1;
    }
    for k in 1..=steps {
        let t0 = (k - 1) as f64 * tstep;
        let t1 = k as f64 * tstep;
        let method = if k == 1 { Integration::BackwardEuler } else { Integration::Trapezoidal };
        let mut accepted = advance(fc, &caps, &state, t1, tstep, method, opts)?;
        if accepted.is_none() {
            'sub: for m in SUBSTEPS {
                let h = tstep / m as f64;
                let mut s = State { x: state.x.clone(), caps: state.caps.clone() };
                let mut last = None;
                for j in 1..=m {
                    let t = if j == m { t1 } else { t0 + j as f64 * h };
                    let method = if k == 1 && j == 1 { Integration::BackwardEuler } else { Integration::Trapezoidal };
                    match advance(fc, &caps, &s, t, h, method, opts)? {
                        Some((ns, solved)) => {
                            s = ns;
                            last = Some(solved);
                        }
                        None => continue 'sub,
                    }
                }
                accepted = last.map(|solved| (s, solved));
                break;
            }
        }
        let Some((next, solved)) = accepted else {
            return Err(fail(t1, "Newton iteration did not converge".into(), result));
        };
        state = next;
        result.times.push(t1);
        result.values.push(solved.x);
        result.residual_norms.push(solved.residual);
        result.residual_bounds.push(solved.bound);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{elaborate, parse};

    #[test]
    fn constant_sources_stay_put() {
        let fc = elaborate(&parse("t\nV1 1 0 2\nR1 1 2 1k\nC1 2 0 1n\nR2 2 0 1k\n").unwrap()).unwrap();
        let r = transient(&fc, 1e-7, 1e-5, &SolverOptions::default()).unwrap();
        assert_eq!(r.times.len(), 101);
        for v in r.voltage("2").unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_steps() {
        let fc = elaborate(&parse("t\nV1 1 0 2\nR1 1 0 1k\n").unwrap()).unwrap();
        assert!(transient(&fc, 0.0, 1.0, &SolverOptions::default()).is_err());
        assert!(transient(&fc, 1.0, 0.5, &SolverOptions::default()).is_err());
    }
}
