use nalgebra::DVector;

use super::assemble::{load, LoadParams, Mode, System};
use super::results::{OperatingPoint, SweepResult};
use super::{EngineError, SolverOptions};
use crate::netlist::{FlatCircuit, FlatKind};

/// Largest per-iteration change of a node voltage at a MOS terminal, V.
const DAMP_LIMIT: f64 = 0.5;
/// Shunt conductance at the start of gmin stepping, S.
const GSHUNT_START: f64 = 1e-2;
/// Smallest source-stepping increment before giving up.
const MIN_SOURCE_INCREMENT: f64 = 1e-6;

/// Result of one accepted Newton solve.
pub(crate) struct Solved {
    pub x: Vec<f64>,
    pub sys: System,
    pub iterations: usize,
    pub residual: f64,
    pub bound: f64,
}

/// Newton failure. `best` is the smallest KCL residual seen.
#[derive(Debug)]
pub(crate) enum Failure {
    NoConvergence { best: f64 },
    Singular,
}

impl Failure {
    fn best(&self) -> f64 {
        match self {
            Failure::NoConvergence { best } => *best,
            Failure::Singular => f64::INFINITY,
        }
    }
}

/// Largest node residual and the matching tolerance.
pub(crate) fn kcl_measure(sys: &System, node_rows: usize, opts: &SolverOptions) -> (f64, f64, bool) {
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    let mut ok = true;
    for r in 0..node_rows {
        let f = sys.res[r].abs();
        worst = worst.max(f);
        scale = scale.max(sys.scale[r]);
        if !(f <= opts.abstol + opts.reltol * sys.scale[r]) {
            ok = false;
        }
    }
    (worst, opts.abstol + opts.reltol * scale, ok)
}

fn branch_rows_ok(sys: &System, x: &[f64], node_rows: usize, opts: &SolverOptions) -> bool {
    (node_rows..x.len()).all(|r| sys.res[r].abs() <= opts.vntol)
}

fn solve_linear(sys: &System) -> Option<DVector<f64>> {
    let rhs = -&sys.res;
    let dx = sys.jac.clone().lu().solve(&rhs)?;
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

/// Damped Newton iteration from `x0` under `lp`.
pub(crate) fn newton(
    fc: &FlatCircuit,
    x0: &[f64],
    lp: &LoadParams<'_>,
    opts: &SolverOptions,
) -> Result<Result<Solved, Failure>, EngineError> {
    let n = fc.num_unknowns();
    let node_rows = fc.num_nodes().saturating_sub(1);
    let linear = fc.is_linear();
    let limited = fc.device_nodes();
    let mut x = x0.to_vec();
    let mut best = f64::INFINITY;

    if n == 0 {
        let sys = load(fc, &x, lp)?;
        return Ok(Ok(Solved { x, sys, iterations: 0, residual: 0.0, bound: opts.abstol }));
    }

    for iter in 1..=opts.max_newton_iters {
        let sys = load(fc, &x, lp)?;
        let (res, _, _) = kcl_measure(&sys, node_rows, opts);
        best = best.min(res);
        let Some(dx) = solve_linear(&sys) else {
            return Ok(Err(Failure::Singular));
        };

        let mut damped = false;
        let mut small = true;
        for (i, d) in dx.iter().enumerate() {
            let mut d = *d;
            if i < node_rows {
                if limited[i] && d.abs() > DAMP_LIMIT {
                    d = DAMP_LIMIT.copysign(d);
                    damped = true;
                }
                x[i] += d;
                if d.abs() > opts.vntol + opts.reltol * x[i].abs() {
                    small = false;
                }
            } else {
                x[i] += d;
                if d.abs() > opts.abstol + opts.reltol * x[i].abs() {
                    small = false;
                }
            }
        }

        if linear || (small && !damped) {
            let mut sys = load(fc, &x, lp)?;
            let (mut residual, mut bound, mut ok) = kcl_measure(&sys, node_rows, opts);
            best = best.min(residual);
            if !ok || !branch_rows_ok(&sys, &x, node_rows, opts) {
                if linear {
                    return Ok(Err(Failure::NoConvergence { best }));
                }
                continue;
            }
            if !linear {
                // One extra undamped step tightens the solution well below tolerance.
                if let Some(dx) = solve_linear(&sys) {
                    let polished: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
                    let psys = load(fc, &polished, lp)?;
                    let (pres, pbound, pok) = kcl_measure(&psys, node_rows, opts);
                    if pok && pres <= residual {
                        x = polished;
                        sys = psys;
                        residual = pres;
                        bound = pbound;
                        ok = pok;
                    }
                }
            }
            debug_assert!(ok);
            return Ok(Ok(Solved { x, sys, iterations: iter, residual, bound }));
        }
    }
    Ok(Err(Failure::NoConvergence { best }))
}

fn params<'a>(mode: Mode<'a>, opts: &SolverOptions) -> LoadParams<'a> {
    LoadParams { mode, source_scale: 1.0, gshunt: 0.0, gmin: opts.gmin, env: opts.env }
}

/// Plain Newton, then gmin stepping, then source stepping.
pub(crate) fn solve_dc(
    fc: &FlatCircuit,
    seed: Option<&[f64]>,
    mode: Mode<'_>,
    opts: &SolverOptions,
) -> Result<Solved, EngineError> {
    let n = fc.num_unknowns();
    let zeros = vec![0.0; n];
    let x0 = seed.filter(|s| s.len() == n).unwrap_or(&zeros);
    let base = params(mode, opts);
    let mut best = f64::INFINITY;
    let note = |f: &Failure, best: &mut f64| *best = best.min(f.best());

    let first = match newton(fc, x0, &base, opts)? {
        Ok(s) => return Ok(s),
        Err(f) => f,
    };
    note(&first, &mut best);
    if fc.is_linear() {
        return Err(match first {
            Failure::Singular => EngineError::Singular { context: "in DC operating point".into() },
            Failure::NoConvergence { best } => EngineError::Convergence { best_residual: best },
        });
    }

    // gmin stepping: a decaying shunt from every node to ground.
    'gmin: {
        let mut x = x0.to_vec();
        let mut total = 0;
        for k in 0..=opts.gmin_steps {
            let gshunt = GSHUNT_START * 10f64.powi(-(k as i32));
            let lp = LoadParams { gshunt, ..base };
            match newton(fc, &x, &lp, opts)? {
                Ok(s) => {
                    total += s.iterations;
                    x = s.x;
                }
                Err(f) => {
                    note(&f, &mut best);
                    break 'gmin;
                }
            }
        }
        match newton(fc, &x, &base, opts)? {
            Ok(mut s) => {
                s.iterations += total;
                return Ok(s);
            }
            Err(f) => note(&f, &mut best),
        }
    }

    // Source stepping: ramp every independent source from zero.
    let mut x = zeros.clone();
    let mut total = 0;
    let mut scale = 0.0;
    let mut inc = 1.0 / opts.source_steps as f64;
    let lp0 = LoadParams { source_scale: 0.0, ..base };
    match newton(fc, &x, &lp0, opts)? {
        Ok(s) => {
            total += s.iterations;
            x = s.x;
        }
        Err(f) => {
            note(&f, &mut best);
            return Err(EngineError::Convergence { best_residual: best });
        }
    }
    while scale < 1.0 {
        let target = (scale + inc).min(1.0);
        let lp = LoadParams { source_scale: target, ..base };
        match newton(fc, &x, &lp, opts)? {
            Ok(mut s) => {
                total += s.iterations;
                scale = target;
                if scale >= 1.0 {
                    s.iterations = total;
                    return Ok(s);
                }
                x = s.x;
                inc = (inc * 2.0).min(1.0 / opts.source_steps as f64);
            }
            Err(f) => {
                note(&f, &mut best);
                inc *= 0.5;
                if inc < MIN_SOURCE_INCREMENT {
                    break;
                }
            }
        }
    }
    Err(EngineError::Convergence { best_residual: best })
}

pub(crate) fn to_operating_point(fc: &FlatCircuit, s: Solved) -> OperatingPoint {
    let node_rows = fc.num_nodes().saturating_sub(1);
    let mut node_voltages = vec![0.0];
    node_voltages.extend_from_slice(&s.x[..node_rows]);
    let names = fc
        .elements
        .iter()
        .filter(|e| matches!(e.kind, FlatKind::Mos { .. }))
        .map(|e| e.name.clone());
    OperatingPoint {
        node_names: fc.node_names().to_vec(),
        node_voltages,
        branch_names: fc.branch_names().to_vec(),
        branch_currents: s.x[node_rows..].to_vec(),
        device_evals: names.zip(s.sys.devices).collect(),
        residual_norm: s.residual,
        residual_bound: s.bound,
        iterations: s.iterations,
        x: s.x,
    }
}

/// DC operating point with all sources at their DC values.
pub fn dc_operating_point(fc: &FlatCircuit, opts: &SolverOptions) -> Result<OperatingPoint, EngineError> {
    opts.validate()?;
    let s = solve_dc(fc, None, Mode::Dc, opts)?;
    Ok(to_operating_point(fc, s))
}

/// Same as [`dc_operating_point`] but Newton starts from `seed`
/// (an [`OperatingPoint::solution`] of a circuit with the same unknowns).
pub fn dc_operating_point_from(
    fc: &FlatCircuit,
    seed: &[f64],
    opts: &SolverOptions,
) -> Result<OperatingPoint, EngineError> {
    opts.validate()?;
    let s = solve_dc(fc, Some(seed), Mode::Dc, opts)?;
    Ok(to_operating_point(fc, s))
}

/// Number of points in `start..=stop` by `step`.
pub(crate) fn sweep_points(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, EngineError> {
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
        return Err(EngineError::InvalidAnalysis("sweep bounds must be finite".into()));
    }
    if step == 0.0 {
        return Err(EngineError::ZeroStep);
    }
    let span = (stop - start) / step;
    if span < 0.0 {
        return Err(EngineError::StepDirection { start, stop, step });
    }
    let count = (span + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// Sweeps the DC value of independent source `source`. Each point is seeded
/// from the previous converged point; points that fail every strategy are
/// recorded as `NaN` with `converged = false`.
pub fn dc_sweep(
    fc: &FlatCircuit,
    source: &str,
    start: f64,
    stop: f64,
    step: f64,
    opts: &SolverOptions,
) -> Result<SweepResult, EngineError> {
    opts.validate()?;
    let mut work = fc.clone();
    if work.source_mut(source).is_none() {
        return Err(EngineError::UnknownSource(source.to_string()));
    }
    let sweep_values = sweep_points(start, stop, step)?;
    let n = fc.num_unknowns();
    let base = params(Mode::Dc, opts);
    let mut prev: Option<Vec<f64>> = None;
    let mut values = Vec::with_capacity(sweep_values.len());
    let mut converged = Vec::with_capacity(sweep_values.len());

    for &v in &sweep_values {
        work.source_mut(source).expect("checked above").dc = v;
        let mut solved = None;
        if let Some(seed) = &prev {
            if let Ok(s) = newton(&work, seed, &base, opts)? {
                solved = Some(s);
            }
        }
        if solved.is_none() {
            match solve_dc(&work, prev.as_deref(), Mode::Dc, opts) {
                Ok(s) => solved = Some(s),
                Err(EngineError::Convergence { .. }) | Err(EngineError::Singular { .. }) if prev.is_some() => {
                    solved = solve_dc(&work, None, Mode::Dc, opts).ok();
                }
                Err(EngineError::Convergence { .. }) | Err(EngineError::Singular { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        match solved {
            Some(s) => {
                values.push(s.x.clone());
                converged.push(true);
                prev = Some(s.x);
            }
            None => {
                values.push(vec![f64::NAN; n]);
                converged.push(false);
            }
        }
    }

    Ok(SweepResult {
        source: source.to_ascii_lowercase(),
        sweep_values,
        names: fc.unknown_names(),
        values,
        converged,
    })
}
