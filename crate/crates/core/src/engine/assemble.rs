//! Residual and Jacobian assembly for the MNA system.
//!
//! Every element adds its terminal currents to the residual `F(x)` (current
//! leaving each node) and its partial derivatives to `J = dF/dx`. Branch rows
//! hold the constitutive equations of voltage-defined elements.

use nalgebra::{DMatrix, DVector};

use super::EngineError;
use crate::device::{drain_current_source_tied, DeviceEval, ThermalEnv};
use crate::netlist::{FlatCircuit, FlatKind, Limit};
use crate::scalar::{sigmoid, softplus};

/// Integration state of one capacitor.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CapState {
    pub v: f64,
    pub i: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Integration {
    BackwardEuler,
    Trapezoidal,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Mode<'a> {
    /// Capacitors open; sources at their DC values.
    Dc,
    /// Capacitors open; sources evaluated at `time`.
    DcAt { time: f64 },
    /// Companion models for the step ending at `time`.
    Tran { time: f64, h: f64, method: Integration, caps: &'a [CapState] },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LoadParams<'a> {
    pub mode: Mode<'a>,
    pub source_scale: f64,
    /// Extra conductance from every node to ground (gmin stepping).
    pub gshunt: f64,
    /// Conductance across every MOS drain-source pair.
    pub gmin: f64,
    pub env: ThermalEnv<f64>,
}

pub(crate) struct System {
    pub jac: DMatrix<f64>,
    pub res: DVector<f64>,
    /// Largest single element current incident on each node row.
    pub scale: Vec<f64>,
    pub devices: Vec<DeviceEval<f64>>,
}

/// Smooth clamp of `gain * u` into `[lo, hi]`; returns value and derivative in `u`.
pub(crate) fn controlled(gain: f64, u: f64, limit: Option<Limit>) -> (f64, f64) {
    let lin = gain * u;
    match limit {
        None => (lin, gain),
        Some(Limit { lo, hi }) => {
            let w = 1e-3 * (hi - lo);
            let a = (lin - lo) / w;
            let b = (lin - hi) / w;
            let f = lo + w * (softplus(a) - softplus(b));
            (f, gain * (sigmoid(a) - sigmoid(b)))
        }
    }
}

struct Stamper<'a> {
    sys: &'a mut System,
    nodes: usize,
}

impl Stamper<'_> {
    #[inline]
    fn row(&self, node: usize) -> Option<usize> {
        node.checked_sub(1)
    }

    /// Current `i` leaving node `a` and entering node `b`.
    #[inline]
    fn current(&mut self, a: usize, b: usize, i: f64) {
        if let Some(r) = self.row(a) {
            self.sys.res[r] += i;
            self.sys.scale[r] = self.sys.scale[r].max(i.abs());
        }
        if let Some(r) = self.row(b) {
            self.sys.res[r] -= i;
            self.sys.scale[r] = self.sys.scale[r].max(i.abs());
        }
    }

    /// `d(current a->b)/d(v_c) = g`.
    #[inline]
    fn trans(&mut self, a: usize, b: usize, c: usize, g: f64) {
        if let Some(col) = self.row(c) {
            if let Some(r) = self.row(a) {
                self.sys.jac[(r, col)] += g;
            }
            if let Some(r) = self.row(b) {
                self.sys.jac[(r, col)] -= g;
            }
        }
    }

    #[inline]
    fn conductance(&mut self, a: usize, b: usize, g: f64) {
        self.trans(a, b, a, g);
        self.trans(a, b, b, -g);
    }

    /// Couples branch unknown `k` into nodes `p`/`n` and writes its row.
    fn branch(&mut self, p: usize, n: usize, k: usize, x: &[f64]) {
        let col = self.nodes - 1 + k;
        let ib = x[col];
        self.current(p, n, ib);
        if let Some(r) = self.row(p) {
            self.sys.jac[(r, col)] += 1.0;
            self.sys.jac[(col, r)] += 1.0;
        }
        if let Some(r) = self.row(n) {
            self.sys.jac[(r, col)] -= 1.0;
            self.sys.jac[(col, r)] -= 1.0;
        }
    }
}

#[inline]
fn volt(x: &[f64], node: usize) -> f64 {
    if node == 0 {
        0.0
    } else {
        x[node - 1]
    }
}

/// Evaluates `F(x)` and `J(x)`.
pub(crate) fn load(fc: &FlatCircuit, x: &[f64], lp: &LoadParams<'_>) -> Result<System, EngineError> {
    let n = fc.num_unknowns();
    let mut sys = System {
        jac: DMatrix::zeros(n, n),
        res: DVector::zeros(n),
        scale: vec![0.0; n],
        devices: Vec::new(),
    };
    let nodes = fc.num_nodes();
    let time = match lp.mode {
        Mode::Dc => None,
        Mode::DcAt { time } | Mode::Tran { time, .. } => Some(time),
    };
    let source_value = |src: &crate::netlist::SourceSpec| {
        lp.source_scale * time.map_or(src.dc, |t| src.value_at(t))
    };
    let mut st = Stamper { sys: &mut sys, nodes };
    let mut cap_index = 0;

    for e in &fc.elements {
        match &e.kind {
            &FlatKind::Resistor { a, b, g } => {
                st.current(a, b, g * (volt(x, a) - volt(x, b)));
                st.conductance(a, b, g);
            }
            &FlatKind::Capacitor { a, b, c } => {
                if let Mode::Tran { h, method, caps, .. } = lp.mode {
                    let prev = caps[cap_index];
                    let v = volt(x, a) - volt(x, b);
                    let (geq, i) = match method {
                        Integration::BackwardEuler => (c / h, c / h * (v - prev.v)),
                        Integration::Trapezoidal => (2.0 * c / h, 2.0 * c / h * (v - prev.v) - prev.i),
                    };
                    st.current(a, b, i);
                    st.conductance(a, b, geq);
                }
                cap_index += 1;
            }
            FlatKind::Vsource { p, n, branch, src } => {
                let (p, n, k) = (*p, *n, *branch);
                st.branch(p, n, k, x);
                let row = nodes - 1 + k;
                st.sys.res[row] += volt(x, p) - volt(x, n) - source_value(src);
            }
            FlatKind::Isource { p, n, src } => {
                st.current(*p, *n, source_value(src));
            }
            FlatKind::Mos { d, g, s, params } => {
                let (d, g, s) = (*d, *g, *s);
                let ev = drain_current_source_tied(params, volt(x, g), volt(x, s), volt(x, d), &lp.env)
                    .map_err(|source| EngineError::Device { element: e.name.clone(), source })?;
                st.current(d, s, ev.id);
                st.trans(d, s, d, ev.gds);
                st.trans(d, s, g, ev.gm);
                st.trans(d, s, s, -ev.gms);
                if lp.gmin > 0.0 {
                    st.current(d, s, lp.gmin * (volt(x, d) - volt(x, s)));
                    st.conductance(d, s, lp.gmin);
                }
                st.sys.devices.push(ev);
            }
            &FlatKind::Vcvs { p, n, cp, cn, gain, limit, branch } => {
                st.branch(p, n, branch, x);
                let row = nodes - 1 + branch;
                let (f, df) = controlled(gain, volt(x, cp) - volt(x, cn), limit);
                st.sys.res[row] += volt(x, p) - volt(x, n) - f;
                if let Some(c) = cp.checked_sub(1) {
                    st.sys.jac[(row, c)] -= df;
                }
                if let Some(c) = cn.checked_sub(1) {
                    st.sys.jac[(row, c)] += df;
                }
            }
            &FlatKind::Vccs { p, n, cp, cn, gm, limit } => {
                let (i, di) = controlled(gm, volt(x, cp) - volt(x, cn), limit);
                st.current(p, n, i);
                st.trans(p, n, cp, di);
                st.trans(p, n, cn, -di);
            }
        }
    }

    if lp.gshunt > 0.0 {
        for r in 0..nodes - 1 {
            sys.res[r] += lp.gshunt * x[r];
            sys.jac[(r, r)] += lp.gshunt;
        }
    }
    Ok(sys)
}

/// Capacitor list in element order as `(a, b, c)`.
pub(crate) fn capacitors(fc: &FlatCircuit) -> Vec<(usize, usize, f64)> {
    fc.elements
        .iter()
        .filter_map(|e| match e.kind {
            FlatKind::Capacitor { a, b, c } => Some((a, b, c)),
            _ => None,
        })
        .collect()
}

pub(crate) fn node_voltage(x: &[f64], node: usize) -> f64 {
    volt(x, node)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_is_linear_inside_and_flat_outside() {
        let lim = Some(Limit { lo: -1.0, hi: 1.0 });
        let (f, df) = controlled(1000.0, 1e-4, lim);
        assert!((f - 0.1).abs() < 1e-9);
        assert!((df - 1000.0).abs() < 1e-6);
        let (f, df) = controlled(1000.0, 0.01, lim);
        assert!((f - 1.0).abs() < 1e-9);
        assert!(df.abs() < 1e-9);
        let (f, df) = controlled(1000.0, -0.01, lim);
        assert!((f + 1.0).abs() < 1e-9);
        assert!(df.abs() < 1e-9);
    }

    #[test]
    fn clamp_derivative_matches_finite_difference() {
        let lim = Some(Limit { lo: 0.1, hi: 1.9 });
        for u in [-0.01, 0.0001, 0.0019, 0.00191, 0.01] {
            let h = 1e-9;
            let fd = (controlled(1000.0, u + h, lim).0 - controlled(1000.0, u - h, lim).0) / (2.0 * h);
            let an = controlled(1000.0, u, lim).1;
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "u={u}: {fd} vs {an}");
        }
    }
}
