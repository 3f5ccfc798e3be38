use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::device::ModelCard;

/// Name of the ground node.
pub const GROUND: &str = "0";

/// Trapezoidal single pulse: `PULSE(v1 v2 delay rise fall width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub v1: f64,
    pub v2: f64,
    pub delay: f64,
    pub rise: f64,
    pub fall: f64,
    pub width: f64,
}

impl Pulse {
    pub fn value_at(&self, t: f64) -> f64 {
        let t = t - self.delay;
        if t <= 0.0 {
            return self.v1;
        }
        if t < self.rise {
            return self.v1 + (self.v2 - self.v1) * t / self.rise;
        }
        let t = t - self.rise;
        if t <= self.width {
            return self.v2;
        }
        let t = t - self.width;
        if t < self.fall {
            return self.v2 + (self.v1 - self.v2) * t / self.fall;
        }
        self.v1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcSpec {
    pub magnitude: f64,
    /// Phase in degrees.
    pub phase: f64,
}

/// Value record of an independent source.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceSpec {
    pub dc: f64,
    pub ac: Option<AcSpec>,
    pub pulse: Option<Pulse>,
}

impl SourceSpec {
    pub fn dc(value: f64) -> Self {
        Self { dc: value, ac: None, pulse: None }
    }

    pub fn with_ac(mut self, magnitude: f64, phase: f64) -> Self {
        self.ac = Some(AcSpec { magnitude, phase });
        self
    }

    /// Waveform value at time `t`; the DC value when no pulse is attached.
    pub fn value_at(&self, t: f64) -> f64 {
        self.pulse.map_or(self.dc, |p| p.value_at(t))
    }
}

/// Output clamp of a controlled source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limit {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElementKind {
    Resistor { a: String, b: String, ohms: f64 },
    Capacitor { a: String, b: String, farads: f64 },
    VoltageSource { pos: String, neg: String, source: SourceSpec },
    CurrentSource { pos: String, neg: String, source: SourceSpec },
    Mosfet { drain: String, gate: String, source: String, model: String, w: f64, l: f64 },
    /// Voltage-controlled voltage source (E card).
    Vcvs { pos: String, neg: String, cpos: String, cneg: String, gain: f64, limit: Option<Limit> },
    /// Voltage-controlled current source (G card).
    Vccs { pos: String, neg: String, cpos: String, cneg: String, gm: f64, limit: Option<Limit> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
}

impl Element {
    pub fn letter(&self) -> char {
        match self.kind {
            ElementKind::Resistor { .. } => 'R',
            ElementKind::Capacitor { .. } => 'C',
            ElementKind::VoltageSource { .. } => 'V',
            ElementKind::CurrentSource { .. } => 'I',
            ElementKind::Mosfet { .. } => 'M',
            ElementKind::Vcvs { .. } => 'E',
            ElementKind::Vccs { .. } => 'G',
        }
    }

    /// Terminal nodes in card order.
    pub fn nodes(&self) -> Vec<&str> {
        match &self.kind {
            ElementKind::Resistor { a, b, .. } | ElementKind::Capacitor { a, b, .. } => vec![a, b],
            ElementKind::VoltageSource { pos, neg, .. } | ElementKind::CurrentSource { pos, neg, .. } => {
                vec![pos, neg]
            }
            ElementKind::Mosfet { drain, gate, source, .. } => vec![drain, gate, source],
            ElementKind::Vcvs { pos, neg, cpos, cneg, .. } | ElementKind::Vccs { pos, neg, cpos, cneg, .. } => {
                vec![pos, neg, cpos, cneg]
            }
        }
    }

    pub fn nodes_mut(&mut self) -> Vec<&mut String> {
        match &mut self.kind {
            ElementKind::Resistor { a, b, .. } | ElementKind::Capacitor { a, b, .. } => vec![a, b],
            ElementKind::VoltageSource { pos, neg, .. } | ElementKind::CurrentSource { pos, neg, .. } => {
                vec![pos, neg]
            }
            ElementKind::Mosfet { drain, gate, source, .. } => vec![drain, gate, source],
            ElementKind::Vcvs { pos, neg, cpos, cneg, .. } | ElementKind::Vccs { pos, neg, cpos, cneg, .. } => {
                vec![pos, neg, cpos, cneg]
            }
        }
    }

    pub fn touches(&self, node: &str) -> bool {
        self.nodes().contains(&node)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnalysisDirective {
    Op,
    Dc { source: String, start: f64, stop: f64, step: f64 },
    Ac { points_per_decade: usize, fstart: f64, fstop: f64 },
    Tran { tstep: f64, tstop: f64 },
}

/// A parsed netlist. Names are stored lower-case.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Circuit {
    pub title: String,
    pub elements: Vec<Element>,
    pub models: BTreeMap<String, ModelCard<f64>>,
    pub directives: Vec<AnalysisDirective>,
}

impl Circuit {
    pub fn node_names(&self) -> BTreeSet<String> {
        self.elements
            .iter()
            .flat_map(|e| e.nodes().into_iter().map(str::to_string))
            .collect()
    }

    pub fn has_node(&self, name: &str) -> bool {
        self.elements.iter().any(|e| e.touches(name))
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name.eq_ignore_ascii_case(name))
    }
}

fn write_source(f: &mut fmt::Formatter<'_>, s: &SourceSpec) -> fmt::Result {
    write!(f, " DC {:e}", s.dc)?;
    if let Some(ac) = s.ac {
        write!(f, " AC {:e} {:e}", ac.magnitude, ac.phase)?;
    }
    if let Some(p) = s.pulse {
        write!(
            f,
            " PULSE({:e} {:e} {:e} {:e} {:e} {:e})",
            p.v1, p.v2, p.delay, p.rise, p.fall, p.width
        )?;
    }
    Ok(())
}

fn write_limit(f: &mut fmt::Formatter<'_>, limit: &Option<Limit>) -> fmt::Result {
    match limit {
        Some(l) => write!(f, " LIMIT {:e} {:e}", l.lo, l.hi),
        None => Ok(()),
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = &self.name;
        match &self.kind {
            ElementKind::Resistor { a, b, ohms } => write!(f, "{name} {a} {b} {ohms:e}"),
            ElementKind::Capacitor { a, b, farads } => write!(f, "{name} {a} {b} {farads:e}"),
            ElementKind::VoltageSource { pos, neg, source } | ElementKind::CurrentSource { pos, neg, source } => {
                write!(f, "{name} {pos} {neg}")?;
                write_source(f, source)
            }
            ElementKind::Mosfet { drain, gate, source, model, w, l } => {
                write!(f, "{name} {drain} {gate} {source} {model} W={w:e} L={l:e}")
            }
            ElementKind::Vcvs { pos, neg, cpos, cneg, gain, limit } => {
                write!(f, "{name} {pos} {neg} {cpos} {cneg} {gain:e}")?;
                write_limit(f, limit)
            }
            ElementKind::Vccs { pos, neg, cpos, cneg, gm, limit } => {
                write!(f, "{name} {pos} {neg} {cpos} {cneg} {gm:e}")?;
                write_limit(f, limit)
            }
        }
    }
}

impl fmt::Display for AnalysisDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisDirective::Op => write!(f, ".op"),
            AnalysisDirective::Dc { source, start, stop, step } => {
                write!(f, ".dc {source} {start:e} {stop:e} {step:e}")
            }
            AnalysisDirective::Ac { points_per_decade, fstart, fstop } => {
                write!(f, ".ac dec {points_per_decade} {fstart:e} {fstop:e}")
            }
            AnalysisDirective::Tran { tstep, tstop } => write!(f, ".tran {tstep:e} {tstop:e}"),
        }
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        for (name, m) in &self.models {
            writeln!(
                f,
                ".model {name} {} (vt0={:e} n={:e} kp={:e} lambda={:e})",
                m.polarity.keyword(),
                m.vt0,
                m.n,
                m.kp,
                m.lambda
            )?;
        }
        for e in &self.elements {
            writeln!(f, "{e}")?;
        }
        for d in &self.directives {
            writeln!(f, "{d}")?;
        }
        writeln!(f, ".end")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_shape() {
        let p = Pulse { v1: 0.0, v2: 1.0, delay: 1.0, rise: 1.0, fall: 2.0, width: 3.0 };
        assert_eq!(p.value_at(0.0), 0.0);
        assert_eq!(p.value_at(1.0), 0.0);
        assert_eq!(p.value_at(1.5), 0.5);
        assert_eq!(p.value_at(2.0), 1.0);
        assert_eq!(p.value_at(5.0), 1.0);
        assert_eq!(p.value_at(6.0), 0.5);
        assert_eq!(p.value_at(7.0), 0.0);
        assert_eq!(p.value_at(100.0), 0.0);
    }
}
