use super::{CharacterizeError, Dut, DutPorts};
use crate::netlist::{elaborate, Circuit, Element, ElementKind, FlatCircuit, Limit, Pulse, SourceSpec, GROUND};

pub(crate) const VDD: &str = "vtb_dd";
pub(crate) const VSS: &str = "vtb_ss";
pub(crate) const VCM: &str = "vtb_cm";
pub(crate) const VDIFF: &str = "vtb_d";
pub(crate) const VIN: &str = "vtb_in";
const VFB: &str = "vtb_fb";
const EP: &str = "etb_p";
const EN: &str = "etb_n";
const CLOAD: &str = "ctb_load";
const RAIL: &str = "tb_vss";
const CM_NODE: &str = "tb_cm";
const DIFF_NODE: &str = "tb_d";

const RESERVED_ELEMENTS: [&str; 8] = [VDD, VSS, VCM, VDIFF, VIN, VFB, EP, EN];
const RESERVED_NODES: [&str; 3] = [RAIL, CM_NODE, DIFF_NODE];

/// Stimulus applied around the DUT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    /// Differential input `vdiff` around common mode `vcm`.
    OpenLoop { vcm: f64, vdiff: f64 },
    /// Unity-gain follower driven by `vin`.
    Follower { vin: SourceSpec },
}

/// A complete testbench, as netlist and in stamp-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Bench {
    pub circuit: Circuit,
    pub flat: FlatCircuit,
}

pub(crate) fn prepare(circuit: &Circuit, ports: DutPorts) -> Result<Dut, CharacterizeError> {
    let lower = |s: &str| s.to_ascii_lowercase();
    let ports = DutPorts {
        inp: lower(&ports.inp),
        inn: lower(&ports.inn),
        out: lower(&ports.out),
        vdd: lower(&ports.vdd),
        gnd: lower(&ports.gnd),
        ..ports
    };
    if !(ports.supply > 0.0 && ports.supply.is_finite()) {
        return Err(CharacterizeError::Port(format!("supply must be positive, got {}", ports.supply)));
    }
    if !(ports.load_cap >= 0.0 && ports.load_cap.is_finite()) {
        return Err(CharacterizeError::Port(format!("load capacitance must be >= 0, got {}", ports.load_cap)));
    }
    let names = [
        ("non-inverting input", &ports.inp),
        ("inverting input", &ports.inn),
        ("output", &ports.out),
        ("positive supply", &ports.vdd),
        ("ground", &ports.gnd),
    ];
    for (i, (what, node)) in names.iter().enumerate() {
        if !circuit.has_node(node) {
            return Err(CharacterizeError::Port(format!("{what} node `{node}` does not exist in the netlist")));
        }
        if names[..i].iter().any(|(_, other)| other == node) {
            return Err(CharacterizeError::Port(format!("node `{node}` is assigned to more than one port")));
        }
    }
    for e in &circuit.elements {
        if RESERVED_ELEMENTS.contains(&e.name.as_str()) || e.name == CLOAD {
            return Err(CharacterizeError::Port(format!("element name `{}` is reserved by the testbench", e.name)));
        }
        if let Some(n) = e.nodes().into_iter().find(|n| RESERVED_NODES.contains(n)) {
            return Err(CharacterizeError::Port(format!("node name `{n}` is reserved by the testbench")));
        }
    }

    let driven = [&ports.inp, &ports.inn, &ports.vdd];
    let is_driven = |n: &String| driven.contains(&n);
    let is_rail = |n: &String| n == GROUND || n == &ports.gnd;
    // Nodes touched only by voltage sources carry stimulus, not circuit.
    let stimulus_only = |node: &String| {
        circuit
            .elements
            .iter()
            .filter(|e| e.nodes().contains(&node.as_str()))
            .all(|e| matches!(e.kind, ElementKind::VoltageSource { .. }))
    };
    let mut dut = Circuit { title: circuit.title.clone(), models: circuit.models.clone(), ..Default::default() };
    for e in &circuit.elements {
        let strip = match &e.kind {
            ElementKind::VoltageSource { pos, neg, .. } => {
                let feeds = |port: &String, other: &String| {
                    is_driven(port) && (is_rail(other) || is_driven(other) || stimulus_only(other))
                };
                feeds(pos, neg)
                    || feeds(neg, pos)
                    || (ports.gnd != GROUND
                        && ((pos == &ports.gnd && neg == GROUND) || (neg == &ports.gnd && pos == GROUND)))
            }
            ElementKind::Capacitor { a, b, .. } => {
                (a == &ports.out && b == &ports.gnd) || (b == &ports.out && a == &ports.gnd)
            }
            _ => false,
        };
        if !strip {
            dut.elements.push(e.clone());
        }
    }
    Ok(Dut { circuit: dut, ports })
}

fn vsrc(name: &str, pos: &str, neg: &str, source: SourceSpec) -> Element {
    Element { name: name.into(), kind: ElementKind::VoltageSource { pos: pos.into(), neg: neg.into(), source } }
}

fn vcvs(name: &str, pos: &str, neg: &str, cpos: &str, cneg: &str, gain: f64) -> Element {
    Element {
        name: name.into(),
        kind: ElementKind::Vcvs {
            pos: pos.into(),
            neg: neg.into(),
            cpos: cpos.into(),
            cneg: cneg.into(),
            gain,
            limit: None::<Limit>,
        },
    }
}

impl Bench {
    pub fn new(dut: &Dut, drive: Drive) -> Result<Self, CharacterizeError> {
        let p = &dut.ports;
        let mut c = dut.circuit.clone();
        c.title = format!("{} [testbench]", c.title);
        let rail = if p.gnd == GROUND {
            for e in &mut c.elements {
                for n in e.nodes_mut() {
                    if n == GROUND {
                        *n = RAIL.into();
                    }
                }
            }
            RAIL
        } else {
            p.gnd.as_str()
        };
        let node = |n: &String| if n == GROUND { RAIL.to_string() } else { n.clone() };
        let (inp, inn, out, vdd) = (node(&p.inp), node(&p.inn), node(&p.out), node(&p.vdd));

        c.elements.push(vsrc(VDD, &vdd, GROUND, SourceSpec::dc(p.supply)));
        c.elements.push(vsrc(VSS, rail, GROUND, SourceSpec::dc(0.0)));
        if p.load_cap > 0.0 {
            c.elements.push(Element {
                name: CLOAD.into(),
                kind: ElementKind::Capacitor { a: out.clone(), b: GROUND.into(), farads: p.load_cap },
            });
        }
        match drive {
            Drive::OpenLoop { vcm, vdiff } => {
                c.elements.push(vsrc(VCM, CM_NODE, GROUND, SourceSpec::dc(vcm)));
                c.elements.push(vsrc(VDIFF, DIFF_NODE, GROUND, SourceSpec::dc(vdiff)));
                c.elements.push(vcvs(EP, &inp, CM_NODE, DIFF_NODE, GROUND, 0.5));
                c.elements.push(vcvs(EN, &inn, CM_NODE, DIFF_NODE, GROUND, -0.5));
            }
            Drive::Follower { vin } => {
                c.elements.push(vsrc(VIN, &inp, GROUND, vin));
                c.elements.push(vsrc(VFB, &out, &inn, SourceSpec::dc(0.0)));
            }
        }
        let flat = elaborate(&c)?;
        Ok(Self { circuit: c, flat })
    }

    pub(crate) fn out_node(dut: &Dut) -> &str {
        let out = dut.ports.out.as_str();
        if out == GROUND {
            RAIL
        } else {
            out
        }
    }

    pub(crate) fn out_trace(dut: &Dut) -> String {
        format!("v({})", Self::out_node(dut))
    }
}

/// Follower input: one pulse from `lo` to `hi` and back.
pub(crate) fn step_input(lo: f64, hi: f64, delay: f64, edge: f64, hold: f64) -> SourceSpec {
    SourceSpec {
        dc: lo,
        ac: None,
        pulse: Some(Pulse { v1: lo, v2: hi, delay, rise: edge, fall: edge, width: hold }),
    }
}
