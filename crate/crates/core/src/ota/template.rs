//! Transistor-level netlist generators for the basic OTA and the
//! adaptive-bias opamp.
//!
//! Node names: `vdd`, `0`, `inp`, `inn`, `out`, `tail`, `nb` (bias diode),
//! `n1`/`n2` (first-stage NMOS diodes carrying `I1`/`I2`), `p1` (output PMOS
//! mirror), `s1p`/`s1x` and `s2p`/`s2x` (subtractors).
//!
//! `M1` (gate `inn`) carries `I1` and `M2` (gate `inp`) carries `I2`, so the
//! output current `b (I1 - I2)` is positive for `v(inp) > v(inn)`.
//! Subtractor 1 computes `a max(I1 - I2, 0)` with devices `M11`–`M18`;
//! subtractor 2 computes `a max(I2 - I1, 0)` with `M21`–`M28`. Both inject
//! into `tail` next to the constant tail mirror `M9`.

use serde::Serialize;

use super::{AdaptiveBiasParams, OtaError};
use crate::device::{ModelCard, Polarity, ThermalEnv};
use crate::netlist::{AnalysisDirective, Circuit, Element, ElementKind, SourceSpec, GROUND};

/// Largest unit-device multiplicity used to realize a mirror ratio.
pub const MAX_MULTIPLICITY: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Geometry {
    pub w: f64,
    pub l: f64,
}

impl Geometry {
    pub const fn new(w: f64, l: f64) -> Self {
        Self { w, l }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OtaTemplateParams {
    pub bias: AdaptiveBiasParams<f64>,
    pub supply: f64,
    /// Input common mode of the emitted testbench, V.
    pub vcm: f64,
    pub load_cap: f64,
    pub nmos_model: String,
    pub pmos_model: String,
    pub nmos_card: ModelCard<f64>,
    pub pmos_card: ModelCard<f64>,
    /// Input pair `M1`, `M2`.
    pub pair: Geometry,
    /// Bias diode `MB` and tail mirror `M9`.
    pub tail: Geometry,
    /// Unit NMOS of every NMOS mirror.
    pub nmos_unit: Geometry,
    /// Unit PMOS of every PMOS mirror except the tail.
    pub pmos_unit: Geometry,
    /// Emit supply, input sources, load capacitor and `.op`.
    pub testbench: bool,
}

impl Default for OtaTemplateParams {
    fn default() -> Self {
        Self {
            bias: AdaptiveBiasParams { a: 0.5, b: 1.0, ibias: 1e-6, n: 1.5, env: ThermalEnv::room() },
            supply: 2.0,
            vcm: 1.0,
            load_cap: 5e-12,
            nmos_model: "nch".into(),
            pmos_model: "pch".into(),
            nmos_card: ModelCard::default_nmos(),
            pmos_card: ModelCard::default_pmos(),
            pair: Geometry::new(200e-6, 2e-6),
            tail: Geometry::new(20e-6, 2e-6),
            nmos_unit: Geometry::new(10e-6, 2e-6),
            pmos_unit: Geometry::new(20e-6, 2e-6),
            testbench: true,
        }
    }
}

impl OtaTemplateParams {
    pub fn with_bias(mut self, a: f64, b: f64, ibias: f64) -> Self {
        self.bias.a = a;
        self.bias.b = b;
        self.bias.ibias = ibias;
        self
    }

    fn validate(&self) -> Result<(), OtaError> {
        self.bias.validate()?;
        let bad = |what: &str, v: f64| Err(OtaError::Template(format!("{what} must be positive and finite, got {v}")));
        for (what, v) in [("supply", self.supply), ("load capacitance", self.load_cap)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(what, v);
            }
        }
        if !(self.vcm.is_finite() && self.vcm >= 0.0 && self.vcm <= self.supply) {
            return Err(OtaError::Template(format!("common mode {} outside the supply range", self.vcm)));
        }
        for (what, g) in [("pair", self.pair), ("tail", self.tail), ("NMOS unit", self.nmos_unit), ("PMOS unit", self.pmos_unit)] {
            if !(g.w > 0.0 && g.l > 0.0 && g.w.is_finite() && g.l.is_finite()) {
                return Err(OtaError::Template(format!("{what} geometry must be positive, got W={} L={}", g.w, g.l)));
            }
        }
        if self.nmos_card.polarity != Polarity::Nmos || self.pmos_card.polarity != Polarity::Pmos {
            return Err(OtaError::Template("model cards have the wrong polarity".into()));
        }
        self.nmos_card.validate().map_err(|e| OtaError::Template(e.to_string()))?;
        self.pmos_card.validate().map_err(|e| OtaError::Template(e.to_string()))?;
        if self.nmos_model.eq_ignore_ascii_case(&self.pmos_model) {
            return Err(OtaError::Template("NMOS and PMOS model names must differ".into()));
        }
        Ok(())
    }
}

/// Smallest `(p, q)` with `p / q == ratio`, both at most
/// [`MAX_MULTIPLICITY`].
pub fn realize_ratio(what: &'static str, ratio: f64) -> Result<(u32, u32), OtaError> {
    if ratio > 0.0 && ratio.is_finite() {
        for q in 1..=MAX_MULTIPLICITY {
            let p = (ratio * q as f64).round();
            if p >= 1.0 && p <= MAX_MULTIPLICITY as f64 && (p / q as f64 - ratio).abs() <= 1e-9 * ratio {
                return Ok((p as u32, q));
            }
        }
    }
    Err(OtaError::Ratio { what, value: ratio })
}

struct Builder<'a> {
    t: &'a OtaTemplateParams,
    c: Circuit,
}

impl Builder<'_> {
    fn mos(&mut self, name: &str, d: &str, g: &str, s: &str, pol: Polarity, geom: Geometry, mult: u32) {
        let model = match pol {
            Polarity::Nmos => self.t.nmos_model.clone(),
            Polarity::Pmos => self.t.pmos_model.clone(),
        };
        self.c.elements.push(Element {
            name: name.into(),
            kind: ElementKind::Mosfet {
                drain: d.into(),
                gate: g.into(),
                source: s.into(),
                model,
                w: geom.w * mult as f64,
                l: geom.l,
            },
        });
    }

    fn vsource(&mut self, name: &str, p: &str, n: &str, v: f64) {
        self.c.elements.push(Element {
            name: name.into(),
            kind: ElementKind::VoltageSource { pos: p.into(), neg: n.into(), source: SourceSpec::dc(v) },
        });
    }
}

fn core(t: &OtaTemplateParams, title: String) -> Result<(Builder<'_>, u32), OtaError> {
    t.validate()?;
    let (pb, qb) = realize_ratio("b", t.bias.b)?;
    let mut c = Circuit { title, ..Default::default() };
    c.models.insert(t.nmos_model.to_ascii_lowercase(), t.nmos_card);
    c.models.insert(t.pmos_model.to_ascii_lowercase(), t.pmos_card);
    let mut bld = Builder { t, c };
    let (n, p) = (Polarity::Nmos, Polarity::Pmos);
    let (nu, pu) = (t.nmos_unit, t.pmos_unit);

    bld.c.elements.push(Element {
        name: "ibias".into(),
        kind: ElementKind::CurrentSource { pos: "nb".into(), neg: GROUND.into(), source: SourceSpec::dc(t.bias.ibias) },
    });
    bld.mos("mb", "nb", "nb", "vdd", p, t.tail, 1);
    bld.mos("m9", "tail", "nb", "vdd", p, t.tail, 1);
    bld.mos("m1", "n1", "inn", "tail", p, t.pair, 1);
    bld.mos("m2", "n2", "inp", "tail", p, t.pair, 1);
    bld.mos("m3", "n1", "n1", GROUND, n, nu, qb);
    bld.mos("m4", "n2", "n2", GROUND, n, nu, qb);
    bld.mos("m5", "p1", "n1", GROUND, n, nu, pb);
    bld.mos("m6", "out", "n2", GROUND, n, nu, pb);
    bld.mos("m7", "p1", "p1", "vdd", p, pu, pb);
    bld.mos("m8", "out", "p1", "vdd", p, pu, pb);
    Ok((bld, qb))
}

fn finish(mut bld: Builder<'_>) -> Circuit {
    let t = bld.t;
    if t.testbench {
        bld.vsource("vdd", "vdd", GROUND, t.supply);
        bld.vsource("vinp", "inp", GROUND, t.vcm);
        bld.vsource("vinn", "inn", GROUND, t.vcm);
        bld.c.elements.push(Element {
            name: "cload".into(),
            kind: ElementKind::Capacitor { a: "out".into(), b: GROUND.into(), farads: t.load_cap },
        });
        bld.c.directives.push(AnalysisDirective::Op);
    }
    bld.c
}

/// Basic OTA: PMOS pair, NMOS diode loads, output mirrors of ratio `b`,
/// tail current `ibias` mirrored from a bias diode.
pub fn build_basic_ota_circuit(t: &OtaTemplateParams) -> Result<Circuit, OtaError> {
    let title = format!("basic OTA b={} ibias={:e}", t.bias.b, t.bias.ibias);
    let (bld, _) = core(t, title)?;
    Ok(finish(bld))
}

/// Basic OTA plus two current subtractors feeding `a |I1 - I2|` back into
/// the tail. With `a = 0` the subtractor sensing devices are kept but the
/// injectors are omitted.
pub fn build_adaptive_ota_circuit(t: &OtaTemplateParams) -> Result<Circuit, OtaError> {
    if t.bias.a >= 1.0 {
        return Err(OtaError::Domain(format!("adaptive OTA requires A < 1, got A = {}", t.bias.a)));
    }
    let title = format!("adaptive-bias OTA a={} b={} ibias={:e}", t.bias.a, t.bias.b, t.bias.ibias);
    let (mut bld, qb) = core(t, title)?;
    let inject = if t.bias.a > 0.0 { Some(realize_ratio("A", t.bias.a)?) } else { None };
    let (n, p) = (Polarity::Nmos, Polarity::Pmos);
    let (nu, pu) = (t.nmos_unit, t.pmos_unit);

    // (prefix, node of the subtracted current, node of the sensed current)
    for (k, minus, plus) in [(1, "n2", "n1"), (2, "n1", "n2")] {
        let px = format!("s{k}p");
        let x = format!("s{k}x");
        let m = |i: u32| format!("m{k}{i}");
        // copy of the sensed current sinks from x
        bld.mos(&m(1), &x, plus, GROUND, n, nu, qb);
        // copy of the subtracted current, turned around and sourced into x
        bld.mos(&m(2), &px, minus, GROUND, n, nu, qb);
        bld.mos(&m(3), &px, &px, "vdd", p, pu, 1);
        bld.mos(&m(4), &x, &px, "vdd", p, pu, 1);
        // the positive difference flows in the diode; it cannot go negative
        let (pa, qa) = inject.unwrap_or((0, 1));
        bld.mos(&m(6), &x, &x, "vdd", p, pu, qa);
        if pa > 0 {
            bld.mos(&m(8), "tail", &x, "vdd", p, pu, pa);
        }
    }
    Ok(finish(bld))
}

/// Netlist text of [`build_basic_ota_circuit`].
pub fn build_basic_ota(t: &OtaTemplateParams) -> Result<String, OtaError> {
    build_basic_ota_circuit(t).map(|c| c.to_string())
}

/// Netlist text of [`build_adaptive_ota_circuit`].
pub fn build_adaptive_ota(t: &OtaTemplateParams) -> Result<String, OtaError> {
    build_adaptive_ota_circuit(t).map(|c| c.to_string())
}
