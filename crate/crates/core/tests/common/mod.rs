//! Random valid netlists shared by the parser tests.

use otasim::device::{ModelCard, Polarity};
use otasim::netlist::*;
use proptest::prelude::*;

const NODES: [&str; 6] = ["0", "a", "b", "n1", "out", "vdd"];

fn node() -> impl Strategy<Value = String> {
    prop::sample::select(&NODES[..]).prop_map(String::from)
}

/// Positive values spread over the suffix range.
fn positive() -> impl Strategy<Value = f64> {
    (1.0f64..10.0, -15i32..10).prop_map(|(m, e)| m * 10f64.powi(e))
}

fn signed() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), positive(), positive().prop_map(|v| -v)]
}

fn source() -> impl Strategy<Value = SourceSpec> {
    let ac = prop::option::of((positive(), -180.0f64..180.0).prop_map(|(magnitude, phase)| AcSpec { magnitude, phase }));
    let pulse = prop::option::of((signed(), signed(), 0.0f64..1e-3, positive(), positive(), 0.0f64..1e-3).prop_map(
        |(v1, v2, delay, rise, fall, width)| Pulse { v1, v2, delay, rise, fall, width },
    ));
    (signed(), ac, pulse).prop_map(|(dc, ac, pulse)| SourceSpec { dc, ac, pulse })
}

fn limit() -> impl Strategy<Value = Option<Limit>> {
    prop::option::of((signed(), positive()).prop_map(|(lo, span)| Limit { lo, hi: lo + span.max(lo.abs()) }))
}

fn kind(models: Vec<String>) -> impl Strategy<Value = ElementKind> {
    let mos = if models.is_empty() {
        Just(None).boxed()
    } else {
        (node(), node(), node(), prop::sample::select(models), positive(), positive())
            .prop_map(|(drain, gate, source, model, w, l)| Some(ElementKind::Mosfet { drain, gate, source, model, w, l }))
            .boxed()
    };
    prop_oneof![
        (node(), node(), positive()).prop_map(|(a, b, ohms)| ElementKind::Resistor { a, b, ohms }),
        (node(), node(), positive()).prop_map(|(a, b, farads)| ElementKind::Capacitor { a, b, farads }),
        (node(), node(), source()).prop_map(|(pos, neg, source)| ElementKind::VoltageSource { pos, neg, source }),
        (node(), node(), source()).prop_map(|(pos, neg, source)| ElementKind::CurrentSource { pos, neg, source }),
        (node(), node(), node(), node(), signed(), limit())
            .prop_map(|(pos, neg, cpos, cneg, gain, limit)| ElementKind::Vcvs { pos, neg, cpos, cneg, gain, limit }),
        (node(), node(), node(), node(), signed(), limit())
            .prop_map(|(pos, neg, cpos, cneg, gm, limit)| ElementKind::Vccs { pos, neg, cpos, cneg, gm, limit }),
    ]
    .prop_flat_map(move |k| mos.clone().prop_map(move |m| m.unwrap_or_else(|| k.clone())))
}

fn card() -> impl Strategy<Value = ModelCard<f64>> {
    (any::<bool>(), signed(), 1.0f64..3.0, positive(), 0.0f64..0.2).prop_map(|(pmos, vt0, n, kp, lambda)| {
        let mut c = ModelCard::default_for(if pmos { Polarity::Pmos } else { Polarity::Nmos });
        c.vt0 = vt0;
        c.n = n;
        c.kp = kp;
        c.lambda = lambda;
        c
    })
}

pub fn circuit() -> impl Strategy<Value = Circuit> {
    let models = prop::collection::btree_map("[a-z][a-z0-9_]{0,6}", card(), 0..3);
    let title = "[A-Za-z][A-Za-z0-9 _=.-]{0,30}";
    (title, models)
        .prop_flat_map(|(title, models)| {
            let names: Vec<String> = models.keys().cloned().collect();
            let elements = prop::collection::vec(kind(names), 1..12);
            (Just(title), Just(models), elements)
        })
        .prop_flat_map(|(title, models, kinds)| {
            let mut elements: Vec<Element> = kinds
                .into_iter()
                .enumerate()
                .map(|(i, kind)| {
                    let name = format!("{}{i}", Element { name: String::new(), kind: kind.clone() }.letter());
                    Element { name: name.to_ascii_lowercase(), kind }
                })
                .collect();
            // Ground must appear somewhere.
            if !elements.iter().any(|e| e.touches(GROUND)) {
                elements.push(Element { name: "rgnd".into(), kind: ElementKind::Resistor { a: "a".into(), b: GROUND.into(), ohms: 1e3 } });
            }
            let sources: Vec<String> = elements
                .iter()
                .filter(|e| matches!(e.kind, ElementKind::VoltageSource { .. } | ElementKind::CurrentSource { .. }))
                .map(|e| e.name.clone())
                .collect();
            let directives = prop::collection::vec(directive(sources), 0..4);
            (Just(title), Just(models), Just(elements), directives)
        })
        .prop_map(|(title, models, elements, directives)| Circuit { title, elements, models, directives })
}

fn directive(sources: Vec<String>) -> impl Strategy<Value = AnalysisDirective> {
    let dc = if sources.is_empty() {
        Just(AnalysisDirective::Op).boxed()
    } else {
        (prop::sample::select(sources), signed(), positive(), positive())
            .prop_map(|(source, start, span, step)| AnalysisDirective::Dc { source, start, stop: start + span.max(start.abs()), step })
            .boxed()
    };
    prop_oneof![
        Just(AnalysisDirective::Op),
        dc,
        (1usize..50, positive(), 1.5f64..1e4)
            .prop_map(|(points_per_decade, fstart, k)| AnalysisDirective::Ac { points_per_decade, fstart, fstop: fstart * k }),
        (positive(), positive()).prop_map(|(tstep, tstop)| AnalysisDirective::Tran { tstep, tstop }),
    ]
}
