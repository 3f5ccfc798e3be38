//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use otasim::characterize::*;
use otasim::device::{drain_current, ModelCard, Polarity, ThermalEnv};
use otasim::engine::*;
use otasim::netlist::*;
use otasim::ota::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn flat(text: &str) -> FlatCircuit {
    elaborate(&parse(text).unwrap()).unwrap()
}

fn env() -> ThermalEnv<f64> {
    ThermalEnv::room()
}

fn set_source(c: &mut Circuit, name: &str, v: f64) {
    for e in &mut c.elements {
        if e.name == name {
            if let ElementKind::VoltageSource { source, .. } = &mut e.kind {
                source.dc = v;
            }
        }
    }
}

fn criterion_1() -> Outcome {
    let ib = 1e-6;
    let mut worst = 0.0f64;
    for a in [0.0, 0.25, 0.5, 0.75] {
        let mut c = build_adaptive_ota_circuit(&OtaTemplateParams::default().with_bias(a, 1.0, ib)).unwrap();
        for (vinp, vinn) in [(0.3, 0.9), (0.9, 0.3)] {
            set_source(&mut c, "vinp", vinp);
            set_source(&mut c, "vinn", vinn);
            let op = dc_operating_point(&elaborate(&c).unwrap(), &SolverOptions::default()).map_err(|e| e.to_string())?;
            let tail = op.device("m1").unwrap().id.abs() + op.device("m2").unwrap().id.abs();
            let want = total_tail_current(a, ib).unwrap();
            let err = (tail / want - 1.0).abs();
            worst = worst.max(err);
            check(err < 0.10, format!("A={a} inputs ({vinp}, {vinn}): tail {tail:.4e} vs {want:.4e}"))?;
        }
    }
    Ok(format!("worst relative tail error {:.2}%", 100.0 * worst))
}

fn criterion_2() -> Outcome {
    // Deep weak inversion: 1 nA bias, wide pair, no channel-length modulation,
    // output held at the common mode so the output current is read directly.
    let ib = 1e-9;
    let vcm = 0.8;
    let opts = SolverOptions::default();
    let mut worst = 0.0f64;
    for a in [0.0, 0.5, 0.9] {
        let mut t = OtaTemplateParams::default().with_bias(a, 1.0, ib);
        t.nmos_card.lambda = 0.0;
        t.pmos_card.lambda = 0.0;
        t.pair = Geometry::new(2000e-6, 2e-6);
        t.vcm = vcm;
        let mut c = build_adaptive_ota_circuit(&t).unwrap();
        c.elements.retain(|e| e.name != "cload");
        c.elements.push(Element {
            name: "vout".into(),
            kind: ElementKind::VoltageSource { pos: "out".into(), neg: GROUND.into(), source: SourceSpec::dc(vcm) },
        });
        // Slope factor of the PMOS input pair.
        let p = AdaptiveBiasParams::new(a, 1.0, ib, t.pmos_card.n, env()).unwrap();
        let mut seed: Option<Vec<f64>> = None;
        for k in -40..=40 {
            let x = 0.1 * k as f64;
            let vin = x * p.n_vt();
            set_source(&mut c, "vinp", vcm + vin / 2.0);
            set_source(&mut c, "vinn", vcm - vin / 2.0);
            let fc = elaborate(&c).unwrap();
            let op = match &seed {
                Some(s) => dc_operating_point_from(&fc, s, &opts),
                None => dc_operating_point(&fc, &opts),
            }
            .map_err(|e| format!("A={a} x={x}: {e}"))?;
            seed = Some(op.solution().to_vec());
            let sim = op.branch_current("vout").unwrap() / (p.b * ib);
            let ana = output_current(vin, &p).unwrap() / (p.b * ib);
            worst = worst.max((sim - ana).abs());
            check((sim - ana).abs() < 0.05, format!("A={a} x={x}: simulated {sim:.4} vs closed form {ana:.4}"))?;
        }
    }
    Ok(format!("worst absolute error {worst:.4} b*I_BIAS"))
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for b in [0.5, 1.0, 2.0] {
        let p = AdaptiveBiasParams::new(0.0, b, 1e-6, 1.5, env()).unwrap();
        for k in 0..20 {
            let x = -9.5 + k as f64;
            let vin = x * p.n_vt();
            let want = b * p.ibias * (vin / (2.0 * p.n_vt())).tanh();
            let got = output_current(vin, &p).unwrap();
            let err = ((got - want) / want).abs();
            worst = worst.max(err);
            check(err <= 1e-9, format!("b={b} x={x}: {got:e} vs {want:e}"))?;
        }
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for a in [0.0, 0.5, 0.9] {
        let p = AdaptiveBiasParams::new(a, 1.0, 1e-6, 1.5, env()).unwrap();
        let h = 1e-7 * p.n_vt();
        let gm = (output_current(h, &p).unwrap() - output_current(-h, &p).unwrap()) / (2.0 * h);
        let want = p.b * p.ibias / (2.0 * p.n_vt());
        let err = (gm / want - 1.0).abs();
        worst = worst.max(err);
        check(err <= 1e-6, format!("A={a}: {gm:e} vs {want:e}"))?;
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let opts = CharacterizeOptions::default();
    let measure = |a: f64| -> Result<(StepMetrics, f64), String> {
        let t = OtaTemplateParams::default().with_bias(a, 1.0, 1e-6);
        let c = build_adaptive_ota_circuit(&t).unwrap();
        let dut = Dut::new(&c, DutPorts::standard(t.supply, t.load_cap)).map_err(|e| e.to_string())?;
        let (_, offset) = dc_transfer_offset(&dut, &opts).map_err(|e| e.to_string())?;
        let step = step_metrics(&dut, &opts).map_err(|e| e.to_string())?;
        let rej = rejection_and_power(&dut, offset, &opts).map_err(|e| e.to_string())?;
        Ok((step, rej.power_w))
    };
    let (s0, p0) = measure(0.0)?;
    let (s1, p1) = measure(0.75)?;
    let need = 0.8 / (1.0 - 0.75);
    let (rise, fall) = (s1.slew_rise / s0.slew_rise, s1.slew_fall / s0.slew_fall);
    check(rise >= need, format!("rise slew ratio {rise:.3} < {need}"))?;
    check(fall >= need, format!("fall slew ratio {fall:.3} < {need}"))?;
    let dp = (p1 / p0 - 1.0).abs();
    check(dp < 0.10, format!("quiescent power changed by {:.1}%", 100.0 * dp))?;
    Ok(format!("slew ratio rise {rise:.2} fall {fall:.2}, power change {:.2}%", 100.0 * dp))
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_6() -> Outcome {
    let e = env();
    let vt = e.thermal_voltage();
    let h = 1e-6;
    let mut checked = 0;
    for pol in [Polarity::Nmos, Polarity::Pmos] {
        let s = if pol == Polarity::Nmos { 1.0 } else { -1.0 };
        let mut card = ModelCard::default_for(pol);
        card.lambda = 0.02;
        let p = card.with_geometry(10e-6, 1e-6).unwrap();
        let id = |vg: f64, vs: f64, vd: f64| drain_current(&p, vg, vs, vd, &e).unwrap().id;
        for k in 0..=23 {
            let vg = s * (0.2 + 0.1 * k as f64);
            for (vs, vd) in [(0.0, 0.05), (0.0, 0.3), (0.0, 1.5), (0.2, 2.0), (0.4, 0.1)] {
                let (vs, vd) = (s * vs, s * vd);
                let ev = drain_current(&p, vg, vs, vd, &e).unwrap();
                let floor = 1e-15 * ev.id.abs().max(1e-30) / h;
                let fds = [
                    (ev.gm, (id(vg + h, vs, vd) - id(vg - h, vs, vd)) / (2.0 * h)),
                    (ev.gms, -(id(vg, vs + h, vd) - id(vg, vs - h, vd)) / (2.0 * h)),
                    (ev.gds, (id(vg, vs, vd + h) - id(vg, vs, vd - h)) / (2.0 * h)),
                ];
                for (an, fd) in fds {
                    check((fd - an).abs() <= 1e-4 * an.abs().max(floor / 1e-4), format!("gradient at vg={vg} vs={vs} vd={vd}: {an:e} vs {fd:e}"))?;
                    checked += 1;
                }
            }
        }
    }

    let mut card = ModelCard::default_nmos();
    card.lambda = 0.0;
    let p = card.with_geometry(10e-6, 1e-6).unwrap();
    let ideal = p.n * vt * 10f64.ln();
    for k in 0..20 {
        let u = -8.0 - 0.5 * k as f64;
        let ev = drain_current(&p, p.vt0 + p.n * u * vt, 0.0, 0.5, &e).unwrap();
        let swing = 10f64.ln() / (ev.gm / ev.id);
        check((swing / ideal - 1.0).abs() < 0.01, format!("decade slope at vp-vs={u} V_T: {swing}"))?;
    }

    let plateau = 1.0 / (p.n * vt);
    let ev = drain_current(&p, p.vt0 - 10.0 * p.n * vt, 0.0, 1.0, &e).unwrap();
    let r = ev.gm / ev.id / plateau;
    check((r - 1.0).abs() < 0.02, format!("gm/id plateau ratio {r}"))?;

    let nvt = 1.5 * vt;
    let mut worst = 0.0f64;
    for x in [-4.0, -2.0, 1.0, 3.0] {
        let vin = x * nvt;
        let text = format!(
            "pair\nM1 d1 g1 s nch W=10000u L=1u\nM2 d2 g2 s nch W=10000u L=1u\nIt s 0 1n\nV1 g1 0 {}\nV2 g2 0 {}\nVd1 d1 0 1\nVd2 d2 0 1\n.model nch NMOS (lambda=0.02)\n",
            0.5 + vin / 2.0,
            0.5 - vin / 2.0
        );
        let op = dc_operating_point(&flat(&text), &SolverOptions::default()).map_err(|e| e.to_string())?;
        let ratio = op.device("m1").unwrap().id / op.device("m2").unwrap().id;
        let err = (ratio / x.exp() - 1.0).abs();
        worst = worst.max(err);
        check(err < 0.01, format!("pair ratio at x={x}: {ratio} vs {}", x.exp()))?;
    }
    // Same law with the shared source solved outside the engine.
    let pw = card.with_geometry(10000e-6, 1e-6).unwrap();
    let idw = |vg: f64, vs: f64| drain_current(&pw, vg, vs, 1.0, &e).unwrap().id;
    let x: f64 = 2.5;
    let (g1, g2) = (0.5 + x * nvt / 2.0, 0.5 - x * nvt / 2.0);
    let vs = bisect(-1.0, 1.0, |vs| 1e-9 - idw(g1, vs) - idw(g2, vs));
    let ratio = idw(g1, vs) / idw(g2, vs);
    check((ratio / x.exp() - 1.0).abs() < 0.01, format!("isolated pair ratio {ratio}"))?;

    Ok(format!("{checked} gradients, worst pair-ratio error {:.2}%", 100.0 * worst))
}

fn criterion_7() -> Outcome {
    let (r, c) = (1e3, 1e-6);
    let tau = r * c;
    let opts = SolverOptions::default();
    let kcl = |norms: &[f64], bounds: &[f64]| norms.iter().zip(bounds).all(|(n, b)| n <= b);
    let step_error = |h: f64| -> Result<f64, String> {
        let fc = flat(&format!("rc\nV1 in 0 DC 0 PULSE(0 1 0 1p 1p 1)\nR1 in out {r}\nC1 out 0 {c}\n"));
        let tr = transient(&fc, h, 5.0 * tau, &opts).map_err(|e| e.to_string())?;
        check(kcl(&tr.residual_norms, &tr.residual_bounds), "transient solution failed the KCL test")?;
        let v = tr.voltage("out").unwrap();
        Ok(tr.times.iter().zip(&v).skip(1).map(|(t, v)| (v - (1.0 - (-t / tau).exp())).abs()).fold(0.0, f64::max))
    };
    let coarse = step_error(tau / 100.0)?;
    let fine = step_error(tau / 200.0)?;
    check(coarse < 0.01, format!("RC error {coarse:.3e} of final value"))?;
    check(coarse / fine >= 3.5, format!("error reduction {:.2}", coarse / fine))?;

    let fp = 1.0 / (2.0 * PI * tau);
    let fc = flat(&format!("rc\nV1 in 0 DC 0 AC 1\nR1 in out {r}\nC1 out 0 {c}\n"));
    let op = dc_operating_point(&fc, &opts).map_err(|e| e.to_string())?;
    check(op.residual_norm <= op.residual_bound, "operating point failed the KCL test")?;
    let ac = ac_analysis(&fc, &op, fp, 10.0 * fp, 1, &opts).map_err(|e| e.to_string())?;
    let z = ac.voltage("out").unwrap()[0];
    let (db, ph) = (20.0 * z.norm().log10(), z.arg().to_degrees());
    check((db + 3.01).abs() <= 0.05 && (ph + 45.0).abs() <= 0.05, format!("pole at {db:.4} dB, {ph:.4} deg"))?;

    // Nonlinear circuit, every sweep point checked.
    let fc = flat("mirror\n.model nch NMOS\n.model pch PMOS\nVdd vdd 0 2\nIb 0 b 1u\nM1 b b 0 nch W=10u L=1u\nM2 o b 0 nch W=20u L=1u\nM3 o o vdd pch W=10u L=1u\nM4 x o vdd pch W=10u L=1u\nR1 x 0 100k\n");
    let mut seed = None::<Vec<f64>>;
    for k in 0..=20 {
        let mut fc = fc.clone();
        fc.source_mut("vdd").unwrap().dc = 1.0 + 0.1 * k as f64;
        let op = match &seed {
            Some(s) => dc_operating_point_from(&fc, s, &opts),
            None => dc_operating_point(&fc, &opts),
        }
        .map_err(|e| e.to_string())?;
        check(op.residual_norm <= op.residual_bound, format!("vdd={}: residual {:e}", 1.0 + 0.1 * k as f64, op.residual_norm))?;
        seed = Some(op.solution().to_vec());
    }
    Ok(format!("RC error {coarse:.2e}, reduction {:.2}x, pole {db:.3} dB / {ph:.3} deg", coarse / fine))
}

fn criterion_8() -> Outcome {
    let mut worst = 0.0f64;
    for ka in 0..=10 {
        let a = 0.1 * ka as f64;
        let p = AdaptiveBiasParams::new(a, 1.0, 1e-6, 1.5, env()).unwrap();
        for kx in -40..=40 {
            let vin = 0.25 * kx as f64 * p.n_vt();
            let pc = pair_currents(vin, &p).unwrap();
            // i1 + i2 - A|i1 - i2| written without the cancellation at A = 1.
            let (hi, lo) = (pc.i1.max(pc.i2), pc.i1.min(pc.i2));
            let lhs = (1.0 - a) * hi + (1.0 + a) * lo;
            let err = (lhs / p.ibias - 1.0).abs();
            worst = worst.max(err);
            check(err <= 1e-12, format!("A={a} vin={vin}: {lhs:e}"))?;
        }
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

fn criterion_9() -> Outcome {
    let rows = [
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
    check(CharacterizationReport::FIELDS == rows, "report fields differ from the metric rows")?;
    let t = OtaTemplateParams::default().with_bias(0.5, 1.0, 1e-6);
    let c = build_adaptive_ota_circuit(&t).unwrap();
    let dut = Dut::new(&c, DutPorts::standard(t.supply, t.load_cap)).map_err(|e| e.to_string())?;
    let r = full_report(&dut, &CharacterizeOptions::default()).map_err(|e| e.to_string())?;
    check(r.is_complete(), format!("incomplete report\n{}", r.to_text_table()))?;
    check(r.values().iter().all(|v| v.is_finite()), "non-finite value")?;
    check(r.icmr.lo < r.icmr.hi && r.output_swing.lo < r.output_swing.hi, "empty interval")?;
    let json = r.to_json();
    for f in rows {
        check(json.get(f).is_some(), format!("JSON lacks {f}"))?;
    }
    Ok(format!("gain {:.1} dB, UGB {:.3e} Hz, PM {:.1} deg", r.dc_gain_db, r.ugb_hz, r.phase_margin_deg))
}

fn criterion_10() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    runner
        .run(&common::circuit(), |c| {
            let back = parse(&c.to_string()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if back == c {
                Ok(())
            } else {
                Err(TestCaseError::fail(format!("round trip changed\n{c}")))
            }
        })
        .map_err(|e| e.to_string())?;

    let table = [("f", 1e-15), ("p", 1e-12), ("n", 1e-9), ("u", 1e-6), ("m", 1e-3), ("", 1.0), ("k", 1e3), ("meg", 1e6), ("g", 1e9)];
    for (s, scale) in table {
        for sfx in [s.to_string(), s.to_ascii_uppercase()] {
            for m in [1.0, 2.5, -4.7, 1e2] {
                let got = parse_value(&format!("{m}{sfx}")).map_err(|e| e.to_string())?;
                check((got - m * scale).abs() <= 1e-15 * (m * scale).abs(), format!("{m}{sfx} -> {got:e}"))?;
            }
        }
    }
    for bad in ["", "x", "1x", "1..2", "k", "1e", "--1"] {
        check(parse_value(bad).is_err(), format!("accepted {bad:?}"))?;
    }

    let malformed = [
        ("t\nR1 a 0 1k\nR2 a 0 5x", 3, 8),
        ("t\nQ1 a b c", 2, 1),
        ("t\nR1 a 0 1k\nr1 a 0 2k", 3, 1),
        ("t\nM1 d g 0 nch W=1u L=1u", 2, 10),
        ("t\nV1 a 0 1\nR1 a 0 1\n.dc V9 0 1 0.1", 4, 5),
    ];
    for (text, line, column) in malformed {
        let e = parse(text).err().ok_or(format!("accepted {text:?}"))?;
        check((e.line, e.column) == (line, column), format!("{text:?}: {e}"))?;
    }
    Ok("256 round trips, all suffixes, positioned errors".into())
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n}: PASS ({msg}) [{secs:.2} s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n}: FAIL ({msg}) [{secs:.2} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
