use std::f64::consts::PI;

use otasim::device::{drain_current, ModelCard, Polarity, ThermalEnv};
use otasim::engine::*;
use otasim::netlist::{elaborate, parse, FlatCircuit};
use proptest::prelude::*;

fn flat(text: &str) -> FlatCircuit {
    elaborate(&parse(text).unwrap()).unwrap()
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

const R: f64 = 1e3;
const C: f64 = 1e-6;

fn rc_step_error(h: f64) -> f64 {
    let tau = R * C;
    let fc = flat(&format!("rc\nV1 in 0 DC 0 PULSE(0 1 0 1p 1p 1)\nR1 in out {R}\nC1 out 0 {C}\n"));
    let tr = transient(&fc, h, 5.0 * tau, &opts()).unwrap();
    let v = tr.voltage("out").unwrap();
    tr.times
        .iter()
        .zip(&v)
        .skip(1)
        .map(|(t, v)| (v - (1.0 - (-t / tau).exp())).abs())
        .fold(0.0, f64::max)
}

#[test]
fn rc_step_response() {
    let tau = R * C;
    let coarse = rc_step_error(tau / 100.0);
    let fine = rc_step_error(tau / 200.0);
    assert!(coarse < 0.01, "max error {coarse}");
    assert!(coarse / fine >= 3.5, "error ratio {}", coarse / fine);
}

#[test]
fn rc_low_pass_ac() {
    let fp = 1.0 / (2.0 * PI * R * C);
    let fc = flat(&format!("rc\nV1 in 0 DC 0 AC 1\nR1 in out {R}\nC1 out 0 {C}\n"));
    let op = dc_operating_point(&fc, &opts()).unwrap();
    let db = |z: num_complex::Complex64| 20.0 * z.norm().log10();

    let ac = ac_analysis(&fc, &op, fp, 1e3 * fp, 10, &opts()).unwrap();
    let v = ac.voltage("out").unwrap();
    assert!((ac.frequencies[0] / fp - 1.0).abs() < 1e-12);
    assert!((db(v[0]) + 10.0 * 2f64.log10()).abs() < 0.05, "{}", db(v[0]));
    assert!((v[0].arg().to_degrees() + 45.0).abs() < 0.05);
    // Two decades above the pole.
    let (a, b) = (v[20], v[30]);
    let slope = db(b) - db(a);
    assert!((slope / -20.0 - 1.0).abs() < 0.02, "{slope} dB/dec");

    let ac = ac_analysis(&fc, &op, fp / 1e3, fp / 100.0, 2, &opts()).unwrap();
    assert!(db(ac.voltage("out").unwrap()[0]).abs() < 0.01);
}

#[test]
fn resistive_ac_equals_dc() {
    let fc = flat("div\nV1 in 0 DC 2 AC 1\nR1 in mid 3k\nR2 mid 0 1k\nR3 mid out 10k\nR4 out 0 10k\n");
    let op = dc_operating_point(&fc, &opts()).unwrap();
    let ac = ac_analysis(&fc, &op, 1.0, 1e6, 3, &opts()).unwrap();
    for node in ["in", "mid", "out"] {
        let dc = op.voltage(node).unwrap() / 2.0;
        for z in ac.voltage(node).unwrap() {
            assert!((z.re - dc).abs() < 1e-12 && z.im.abs() < 1e-12, "{node}");
        }
    }
}

#[test]
fn operating_point_satisfies_kcl() {
    let fc = flat("net\nV1 a 0 5\nI1 0 c 2m\nR1 a b 1k\nR2 b 0 2k\nR3 b c 500\nR4 c 0 4k\nR5 a c 3k\n");
    let op = dc_operating_point(&fc, &opts()).unwrap();
    let v = |n: &str| op.voltage(n).unwrap();
    let (a, b, c) = (v("a"), v("b"), v("c"));
    // Current leaving each node.
    let kcl_b = (b - a) / 1e3 + b / 2e3 + (b - c) / 500.0;
    let kcl_c = (c - b) / 500.0 + c / 4e3 + (c - a) / 3e3 - 2e-3;
    assert!(kcl_b.abs() < 1e-12 && kcl_c.abs() < 1e-12, "{kcl_b} {kcl_c}");
    // The source delivers what leaves `a` through the resistors.
    let out_of_a = (a - b) / 1e3 + (a - c) / 3e3;
    assert!((op.branch_current("v1").unwrap() + out_of_a).abs() < 1e-12);
    assert_eq!(a, 5.0);
}

#[test]
fn linear_circuits_take_one_iteration() {
    let fc = flat("div\nV1 in 0 1\nR1 in out 1k\nR2 out 0 1k\n");
    assert_eq!(dc_operating_point(&fc, &opts()).unwrap().iterations, 1);
}

/// Root of increasing `f` on `[lo, hi]`.
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

#[test]
fn diode_connected_nmos() {
    let fc = flat("diode\n.model nch NMOS (vt0=0.45 n=1.4 kp=120u lambda=0.03)\nM1 d d 0 nch W=10u L=1u\nI1 0 d 1u\n");
    let op = dc_operating_point(&fc, &opts()).unwrap();

    let mut card = ModelCard::default_for(Polarity::Nmos);
    (card.vt0, card.n, card.kp, card.lambda) = (0.45, 1.4, 120e-6, 0.03);
    let p = card.with_geometry(10e-6, 1e-6).unwrap();
    let env = ThermalEnv::room();
    let oracle = bisect(0.0, 3.0, |v| drain_current(&p, v, 0.0, v, &env).unwrap().id - 1e-6);
    let got = op.voltage("d").unwrap();
    assert!((got - oracle).abs() < opts().vntol, "{got} vs {oracle}");
}

const PAIR: &str = "pair\n.model nch NMOS (lambda=0)\nM1 d1 g1 s nch W=10000u L=1u\nM2 d2 g2 s nch W=10000u L=1u\nIt s 0 1n\nVcm cm 0 0.5\nVid g1 g2 0\nEh g2 cm g1 g2 -0.5\nVd1 d1 0 1\nVd2 d2 0 1\n";

#[test]
fn differential_pair_sweep_follows_tanh() {
    let fc = flat(PAIR);
    let nvt = 1.5 * ThermalEnv::<f64>::room().thermal_voltage();
    let sw = dc_sweep(&fc, "vid", -0.3, 0.3, 0.01, &opts()).unwrap();
    assert!(sw.failed().is_empty());
    let (i1, i2) = (sw.trace("i(vd1)").unwrap(), sw.trace("i(vd2)").unwrap());
    for (k, vin) in sw.sweep_values.iter().enumerate() {
        let got = (i1[k] - i2[k]) / (i1[k] + i2[k]);
        let want = (vin / (2.0 * nvt)).tanh();
        assert!((got - want).abs() < 0.01, "vin={vin}: {got} vs {want}");
    }
}

#[test]
fn resistor_sweep_slope() {
    let fc = flat("r\nV1 a 0 0\nR1 a 0 2.2k\n");
    let sw = dc_sweep(&fc, "v1", -1.0, 1.0, 0.25, &opts()).unwrap();
    let i = sw.trace("i(v1)").unwrap();
    assert_eq!(i.len(), 9);
    for w in i.windows(2) {
        assert!(((w[0] - w[1]) / 0.25 - 1.0 / 2.2e3).abs() < 1e-15);
    }
    assert!(matches!(dc_sweep(&fc, "v1", 0.0, 1.0, 0.0, &opts()), Err(EngineError::ZeroStep)));
    assert!(matches!(dc_sweep(&fc, "v1", 0.0, 1.0, -0.1, &opts()), Err(EngineError::StepDirection { .. })));
    assert!(matches!(dc_sweep(&fc, "v9", 0.0, 1.0, 0.1, &opts()), Err(EngineError::UnknownSource(_))));
}

#[test]
fn nonlinear_solutions_do_not_depend_on_the_path() {
    let text = "mirror\n.model nch NMOS\n.model pch PMOS\nVdd vdd 0 2\nIb 0 b 1u\nM1 b b 0 nch W=10u L=1u\nM2 o b 0 nch W=20u L=1u\nM3 o o vdd pch W=10u L=1u\nM4 x o vdd pch W=10u L=1u\nR1 x 0 100k\n";
    let fc = flat(text);
    let direct = dc_operating_point(&fc, &opts()).unwrap();
    let again = dc_operating_point(&fc, &opts()).unwrap();
    assert_eq!(direct, again);
    let tol = 10.0 * opts().vntol;
    for seed in [0.0, 2.0, -1.0, 3.0] {
        let from = dc_operating_point_from(&fc, &vec![seed; fc.num_unknowns()], &opts()).unwrap();
        for (a, b) in direct.node_voltages.iter().zip(&from.node_voltages) {
            assert!((a - b).abs() <= tol, "seed {seed}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ladder_matches_series_parallel(r1 in 1.0f64..1e6, r2 in 1.0f64..1e6, r3 in 1.0f64..1e6, v in -10.0f64..10.0) {
        let fc = flat(&format!("l\nV1 a 0 {v}\nR1 a b {r1}\nR2 b 0 {r2}\nR3 b 0 {r3}\n"));
        let op = dc_operating_point(&fc, &opts()).unwrap();
        let rp = r2 * r3 / (r2 + r3);
        let want = v * rp / (r1 + rp);
        prop_assert!((op.voltage("b").unwrap() - want).abs() <= 1e-9 * v.abs().max(1e-3));
    }
}
