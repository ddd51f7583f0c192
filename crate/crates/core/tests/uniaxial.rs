use std::f64::consts::PI;

use belh_core::config::{parse, UniaxialFile};
use belh_core::dynamics::{GridSpec, TimeSpec};
use belh_core::uniaxial::{
    cross_validate, embed_uniaxial, extract_uniaxial, kaplan_moment, odd_extension, run_scalar, run_sweep, sample_profile,
    uniaxial_deviation, BulkTriple, CompareConfig, ScalarInit, ScalarParams, ScalarRun,
};
use belh_core::{Error, Grid};

fn demo(c: f64, intervals: usize) -> ScalarRun {
    ScalarRun {
        length: PI,
        intervals,
        dt: 1e-3,
        t_final: 1.0,
        params: ScalarParams { relaxation: 1.0, elastic: 1.0, a: 0.0, b: 0.0, c },
        init: ScalarInit::Sine { amplitude: 2.0, mode: 1 },
        ceiling: 1e6,
        growth_bound: 0.05,
        max_halvings: 80,
    }
}

#[test]
fn linear_run_matches_discrete_eigenmode() {
    let mut cfg = demo(0.0, 64);
    cfg.params = ScalarParams { relaxation: 0.7, elastic: 1.3, a: 0.5, b: 0.0, c: 0.0 };
    cfg.t_final = 0.5;
    let r = run_scalar(&cfg).unwrap();
    assert!(!r.blowup && r.halvings == 0 && r.comparison.is_none());
    let h = cfg.spacing();
    let lambda_h = (2.0 / h * (0.5 * h).sin()).powi(2);
    let mut amp = 2.0;
    for s in &r.samples[1..] {
        amp *= (1.0 - s.dt * 0.7 * 0.5) / (1.0 + s.dt * 0.7 * 1.3 * lambda_h);
        // the sine is an exact eigenvector of the difference Laplacian; node 32 sits at pi/2
        assert!((s.max_q - amp).abs() < 1e-12, "{}", s.time);
        assert!((s.moment - amp * PI / 2.0).abs() < 1e-12);
    }
    assert!((r.final_time - 0.5).abs() < 1e-12);
}

#[test]
fn moment_of_sine_is_exact() {
    for n in [8usize, 33, 100] {
        let q = sample_profile(&ScalarInit::Sine { amplitude: 1.0, mode: 1 }, 2.0, n);
        assert!((kaplan_moment(&q, 2.0) - 1.0).abs() < 1e-13);
        let q3 = sample_profile(&ScalarInit::Sine { amplitude: 1.0, mode: 3 }, 2.0, n);
        if n > 3 {
            assert!(kaplan_moment(&q3, 2.0).abs() < 1e-13);
        }
    }
}

#[test]
fn focusing_cubic_blows_up_and_defocusing_stays_bounded() {
    let bad = run_scalar(&demo(-1.0, 200)).unwrap();
    assert!(bad.blowup);
    let t = bad.blowup_time.unwrap();
    assert!(t > 0.0 && t < 0.05, "{t}");
    assert!(bad.halvings >= 3);
    let beta = bad.growth_exponent.unwrap();
    assert!((beta - 0.5).abs() < 0.05, "{beta}");
    // comparison ODE is a lower bound on the moment and blows up later
    assert!(bad.moment_dominates());
    assert!(bad.moment_monotone_after_threshold());
    assert!(bad.comparison_blowup_time.unwrap() >= t);
    assert!(bad.min_signed >= 0.0);

    let good = run_scalar(&demo(1.0, 200)).unwrap();
    assert!(!good.blowup && !good.ceiling_without_halvings);
    assert!(good.comparison.is_none());
    assert!(good.max_q() <= 2.0 + 1e-12);
    assert!((good.final_time - 1.0).abs() < 1e-12);
}

#[test]
fn quadratic_focusing_has_unit_exponent() {
    let mut cfg = demo(0.0, 200);
    cfg.params.b = 2.0;
    cfg.init = ScalarInit::Sine { amplitude: 5.0, mode: 1 };
    let r = run_scalar(&cfg).unwrap();
    assert!(r.blowup);
    assert!((r.growth_exponent.unwrap() - 1.0).abs() < 0.05);
    assert!(r.moment_dominates());
    assert!(r.comparison_blowup_time.unwrap() >= r.blowup_time.unwrap());
}

#[test]
fn comparison_needs_sign_definite_data() {
    let mut cfg = demo(-1.0, 64);
    cfg.init = ScalarInit::Sine { amplitude: 0.1, mode: 2 };
    cfg.t_final = 0.01;
    let r = run_scalar(&cfg).unwrap();
    assert!(r.comparison.is_none() && r.threshold.is_infinite() && r.threshold_time.is_none());
}

#[test]
fn ceiling_without_halvings_is_not_a_blowup() {
    let mut cfg = demo(1.0, 32);
    cfg.ceiling = 1.0;
    let r = run_scalar(&cfg).unwrap();
    assert!(!r.blowup && r.ceiling_without_halvings && r.blowup_time.is_none());
}

#[test]
fn adaptive_stall_and_bad_input() {
    let mut cfg = demo(-1.0, 32);
    cfg.max_halvings = 2;
    assert!(matches!(run_scalar(&cfg), Err(Error::AdaptiveStall { .. })));
    let mut cfg = demo(1.0, 32);
    cfg.init = ScalarInit::Values { values: vec![1.0; 5] };
    assert!(matches!(run_scalar(&cfg), Err(Error::Config(_))));
    let mut cfg = demo(1.0, 32);
    cfg.params.elastic = 0.0;
    assert!(run_scalar(&cfg).is_err());
}

#[test]
fn sweep_keeps_order_and_matches_single_runs() {
    let mut base = demo(1.0, 48);
    base.t_final = 0.05;
    let triples = [
        BulkTriple { a: 0.0, b: 0.0, c: 1.0 },
        BulkTriple { a: -1.0, b: 0.0, c: -1.0 },
        BulkTriple { a: 0.5, b: 1.0, c: 0.5 },
    ];
    let out = run_sweep(&base, &triples);
    assert_eq!(out.len(), 3);
    for (t, r) in triples.iter().zip(&out) {
        let mut cfg = base.clone();
        cfg.params.a = t.a;
        cfg.params.b = t.b;
        cfg.params.c = t.c;
        let single = run_scalar(&cfg).unwrap();
        // the comparison column is NaN without a comparison ODE
        assert_eq!(format!("{:?}", r.as_ref().unwrap().samples), format!("{:?}", single.samples));
    }
}

#[test]
fn embedding_round_trip() {
    let grid = Grid::new(16, 1.0).unwrap();
    // no Nyquist content, so the transform round trip is exact
    let profile: Vec<f64> = (1..8).map(|i| (i as f64 * PI / 8.0).sin() + 0.3 * (3.0 * i as f64 * PI / 8.0).sin()).collect();
    let state = embed_uniaxial(&profile, &grid).unwrap();
    let back = extract_uniaxial(&state);
    assert_eq!(back.len(), 16);
    for (a, b) in back.iter().zip(&odd_extension(&profile)) {
        assert!((a - b).abs() < 1e-13, "{a} vs {b}");
    }
    let (dev, max_q) = uniaxial_deviation(&state);
    assert!(dev < 1e-14 && max_q > 0.0);
    assert!(matches!(embed_uniaxial(&profile[1..], &grid), Err(Error::IncompatibleGrid(_))));
}

#[test]
fn short_cross_validation_at_sixteen_cubed() {
    let cfg = CompareConfig {
        params: ScalarParams { relaxation: 1.0, elastic: 0.5, a: -0.5, b: 0.3, c: 1.0 },
        viscosity: 1.0,
        grid: GridSpec { n: 16, box_scale: 1.0 },
        time: TimeSpec { dt: 5e-3, t_final: 0.1, order: 2, dealias: true, cfl_max: 0.4 },
        profile: ScalarInit::Sine { amplitude: 0.8, mode: 1 },
        tolerance: 1e-8,
        uniaxial_tolerance: 1e-10,
    };
    let r = cross_validate(&cfg).unwrap();
    assert!(r.passed(), "diff {} deviation {}", r.max_diff, r.max_deviation);
    assert!(r.samples.iter().all(|s| s.transverse < 1e-12));
    assert!((r.samples.last().unwrap().time - 0.1).abs() < 1e-12);
}

#[test]
fn uniaxial_file_parses_with_sweep() {
    let text = r#"
[scalar]
length = 3.141592653589793
intervals = 100
dt = 1e-3
t_final = 1.0

[scalar.params]
relaxation = 1.0
elastic = 1.0
a = 0.0
b = 0.0
c = -1.0

[scalar.init]
kind = "sine"
amplitude = 2.0

[[sweep]]
a = 0.0
b = 0.0
c = 1.0
"#;
    let f: UniaxialFile = parse(text, "u.toml").unwrap();
    assert_eq!(f.scalar.init, ScalarInit::Sine { amplitude: 2.0, mode: 1 });
    assert_eq!(f.scalar.ceiling, 1e6);
    assert_eq!(f.sweep.len(), 1);
    let err = parse::<UniaxialFile>(&text.replace("intervals = 100\n", ""), "u.toml").unwrap_err();
    assert!(err.to_string().contains("intervals"));
}
