mod common;

use common::{rel_err, rng, uniform, wavy};
use maxaffine_attn::construct::check_self_budget;
use maxaffine_attn::oracle::{estimate_errors, BoxSampler, SelfClosedForm};
use maxaffine_attn::{
    build_universal_self, choose_temperature, evaluate_approximator, GridSpec, Matrix,
    TargetFunction,
};
use rand::Rng;

#[test]
fn pipeline_matches_closed_form_on_random_configs() {
    let mut r = rng(11);
    for cfg in 0..24 {
        let d = r.gen_range(1..=2);
        let n = r.gen_range(1..=2);
        let p = r.gen_range(1..=4);
        let temperature = r.gen_range(0.1..100.0);
        let f = wavy(cfg, d, n);
        let spec = GridSpec::new(d, n, 1.0, p).unwrap();
        if check_self_budget(d, n, spec.num_centers().unwrap()).is_err() {
            continue;
        }
        let approx = build_universal_self(&f, &spec, temperature).unwrap();
        let oracle = SelfClosedForm::new(&f, approx.centers(), temperature).unwrap();
        for _ in 0..40 {
            let z = uniform(&mut r, d, n, 1.0);
            let got = evaluate_approximator(&approx, &z).unwrap();
            let expected = oracle.evaluate(&z).unwrap();
            let err = rel_err(&got, &expected);
            assert!(err <= 1e-8, "d={d} n={n} P={p} R={temperature}: {err:e}");
        }
    }
}

#[test]
fn internal_weights_form_a_partition_of_unity() {
    let mut r = rng(12);
    let f = wavy(5, 2, 1);
    let approx = build_universal_self(&f, &GridSpec::new(2, 1, 1.0, 3).unwrap(), 8.0).unwrap();
    let oracle = SelfClosedForm::new(&f, approx.centers(), 8.0).unwrap();
    for _ in 0..50 {
        let z = uniform(&mut r, 2, 1, 1.0);
        let w = approx.center_weights(&z).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        let expected = oracle.weights(z.flatten_sequence().as_slice());
        for (a, b) in w.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn constant_target_is_reproduced_everywhere() {
    let mut r = rng(13);
    for (d, n, p) in [(1, 1, 4), (1, 2, 3), (2, 2, 2)] {
        let f = TargetFunction::constant(-1.3, d, n);
        let approx = build_universal_self(&f, &GridSpec::new(d, n, 2.0, p).unwrap(), 60.0).unwrap();
        for _ in 0..100 {
            let out = approx.evaluate(&uniform(&mut r, d, n, 2.0)).unwrap();
            assert!(out.as_slice().iter().all(|v| (v + 1.3).abs() <= 1e-12));
        }
    }
}

#[test]
fn output_concentrates_at_a_grid_center() {
    let f = wavy(3, 1, 2);
    let spec = GridSpec::new(1, 2, 1.0, 4).unwrap();
    let approx = build_universal_self(&f, &spec, 1e3).unwrap();
    for s in [0, 5, 10, 15] {
        let v = spec.center(s);
        let z = Matrix::unflatten_sequence(&v, 1, 2).unwrap();
        let out = approx.evaluate(&z).unwrap();
        assert!(out.max_abs_diff(&f.eval(&z).unwrap()).unwrap() <= 1e-3);
    }
}

#[test]
fn lipschitz_target_meets_the_bound() {
    // f(x) = sin(πx) on [-1, 1], L = π.
    let f = TargetFunction::new("sinpi", 1, 1, |z| z.map(|x| (std::f64::consts::PI * x).sin()).unwrap());
    let eps = 0.3;
    let delta = eps / (3.0 * std::f64::consts::PI);
    let mut p = 1;
    while 2.0 / p as f64 > delta {
        p *= 2;
    }
    let spec = GridSpec::new(1, 1, 1.0, p).unwrap();
    let g = spec.num_centers().unwrap();
    let r = choose_temperature(delta, 1.0 + 1e-3, g as f64, eps).unwrap();
    let approx = build_universal_self(&f, &spec, r).unwrap();
    let sampler = BoxSampler {
        d: 1,
        n: 1,
        half_width: 1.0,
    };
    let report = estimate_errors(|z| f.eval(z), |z| approx.evaluate(z), &sampler, 10_000, 2.0, 17, None).unwrap();
    assert!(report.sup_error <= eps, "sup error {}", report.sup_error);
}
