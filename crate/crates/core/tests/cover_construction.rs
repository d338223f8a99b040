mod common;

use common::{rel_err, rng, uniform};
use maxaffine_attn::oracle::{count_differing_entries, estimate_errors, CoverSampler, SelfClosedForm};
use maxaffine_attn::{
    build_small_region, choose_temperature, count_trainable_params, Matrix, SphereCover,
    TargetFunction,
};
use rand::Rng;

fn random_cover(r: &mut rand_chacha::ChaCha8Rng, nx: usize, dn: usize, radius: f64) -> SphereCover {
    let centers = (0..nx)
        .map(|_| (0..dn).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    SphereCover::new(centers, radius).unwrap()
}

#[test]
fn parameter_count_matches_formula_and_matrix_walk() {
    let mut r = rng(41);
    for _ in 0..20 {
        let d = r.gen_range(1..=2);
        let n = r.gen_range(1..=3);
        let nx = r.gen_range(1..=6);
        let cover = random_cover(&mut r, nx, d * n, 0.2);
        // Perturb every coordinate so norms and coordinates all move.
        let moved = SphereCover::new(
            cover
                .centers()
                .iter()
                .map(|c| c.iter().map(|x| x + r.gen_range(0.01..0.02)).collect())
                .collect(),
            0.2,
        )
        .unwrap();
        let f1 = TargetFunction::new("a", d, n, |z| z.map(|x| 0.3 * x + 0.1).unwrap());
        let f2 = TargetFunction::new("b", d, n, |z| z.map(|x| (x + 0.7).sin() * 0.9 - 0.05).unwrap());
        let a = build_small_region(&f1, &cover, 5.0).unwrap();
        let b = build_small_region(&f2, &moved, 5.0).unwrap();
        let formula = 4 * d * n * nx + 2 * d * nx + n;
        assert_eq!(count_trainable_params(&a).unwrap(), formula);
        assert_eq!(count_differing_entries(&a, &b).unwrap(), formula, "d={d} n={n} N_x={nx}");
    }
}

#[test]
fn count_is_linear_in_the_number_of_centers() {
    let mut r = rng(42);
    let f = TargetFunction::new("x", 1, 2, |z| z.scale(0.5).unwrap());
    let small = build_small_region(&f, &random_cover(&mut r, 3, 2, 0.1), 1.0).unwrap();
    let large = build_small_region(&f, &random_cover(&mut r, 6, 2, 0.1), 1.0).unwrap();
    let diff = count_trainable_params(&large).unwrap() - count_trainable_params(&small).unwrap();
    assert_eq!(diff, (4 * 2 + 2) * 3);
}

#[test]
fn cover_pipeline_matches_closed_form() {
    let mut r = rng(43);
    let f = TargetFunction::new("cubic", 2, 1, |z| z.map(|x| x * x * x - 0.5 * x).unwrap());
    let cover = random_cover(&mut r, 9, 2, 0.3);
    let approx = build_small_region(&f, &cover, 30.0).unwrap();
    let oracle = SelfClosedForm::new(&f, cover.centers(), 30.0).unwrap();
    for _ in 0..100 {
        let z = uniform(&mut r, 2, 1, 1.0);
        assert!(rel_err(&approx.evaluate(&z).unwrap(), &oracle.evaluate(&z).unwrap()) <= 1e-8);
    }
}

#[test]
fn two_center_concentration() {
    let f = TargetFunction::new("x", 1, 1, |z| z.map(|x| 2.0 * x).unwrap());
    let cover = SphereCover::new(vec![vec![-0.5], vec![0.5]], 0.25).unwrap();
    let approx = build_small_region(&f, &cover, 200.0).unwrap();
    for x in [-0.7, -0.5, -0.3] {
        let out = approx.evaluate(&Matrix::from_rows(&[[x]]).unwrap()).unwrap();
        assert!((out.get(0, 0) + 1.0).abs() <= 1e-3);
    }
}

#[test]
fn lipschitz_cover_meets_the_bound() {
    // f = sin(z1 + z2) broadcast to both entries, L = 2 in the 2-norm.
    let f = TargetFunction::new("sinsum", 1, 2, |z| {
        let v = (z.get(0, 0) + z.get(0, 1)).sin();
        Matrix::from_rows(&[[v, v]]).unwrap()
    });
    let eps = 0.3;
    let radius = eps / (3.0 * 2.0);
    let mut r = rng(44);
    let cloud: Vec<Vec<f64>> = (0..400)
        .map(|_| {
            let t: f64 = r.gen_range(-1.0..1.0);
            vec![t, 0.5 * t + r.gen_range(-0.1..0.1)]
        })
        .collect();
    let cover = SphereCover::greedy(&cloud, radius).unwrap();
    let temperature = choose_temperature(radius, 1.001, cover.len() as f64, eps).unwrap();
    let approx = build_small_region(&f, &cover, temperature).unwrap();
    let sampler = CoverSampler::new(cover.clone(), 1, 2, 20_000, 1).unwrap();
    let report = estimate_errors(|z| f.eval(z), |z| approx.evaluate(z), &sampler, 2_000, 2.0, 3, None).unwrap();
    assert!(report.sup_error <= eps, "sup error {}", report.sup_error);
}
