mod common;

use common::rng;
use maxaffine_attn::{
    build_indicator_attention, build_reassign_attention, random_maxaffine, MaxAffine, Matrix,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const MARGIN: f64 = 0.2;

/// Tokens drawn uniformly from [-2, 2]^d, kept only when their margin is at least `MARGIN`.
fn gated_tokens(r: &mut ChaCha8Rng, ma: &MaxAffine, n: usize) -> Option<Matrix> {
    let d = ma.dim();
    let mut cols = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
            if ma.evaluate(&x).unwrap().margin >= MARGIN {
                found = Some(x);
                break;
            }
        }
        cols.push(found?);
    }
    Some(Matrix::from_fn(d, n, |s, t| cols[t][s]).unwrap())
}

#[test]
fn score_columns_approach_the_indicator() {
    let mut r = rng(21);
    let mut checked = 0;
    for inst in 0..100 {
        let n_ma = r.gen_range(1..=8);
        let d = r.gen_range(1..=3);
        let n = r.gen_range(1..=n_ma.min(3));
        let ma = random_maxaffine(1000 + inst, n_ma, d, 2.0).unwrap();
        let c = build_indicator_attention(&ma, n, 1e-3, MARGIN).unwrap();
        for _ in 0..5 {
            let Some(x) = gated_tokens(&mut r, &ma, n) else { continue };
            let s = c.scores(&x).unwrap();
            for t in 0..n {
                let e = ma.indicator(&x.column(t)).unwrap();
                for (i, ei) in e.iter().enumerate() {
                    assert!((s.get(i, t) - ei).abs() <= 1e-3, "instance {inst}");
                }
            }
            checked += 1;
        }
    }
    assert!(checked > 300);
}

#[test]
fn reassignment_looks_up_cell_values() {
    let mut r = rng(22);
    for inst in 0..100 {
        let n_ma = r.gen_range(1..=8);
        let d = r.gen_range(1..=3);
        let n = r.gen_range(1..=n_ma.min(3));
        let d_out = r.gen_range(1..=3);
        let ma = random_maxaffine(2000 + inst, n_ma, d, 2.0).unwrap();
        let values: Vec<Vec<f64>> = (0..n_ma)
            .map(|_| (0..d_out).map(|_| r.gen_range(-2.0..2.0)).collect())
            .collect();
        let c = build_reassign_attention(&ma, &values, n, 1e-3, MARGIN).unwrap();
        for _ in 0..5 {
            let Some(x) = gated_tokens(&mut r, &ma, n) else { continue };
            let out = c.apply(&x).unwrap();
            for t in 0..n {
                let cell = ma.evaluate(&x.column(t)).unwrap().cell_index;
                for (k, v) in values[cell].iter().enumerate() {
                    assert!((out.get(k, t) - v).abs() <= 2e-3, "instance {inst}");
                }
            }
        }
    }
}

#[test]
fn three_component_grid_lookup() {
    let ma = MaxAffine::new(vec![(vec![2.0], 1.0), (vec![-1.0], 0.0), (vec![0.0], 0.5)]).unwrap();
    let values = vec![vec![3.0], vec![-1.0], vec![0.25]];
    let c = build_reassign_attention(&ma, &values, 1, 1e-3, MARGIN).unwrap();
    let mut used = 0;
    for i in 0..50 {
        let x = -3.0 + 6.0 * i as f64 / 49.0;
        let rep = ma.evaluate(&[x]).unwrap();
        if rep.margin < MARGIN {
            continue;
        }
        used += 1;
        let out = c.apply(&Matrix::from_rows(&[[x]]).unwrap()).unwrap();
        assert!((out.get(0, 0) - values[rep.cell_index][0]).abs() <= 1e-3);
    }
    assert!(used > 40);
}
