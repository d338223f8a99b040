#![allow(dead_code)]

use maxaffine_attn::{Matrix, TargetFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, d: usize, n: usize, half_width: f64) -> Matrix {
    Matrix::from_fn(d, n, |_, _| rng.gen_range(-half_width..=half_width)).unwrap()
}

/// Smooth seeded target: entry (s, t) is `amp·sin(w_{s,t}·Z̃ + phase_{s,t})`.
pub fn wavy(seed: u64, d: usize, n: usize) -> TargetFunction {
    let mut r = rng(seed);
    let dn = d * n;
    let amp = r.gen_range(0.3..2.0);
    let w: Vec<Vec<f64>> = (0..dn).map(|_| (0..dn).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
    let phase: Vec<f64> = (0..dn).map(|_| r.gen_range(-3.0..3.0)).collect();
    TargetFunction::new(format!("wavy:{seed}"), d, n, move |z| {
        let x = z.flatten_sequence();
        let out: Vec<f64> = (0..dn)
            .map(|o| {
                let arg: f64 = w[o].iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
                amp * (arg + phase[o]).sin()
            })
            .collect();
        Matrix::unflatten_sequence(&out, d, n).unwrap()
    })
    .with_seed(seed)
}

/// Seeded pair target mixing both arguments.
pub fn wavy_pair(seed: u64, d: usize, n: usize) -> TargetFunction {
    let mut r = rng(seed);
    let a = r.gen_range(0.5..2.0);
    let b = r.gen_range(0.5..2.0);
    TargetFunction::new_pair(format!("wavy-pair:{seed}"), d, n, move |zk, zq| {
        Matrix::from_fn(d, n, |s, t| (a * zk.get(s, t)).sin() + (b * zq.get(s, t)).cos() * 0.5).unwrap()
    })
    .with_seed(seed)
}

/// `‖a − b‖_∞ / max(1, ‖b‖_∞)`.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.max_abs_diff(b).unwrap() / b.max_abs().max(1.0)
}
