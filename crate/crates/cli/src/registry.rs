//! Named target functions.

use std::f64::consts::PI;

use maxaffine_attn::target::calibrated_b0;
use maxaffine_attn::{Matrix, TargetFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arity {
    Single,
    Pair,
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionRegistryEntry {
    pub name: &'static str,
    pub arities: &'static [Arity],
    /// Lipschitz constant in the 2-norm, as a formula.
    pub lipschitz: &'static str,
    pub lipschitz_exact: bool,
    pub description: &'static str,
}

/// Breakpoints of `step1d`, left to right.
pub const STEP_BREAKS: [f64; 3] = [-0.5, 0.0, 0.5];
/// Values of `step1d` on the four intervals cut by [`STEP_BREAKS`].
pub const STEP_VALUES: [f64; 4] = [-1.0, 0.5, -0.25, 1.0];

const RANDLIP_TERMS: usize = 4;

pub fn registry_functions() -> Vec<FunctionRegistryEntry> {
    vec![
        FunctionRegistryEntry {
            name: "const:c",
            arities: &[Arity::Single, Arity::Pair],
            lipschitz: "0",
            lipschitz_exact: true,
            description: "every entry equal to c",
        },
        FunctionRegistryEntry {
            name: "linear",
            arities: &[Arity::Single],
            lipschitz: "sqrt(dn)*|a|",
            lipschitz_exact: true,
            description: "a.z + b with seeded a, b in [-1, 1], copied to every entry",
        },
        FunctionRegistryEntry {
            name: "sinprod",
            arities: &[Arity::Single],
            lipschitz: "pi*sqrt(2)",
            lipschitz_exact: true,
            description: "sin(pi z1) cos(pi z2) for d = 1, n = 2, copied to both entries",
        },
        FunctionRegistryEntry {
            name: "step1d",
            arities: &[Arity::Single],
            lipschitz: "inf",
            lipschitz_exact: true,
            description: "four-level step function applied to each token, d = 1",
        },
        FunctionRegistryEntry {
            name: "randlip",
            arities: &[Arity::Single],
            lipschitz: "sqrt(dn)*sum|amp_k|*|w_k|",
            lipschitz_exact: false,
            description: "seeded sum of four sines sin(w_k.z + phase_k), copied to every entry",
        },
        FunctionRegistryEntry {
            name: "addpair",
            arities: &[Arity::Pair],
            lipschitz: "sqrt(2)",
            lipschitz_exact: true,
            description: "Z_K + Z_Q entrywise",
        },
    ]
}

/// A target ready for construction.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Carries a strict bound `b0` valid on the requested box.
    pub target: TargetFunction,
    pub lipschitz: f64,
    pub sup_bound: f64,
}

impl Resolved {
    pub fn b0(&self) -> f64 {
        calibrated_b0(self.sup_bound)
    }
}

pub fn step1d(x: f64) -> f64 {
    let cell = STEP_BREAKS.iter().filter(|&&b| x >= b).count();
    STEP_VALUES[cell]
}

fn broadcast(value: f64, d: usize, n: usize) -> Matrix {
    Matrix::filled(d, n, value).expect("finite target value")
}

fn dot_flat(z: &Matrix, a: &[f64]) -> f64 {
    // Column-major flattening: token t, coordinate s at t·d + s.
    let d = z.rows();
    (0..z.cols())
        .flat_map(|t| (0..d).map(move |s| (s, t)))
        .zip(a)
        .map(|((s, t), w)| z.get(s, t) * w)
        .sum()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Resolves `NAME[:ARG]` for inputs of shape `d × n` on `[-D, D]`.
pub fn resolve(
    spec: &str,
    arity: Arity,
    d: usize,
    n: usize,
    half_width: f64,
    seed: u64,
) -> CliResult<Resolved> {
    if d == 0 || n == 0 {
        return Err(CliError::usage("d and n must be at least 1"));
    }
    let (name, arg) = match spec.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (spec, None),
    };
    let entry = registry_functions()
        .into_iter()
        .find(|e| e.name.split(':').next() == Some(name))
        .ok_or_else(|| CliError::usage(format!("unknown function '{spec}'")))?;
    if !entry.arities.contains(&arity) {
        let hint = match arity {
            Arity::Single => "it takes a pair of inputs, use the cross command",
            Arity::Pair => "it takes a single input",
        };
        return Err(CliError::usage(format!("function '{name}' does not fit here: {hint}")));
    }
    if name != "const" && arg.is_some() {
        return Err(CliError::usage(format!("function '{name}' takes no argument")));
    }
    let dn = d * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (target, lipschitz, sup_bound) = match name {
        "const" => {
            let raw = arg.ok_or_else(|| CliError::usage("const needs a value, as in const:0.7"))?;
            let c: f64 = raw
                .parse()
                .ok()
                .filter(|c: &f64| c.is_finite())
                .ok_or_else(|| CliError::usage(format!("bad constant '{raw}'")))?;
            let t = match arity {
                Arity::Single => TargetFunction::constant(c, d, n),
                Arity::Pair => TargetFunction::constant_pair(c, d, n),
            };
            (t, 0.0, c.abs())
        }
        "linear" => {
            let a: Vec<f64> = (0..dn).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let b: f64 = rng.gen_range(-1.0..=1.0);
            let l = norm2(&a) * (dn as f64).sqrt();
            let sup = a.iter().map(|x| x.abs()).sum::<f64>() * half_width + b.abs();
            let coeffs = a.clone();
            let t = TargetFunction::new("linear", d, n, move |z| broadcast(dot_flat(z, &coeffs) + b, d, n));
            (t, l, sup)
        }
        "sinprod" => {
            if (d, n) != (1, 2) {
                return Err(CliError::usage("sinprod needs d = 1 and n = 2"));
            }
            let t = TargetFunction::new("sinprod", 1, 2, |z| {
                broadcast((PI * z.get(0, 0)).sin() * (PI * z.get(0, 1)).cos(), 1, 2)
            });
            (t, PI * 2f64.sqrt(), 1.0)
        }
        "step1d" => {
            if d != 1 {
                return Err(CliError::usage("step1d needs d = 1"));
            }
            let t = TargetFunction::new("step1d", 1, n, |z| z.map(step1d).expect("finite steps"));
            (t, f64::INFINITY, 1.0)
        }
        "randlip" => {
            let mut terms = Vec::with_capacity(RANDLIP_TERMS);
            for _ in 0..RANDLIP_TERMS {
                let amp: f64 = rng.gen_range(-0.5..=0.5);
                let w: Vec<f64> = (0..dn).map(|_| rng.gen_range(-2.0..=2.0)).collect();
                let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                terms.push((amp, w, phase));
            }
            let l = (dn as f64).sqrt() * terms.iter().map(|(a, w, _)| a.abs() * norm2(w)).sum::<f64>();
            let sup = terms.iter().map(|(a, _, _)| a.abs()).sum();
            let t = TargetFunction::new("randlip", d, n, move |z| {
                let v = terms.iter().map(|(a, w, p)| a * (dot_flat(z, w) + p).sin()).sum();
                broadcast(v, d, n)
            });
            (t, l, sup)
        }
        "addpair" => {
            let t = TargetFunction::new_pair("addpair", d, n, |a: &Matrix, b: &Matrix| {
                a.add(b).expect("same shape")
            });
            (t, 2f64.sqrt(), 2.0 * half_width)
        }
        _ => unreachable!("registry names are matched above"),
    };
    let target = target.with_seed(seed).with_bound(calibrated_b0(sup_bound));
    Ok(Resolved {
        target,
        lipschitz,
        sup_bound,
    })
}
