//! Closed-form reference evaluators and Monte Carlo error estimators.
//!
//! Nothing here touches the constructed matrices: the closed forms evaluate the
//! softmax-weighted average of target values directly, with their own
//! log-sum-exp, so they can serve as ground truth for the constructions.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::construct::{center_matrix, ConstructedApproximator};
use crate::cover::SphereCover;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::target::TargetFunction;

// exp(x) underflows to zero below this, so such terms are skipped.
const EXP_FLOOR: f64 = -745.0;

/// Normalized `exp(logits - max)`, computed without overflow.
pub fn softmax_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| if l - max < EXP_FLOOR { 0.0 } else { (l - max).exp() })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `R·(v_j·z̃ − ‖v_j‖²/2)` for every center.
pub fn self_logits(centers: &[Vec<f64>], temperature: f64, z: &[f64]) -> Vec<f64> {
    centers
        .iter()
        .map(|v| {
            let dot: f64 = v.iter().zip(z).map(|(a, b)| a * b).sum();
            let sq: f64 = v.iter().map(|a| a * a).sum();
            temperature * (dot - 0.5 * sq)
        })
        .collect()
}

/// Smallest index minimizing `‖z̃ − v_j‖₂`.
pub fn nearest_center(centers: &[Vec<f64>], z: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, v) in centers.iter().enumerate() {
        let dist: f64 = v.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best.0
}

/// Smallest index maximizing the affine score `v_j·z̃ − ‖v_j‖²/2`.
pub fn affine_argmax(centers: &[Vec<f64>], z: &[f64]) -> usize {
    let scores = self_logits(centers, 1.0, z);
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

/// Direct evaluation of `Σ_j w_j(Z) f(ṽ_j)` with the target values cached.
#[derive(Debug, Clone)]
pub struct SelfClosedForm {
    d: usize,
    n: usize,
    dn: usize,
    centers: Vec<f64>,
    half_norms: Vec<f64>,
    values: Vec<f64>,
    temperature: f64,
}

impl SelfClosedForm {
    pub fn new(f: &TargetFunction, centers: &[Vec<f64>], temperature: f64) -> Result<Self> {
        let (d, n) = (f.d(), f.n());
        let dn = d * n;
        if centers.is_empty() {
            return Err(Error::invalid("closed form needs at least one center"));
        }
        let mut flat = Vec::with_capacity(centers.len() * dn);
        let mut values = Vec::with_capacity(centers.len() * dn);
        let mut half_norms = Vec::with_capacity(centers.len());
        for v in centers {
            if v.len() != dn {
                return Err(Error::LengthMismatch {
                    what: "center",
                    expected: dn,
                    got: v.len(),
                });
            }
            flat.extend_from_slice(v);
            half_norms.push(0.5 * v.iter().map(|x| x * x).sum::<f64>());
            values.extend(f.eval(&center_matrix(v, d, n)?)?.flatten_sequence().into_vec());
        }
        Ok(Self {
            d,
            n,
            dn,
            centers: flat,
            half_norms,
            values,
            temperature,
        })
    }

    pub fn num_centers(&self) -> usize {
        self.half_norms.len()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.centers
            .chunks_exact(self.dn)
            .zip(&self.half_norms)
            .map(|(v, h)| self.temperature * (v.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() - h))
            .collect()
    }

    /// Softmax weights over centers for the flattened input.
    pub fn weights(&self, z: &[f64]) -> Vec<f64> {
        softmax_weights(&self.logits(z))
    }

    pub fn evaluate(&self, z: &Matrix) -> Result<Matrix> {
        if z.shape() != (self.d, self.n) {
            return Err(Error::ShapeMismatch {
                op: "closed_form_self",
                left: z.shape(),
                right: (self.d, self.n),
            });
        }
        let logits = self.logits(z.flatten_sequence().as_slice());
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut acc = vec![0.0; self.dn];
        for (j, &l) in logits.iter().enumerate() {
            if l - max < EXP_FLOOR {
                continue;
            }
            let w = (l - max).exp();
            total += w;
            for (a, v) in acc.iter_mut().zip(&self.values[j * self.dn..(j + 1) * self.dn]) {
                *a += w * v;
            }
        }
        let out: Vec<f64> = acc.into_iter().map(|a| a / total).collect();
        Matrix::unflatten_sequence(&out, self.d, self.n)
    }
}

/// `Σ_j w_j(Z) f(ṽ_j)` with `w = softmax_j(R(v_j·Z̃ − ‖v_j‖²/2))`.
pub fn closed_form_self(
    f: &TargetFunction,
    centers: &[Vec<f64>],
    temperature: f64,
    z: &Matrix,
) -> Result<Matrix> {
    SelfClosedForm::new(f, centers, temperature)?.evaluate(z)
}

/// Direct evaluation of the pair-weighted average over all `G²` center pairs.
#[derive(Debug, Clone)]
pub struct CrossClosedForm {
    d: usize,
    n: usize,
    centers: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    temperature: f64,
}

impl CrossClosedForm {
    pub fn new(f: &TargetFunction, centers: &[Vec<f64>], temperature: f64) -> Result<Self> {
        let (d, n) = (f.d(), f.n());
        if centers.is_empty() {
            return Err(Error::invalid("closed form needs at least one center"));
        }
        let mats = centers
            .iter()
            .map(|v| center_matrix(v, d, n))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(mats.len() * mats.len());
        for mj in &mats {
            for mi in &mats {
                values.push(f.eval_pair(mi, mj)?.flatten_sequence().into_vec());
            }
        }
        Ok(Self {
            d,
            n,
            centers: centers.to_vec(),
            values,
            temperature,
        })
    }

    /// Weights over pairs `η = i + G·j` from the joint logits
    /// `R(v_i·Z̃_K − ‖v_i‖²/2 + v_j·Z̃_Q − ‖v_j‖²/2)`, normalized jointly.
    pub fn pair_weights(&self, z_k: &[f64], z_q: &[f64]) -> Vec<f64> {
        let lk = self_logits(&self.centers, self.temperature, z_k);
        let lq = self_logits(&self.centers, self.temperature, z_q);
        let mut joint = Vec::with_capacity(lk.len() * lq.len());
        for b in &lq {
            for a in &lk {
                joint.push(a + b);
            }
        }
        softmax_weights(&joint)
    }

    pub fn evaluate(&self, z_k: &Matrix, z_q: &Matrix) -> Result<Matrix> {
        for z in [z_k, z_q] {
            if z.shape() != (self.d, self.n) {
                return Err(Error::ShapeMismatch {
                    op: "closed_form_cross",
                    left: z.shape(),
                    right: (self.d, self.n),
                });
            }
        }
        let w = self.pair_weights(
            z_k.flatten_sequence().as_slice(),
            z_q.flatten_sequence().as_slice(),
        );
        let mut acc = vec![0.0; self.d * self.n];
        for (wi, v) in w.iter().zip(&self.values) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += wi * x;
            }
        }
        Matrix::unflatten_sequence(&acc, self.d, self.n)
    }
}

pub fn closed_form_cross(
    f: &TargetFunction,
    centers: &[Vec<f64>],
    temperature: f64,
    z_k: &Matrix,
    z_q: &Matrix,
) -> Result<Matrix> {
    CrossClosedForm::new(f, centers, temperature)?.evaluate(z_k, z_q)
}

/// Positions at which two same-shaped constructions differ, over every stored
/// matrix. Building once per target (with perturbed centers) and comparing
/// exposes exactly the target-dependent entries.
pub fn count_differing_entries(a: &ConstructedApproximator, b: &ConstructedApproximator) -> Result<usize> {
    fn diff(x: &Matrix, y: &Matrix) -> Result<usize> {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "count_differing_entries",
                left: x.shape(),
                right: y.shape(),
            });
        }
        Ok(x.as_slice().iter().zip(y.as_slice()).filter(|(p, q)| p != q).count())
    }
    let mut pairs: Vec<(&Matrix, &Matrix)> = Vec::new();
    let mut layers = vec![(a.linear(), b.linear())];
    match (a.linear_q(), b.linear_q()) {
        (Some(x), Some(y)) => layers.push((x, y)),
        (None, None) => {}
        _ => return Err(Error::invalid("constructions differ in kind")),
    }
    for (la, lb) in layers {
        if la.terms().len() != lb.terms().len() {
            return Err(Error::invalid("constructions have different term counts"));
        }
        for ((pa, qa), (pb, qb)) in la.terms().iter().zip(lb.terms()) {
            pairs.push((pa, pb));
            pairs.push((qa, qb));
        }
        pairs.push((la.bias(), lb.bias()));
    }
    let (wa, wb) = (a.weights(), b.weights());
    pairs.extend([
        (wa.w_k(), wb.w_k()),
        (wa.w_q(), wb.w_q()),
        (wa.w_v(), wb.w_v()),
        (wa.w_o(), wb.w_o()),
    ]);
    pairs.into_iter().map(|(x, y)| diff(x, y)).sum()
}

/// Source of random inputs together with the volume of the region it covers.
pub trait Sampler {
    type Item;
    fn draw(&self, rng: &mut ChaCha8Rng) -> Self::Item;
    fn volume(&self) -> f64;
}

/// Uniform on `[-D, D]^{d×n}`.
#[derive(Debug, Clone, Copy)]
pub struct BoxSampler {
    pub d: usize,
    pub n: usize,
    pub half_width: f64,
}

impl Sampler for BoxSampler {
    type Item = Matrix;

    fn draw(&self, rng: &mut ChaCha8Rng) -> Matrix {
        let hw = self.half_width;
        Matrix::from_fn(self.d, self.n, |_, _| rng.gen_range(-hw..=hw)).expect("finite draws")
    }

    fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi((self.d * self.n) as i32)
    }
}

/// Independent uniform pairs on `[-D, D]^{d×n} × [-D, D]^{d×n}`.
#[derive(Debug, Clone, Copy)]
pub struct PairBoxSampler {
    pub d: usize,
    pub n: usize,
    pub half_width: f64,
}

impl Sampler for PairBoxSampler {
    type Item = (Matrix, Matrix);

    fn draw(&self, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
        let single = BoxSampler {
            d: self.d,
            n: self.n,
            half_width: self.half_width,
        };
        let k = single.draw(rng);
        (k, single.draw(rng))
    }

    fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi((2 * self.d * self.n) as i32)
    }
}

/// Uniform on the union of a cover's balls, by rejection from its bounding box.
#[derive(Debug, Clone)]
pub struct CoverSampler {
    cover: SphereCover,
    d: usize,
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    volume: f64,
}

impl CoverSampler {
    /// The union's volume is estimated once from `probes` seeded box draws.
    pub fn new(cover: SphereCover, d: usize, n: usize, probes: usize, seed: u64) -> Result<Self> {
        if cover.dim() != d * n {
            return Err(Error::LengthMismatch {
                what: "cover center (d·n)",
                expected: d * n,
                got: cover.dim(),
            });
        }
        let (lo, hi) = cover.bounding_box();
        let box_volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes = probes.max(1);
        let hits = (0..probes)
            .filter(|_| {
                let x: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| rng.gen_range(a..=b)).collect();
                cover.contains(&x)
            })
            .count();
        Ok(Self {
            cover,
            d,
            n,
            lo,
            hi,
            volume: box_volume * hits as f64 / probes as f64,
        })
    }

    pub fn cover(&self) -> &SphereCover {
        &self.cover
    }
}

impl Sampler for CoverSampler {
    type Item = Matrix;

    fn draw(&self, rng: &mut ChaCha8Rng) -> Matrix {
        loop {
            let x: Vec<f64> = self
                .lo
                .iter()
                .zip(&self.hi)
                .map(|(&a, &b)| rng.gen_range(a..=b))
                .collect();
            if self.cover.contains(&x) {
                return Matrix::unflatten_sequence(&x, self.d, self.n).expect("length d·n");
            }
        }
    }

    fn volume(&self) -> f64 {
        self.volume
    }
}

/// Monte Carlo estimates of `‖f − g‖` on a sampled region.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Largest entrywise deviation over the retained samples.
    pub sup_error: f64,
    /// `(vol(U) · mean ‖f − g‖_p^p)^{1/p}`, entrywise `p`-norm.
    pub lp_error: f64,
    /// Standard error of `lp_error` (delta method).
    pub lp_std_error: f64,
    pub p: f64,
    /// Samples drawn, including excluded ones.
    pub samples: usize,
    /// Samples excluded by the domain filter.
    pub out_of_cover: usize,
    pub seed: u64,
    pub runtime_ms: f64,
}

/// Sum with pairwise splitting to keep rounding growth logarithmic.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sup and `L_p` error of `approx` against `target` over `samples` seeded draws.
///
/// Draws rejected by `in_domain` are counted in `out_of_cover`. They are left out
/// of the sup and contribute zero to the `L_p` integral, so `lp_error` measures
/// the error over the retained part of the sampler's region.
pub fn estimate_errors<S: Sampler>(
    target: impl Fn(&S::Item) -> Result<Matrix>,
    approx: impl Fn(&S::Item) -> Result<Matrix>,
    sampler: &S,
    samples: usize,
    p: f64,
    seed: u64,
    in_domain: Option<&dyn Fn(&S::Item) -> bool>,
) -> Result<ErrorReport> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("p must be a finite value >= 1, got {p}")));
    }
    if samples == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup: f64 = 0.0;
    let mut powers = Vec::with_capacity(samples);
    let mut excluded = 0;
    for _ in 0..samples {
        let x = sampler.draw(&mut rng);
        if let Some(keep) = in_domain {
            if !keep(&x) {
                excluded += 1;
                powers.push(0.0);
                continue;
            }
        }
        let diff = target(&x)?.sub(&approx(&x)?)?;
        sup = sup.max(diff.max_abs());
        powers.push(diff.as_slice().iter().map(|v| v.abs().powf(p)).sum::<f64>());
    }
    let (lp_error, lp_std_error) = {
        let k = powers.len() as f64;
        let vol = sampler.volume();
        let mean = pairwise_sum(&powers) / k;
        let centered: Vec<f64> = powers.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if powers.len() > 1 {
            pairwise_sum(&centered) / (k - 1.0)
        } else {
            0.0
        };
        let integral = vol * mean;
        let integral_se = vol * (var / k).sqrt();
        let lp = integral.powf(1.0 / p);
        let se = if integral > 0.0 {
            lp / (p * integral) * integral_se
        } else {
            0.0
        };
        (lp, se)
    };
    Ok(ErrorReport {
        sup_error: sup,
        lp_error,
        lp_std_error,
        p,
        samples,
        out_of_cover: excluded,
        seed,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Monte Carlo sup error (the `L_p` fields use `p = 1`).
pub fn sup_error_estimate<S: Sampler>(
    target: impl Fn(&S::Item) -> Result<Matrix>,
    approx: impl Fn(&S::Item) -> Result<Matrix>,
    sampler: &S,
    samples: usize,
    seed: u64,
) -> Result<ErrorReport> {
    estimate_errors(target, approx, sampler, samples, 1.0, seed, None)
}

/// Monte Carlo `L_p` error.
pub fn lp_error_estimate<S: Sampler>(
    target: impl Fn(&S::Item) -> Result<Matrix>,
    approx: impl Fn(&S::Item) -> Result<Matrix>,
    sampler: &S,
    samples: usize,
    p: f64,
    seed: u64,
) -> Result<ErrorReport> {
    estimate_errors(target, approx, sampler, samples, p, seed, None)
}
