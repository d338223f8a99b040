//! Weight synthesis for indicator attention, value reassignment and the
//! grid-based universal self-attention approximator.
//!
//! Layout of the universal construction with `G` centers (`dG` columns per half):
//!
//! * `Linear(Z)` is `(1 + 2dG) × 2dG`: row 0 holds `v_j·Z̃` repeated over center
//!   `j`'s `d` columns in both halves, the rows below are `I_{2dG}`.
//! * `W_K` (`(2+n) × (1+2dG)`) picks row 0, carries `-‖v_j‖²/2` in row 1 and
//!   `ln T(ṽ_j)^T` / `ln E(ṽ_j)^T` in rows `2..2+n` (T-half first).
//! * `W_Q` broadcasts the temperature into rows 0 and 1 and selects the first
//!   `n` columns through `I_n`.
//! * `W_V = [0_d, X_1, -X_1]` with `X_1 = [I_d … I_d]`, `W_O = [d·b0·I_n; 0]`.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{apply_sum_linear, attention_scores, self_attention, AttentionWeights, SumLinear};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::maxaffine::MaxAffine;
use crate::target::TargetFunction;
use crate::{MAX_CENTERS, MAX_LINEAR_ENTRIES, MAX_SCORE_DIM};

const PROBE_SAMPLES: usize = 256;

/// Uniform grid of `P^{dn}` centers on `[-D, D]^{d×n}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    /// `D`, the domain half-width.
    pub half_width: f64,
    /// `P`, points per axis.
    pub points: usize,
}

impl GridSpec {
    pub fn new(d: usize, n: usize, half_width: f64, points: usize) -> Result<Self> {
        if d == 0 || n == 0 || points == 0 {
            return Err(Error::invalid(format!(
                "d, n and P must be positive (d={d}, n={n}, P={points})"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid(format!("D must be positive and finite, got {half_width}")));
        }
        Ok(Self {
            d,
            n,
            half_width,
            points,
        })
    }

    pub fn dn(&self) -> usize {
        self.d * self.n
    }

    /// `G = P^{dn}`, refusing anything above [`MAX_CENTERS`].
    pub fn num_centers(&self) -> Result<usize> {
        let cap = MAX_CENTERS as u128;
        let mut g: u128 = 1;
        for _ in 0..self.dn() {
            g = g.saturating_mul(self.points as u128);
            if g > cap {
                let requested = (self.points as u128)
                    .checked_pow(self.dn() as u32)
                    .unwrap_or(u128::MAX);
                return Err(Error::CapExceeded {
                    what: "grid size G",
                    requested,
                    cap,
                });
            }
        }
        Ok(g as usize)
    }

    /// Grid step `2D/P`.
    pub fn step(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Center `s`: coordinate `i` is `-D + 2D·k_i/P` where `k_i` is the `i`-th
    /// base-`P` digit of `s`, least significant first.
    pub fn center(&self, s: usize) -> Vec<f64> {
        let mut rest = s;
        (0..self.dn())
            .map(|_| {
                let k = rest % self.points;
                rest /= self.points;
                (2.0 * self.half_width * k as f64 - self.half_width * self.points as f64)
                    / self.points as f64
            })
            .collect()
    }
}

pub fn grid_centers(spec: &GridSpec) -> Result<Vec<Vec<f64>>> {
    let g = spec.num_centers()?;
    Ok((0..g).map(|s| spec.center(s)).collect())
}

/// The `d × n` matrix form `ṽ` of a flattened center (column `k` is `v[kd..kd+d]`).
pub fn center_matrix(v: &[f64], d: usize, n: usize) -> Result<Matrix> {
    Matrix::unflatten_sequence(v, d, n)
}

fn et_from_value(value: &Matrix, b0: f64) -> Result<(Matrix, Matrix)> {
    let m = value.max_abs();
    if m >= b0 {
        return Err(Error::BoundViolation { value: m, bound: b0 });
    }
    Ok((value.map(|f| 1.0 - f / b0)?, value.map(|f| 1.0 + f / b0)?))
}

/// `E = 1 - f(ṽ)/b0` and `T = 1 + f(ṽ)/b0`, both strictly positive.
pub fn compute_et(f: &TargetFunction, center: &Matrix, b0: f64) -> Result<(Matrix, Matrix)> {
    et_from_value(&f.eval(center)?, b0)
}

/// Temperature `R = (8/(3δ²))·ln(6·b0·G/ε)`, the smallest `R` with
/// `2·b0·G·exp(-3Rδ²/8) ≤ ε/3`. When every `R > 0` already qualifies the result is 1.
pub fn choose_temperature(delta: f64, b0: f64, g: f64, epsilon: f64) -> Result<f64> {
    for (name, v) in [("delta", delta), ("b0", b0), ("G", g), ("epsilon", epsilon)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if epsilon >= 1.0 {
        return Err(Error::invalid(format!("epsilon must be below 1, got {epsilon}")));
    }
    let r = 8.0 / (3.0 * delta * delta) * (6.0 * b0 * g / epsilon).ln();
    Ok(if r > 0.0 { r } else { 1.0 })
}

/// Which construction produced an approximator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApproxKind {
    SelfGrid,
    Cross,
    LipschitzCover,
}

impl ApproxKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ApproxKind::SelfGrid => "self",
            ApproxKind::Cross => "cross",
            ApproxKind::LipschitzCover => "lipschitz-cover",
        }
    }
}

/// Preprocessing layer(s) plus one attention head, with the metadata the oracle needs.
#[derive(Debug, Clone)]
pub struct ConstructedApproximator {
    pub(crate) kind: ApproxKind,
    pub(crate) d: usize,
    pub(crate) n: usize,
    pub(crate) linear: SumLinear,
    pub(crate) linear_q: Option<SumLinear>,
    pub(crate) weights: AttentionWeights,
    pub(crate) centers: Vec<Vec<f64>>,
    pub(crate) b0: f64,
    pub(crate) temperature: f64,
}

impl ConstructedApproximator {
    pub fn kind(&self) -> ApproxKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The sum-of-linear layer (the key-side layer for cross attention).
    pub fn linear(&self) -> &SumLinear {
        &self.linear
    }

    /// The query-side layer; present only for cross attention.
    pub fn linear_q(&self) -> Option<&SumLinear> {
        self.linear_q.as_ref()
    }

    pub fn weights(&self) -> &AttentionWeights {
        &self.weights
    }

    /// Flattened centers `v_j` (length `dn` each).
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    fn require_single(&self) -> Result<()> {
        if self.kind == ApproxKind::Cross {
            return Err(Error::WrongKind {
                expected: "self or lipschitz-cover",
                got: "cross",
            });
        }
        Ok(())
    }

    pub(crate) fn require_cross(&self) -> Result<()> {
        if self.kind != ApproxKind::Cross {
            return Err(Error::WrongKind {
                expected: "cross",
                got: self.kind.as_str(),
            });
        }
        Ok(())
    }

    /// `Attn_s(Linear(Z))`.
    pub fn evaluate(&self, z: &Matrix) -> Result<Matrix> {
        self.require_single()?;
        self_attention(&self.weights, &apply_sum_linear(&self.linear, z)?)
    }

    /// Per-center weights read off the internal score matrix: column 0 summed
    /// over each center's `d` rows in both halves.
    pub fn center_weights(&self, z: &Matrix) -> Result<Vec<f64>> {
        self.require_single()?;
        let l = apply_sum_linear(&self.linear, z)?;
        let scores = attention_scores(&self.weights, &l, &l)?;
        Ok(fold_block_weights(&scores, self.centers.len(), self.d))
    }
}

/// Sums column 0 of a `2·blocks·d`-row score matrix over each block's rows in both halves.
pub(crate) fn fold_block_weights(scores: &Matrix, blocks: usize, d: usize) -> Vec<f64> {
    let half = blocks * d;
    (0..blocks)
        .map(|j| {
            (0..d)
                .map(|s| scores.get(j * d + s, 0) + scores.get(half + j * d + s, 0))
                .sum()
        })
        .collect()
}

pub fn evaluate_approximator(approx: &ConstructedApproximator, z: &Matrix) -> Result<Matrix> {
    approx.evaluate(z)
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Stored entries of the self construction's sum-of-linear layer, which dominate
/// both its memory and the cost of one evaluation.
pub fn self_linear_entries(d: usize, n: usize, centers: usize) -> u128 {
    let (d, n, g) = (d as u128, n as u128, centers as u128);
    let width = 2 * d * g;
    let rows = width + 1;
    2 * g * n * (rows * d + n * width) + rows * width
}

/// Refuses self-attention constructions whose matrices would not fit in memory.
pub fn check_self_budget(d: usize, n: usize, centers: usize) -> Result<()> {
    let width = 2 * d as u128 * centers as u128;
    if width > MAX_SCORE_DIM as u128 {
        return Err(Error::CapExceeded {
            what: "score dimension 2dG",
            requested: width,
            cap: MAX_SCORE_DIM as u128,
        });
    }
    let entries = self_linear_entries(d, n, centers);
    if entries > MAX_LINEAR_ENTRIES as u128 {
        return Err(Error::CapExceeded {
            what: "sum-of-linear entries",
            requested: entries,
            cap: MAX_LINEAR_ENTRIES as u128,
        });
    }
    if n as u128 > width {
        return Err(Error::invalid(format!(
            "the construction needs 2dG >= n, got 2dG = {width} and n = {n}"
        )));
    }
    Ok(())
}

/// Sup of `|f|` over seeded uniform probes of the box `[lo, hi]^{d×n}`.
pub(crate) fn probe_sup(f: &TargetFunction, lo: &[f64], hi: &[f64], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut sup: f64 = 0.0;
    for _ in 0..PROBE_SAMPLES {
        let v: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| if a < b { rng.gen_range(a..=b) } else { a })
            .collect();
        let z = center_matrix(&v, f.d(), f.n())?;
        sup = sup.max(if f.is_pair() {
            // Probe pairs by splitting the draw between the two arguments.
            let w: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| if a < b { rng.gen_range(a..=b) } else { a })
                .collect();
            f.eval_pair(&z, &center_matrix(&w, f.d(), f.n())?)?.max_abs()
        } else {
            f.eval(&z)?.max_abs()
        });
    }
    Ok(sup)
}

pub(crate) fn check_distinct(centers: &[Vec<f64>]) -> Result<()> {
    let mut order: Vec<usize> = (0..centers.len()).collect();
    let lex = |a: &Vec<f64>, b: &Vec<f64>| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    order.sort_by(|&i, &j| lex(&centers[i], &centers[j]));
    for w in order.windows(2) {
        if centers[w[0]] == centers[w[1]] {
            return Err(Error::invalid(format!(
                "centers {} and {} coincide",
                w[0].min(w[1]),
                w[0].max(w[1])
            )));
        }
    }
    Ok(())
}

/// The shared self-attention construction over an arbitrary center set.
pub(crate) fn build_self_from_centers(
    f: &TargetFunction,
    centers: Vec<Vec<f64>>,
    temperature: f64,
    probe: f64,
    kind: ApproxKind,
) -> Result<ConstructedApproximator> {
    check_temperature(temperature)?;
    if f.is_pair() {
        return Err(Error::WrongKind {
            expected: "single-input",
            got: "pair",
        });
    }
    let (d, n) = (f.d(), f.n());
    let g = centers.len();
    if g == 0 {
        return Err(Error::invalid("at least one center is required"));
    }
    for v in &centers {
        if v.len() != d * n {
            return Err(Error::LengthMismatch {
                what: "center",
                expected: d * n,
                got: v.len(),
            });
        }
    }
    check_distinct(&centers)?;
    check_self_budget(d, n, g)?;

    let values = centers
        .iter()
        .map(|v| f.eval(&center_matrix(v, d, n)?))
        .collect::<Result<Vec<_>>>()?;
    let observed = values.iter().fold(probe, |m, v| m.max(v.max_abs()));
    let b0 = f.resolve_b0(observed)?;
    let et = values
        .iter()
        .map(|v| et_from_value(v, b0))
        .collect::<Result<Vec<_>>>()?;

    let dg = d * g;
    let width = 2 * dg;
    let rows = 1 + width;

    // Linear: one term per (center, half, token); each carries that token's slice of v_j.
    let mut terms = Vec::with_capacity(2 * g * n);
    for (j, v) in centers.iter().enumerate() {
        for h in 0..2 {
            for k in 0..n {
                let mut p = Matrix::zeros(rows, d);
                for s in 0..d {
                    p.set(0, s, v[k * d + s]);
                }
                let mut q = Matrix::zeros(n, width);
                for s in 0..d {
                    q.set(k, h * dg + j * d + s, 1.0);
                }
                terms.push((p, q));
            }
        }
    }
    let mut bias = Matrix::zeros(rows, width);
    for c in 0..width {
        bias.set(1 + c, c, 1.0);
    }
    let linear = SumLinear::new(terms, bias, (d, n))?;

    let mut w_k = Matrix::zeros(2 + n, rows);
    w_k.set(0, 0, 1.0);
    for (j, v) in centers.iter().enumerate() {
        let half_norm = -0.5 * v.iter().map(|x| x * x).sum::<f64>();
        let (e, t) = &et[j];
        for s in 0..d {
            let c_t = 1 + j * d + s;
            let c_e = 1 + dg + j * d + s;
            w_k.set(1, c_t, half_norm);
            w_k.set(1, c_e, half_norm);
            for tok in 0..n {
                w_k.set(2 + tok, c_t, t.get(s, tok).ln());
                w_k.set(2 + tok, c_e, e.get(s, tok).ln());
            }
        }
    }

    let mut w_q = Matrix::zeros(2 + n, rows);
    for tok in 0..n {
        w_q.set(0, 1 + tok, temperature);
        w_q.set(1, 1 + tok, temperature);
        w_q.set(2 + tok, 1 + tok, 1.0);
    }

    let mut w_v = Matrix::zeros(d, rows);
    for j in 0..g {
        for s in 0..d {
            w_v.set(s, 1 + j * d + s, 1.0);
            w_v.set(s, 1 + dg + j * d + s, -1.0);
        }
    }

    let mut w_o = Matrix::zeros(width, n);
    for tok in 0..n {
        w_o.set(tok, tok, d as f64 * b0);
    }

    Ok(ConstructedApproximator {
        kind,
        d,
        n,
        linear,
        linear_q: None,
        weights: AttentionWeights::new(w_k, w_q, w_v, w_o)?,
        centers,
        b0,
        temperature,
    })
}

/// Universal self-attention approximator of `f` on the grid `spec`.
pub fn build_universal_self(
    f: &TargetFunction,
    spec: &GridSpec,
    temperature: f64,
) -> Result<ConstructedApproximator> {
    if (f.d(), f.n()) != (spec.d, spec.n) {
        return Err(Error::invalid(format!(
            "target is {}x{} but the grid is for {}x{}",
            f.d(),
            f.n(),
            spec.d,
            spec.n
        )));
    }
    check_temperature(temperature)?;
    let g = spec.num_centers()?;
    check_self_budget(spec.d, spec.n, g)?;
    let lo = vec![-spec.half_width; spec.dn()];
    let hi = vec![spec.half_width; spec.dn()];
    let probe = probe_sup(f, &lo, &hi, f.seed())?;
    build_self_from_centers(f, grid_centers(spec)?, temperature, probe, ApproxKind::SelfGrid)
}

/// Indicator or reassignment attention together with its temperature.
#[derive(Debug, Clone)]
pub struct IndicatorConstruction {
    pub linear: SumLinear,
    pub weights: AttentionWeights,
    pub chosen_r: f64,
}

impl IndicatorConstruction {
    /// `Softmax(K^T Q) W_O`: column `i` approximates the one-hot cell of token `i`.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        let l = apply_sum_linear(&self.linear, x)?;
        attention_scores(&self.weights, &l, &l)?.matmul(self.weights.w_o())
    }

    /// Full attention output `W_V Linear(X) Softmax(K^T Q) W_O`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self_attention(&self.weights, &apply_sum_linear(&self.linear, x)?)
    }
}

/// `R = (ln(N_ma - 1) - ln ε)/Δ_min`; with a single component any `R` works and 1 is returned.
pub fn indicator_temperature(n_ma: usize, epsilon: f64, margin: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::invalid(format!("margin must be positive and finite, got {margin}")));
    }
    if n_ma <= 1 {
        return Ok(1.0);
    }
    Ok((((n_ma - 1) as f64).ln() - epsilon.ln()) / margin)
}

fn indicator_layers(
    ma: &MaxAffine,
    n: usize,
    chosen_r: f64,
    w_v_tail: Matrix,
) -> Result<IndicatorConstruction> {
    let d = ma.dim();
    let big_n = ma.len();
    if n == 0 {
        return Err(Error::invalid("sequence length must be positive"));
    }
    if big_n < n {
        return Err(Error::invalid(format!(
            "the indicator construction needs N_ma >= n, got N_ma = {big_n} and n = {n}"
        )));
    }
    let rows = d + big_n;

    // Linear(X) = [[X, 0], [I_N]].
    let p = Matrix::from_fn(rows, d, |r, c| if r == c { 1.0 } else { 0.0 })?;
    let q = Matrix::from_fn(n, big_n, |r, c| if r == c { 1.0 } else { 0.0 })?;
    let bias = Matrix::from_fn(rows, big_n, |r, c| if r == d + c { 1.0 } else { 0.0 })?;
    let linear = SumLinear::new(vec![(p, q)], bias, (d, n))?;

    let w_k = Matrix::from_fn(d + 1, rows, |r, c| {
        if c < d {
            0.0
        } else if r < d {
            chosen_r * ma.slope(c - d)[r]
        } else {
            chosen_r * ma.intercept(c - d)
        }
    })?;
    let w_q = Matrix::from_fn(d + 1, rows, |r, c| match (r < d, c < d) {
        (true, true) if r == c => 1.0,
        (false, false) if c - d < n => 1.0,
        _ => 0.0,
    })?;
    let w_v = Matrix::from_fn(w_v_tail.rows(), rows, |r, c| {
        if c < d {
            0.0
        } else {
            w_v_tail.get(r, c - d)
        }
    })?;
    let w_o = Matrix::from_fn(big_n, n, |r, c| if r == c { 1.0 } else { 0.0 })?;
    Ok(IndicatorConstruction {
        linear,
        weights: AttentionWeights::new(w_k, w_q, w_v, w_o)?,
        chosen_r,
    })
}

/// Attention whose score columns approximate the max-affine cell indicators of
/// the input tokens to within `epsilon` wherever the token margin is at least
/// `margin`. `W_V` selects the identity block, so the attention output equals
/// the score matrix after `W_O`.
pub fn build_indicator_attention(
    ma: &MaxAffine,
    n: usize,
    epsilon: f64,
    margin: f64,
) -> Result<IndicatorConstruction> {
    let r = indicator_temperature(ma.len(), epsilon, margin)?;
    indicator_layers(ma, n, r, Matrix::identity(ma.len()))
}

/// Attention that maps each token to the value `V_i` attached to its cell, within
/// `epsilon`. The inner tolerance is tightened to `epsilon / ‖V‖` with `‖V‖` the
/// largest absolute row sum of `[V_1 … V_N]`.
pub fn build_reassign_attention(
    ma: &MaxAffine,
    cell_values: &[Vec<f64>],
    n: usize,
    epsilon: f64,
    margin: f64,
) -> Result<IndicatorConstruction> {
    if cell_values.is_empty() {
        return Err(Error::invalid("cell_values must not be empty"));
    }
    if cell_values.len() != ma.len() {
        return Err(Error::LengthMismatch {
            what: "cell_values",
            expected: ma.len(),
            got: cell_values.len(),
        });
    }
    let d_out = cell_values[0].len();
    if cell_values.iter().any(|v| v.len() != d_out) || d_out == 0 {
        return Err(Error::invalid("cell values must be nonempty vectors of one common length"));
    }
    let values = Matrix::from_fn(d_out, ma.len(), |r, c| cell_values[c][r])?;
    let norm = values.inf_norm();
    let inner = if norm > 1.0 { epsilon / norm } else { epsilon };
    let r = indicator_temperature(ma.len(), inner, margin)?;
    indicator_layers(ma, n, r, values)
}
