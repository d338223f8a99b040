//! Cross-attention universal approximator over pairs `(Z_K, Z_Q)`.
//!
//! Both arguments share one grid of `G` centers. Pairs are labelled
//! `η = i + G·j` with `i` the key-side center and `j` the query-side center, and
//! every score-matrix half has one `d`-row block per pair (`2dG²` rows in total).
//!
//! * `Linear_K(Z_K)` is `(2dG² + 1) × 2dG²`: `I_{2dG²}` on top and a trailing row
//!   holding `v_i·Z̃_K` under every block whose key center is `i`.
//! * `Linear_Q(Z_Q)` is `(G + n) × 2dG²`: row `j < G` holds `v_j·Z̃_Q` in its
//!   first `n` columns, the `I_n` block below selects those columns.
//! * `W_K` has rows: the trailing-row selector, `-(‖v_i‖² + ‖v_j‖²)/2`, a
//!   temperature-scaled one-hot ladder over the query center `j`, then
//!   `ln T(ṽ_i, ṽ_j)^T` / `ln E(ṽ_i, ṽ_j)^T`.

use crate::attention::{apply_sum_linear, attention_scores, cross_attention, AttentionWeights, SumLinear};
use crate::construct::{
    center_matrix, check_temperature, fold_block_weights, grid_centers, probe_sup, ApproxKind,
    ConstructedApproximator, GridSpec,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::target::TargetFunction;
use crate::{MAX_LINEAR_ENTRIES, MAX_SCORE_DIM};

/// Stored entries of both sum-of-linear layers of the cross construction.
pub fn cross_linear_entries(d: usize, n: usize, centers: usize) -> u128 {
    let (d, n, g) = (d as u128, n as u128, centers as u128);
    let width = 2 * d * g * g;
    let entries_k = 2 * g * n * ((width + 1) * d + n * width) + (width + 1) * width;
    let entries_q = g * n * ((g + n) * d + n * width) + (g + n) * width;
    entries_k + entries_q
}

/// Refuses cross constructions whose matrices would not fit in memory.
pub fn check_cross_budget(d: usize, n: usize, centers: usize) -> Result<()> {
    let width = 2 * (d as u128) * (centers as u128).pow(2);
    if width > MAX_SCORE_DIM as u128 {
        return Err(Error::CapExceeded {
            what: "score dimension 2dG^2",
            requested: width,
            cap: MAX_SCORE_DIM as u128,
        });
    }
    let entries = cross_linear_entries(d, n, centers);
    if entries > MAX_LINEAR_ENTRIES as u128 {
        return Err(Error::CapExceeded {
            what: "sum-of-linear entries",
            requested: entries,
            cap: MAX_LINEAR_ENTRIES as u128,
        });
    }
    if n as u128 > width {
        return Err(Error::invalid(format!(
            "the construction needs 2dG^2 >= n, got 2dG^2 = {width} and n = {n}"
        )));
    }
    Ok(())
}

/// Universal cross-attention approximator of a pair target on the grid `spec`.
pub fn build_universal_cross(
    f: &TargetFunction,
    spec: &GridSpec,
    temperature: f64,
) -> Result<ConstructedApproximator> {
    check_temperature(temperature)?;
    if !f.is_pair() {
        return Err(Error::WrongKind {
            expected: "pair",
            got: "single-input",
        });
    }
    let (d, n) = (spec.d, spec.n);
    if (f.d(), f.n()) != (d, n) {
        return Err(Error::invalid(format!(
            "target is {}x{} but the grid is for {d}x{n}",
            f.d(),
            f.n()
        )));
    }
    let g = spec.num_centers()?;
    check_cross_budget(d, n, g)?;
    let centers = grid_centers(spec)?;
    let mats = centers
        .iter()
        .map(|v| center_matrix(v, d, n))
        .collect::<Result<Vec<_>>>()?;

    // f at every pair η = i + G·j.
    let mut values = Vec::with_capacity(g * g);
    for mj in &mats {
        for mi in &mats {
            values.push(f.eval_pair(mi, mj)?);
        }
    }
    let lo = vec![-spec.half_width; spec.dn()];
    let hi = vec![spec.half_width; spec.dn()];
    let observed = values
        .iter()
        .fold(probe_sup(f, &lo, &hi, f.seed())?, |m, v| m.max(v.max_abs()));
    let b0 = f.resolve_b0(observed)?;
    for v in &values {
        if v.max_abs() >= b0 {
            return Err(Error::BoundViolation {
                value: v.max_abs(),
                bound: b0,
            });
        }
    }

    let pairs = g * g;
    let dp = d * pairs;
    let width = 2 * dp;
    let half_norms: Vec<f64> = centers
        .iter()
        .map(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>())
        .collect();

    // Linear_K: one term per (key center, half, token).
    let rows_k = width + 1;
    let mut terms_k = Vec::with_capacity(2 * g * n);
    for (i, v) in centers.iter().enumerate() {
        for h in 0..2 {
            for k in 0..n {
                let mut p = Matrix::zeros(rows_k, d);
                for s in 0..d {
                    p.set(width, s, v[k * d + s]);
                }
                let mut q = Matrix::zeros(n, width);
                for j in 0..g {
                    for c in 0..d {
                        q.set(k, h * dp + (i + g * j) * d + c, 1.0);
                    }
                }
                terms_k.push((p, q));
            }
        }
    }
    let mut bias_k = Matrix::zeros(rows_k, width);
    for c in 0..width {
        bias_k.set(c, c, 1.0);
    }
    let linear_k = SumLinear::new(terms_k, bias_k, (d, n))?;

    // Linear_Q: one term per (query center, token).
    let rows_q = g + n;
    let mut terms_q = Vec::with_capacity(g * n);
    for (j, v) in centers.iter().enumerate() {
        for k in 0..n {
            let mut p = Matrix::zeros(rows_q, d);
            for s in 0..d {
                p.set(j, s, v[k * d + s]);
            }
            let mut q = Matrix::zeros(n, width);
            for t in 0..n {
                q.set(k, t, 1.0);
            }
            terms_q.push((p, q));
        }
    }
    let mut bias_q = Matrix::zeros(rows_q, width);
    for t in 0..n {
        bias_q.set(g + t, t, 1.0);
    }
    let linear_q = SumLinear::new(terms_q, bias_q, (d, n))?;

    let attn = 2 + g + n;
    let mut w_k = Matrix::zeros(attn, rows_k);
    w_k.set(0, width, 1.0);
    for j in 0..g {
        for i in 0..g {
            let eta = i + g * j;
            let (e, t) = (
                values[eta].map(|x| (1.0 - x / b0).ln())?,
                values[eta].map(|x| (1.0 + x / b0).ln())?,
            );
            for h in 0..2 {
                let ln = if h == 0 { &t } else { &e };
                for c in 0..d {
                    let col = h * dp + eta * d + c;
                    w_k.set(1, col, -(half_norms[i] + half_norms[j]));
                    w_k.set(2 + j, col, temperature);
                    for tok in 0..n {
                        w_k.set(2 + g + tok, col, ln.get(c, tok));
                    }
                }
            }
        }
    }

    let mut w_q = Matrix::zeros(attn, rows_q);
    for tok in 0..n {
        w_q.set(0, g + tok, temperature);
        w_q.set(1, g + tok, temperature);
        w_q.set(2 + g + tok, g + tok, 1.0);
    }
    for j in 0..g {
        w_q.set(2 + j, j, 1.0);
    }

    let mut w_v = Matrix::zeros(d, rows_k);
    for eta in 0..pairs {
        for c in 0..d {
            w_v.set(c, eta * d + c, 1.0);
            w_v.set(c, dp + eta * d + c, -1.0);
        }
    }

    let mut w_o = Matrix::zeros(width, n);
    for tok in 0..n {
        w_o.set(tok, tok, d as f64 * b0);
    }

    Ok(ConstructedApproximator {
        kind: ApproxKind::Cross,
        d,
        n,
        linear: linear_k,
        linear_q: Some(linear_q),
        weights: AttentionWeights::new(w_k, w_q, w_v, w_o)?,
        centers,
        b0,
        temperature,
    })
}

impl ConstructedApproximator {
    /// `Attn_c(Linear_K(Z_K), Linear_Q(Z_Q))`.
    pub fn evaluate_cross(&self, z_k: &Matrix, z_q: &Matrix) -> Result<Matrix> {
        self.require_cross()?;
        let lq = self.linear_q.as_ref().expect("cross approximators carry a query layer");
        cross_attention(
            &self.weights,
            &apply_sum_linear(&self.linear, z_k)?,
            &apply_sum_linear(lq, z_q)?,
        )
    }

    /// Per-pair weights (index `i + G·j`) read off the internal score matrix.
    pub fn pair_weights(&self, z_k: &Matrix, z_q: &Matrix) -> Result<Vec<f64>> {
        self.require_cross()?;
        let lq = self.linear_q.as_ref().expect("cross approximators carry a query layer");
        let scores = attention_scores(
            &self.weights,
            &apply_sum_linear(&self.linear, z_k)?,
            &apply_sum_linear(lq, z_q)?,
        )?;
        let g = self.centers.len();
        Ok(fold_block_weights(&scores, g * g, self.d))
    }
}

pub fn evaluate_approximator_cross(
    approx: &ConstructedApproximator,
    z_k: &Matrix,
    z_q: &Matrix,
) -> Result<Matrix> {
    approx.evaluate_cross(z_k, z_q)
}
