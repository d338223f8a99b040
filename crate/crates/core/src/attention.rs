//! Single-head softmax attention and the sum-of-linear preprocessing layer.
//!
//! Scores are `Softmax((W_K Z_K)^T W_Q Z_Q)` with the softmax taken per column
//! and no `1/√d` divisor; any temperature lives inside the weights.

use crate::error::{Error, Result};
use crate::linalg::{accumulate_product, Matrix};

/// `Z ↦ Σ_i P_i Z Q_i + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumLinear {
    terms: Vec<(Matrix, Matrix)>,
    bias: Matrix,
    input_shape: (usize, usize),
}

impl SumLinear {
    /// Shapes: `P_i` is D2×D1, `Q_i` is N1×N2 and `bias` is D2×N2. With no terms the
    /// input shape cannot be inferred, so it is passed explicitly.
    pub fn new(terms: Vec<(Matrix, Matrix)>, bias: Matrix, input_shape: (usize, usize)) -> Result<Self> {
        let (d1, n1) = input_shape;
        for (p, q) in &terms {
            if p.rows() != bias.rows() || p.cols() != d1 {
                return Err(Error::ShapeMismatch {
                    op: "SumLinear term P",
                    left: p.shape(),
                    right: (bias.rows(), d1),
                });
            }
            if q.rows() != n1 || q.cols() != bias.cols() {
                return Err(Error::ShapeMismatch {
                    op: "SumLinear term Q",
                    left: q.shape(),
                    right: (n1, bias.cols()),
                });
            }
        }
        Ok(Self {
            terms,
            bias,
            input_shape,
        })
    }

    pub fn terms(&self) -> &[(Matrix, Matrix)] {
        &self.terms
    }

    pub fn bias(&self) -> &Matrix {
        &self.bias
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.bias.shape()
    }

    /// Total number of stored entries across all terms and the bias.
    pub fn stored_entries(&self) -> usize {
        self.bias.rows() * self.bias.cols()
            + self
                .terms
                .iter()
                .map(|(p, q)| p.rows() * p.cols() + q.rows() * q.cols())
                .sum::<usize>()
    }
}

/// Evaluates `Σ P_i Z Q_i + bias`, accumulating every term into one buffer.
pub fn apply_sum_linear(layer: &SumLinear, z: &Matrix) -> Result<Matrix> {
    if z.shape() != layer.input_shape {
        return Err(Error::ShapeMismatch {
            op: "apply_sum_linear",
            left: z.shape(),
            right: layer.input_shape,
        });
    }
    let mut out = layer.bias.clone().into_vec();
    let mut pz = Vec::new();
    for (p, q) in &layer.terms {
        pz.clear();
        pz.resize(p.rows() * z.cols(), 0.0);
        p.matmul_accumulate(z, &mut pz);
        accumulate_product(&pz, p.rows(), z.cols(), q, &mut out);
    }
    let (rows, cols) = layer.bias.shape();
    Matrix::new(rows, cols, out).map_err(|_| Error::NonFinite("apply_sum_linear"))
}

/// The four matrices of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    w_k: Matrix,
    w_q: Matrix,
    w_v: Matrix,
    w_o: Matrix,
}

impl AttentionWeights {
    /// `w_k` and `w_q` must share their row count (the attention dimension). `w_v`
    /// may be rectangular. Remaining compatibility is checked against the input.
    pub fn new(w_k: Matrix, w_q: Matrix, w_v: Matrix, w_o: Matrix) -> Result<Self> {
        if w_k.rows() != w_q.rows() {
            return Err(Error::ShapeMismatch {
                op: "AttentionWeights (W_K vs W_Q rows)",
                left: w_k.shape(),
                right: w_q.shape(),
            });
        }
        if w_v.cols() != w_k.cols() {
            return Err(Error::ShapeMismatch {
                op: "AttentionWeights (W_V vs W_K columns)",
                left: w_v.shape(),
                right: w_k.shape(),
            });
        }
        Ok(Self { w_k, w_q, w_v, w_o })
    }

    pub fn w_k(&self) -> &Matrix {
        &self.w_k
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_v(&self) -> &Matrix {
        &self.w_v
    }

    pub fn w_o(&self) -> &Matrix {
        &self.w_o
    }
}

/// `Softmax((W_K Z_K)^T W_Q Z_Q)`, an `N_K × N_Q` column-stochastic matrix.
pub fn attention_scores(w: &AttentionWeights, z_k: &Matrix, z_q: &Matrix) -> Result<Matrix> {
    let k = w.w_k.matmul(z_k)?;
    let q = w.w_q.matmul(z_q)?;
    let logits = k.transpose().matmul(&q)?;
    Ok(logits.softmax_columns())
}

/// `W_V Z_K Softmax((W_K Z_K)^T W_Q Z_Q) W_O`.
///
/// Softmax acts column by column, so score columns meeting an all-zero row of
/// `W_O` cannot reach the output and are not computed.
pub fn cross_attention(w: &AttentionWeights, z_k: &Matrix, z_q: &Matrix) -> Result<Matrix> {
    if z_q.cols() != w.w_o.rows() {
        return Err(Error::ShapeMismatch {
            op: "cross_attention (W_O)",
            left: z_q.shape(),
            right: w.w_o.shape(),
        });
    }
    let active: Vec<usize> = (0..w.w_o.rows())
        .filter(|&r| w.w_o.row(r).iter().any(|&x| x != 0.0))
        .collect();
    let v = w.w_v.matmul(z_k)?;
    if active.len() == z_q.cols() {
        let scores = attention_scores(w, z_k, z_q)?;
        return v.matmul(&scores)?.matmul(&w.w_o);
    }
    let scores = attention_scores(w, z_k, &z_q.select_columns(&active))?;
    v.matmul(&scores)?.matmul(&w.w_o.select_rows(&active))
}

/// `W_V Z Softmax((W_K Z)^T W_Q Z) W_O`.
pub fn self_attention(w: &AttentionWeights, z: &Matrix) -> Result<Matrix> {
    cross_attention(w, z, z)
}
