//! Dense row-major `f64` matrices with just enough algebra for the attention
//! constructions: products, block assembly, column-wise softmax and sequence
//! flattening.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major real matrix. Entries are finite after every public operation.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn column_vector(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute row sum, the operator norm induced by the vector max-norm.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape("add", other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape("sub", other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Standard matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        self.matmul_accumulate(rhs, &mut out.data);
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matmul"));
        }
        Ok(out)
    }

    /// `out += self · rhs` on a row-major buffer of shape `self.rows × rhs.cols`.
    /// i-k-j order; zero entries of `self` are skipped, which matters for the
    /// selector-heavy block matrices of the constructions.
    pub(crate) fn matmul_accumulate(&self, rhs: &Matrix, out: &mut [f64]) {
        accumulate_product(&self.data, self.rows, self.cols, rhs, out);
    }

    /// The columns listed in `cols`, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    /// The rows listed in `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `out += A · rhs` for a row-major `A` of shape `a_rows × a_cols`.
pub(crate) fn accumulate_product(a: &[f64], a_rows: usize, a_cols: usize, rhs: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(a_cols, rhs.rows);
    debug_assert_eq!(a.len(), a_rows * a_cols);
    debug_assert_eq!(out.len(), a_rows * rhs.cols);
    let n = rhs.cols;
    for i in 0..a_rows {
        let out_row = &mut out[i * n..(i + 1) * n];
        for k in 0..a_cols {
            let x = a[i * a_cols + k];
            if x == 0.0 {
                continue;
            }
            let rhs_row = &rhs.data[k * n..(k + 1) * n];
            for (o, b) in out_row.iter_mut().zip(rhs_row) {
                *o += x * b;
            }
        }
    }
}

impl Matrix {

    /// Column-wise softmax: every column of the result is a probability vector.
    ///
    /// Each column is shifted by its maximum before exponentiation, so logits of
    /// magnitude far beyond `ln(f64::MAX)` are handled.
    pub fn softmax_columns(&self) -> Matrix {
        let (rows, cols) = self.shape();
        let mut col_max = vec![f64::NEG_INFINITY; cols];
        for r in 0..rows {
            for (m, v) in col_max.iter_mut().zip(self.row(r)) {
                *m = m.max(*v);
            }
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut col_sum = vec![0.0; cols];
        for r in 0..rows {
            let src = self.row(r);
            let dst = &mut out.data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                let e = (src[c] - col_max[c]).exp();
                dst[c] = e;
                col_sum[c] += e;
            }
        }
        for r in 0..rows {
            let dst = &mut out.data[r * cols..(r + 1) * cols];
            for (v, s) in dst.iter_mut().zip(&col_sum) {
                *v /= s;
            }
        }
        out
    }

    /// Stacks the columns (tokens) of a `d × n` sequence into a `dn × 1` column.
    pub fn flatten_sequence(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Matrix {
            rows: self.data.len(),
            cols: 1,
            data,
        }
    }

    /// Inverse of [`Matrix::flatten_sequence`]: reshapes a length-`dn` vector
    /// column-major into a `d × n` sequence.
    pub fn unflatten_sequence(values: &[f64], d: usize, n: usize) -> Result<Matrix> {
        if values.len() != d * n {
            return Err(Error::LengthMismatch {
                what: "flattened sequence",
                expected: d * n,
                got: values.len(),
            });
        }
        Matrix::from_fn(d, n, |r, c| values[c * d + r])
    }

    /// Concatenates a grid of blocks into one matrix.
    pub fn assemble_blocks(layout: &[Vec<&Matrix>]) -> Result<Matrix> {
        if layout.is_empty() || layout[0].is_empty() {
            return Err(Error::invalid("empty block layout"));
        }
        let block_cols = layout[0].len();
        let col_widths: Vec<usize> = layout[0].iter().map(|b| b.cols).collect();
        let mut row_heights = Vec::with_capacity(layout.len());
        for (i, row) in layout.iter().enumerate() {
            if row.len() != block_cols {
                return Err(Error::RaggedBlocks {
                    row: i,
                    col: row.len().min(block_cols),
                    detail: format!("layout row has {} blocks, expected {block_cols}", row.len()),
                });
            }
            let height = row[0].rows;
            for (j, block) in row.iter().enumerate() {
                if block.rows != height {
                    return Err(Error::RaggedBlocks {
                        row: i,
                        col: j,
                        detail: format!("block has {} rows, layout row needs {height}", block.rows),
                    });
                }
                if block.cols != col_widths[j] {
                    return Err(Error::RaggedBlocks {
                        row: i,
                        col: j,
                        detail: format!(
                            "block has {} columns, layout column needs {}",
                            block.cols, col_widths[j]
                        ),
                    });
                }
            }
            row_heights.push(height);
        }
        let total_rows: usize = row_heights.iter().sum();
        let total_cols: usize = col_widths.iter().sum();
        let mut out = Matrix::zeros(total_rows, total_cols);
        let mut r0 = 0;
        for (row, height) in layout.iter().zip(&row_heights) {
            let mut c0 = 0;
            for block in row {
                for r in 0..block.rows {
                    let dst = (r0 + r) * total_cols + c0;
                    out.data[dst..dst + block.cols].copy_from_slice(block.row(r));
                }
                c0 += block.cols;
            }
            r0 += height;
        }
        Ok(out)
    }
}
