//! Dense column-major matrices and third-order tensors, plus the
//! multilinear kernels the rest of the crate is built from.
//!
//! Storage is column-major everywhere. A tensor with dims `(I, J, K)` keeps
//! element `(i, j, k)` at offset `i + I*j + I*J*k`, so the mode-1 unfolding
//! `X₁[i, j + J*k]` is the stored buffer reinterpreted as an `I × JK` matrix.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense column-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices. Handy for small literals.
    ///
    /// ```
    /// use exatensor::Matrix;
    /// let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    /// assert_eq!(m.get(1, 0), 3.0);
    /// ```
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::usage("ragged rows"));
        }
        Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::usage("column length mismatch"));
        }
        Ok(Matrix {
            rows,
            cols: columns.len(),
            data: columns.concat(),
        })
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.rows * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + self.rows * j] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::usage(format!(
                "matmul shape mismatch: {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for (p, &b) in other.col(j).iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                for (d, &a) in dst.iter_mut().zip(self.col(p)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without forming the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::usage(format!(
                "t_matmul shape mismatch: ({}x{})ᵀ · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    /// Gram matrix `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        self.t_matmul(self).expect("gram is always conformable")
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::usage("hadamard shape mismatch"));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::usage("subtraction shape mismatch"));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.cols).map(|j| norm2(self.col(j))).collect()
    }

    /// Rows `range` as a new matrix.
    pub fn row_block(&self, range: Range<usize>) -> Matrix {
        assert!(range.end <= self.rows, "row range out of bounds");
        Matrix::from_fn(range.len(), self.cols, |i, j| self.get(range.start + i, j))
    }

    /// Columns `range` as a new matrix.
    pub fn col_block(&self, range: Range<usize>) -> Matrix {
        assert!(range.end <= self.cols, "column range out of bounds");
        Matrix {
            rows: self.rows,
            cols: range.len(),
            data: self.data[range.start * self.rows..range.end * self.rows].to_vec(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), self.cols, |i, j| self.get(idx[i], j))
    }

    /// Vertical concatenation `[m₀; m₁; …]`.
    pub fn vstack(blocks: &[Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::usage("vstack column mismatch"));
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            for j in 0..cols {
                out.col_mut(j)[offset..offset + b.rows].copy_from_slice(b.col(j));
            }
            offset += b.rows;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dims of a third-order tensor.
pub type Dims = (usize, usize, usize);

/// Dense third-order tensor, column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: Dims) -> Self {
        Tensor3 {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    /// Wraps a column-major buffer. Rejects wrong lengths and non-finite values.
    pub fn from_col_major(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::usage(format!(
                "tensor {dims:?} needs {} values, got {}",
                dims.0 * dims.1 * dims.2,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite tensor entry at offset {pos}")));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for k in 0..dims.2 {
            for j in 0..dims.1 {
                for i in 0..dims.0 {
                    data.push(f(i, j, k));
                }
            }
        }
        Tensor3 { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the sub-tensor `[ri, rj, rk]`.
    pub fn block(&self, ri: Range<usize>, rj: Range<usize>, rk: Range<usize>) -> Tensor3 {
        let (i0, j0, k0) = (ri.start, rj.start, rk.start);
        Tensor3::from_fn((ri.len(), rj.len(), rk.len()), |i, j, k| {
            self.get(i0 + i, j0 + j, k0 + k)
        })
    }

    /// Gathers the sub-tensor at arbitrary index sets.
    pub fn gather(&self, ii: &[usize], jj: &[usize], kk: &[usize]) -> Tensor3 {
        Tensor3::from_fn((ii.len(), jj.len(), kk.len()), |i, j, k| {
            self.get(ii[i], jj[j], kk[k])
        })
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Tensor3, beta: f64) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::usage("tensor dims mismatch"));
        }
        Ok(Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_mode(mode: usize) -> Result<()> {
    if (1..=3).contains(&mode) {
        Ok(())
    } else {
        Err(Error::usage(format!("mode must be 1, 2 or 3, got {mode}")))
    }
}

/// Mode-`n` unfolding with the remaining indices ordered as in the
/// column-major buffer: `X₁[i, j+J·k]`, `X₂[j, i+I·k]`, `X₃[k, i+I·j]`.
pub fn matricize(t: &Tensor3, mode: usize) -> Result<Matrix> {
    check_mode(mode)?;
    let (ni, nj, nk) = t.dims;
    Ok(match mode {
        1 => Matrix {
            rows: ni,
            cols: nj * nk,
            data: t.data.clone(),
        },
        2 => {
            let mut m = Matrix::zeros(nj, ni * nk);
            for k in 0..nk {
                for j in 0..nj {
                    for i in 0..ni {
                        m.set(j, i + ni * k, t.get(i, j, k));
                    }
                }
            }
            m
        }
        _ => {
            // X₃ᵀ is the stored buffer viewed as IJ × K.
            let view = Matrix {
                rows: ni * nj,
                cols: nk,
                data: t.data.clone(),
            };
            view.transpose()
        }
    })
}

/// Inverse of [`matricize`].
pub fn fold(m: &Matrix, mode: usize, dims: Dims) -> Result<Tensor3> {
    check_mode(mode)?;
    let (ni, nj, nk) = dims;
    let expect = match mode {
        1 => (ni, nj * nk),
        2 => (nj, ni * nk),
        _ => (nk, ni * nj),
    };
    if m.shape() != expect {
        return Err(Error::usage(format!(
            "cannot fold {:?} matrix along mode {mode} into {dims:?}",
            m.shape()
        )));
    }
    let t = match mode {
        1 => Tensor3::from_fn(dims, |i, j, k| m.get(i, j + nj * k)),
        2 => Tensor3::from_fn(dims, |i, j, k| m.get(j, i + ni * k)),
        _ => Tensor3::from_fn(dims, |i, j, k| m.get(k, i + ni * j)),
    };
    Ok(t)
}

/// Column-wise Kronecker product: column `r` is `a[:, r] ⊗ b[:, r]`, so
/// row `i·b.rows + j` holds `a[i, r]·b[j, r]`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::usage(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            a.cols, b.cols
        )));
    }
    let rows = a.rows * b.rows;
    let mut out = Matrix::zeros(rows, a.cols);
    for r in 0..a.cols {
        let (ca, cb) = (a.col(r), b.col(r));
        let dst = out.col_mut(r);
        for (i, &x) in ca.iter().enumerate() {
            for (j, &y) in cb.iter().enumerate() {
                dst[i * b.rows + j] = x * y;
            }
        }
    }
    Ok(out)
}

/// Kronecker product of two matrices.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |i, j| {
        a.get(i / br, j / bc) * b.get(i % br, j % bc)
    })
}

/// Outer product `a ∘ b ∘ c` of three vectors.
pub fn outer(a: &[f64], b: &[f64], c: &[f64]) -> Tensor3 {
    Tensor3::from_fn((a.len(), b.len(), c.len()), |i, j, k| a[i] * b[j] * c[k])
}

/// The mode matrices of a rank-`R` CP model.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTriple {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

impl FactorTriple {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        if a.cols != b.cols || b.cols != c.cols {
            return Err(Error::usage(format!(
                "factor column counts differ: {}, {}, {}",
                a.cols, b.cols, c.cols
            )));
        }
        if a.cols == 0 {
            return Err(Error::usage("rank must be at least 1"));
        }
        Ok(FactorTriple { a, b, c })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    /// Factor for mode 0, 1 or 2.
    pub fn mode(&self, m: usize) -> &Matrix {
        match m {
            0 => &self.a,
            1 => &self.b,
            2 => &self.c,
            _ => panic!("mode index {m} out of range"),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.cols
    }

    pub fn dims(&self) -> Dims {
        (self.a.rows, self.b.rows, self.c.rows)
    }

    pub fn into_parts(self) -> (Matrix, Matrix, Matrix) {
        (self.a, self.b, self.c)
    }

    /// Applies `f` to every mode matrix.
    pub fn try_map(&self, mut f: impl FnMut(usize, &Matrix) -> Result<Matrix>) -> Result<Self> {
        FactorTriple::new(f(0, &self.a)?, f(1, &self.b)?, f(2, &self.c)?)
    }

    /// Value of the model at one index, without materializing the tensor.
    pub fn entry(&self, i: usize, j: usize, k: usize) -> f64 {
        (0..self.rank())
            .map(|r| self.a.get(i, r) * self.b.get(j, r) * self.c.get(k, r))
            .sum()
    }

    /// Sub-tensor of the model at the given index sets.
    pub fn gather(&self, ii: &[usize], jj: &[usize], kk: &[usize]) -> Tensor3 {
        reconstruct(&FactorTriple {
            a: self.a.select_rows(ii),
            b: self.b.select_rows(jj),
            c: self.c.select_rows(kk),
        })
    }
}

/// Materializes `Σ_r a_r ∘ b_r ∘ c_r`.
pub fn reconstruct(f: &FactorTriple) -> Tensor3 {
    let (ni, nj, nk) = f.dims();
    let mut t = Tensor3::zeros((ni, nj, nk));
    // Each (j, k) fibre is A · (b_j ∗ c_k).
    let mut w = vec![0.0; f.rank()];
    for k in 0..nk {
        for j in 0..nj {
            for (r, wr) in w.iter_mut().enumerate() {
                *wr = f.b.get(j, r) * f.c.get(k, r);
            }
            let o = ni * (j + nj * k);
            let fibre = &mut t.data[o..o + ni];
            for (r, &wr) in w.iter().enumerate() {
                if wr == 0.0 {
                    continue;
                }
                for (x, &a) in fibre.iter_mut().zip(f.a.col(r)) {
                    *x += a * wr;
                }
            }
        }
    }
    t
}

/// Mean squared error between two equally sized tensors.
pub fn mse(x: &Tensor3, y: &Tensor3) -> Result<f64> {
    if x.dims != y.dims {
        return Err(Error::usage(format!(
            "mse dims mismatch: {:?} vs {:?}",
            x.dims, y.dims
        )));
    }
    let n = x.data.len() as f64;
    Ok(x.data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}
