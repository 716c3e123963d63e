//! Software-emulated half-precision compression with first-order residual
//! compensation.
//!
//! Every operand is split as `x = h + e` with `h` the binary16 rounding of
//! `x`. A tensor-core style product multiplies binary16 operands and
//! accumulates in full precision. Expanding `Comp(X, U, V, W)` over the
//! splits and keeping only the terms with at most one residual factor gives
//!
//! ```text
//! Comp(Xh, Uh, Vh, Wh) + Comp(Xh, Ue, Vh, Wh) + Comp(Xh, Uh, Ve, Wh)
//!                      + Comp(Xh, Uh, Vh, We) + Comp(Xe, Uh, Vh, Wh)
//! ```
//!
//! which cancels the first-order rounding error of the plain half product.

mod f16;

pub use f16::{round_to_f16, F16, F16_MAX, F16_MIN_POSITIVE};

use serde::{Deserialize, Serialize};

use crate::compression::comp;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Matrix, Tensor3};

/// Exponent scale applied before a residual is itself rounded to binary16.
pub const RESIDUAL_SCALE: f64 = 2048.0;

/// How the residual part of a split is kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualStorage {
    /// Exact `x − h` in f64.
    #[default]
    Full,
    /// `(x − h)·2¹¹` rounded to binary16.
    Half,
}

/// One value split into its binary16 rounding and the rounding residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitValue {
    pub half: F16,
    pub residual: f64,
    /// `residual·2¹¹` in binary16; underflows silently to zero or subnormal.
    pub scaled_residual: F16,
}

impl SplitValue {
    pub fn half_value(&self) -> f64 {
        self.half.to_f64()
    }

    /// Residual recovered from its scaled binary16 form.
    pub fn half_residual(&self) -> f64 {
        self.scaled_residual.to_f64() / RESIDUAL_SCALE
    }
}

/// Splits `x` into binary16 payload and residual.
///
/// ```
/// use exatensor::mixed::fp16_split;
/// let s = fp16_split(1.5).unwrap();
/// assert_eq!((s.half_value(), s.residual), (1.5, 0.0));
/// ```
pub fn fp16_split(x: f64) -> Result<SplitValue> {
    let half = F16::from_f64(x)?;
    let residual = x - half.to_f64();
    let scaled_residual = F16::from_f64(residual * RESIDUAL_SCALE)?;
    Ok(SplitValue {
        half,
        residual,
        scaled_residual,
    })
}

/// Matrix of binary16 values.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<F16>,
}

impl HalfMatrix {
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Ok(HalfMatrix {
            rows: m.rows(),
            cols: m.cols(),
            bits: m.as_slice().iter().map(|&x| F16::from_f64(x)).collect::<Result<_>>()?,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_col_major(self.rows, self.cols, self.bits.iter().map(|h| h.to_f64()).collect())
            .expect("shape")
    }
}

/// Product of two binary16 matrices accumulated in f64, in increasing
/// inner index for every output element.
pub fn half_gemm(a: &HalfMatrix, b: &HalfMatrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::usage(format!(
            "half_gemm shape mismatch: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    a.to_matrix().matmul(&b.to_matrix())
}

/// Residual part of a split array.
#[derive(Clone, Debug, PartialEq)]
enum Residual {
    Full(Vec<f64>),
    /// Scaled by [`RESIDUAL_SCALE`].
    Half(Vec<F16>),
}

impl Residual {
    fn split(data: &[f64], storage: ResidualStorage) -> Result<(Vec<F16>, Residual)> {
        let parts = data.iter().map(|&x| fp16_split(x)).collect::<Result<Vec<_>>>()?;
        let half = parts.iter().map(|s| s.half).collect();
        let res = match storage {
            ResidualStorage::Full => Residual::Full(parts.iter().map(|s| s.residual).collect()),
            ResidualStorage::Half => Residual::Half(parts.iter().map(|s| s.scaled_residual).collect()),
        };
        Ok((half, res))
    }

    /// Values as they enter the product (still scaled for `Half`), and the
    /// factor that unwinds the scale afterwards.
    fn operand(&self) -> (Vec<f64>, f64) {
        match self {
            Residual::Full(v) => (v.clone(), 1.0),
            Residual::Half(h) => (h.iter().map(|x| x.to_f64()).collect(), 1.0 / RESIDUAL_SCALE),
        }
    }

    fn zeroed(&self) -> Residual {
        match self {
            Residual::Full(v) => Residual::Full(vec![0.0; v.len()]),
            Residual::Half(h) => Residual::Half(vec![F16::ZERO; h.len()]),
        }
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Residual {
        match self {
            Residual::Full(v) => Residual::Full(v[range].to_vec()),
            Residual::Half(h) => Residual::Half(h[range].to_vec()),
        }
    }
}

/// A matrix split into binary16 payload and residual.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMatrix {
    rows: usize,
    cols: usize,
    half: Vec<F16>,
    residual: Residual,
}

impl SplitMatrix {
    pub fn split(m: &Matrix, storage: ResidualStorage) -> Result<Self> {
        let (half, residual) = Residual::split(m.as_slice(), storage)?;
        Ok(SplitMatrix {
            rows: m.rows(),
            cols: m.cols(),
            half,
            residual,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn half(&self) -> Matrix {
        Matrix::from_col_major(self.rows, self.cols, self.half.iter().map(|h| h.to_f64()).collect())
            .expect("shape")
    }

    fn residual_operand(&self) -> (Matrix, f64) {
        let (v, s) = self.residual.operand();
        (Matrix::from_col_major(self.rows, self.cols, v).expect("shape"), s)
    }

    /// Same payload with every residual set to zero.
    pub fn without_residual(&self) -> Self {
        SplitMatrix {
            residual: self.residual.zeroed(),
            ..self.clone()
        }
    }

    /// Columns `range`.
    pub fn col_block(&self, range: std::ops::Range<usize>) -> Self {
        let r = range.start * self.rows..range.end * self.rows;
        SplitMatrix {
            rows: self.rows,
            cols: range.len(),
            half: self.half[r.clone()].to_vec(),
            residual: self.residual.slice(r),
        }
    }
}

/// A tensor split into binary16 payload and residual.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitTensor3 {
    dims: Dims,
    half: Vec<F16>,
    residual: Residual,
}

impl SplitTensor3 {
    pub fn split(t: &Tensor3, storage: ResidualStorage) -> Result<Self> {
        let (half, residual) = Residual::split(t.as_slice(), storage)?;
        Ok(SplitTensor3 {
            dims: t.dims(),
            half,
            residual,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn half(&self) -> Tensor3 {
        Tensor3::from_col_major(self.dims, self.half.iter().map(|h| h.to_f64()).collect())
            .expect("finite binary16 values")
    }

    fn residual_operand(&self) -> (Tensor3, f64) {
        let (v, s) = self.residual.operand();
        (Tensor3::from_col_major(self.dims, v).expect("finite"), s)
    }

    pub fn without_residual(&self) -> Self {
        SplitTensor3 {
            residual: self.residual.zeroed(),
            ..self.clone()
        }
    }
}

/// Residual-compensated compression: the five first-order terms summed in
/// order, each residual term's scale unwound before it is added.
pub fn comp_mixed(
    t: &SplitTensor3,
    u: &SplitMatrix,
    v: &SplitMatrix,
    w: &SplitMatrix,
) -> Result<Tensor3> {
    let (xh, uh, vh, wh) = (t.half(), u.half(), v.half(), w.half());
    let (xe, sx) = t.residual_operand();
    let (ue, su) = u.residual_operand();
    let (ve, sv) = v.residual_operand();
    let (we, sw) = w.residual_operand();

    let mut y = comp(&xh, &uh, &vh, &wh)?;
    let terms = [
        (comp(&xh, &ue, &vh, &wh)?, su),
        (comp(&xh, &uh, &ve, &wh)?, sv),
        (comp(&xh, &uh, &vh, &we)?, sw),
        (comp(&xe, &uh, &vh, &wh)?, sx),
    ];
    for (term, scale) in terms {
        for (d, &s) in y.as_mut_slice().iter_mut().zip(term.as_slice()) {
            *d += s * scale;
        }
    }
    Ok(y)
}

/// Compression with every operand rounded to binary16 and no residual terms.
pub fn comp_naive_half(t: &Tensor3, u: &Matrix, v: &Matrix, w: &Matrix) -> Result<Tensor3> {
    let xh = Tensor3::from_col_major(
        t.dims(),
        t.as_slice().iter().map(|&x| round_to_f16(x)).collect::<Result<_>>()?,
    )?;
    let round = |m: &Matrix| HalfMatrix::from_matrix(m).map(|h| h.to_matrix());
    comp(&xh, &round(u)?, &round(v)?, &round(w)?)
}
