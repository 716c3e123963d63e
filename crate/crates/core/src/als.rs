//! CP decomposition by alternating least squares.
//!
//! One sweep updates each mode matrix in turn from the matricized tensor
//! times the Khatri-Rao product of the other two (MTTKRP), followed by a
//! solve against the Hadamard product of their Gram matrices:
//!
//! ```text
//! A ← X₁ (C ⊙ B) (CᵀC ∗ BᵀB)⁺
//! B ← X₂ (C ⊙ A) (CᵀC ∗ AᵀA)⁺
//! C ← X₃ (B ⊙ A) (BᵀB ∗ AᵀA)⁺
//! ```
//!
//! After the A and B updates their columns are rescaled to unit norm and
//! the norms move into C, which leaves the modelled tensor unchanged and
//! keeps the per-sweep error nonincreasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::rng::{normal_matrix, rng_from};
use crate::tensor::{dot, reconstruct, FactorTriple, Matrix, Tensor3};

/// Cutoff relative to the largest singular value of the Gram product.
const PINV_RCOND: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the relative error moves by less than this between sweeps.
    pub tol: f64,
    pub seed: u64,
}

impl AlsConfig {
    pub fn new(rank: usize) -> Self {
        AlsConfig {
            rank,
            max_iters: 500,
            tol: 1e-10,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::usage("ALS rank must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::usage("ALS max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::usage("ALS tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlsResult {
    pub factors: FactorTriple,
    pub iters: usize,
    /// Relative error after each sweep; `error_history.len() == iters`.
    pub error_history: Vec<f64>,
    pub converged: bool,
}

impl AlsResult {
    pub fn final_error(&self) -> f64 {
        *self.error_history.last().expect("at least one sweep")
    }
}

/// Runs ALS on `t` from a seeded Gaussian start. Failing to converge
/// within `max_iters` is reported through [`AlsResult::converged`], not as
/// an error.
pub fn cp_als(t: &Tensor3, cfg: &AlsConfig) -> Result<AlsResult> {
    check(t, cfg)?;
    let (ni, nj, nk) = t.dims();
    let r = cfg.rank;
    let mut rng = rng_from(cfg.seed);
    let a = normal_matrix(ni, r, &mut rng);
    let b = normal_matrix(nj, r, &mut rng);
    let c = normal_matrix(nk, r, &mut rng);
    sweeps(t, cfg, a, b, c)
}

/// Runs ALS on `t` starting from `init`; `cfg.seed` is unused.
pub fn cp_als_from(t: &Tensor3, cfg: &AlsConfig, init: &FactorTriple) -> Result<AlsResult> {
    check(t, cfg)?;
    if init.dims() != t.dims() || init.rank() != cfg.rank {
        return Err(Error::usage(format!(
            "start has dims {:?} and rank {}, expected {:?} and rank {}",
            init.dims(),
            init.rank(),
            t.dims(),
            cfg.rank
        )));
    }
    let (a, b, c) = init.clone().into_parts();
    sweeps(t, cfg, a, b, c)
}

fn check(t: &Tensor3, cfg: &AlsConfig) -> Result<()> {
    cfg.validate()?;
    if !t.is_finite() {
        return Err(Error::data("ALS input contains non-finite values"));
    }
    let (ni, nj, nk) = t.dims();
    let bound = (nj * nk).min(ni * nk).min(ni * nj);
    if cfg.rank > bound {
        return Err(Error::usage(format!(
            "rank {} exceeds the smallest unfolding width {bound}",
            cfg.rank
        )));
    }
    Ok(())
}

fn sweeps(t: &Tensor3, cfg: &AlsConfig, mut a: Matrix, mut b: Matrix, mut c: Matrix) -> Result<AlsResult> {
    let mut prev = rel_error_parts(t, &a, &b, &c);
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        let m = mttkrp(t, 1, &a, &b, &c);
        a = m.matmul(&pinv(&c.gram().hadamard(&b.gram())?, PINV_RCOND))?;
        absorb_norms(&mut a, &mut c);

        let m = mttkrp(t, 2, &a, &b, &c);
        b = m.matmul(&pinv(&c.gram().hadamard(&a.gram())?, PINV_RCOND))?;
        absorb_norms(&mut b, &mut c);

        let m = mttkrp(t, 3, &a, &b, &c);
        c = m.matmul(&pinv(&b.gram().hadamard(&a.gram())?, PINV_RCOND))?;

        let err = rel_error_parts(t, &a, &b, &c);
        history.push(err);
        if (prev - err).abs() < cfg.tol {
            converged = true;
            break;
        }
        prev = err;
    }

    Ok(AlsResult {
        factors: FactorTriple::new(a, b, c)?,
        iters: history.len(),
        error_history: history,
        converged,
    })
}

fn absorb_norms(unit: &mut Matrix, carrier: &mut Matrix) {
    for col in 0..unit.cols() {
        let n = crate::tensor::norm2(unit.col(col));
        if n > 0.0 {
            unit.col_mut(col).iter_mut().for_each(|x| *x /= n);
            carrier.col_mut(col).iter_mut().for_each(|x| *x *= n);
        }
    }
}

fn rel_error_parts(t: &Tensor3, a: &Matrix, b: &Matrix, c: &Matrix) -> f64 {
    let f = FactorTriple::new(a.clone(), b.clone(), c.clone()).expect("ranks agree");
    relative_error(t, &f).expect("dims agree")
}

/// `‖t − reconstruct(f)‖ / ‖t‖`, or `‖reconstruct(f)‖` when `t` is zero.
pub fn relative_error(t: &Tensor3, f: &FactorTriple) -> Result<f64> {
    if t.dims() != f.dims() {
        return Err(Error::usage(format!(
            "tensor dims {:?} do not match factor dims {:?}",
            t.dims(),
            f.dims()
        )));
    }
    let rec = reconstruct(f);
    let diff: f64 = t
        .as_slice()
        .iter()
        .zip(rec.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let tn = t.frobenius_norm();
    Ok(if tn == 0.0 { diff } else { diff / tn })
}

/// Matricized tensor times Khatri-Rao product for `mode` in 1..=3, e.g.
/// `X₁ (C ⊙ B)` for mode 1. The mode's own factor is ignored.
pub fn mttkrp(t: &Tensor3, mode: usize, a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
    let (ni, nj, nk) = t.dims();
    let r = a.cols();
    let data = t.as_slice();
    match mode {
        1 => {
            let mut m = Matrix::zeros(ni, r);
            for k in 0..nk {
                for j in 0..nj {
                    let o = ni * (j + nj * k);
                    let x = &data[o..o + ni];
                    for col in 0..r {
                        let w = b.get(j, col) * c.get(k, col);
                        if w != 0.0 {
                            for (d, &v) in m.col_mut(col).iter_mut().zip(x) {
                                *d += w * v;
                            }
                        }
                    }
                }
            }
            m
        }
        2 | 3 => {
            let rows = if mode == 2 { nj } else { nk };
            let mut m = Matrix::zeros(rows, r);
            for k in 0..nk {
                for j in 0..nj {
                    let o = ni * (j + nj * k);
                    let x = &data[o..o + ni];
                    for col in 0..r {
                        let xa = dot(x, a.col(col));
                        if mode == 2 {
                            let v = m.get(j, col) + xa * c.get(k, col);
                            m.set(j, col, v);
                        } else {
                            let v = m.get(k, col) + xa * b.get(j, col);
                            m.set(k, col, v);
                        }
                    }
                }
            }
            m
        }
        _ => panic!("mttkrp mode must be 1, 2 or 3"),
    }
}
