use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::tensor::{dot, norm2, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmpConfig {
    /// Maximum nonzeros per recovered column.
    pub sparsity: usize,
    /// Stop once `‖residual‖ ≤ residual_tol · ‖measured column‖`.
    pub residual_tol: f64,
}

impl OmpConfig {
    pub fn new(sparsity: usize) -> Self {
        OmpConfig {
            sparsity,
            residual_tol: 1e-9,
        }
    }

    fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.sparsity == 0 {
            return Err(Error::usage("OMP sparsity must be at least 1"));
        }
        if self.sparsity >= rows || self.sparsity > cols {
            return Err(Error::usage(format!(
                "OMP sparsity {} must be below the {rows} measurements and at most the {cols} atoms",
                self.sparsity
            )));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::usage("OMP residual_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// Sparse solution of `dictionary · x = measured` column by column with
/// orthogonal matching pursuit. The Gram matrix of the active atoms is
/// kept as a Cholesky factor that grows by one row per selected atom.
///
/// ```
/// use exatensor::{recovery::{omp_recover, OmpConfig}, Matrix};
/// let s = std::f64::consts::FRAC_1_SQRT_2;
/// let d = Matrix::from_rows(&[&[1.0, 0.0, s], &[0.0, 1.0, s]]).unwrap();
/// let y = Matrix::from_rows(&[&[2.0 * s], &[2.0 * s]]).unwrap();
/// let x = omp_recover(&y, &d, &OmpConfig::new(1)).unwrap();
/// assert!((x.get(2, 0) - 2.0).abs() < 1e-12);
/// assert_eq!((x.get(0, 0), x.get(1, 0)), (0.0, 0.0));
/// ```
pub fn omp_recover(measured: &Matrix, dictionary: &Matrix, cfg: &OmpConfig) -> Result<Matrix> {
    let (rows, atoms) = dictionary.shape();
    if measured.rows() != rows {
        return Err(Error::usage(format!(
            "measurements have {} rows, dictionary has {rows}",
            measured.rows()
        )));
    }
    cfg.validate(rows, atoms)?;
    let norms = dictionary.column_norms();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::usage(format!("dictionary column {j} is zero")));
    }
    let cols: Vec<Vec<f64>> = (0..measured.cols())
        .into_par_iter()
        .map(|r| omp_column(measured.col(r), dictionary, &norms, cfg))
        .collect();
    Matrix::from_columns(atoms, &cols)
}

fn omp_column(y: &[f64], d: &Matrix, norms: &[f64], cfg: &OmpConfig) -> Vec<f64> {
    let atoms = d.cols();
    let k_max = cfg.sparsity;
    let mut x = vec![0.0; atoms];
    let y_norm = norm2(y);
    if y_norm == 0.0 {
        return x;
    }
    let stop = cfg.residual_tol * y_norm;

    let mut active: Vec<usize> = Vec::with_capacity(k_max);
    let mut in_set = vec![false; atoms];
    // lower Cholesky factor of the active Gram matrix, row-major with stride k_max
    let mut chol = vec![0.0; k_max * k_max];
    let mut rhs: Vec<f64> = Vec::with_capacity(k_max);
    let mut coef: Vec<f64> = Vec::new();
    let mut resid = y.to_vec();

    while active.len() < k_max && norm2(&resid) > stop {
        let mut best = None;
        let mut best_score = -1.0;
        for j in 0..atoms {
            if in_set[j] {
                continue;
            }
            let score = dot(d.col(j), &resid).abs() / norms[j];
            if score > best_score {
                best_score = score;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };

        // new Cholesky row: solve L w = D_Aᵀ d_j, then the diagonal
        let n = active.len();
        let dj = d.col(j);
        let mut w = vec![0.0; n];
        for a in 0..n {
            let mut s = dot(d.col(active[a]), dj);
            for b in 0..a {
                s -= chol[a * k_max + b] * w[b];
            }
            w[a] = s / chol[a * k_max + a];
        }
        let diag2 = norms[j] * norms[j] - w.iter().map(|v| v * v).sum::<f64>();
        if !(diag2 > (1e-12 * norms[j]).powi(2)) {
            // atom lies in the span of the active set
            break;
        }
        chol[n * k_max..n * k_max + n].copy_from_slice(&w);
        chol[n * k_max + n] = diag2.sqrt();
        active.push(j);
        in_set[j] = true;
        rhs.push(dot(dj, y));

        let m = active.len();
        let mut packed = vec![0.0; m * m];
        for a in 0..m {
            packed[a * m..a * m + a + 1].copy_from_slice(&chol[a * k_max..a * k_max + a + 1]);
        }
        coef = cholesky_solve(&packed, m, &rhs);
        resid.copy_from_slice(y);
        for (&atom, &c) in active.iter().zip(&coef) {
            for (r, &v) in resid.iter_mut().zip(d.col(atom)) {
                *r -= c * v;
            }
        }
    }
    for (&atom, &c) in active.iter().zip(&coef) {
        x[atom] = c;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::gen_gaussian;

    #[test]
    fn identity_dictionary_returns_measurement() {
        let y = Matrix::from_rows(&[&[0.0, 1.5], &[3.0, 0.0], &[0.0, 0.0], &[-2.0, 0.0]]).unwrap();
        let x = omp_recover(&y, &Matrix::identity(4), &OmpConfig::new(2)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn full_rank_fit_reaches_tolerance() {
        // L − 1 independent atoms and a measurement in their span
        let d = gen_gaussian(6, 5, 3);
        let y = d.matmul(&gen_gaussian(5, 2, 4)).unwrap();
        let cfg = OmpConfig::new(5);
        let x = omp_recover(&y, &d, &cfg).unwrap();
        let r = d.matmul(&x).unwrap().sub(&y).unwrap();
        for c in 0..2 {
            assert!(norm2(r.col(c)) <= cfg.residual_tol * norm2(y.col(c)));
        }
    }

    #[test]
    fn config_errors() {
        let d = Matrix::identity(3);
        let y = Matrix::zeros(3, 1);
        assert!(omp_recover(&y, &d, &OmpConfig::new(0)).unwrap_err().is_usage());
        assert!(omp_recover(&y, &d, &OmpConfig::new(3)).unwrap_err().is_usage());
        let mut z = Matrix::identity(3);
        z.set(1, 1, 0.0);
        assert!(omp_recover(&y, &z, &OmpConfig::new(1)).unwrap_err().is_usage());
    }

    #[test]
    fn zero_measurement_gives_zero() {
        let d = gen_gaussian(5, 8, 1);
        let x = omp_recover(&Matrix::zeros(5, 2), &d, &OmpConfig::new(2)).unwrap();
        assert_eq!(x, Matrix::zeros(8, 2));
    }
}
