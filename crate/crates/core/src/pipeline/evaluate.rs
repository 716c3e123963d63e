use serde::{Deserialize, Serialize};

use super::source::TensorSource;
use crate::error::{Error, Result};
use crate::recovery::{apply_recovery, recover_perm_scale_joint};
use crate::tensor::{mse, Dims, FactorTriple};

/// Reference a recovered model is scored against.
pub enum Truth<'a> {
    Factors(&'a FactorTriple),
    Tensor(&'a dyn TensorSource),
}

impl Truth<'_> {
    fn dims(&self) -> Dims {
        match self {
            Truth::Factors(f) => f.dims(),
            Truth::Tensor(t) => t.dims(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `‖Â − A‖/‖A‖` per mode after resolving column order and scale;
    /// present only when the truth is a factor triple.
    pub factor_errors: Option<[f64; 3]>,
    /// Mean squared reconstruction error over the leading corner.
    pub mse: f64,
    pub corner: Dims,
}

/// Default corner edge used for the reconstruction MSE.
pub const DEFAULT_CORNER: usize = 32;

/// Scores `recovered` against `truth`. The CP model is unique only up to
/// a shared column permutation and per-mode scalings, so for factor truth
/// that ambiguity is matched away before the per-mode errors are taken.
pub fn evaluate(truth: &Truth, recovered: &FactorTriple, corner: Option<usize>) -> Result<Evaluation> {
    let dims = truth.dims();
    if dims != recovered.dims() {
        return Err(Error::usage(format!(
            "recovered factors are {:?}, truth is {dims:?}",
            recovered.dims()
        )));
    }
    let b = corner.unwrap_or(DEFAULT_CORNER).max(1);
    let cd = (b.min(dims.0), b.min(dims.1), b.min(dims.2));
    let idx = |n: usize| (0..n).collect::<Vec<_>>();
    let (ii, jj, kk) = (idx(cd.0), idx(cd.1), idx(cd.2));
    let truth_corner = match truth {
        Truth::Factors(f) => f.gather(&ii, &jj, &kk),
        Truth::Tensor(t) => t.gather(&ii, &jj, &kk)?,
    };
    let mse = mse(&truth_corner, &recovered.gather(&ii, &jj, &kk))?;

    let factor_errors = match truth {
        Truth::Factors(f) => {
            if f.rank() != recovered.rank() {
                return Err(Error::usage(format!(
                    "recovered rank {} differs from true rank {}",
                    recovered.rank(),
                    f.rank()
                )));
            }
            let ps = recover_perm_scale_joint(
                [recovered.a(), recovered.b(), recovered.c()],
                [f.a(), f.b(), f.c()],
            )?;
            let mut errs = [0.0; 3];
            for (m, e) in errs.iter_mut().enumerate() {
                let aligned = apply_recovery(recovered.mode(m), &ps[m])?;
                *e = aligned.sub(f.mode(m))?.frobenius_norm() / f.mode(m).frobenius_norm();
            }
            Some(errs)
        }
        Truth::Tensor(_) => None,
    };
    Ok(Evaluation {
        factor_errors,
        mse,
        corner: cd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::gen_gaussian;
    use crate::recovery::{apply_forward, PermScale};

    fn truth() -> FactorTriple {
        FactorTriple::new(gen_gaussian(12, 3, 1), gen_gaussian(10, 3, 2), gen_gaussian(8, 3, 3)).unwrap()
    }

    #[test]
    fn exact_recovery_scores_zero() {
        let f = truth();
        let e = evaluate(&Truth::Factors(&f), &f, None).unwrap();
        assert_eq!(e.factor_errors, Some([0.0; 3]));
        assert_eq!(e.mse, 0.0);
        assert_eq!(e.corner, (12, 10, 8));
    }

    #[test]
    fn permuted_scaled_recovery_scores_zero() {
        let f = truth();
        let perm = vec![2, 0, 1];
        let scales = [vec![2.0, -1.0, 0.5], vec![0.25, 4.0, -1.0], vec![2.0, -0.25, -2.0]];
        let g = f
            .try_map(|m, x| apply_forward(x, &PermScale::new(perm.clone(), scales[m].clone()).unwrap()))
            .unwrap();
        let e = evaluate(&Truth::Factors(&f), &g, Some(5)).unwrap();
        for err in e.factor_errors.unwrap() {
            assert!(err < 1e-14, "{err}");
        }
        assert!(e.mse < 1e-26);
    }

    #[test]
    fn unrelated_factors_mse_is_sum_of_variances() {
        let dims = (40, 40, 40);
        let f = FactorTriple::new(gen_gaussian(40, 2, 1), gen_gaussian(40, 2, 2), gen_gaussian(40, 2, 3)).unwrap();
        let g = FactorTriple::new(gen_gaussian(40, 2, 4), gen_gaussian(40, 2, 5), gen_gaussian(40, 2, 6)).unwrap();
        let e = evaluate(&Truth::Factors(&f), &g, Some(40)).unwrap();
        assert_eq!(e.corner, dims);
        let mut direct = 0.0;
        for k in 0..40 {
            for j in 0..40 {
                for i in 0..40 {
                    direct += (f.entry(i, j, k) - g.entry(i, j, k)).powi(2);
                }
            }
        }
        direct /= 64000.0;
        assert!((e.mse - direct).abs() <= 1e-12 * direct);
        // entries of each model have variance R = 2, so about 4 in total
        assert!((2.0..6.0).contains(&e.mse), "mse {}", e.mse);
    }

    #[test]
    fn dim_mismatch() {
        let f = truth();
        let g = FactorTriple::new(gen_gaussian(11, 3, 1), gen_gaussian(10, 3, 2), gen_gaussian(8, 3, 3)).unwrap();
        assert!(evaluate(&Truth::Factors(&f), &g, None).unwrap_err().is_usage());
    }
}
