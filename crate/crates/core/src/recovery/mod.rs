//! Alignment of per-replica factors and recovery of the global factors.
//!
//! Each replica's mode-1 factor is `A_p = U_p·A·Π_p·Σ_p`. Dividing every
//! column by its pivot in the shared leading rows removes `Σ_p` up to a
//! replica-independent `Σ`, and matching the shared rows against replica 0
//! removes `Π_p` up to a common `Π`. The stacked system
//! `[A_1; …; A_P] = [U_1; …; U_P]·AΠΣ` is then solved by least squares (or
//! by matching pursuit when `A` is sparse), and `ΠΣ` is finally read off a
//! small sampled sub-tensor decomposed directly.

mod hungarian;
mod omp;

use serde::{Deserialize, Serialize};

pub use hungarian::{hungarian_match, max_assignment};
pub use omp::{omp_recover, OmpConfig};

use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::tensor::{dot, norm2, FactorTriple, Matrix};

/// Column permutation plus diagonal scaling `ΠΣ` with
/// `(m·ΠΣ)[:, r] = m[:, perm[r]] · scale[r]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermScale {
    pub perm: Vec<usize>,
    pub scale: Vec<f64>,
}

impl PermScale {
    pub fn identity(r: usize) -> Self {
        PermScale {
            perm: (0..r).collect(),
            scale: vec![1.0; r],
        }
    }

    pub fn new(perm: Vec<usize>, scale: Vec<f64>) -> Result<Self> {
        let ps = PermScale { perm, scale };
        ps.validate()?;
        Ok(ps)
    }

    pub fn rank(&self) -> usize {
        self.perm.len()
    }

    fn validate(&self) -> Result<()> {
        let r = self.perm.len();
        if self.scale.len() != r {
            return Err(Error::usage(format!(
                "permutation of length {r} with {} scales",
                self.scale.len()
            )));
        }
        let mut seen = vec![false; r];
        for &p in &self.perm {
            if p >= r || std::mem::replace(&mut seen[p], true) {
                return Err(Error::usage(format!("{:?} is not a permutation", self.perm)));
            }
        }
        if let Some(s) = self.scale.iter().find(|s| **s == 0.0 || !s.is_finite()) {
            return Err(Error::usage(format!("scale entries must be finite and nonzero, got {s}")));
        }
        Ok(())
    }
}

/// `m·ΠΣ`.
pub fn apply_forward(m: &Matrix, ps: &PermScale) -> Result<Matrix> {
    ps.validate()?;
    check_cols(m, ps)?;
    let cols: Vec<Vec<f64>> = (0..ps.rank())
        .map(|r| m.col(ps.perm[r]).iter().map(|x| x * ps.scale[r]).collect())
        .collect();
    Matrix::from_columns(m.rows(), &cols)
}

/// `m·(ΠΣ)⁻¹ = m·Σ⁻¹·Πᵀ`, undoing [`apply_forward`].
///
/// ```
/// use exatensor::{recovery::{apply_forward, apply_recovery, PermScale}, Matrix};
/// let ps = PermScale::new(vec![1, 0], vec![2.0, 3.0]).unwrap();
/// let m = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
/// let f = apply_forward(&m, &ps).unwrap();
/// assert_eq!(f.as_slice(), &[4.0, 3.0]);
/// assert_eq!(apply_recovery(&f, &ps).unwrap(), m);
/// ```
pub fn apply_recovery(m: &Matrix, ps: &PermScale) -> Result<Matrix> {
    ps.validate()?;
    check_cols(m, ps)?;
    let mut cols = vec![Vec::new(); ps.rank()];
    for r in 0..ps.rank() {
        cols[ps.perm[r]] = m.col(r).iter().map(|x| x / ps.scale[r]).collect();
    }
    Matrix::from_columns(m.rows(), &cols)
}

fn check_cols(m: &Matrix, ps: &PermScale) -> Result<()> {
    if m.cols() != ps.rank() {
        return Err(Error::usage(format!(
            "matrix has {} columns, permutation has {}",
            m.cols(),
            ps.rank()
        )));
    }
    Ok(())
}

/// Divides every column by its largest-magnitude entry among the first `s`
/// rows, keeping the sign. Returns the normalized matrix and the pivots.
///
/// ```
/// use exatensor::{recovery::normalize_shared, Matrix};
/// let m = Matrix::from_rows(&[&[1.0], &[-2.0], &[4.0], &[8.0]]).unwrap();
/// let (n, piv) = normalize_shared(&m, 3).unwrap();
/// assert_eq!(piv, vec![4.0]);
/// assert_eq!(n.col(0), &[0.25, -0.5, 1.0, 2.0]);
/// ```
pub fn normalize_shared(m: &Matrix, s: usize) -> Result<(Matrix, Vec<f64>)> {
    if s == 0 || s > m.rows() {
        return Err(Error::usage(format!(
            "shared row count {s} must be within 1..={}",
            m.rows()
        )));
    }
    let mut out = m.clone();
    let mut pivots = Vec::with_capacity(m.cols());
    for c in 0..m.cols() {
        let head = &m.col(c)[..s];
        let mut p = 0.0f64;
        for &x in head {
            if x.abs() > p.abs() {
                p = x;
            }
        }
        if p == 0.0 || !p.is_finite() {
            return Err(Error::DegenerateColumn {
                column: c,
                reason: format!("no nonzero pivot in the first {s} rows"),
            });
        }
        out.col_mut(c).iter_mut().for_each(|x| *x /= p);
        pivots.push(p);
    }
    Ok((out, pivots))
}

/// Outcome of [`align_replicas`].
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// Aligned triples of the surviving replicas, in input order.
    pub factors: Vec<FactorTriple>,
    /// Input positions of the survivors.
    pub kept: Vec<usize>,
    /// Input positions of dropped replicas.
    pub dropped: Vec<usize>,
}

fn normalize_triple(f: &FactorTriple, s: usize) -> Result<FactorTriple> {
    f.try_map(|_, m| normalize_shared(m, s).map(|(n, _)| n))
}

fn permute_triple(f: &FactorTriple, perm: &[usize]) -> Result<FactorTriple> {
    let ps = PermScale::new(perm.to_vec(), vec![1.0; perm.len()])?;
    f.try_map(|_, m| apply_forward(m, &ps))
}

/// Normalizes every mode of every replica on its first `s` rows and permutes
/// each replica so its mode-1 shared block best matches the reference (the
/// first replica that survives normalization). Replicas with degenerate
/// columns are dropped; fewer than `min_survivors` left is an error.
pub fn align_replicas(factors: &[FactorTriple], s: usize, min_survivors: usize) -> Result<Alignment> {
    let Some(first) = factors.first() else {
        return Err(Error::usage("no replicas to align"));
    };
    let rank = first.rank();
    if factors.iter().any(|f| f.rank() != rank) {
        return Err(Error::usage("replicas disagree on rank"));
    }
    let mut normalized = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (p, f) in factors.iter().enumerate() {
        match normalize_triple(f, s) {
            Ok(n) => {
                normalized.push(n);
                kept.push(p);
            }
            Err(Error::DegenerateColumn { .. }) => dropped.push(p),
            Err(e) => return Err(e),
        }
    }
    if kept.len() < min_survivors.max(1) {
        return Err(Error::InsufficientReplicas {
            survived: kept.len(),
            required: min_survivors.max(1),
        });
    }
    let reference = normalized[0].a().row_block(0..s);
    let factors = normalized
        .iter()
        .map(|f| {
            let perm = hungarian_match(&reference, &f.a().row_block(0..s))?;
            permute_triple(f, &perm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Alignment {
        factors,
        kept,
        dropped,
    })
}

/// Least-squares solution `G` of `[F_1; …; F_P] = [U_1; …; U_P]·G` by
/// pivoted QR on the stacked system.
pub fn solve_stacked_ls(stacked_factors: &[Matrix], stacked_compressors: &[&Matrix]) -> Result<Matrix> {
    if stacked_factors.len() != stacked_compressors.len() || stacked_factors.is_empty() {
        return Err(Error::usage(format!(
            "{} factor blocks for {} compressors",
            stacked_factors.len(),
            stacked_compressors.len()
        )));
    }
    let cols = stacked_compressors[0].cols();
    for (f, u) in stacked_factors.iter().zip(stacked_compressors) {
        if f.rows() != u.rows() || u.cols() != cols {
            return Err(Error::usage(format!(
                "factor block {:?} does not match compressor {:?}",
                f.shape(),
                u.shape()
            )));
        }
    }
    let rows: usize = stacked_compressors.iter().map(|u| u.rows()).sum();
    if rows < cols {
        return Err(Error::IllPosed {
            rank: rows,
            required: cols,
        });
    }
    let u: Vec<Matrix> = stacked_compressors.iter().map(|u| (*u).clone()).collect();
    lstsq(&Matrix::vstack(&u)?, &Matrix::vstack(stacked_factors)?)
}

/// Column similarity after fixing each column's sign by its pivot and
/// scaling it to unit length: `w[a][b] = cos(x_a, y_b)` with signs aligned.
fn similarity(x: &Matrix, y: &Matrix) -> Result<Vec<f64>> {
    let xs = unit_pivoted(x)?;
    let ys = unit_pivoted(y)?;
    let r = x.cols();
    let mut w = vec![0.0; r * r];
    for a in 0..r {
        for b in 0..r {
            w[a * r + b] = dot(&xs[a], &ys[b]);
        }
    }
    Ok(w)
}

fn unit_pivoted(m: &Matrix) -> Result<Vec<Vec<f64>>> {
    let (n, _) = normalize_shared(m, m.rows())?;
    Ok((0..n.cols())
        .map(|c| {
            let len = norm2(n.col(c));
            n.col(c).iter().map(|x| x / len).collect()
        })
        .collect())
}

fn ls_scales(global: &Matrix, sampled: &Matrix, perm: &[usize]) -> Result<Vec<f64>> {
    perm.iter()
        .enumerate()
        .map(|(r, &p)| {
            let s = sampled.col(p);
            let ss = dot(s, s);
            let k = dot(s, global.col(r)) / ss;
            if ss == 0.0 || k == 0.0 || !k.is_finite() {
                return Err(Error::DegenerateColumn {
                    column: r,
                    reason: "cannot determine scale".into(),
                });
            }
            Ok(k)
        })
        .collect()
}

fn check_pair(global: &Matrix, sampled: &Matrix) -> Result<()> {
    if global.shape() != sampled.shape() {
        return Err(Error::usage(format!(
            "global head {:?} and sampled factors {:?} differ in shape",
            global.shape(),
            sampled.shape()
        )));
    }
    Ok(())
}

/// `ΠΣ` with `global_head ≈ sampled·ΠΣ`: the permutation from matching
/// sign-normalized columns, each scale the least-squares ratio of the
/// matched columns.
pub fn recover_perm_scale(global_head: &Matrix, sampled: &Matrix) -> Result<PermScale> {
    check_pair(global_head, sampled)?;
    let r = global_head.cols();
    let perm = max_assignment(&similarity(global_head, sampled)?, r);
    let scale = ls_scales(global_head, sampled, &perm)?;
    PermScale::new(perm, scale)
}

/// Like [`recover_perm_scale`] for all three modes at once, with a single
/// permutation maximizing the summed similarity of the three modes.
pub fn recover_perm_scale_joint(global: [&Matrix; 3], sampled: [&Matrix; 3]) -> Result<[PermScale; 3]> {
    let r = global[0].cols();
    let mut w = vec![0.0; r * r];
    for m in 0..3 {
        check_pair(global[m], sampled[m])?;
        if global[m].cols() != r {
            return Err(Error::usage("modes disagree on rank"));
        }
        for (acc, x) in w.iter_mut().zip(similarity(global[m], sampled[m])?) {
            *acc += x;
        }
    }
    let perm = max_assignment(&w, r);
    let ps = |m: usize| -> Result<PermScale> {
        PermScale::new(perm.clone(), ls_scales(global[m], sampled[m], &perm)?)
    };
    Ok([ps(0)?, ps(1)?, ps(2)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::gen_gaussian;

    fn triple(seed: u64) -> FactorTriple {
        FactorTriple::new(gen_gaussian(6, 3, seed), gen_gaussian(5, 3, seed + 1), gen_gaussian(4, 3, seed + 2))
            .unwrap()
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[&[-3.0], &[1.0]]).unwrap();
        let (n, p) = normalize_shared(&m, 2).unwrap();
        assert_eq!(p, vec![-3.0]);
        assert_eq!(n.col(0), &[1.0, -1.0 / 3.0]);

        let m = Matrix::from_rows(&[&[1.0], &[0.5]]).unwrap();
        assert_eq!(normalize_shared(&m, 2).unwrap().0, m);

        let z = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 1.0], &[5.0, 1.0]]).unwrap();
        assert!(matches!(
            normalize_shared(&z, 2),
            Err(Error::DegenerateColumn { column: 0, .. })
        ));
        assert!(normalize_shared(&z, 4).unwrap_err().is_usage());
    }

    #[test]
    fn permscale_validation() {
        assert!(PermScale::new(vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(PermScale::new(vec![0, 1], vec![1.0, 0.0]).is_err());
        assert!(PermScale::new(vec![0, 2], vec![1.0, 1.0]).is_err());
        assert!(PermScale::new(vec![1, 0], vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn identical_replicas_align_to_normalized_input() {
        let f = triple(1);
        let al = align_replicas(&[f.clone(), f.clone(), f.clone()], 2, 3).unwrap();
        let n = normalize_triple(&f, 2).unwrap();
        assert!(al.factors.iter().all(|g| *g == n));
        assert!(al.dropped.is_empty());
    }

    #[test]
    fn permuted_scaled_replica_realigns() {
        let f = triple(4);
        let ps = PermScale::new(vec![2, 0, 1], vec![-2.0, 0.5, 3.0]).unwrap();
        let g = f.try_map(|_, m| apply_forward(m, &ps)).unwrap();
        let al = align_replicas(&[f, g], 3, 2).unwrap();
        for m in 0..3 {
            let d = al.factors[0].mode(m).max_abs_diff(al.factors[1].mode(m));
            assert!(d < 1e-10, "mode {m}: {d}");
        }
    }

    #[test]
    fn degenerate_replica_is_dropped() {
        let f = triple(7);
        let mut a = f.a().clone();
        a.col_mut(1).iter_mut().for_each(|x| *x = 0.0);
        let bad = FactorTriple::new(a, f.b().clone(), f.c().clone()).unwrap();
        let al = align_replicas(&[f.clone(), bad, f.clone()], 2, 2).unwrap();
        assert_eq!(al.kept, vec![0, 2]);
        assert_eq!(al.dropped, vec![1]);
        let r = align_replicas(&[f.clone(), triple(7).try_map(|_, m| Ok(m.scaled(0.0))).unwrap()], 2, 2);
        assert!(matches!(r, Err(Error::InsufficientReplicas { survived: 1, required: 2 })));
    }

    #[test]
    fn alignment_is_idempotent() {
        let f = triple(10);
        let ps = PermScale::new(vec![1, 2, 0], vec![1.5, -1.0, 0.25]).unwrap();
        let g = f.try_map(|_, m| apply_forward(m, &ps)).unwrap();
        let once = align_replicas(&[f, g], 3, 1).unwrap();
        let twice = align_replicas(&once.factors, 3, 1).unwrap();
        assert_eq!(once.factors, twice.factors);
    }

    #[test]
    fn stacked_ls_examples() {
        let a1 = gen_gaussian(5, 2, 1);
        let u = Matrix::identity(5).scaled(2.0);
        let g = solve_stacked_ls(&[a1.clone()], &[&u]).unwrap();
        assert!(g.max_abs_diff(&a1.scaled(0.5)) < 1e-14);

        let a = gen_gaussian(20, 3, 2);
        let us: Vec<Matrix> = (0..4).map(|p| gen_gaussian(8, 20, 10 + p)).collect();
        let fs: Vec<Matrix> = us.iter().map(|u| u.matmul(&a).unwrap()).collect();
        let refs: Vec<&Matrix> = us.iter().collect();
        let g = solve_stacked_ls(&fs, &refs).unwrap();
        assert!(g.max_abs_diff(&a) < 1e-9);

        let r = solve_stacked_ls(&fs[..2], &refs[..2]);
        assert!(matches!(r, Err(Error::IllPosed { .. })));
    }

    #[test]
    fn perm_scale_recovery() {
        let g = gen_gaussian(8, 4, 3);
        let id = recover_perm_scale(&g, &g).unwrap();
        assert_eq!(id.perm, vec![0, 1, 2, 3]);
        assert!(id.scale.iter().all(|s| (s - 1.0).abs() < 1e-15));

        // sampled = global·(ΠΣ)⁻¹, so global = sampled·ΠΣ
        let ps = PermScale::new(vec![3, 1, 0, 2], vec![2.0, -0.5, 7.0, 1.25]).unwrap();
        let sampled = apply_recovery(&g, &ps).unwrap();
        let got = recover_perm_scale(&g, &sampled).unwrap();
        assert_eq!(got.perm, ps.perm);
        for (a, b) in got.scale.iter().zip(&ps.scale) {
            assert!((a - b).abs() < 1e-10);
        }

        let g1 = gen_gaussian(5, 1, 9);
        let s1 = g1.scaled(-4.0);
        let got = recover_perm_scale(&g1, &s1).unwrap();
        assert_eq!(got.perm, vec![0]);
        assert!((got.scale[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn recovery_round_trip() {
        let m = gen_gaussian(6, 4, 11);
        let ps = PermScale::new(vec![2, 3, 1, 0], vec![0.3, -8.0, 1.0, 2.5]).unwrap();
        let back = apply_recovery(&apply_forward(&m, &ps).unwrap(), &ps).unwrap();
        assert!(back.max_abs_diff(&m) <= 1e-12);
        assert_eq!(apply_recovery(&m, &PermScale::identity(4)).unwrap(), m);
    }
}
