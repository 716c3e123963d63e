//! Random compression of a tensor into small replicas.
//!
//! A replica is `Y = Comp(X, U, V, W)` with `Y[l,m,n] = Σ U[l,i] V[m,j] W[n,k] X[i,j,k]`.
//! An ensemble holds `P` triples `(U_p, V_p, W_p)` whose leading `S` rows
//! coincide, which gives every replica's factors a common anchor block for
//! alignment later on.

mod blocked;
mod comp;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use blocked::{comp_blocked, split_blocks, Accumulation, BlockCompressor, BlockGrid, BlockRecord};
pub use comp::{comp, comp_from_factors};
pub(crate) use comp::{mode1_acc, mode2_acc, mode3_acc};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_matrix, rng_from};
use crate::tensor::{Dims, Matrix};

/// Replica count needed for a stable stacked solve:
/// `ceil(max((I−2)/(L−2), J/M, K/N)) + slack`.
///
/// ```
/// use exatensor::compression::compute_replica_count;
/// assert_eq!(compute_replica_count((1000, 1000, 1000), (50, 50, 50), 10).unwrap(), 31);
/// ```
pub fn compute_replica_count(dims: Dims, reduced: Dims, slack: usize) -> Result<usize> {
    let (i, j, k) = dims;
    let (l, m, n) = reduced;
    if l < 3 || m < 3 || n < 3 {
        return Err(Error::usage(format!("reduced dims must be at least 3, got {reduced:?}")));
    }
    if l > i || m > j || n > k {
        return Err(Error::usage(format!(
            "reduced dims {reduced:?} exceed tensor dims {dims:?}"
        )));
    }
    let p = (i - 2)
        .div_ceil(l - 2)
        .max(j.div_ceil(m))
        .max(k.div_ceil(n));
    Ok(p + slack)
}

/// Three-point sparse projection law: `±√s` each with probability
/// `1/(2s)`, zero otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseProjectionSpec {
    pub s: f64,
}

impl SparseProjectionSpec {
    pub fn new(s: f64) -> Result<Self> {
        if !(s >= 1.0) || !s.is_finite() {
            return Err(Error::usage(format!("sparse projection s must be >= 1, got {s}")));
        }
        Ok(SparseProjectionSpec { s })
    }

    /// Largest `s` that keeps the projection's distance statistics, `n/ln n`.
    pub fn max_for(dim: usize) -> f64 {
        if dim < 2 {
            return f64::INFINITY;
        }
        dim as f64 / (dim as f64).ln()
    }

    /// `s = cols/rows` clamped into the valid range for `cols`.
    pub fn for_ratio(rows: usize, cols: usize) -> Self {
        let s = (cols as f64 / rows as f64).clamp(1.0, Self::max_for(cols).max(1.0));
        SparseProjectionSpec { s }
    }

    fn check(&self, cols: usize) -> Result<()> {
        let max = Self::max_for(cols);
        if self.s > max.max(1.0) {
            return Err(Error::usage(format!(
                "sparse projection s={} exceeds {max:.3} for dimension {cols}",
                self.s
            )));
        }
        Ok(())
    }
}

/// i.i.d. standard normal matrix.
pub fn gen_gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    normal_matrix(rows, cols, &mut rng_from(seed))
}

/// Sparse projection matrix with entries from the three-point law.
pub fn gen_sparse_projection(
    rows: usize,
    cols: usize,
    spec: SparseProjectionSpec,
    seed: u64,
) -> Result<Matrix> {
    spec.check(cols)?;
    let mut rng = rng_from(seed);
    let root = spec.s.sqrt();
    let half = 0.5 / spec.s;
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random();
            if u < half {
                root
            } else if u < 2.0 * half {
                -root
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_col_major(rows, cols, data)
}

/// Distribution used for the inner (first-stage) matrices of a two-stage ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InnerKind {
    Gaussian,
    /// Sparse projection; `None` picks `s` from the inner compression ratio.
    Sparse(Option<SparseProjectionSpec>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EnsembleKind {
    Gaussian,
    Sparse(SparseProjectionSpec),
    /// `U_p = U'_p · U` with `U'_p` Gaussian `L × αL` and a single inner `αL × I`.
    TwoStage { ratios: (f64, f64, f64), inner: InnerKind },
}

/// Inner/outer split of a two-stage ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoStageParts {
    /// `outer[p][mode]`, sized `L × αL` etc.
    pub outer: Vec<[Matrix; 3]>,
    /// Shared inner matrices, sized `αL × I` etc.
    pub inner: [Matrix; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionEnsemble {
    seed: u64,
    shared: usize,
    mats: Vec<[Matrix; 3]>,
    two_stage: Option<TwoStageParts>,
}

// sub-stream tags
const TAG_SHARED: u64 = 0x5348_4152;
const TAG_REPLICA: u64 = 0x5245_504c;
const TAG_INNER: u64 = 0x494e_4e52;
const TAG_REFILL: u64 = 0x5245_464c;

fn stream(seed: u64, tag: u64, mode: usize, p: usize) -> u64 {
    derive_seed(derive_seed(seed, tag), ((mode as u64) << 32) | p as u64)
}

/// Gaussian or sparse matrix whose first `shared` rows come from the
/// ensemble-wide shared stream and the rest from replica `p`'s own stream.
fn anchored(
    rows: usize,
    cols: usize,
    shared: usize,
    mode: usize,
    p: usize,
    seed: u64,
    sparse: Option<SparseProjectionSpec>,
) -> Result<Matrix> {
    let draw = |s: u64| -> Result<Matrix> {
        match sparse {
            None => Ok(gen_gaussian(rows, cols, s)),
            Some(spec) => gen_sparse_projection(rows, cols, spec, s),
        }
    };
    let mut m = draw(stream(seed, TAG_REPLICA, mode, p))?;
    if shared > 0 {
        let anchor = draw(stream(seed, TAG_SHARED, mode, 0))?;
        for j in 0..cols {
            m.col_mut(j)[..shared].copy_from_slice(&anchor.col(j)[..shared]);
        }
    }
    Ok(m)
}

impl CompressionEnsemble {
    pub fn count(&self) -> usize {
        self.mats.len()
    }

    pub fn shared(&self) -> usize {
        self.shared
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `[U_p, V_p, W_p]`.
    pub fn replica(&self, p: usize) -> &[Matrix; 3] {
        &self.mats[p]
    }

    pub fn u(&self, p: usize) -> &Matrix {
        &self.mats[p][0]
    }

    pub fn v(&self, p: usize) -> &Matrix {
        &self.mats[p][1]
    }

    pub fn w(&self, p: usize) -> &Matrix {
        &self.mats[p][2]
    }

    pub fn two_stage(&self) -> Option<&TwoStageParts> {
        self.two_stage.as_ref()
    }

    /// Tensor dims this ensemble compresses.
    pub fn input_dims(&self) -> Dims {
        let m = &self.mats[0];
        (m[0].cols(), m[1].cols(), m[2].cols())
    }

    /// Replica dims `(L, M, N)`.
    pub fn reduced_dims(&self) -> Dims {
        let m = &self.mats[0];
        (m[0].rows(), m[1].rows(), m[2].rows())
    }

    /// Matrices the stacked least-squares solve runs against for `mode`:
    /// the full `U_p` for single-stage ensembles, the outer `U'_p` for two-stage ones.
    pub fn stacked_compressors(&self, mode: usize) -> Vec<&Matrix> {
        match &self.two_stage {
            None => self.mats.iter().map(|m| &m[mode]).collect(),
            Some(ts) => ts.outer.iter().map(|m| &m[mode]).collect(),
        }
    }

    /// Keeps only the listed replicas, in the given order.
    pub fn subset(&self, keep: &[usize]) -> CompressionEnsemble {
        CompressionEnsemble {
            seed: self.seed,
            shared: self.shared,
            mats: keep.iter().map(|&p| self.mats[p].clone()).collect(),
            two_stage: self.two_stage.as_ref().map(|ts| TwoStageParts {
                outer: keep.iter().map(|&p| ts.outer[p].clone()).collect(),
                inner: ts.inner.clone(),
            }),
        }
    }
}

/// Redraws every all-zero column of a sparse projection until it has a
/// nonzero; an empty column would leave its coordinate unobservable.
fn fill_empty_columns(u: &mut Matrix, spec: SparseProjectionSpec, seed: u64) {
    let rows = u.rows();
    for j in 0..u.cols() {
        let mut attempt = 0;
        while u.col(j).iter().all(|&x| x == 0.0) {
            let s = derive_seed(seed, ((j as u64) << 20) | attempt);
            let col = gen_sparse_projection(rows, 1, spec, s).expect("spec checked for this matrix");
            u.col_mut(j).copy_from_slice(col.col(0));
            attempt += 1;
        }
    }
}

/// Builds a `count`-replica ensemble compressing `dims` to `reduced`.
pub fn make_ensemble(
    dims: Dims,
    reduced: Dims,
    count: usize,
    shared: usize,
    kind: EnsembleKind,
    seed: u64,
) -> Result<CompressionEnsemble> {
    let d = [dims.0, dims.1, dims.2];
    let r = [reduced.0, reduced.1, reduced.2];
    if count == 0 {
        return Err(Error::usage("ensemble needs at least one replica"));
    }
    if r.iter().zip(&d).any(|(&ri, &di)| ri == 0 || ri > di) {
        return Err(Error::usage(format!(
            "reduced dims {reduced:?} must be positive and at most {dims:?}"
        )));
    }
    let min_rows = *r.iter().min().expect("three modes");
    if shared > min_rows {
        return Err(Error::usage(format!(
            "{shared} shared rows exceed the smallest reduced dim {min_rows}"
        )));
    }

    match kind {
        EnsembleKind::Gaussian | EnsembleKind::Sparse(_) => {
            let sparse = match kind {
                EnsembleKind::Sparse(spec) => Some(spec),
                _ => None,
            };
            let mats = (0..count)
                .map(|p| {
                    Ok([
                        anchored(r[0], d[0], shared, 0, p, seed, sparse)?,
                        anchored(r[1], d[1], shared, 1, p, seed, sparse)?,
                        anchored(r[2], d[2], shared, 2, p, seed, sparse)?,
                    ])
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CompressionEnsemble {
                seed,
                shared,
                mats,
                two_stage: None,
            })
        }
        EnsembleKind::TwoStage { ratios, inner } => {
            let ratio = [ratios.0, ratios.1, ratios.2];
            if ratio.iter().any(|&q| !(q > 1.0)) {
                return Err(Error::usage(format!(
                    "two-stage ratios must all exceed 1, got {ratios:?}"
                )));
            }
            let mid: Vec<usize> = (0..3)
                .map(|m| (ratio[m] * r[m] as f64).round() as usize)
                .collect();
            if (0..3).any(|m| mid[m] > d[m] || mid[m] <= r[m]) {
                return Err(Error::usage(format!(
                    "intermediate dims {mid:?} must lie strictly between {reduced:?} and {dims:?}"
                )));
            }
            let inner_mats: Vec<Matrix> = (0..3)
                .map(|m| {
                    let s = stream(seed, TAG_INNER, m, 0);
                    match inner {
                        InnerKind::Gaussian => Ok(gen_gaussian(mid[m], d[m], s)),
                        InnerKind::Sparse(spec) => {
                            let spec =
                                spec.unwrap_or_else(|| SparseProjectionSpec::for_ratio(mid[m], d[m]));
                            let mut u = gen_sparse_projection(mid[m], d[m], spec, s)?;
                            fill_empty_columns(&mut u, spec, derive_seed(s, TAG_REFILL));
                            Ok(u)
                        }
                    }
                })
                .collect::<Result<_>>()?;
            let inner_arr: [Matrix; 3] = inner_mats.try_into().expect("three modes");
            let mut outer = Vec::with_capacity(count);
            let mut mats = Vec::with_capacity(count);
            for p in 0..count {
                let o: [Matrix; 3] = [
                    anchored(r[0], mid[0], shared, 0, p, seed, None)?,
                    anchored(r[1], mid[1], shared, 1, p, seed, None)?,
                    anchored(r[2], mid[2], shared, 2, p, seed, None)?,
                ];
                mats.push([
                    o[0].matmul(&inner_arr[0])?,
                    o[1].matmul(&inner_arr[1])?,
                    o[2].matmul(&inner_arr[2])?,
                ]);
                outer.push(o);
            }
            Ok(CompressionEnsemble {
                seed,
                shared,
                mats,
                two_stage: Some(TwoStageParts {
                    outer,
                    inner: inner_arr,
                }),
            })
        }
    }
}
