use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_matrix, rng_from};
use crate::tensor::{reconstruct, Dims, FactorTriple, Matrix, Tensor3};

/// Memory the generator may use for a materialized tensor unless told otherwise.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FactorLaw {
    /// i.i.d. N(0, 1) entries.
    Dense,
    /// `nnz` N(0, 1) entries per column at uniformly random rows.
    Sparse { nnz: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: Dims,
    pub rank: usize,
    pub law: FactorLaw,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn dense(dims: Dims, rank: usize, seed: u64) -> Self {
        SyntheticSpec {
            dims,
            rank,
            law: FactorLaw::Dense,
            seed,
        }
    }

    pub fn sparse(dims: Dims, rank: usize, nnz: usize, seed: u64) -> Self {
        SyntheticSpec {
            dims,
            rank,
            law: FactorLaw::Sparse { nnz },
            seed,
        }
    }
}

fn sparse_matrix(rows: usize, cols: usize, nnz: usize, seed: u64) -> Matrix {
    let mut rng = rng_from(seed);
    let mut m = Matrix::zeros(rows, cols);
    for c in 0..cols {
        let mut idx = sample(&mut rng, rows, nnz).into_vec();
        idx.sort_unstable();
        for i in idx {
            m.set(i, c, StandardNormal.sample(&mut rng));
        }
    }
    m
}

/// Seeded random CP factors following `spec`.
///
/// ```
/// use exatensor::pipeline::{generate, SyntheticSpec};
/// let f = generate(&SyntheticSpec::sparse((500, 500, 500), 3, 5, 1)).unwrap();
/// let nnz = f.a().col(0).iter().filter(|x| **x != 0.0).count();
/// assert_eq!(nnz, 5);
/// ```
pub fn generate(spec: &SyntheticSpec) -> Result<FactorTriple> {
    let d = [spec.dims.0, spec.dims.1, spec.dims.2];
    if d.contains(&0) || spec.rank == 0 {
        return Err(Error::usage(format!(
            "dims {:?} and rank {} must be positive",
            spec.dims, spec.rank
        )));
    }
    let mats: Vec<Matrix> = (0..3)
        .map(|m| {
            let s = derive_seed(spec.seed, m as u64);
            match spec.law {
                FactorLaw::Dense => Ok(normal_matrix(d[m], spec.rank, &mut rng_from(s))),
                FactorLaw::Sparse { nnz } => {
                    if nnz == 0 || nnz > d[m] {
                        return Err(Error::usage(format!(
                            "{nnz} nonzeros per column do not fit dimension {}",
                            d[m]
                        )));
                    }
                    Ok(sparse_matrix(d[m], spec.rank, nnz, s))
                }
            }
        })
        .collect::<Result<_>>()?;
    let [a, b, c]: [Matrix; 3] = mats.try_into().expect("three modes");
    FactorTriple::new(a, b, c)
}

/// Dense tensor of `f`, refused when it would need more than `budget` bytes.
pub fn materialize(f: &FactorTriple, budget: usize) -> Result<Tensor3> {
    let (i, j, k) = f.dims();
    let bytes = i
        .checked_mul(j)
        .and_then(|x| x.checked_mul(k))
        .and_then(|x| x.checked_mul(8));
    match bytes {
        Some(b) if b <= budget => Ok(reconstruct(f)),
        _ => Err(Error::usage(format!(
            "a dense {i}×{j}×{k} tensor exceeds the {budget}-byte memory budget; \
             keep it in factored form or raise the budget"
        ))),
    }
}
