//! Compression-based CP decomposition of large third-order tensors.
//!
//! A tensor too large to decompose directly is multiplied along every mode
//! by random matrices into many small replicas. Each replica is decomposed
//! by alternating least squares, the replica factors are aligned through
//! rows the compression matrices share, and the full-size factors are
//! recovered by stacked least squares (or matching pursuit for sparse
//! factors). A small sub-tensor sampled from the original fixes the
//! remaining column order and scaling.
//!
//! ```
//! use exatensor::pipeline::{decompose, evaluate, generate, PipelineConfig, SyntheticSpec, Truth};
//!
//! let truth = generate(&SyntheticSpec::dense((30, 30, 30), 2, 7)).unwrap();
//! let cfg = PipelineConfig::new((10, 10, 10), 2);
//! let (found, _metrics) = decompose(&truth, &cfg).unwrap();
//! let e = evaluate(&Truth::Factors(&truth), &found, None).unwrap();
//! assert!(e.factor_errors.unwrap().iter().all(|&x| x < 1e-6));
//! ```

pub mod als;
pub mod compression;
pub mod error;
pub mod linalg;
pub mod mixed;
pub mod pipeline;
pub mod recovery;
pub mod rng;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, FactorTriple, Matrix, Tensor3};
