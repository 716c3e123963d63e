use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{Dims, FactorTriple, Tensor3};

/// Anything the pipeline can read a tensor from: an in-memory tensor, a
/// CP model kept in factored form, or a tensor file read block by block.
pub trait TensorSource: Sync {
    fn dims(&self) -> Dims;

    /// The dense sub-tensor over the given index ranges.
    fn block(&self, ri: Range<usize>, rj: Range<usize>, rk: Range<usize>) -> Result<Tensor3>;

    /// Entries at the Cartesian product of three index lists.
    fn gather(&self, ii: &[usize], jj: &[usize], kk: &[usize]) -> Result<Tensor3>;

    /// Generating factors when the source is an exact CP model.
    fn factors(&self) -> Option<&FactorTriple> {
        None
    }
}

pub(crate) fn check_ranges(dims: Dims, ri: &Range<usize>, rj: &Range<usize>, rk: &Range<usize>) -> Result<()> {
    if ri.end > dims.0 || rj.end > dims.1 || rk.end > dims.2 || ri.is_empty() || rj.is_empty() || rk.is_empty() {
        return Err(Error::usage(format!(
            "block {ri:?} × {rj:?} × {rk:?} is empty or outside {dims:?}"
        )));
    }
    Ok(())
}

pub(crate) fn check_indices(dims: Dims, ii: &[usize], jj: &[usize], kk: &[usize]) -> Result<()> {
    let bad = |idx: &[usize], n: usize| idx.is_empty() || idx.iter().any(|&i| i >= n);
    if bad(ii, dims.0) || bad(jj, dims.1) || bad(kk, dims.2) {
        return Err(Error::usage(format!("sample indices empty or outside {dims:?}")));
    }
    Ok(())
}

impl TensorSource for Tensor3 {
    fn dims(&self) -> Dims {
        Tensor3::dims(self)
    }

    fn block(&self, ri: Range<usize>, rj: Range<usize>, rk: Range<usize>) -> Result<Tensor3> {
        check_ranges(Tensor3::dims(self), &ri, &rj, &rk)?;
        Ok(Tensor3::block(self, ri, rj, rk))
    }

    fn gather(&self, ii: &[usize], jj: &[usize], kk: &[usize]) -> Result<Tensor3> {
        check_indices(Tensor3::dims(self), ii, jj, kk)?;
        Ok(Tensor3::gather(self, ii, jj, kk))
    }
}

impl TensorSource for FactorTriple {
    fn dims(&self) -> Dims {
        FactorTriple::dims(self)
    }

    fn block(&self, ri: Range<usize>, rj: Range<usize>, rk: Range<usize>) -> Result<Tensor3> {
        check_ranges(FactorTriple::dims(self), &ri, &rj, &rk)?;
        let v = |r: Range<usize>| r.collect::<Vec<_>>();
        Ok(FactorTriple::gather(self, &v(ri), &v(rj), &v(rk)))
    }

    fn gather(&self, ii: &[usize], jj: &[usize], kk: &[usize]) -> Result<Tensor3> {
        check_indices(FactorTriple::dims(self), ii, jj, kk)?;
        Ok(FactorTriple::gather(self, ii, jj, kk))
    }

    fn factors(&self) -> Option<&FactorTriple> {
        Some(self)
    }
}
