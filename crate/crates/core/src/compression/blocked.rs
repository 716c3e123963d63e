//! Out-of-core compression: the tensor arrives as a stream of blocks and
//! every replica is accumulated block by block.
//!
//! In [`Accumulation::Deterministic`] mode blocks must arrive in grid order
//! (mode-1 block index fastest). The compressor then keeps, per replica, a
//! partially contracted mode-1 slab and mode-2 slab and feeds them forward
//! as soon as a row of blocks completes, which reproduces the exact
//! floating-point operations of [`comp`](super::comp) on the assembled tensor.
//!
//! [`Accumulation::Fast`] accepts blocks in any order, compresses each one
//! independently and merges the per-block replicas with a pairwise tree.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{comp, mode1_acc, mode2_acc, mode3_acc, CompressionEnsemble};
use crate::error::{Error, Result};
use crate::mixed::{comp_mixed, ResidualStorage, SplitMatrix, SplitTensor3};
use crate::tensor::{Dims, Tensor3};

/// Tiling of a tensor into blocks of at most `block` along each mode.
/// Edge blocks are ragged when a dim is not a multiple of the block size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGrid {
    dims: Dims,
    block: Dims,
}

impl BlockGrid {
    pub fn new(dims: Dims, block: Dims) -> Result<Self> {
        let ok = |d: usize, b: usize| b >= 1 && b <= d;
        if !(ok(dims.0, block.0) && ok(dims.1, block.1) && ok(dims.2, block.2)) {
            return Err(Error::usage(format!(
                "block dims {block:?} must be within 1..={dims:?}"
            )));
        }
        Ok(BlockGrid { dims, block })
    }

    /// A grid with a single block covering the whole tensor.
    pub fn whole(dims: Dims) -> Self {
        BlockGrid { dims, block: dims }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn block_dims(&self) -> Dims {
        self.block
    }

    /// Number of blocks along each mode.
    pub fn extents(&self) -> Dims {
        (
            self.dims.0.div_ceil(self.block.0),
            self.dims.1.div_ceil(self.block.1),
            self.dims.2.div_ceil(self.block.2),
        )
    }

    pub fn count(&self) -> usize {
        let (a, b, c) = self.extents();
        a * b * c
    }

    /// Position of a block in grid order.
    pub fn linear(&self, idx: Dims) -> usize {
        let (ea, eb, _) = self.extents();
        idx.0 + ea * (idx.1 + eb * idx.2)
    }

    /// Block indices in grid order, mode-1 fastest.
    pub fn iter(&self) -> impl Iterator<Item = Dims> + '_ {
        let (ea, eb, ec) = self.extents();
        (0..ec).flat_map(move |k| (0..eb).flat_map(move |j| (0..ea).map(move |i| (i, j, k))))
    }

    /// Element ranges covered by block `idx`.
    pub fn ranges(&self, idx: Dims) -> [Range<usize>; 3] {
        let r = |b: usize, d: usize, n: usize| b * d..((b + 1) * d).min(n);
        [
            r(idx.0, self.block.0, self.dims.0),
            r(idx.1, self.block.1, self.dims.1),
            r(idx.2, self.block.2, self.dims.2),
        ]
    }
}

/// One block of the stream: its grid index and its values.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord {
    pub index: Dims,
    pub data: Tensor3,
}

/// Splits an in-memory tensor into grid-ordered blocks.
pub fn split_blocks<'a>(t: &'a Tensor3, grid: &'a BlockGrid) -> impl Iterator<Item = BlockRecord> + 'a {
    grid.iter().map(move |idx| {
        let [ri, rj, rk] = grid.ranges(idx);
        BlockRecord {
            index: idx,
            data: t.block(ri, rj, rk),
        }
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accumulation {
    /// Fixed operation order; bit-identical to unblocked compression.
    #[default]
    Deterministic,
    /// Any block order, per-block replicas merged pairwise.
    Fast,
}

enum Kernel {
    Full,
    Mixed {
        storage: ResidualStorage,
        split: Vec<[SplitMatrix; 3]>,
    },
}

struct Staged {
    z1: Vec<f64>,
    z2: Vec<f64>,
    y: Tensor3,
}

/// Binary-counter pairwise reduction: partial sums of equal weight merge.
#[derive(Default)]
struct Tree {
    stack: Vec<(u32, Tensor3)>,
}

impl Tree {
    fn push(&mut self, t: Tensor3) {
        let mut cur = (0u32, t);
        while let Some((lvl, _)) = self.stack.last() {
            if *lvl != cur.0 {
                break;
            }
            let (lvl, top) = self.stack.pop().expect("checked");
            let merged = top.lin_comb(1.0, &cur.1, 1.0).expect("same dims");
            cur = (lvl + 1, merged);
        }
        self.stack.push(cur);
    }

    fn finish(mut self, dims: Dims) -> Tensor3 {
        let mut acc = match self.stack.pop() {
            Some((_, t)) => t,
            None => return Tensor3::zeros(dims),
        };
        while let Some((_, t)) = self.stack.pop() {
            acc = t.lin_comb(1.0, &acc, 1.0).expect("same dims");
        }
        acc
    }
}

enum State {
    Staged(Vec<Staged>),
    Sequential(Vec<Tensor3>),
    Tree(Vec<Tree>),
}

/// Incremental blocked compressor for every replica of an ensemble.
pub struct BlockCompressor<'e> {
    grid: BlockGrid,
    ensemble: &'e CompressionEnsemble,
    mode: Accumulation,
    kernel: Kernel,
    seen: Vec<bool>,
    next: usize,
    state: State,
}

impl<'e> BlockCompressor<'e> {
    pub fn new(grid: BlockGrid, ensemble: &'e CompressionEnsemble, mode: Accumulation) -> Result<Self> {
        if ensemble.input_dims() != grid.dims() {
            return Err(Error::usage(format!(
                "ensemble compresses {:?} but the grid tiles {:?}",
                ensemble.input_dims(),
                grid.dims()
            )));
        }
        let reduced = ensemble.reduced_dims();
        let p = ensemble.count();
        let state = match mode {
            Accumulation::Deterministic => State::Staged(
                (0..p)
                    .map(|_| Staged {
                        z1: Vec::new(),
                        z2: Vec::new(),
                        y: Tensor3::zeros(reduced),
                    })
                    .collect(),
            ),
            Accumulation::Fast => State::Tree((0..p).map(|_| Tree::default()).collect()),
        };
        Ok(BlockCompressor {
            seen: vec![false; grid.count()],
            grid,
            ensemble,
            mode,
            kernel: Kernel::Full,
            next: 0,
            state,
        })
    }

    /// Switches the per-block kernel to residual-compensated half precision.
    /// Deterministic mode then sums per-block replicas in grid order.
    pub fn with_mixed_precision(mut self, storage: ResidualStorage) -> Result<Self> {
        let split = (0..self.ensemble.count())
            .map(|p| {
                let m = self.ensemble.replica(p);
                Ok([
                    SplitMatrix::split(&m[0], storage)?,
                    SplitMatrix::split(&m[1], storage)?,
                    SplitMatrix::split(&m[2], storage)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        self.kernel = Kernel::Mixed { storage, split };
        if let State::Staged(_) = self.state {
            let reduced = self.ensemble.reduced_dims();
            self.state = State::Sequential(vec![Tensor3::zeros(reduced); self.ensemble.count()]);
        }
        Ok(self)
    }

    pub fn push(&mut self, rec: BlockRecord) -> Result<()> {
        let (ea, eb, ec) = self.grid.extents();
        let idx = rec.index;
        if idx.0 >= ea || idx.1 >= eb || idx.2 >= ec {
            return Err(Error::data(format!("block index {idx:?} outside grid {:?}", (ea, eb, ec))));
        }
        let [ri, rj, rk] = self.grid.ranges(idx);
        let want = (ri.len(), rj.len(), rk.len());
        if rec.data.dims() != want {
            return Err(Error::data(format!(
                "block {idx:?} has dims {:?}, grid expects {want:?}",
                rec.data.dims()
            )));
        }
        let pos = self.grid.linear(idx);
        if self.seen[pos] {
            return Err(Error::data(format!("block {idx:?} delivered twice")));
        }
        if self.mode == Accumulation::Deterministic && pos != self.next {
            return Err(Error::data(format!(
                "deterministic accumulation needs grid order; got block {idx:?} at position {}",
                self.next
            )));
        }
        self.seen[pos] = true;
        self.next += 1;

        let ens = self.ensemble;
        let (l, m, _) = ens.reduced_dims();
        match (&mut self.state, &self.kernel) {
            (State::Staged(states), Kernel::Full) => {
                let (last_i, last_j) = (idx.0 + 1 == ea, idx.1 + 1 == eb);
                let (dj, dk) = (rj.len(), rk.len());
                states.par_iter_mut().enumerate().for_each(|(p, st)| {
                    let [u, v, w] = ens.replica(p);
                    if idx.0 == 0 {
                        st.z1.clear();
                        st.z1.resize(l * dj * dk, 0.0);
                    }
                    if idx.0 == 0 && idx.1 == 0 {
                        st.z2.clear();
                        st.z2.resize(l * m * dk, 0.0);
                    }
                    mode1_acc(&mut st.z1, u, ri.start, &rec.data);
                    if last_i {
                        mode2_acc(&mut st.z2, v, rj.start, &st.z1, l, dj);
                        if last_j {
                            mode3_acc(st.y.as_mut_slice(), w, rk.start, &st.z2, l * m);
                        }
                    }
                });
            }
            (State::Staged(_), Kernel::Mixed { .. }) => unreachable!("mixed uses sequential state"),
            (State::Sequential(ys), kernel) => {
                let parts = block_replicas(ens, kernel, &rec.data, [&ri, &rj, &rk])?;
                for (y, part) in ys.iter_mut().zip(parts) {
                    for (d, s) in y.as_mut_slice().iter_mut().zip(part.as_slice()) {
                        *d += s;
                    }
                }
            }
            (State::Tree(trees), kernel) => {
                let parts = block_replicas(ens, kernel, &rec.data, [&ri, &rj, &rk])?;
                for (tree, part) in trees.iter_mut().zip(parts) {
                    tree.push(part);
                }
            }
        }
        Ok(())
    }

    /// Checks that every block arrived and returns the `P` replicas.
    pub fn finish(self) -> Result<Vec<Tensor3>> {
        if let Some(missing) = self.seen.iter().position(|s| !s) {
            let idx = self.grid.iter().nth(missing).expect("in range");
            return Err(Error::data(format!(
                "block {idx:?} missing ({} of {} received)",
                self.seen.iter().filter(|&&s| s).count(),
                self.seen.len()
            )));
        }
        let reduced = self.ensemble.reduced_dims();
        Ok(match self.state {
            State::Staged(states) => states.into_iter().map(|s| s.y).collect(),
            State::Sequential(ys) => ys,
            State::Tree(trees) => trees.into_iter().map(|t| t.finish(reduced)).collect(),
        })
    }
}

/// Each replica's contribution from one block, computed independently.
fn block_replicas(
    ens: &CompressionEnsemble,
    kernel: &Kernel,
    block: &Tensor3,
    r: [&Range<usize>; 3],
) -> Result<Vec<Tensor3>> {
    match kernel {
        Kernel::Full => (0..ens.count())
            .into_par_iter()
            .map(|p| {
                let [u, v, w] = ens.replica(p);
                comp(
                    block,
                    &u.col_block(r[0].clone()),
                    &v.col_block(r[1].clone()),
                    &w.col_block(r[2].clone()),
                )
            })
            .collect(),
        Kernel::Mixed { storage, split } => {
            let sb = SplitTensor3::split(block, *storage)?;
            split
                .par_iter()
                .map(|[u, v, w]| {
                    comp_mixed(
                        &sb,
                        &u.col_block(r[0].clone()),
                        &v.col_block(r[1].clone()),
                        &w.col_block(r[2].clone()),
                    )
                })
                .collect()
        }
    }
}

/// Compresses a block stream into every replica of `ensemble`.
pub fn comp_blocked(
    blocks: impl IntoIterator<Item = BlockRecord>,
    grid: &BlockGrid,
    ensemble: &CompressionEnsemble,
    mode: Accumulation,
) -> Result<Vec<Tensor3>> {
    let mut c = BlockCompressor::new(grid.clone(), ensemble, mode)?;
    for b in blocks {
        c.push(b)?;
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{make_ensemble, EnsembleKind};
    use crate::rng::{normal_matrix, rng_from};

    fn random_tensor(dims: Dims, seed: u64) -> Tensor3 {
        let n = dims.0 * dims.1 * dims.2;
        Tensor3::from_col_major(dims, normal_matrix(n, 1, &mut rng_from(seed)).into_vec()).unwrap()
    }

    #[test]
    fn grid_tiles_every_element_once() {
        let grid = BlockGrid::new((7, 5, 4), (3, 2, 4)).unwrap();
        assert_eq!(grid.extents(), (3, 3, 1));
        let mut hits = vec![0u8; 7 * 5 * 4];
        for idx in grid.iter() {
            let [ri, rj, rk] = grid.ranges(idx);
            for k in rk.clone() {
                for j in rj.clone() {
                    for i in ri.clone() {
                        hits[i + 7 * (j + 5 * k)] += 1;
                    }
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
        let order: Vec<usize> = grid.iter().map(|i| grid.linear(i)).collect();
        assert_eq!(order, (0..grid.count()).collect::<Vec<_>>());
    }

    #[test]
    fn single_block_equals_comp() {
        let t = random_tensor((5, 6, 4), 1);
        let e = make_ensemble((5, 6, 4), (3, 3, 3), 2, 1, EnsembleKind::Gaussian, 2).unwrap();
        let grid = BlockGrid::whole(t.dims());
        let ys = comp_blocked(split_blocks(&t, &grid), &grid, &e, Accumulation::Deterministic).unwrap();
        for (p, y) in ys.iter().enumerate() {
            assert_eq!(*y, comp(&t, e.u(p), e.v(p), e.w(p)).unwrap());
        }
    }

    #[test]
    fn fast_mode_matches_within_rounding() {
        let t = random_tensor((8, 8, 8), 3);
        let e = make_ensemble((8, 8, 8), (3, 3, 3), 2, 1, EnsembleKind::Gaussian, 4).unwrap();
        let grid = BlockGrid::new((8, 8, 8), (3, 5, 2)).unwrap();
        let mut blocks: Vec<_> = split_blocks(&t, &grid).collect();
        blocks.reverse();
        let ys = comp_blocked(blocks, &grid, &e, Accumulation::Fast).unwrap();
        for (p, y) in ys.iter().enumerate() {
            assert!(y.max_abs_diff(&comp(&t, e.u(p), e.v(p), e.w(p)).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn stream_errors() {
        let t = random_tensor((4, 4, 4), 5);
        let e = make_ensemble((4, 4, 4), (2, 2, 2), 1, 0, EnsembleKind::Gaussian, 6).unwrap();
        let grid = BlockGrid::new((4, 4, 4), (2, 2, 2)).unwrap();
        let blocks: Vec<_> = split_blocks(&t, &grid).collect();

        // missing block
        let r = comp_blocked(blocks[..7].to_vec(), &grid, &e, Accumulation::Fast);
        assert!(matches!(r, Err(Error::Data(_))));

        // duplicate block
        let mut dup = blocks.clone();
        dup.insert(1, blocks[0].clone());
        assert!(matches!(comp_blocked(dup, &grid, &e, Accumulation::Fast), Err(Error::Data(_))));

        // out of order in deterministic mode
        let mut swapped = blocks.clone();
        swapped.swap(0, 1);
        let r = comp_blocked(swapped, &grid, &e, Accumulation::Deterministic);
        assert!(matches!(r, Err(Error::Data(_))));

        // wrong block shape
        let mut bad = blocks.clone();
        bad[0].data = Tensor3::zeros((1, 2, 2));
        assert!(matches!(comp_blocked(bad, &grid, &e, Accumulation::Fast), Err(Error::Data(_))));
    }

    #[test]
    fn grid_rejects_oversized_blocks() {
        assert!(BlockGrid::new((4, 4, 4), (5, 1, 1)).is_err());
        assert!(BlockGrid::new((4, 4, 4), (0, 1, 1)).is_err());
    }
}
