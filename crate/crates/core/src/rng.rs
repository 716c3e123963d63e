//! Seed plumbing. Every random draw in the crate goes through a ChaCha8
//! stream keyed by a `u64`, and independent sub-streams are derived by
//! mixing a stream tag into the parent seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Matrix;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_col_major(rows, cols, data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_distinct() {
        let s: Vec<u64> = (0..100).map(|t| derive_seed(7, t)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), s.len());
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
