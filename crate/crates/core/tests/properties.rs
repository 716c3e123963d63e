use exatensor::compression::{comp, comp_blocked, gen_gaussian, make_ensemble, split_blocks, Accumulation, BlockGrid, EnsembleKind};
use exatensor::mixed::{fp16_split, F16, F16_MAX, F16_MIN_POSITIVE};
use exatensor::pipeline::{xts, XtsData};
use exatensor::recovery::{align_replicas, apply_forward, apply_recovery, hungarian_match, recover_perm_scale, PermScale};
use exatensor::tensor::{fold, khatri_rao, kron, matricize};
use exatensor::{FactorTriple, Matrix, Tensor3};
use proptest::prelude::*;

fn dims3(max: usize) -> impl Strategy<Value = (usize, usize, usize)> {
    (1..=max, 1..=max, 1..=max)
}

fn tensor(dims: (usize, usize, usize), seed: u64) -> Tensor3 {
    Tensor3::from_col_major(dims, gen_gaussian(dims.0 * dims.1 * dims.2, 1, seed).into_vec()).unwrap()
}

fn perm_scale(r: usize) -> impl Strategy<Value = PermScale> {
    (
        Just((0..r).collect::<Vec<_>>()).prop_shuffle(),
        prop::collection::vec((0.1f64..10.0, any::<bool>()), r),
    )
        .prop_map(|(p, s)| {
            let scale = s.into_iter().map(|(m, neg)| if neg { -m } else { m }).collect();
            PermScale::new(p, scale).unwrap()
        })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn comp_matches_triple_sum(d in dims3(5), r in dims3(3), seed in 0u64..1000) {
        let x = tensor(d, seed);
        let (u, v, w) = (gen_gaussian(r.0, d.0, seed + 1), gen_gaussian(r.1, d.1, seed + 2), gen_gaussian(r.2, d.2, seed + 3));
        let y = comp(&x, &u, &v, &w).unwrap();
        for n in 0..r.2 {
            for m in 0..r.1 {
                for l in 0..r.0 {
                    let mut s = 0.0;
                    for k in 0..d.2 {
                        for j in 0..d.1 {
                            for i in 0..d.0 {
                                s += u.get(l, i) * v.get(m, j) * w.get(n, k) * x.get(i, j, k);
                            }
                        }
                    }
                    prop_assert!((y.get(l, m, n) - s).abs() <= 1e-12 * (1.0 + s.abs()));
                }
            }
        }
    }

    #[test]
    fn blocked_equals_unblocked(d in dims3(9), b in dims3(9), seed in 0u64..1000) {
        let b = (b.0.min(d.0), b.1.min(d.1), b.2.min(d.2));
        let r = (d.0.min(3), d.1.min(3), d.2.min(3));
        let shared = r.0.min(r.1).min(r.2).min(1);
        let x = tensor(d, seed);
        let grid = BlockGrid::new(d, b).unwrap();
        let ens = make_ensemble(d, r, 2, shared, EnsembleKind::Gaussian, seed).unwrap();
        let det = comp_blocked(split_blocks(&x, &grid), &grid, &ens, Accumulation::Deterministic).unwrap();
        let mut reversed: Vec<_> = split_blocks(&x, &grid).collect();
        reversed.reverse();
        let fast = comp_blocked(reversed, &grid, &ens, Accumulation::Fast).unwrap();
        for p in 0..2 {
            let y = comp(&x, ens.u(p), ens.v(p), ens.w(p)).unwrap();
            prop_assert_eq!(&det[p], &y);
            prop_assert!(fast[p].max_abs_diff(&y) <= 1e-10 * (1.0 + y.frobenius_norm()));
        }
    }

    #[test]
    fn unfold_fold_round_trip(d in dims3(6), seed in 0u64..1000, mode in 1usize..=3) {
        let x = tensor(d, seed);
        prop_assert_eq!(fold(&matricize(&x, mode).unwrap(), mode, d).unwrap(), x);
    }

    #[test]
    fn khatri_rao_columns_are_kronecker(rows in (1usize..6, 1usize..6), r in 1usize..4, seed in 0u64..1000) {
        let a = gen_gaussian(rows.0, r, seed);
        let b = gen_gaussian(rows.1, r, seed + 1);
        let kr = khatri_rao(&a, &b).unwrap();
        for c in 0..r {
            let col = kron(&a.col_block(c..c + 1), &b.col_block(c..c + 1));
            prop_assert_eq!(kr.col(c), col.col(0));
        }
    }

    #[test]
    fn forward_then_recovery_is_identity(ps in (1usize..7).prop_flat_map(perm_scale), rows in 1usize..8, seed in 0u64..1000) {
        let m = gen_gaussian(rows, ps.rank(), seed);
        let back = apply_recovery(&apply_forward(&m, &ps).unwrap(), &ps).unwrap();
        prop_assert!(back.max_abs_diff(&m) <= 1e-12 * m.frobenius_norm());
    }

    #[test]
    fn perm_scale_is_recovered(ps in (1usize..7).prop_flat_map(perm_scale), seed in 0u64..1000) {
        let sampled = gen_gaussian(12, ps.rank(), seed);
        let global = apply_forward(&sampled, &ps).unwrap();
        let got = recover_perm_scale(&global, &sampled).unwrap();
        prop_assert_eq!(&got.perm, &ps.perm);
        for (a, b) in got.scale.iter().zip(&ps.scale) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn matching_ignores_column_scales(ps in (2usize..6).prop_flat_map(perm_scale), seed in 0u64..1000) {
        // recovery is the same whatever positive rescaling is applied first
        let sampled = gen_gaussian(10, ps.rank(), seed);
        let global = apply_forward(&sampled, &ps).unwrap();
        let bigger = apply_forward(&global, &PermScale::new((0..ps.rank()).collect(), (0..ps.rank()).map(|c| 1.0 + c as f64).collect()).unwrap()).unwrap();
        prop_assert_eq!(recover_perm_scale(&bigger, &sampled).unwrap().perm, ps.perm);
    }

    #[test]
    fn hungarian_matches_enumeration(n in 1usize..=6, rows in 1usize..8, seed in 0u64..1000) {
        let a = gen_gaussian(rows, n, seed);
        let b = gen_gaussian(rows, n, seed + 7);
        let score = |p: &[usize]| (0..n).map(|r| (0..rows).map(|i| a.get(i, r) * b.get(i, p[r])).sum::<f64>()).sum::<f64>();
        let best = permutations(n).into_iter().map(|p| score(&p)).fold(f64::NEG_INFINITY, f64::max);
        let got = hungarian_match(&a, &b).unwrap();
        prop_assert!((score(&got) - best).abs() <= 1e-12 * (1.0 + best.abs()));
    }

    #[test]
    fn alignment_undoes_permutation_and_scale(ps in (2usize..5).prop_flat_map(perm_scale), seed in 0u64..1000) {
        let r = ps.rank();
        let base = FactorTriple::new(gen_gaussian(12, r, seed), gen_gaussian(11, r, seed + 1), gen_gaussian(10, r, seed + 2)).unwrap();
        let other = base.try_map(|_, m| apply_forward(m, &ps)).unwrap();
        let al = align_replicas(&[base.clone(), other], 2 * r, 2).unwrap();
        for m in 0..3 {
            prop_assert!(al.factors[0].mode(m).max_abs_diff(al.factors[1].mode(m)) <= 1e-10);
        }
        let again = align_replicas(&al.factors, 2 * r, 2).unwrap();
        for m in 0..3 {
            prop_assert!(again.factors[1].mode(m).max_abs_diff(al.factors[1].mode(m)) <= 1e-12);
        }
    }

    #[test]
    fn binary16_rounding_matches_half_crate(x in -F16_MAX..F16_MAX) {
        prop_assert_eq!(F16::from_f64(x).unwrap().to_bits(), half::f16::from_f64(x).to_bits());
    }

    #[test]
    fn binary16_rounding_matches_half_crate_near_zero(x in -1e-3f64..1e-3) {
        prop_assert_eq!(F16::from_f64(x).unwrap().to_bits(), half::f16::from_f64(x).to_bits());
    }

    #[test]
    fn every_binary16_widens_exactly(bits in 0u16..0x7c00, neg in any::<bool>()) {
        let b = bits | if neg { 0x8000 } else { 0 };
        prop_assert_eq!(F16::from_bits(b).to_f64(), half::f16::from_bits(b).to_f64());
        prop_assert_eq!(F16::from_f64(F16::from_bits(b).to_f64()).unwrap().to_bits(), b);
    }

    #[test]
    fn split_round_trip_error(x in F16_MIN_POSITIVE..60000.0, neg in any::<bool>()) {
        let x = if neg { -x } else { x };
        let s = fp16_split(x).unwrap();
        prop_assert_eq!(s.half_value() + s.residual, x);
        let approx = s.half_value() + s.half_residual();
        prop_assert!((approx - x).abs() <= 2f64.powi(-21) * x.abs());
    }

    #[test]
    fn xts_round_trip(d in dims3(6), seed in 0u64..1000) {
        let x = tensor(d, seed);
        let mut buf = Vec::new();
        xts::write_tensor_to(&mut buf, &x).unwrap();
        prop_assert_eq!(buf.len(), 32 + 8 * x.len());
        prop_assert_eq!(xts::read_from(&mut buf.as_slice()).unwrap(), XtsData::Dense(x));
    }

    #[test]
    fn factored_gather_matches_dense(d in dims3(7), r in 1usize..4, seed in 0u64..1000) {
        let f = FactorTriple::new(gen_gaussian(d.0, r, seed), gen_gaussian(d.1, r, seed + 1), gen_gaussian(d.2, r, seed + 2)).unwrap();
        let x = exatensor::tensor::reconstruct(&f);
        let ii: Vec<usize> = (0..d.0).rev().collect();
        let jj: Vec<usize> = (0..d.1).step_by(2).collect();
        let kk = vec![d.2 - 1];
        prop_assert!(f.gather(&ii, &jj, &kk).max_abs_diff(&x.gather(&ii, &jj, &kk)) <= 1e-12);
    }
}

#[test]
fn matrix_identity_is_neutral_under_recovery() {
    let m = Matrix::identity(3);
    assert_eq!(apply_recovery(&m, &PermScale::identity(3)).unwrap(), m);
}
