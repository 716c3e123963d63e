//! A fast built-in oracle suite, run by `xts selftest`.

use crate::als::{cp_als, AlsConfig};
use crate::compression::{comp, comp_blocked, gen_gaussian, make_ensemble, split_blocks, Accumulation, BlockGrid, EnsembleKind};
use crate::error::Result;
use crate::mixed::{comp_mixed, comp_naive_half, fp16_split, ResidualStorage, SplitMatrix, SplitTensor3};
use crate::recovery::{max_assignment, omp_recover, solve_stacked_ls, OmpConfig};
use crate::tensor::{Matrix, Tensor3};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn tensor(dims: (usize, usize, usize), seed: u64) -> Tensor3 {
    Tensor3::from_col_major(dims, gen_gaussian(dims.0 * dims.1 * dims.2, 1, seed).into_vec()).expect("finite")
}

fn triple_sum(x: &Tensor3, u: &Matrix, v: &Matrix, w: &Matrix) -> Tensor3 {
    let (ni, nj, nk) = x.dims();
    Tensor3::from_fn((u.rows(), v.rows(), w.rows()), |l, m, n| {
        let mut s = 0.0;
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    s += u.get(l, i) * v.get(m, j) * w.get(n, k) * x.get(i, j, k);
                }
            }
        }
        s
    })
}

fn compression() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for s in 0..5 {
        let x = tensor((6, 7, 8), s);
        let (u, v, w) = (gen_gaussian(3, 6, 100 + s), gen_gaussian(3, 7, 200 + s), gen_gaussian(3, 8, 300 + s));
        worst = worst.max(comp(&x, &u, &v, &w)?.max_abs_diff(&triple_sum(&x, &u, &v, &w)));
    }
    Ok((worst <= 1e-10, format!("max deviation {worst:.2e}")))
}

fn blocked() -> Result<(bool, String)> {
    let x = tensor((9, 8, 7), 1);
    let e = make_ensemble((9, 8, 7), (3, 3, 3), 3, 1, EnsembleKind::Gaussian, 2)?;
    let grid = BlockGrid::new((9, 8, 7), (4, 3, 4))?;
    let ys = comp_blocked(split_blocks(&x, &grid), &grid, &e, Accumulation::Deterministic)?;
    let mut same = true;
    for (p, y) in ys.iter().enumerate() {
        same &= *y == comp(&x, e.u(p), e.v(p), e.w(p))?;
    }
    Ok((same, "ragged 3×3×2 grid, 3 replicas".into()))
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

fn hungarian() -> Result<(bool, String)> {
    let n = 4;
    let all = permutations(n);
    let mut mismatches = 0;
    for s in 0..50 {
        let w = gen_gaussian(n * n, 1, 400 + s).into_vec();
        let score = |p: &[usize]| (0..n).map(|r| w[r * n + p[r]]).sum::<f64>();
        let best = all.iter().map(|p| score(p)).fold(f64::NEG_INFINITY, f64::max);
        if (score(&max_assignment(&w, n)) - best).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatches in 50")))
}

fn omp() -> Result<(bool, String)> {
    let mut d = Matrix::identity(8).col_block(0..6);
    for c in 0..6 {
        d.set((c + 6) % 8, c, 0.3);
        let nrm = crate::tensor::norm2(d.col(c));
        d.col_mut(c).iter_mut().for_each(|x| *x /= nrm);
    }
    let mut x = Matrix::zeros(6, 1);
    x.set(1, 0, 2.0);
    x.set(4, 0, -1.0);
    let got = omp_recover(&d.matmul(&x)?, &d, &OmpConfig::new(2))?;
    let err = got.max_abs_diff(&x);
    Ok((err < 1e-12, format!("coefficient error {err:.2e}")))
}

fn half() -> Result<(bool, String)> {
    let table = [(1.0, 0x3c00u16), (0.1, 0x2e66), (65504.0, 0x7bff), (1.00048828125, 0x3c00)];
    let ok = table.iter().all(|&(x, b)| fp16_split(x).map(|s| s.half.to_bits() == b).unwrap_or(false));
    let x = tensor((16, 16, 16), 5);
    let (u, v, w) = (gen_gaussian(4, 16, 6), gen_gaussian(4, 16, 7), gen_gaussian(4, 16, 8));
    let exact = comp(&x, &u, &v, &w)?;
    let sp = |m: &Matrix| SplitMatrix::split(m, ResidualStorage::Full);
    let mixed = comp_mixed(&SplitTensor3::split(&x, ResidualStorage::Full)?, &sp(&u)?, &sp(&v)?, &sp(&w)?)?;
    let naive = comp_naive_half(&x, &u, &v, &w)?;
    let em = mixed.lin_comb(1.0, &exact, -1.0)?.frobenius_norm();
    let en = naive.lin_comb(1.0, &exact, -1.0)?.frobenius_norm();
    Ok((ok && em < en, format!("mixed {em:.2e} vs naive {en:.2e}")))
}

fn als() -> Result<(bool, String)> {
    let f = crate::tensor::FactorTriple::new(gen_gaussian(8, 2, 1), gen_gaussian(7, 2, 2), gen_gaussian(6, 2, 3))?;
    let x = crate::tensor::reconstruct(&f);
    let cfg = AlsConfig::new(2).with_seed(4);
    let r = cp_als(&x, &cfg)?;
    let mono = r.error_history.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let again = cp_als(&x, &cfg)?;
    Ok((mono && r == again, format!("final error {:.2e}", r.final_error())))
}

fn stacked_ls() -> Result<(bool, String)> {
    let g = gen_gaussian(40, 3, 9);
    let us: Vec<Matrix> = (0..6).map(|p| gen_gaussian(10, 40, 50 + p)).collect();
    let fs = us.iter().map(|u| u.matmul(&g)).collect::<Result<Vec<_>>>()?;
    let got = solve_stacked_ls(&fs, &us.iter().collect::<Vec<_>>())?;
    let rel = got.sub(&g)?.frobenius_norm() / g.frobenius_norm();
    Ok((rel <= 1e-9, format!("relative error {rel:.2e}")))
}

fn pipeline() -> Result<(bool, String)> {
    use crate::pipeline::{decompose, evaluate, generate, PipelineConfig, SyntheticSpec, Truth};
    let f = generate(&SyntheticSpec::dense((24, 22, 20), 2, 3))?;
    let mut cfg = PipelineConfig::new((8, 8, 8), 2);
    cfg.seed = 1;
    let (g, _) = decompose(&f, &cfg)?;
    let errs = evaluate(&Truth::Factors(&f), &g, None)?.factor_errors.expect("factor truth");
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Ok((worst <= 1e-6, format!("worst factor error {worst:.2e}")))
}

/// Runs every check; failures inside a check count as a failed check.
pub fn run() -> Vec<Check> {
    let suite: [(&'static str, fn() -> Result<(bool, String)>); 8] = [
        ("compression matches triple sum", compression),
        ("blocked compression is bit-exact", blocked),
        ("assignment matches enumeration", hungarian),
        ("matching pursuit recovers support", omp),
        ("binary16 rounding and compensation", half),
        ("ALS monotone and deterministic", als),
        ("stacked least squares", stacked_ls),
        ("small dense pipeline", pipeline),
    ];
    suite
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}
