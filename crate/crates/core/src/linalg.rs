//! Dense solvers: Householder QR least squares with column pivoting and an
//! SVD-based pseudo-inverse.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Relative threshold on `|R_kk| / |R_00|` below which a pivoted column is
/// treated as linearly dependent.
pub const QR_RANK_TOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse, discarding singular values below
/// `rcond · σ_max`.
pub fn pinv(m: &Matrix, rcond: f64) -> Matrix {
    let (r, c) = m.shape();
    let dm = DMatrix::from_column_slice(r, c, m.as_slice());
    let svd = dm.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::<f64>::zeros(c, r);
    for (s_idx, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        // out += v_s · inv · u_sᵀ
        for j in 0..r {
            let us = u[(j, s_idx)] * inv;
            if us == 0.0 {
                continue;
            }
            for i in 0..c {
                out[(i, j)] += vt[(s_idx, i)] * us;
            }
        }
    }
    Matrix::from_col_major(c, r, out.as_slice().to_vec()).expect("shape")
}

/// Least-squares solution of `a · x = b` for every column of `b`, by
/// Householder QR with column pivoting. Fails with [`Error::IllPosed`] when
/// `a` does not have full column rank.
pub fn lstsq(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (m, n) = a.shape();
    if b.rows() != m {
        return Err(Error::usage(format!(
            "lstsq rhs has {} rows, system has {m}",
            b.rows()
        )));
    }
    let mut qr = a.clone();
    let mut rhs = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    let mut rank = steps;
    let mut r00 = 0.0;

    for k in 0..steps {
        // pivot on the largest trailing column norm
        let (p, pnorm) = (k..n)
            .map(|j| (j, sq_norm(&qr.col(j)[k..])))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if p != k {
            swap_cols(&mut qr, k, p);
            perm.swap(k, p);
        }
        let xnorm = pnorm.sqrt();
        if k == 0 {
            r00 = xnorm;
        }
        if xnorm <= QR_RANK_TOL * r00 || xnorm == 0.0 {
            rank = k;
            break;
        }
        let x0 = qr.get(k, k);
        let alpha = if x0 >= 0.0 { -xnorm } else { xnorm };
        let mut v: Vec<f64> = qr.col(k)[k..].to_vec();
        v[0] -= alpha;
        let vtv = sq_norm(&v);
        if vtv > 0.0 {
            let beta = 2.0 / vtv;
            for j in k + 1..n {
                reflect(&v, beta, &mut qr.col_mut(j)[k..]);
            }
            for j in 0..rhs.cols() {
                reflect(&v, beta, &mut rhs.col_mut(j)[k..]);
            }
        }
        let col = qr.col_mut(k);
        col[k] = alpha;
        for x in &mut col[k + 1..] {
            *x = 0.0;
        }
    }

    if rank < n {
        return Err(Error::IllPosed { rank, required: n });
    }

    let mut x = Matrix::zeros(n, b.cols());
    for c in 0..b.cols() {
        let y = rhs.col(c);
        let mut sol = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for (j, sj) in sol.iter().enumerate().skip(i + 1) {
                s -= qr.get(i, j) * sj;
            }
            sol[i] = s / qr.get(i, i);
        }
        let out = x.col_mut(c);
        for (i, &pi) in perm.iter().enumerate() {
            out[pi] = sol[i];
        }
    }
    Ok(x)
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn reflect(v: &[f64], beta: f64, y: &mut [f64]) {
    let s: f64 = v.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() * beta;
    if s != 0.0 {
        for (yi, vi) in y.iter_mut().zip(v) {
            *yi -= s * vi;
        }
    }
}

fn swap_cols(m: &mut Matrix, a: usize, b: usize) {
    let rows = m.rows();
    let data = m.as_mut_slice();
    for i in 0..rows {
        data.swap(a * rows + i, b * rows + i);
    }
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor stored row-major as
/// a packed `n × n` buffer.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * n + j] * y[j];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= l[j * n + i] * x[j];
        }
        x[i] = s / l[i * n + i];
    }
    x
}
