use crate::error::{Error, Result};
use crate::tensor::{reconstruct, FactorTriple, Matrix, Tensor3};

// The three accumulating mode products below are shared by `comp` and the
// blocked compressor. Each output element receives its terms one at a time
// in increasing contracted index, so splitting the contracted range across
// consecutive calls performs exactly the same floating-point operations as
// a single call over the whole range.

/// `z1[:, j, k] += Σ_i u[:, u_off + i] · x[i, j, k]`, with `z1` shaped `L × dj × dk`.
pub(crate) fn mode1_acc(z1: &mut [f64], u: &Matrix, u_off: usize, x: &Tensor3) {
    let (di, dj, dk) = x.dims();
    let l = u.rows();
    debug_assert_eq!(z1.len(), l * dj * dk);
    let xs = x.as_slice();
    for jk in 0..dj * dk {
        let fibre = &xs[jk * di..(jk + 1) * di];
        let dst = &mut z1[jk * l..(jk + 1) * l];
        for (i, &xv) in fibre.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (d, &uv) in dst.iter_mut().zip(u.col(u_off + i)) {
                *d += uv * xv;
            }
        }
    }
}

/// `z2[:, m, k] += Σ_j v[m, v_off + j] · z1[:, j, k]`, with `z1` shaped
/// `L × dj × dk` and `z2` shaped `L × M × dk`.
pub(crate) fn mode2_acc(z2: &mut [f64], v: &Matrix, v_off: usize, z1: &[f64], l: usize, dj: usize) {
    let mm = v.rows();
    let dk = z1.len() / (l * dj);
    debug_assert_eq!(z2.len(), l * mm * dk);
    for k in 0..dk {
        for j in 0..dj {
            let src = &z1[l * (j + dj * k)..l * (j + dj * k + 1)];
            let vcol = v.col(v_off + j);
            for (m, &vv) in vcol.iter().enumerate() {
                if vv == 0.0 {
                    continue;
                }
                let o = l * (m + mm * k);
                for (d, &s) in z2[o..o + l].iter_mut().zip(src) {
                    *d += vv * s;
                }
            }
        }
    }
}

/// `y[:, :, n] += Σ_k w[n, w_off + k] · z2[:, :, k]`, with `z2` shaped
/// `L × M × dk` and `y` shaped `L × M × N`.
pub(crate) fn mode3_acc(y: &mut [f64], w: &Matrix, w_off: usize, z2: &[f64], lm: usize) {
    let dk = z2.len() / lm;
    for k in 0..dk {
        let src = &z2[k * lm..(k + 1) * lm];
        for (n, &wv) in w.col(w_off + k).iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            for (d, &s) in y[n * lm..(n + 1) * lm].iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
}

fn check_shapes(dims: (usize, usize, usize), u: &Matrix, v: &Matrix, w: &Matrix) -> Result<()> {
    if u.cols() != dims.0 || v.cols() != dims.1 || w.cols() != dims.2 {
        return Err(Error::usage(format!(
            "compression matrices with {}, {}, {} columns cannot compress {dims:?}",
            u.cols(),
            v.cols(),
            w.cols()
        )));
    }
    Ok(())
}

/// Compresses `t` by the three mode products `×₁u ×₂v ×₃w`, in that order.
///
/// ```
/// use exatensor::{compression::comp, Matrix, Tensor3};
/// let t = Tensor3::from_col_major((1, 1, 1), vec![2.0]).unwrap();
/// let m = |x: f64| Matrix::from_rows(&[&[x]]).unwrap();
/// let y = comp(&t, &m(3.0), &m(5.0), &m(7.0)).unwrap();
/// assert_eq!(y.as_slice(), &[210.0]);
/// ```
pub fn comp(t: &Tensor3, u: &Matrix, v: &Matrix, w: &Matrix) -> Result<Tensor3> {
    check_shapes(t.dims(), u, v, w)?;
    let (_, nj, nk) = t.dims();
    let (l, m, n) = (u.rows(), v.rows(), w.rows());
    let mut z1 = vec![0.0; l * nj * nk];
    mode1_acc(&mut z1, u, 0, t);
    let mut z2 = vec![0.0; l * m * nk];
    mode2_acc(&mut z2, v, 0, &z1, l, nj);
    drop(z1);
    let mut y = Tensor3::zeros((l, m, n));
    mode3_acc(y.as_mut_slice(), w, 0, &z2, l * m);
    Ok(y)
}

/// Replica of the CP model `f` without materializing it: the model with
/// factors `(uA, vB, wC)`.
pub fn comp_from_factors(f: &FactorTriple, u: &Matrix, v: &Matrix, w: &Matrix) -> Result<Tensor3> {
    check_shapes(f.dims(), u, v, w)?;
    let g = FactorTriple::new(u.matmul(f.a())?, v.matmul(f.b())?, w.matmul(f.c())?)?;
    Ok(reconstruct(&g))
}
