use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// Assignment maximizing `Σ_r w[r][perm[r]]` for a square score matrix,
/// given row-major. Shortest augmenting path with potentials, O(n³).
/// Column scans keep the first minimum, so ties go to the lower index.
pub fn max_assignment(w: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(w.len(), n * n, "score matrix must be n × n");
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -w[(i - 1) * n + (j - 1)];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // owner[j]: row currently assigned to column j (1-based, 0 = none)
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    perm
}

/// Permutation maximizing the trace objective `Σ_r ⟨ref[:, r], target[:, perm[r]]⟩`.
///
/// ```
/// use exatensor::{recovery::hungarian_match, Matrix};
/// let a = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
/// let b = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
/// assert_eq!(hungarian_match(&a, &b).unwrap(), vec![1, 0]);
/// ```
pub fn hungarian_match(reference: &Matrix, target: &Matrix) -> Result<Vec<usize>> {
    if reference.shape() != target.shape() {
        return Err(Error::usage(format!(
            "cannot match blocks of shapes {:?} and {:?}",
            reference.shape(),
            target.shape()
        )));
    }
    if reference.rows() == 0 {
        return Err(Error::usage("matching needs at least one row"));
    }
    let r = reference.cols();
    let mut w = vec![0.0; r * r];
    for a in 0..r {
        for b in 0..r {
            w[a * r + b] = dot(reference.col(a), target.col(b));
        }
    }
    Ok(max_assignment(&w, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_sizes() {
        assert!(max_assignment(&[], 0).is_empty());
        assert_eq!(max_assignment(&[-3.0], 1), vec![0]);
    }

    #[test]
    fn picks_off_diagonal_optimum() {
        // rows prefer column 2, 0, 1
        let w = [1.0, 0.0, 5.0, 4.0, 1.0, 0.0, 0.0, 3.0, 1.0];
        assert_eq!(max_assignment(&w, 3), vec![2, 0, 1]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(max_assignment(&[1.0; 9], 3), vec![0, 1, 2]);
    }

    #[test]
    fn negative_scores() {
        let w = [-1.0, -10.0, -10.0, -1.0];
        assert_eq!(max_assignment(&w, 2), vec![0, 1]);
    }

    #[test]
    fn swapped_columns() {
        let a = Matrix::from_rows(&[&[1.0, 0.2], &[0.1, 2.0], &[0.5, 0.5]]).unwrap();
        let b = Matrix::from_columns(3, &[a.col(1).to_vec(), a.col(0).to_vec()]).unwrap();
        assert_eq!(hungarian_match(&a, &a).unwrap(), vec![0, 1]);
        assert_eq!(hungarian_match(&a, &b).unwrap(), vec![1, 0]);
    }

    #[test]
    fn shape_mismatch() {
        assert!(hungarian_match(&Matrix::zeros(2, 2), &Matrix::zeros(3, 2)).unwrap_err().is_usage());
    }
}
