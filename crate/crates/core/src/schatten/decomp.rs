//! One-sided Jacobi SVD and cyclic Jacobi symmetric eigendecomposition.
//!
//! Both routines target the small dense matrices that appear as per-cell
//! values of gradient and flux fields. Sweep order is fixed, so results are
//! bit-for-bit reproducible.

use crate::error::{Error, Result};

use super::Matrix;

/// Accuracy target of the decompositions.
pub const TOL_SVD: f64 = 1e-12;

const MAX_SWEEPS: usize = 80;

/// Singular value decomposition `A = Σ aᵢ fᵢ eᵢᵀ`.
///
/// `left` is an orthonormal `m×m` frame (columns `fⱼ`), `right` an orthonormal
/// `n×n` frame (columns `eᵢ`), and `singular_values` holds the `min(m, n)`
/// values `aᵢ` in nonincreasing order.
#[derive(Clone, Debug)]
pub struct SvdDecomposition {
    pub left: Matrix,
    pub singular_values: Vec<f64>,
    pub right: Matrix,
}

impl SvdDecomposition {
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top && s > 0.0)
            .count()
    }

    /// `Σ g(aᵢ) fᵢ eᵢᵀ` over the leading `min(m, n)` pairs.
    pub fn map_singular_values(&self, mut g: impl FnMut(f64) -> f64) -> Matrix {
        let m = self.left.rows();
        let n = self.right.rows();
        let mut out = Matrix::zeros(m, n);
        for (k, &s) in self.singular_values.iter().enumerate() {
            let w = g(s);
            if w == 0.0 {
                continue;
            }
            for i in 0..m {
                let fi = self.left[(i, k)] * w;
                if fi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += fi * self.right[(j, k)];
                }
            }
        }
        out
    }

    /// `Σ g(aᵢ) eᵢ eᵢᵀ`, an `n×n` symmetric matrix; `|A|^r` for `g = x^r`.
    pub fn right_spectral(&self, mut g: impl FnMut(f64) -> f64) -> Matrix {
        let n = self.right.rows();
        let mut out = Matrix::zeros(n, n);
        for (k, &s) in self.singular_values.iter().enumerate() {
            let w = g(s);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let ei = self.right[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += ei * self.right[(j, k)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_singular_values(|s| s)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rotates columns `p` and `q` of a column-major buffer with column length `len`.
#[inline]
fn rotate(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Hestenes iteration on an `m×n` matrix with `m ≥ n`; returns the rotated
/// columns (column-major, `m×n`) and the accumulated right rotations
/// (column-major, `n×n`).
fn hestenes(a: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let mut w = vec![0.0; m * n];
    for j in 0..n {
        for i in 0..m {
            w[j * m + i] = a[(i, j)];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p * m..(p + 1) * m], &w[p * m..(p + 1) * m]);
                let beta = dot(&w[q * m..(q + 1) * m], &w[q * m..(q + 1) * m]);
                let gamma = dot(&w[p * m..(p + 1) * m], &w[q * m..(q + 1) * m]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                rotate(&mut w, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// Completes orthonormal columns to a full orthonormal basis of `R^dim`.
fn complete_basis(mut cols: Vec<Vec<f64>>, dim: usize) -> Vec<Vec<f64>> {
    let mut k = 0;
    while cols.len() < dim && k < dim {
        let mut cand = vec![0.0; dim];
        cand[k] = 1.0;
        k += 1;
        // Two passes of modified Gram–Schmidt.
        for _ in 0..2 {
            for c in &cols {
                let d = dot(&cand, c);
                for (x, y) in cand.iter_mut().zip(c) {
                    *x -= d * y;
                }
            }
        }
        let nrm = dot(&cand, &cand).sqrt();
        if nrm > 1e-6 {
            cand.iter_mut().for_each(|x| *x /= nrm);
            cols.push(cand);
        }
    }
    cols
}

fn columns_to_matrix(cols: &[Vec<f64>], dim: usize) -> Matrix {
    let mut out = Matrix::zeros(dim, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for i in 0..dim {
            out[(i, j)] = c[i];
        }
    }
    out
}

fn svd_tall(a: &Matrix) -> SvdDecomposition {
    let (m, n) = a.shape();
    let (w, v) = hestenes(a);
    let norms: Vec<f64> = (0..n)
        .map(|j| dot(&w[j * m..(j + 1) * m], &w[j * m..(j + 1) * m]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let top = norms[order[0]];
    let cutoff = top * (m as f64) * f64::EPSILON;
    let mut left = Vec::with_capacity(m);
    let mut singular_values = Vec::with_capacity(n);
    let mut right = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        singular_values.push(norms[j]);
        for i in 0..n {
            right[(i, k)] = v[j * n + i];
        }
        if norms[j] > cutoff && norms[j] > 0.0 {
            left.push(w[j * m..(j + 1) * m].iter().map(|x| x / norms[j]).collect());
        }
    }
    let rank = left.len();
    let left = complete_basis(left, m);
    // Columns beyond the numerical rank came from completion; keep the
    // ordering aligned with the singular values.
    debug_assert!(rank <= n);
    SvdDecomposition {
        left: columns_to_matrix(&left, m),
        singular_values,
        right,
    }
}

/// Singular value decomposition by one-sided Jacobi iteration.
pub fn svd(a: &Matrix) -> Result<SvdDecomposition> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if a.rows() >= a.cols() {
        Ok(svd_tall(a))
    } else {
        let t = svd_tall(&a.transpose());
        Ok(SvdDecomposition {
            left: t.right,
            singular_values: t.singular_values,
            right: t.left,
        })
    }
}

/// Eigendecomposition `S = Σ λᵢ vᵢ vᵢᵀ` of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in nonincreasing order.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, aligned with `values`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn map(&self, mut g: impl FnMut(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &l) in self.values.iter().enumerate() {
            let w = g(l);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vi = self.vectors[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += vi * self.vectors[(j, k)];
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigenvalue iteration on the symmetric part of `s`.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen> {
    if !s.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = s.rows();
    let mut a = s.symmetric_part();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale * 1e-2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].total_cmp(&a[(x, x)]).then(x.cmp(&y)));
    let values = order.iter().map(|&k| a[(k, k)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, k)] = v[(i, j)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormality_defect(q: &Matrix) -> f64 {
        let g = q.tr_mul(q);
        (&g - &Matrix::identity(q.cols())).max_abs()
    }

    #[test]
    fn hand_computed_singular_values() {
        let a = Matrix::from_rows(&[vec![0.0, -2.0], vec![1.0, 0.0]]).unwrap();
        let d = svd(&a).unwrap();
        assert!((d.singular_values[0] - 2.0).abs() < 1e-14);
        assert!((d.singular_values[1] - 1.0).abs() < 1e-14);

        let d = svd(&Matrix::from_diag(&[3.0, 4.0])).unwrap();
        assert_eq!(d.singular_values.len(), 2);
        assert!((d.singular_values[0] - 4.0).abs() < 1e-14);
        assert!((d.singular_values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn identity_frames_are_signed_standard_bases() {
        let d = svd(&Matrix::identity(2)).unwrap();
        assert_eq!(d.singular_values, vec![1.0, 1.0]);
        for q in [&d.left, &d.right] {
            for i in 0..2 {
                for j in 0..2 {
                    let x = q[(i, j)].abs();
                    assert!(x < 1e-15 || (x - 1.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn wide_tall_and_rank_deficient_shapes() {
        let cases = [
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0], vec![2.0], vec![2.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap(),
            Matrix::zeros(3, 2),
        ];
        for a in &cases {
            let d = svd(a).unwrap();
            assert_eq!(d.left.shape(), (a.rows(), a.rows()));
            assert_eq!(d.right.shape(), (a.cols(), a.cols()));
            assert!(orthonormality_defect(&d.left) < 1e-13);
            assert!(orthonormality_defect(&d.right) < 1e-13);
            let err = (&d.reconstruct() - a).frobenius_norm();
            assert!(err <= TOL_SVD * (1.0 + a.frobenius_norm()), "{a:?}: {err}");
            assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let a = Matrix::from_raw(1, 2, vec![1.0, f64::INFINITY]);
        assert!(matches!(svd(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn symmetric_eigen_of_small_matrix() {
        let s = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eigen(&s).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        assert!((&e.map(|l| l) - &s).max_abs() < 1e-14);
        assert!(orthonormality_defect(&e.vectors) < 1e-14);
    }
}
