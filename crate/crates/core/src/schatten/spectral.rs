//! Allocation-light spectral maps on raw row-major blocks, used by the field
//! solvers in their per-cell loops.

use super::{svd, Matrix};

/// Replaces the singular values `s` of the `m×n` block by `g(s)` in place.
///
/// `g` must map `[0, ∞)` into `[0, ∞)` and satisfy `g(0) = 0`. Vectors and
/// `2×2` blocks take closed-form paths; other shapes go through the SVD.
pub(crate) fn map_singular_values_in_place(
    block: &mut [f64],
    m: usize,
    n: usize,
    g: impl Fn(f64) -> f64,
) {
    debug_assert_eq!(block.len(), m * n);
    if m == 1 || n == 1 {
        let nrm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return;
        }
        let s = g(nrm) / nrm;
        block.iter_mut().for_each(|x| *x *= s);
        return;
    }
    if m == 2 && n == 2 {
        map_2x2(block, g);
        return;
    }
    let a = Matrix::from_raw(m, n, block.to_vec());
    match svd(&a) {
        Ok(d) => block.copy_from_slice(d.map_singular_values(g).as_slice()),
        Err(_) => block.iter_mut().for_each(|x| *x = f64::NAN),
    }
}

/// Singular values of an `m×n` block, largest first. Closed form for vectors
/// and `2×2` blocks.
pub(crate) fn singular_values_of(block: &[f64], m: usize, n: usize) -> Vec<f64> {
    if m == 1 || n == 1 {
        return vec![block.iter().map(|x| x * x).sum::<f64>().sqrt()];
    }
    if m == 2 && n == 2 {
        let (q, r) = conformal_parts(block);
        return vec![q.0 + r.0, (q.0 - r.0).abs()];
    }
    match svd(&Matrix::from_raw(m, n, block.to_vec())) {
        Ok(d) => d.singular_values,
        Err(_) => vec![f64::NAN],
    }
}

/// Largest singular value of the block.
pub(crate) fn operator_norm_of(block: &[f64], m: usize, n: usize) -> f64 {
    singular_values_of(block, m, n)[0]
}

/// Sum of singular values of the block.
pub(crate) fn nuclear_norm_of(block: &[f64], m: usize, n: usize) -> f64 {
    singular_values_of(block, m, n).iter().sum()
}

// A 2×2 matrix splits as C + D with C = E·I + H·J a scaled rotation and
// D = F·Z + G·X a scaled reflection. With Q = |C|, R = |D| its singular values
// are Q + R and |Q − R|, and the SVD frames are shared, so a spectral map only
// rescales C and D.
fn conformal_parts(b: &[f64]) -> ((f64, f64, f64), (f64, f64, f64)) {
    let (a, bb, c, d) = (b[0], b[1], b[2], b[3]);
    let e = 0.5 * (a + d);
    let h = 0.5 * (c - bb);
    let f = 0.5 * (a - d);
    let g = 0.5 * (bb + c);
    ((e.hypot(h), e, h), (f.hypot(g), f, g))
}

fn map_2x2(b: &mut [f64], g: impl Fn(f64) -> f64) {
    let ((q, e, h), (r, f, gg)) = conformal_parts(b);
    let s1 = q + r;
    let s2 = q - r;
    let t1 = g(s1);
    let t2 = g(s2.abs()).copysign(s2);
    let q_new = 0.5 * (t1 + t2);
    let r_new = 0.5 * (t1 - t2);
    let cq = if q > 0.0 { q_new / q } else { 0.0 };
    let cr = if r > 0.0 { r_new / r } else { 0.0 };
    let (e, h, f, gg) = (cq * e, cq * h, cr * f, cr * gg);
    b[0] = e + f;
    b[1] = gg - h;
    b[2] = gg + h;
    b[3] = e - f;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn generic(block: &[f64], m: usize, n: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let a = Matrix::from_raw(m, n, block.to_vec());
        svd(&a).unwrap().map_singular_values(g).into_vec()
    }

    #[test]
    fn two_by_two_singular_values() {
        let b = [0.0, -2.0, 1.0, 0.0];
        assert_eq!(singular_values_of(&b, 2, 2), vec![2.0, 1.0]);
        let r = [3.0, 0.0, 0.0, -4.0];
        assert_eq!(singular_values_of(&r, 2, 2), vec![4.0, 3.0]);
    }

    proptest! {
        #[test]
        fn closed_form_2x2_matches_svd(
            entries in prop::collection::vec(-3.0f64..3.0, 4),
            t in 0.0f64..2.0,
        ) {
            let shrink = |s: f64| (s - t).max(0.0);
            let mut fast = entries.clone();
            map_singular_values_in_place(&mut fast, 2, 2, shrink);
            let slow = generic(&entries, 2, 2, shrink);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            let sv = singular_values_of(&entries, 2, 2);
            let d = svd(&Matrix::from_raw(2, 2, entries.clone())).unwrap();
            prop_assert!((sv[0] - d.singular_values[0]).abs() < 1e-10);
            prop_assert!((sv[1] - d.singular_values[1]).abs() < 1e-10);
        }

        #[test]
        fn vector_path_matches_svd(entries in prop::collection::vec(-3.0f64..3.0, 3)) {
            let clip = |s: f64| s.min(1.0);
            let mut fast = entries.clone();
            map_singular_values_in_place(&mut fast, 3, 1, clip);
            let slow = generic(&entries, 3, 1, clip);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
