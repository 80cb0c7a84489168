//! Matrix calculus against nalgebra's SVD and eigendecomposition.

use nalgebra::DMatrix;
use proptest::prelude::*;
use vecbeck::schatten::*;

fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

fn from_na(a: &DMatrix<f64>) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn na_singular_values(a: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(a).singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

fn oracle_norm(a: &Matrix, p: f64) -> f64 {
    let s = na_singular_values(a);
    if p.is_infinite() {
        s[0]
    } else {
        s.iter().map(|x| x.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

fn pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
        (
            proptest::collection::vec(-3.0f64..3.0, r * c),
            proptest::collection::vec(-3.0f64..3.0, r * c),
        )
            .prop_map(move |(a, b)| (Matrix::new(r, c, a).unwrap(), Matrix::new(r, c, b).unwrap()))
    })
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(3.0), Just(f64::INFINITY), 1.0f64..6.0]
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    let scale = 1.0 + a.max_abs().max(b.max_abs());
    (a - b).max_abs() <= tol * scale
}

proptest! {
    #[test]
    fn singular_values_match_oracle(a in matrix()) {
        let d = svd(&a).unwrap();
        let want = na_singular_values(&a);
        for (x, y) in d.singular_values.iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + want[0]));
        }
        prop_assert!(close(&d.reconstruct(), &a, 1e-10));
    }

    #[test]
    fn schatten_norms_match_oracle(a in matrix(), p in exponent()) {
        let got = schatten_norm(&a, Exponent::new(p).unwrap()).unwrap();
        let want = oracle_norm(&a, p);
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want), "{got} vs {want}");
    }

    #[test]
    fn holder_inequality_holds(ab in pair(), p in exponent()) {
        let (a, b) = ab;
        let slack = holder_slack(&a, &b, Exponent::new(p).unwrap()).unwrap();
        prop_assert!(slack >= -1e-10 * (1.0 + a.max_abs() * b.max_abs()));
    }

    #[test]
    fn dual_witness_attains_equality(a in matrix(), p in exponent()) {
        prop_assume!(a.max_abs() > 1e-3);
        let p = Exponent::new(p).unwrap();
        let b = dual_witness(&a, p).unwrap();
        let lhs = pairing(&a, &b).unwrap();
        let rhs = schatten_norm(&a, p).unwrap() * schatten_norm(&b, p.conjugate()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn abs_matrix_is_the_psd_root(a in matrix()) {
        let m = abs_matrix(&a).unwrap();
        prop_assert!(m.asymmetry() <= 1e-10 * (1.0 + m.max_abs()));
        let sq = &m * &m;
        prop_assert!(close(&sq, &a.tr_mul(&a), 1e-9));
        let eig = to_na(&m).symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-9 * (1.0 + m.max_abs())));
    }

    #[test]
    fn schatten1_prox_and_spectral_projection_split_the_identity(a in matrix()) {
        // Moreau: prox_{‖·‖₁}(A) + Π_{‖·‖_∞ ≤ 1}(A) = A.
        let sum = &prox_schatten1(&a, 1.0).unwrap() + &project_spectral_ball(&a).unwrap();
        prop_assert!(close(&sum, &a, 1e-10));
        let proj = project_spectral_ball(&a).unwrap();
        prop_assert!(oracle_norm(&proj, f64::INFINITY) <= 1.0 + 1e-10);
    }

    #[test]
    fn schatten1_prox_minimizes_its_objective(ad in pair(), t in 0.05f64..2.0) {
        let (a, dir) = ad;
        let x = prox_schatten1(&a, t).unwrap();
        let obj = |y: &Matrix| t * oracle_norm(y, 1.0) + 0.5 * (y - &a).frobenius_norm().powi(2);
        let base = obj(&x);
        for eps in [1e-3, -1e-3, 1e-1] {
            let y = &x + &dir.scale(eps);
            prop_assert!(obj(&y) >= base - 1e-10);
        }
    }

    #[test]
    fn power_prox_solves_its_optimality_condition(a in matrix(), t in 0.05f64..2.0, q in 1.2f64..4.0) {
        let x = prox_schatten_power(&a, t, Exponent::new(q).unwrap()).unwrap();
        let sa = na_singular_values(&a);
        let sx = na_singular_values(&x);
        for (s, y) in sa.iter().zip(&sx) {
            let resid = y + t * q * y.powf(q - 1.0) - s;
            prop_assert!(resid.abs() <= 1e-9 * (1.0 + s), "{resid}");
        }
    }

    #[test]
    fn psd_power_matches_oracle_eigendecomposition(a in matrix(), r in -1.5f64..2.5) {
        let s = a.tr_mul(&a);
        let got = psd_power(&s, r).unwrap();
        let eig = to_na(&s).symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let d = eig.eigenvalues.map(|l| if l > 1e-9 * top && l > 0.0 { l.powf(r) } else { 0.0 });
        let want = from_na(&(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()));
        prop_assert!(close(&got, &want, 1e-7), "{got:?} vs {want:?}");
    }

    #[test]
    fn witness_pairs_are_certified(a in matrix(), p in prop_oneof![Just(1.5), Just(2.0), Just(3.0)]) {
        prop_assume!(a.max_abs() > 1e-2);
        let p = Exponent::new(p).unwrap();
        let b = dual_witness(&a, p).unwrap();
        prop_assert!(certify_equality_pq(&a, &b, p).unwrap().accepted);
    }

    #[test]
    fn trace_norm_certificate_accepts_partial_isometries(a in matrix()) {
        prop_assume!(a.max_abs() > 1e-2);
        let b = dual_witness(&a, Exponent::ONE).unwrap();
        let cert = certify_equality_q1(&a, &b).unwrap();
        prop_assert!(cert.accepted, "{cert:?}");
    }
}

#[test]
fn spec_examples() {
    let a = Matrix::from_diag(&[1.0, 2.0]);
    assert!(certify_equality_q1(&a, &Matrix::identity(2)).unwrap().accepted);
    let a = Matrix::from_diag(&[1.0, -1.0]);
    assert!(!certify_equality_q1(&a, &Matrix::identity(2)).unwrap().accepted);
    let clipped = project_spectral_ball(&Matrix::from_diag(&[3.0, 0.5])).unwrap();
    assert!(close(&clipped, &Matrix::from_diag(&[1.0, 0.5]), 1e-14));
}
