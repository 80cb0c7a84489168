//! Matrix calculus for Schatten norms.
//!
//! Singular values drive everything here: Schatten `p`-norms, the matrix
//! absolute value `|A| = (AᵀA)^{1/2}`, the Hölder slack
//! `‖A‖_p‖B‖_q − |⟨A, B⟩|`, witnesses attaining the duality
//! `‖A‖_p = sup{⟨A, B⟩ : ‖B‖_q ≤ 1}`, and certificates for the equality cases
//! of the matrix Hölder inequality. The proximal maps used by the flux solvers
//! live here as well.

mod decomp;
mod matrix;
pub(crate) mod spectral;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use decomp::{svd, symmetric_eigen, SvdDecomposition, SymmetricEigen, TOL_SVD};
pub use matrix::Matrix;

/// Default acceptance threshold of equality certificates.
pub const TOL_CERT: f64 = 1e-8;

/// Relative cutoff below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-13;

/// Exponent `p ∈ [1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidExponent(p));
        }
        Ok(Self(p))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The exponent `q` with `1/p + 1/q = 1`.
    pub fn conjugate(self) -> Self {
        if self.0 == 1.0 {
            Self(f64::INFINITY)
        } else if self.0.is_infinite() {
            Self(1.0)
        } else {
            Self(self.0 / (self.0 - 1.0))
        }
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// True for `p ∈ (1, ∞)`.
    pub fn is_interior(self) -> bool {
        self.0 > 1.0 && self.0.is_finite()
    }
}

impl TryFrom<f64> for Exponent {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<Exponent> for f64 {
    fn from(p: Exponent) -> f64 {
        p.0
    }
}

/// `ℓ_p` norm of a nonnegative sequence, scaled to avoid overflow.
pub fn lp_of_values(values: &[f64], p: Exponent) -> f64 {
    let top = values.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if top == 0.0 {
        return 0.0;
    }
    let p = p.value();
    if p.is_infinite() {
        top
    } else if p == 1.0 {
        values.iter().map(|x| x.abs()).sum()
    } else {
        top * values.iter().map(|x| (x.abs() / top).powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// `|A| = (AᵀA)^{1/2}`, the `n×n` symmetric positive semi-definite root.
pub fn abs_matrix(a: &Matrix) -> Result<Matrix> {
    Ok(svd(a)?.right_spectral(|s| s))
}

/// Schatten `p`-norm: the `ℓ_p` norm of the singular values.
pub fn schatten_norm(a: &Matrix, p: Exponent) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    // Fast paths that avoid the SVD.
    if p == Exponent::TWO {
        return Ok(a.frobenius_norm());
    }
    if a.rows() == 1 || a.cols() == 1 {
        return Ok(a.frobenius_norm());
    }
    Ok(lp_of_values(&svd(a)?.singular_values, p))
}

/// `⟨A, B⟩ = tr(AᵀB) = Σᵢⱼ AᵢⱼBᵢⱼ`.
pub fn pairing(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum())
}

/// `‖A‖_p ‖B‖_q − |⟨A, B⟩|`, nonnegative up to rounding by the matrix Hölder
/// inequality.
pub fn holder_slack(a: &Matrix, b: &Matrix, p: Exponent) -> Result<f64> {
    let inner = pairing(a, b)?;
    Ok(schatten_norm(a, p)? * schatten_norm(b, p.conjugate())? - inner.abs())
}

/// A matrix `B ≠ 0` attaining `⟨A, B⟩ = ‖A‖_p ‖B‖_q`.
///
/// With the polar factorisation `A = U D`, this is `U D^{p−1}` for
/// `p ∈ (1, ∞)`, the partial isometry `U` for `p = 1`, and the top singular
/// pair `f₁ e₁ᵀ` for `p = ∞`.
pub fn dual_witness(a: &Matrix, p: Exponent) -> Result<Matrix> {
    let d = svd(a)?;
    let top = d.singular_values[0];
    if top == 0.0 {
        return Err(Error::Degenerate(
            "zero matrix: every B attains the duality".into(),
        ));
    }
    let cutoff = RANK_TOL * top;
    let pv = p.value();
    let out = if p.is_infinite() {
        let mut first = true;
        d.map_singular_values(|_| {
            let w = if first { 1.0 } else { 0.0 };
            first = false;
            w
        })
    } else if pv == 1.0 {
        d.map_singular_values(|s| if s > cutoff { 1.0 } else { 0.0 })
    } else {
        // Normalizing by the top singular value keeps the powers in range.
        d.map_singular_values(|s| if s > cutoff { (s / top).powf(pv - 1.0) } else { 0.0 })
    };
    Ok(out)
}

/// Outcome of an equality-case test for the matrix Hölder inequality.
///
/// Residuals are normalized by the magnitude of the inputs. `residual_psd` is
/// the most negative eigenvalue of the symmetrized product, clamped at zero
/// from above.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualityCertificate {
    pub accepted: bool,
    pub residual_symmetry: f64,
    pub residual_psd: f64,
    pub residual_isometry_or_power: f64,
    pub residual_norm_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scaling: Option<f64>,
    pub tolerance: f64,
}

impl EqualityCertificate {
    /// Re-evaluates the verdict at another threshold.
    pub fn accepts_at(&self, tol: f64) -> bool {
        self.worst_residual() <= tol
    }

    pub fn worst_residual(&self) -> f64 {
        self.residual_symmetry
            .max(-self.residual_psd)
            .max(self.residual_isometry_or_power)
            .max(self.residual_norm_bound)
    }

    fn finish(mut self) -> Self {
        self.accepted = self.accepts_at(self.tolerance);
        self
    }
}

/// Certificate for `tr(AᵀB) = ‖A‖₁` under `‖B‖_∞ ≤ 1`.
///
/// Equality holds iff `BᵀA` is symmetric positive semi-definite and
/// `AᵀBBᵀA = AᵀA`, i.e. `Bᵀ` is an isometry on `im A`.
pub fn certify_equality_q1(a: &Matrix, b: &Matrix) -> Result<EqualityCertificate> {
    certify_equality_q1_with_tol(a, b, TOL_CERT)
}

pub fn certify_equality_q1_with_tol(a: &Matrix, b: &Matrix, tol: f64) -> Result<EqualityCertificate> {
    a.same_shape(b)?;
    let op_b = schatten_norm(b, Exponent::INFINITY)?;
    let residual_norm_bound = (op_b - 1.0).max(0.0);
    let scale = schatten_norm(a, Exponent::ONE)?;
    if scale == 0.0 {
        return Ok(EqualityCertificate {
            accepted: false,
            residual_symmetry: 0.0,
            residual_psd: 0.0,
            residual_isometry_or_power: 0.0,
            residual_norm_bound,
            scaling: None,
            tolerance: tol,
        }
        .finish());
    }
    let bta = b.tr_mul(a);
    let residual_symmetry = bta.asymmetry() / scale;
    let lmin = symmetric_eigen(&bta)?.min_value();
    let residual_psd = (lmin / scale).min(0.0);
    let btb_a = b.transpose();
    let bbt_a = b * &(&btb_a * a);
    let lhs = a.tr_mul(&bbt_a);
    let ata = a.tr_mul(a);
    let residual_isometry_or_power = (&lhs - &ata).frobenius_norm() / (scale * scale);
    Ok(EqualityCertificate {
        accepted: false,
        residual_symmetry,
        residual_psd,
        residual_isometry_or_power,
        residual_norm_bound,
        scaling: None,
        tolerance: tol,
    }
    .finish())
}

/// Certificate for `tr(AᵀB) = ‖A‖_p ‖B‖_q` with `p ∈ (1, ∞)`.
///
/// Equality holds iff the four normalized matrices
/// `AᵀB/(‖A‖_p‖B‖_q)`, `BᵀA/(‖A‖_p‖B‖_q)`, `(AᵀA)^{p/2}/‖A‖_p^p` and
/// `(BᵀB)^{q/2}/‖B‖_q^q` coincide. Inputs with more rows than columns are
/// transposed first. The reported scaling is
/// `c = (‖B‖_q^q / ‖A‖_p^p)^{1/(pq)}`, for which `AᵀB = c^p (AᵀA)^{p/2}`.
pub fn certify_equality_pq(a: &Matrix, b: &Matrix, p: Exponent) -> Result<EqualityCertificate> {
    certify_equality_pq_with_tol(a, b, p, TOL_CERT)
}

pub fn certify_equality_pq_with_tol(
    a: &Matrix,
    b: &Matrix,
    p: Exponent,
    tol: f64,
) -> Result<EqualityCertificate> {
    a.same_shape(b)?;
    if !p.is_interior() {
        return Err(Error::InvalidExponent(p.value()));
    }
    if a.is_zero() || b.is_zero() {
        return Err(Error::Degenerate("both matrices must be nonzero".into()));
    }
    let (a, b) = if a.rows() > a.cols() {
        (a.transpose(), b.transpose())
    } else {
        (a.clone(), b.clone())
    };
    let q = p.conjugate();
    let (pv, qv) = (p.value(), q.value());
    let da = svd(&a)?;
    let db = svd(&b)?;
    let norm_a = lp_of_values(&da.singular_values, p);
    let norm_b = lp_of_values(&db.singular_values, q);
    let denom = norm_a * norm_b;

    let x1 = a.tr_mul(&b).scale(1.0 / denom);
    let x2 = x1.transpose();
    let x3 = da.right_spectral(|s| (s / norm_a).powf(pv));
    let x4 = db.right_spectral(|s| (s / norm_b).powf(qv));

    let residual_symmetry = (&x1 - &x2).frobenius_norm();
    let residual_psd = symmetric_eigen(&x2)?.min_value().min(0.0);
    let residual_isometry_or_power = (&x2 - &x3)
        .frobenius_norm()
        .max((&x3 - &x4).frobenius_norm())
        .max((&x2 - &x4).frobenius_norm());
    // c^{pq} = ‖B‖_q^q / ‖A‖_p^p, evaluated in log space.
    let log_c = (qv * norm_b.ln() - pv * norm_a.ln()) / (pv * qv);
    Ok(EqualityCertificate {
        accepted: false,
        residual_symmetry,
        residual_psd,
        residual_isometry_or_power,
        residual_norm_bound: 0.0,
        scaling: Some(log_c.exp()),
        tolerance: tol,
    }
    .finish())
}

/// Proximal map of `t‖·‖₁`: soft-thresholds the singular values.
pub fn prox_schatten1(a: &Matrix, t: f64) -> Result<Matrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("threshold must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if a.rows() == 1 || a.cols() == 1 {
        let nrm = a.frobenius_norm();
        let s = if nrm > t { 1.0 - t / nrm } else { 0.0 };
        return Ok(a.scale(s));
    }
    Ok(svd(a)?.map_singular_values(|s| (s - t).max(0.0)))
}

/// Projection onto the spectral-norm unit ball `{‖B‖_∞ ≤ 1}`.
pub fn project_spectral_ball(a: &Matrix) -> Result<Matrix> {
    if a.rows() == 1 || a.cols() == 1 {
        let nrm = a.frobenius_norm();
        return Ok(if nrm > 1.0 { a.scale(1.0 / nrm) } else { a.clone() });
    }
    let d = svd(a)?;
    if d.singular_values[0] <= 1.0 {
        return Ok(a.clone());
    }
    Ok(d.map_singular_values(|s| s.min(1.0)))
}

/// Proximal map of `t‖·‖_q^q`: each singular value `a` is replaced by the root
/// `x ≥ 0` of `x + t q x^{q−1} = a`.
pub fn prox_schatten_power(a: &Matrix, t: f64, q: Exponent) -> Result<Matrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("step must be nonnegative, got {t}")));
    }
    if !q.is_interior() {
        return Err(Error::InvalidExponent(q.value()));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    let qv = q.value();
    if a.rows() == 1 || a.cols() == 1 {
        let nrm = a.frobenius_norm();
        if nrm == 0.0 {
            return Ok(a.clone());
        }
        let x = power_prox_scalar(nrm, t * qv, qv);
        return Ok(a.scale(x / nrm));
    }
    Ok(svd(a)?.map_singular_values(|s| power_prox_scalar(s, t * qv, qv)))
}

/// Root of `x + c x^{q−1} = a` on `[0, a]`: Newton steps safeguarded by
/// bisection.
pub fn power_prox_scalar(a: f64, c: f64, q: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let phi = |x: f64| x + c * x.powf(q - 1.0) - a;
    let (mut lo, mut hi) = (0.0f64, a);
    // Initial guess: the smaller of the two single-term solutions.
    let mut x = a.min((a / c).powf(1.0 / (q - 1.0)));
    for _ in 0..200 {
        let fx = phi(x);
        if fx.abs() <= 1e-15 * a {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dfx = 1.0 + c * (q - 1.0) * x.powf(q - 2.0);
        let mut next = x - fx / dfx;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * a {
            return next;
        }
        x = next;
    }
    x
}

/// `S^r` for symmetric positive semi-definite `S`, with `0^r := 0` for every
/// `r` so that the power acts on `im S` only.
pub fn psd_power(s: &Matrix, r: f64) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "psd_power needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !r.is_finite() {
        return Err(Error::InvalidInput(format!("power must be finite, got {r}")));
    }
    let scale = s.max_abs().max(f64::MIN_POSITIVE);
    if s.asymmetry() > TOL_CERT * scale {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    let eig = symmetric_eigen(s)?;
    if eig.min_value() < -TOL_CERT * scale {
        return Err(Error::InvalidInput(format!(
            "matrix is indefinite (eigenvalue {:e})",
            eig.min_value()
        )));
    }
    let top = eig.values[0].max(0.0);
    let cutoff = RANK_TOL * top;
    Ok(eig.map(|l| if l > cutoff && l > 0.0 { l.powf(r) } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        (a - b).max_abs() <= tol
    }

    #[test]
    fn exponent_validation_and_conjugates() {
        assert!(matches!(Exponent::new(0.5), Err(Error::InvalidExponent(_))));
        assert!(Exponent::new(f64::NAN).is_err());
        assert_eq!(Exponent::ONE.conjugate(), Exponent::INFINITY);
        assert_eq!(Exponent::INFINITY.conjugate(), Exponent::ONE);
        assert!((Exponent::new(3.0).unwrap().conjugate().value() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn abs_matrix_examples() {
        let a = m(&[&[0.0, -2.0], &[1.0, 0.0]]);
        assert!(close(&abs_matrix(&a).unwrap(), &Matrix::from_diag(&[1.0, 2.0]), 1e-14));
        let neg = Matrix::identity(3).scale(-1.0);
        assert!(close(&abs_matrix(&neg).unwrap(), &Matrix::identity(3), 1e-14));
        let psd = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        assert!(close(&abs_matrix(&psd).unwrap(), &psd, 1e-14));
    }

    #[test]
    fn schatten_norm_examples() {
        let i3 = Matrix::identity(3);
        assert!((schatten_norm(&i3, Exponent::TWO).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let d = Matrix::from_diag(&[3.0, 4.0]);
        assert!((schatten_norm(&d, Exponent::ONE).unwrap() - 7.0).abs() < 1e-14);
        assert!((schatten_norm(&d, Exponent::INFINITY).unwrap() - 4.0).abs() < 1e-14);
        let p3 = Exponent::new(3.0).unwrap();
        assert!((schatten_norm(&d, p3).unwrap() - 91f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn pairing_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(pairing(&a, &b).unwrap(), 70.0);
        assert_eq!(pairing(&Matrix::identity(4), &Matrix::identity(4)).unwrap(), 4.0);
        assert!(matches!(
            pairing(&a, &Matrix::identity(3)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn holder_slack_examples() {
        let i2 = Matrix::identity(2);
        assert!(holder_slack(&i2, &i2, Exponent::TWO).unwrap().abs() < 1e-14);
        let e1 = Matrix::from_diag(&[1.0, 0.0]);
        let e2 = Matrix::from_diag(&[0.0, 1.0]);
        assert!((holder_slack(&e1, &e2, Exponent::ONE).unwrap() - 1.0).abs() < 1e-14);
        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!((holder_slack(&i2, &rot, Exponent::ONE).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn dual_witness_examples() {
        let a = Matrix::from_diag(&[2.0, 0.0]);
        let b = dual_witness(&a, Exponent::ONE).unwrap();
        assert!(close(&b, &Matrix::from_diag(&[1.0, 0.0]), 1e-14));
        assert!((pairing(&a, &b).unwrap() - 2.0).abs() < 1e-14);

        let i3 = Matrix::identity(3);
        assert!(close(&dual_witness(&i3, Exponent::TWO).unwrap(), &i3, 1e-14));

        // For p = 2 the witness is A up to a positive factor.
        let a = Matrix::from_diag(&[1.0, 2.0]);
        let b = dual_witness(&a, Exponent::TWO).unwrap();
        let b = b.scale(2.0 / b[(1, 1)]);
        assert!(close(&b, &a, 1e-14));
        assert!((pairing(&a, &b).unwrap() - 5.0).abs() < 1e-13);

        assert!(matches!(
            dual_witness(&Matrix::zeros(2, 3), Exponent::TWO),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn q1_certificate_examples() {
        let i2 = Matrix::identity(2);
        assert!(certify_equality_q1(&Matrix::from_diag(&[1.0, 2.0]), &i2).unwrap().accepted);
        let c = certify_equality_q1(&Matrix::from_diag(&[1.0, -1.0]), &i2).unwrap();
        assert!(!c.accepted);
        assert!(c.residual_psd < 0.0);
        let e1 = Matrix::from_diag(&[1.0, 0.0]);
        assert!(certify_equality_q1(&e1, &e1).unwrap().accepted);
    }

    #[test]
    fn q1_certificate_flags_norm_bound_violation() {
        let a = Matrix::from_diag(&[1.0, 2.0]);
        let c = certify_equality_q1(&a, &Matrix::identity(2).scale(1.5)).unwrap();
        assert!(!c.accepted);
        assert!((c.residual_norm_bound - 0.5).abs() < 1e-14);
    }

    #[test]
    fn pq_certificate_examples() {
        let a = Matrix::from_diag(&[1.0, 2.0]);
        let c = certify_equality_pq(&a, &a, Exponent::TWO).unwrap();
        assert!(c.accepted, "{c:?}");
        assert!((c.scaling.unwrap() - 1.0).abs() < 1e-14);

        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let c = certify_equality_pq(&Matrix::identity(2), &rot, Exponent::TWO).unwrap();
        assert!(!c.accepted);

        // b_j = a_j^{p/q} = a_j^{p-1}.
        let p = Exponent::new(3.0).unwrap();
        let b = Matrix::from_diag(&[1.0, 4.0]);
        let c = certify_equality_pq(&a, &b, p).unwrap();
        assert!(c.accepted, "{c:?}");
        // ‖A‖₃³ = 9, ‖B‖_{3/2}^{3/2} = 9, so c = 1.
        assert!((c.scaling.unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(
            certify_equality_pq(&Matrix::zeros(2, 2), &a, p),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pq_certificate_transposes_tall_inputs() {
        let a = m(&[&[1.0, 0.0], &[0.0, 2.0], &[0.0, 0.0]]);
        let p = Exponent::new(1.5).unwrap();
        let b = dual_witness(&a, p).unwrap();
        assert!(certify_equality_pq(&a, &b, p).unwrap().accepted);
    }

    #[test]
    fn prox_schatten1_examples() {
        let a = Matrix::from_diag(&[3.0, 1.0]);
        assert!(close(&prox_schatten1(&a, 2.0).unwrap(), &Matrix::from_diag(&[1.0, 0.0]), 1e-14));
        assert_eq!(prox_schatten1(&a, 0.0).unwrap(), a);
        assert!(prox_schatten1(&a, 3.0).unwrap().max_abs() < 1e-15);
        assert!(prox_schatten1(&a, -1.0).is_err());
    }

    #[test]
    fn spectral_ball_examples() {
        let inside = m(&[&[0.5, 0.1], &[0.0, 0.3]]);
        assert_eq!(project_spectral_ball(&inside).unwrap(), inside);
        let d = Matrix::from_diag(&[3.0, 0.5]);
        assert!(close(&project_spectral_ball(&d).unwrap(), &Matrix::from_diag(&[1.0, 0.5]), 1e-14));
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = m(&[&[c, -s], &[s, c]]);
        assert!(close(&project_spectral_ball(&r.scale(2.0)).unwrap(), &r, 1e-14));
    }

    #[test]
    fn psd_power_examples() {
        let i2 = Matrix::identity(2);
        assert!(close(&psd_power(&i2, -0.7).unwrap(), &i2, 1e-14));
        let s = Matrix::from_diag(&[4.0, 9.0]);
        assert!(close(&psd_power(&s, 0.5).unwrap(), &Matrix::from_diag(&[2.0, 3.0]), 1e-14));
        let s = Matrix::from_diag(&[4.0, 0.0]);
        assert!(close(&psd_power(&s, -0.5).unwrap(), &Matrix::from_diag(&[0.5, 0.0]), 1e-14));
        assert!(psd_power(&m(&[&[1.0, 2.0], &[0.0, 1.0]]), 0.5).is_err());
        assert!(psd_power(&Matrix::from_diag(&[1.0, -1.0]), 0.5).is_err());
    }

    #[test]
    fn power_prox_solves_scalar_equation() {
        for &q in &[1.2, 1.5, 2.0, 3.0, 6.0] {
            for &a in &[1e-8, 0.3, 1.0, 7.5, 1e4] {
                for &c in &[1e-3, 0.5, 10.0] {
                    let x = power_prox_scalar(a, c, q);
                    assert!(x >= 0.0 && x <= a);
                    let r = x + c * x.powf(q - 1.0) - a;
                    assert!(r.abs() <= 1e-12 * a.max(1.0), "q={q} a={a} c={c} r={r}");
                }
            }
        }
    }
}
