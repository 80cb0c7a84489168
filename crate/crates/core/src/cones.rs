//! Membership tests for polar cones.
//!
//! * The dual cone of monotone maps: `μ` (with `m = n`) pairs nonnegatively
//!   with every monotone map iff the coordinate map attains `J(μ)`, iff
//!   `μ = −div S` for a positive semi-definite field `S`.
//! * Polar cones of tangent cones of the unit ball of `C¹` at `f`: `μ`
//!   belongs iff `∫⟨f, dμ⟩ = J(μ)`.
//! * The Sobolev analogue for densities: `h` belongs iff
//!   `∫⟨f, h⟩ dλ = J(h)` for the `L^p` dual.
//!
//! Membership is decided from certified solver bounds. The certificates
//! (positive semi-definite fields, equality-case residuals, optimality
//! relation residuals) and the sampled witness maps are reported next to the
//! verdict but never decide it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beckmann::{solve_beckmann, SolveReport, SolverParams, SUPPORT_CUTOFF};
use crate::error::{Error, Result};
use crate::generate::{rng_from_seed, smooth_field, SeededRng};
use crate::grid::{
    conjugate_gradient, discrete_divergence, discrete_gradient, divergence_into, gradient_into,
    lp_field_norm, pairing_measure, FieldKind, GridSpec, MatrixField, VectorField, VectorMeasure,
};
use crate::lq::{check_optifun, directional_derivative, solve_lq, LqInstance, OptifunResiduals};
use crate::schatten::spectral::{nuclear_norm_of, operator_norm_of};
use crate::schatten::{certify_equality_q1_with_tol, symmetric_eigen, Matrix, TOL_CERT};

/// Slack allowed on `‖Df‖_∞ ≤ 1` and `‖Df‖_{L^p} = 1`.
pub const NORM_SLACK: f64 = 1e-6;

/// Splitting rounds spent on the positive semi-definite certificate.
const PSD_ROUNDS: usize = 1000;

/// Indefiniteness, relative to the total Schatten-1 mass of the field, at
/// which the certificate search stops.
const PSD_TARGET: f64 = 1e-8;

/// Outcome of a membership query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Member,
    NonMember,
    /// The solver stopped before the bounds could separate the two cases.
    Inconclusive,
}

/// Maximum and mass-weighted mean of a per-cell residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
}

impl ResidualStats {
    fn from_weighted(values: &[(f64, f64)]) -> Self {
        let total: f64 = values.iter().map(|(w, _)| w).sum();
        let max = values.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        let mean = if total > 0.0 {
            values.iter().map(|(w, v)| w * v).sum::<f64>() / total
        } else {
            0.0
        };
        Self { max, mean }
    }
}

/// Equality-case residuals of `(M(c)/‖M(c)‖₁, Df(c))` over the support of the
/// flux.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellResiduals {
    pub cells: usize,
    pub symmetry: ResidualStats,
    /// Negative part of the smallest eigenvalue of `DfᵀM/‖M‖₁`.
    pub psd: ResidualStats,
    pub isometry: ResidualStats,
}

/// A positive semi-definite field `S` with `−div S = μ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdCertificate {
    /// Largest negative eigenvalue part over cells, relative to the total
    /// Schatten-1 mass `Σ_c ‖S(c)‖₁`.
    pub psd_residual: f64,
    /// Largest `‖S(c) − S(c)ᵀ‖_F`, relative to the same mass.
    pub symmetry_residual: f64,
    /// `‖−div S − μ‖₂ / ‖μ‖₂`.
    pub divergence_residual: f64,
    /// `Σ_cells tr S(c)`.
    pub trace_mass: f64,
    #[serde(skip)]
    pub field: Option<MatrixField>,
}

/// Summary of sampled witness maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessSummary {
    pub count: usize,
    /// Smallest pairing over the samples.
    pub worst: f64,
    /// Samples whose pairing fell below `−tolerance`.
    pub violations: Vec<(usize, f64)>,
}

/// Report of a polar-cone membership query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarConeReport {
    pub format: String,
    pub mode: String,
    pub verdict: Verdict,
    pub member: bool,
    /// Certified dual value minus `∫⟨f, dμ⟩`.
    pub gap: f64,
    pub tolerance: f64,
    /// `∫⟨f, dμ⟩` (or `∫⟨f, h⟩ dλ`).
    pub pairing: f64,
    pub solve: SolveReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cell_residuals: Option<CellResiduals>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psd_certificate: Option<PsdCertificate>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optifun: Option<OptifunResiduals>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<WitnessSummary>,
    /// The flux returned by the solver (`M` as masses or `H` as densities).
    #[serde(skip)]
    pub certificate: Option<MatrixField>,
    #[serde(skip)]
    pub potential: Option<VectorField>,
}

/// Decides membership from the certified bounds `dual ≤ J ≤ primal`.
///
/// With `tol = max(10⁻³|dual|, 10·gap_tol·primal)`, the query is a member when
/// `|dual − pairing| ≤ tol`. An unconverged solve still decides when its
/// bounds are conclusive on their own.
fn decide(report: &SolveReport, pairing: f64, gap_tol: f64) -> (Verdict, f64, f64) {
    let gap = report.dual - pairing;
    let tol = (1e-3 * report.dual.abs()).max(10.0 * gap_tol * report.primal.abs());
    let verdict = if gap.abs() <= tol {
        Verdict::Member
    } else if gap > tol {
        Verdict::NonMember
    } else if report.converged || report.primal - pairing <= tol {
        Verdict::Member
    } else {
        Verdict::Inconclusive
    };
    let verdict = if !report.converged && verdict == Verdict::Member && report.primal - pairing > tol {
        Verdict::Inconclusive
    } else {
        verdict
    };
    (verdict, gap, tol)
}

fn empty_report(mode: &str) -> PolarConeReport {
    PolarConeReport {
        format: crate::FORMAT_VERSION.into(),
        mode: mode.into(),
        verdict: Verdict::Member,
        member: true,
        gap: 0.0,
        tolerance: 0.0,
        pairing: 0.0,
        solve: SolveReport::zero(),
        cell_residuals: None,
        psd_certificate: None,
        optifun: None,
        witness: None,
        certificate: None,
        potential: None,
    }
}

/// Equality-case residuals of the flux against `Df` on the support.
fn cell_residuals(flux: &MatrixField, df: &MatrixField) -> Result<CellResiduals> {
    let (m, n) = (flux.m(), flux.n());
    let block = m * n;
    let norms: Vec<f64> = flux
        .values()
        .chunks_exact(block)
        .map(|b| nuclear_norm_of(b, m, n))
        .collect();
    let total: f64 = norms.iter().sum();
    let mut sym = Vec::new();
    let mut psd = Vec::new();
    let mut iso = Vec::new();
    for (c, &w) in norms.iter().enumerate() {
        if total == 0.0 || w < SUPPORT_CUTOFF * total {
            continue;
        }
        let a = flux.cell(c).scale(1.0 / w);
        let cert = certify_equality_q1_with_tol(&a, &df.cell(c), TOL_CERT)?;
        sym.push((w, cert.residual_symmetry));
        psd.push((w, -cert.residual_psd));
        iso.push((w, cert.residual_isometry_or_power));
    }
    Ok(CellResiduals {
        cells: sym.len(),
        symmetry: ResidualStats::from_weighted(&sym),
        psd: ResidualStats::from_weighted(&psd),
        isometry: ResidualStats::from_weighted(&iso),
    })
}

fn symmetrize_blocks(values: &mut [f64], n: usize) {
    for b in values.chunks_exact_mut(n * n) {
        for i in 0..n {
            for j in i + 1..n {
                let s = 0.5 * (b[i * n + j] + b[j * n + i]);
                b[i * n + j] = s;
                b[j * n + i] = s;
            }
        }
    }
}

/// Orthogonal projection of a symmetric field onto
/// `{S symmetric : GᵀS = target}`, via `S += Sym(G w)` with
/// `Gᵀ Sym(G w) = target − GᵀS`. Returns `‖GᵀS − target‖₂`.
fn project_symmetric_affine(grid: &GridSpec, s: &mut [f64], target: &[f64]) -> f64 {
    let n = grid.dim();
    let len = grid.cell_count() * n;
    let mut div = vec![0.0; len];
    divergence_into(grid, n, s, &mut div);
    let resid: Vec<f64> = target.iter().zip(&div).map(|(t, d)| t - d).collect();
    let mut buf = vec![0.0; s.len()];
    let solve = conjugate_gradient(
        |v, out| {
            adjoint_into(grid, v, &mut buf);
            divergence_into(grid, n, &buf, out);
        },
        &resid,
        n,
        1e-13,
        20 * grid.cell_count() + 200,
    );
    let mut corr = vec![0.0; s.len()];
    adjoint_into(grid, &solve.solution, &mut corr);
    for (x, c) in s.iter_mut().zip(&corr) {
        *x += c;
    }
    divergence_into(grid, n, s, &mut div);
    target
        .iter()
        .zip(&div)
        .map(|(t, d)| (t - d) * (t - d))
        .sum::<f64>()
        .sqrt()
}

/// `Sym(G w)`: the adjoint of `S ↦ GᵀS` on symmetric fields.
fn adjoint_into(grid: &GridSpec, w: &[f64], out: &mut [f64]) {
    gradient_into(grid, grid.dim(), w, out);
    symmetrize_blocks(out, grid.dim());
}

/// Projects every (symmetric) cell onto the positive semi-definite cone.
fn clip_psd(s: &mut [f64], n: usize) {
    for b in s.chunks_exact_mut(n * n) {
        let a = Matrix::from_raw(n, n, b.to_vec());
        let Ok(eig) = symmetric_eigen(&a) else {
            continue;
        };
        if eig.min_value() < 0.0 {
            b.copy_from_slice(eig.map(|l| l.max(0.0)).as_slice());
        }
    }
}

/// Total Schatten-1 mass `Σ_c ‖S(c)‖₁` and the largest negative eigenvalue
/// part of a symmetric field.
fn psd_defect(s: &[f64], n: usize) -> (f64, f64) {
    let mut mass = 0.0;
    let mut neg = 0.0f64;
    for b in s.chunks_exact(n * n) {
        mass += nuclear_norm_of(b, n, n);
        let a = Matrix::from_raw(n, n, b.to_vec());
        if let Ok(eig) = symmetric_eigen(&a) {
            neg = neg.max(-eig.min_value());
        }
    }
    (mass, neg)
}

/// Builds a symmetric field with `−div S = μ` that is positive semi-definite
/// up to a reported defect, starting from the symmetric part of `flux`.
///
/// Douglas–Rachford splitting between the affine set of symmetric fields
/// with the right divergence and the cell-wise positive semi-definite cone.
/// Every candidate is taken from the affine side, so the divergence
/// constraint holds to CG accuracy and only the indefiniteness is reduced.
fn psd_certificate(mu: &VectorMeasure, flux: &MatrixField) -> Result<PsdCertificate> {
    let grid = mu.grid();
    let n = grid.dim();
    let mut x = flux.values().to_vec();
    symmetrize_blocks(&mut x, n);
    let mut residual = project_symmetric_affine(grid, &mut x, mu.masses());
    let mut s = x.clone();
    let relative = |s: &[f64]| {
        let (mass, neg) = psd_defect(s, n);
        neg / mass.max(f64::MIN_POSITIVE)
    };
    let mut best = relative(&s);
    for _ in 0..PSD_ROUNDS {
        if best <= PSD_TARGET {
            break;
        }
        let mut a = x.clone();
        clip_psd(&mut a, n);
        let mut b: Vec<f64> = a.iter().zip(&x).map(|(a, x)| 2.0 * a - x).collect();
        let r = project_symmetric_affine(grid, &mut b, mu.masses());
        for ((x, a), b) in x.iter_mut().zip(&a).zip(&b) {
            *x += b - a;
        }
        let v = relative(&b);
        if v < best {
            best = v;
            s = b;
            residual = r;
        }
    }
    let (mass, _) = psd_defect(&s, n);
    let mass = mass.max(f64::MIN_POSITIVE);
    let mut psd_residual = 0.0f64;
    let mut symmetry_residual = 0.0f64;
    let mut trace_mass = 0.0;
    for b in s.chunks_exact(n * n) {
        let a = Matrix::from_raw(n, n, b.to_vec());
        symmetry_residual = symmetry_residual.max(a.asymmetry() / mass);
        psd_residual = psd_residual.max((-symmetric_eigen(&a)?.min_value()).max(0.0) / mass);
        trace_mass += a.trace();
    }
    let mu_norm = mu.masses().iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(PsdCertificate {
        psd_residual,
        symmetry_residual,
        divergence_residual: residual / mu_norm.max(f64::MIN_POSITIVE),
        trace_mass,
        field: Some(MatrixField::from_values(grid.clone(), n, FieldKind::Mass, s)?),
    })
}

fn check_gradient_bound(f: &VectorField) -> Result<MatrixField> {
    let df = discrete_gradient(f);
    let (m, n) = (df.m(), df.n());
    let lip = df
        .values()
        .chunks_exact(m * n)
        .map(|b| operator_norm_of(b, m, n))
        .fold(0.0, f64::max);
    if lip > 1.0 + NORM_SLACK {
        return Err(Error::InvalidInput(format!(
            "the potential must satisfy |Df| <= 1 in every cell, found {lip}"
        )));
    }
    Ok(df)
}

/// Membership of `μ` in the polar of the tangent cone of the `C¹` unit ball
/// at `f`: `∫⟨f, dμ⟩ = J(μ)`.
pub fn tangent_cone_check(mu: &VectorMeasure, f: &VectorField, params: &SolverParams) -> Result<PolarConeReport> {
    mu.check_compatible(f)?;
    let df = check_gradient_bound(f)?;
    mu.ensure_balanced()?;
    let mut report = empty_report("tangent-c1");
    if mu.is_zero() {
        return Ok(report);
    }
    let (flux, u, solve) = solve_beckmann(mu, params)?;
    let pairing = pairing_measure(f, mu)?;
    let (verdict, gap, tol) = decide(&solve, pairing, params.gap_tol);
    report.verdict = verdict;
    report.member = verdict == Verdict::Member;
    report.gap = gap;
    report.tolerance = tol;
    report.pairing = pairing;
    report.solve = solve;
    report.cell_residuals = Some(cell_residuals(&flux, &df)?);
    report.certificate = Some(flux);
    report.potential = Some(u);
    Ok(report)
}

/// Membership of `μ` (with `m = n`) in the dual cone of monotone maps.
///
/// This is [`tangent_cone_check`] at the coordinate map. For members a
/// positive semi-definite field `S` with `−div S = μ` is built from the
/// optimal flux and reported in `psd_certificate`.
pub fn monotone_membership(mu: &VectorMeasure, params: &SolverParams) -> Result<PolarConeReport> {
    let n = mu.grid().dim();
    if mu.m() != n {
        return Err(Error::InvalidInput(format!(
            "monotone maps need m = n, got m = {} and n = {n}",
            mu.m()
        )));
    }
    let id = VectorField::coordinates(mu.grid().clone());
    let mut report = tangent_cone_check(mu, &id, params)?;
    report.mode = "monotone".into();
    if report.member {
        if let Some(flux) = &report.certificate {
            report.psd_certificate = Some(psd_certificate(mu, flux)?);
        }
    }
    Ok(report)
}

/// `μ = −div S` for a field of symmetric positive semi-definite cells.
///
/// Density-flagged fields are converted to masses first.
pub fn psd_field_to_measure(s: &MatrixField) -> Result<VectorMeasure> {
    let n = s.n();
    if s.m() != n {
        return Err(Error::InvalidInput("a positive semi-definite field needs square cells".into()));
    }
    let scale = s
        .values()
        .chunks_exact(n * n)
        .map(|b| operator_norm_of(b, n, n))
        .fold(0.0, f64::max);
    for c in 0..s.grid().cell_count() {
        let a = s.cell(c);
        let bad_sym = a.asymmetry() > TOL_CERT * scale;
        let bad_psd = symmetric_eigen(&a)?.min_value() < -TOL_CERT * scale;
        if bad_sym || bad_psd {
            return Err(Error::InvalidInput(format!(
                "cell {c} {:?} is not symmetric positive semi-definite",
                s.grid().multi_index(c)
            )));
        }
    }
    discrete_divergence(&s.to_mass())
}

/// Smallest pairing `∫⟨u, dμ⟩` over `count` sampled monotone maps.
///
/// The maps are `u(x) = Qx + b + ∇ψ(x)` with `Q` positive semi-definite and
/// `ψ` a separable convex piecewise-quadratic spline, so `Du` is positive
/// semi-definite away from the upper boundary faces.
pub fn monotone_witness_check(mu: &VectorMeasure, count: usize, seed: u64) -> Result<WitnessSummary> {
    let grid = mu.grid().clone();
    let n = grid.dim();
    if mu.m() != n {
        return Err(Error::InvalidInput("monotone maps need m = n".into()));
    }
    let mut rng = rng_from_seed(seed);
    let scale = mu.total_variation().max(f64::MIN_POSITIVE);
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    for id in 0..count {
        let u = sample_monotone_map(&grid, &mut rng)?;
        let val = pairing_measure(&u, mu)?;
        worst = worst.min(val);
        if val < -1e-8 * scale {
            violations.push((id, val));
        }
    }
    Ok(WitnessSummary {
        count,
        worst: if count == 0 { 0.0 } else { worst },
        violations,
    })
}

fn sample_monotone_map(grid: &GridSpec, rng: &mut SeededRng) -> Result<VectorField> {
    let n = grid.dim();
    let q = crate::generate::random_psd(n, rng).scale(rng.gen_range(0.0..2.0));
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Knots and nonnegative weights of ψ_k(t) = Σ_j w_j (t − t_j)₊².
    let knots: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|k| {
            let lo = grid.origin()[k];
            let hi = lo + grid.dims()[k] as f64 * grid.spacing()[k];
            (0..3)
                .map(|_| (rng.gen_range(lo..hi), rng.gen_range(0.0..3.0)))
                .collect()
        })
        .collect();
    VectorField::from_fn(grid.clone(), n, |x| {
        let qx = q.matvec(x);
        (0..n)
            .map(|k| {
                let spline: f64 = knots[k]
                    .iter()
                    .map(|(t, w)| 2.0 * w * (x[k] - t).max(0.0))
                    .sum();
                qx[k] + b[k] + spline
            })
            .collect()
    })
}

/// Membership of the density `h` in the polar of the tangent cone of the
/// `W^{1,p}` unit ball at `f`: `∫⟨f, h⟩ dλ = J(h)`.
///
/// Also samples `samples` smooth test fields `g`, oriented so that the
/// directional derivative at `f` along `g` is nonnegative, and reports the
/// smallest `∫⟨g, h⟩ dλ`.
pub fn sobolev_cone_check(
    inst: &LqInstance,
    f: &VectorField,
    params: &SolverParams,
    samples: usize,
    seed: u64,
) -> Result<PolarConeReport> {
    let h = inst.measure();
    h.check_compatible(f)?;
    let p = inst.p();
    let norm = lp_field_norm(&discrete_gradient(f), p)?;
    if (norm - 1.0).abs() > NORM_SLACK {
        return Err(Error::InvalidInput(format!(
            "the potential must have unit L^p gradient norm, found {norm}"
        )));
    }
    let mut report = empty_report("sobolev");
    if h.is_zero() {
        return Ok(report);
    }
    let (_, flux, solve) = solve_lq(inst, params)?;
    let pairing = pairing_measure(f, h)?;
    let (verdict, gap, tol) = decide(&solve, pairing, params.gap_tol);
    report.verdict = verdict;
    report.member = verdict == Verdict::Member;
    report.gap = gap;
    report.tolerance = tol;
    report.pairing = pairing;
    report.solve = solve;
    report.optifun = Some(check_optifun(f, &flux, inst.q())?);

    let mut rng = rng_from_seed(seed);
    let scale = h.total_variation().max(f64::MIN_POSITIVE);
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    for id in 0..samples {
        let mut g = smooth_field(f.grid().clone(), f.m(), &mut rng)?;
        // The derivative is linear in g, so flipping g makes it nonnegative.
        if directional_derivative(f, &g, p)? < 0.0 {
            g = g.scaled(-1.0);
        }
        let val = pairing_measure(&g, h)?;
        worst = worst.min(val);
        if val < -tol.max(1e-8 * scale) {
            violations.push((id, val));
        }
    }
    report.witness = Some(WitnessSummary {
        count: samples,
        worst: if samples == 0 { 0.0 } else { worst },
        violations,
    });
    report.certificate = Some(flux);
    Ok(report)
}
