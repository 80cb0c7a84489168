//! Seeded instance generators shared by the command line and the tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{subtract_component_means, FieldKind, GridSpec, MatrixField, VectorField, VectorMeasure};
use crate::schatten::Matrix;

/// Random number generator used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// `v (δ_a − δ_b)`, with both points snapped to their cells.
pub fn two_dirac(grid: GridSpec, a: &[f64], b: &[f64], v: &[f64]) -> Result<VectorMeasure> {
    let mut mu = VectorMeasure::zeros(grid, v.len());
    mu.add_dirac(a, v)?;
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    mu.add_dirac(b, &neg)?;
    Ok(mu)
}

/// Sparse random masses; the last cell absorbs the negated total so the
/// measure is balanced by construction.
pub fn random_balanced(grid: GridSpec, m: usize, fill: f64, rng: &mut SeededRng) -> Result<VectorMeasure> {
    if !(0.0..=1.0).contains(&fill) {
        return Err(Error::InvalidInput("fill fraction must lie in [0, 1]".into()));
    }
    let cells = grid.cell_count();
    let mut masses = vec![0.0; cells * m];
    for c in 0..cells - 1 {
        if rng.gen_bool(fill) {
            for r in 0..m {
                masses[c * m + r] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let mut total = vec![0.0; m];
    for c in 0..cells - 1 {
        for r in 0..m {
            total[r] += masses[c * m + r];
        }
    }
    for r in 0..m {
        masses[(cells - 1) * m + r] = -total[r];
    }
    VectorMeasure::from_masses(grid, m, masses)
}

/// Random symmetric positive semi-definite `n×n` matrix `LLᵀ` with unit
/// trace.
pub fn random_psd(n: usize, rng: &mut SeededRng) -> Matrix {
    let l = Matrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("finite entries");
    let s = &l * &l.transpose();
    let t = s.trace();
    s.scale(1.0 / t.max(f64::MIN_POSITIVE))
}

/// Smooth bump `(1 − r²/ρ²)³₊`.
fn bump(x: &[f64], center: &[f64], radius: f64) -> f64 {
    let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
    let t = 1.0 - r2 / (radius * radius);
    if t > 0.0 {
        t * t * t
    } else {
        0.0
    }
}

/// Density field `S = Σ_i φ_i P_i` of `bumps` bumps `φ_i ≥ 0`, each with a
/// positive semi-definite weight `P_i` (the identity when `isotropic`).
///
/// Every bump stays at least two cells away from the boundary, so `S`
/// vanishes on the boundary cells.
pub fn psd_field(grid: GridSpec, bumps: usize, isotropic: bool, rng: &mut SeededRng) -> Result<MatrixField> {
    let n = grid.dim();
    let lo: Vec<f64> = (0..n).map(|k| grid.origin()[k] + 2.0 * grid.spacing()[k]).collect();
    let hi: Vec<f64> = (0..n)
        .map(|k| grid.origin()[k] + (grid.dims()[k] as f64 - 2.0) * grid.spacing()[k])
        .collect();
    let half_width = (0..n).map(|k| 0.5 * (hi[k] - lo[k])).fold(f64::INFINITY, f64::min);
    if !(half_width > 0.0) {
        return Err(Error::InvalidInput("grid too small for interior bumps".into()));
    }
    let mut parts = Vec::with_capacity(bumps);
    for _ in 0..bumps.max(1) {
        let radius = half_width * rng.gen_range(0.3..0.9);
        let center: Vec<f64> = (0..n).map(|k| rng.gen_range(lo[k] + radius..=hi[k] - radius)).collect();
        let amp = rng.gen_range(0.5..2.0);
        let weight = if isotropic {
            Matrix::identity(n)
        } else {
            random_psd(n, rng)
        };
        parts.push((center, radius, weight.scale(amp)));
    }
    MatrixField::from_fn(grid, n, FieldKind::Density, |x| {
        let mut s = Matrix::zeros(n, n);
        for (c, r, w) in &parts {
            let phi = bump(x, c, *r);
            if phi > 0.0 {
                s = &s + &w.scale(phi);
            }
        }
        s
    })
}

/// Zero-mean density `h_r(x) = Σ_k a_{rk} cos(π j_{rk} (x_k − o_k)/L_k)` with
/// random amplitudes and integer frequencies `1 ≤ j ≤ 3`.
pub fn lq_separable(grid: GridSpec, m: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let n = grid.dim();
    let modes: Vec<(f64, f64)> = (0..m * n)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(1..=3) as f64))
        .collect();
    let lengths: Vec<f64> = (0..n).map(|k| grid.dims()[k] as f64 * grid.spacing()[k]).collect();
    let origin = grid.origin().to_vec();
    let field = VectorField::from_fn(grid, m, |x| {
        (0..m)
            .map(|r| {
                (0..n)
                    .map(|k| {
                        let (a, j) = modes[r * n + k];
                        a * (std::f64::consts::PI * j * (x[k] - origin[k]) / lengths[k]).cos()
                    })
                    .sum()
            })
            .collect()
    })?;
    let mut values = field.values().to_vec();
    subtract_component_means(&mut values, m);
    Ok(values)
}

/// Random smooth field: a low-order trigonometric polynomial in every
/// component.
pub fn smooth_field(grid: GridSpec, m: usize, rng: &mut SeededRng) -> Result<VectorField> {
    let n = grid.dim();
    let terms = 3;
    let coef: Vec<(f64, Vec<f64>, f64)> = (0..m * terms)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    VectorField::from_fn(grid, m, |x| {
        (0..m)
            .map(|r| {
                coef[r * terms..(r + 1) * terms]
                    .iter()
                    .map(|(a, w, ph)| {
                        let arg: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + ph;
                        a * arg.sin()
                    })
                    .sum()
            })
            .collect()
    })
}
