use super::{divergence_into, gradient_into, subtract_component_means, GridSpec};

/// Result of [`neumann_solve`].
#[derive(Clone, Debug)]
pub struct NeumannSolve {
    /// Mean-zero solution, `m` values per cell.
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final residual `‖Gᵀ G x − b‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
}

/// Solves `Gᵀ G x = b` on mean-zero vectors by conjugate gradients, where `G`
/// is the discrete gradient and `Gᵀ` its adjoint.
///
/// The right-hand side is projected to mean zero per component first, so the
/// system is always consistent. With `b` a density this is the discrete
/// no-flux Poisson problem `−div Dx = b`.
pub fn neumann_solve(grid: &GridSpec, m: usize, b: &[f64], rel_tol: f64, max_iter: usize) -> NeumannSolve {
    let mut flux = vec![0.0; grid.cell_count() * m * grid.dim()];
    conjugate_gradient(
        |v, out| {
            gradient_into(grid, m, v, &mut flux);
            divergence_into(grid, m, &flux, out);
        },
        b,
        m,
        rel_tol,
        max_iter,
    )
}

/// Conjugate gradients for a symmetric positive semi-definite operator whose
/// kernel is spanned by the per-component constants.
pub(crate) fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    m: usize,
    rel_tol: f64,
    max_iter: usize,
) -> NeumannSolve {
    let len = b.len();
    let mut rhs = b.to_vec();
    subtract_component_means(&mut rhs, m);

    let mut x = vec![0.0; len];
    let b_norm = norm(&rhs);
    if b_norm == 0.0 {
        return NeumannSolve {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        };
    }

    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; len];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > rel_tol * b_norm {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..len {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
        // Keep the Krylov space orthogonal to the constants.
        if iterations % 50 == 0 {
            subtract_component_means(&mut p, m);
        }
    }
    subtract_component_means(&mut x, m);

    apply(&x, &mut ap);
    let res: f64 = ap
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    NeumannSolve {
        solution: x,
        iterations,
        relative_residual: res / b_norm,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
