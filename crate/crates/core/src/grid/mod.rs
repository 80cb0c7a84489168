//! Regular-grid discretization of bounded boxes.
//!
//! Storage is collocated: every cell carries one value. Measures store masses,
//! fields store densities (or masses, for flux measures); conversion multiplies
//! or divides by the cell volume.
//!
//! The discrete gradient uses forward differences and is zero across the top
//! face of the box along each axis (ghost cell copies the boundary value). The
//! discrete divergence is *defined* as its negative adjoint, so
//!
//! ```text
//! Σ_cells ⟨f, −div M⟩ = Σ_cells ⟨Df, M⟩
//! ```
//!
//! holds for every `f` and `M` up to floating-point accumulation order. This is
//! the zero-padded, no-flux realization of the divergence constraint.

mod neumann;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schatten::{lp_of_values, svd, Exponent, Matrix};

pub(crate) use neumann::conjugate_gradient;
pub use neumann::{neumann_solve, NeumannSolve};

/// Relative tolerance on the total mass of a balanced measure.
pub const TOL_MASS: f64 = 1e-10;

/// Axis-aligned box split into `dims[k]` cells of width `spacing[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr", into = "GridSpecRepr")]
pub struct GridSpec {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GridSpecRepr {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        GridSpec::new(r.dims, r.spacing, r.origin)
    }
}

impl From<GridSpec> for GridSpecRepr {
    fn from(g: GridSpec) -> Self {
        Self {
            dims: g.dims,
            spacing: g.spacing,
            origin: g.origin,
        }
    }
}

impl GridSpec {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        let n = dims.len();
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidInput(format!(
                "grid dimension must be 1, 2 or 3, got {n}"
            )));
        }
        if spacing.len() != n || origin.len() != n {
            return Err(Error::ShapeMismatch(
                "dims, spacing and origin must have equal length".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("every axis needs at least one cell".into()));
        }
        if spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidInput("spacing must be positive and finite".into()));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("origin must be finite".into()));
        }
        if dims.iter().product::<usize>() < 2 {
            return Err(Error::InvalidInput("a grid needs at least two cells".into()));
        }
        // Row-major: the last axis varies fastest.
        let mut strides = vec![1; n];
        for k in (0..n - 1).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            strides,
        })
    }

    /// The unit box `[0, 1]^n` with the given number of cells per axis.
    pub fn unit_box(dims: &[usize]) -> Result<Self> {
        let spacing = dims.iter().map(|&d| 1.0 / d.max(1) as f64).collect();
        Self::new(dims.to_vec(), spacing, vec![0.0; dims.len()])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    #[inline]
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    #[inline]
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.cell_count() as f64
    }

    /// Index of cell `c` along axis `k`.
    #[inline]
    pub fn axis_index(&self, c: usize, k: usize) -> usize {
        (c / self.strides[k]) % self.dims[k]
    }

    pub fn multi_index(&self, c: usize) -> Vec<usize> {
        (0..self.dim()).map(|k| self.axis_index(c, k)).collect()
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// True when cell `c` has a successor along axis `k`.
    #[inline]
    pub fn has_next(&self, c: usize, k: usize) -> bool {
        self.axis_index(c, k) + 1 < self.dims[k]
    }

    pub fn cell_center(&self, c: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.origin[k] + (self.axis_index(c, k) as f64 + 0.5) * self.spacing[k])
            .collect()
    }

    /// Cell containing `x`; points outside the box snap to the nearest cell.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "point has {} coordinates, grid has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("point must be finite".into()));
        }
        let idx: Vec<usize> = (0..self.dim())
            .map(|k| {
                let t = ((x[k] - self.origin[k]) / self.spacing[k]).floor();
                t.clamp(0.0, (self.dims[k] - 1) as f64) as usize
            })
            .collect();
        Ok(self.linear_index(&idx))
    }

    fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch("objects live on different grids".into()));
        }
        Ok(())
    }
}

/// Whether a matrix field holds cell masses or cell densities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Mass,
    Density,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::Mass => "mass",
            FieldKind::Density => "density",
        })
    }
}

/// An `R^m`-valued measure on the grid, stored as one mass vector per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorMeasure {
    grid: GridSpec,
    m: usize,
    masses: Vec<f64>,
}

impl VectorMeasure {
    pub fn zeros(grid: GridSpec, m: usize) -> Self {
        let len = grid.cell_count() * m;
        Self {
            grid,
            m,
            masses: vec![0.0; len],
        }
    }

    pub fn from_masses(grid: GridSpec, m: usize, masses: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("target dimension must be positive".into()));
        }
        if masses.len() != grid.cell_count() * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} masses, got {}",
                grid.cell_count() * m,
                masses.len()
            )));
        }
        if masses.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("masses must be finite".into()));
        }
        Ok(Self { grid, m, masses })
    }

    /// Measure with the given density (mass per unit volume).
    pub fn from_density(grid: GridSpec, m: usize, density: Vec<f64>) -> Result<Self> {
        let vol = grid.cell_volume();
        Self::from_masses(grid, m, density.into_iter().map(|d| d * vol).collect())
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn masses_mut(&mut self) -> &mut [f64] {
        &mut self.masses
    }

    #[inline]
    pub fn mass(&self, c: usize) -> &[f64] {
        &self.masses[c * self.m..(c + 1) * self.m]
    }

    pub fn density(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.masses.iter().map(|x| x / vol).collect()
    }

    /// Adds the mass vector `v` at the cell containing `x`.
    pub fn add_dirac(&mut self, x: &[f64], v: &[f64]) -> Result<usize> {
        if v.len() != self.m {
            return Err(Error::ShapeMismatch(format!(
                "Dirac weight has {} components, measure has {}",
                v.len(),
                self.m
            )));
        }
        let c = self.grid.locate(x)?;
        for (slot, w) in self.masses[c * self.m..(c + 1) * self.m].iter_mut().zip(v) {
            *slot += w;
        }
        Ok(c)
    }

    /// `μ(Ω)`, the total mass vector.
    pub fn total_mass(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.m];
        for chunk in self.masses.chunks_exact(self.m) {
            for (a, b) in t.iter_mut().zip(chunk) {
                *a += b;
            }
        }
        t
    }

    /// `Σ_cells ‖mass‖₂`, the total variation with respect to the Euclidean norm.
    pub fn total_variation(&self) -> f64 {
        self.masses
            .chunks_exact(self.m)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.masses.iter().all(|&x| x == 0.0)
    }

    /// Tolerance `TOL_MASS × Σ|mass|` used by [`Self::ensure_balanced`].
    pub fn balance_tolerance(&self) -> f64 {
        TOL_MASS * self.masses.iter().map(|x| x.abs()).sum::<f64>()
    }

    pub fn imbalance(&self) -> f64 {
        self.total_mass().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_balanced(&self) -> bool {
        self.imbalance() <= self.balance_tolerance()
    }

    pub fn ensure_balanced(&self) -> Result<()> {
        let total = self.imbalance();
        let tol = self.balance_tolerance();
        if total > tol {
            return Err(Error::Unbalanced { total, tol });
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            m: self.m,
            masses: self.masses.iter().map(|x| x * s).collect(),
        }
    }

    pub(crate) fn check_compatible(&self, f: &VectorField) -> Result<()> {
        self.grid.check_same(&f.grid)?;
        if self.m != f.m {
            return Err(Error::ShapeMismatch(format!(
                "measure has {} components, field has {}",
                self.m, f.m
            )));
        }
        Ok(())
    }
}

/// An `R^m`-valued function sampled at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    m: usize,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec, m: usize) -> Self {
        let len = grid.cell_count() * m;
        Self {
            grid,
            m,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(grid: GridSpec, m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("target dimension must be positive".into()));
        }
        if values.len() != grid.cell_count() * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                grid.cell_count() * m,
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(Self { grid, m, values })
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: GridSpec, m: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.cell_count() * m);
        for c in 0..grid.cell_count() {
            let v = f(&grid.cell_center(c));
            if v.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "field function returned {} components, expected {m}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        Self::from_values(grid, m, values)
    }

    /// The coordinate map `x ↦ x` (so `m = n`).
    pub fn coordinates(grid: GridSpec) -> Self {
        let n = grid.dim();
        Self::from_fn(grid, n, |x| x.to_vec()).expect("coordinates are finite")
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn value(&self, c: usize) -> &[f64] {
        &self.values[c * self.m..(c + 1) * self.m]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            m: self.m,
            values: self.values.iter().map(|x| x * s).collect(),
        }
    }

    /// Subtracts the per-component mean over cells.
    pub fn normalize_mean_zero(&mut self) {
        subtract_component_means(&mut self.values, self.m);
    }
}

pub(crate) fn subtract_component_means(values: &mut [f64], m: usize) {
    let cells = values.len() / m;
    if cells == 0 {
        return;
    }
    let mut mean = vec![0.0; m];
    for chunk in values.chunks_exact(m) {
        for (a, b) in mean.iter_mut().zip(chunk) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|x| *x /= cells as f64);
    for chunk in values.chunks_exact_mut(m) {
        for (a, b) in chunk.iter_mut().zip(&mean) {
            *a -= b;
        }
    }
}

/// An `m×n` matrix per cell, where `n` is the grid dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: GridSpec,
    m: usize,
    kind: FieldKind,
    values: Vec<f64>,
}

impl MatrixField {
    pub fn zeros(grid: GridSpec, m: usize, kind: FieldKind) -> Self {
        let len = grid.cell_count() * m * grid.dim();
        Self {
            grid,
            m,
            kind,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(grid: GridSpec, m: usize, kind: FieldKind, values: Vec<f64>) -> Result<Self> {
        let expected = grid.cell_count() * m * grid.dim();
        if m == 0 {
            return Err(Error::InvalidInput("target dimension must be positive".into()));
        }
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} matrix entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("matrix field entries must be finite".into()));
        }
        Ok(Self { grid, m, kind, values })
    }

    /// Builds a field cell by cell from `f(center) -> m×n matrix`.
    pub fn from_fn(
        grid: GridSpec,
        m: usize,
        kind: FieldKind,
        mut f: impl FnMut(&[f64]) -> Matrix,
    ) -> Result<Self> {
        let n = grid.dim();
        let mut values = Vec::with_capacity(grid.cell_count() * m * n);
        for c in 0..grid.cell_count() {
            let a = f(&grid.cell_center(c));
            if a.shape() != (m, n) {
                return Err(Error::ShapeMismatch(format!(
                    "cell matrix is {}x{}, expected {m}x{n}",
                    a.rows(),
                    a.cols()
                )));
            }
            values.extend_from_slice(a.as_slice());
        }
        Self::from_values(grid, m, kind, values)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.dim()
    }

    #[inline]
    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn block(&self) -> usize {
        self.m * self.grid.dim()
    }

    pub fn cell(&self, c: usize) -> Matrix {
        let b = self.block();
        Matrix::from_raw(self.m, self.n(), self.values[c * b..(c + 1) * b].to_vec())
    }

    pub fn set_cell(&mut self, c: usize, a: &Matrix) -> Result<()> {
        if a.shape() != (self.m, self.n()) {
            return Err(Error::ShapeMismatch("cell matrix shape".into()));
        }
        let b = self.block();
        self.values[c * b..(c + 1) * b].copy_from_slice(a.as_slice());
        Ok(())
    }

    /// Converts to cell masses (multiplies densities by the cell volume).
    pub fn to_mass(&self) -> Self {
        match self.kind {
            FieldKind::Mass => self.clone(),
            FieldKind::Density => self.rescaled(self.grid.cell_volume(), FieldKind::Mass),
        }
    }

    /// Converts to densities (divides masses by the cell volume).
    pub fn to_density(&self) -> Self {
        match self.kind {
            FieldKind::Density => self.clone(),
            FieldKind::Mass => self.rescaled(1.0 / self.grid.cell_volume(), FieldKind::Density),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.rescaled(s, self.kind)
    }

    fn rescaled(&self, s: f64, kind: FieldKind) -> Self {
        Self {
            grid: self.grid.clone(),
            m: self.m,
            kind,
            values: self.values.iter().map(|x| x * s).collect(),
        }
    }

    fn expect_kind(&self, kind: FieldKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Flag {
                expected: kind,
                found: self.kind,
            });
        }
        Ok(())
    }
}

/// Forward differences of `f` into `out` (`cells × m × n`, row-major blocks).
pub(crate) fn gradient_into(grid: &GridSpec, m: usize, f: &[f64], out: &mut [f64]) {
    let n = grid.dim();
    let block = m * n;
    for c in 0..grid.cell_count() {
        let dst = &mut out[c * block..(c + 1) * block];
        for k in 0..n {
            if grid.has_next(c, k) {
                let nb = c + grid.strides[k];
                let inv_h = 1.0 / grid.spacing[k];
                for r in 0..m {
                    dst[r * n + k] = (f[nb * m + r] - f[c * m + r]) * inv_h;
                }
            } else {
                for r in 0..m {
                    dst[r * n + k] = 0.0;
                }
            }
        }
    }
}

/// Negative adjoint of [`gradient_into`]: maps cell masses of a flux to the
/// masses of `−div M`.
pub(crate) fn divergence_into(grid: &GridSpec, m: usize, flux: &[f64], out: &mut [f64]) {
    let n = grid.dim();
    let block = m * n;
    out.iter_mut().for_each(|x| *x = 0.0);
    for c in 0..grid.cell_count() {
        let src = &flux[c * block..(c + 1) * block];
        for k in 0..n {
            if !grid.has_next(c, k) {
                continue;
            }
            let nb = c + grid.strides[k];
            let inv_h = 1.0 / grid.spacing[k];
            for r in 0..m {
                let w = src[r * n + k] * inv_h;
                out[nb * m + r] += w;
                out[c * m + r] -= w;
            }
        }
    }
}

/// Estimate of the operator norm of the discrete gradient (as a map between
/// unweighted Euclidean spaces), from power iteration on `GᵀG`.
///
/// The estimate never exceeds the bound `(Σ_k 4/h_k²)^{1/2}`.
pub fn gradient_norm_estimate(grid: &GridSpec, iterations: usize) -> f64 {
    let len = grid.cell_count();
    let bound = grid.spacing.iter().map(|h| 4.0 / (h * h)).sum::<f64>().sqrt();
    // Deterministic start vector rich in high frequencies.
    let mut x: Vec<f64> = (0..len)
        .map(|c| {
            let parity: usize = (0..grid.dim()).map(|k| grid.axis_index(c, k)).sum();
            let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + 0.1 * ((c as f64) * 0.618_033_988_7).fract())
        })
        .collect();
    subtract_component_means(&mut x, 1);
    let mut flux = vec![0.0; len * grid.dim()];
    let mut y = vec![0.0; len];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nrm);
        gradient_into(grid, 1, &x, &mut flux);
        divergence_into(grid, 1, &flux, &mut y);
        lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        std::mem::swap(&mut x, &mut y);
    }
    lambda.max(0.0).sqrt().min(bound)
}

/// Adds `G w` to `flux` so that `Gᵀ flux = target` up to the CG tolerance,
/// where `GᵀG w = target − Gᵀ flux`. Returns the remaining residual norm
/// `‖Gᵀ flux − target‖₂`. The correction is the least-norm one.
pub(crate) fn restore_divergence(grid: &GridSpec, m: usize, flux: &mut [f64], target: &[f64]) -> f64 {
    let len = grid.cell_count() * m;
    let mut div = vec![0.0; len];
    divergence_into(grid, m, flux, &mut div);
    let resid: Vec<f64> = target.iter().zip(&div).map(|(t, d)| t - d).collect();
    let solve = neumann_solve(grid, m, &resid, 1e-13, 20 * grid.cell_count() + 100);
    let mut corr = vec![0.0; flux.len()];
    gradient_into(grid, m, &solve.solution, &mut corr);
    for (f, c) in flux.iter_mut().zip(&corr) {
        *f += c;
    }
    divergence_into(grid, m, flux, &mut div);
    target
        .iter()
        .zip(&div)
        .map(|(t, d)| (t - d) * (t - d))
        .sum::<f64>()
        .sqrt()
}

/// Discrete derivative `Df`: a density-flagged `m×n` field of forward
/// differences, zero across the top face along each axis.
pub fn discrete_gradient(f: &VectorField) -> MatrixField {
    let grid = f.grid.clone();
    let mut values = vec![0.0; grid.cell_count() * f.m * grid.dim()];
    gradient_into(&grid, f.m, &f.values, &mut values);
    MatrixField {
        grid,
        m: f.m,
        kind: FieldKind::Density,
        values,
    }
}

/// `−div M` for a mass-flagged flux `M`, the exact negative adjoint of
/// [`discrete_gradient`].
pub fn discrete_divergence(flux: &MatrixField) -> Result<VectorMeasure> {
    flux.expect_kind(FieldKind::Mass)?;
    let grid = flux.grid.clone();
    let mut masses = vec![0.0; grid.cell_count() * flux.m];
    divergence_into(&grid, flux.m, &flux.values, &mut masses);
    Ok(VectorMeasure {
        grid,
        m: flux.m,
        masses,
    })
}

/// `∫⟨f, dμ⟩ = Σ_cells ⟨f(c), μ(c)⟩`.
pub fn pairing_measure(f: &VectorField, mu: &VectorMeasure) -> Result<f64> {
    mu.check_compatible(f)?;
    Ok(f.values.iter().zip(&mu.masses).map(|(a, b)| a * b).sum())
}

/// `∫⟨Df, dM⟩ = Σ_cells ⟨Df(c), M(c)⟩` for a mass-flagged `M`.
pub fn pairing_grad(f: &VectorField, flux: &MatrixField) -> Result<f64> {
    flux.expect_kind(FieldKind::Mass)?;
    f.grid.check_same(&flux.grid)?;
    if f.m != flux.m {
        return Err(Error::ShapeMismatch(format!(
            "field has {} components, flux has {} rows",
            f.m, flux.m
        )));
    }
    let df = discrete_gradient(f);
    Ok(df.values.iter().zip(&flux.values).map(|(a, b)| a * b).sum())
}

/// Schatten norm of a single cell block.
pub(crate) fn cell_schatten_norm(block: &[f64], m: usize, n: usize, p: Exponent) -> f64 {
    if m == 1 || n == 1 || p == Exponent::TWO {
        return block.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let a = Matrix::from_raw(m, n, block.to_vec());
    match svd(&a) {
        Ok(d) => lp_of_values(&d.singular_values, p),
        Err(_) => f64::NAN,
    }
}

/// Field norm with respect to the cell-wise Schatten `p`-norm.
///
/// Density fields give `(∫ ‖F‖_p^p dλ)^{1/p}` (the essential supremum for
/// `p = ∞`). Mass fields are only accepted with `p = 1` and give the total
/// variation `Σ_cells ‖M(c)‖₁`.
pub fn lp_field_norm(field: &MatrixField, p: Exponent) -> Result<f64> {
    let (m, n) = (field.m, field.n());
    let norms = field
        .values
        .chunks_exact(field.block())
        .map(|b| cell_schatten_norm(b, m, n, p));
    match field.kind {
        FieldKind::Mass => {
            if p != Exponent::ONE {
                return Err(Error::Flag {
                    expected: FieldKind::Density,
                    found: FieldKind::Mass,
                });
            }
            Ok(norms.sum())
        }
        FieldKind::Density => {
            let vol = field.grid.cell_volume();
            let pv = p.value();
            if p.is_infinite() {
                return Ok(norms.fold(0.0, f64::max));
            }
            let norms: Vec<f64> = norms.collect();
            let top = norms.iter().copied().fold(0.0, f64::max);
            if top == 0.0 {
                return Ok(0.0);
            }
            let s: f64 = norms.iter().map(|x| (x / top).powf(pv)).sum::<f64>() * vol;
            Ok(top * s.powf(1.0 / pv))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(cells: usize, h: f64) -> GridSpec {
        GridSpec::new(vec![cells], vec![h], vec![0.0]).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(vec![1], vec![1.0], vec![0.0]).is_err());
        assert!(GridSpec::new(vec![2, 2, 2, 2], vec![1.0; 4], vec![0.0; 4]).is_err());
        assert!(GridSpec::new(vec![2], vec![-1.0], vec![0.0]).is_err());
        assert!(GridSpec::new(vec![2, 3], vec![1.0], vec![0.0, 0.0]).is_err());
        let g = GridSpec::new(vec![2, 3], vec![0.5, 2.0], vec![1.0, -1.0]).unwrap();
        assert_eq!(g.cell_count(), 6);
        assert_eq!(g.cell_volume(), 1.0);
        assert_eq!(g.multi_index(4), vec![1, 1]);
        assert_eq!(g.cell_center(4), vec![1.75, 2.0]);
    }

    #[test]
    fn locate_snaps_to_containing_cell() {
        let g = GridSpec::unit_box(&[64]).unwrap();
        assert_eq!(g.locate(&[0.25]).unwrap(), 16);
        assert_eq!(g.locate(&[0.75]).unwrap(), 48);
        assert_eq!(g.locate(&[1.0]).unwrap(), 63);
        assert_eq!(g.locate(&[-3.0]).unwrap(), 0);
    }

    #[test]
    fn gradient_examples() {
        let g = grid1(3, 0.5);
        let f = VectorField::from_values(g.clone(), 1, vec![0.0, 1.0, 2.0]).unwrap();
        let df = discrete_gradient(&f);
        assert_eq!(df.kind(), FieldKind::Density);
        assert_eq!(df.values(), &[2.0, 2.0, 0.0]);

        let c = VectorField::from_values(g, 1, vec![3.0; 3]).unwrap();
        assert!(discrete_gradient(&c).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_flux_divergence_sits_on_the_ends() {
        // Density c on every cell of a 1-D grid: −div M = ±c at the two ends.
        let h = 0.25;
        let g = grid1(4, h);
        let c = 3.0;
        let flux = MatrixField::from_values(g.clone(), 1, FieldKind::Density, vec![c; 4])
            .unwrap()
            .to_mass();
        let mu = discrete_divergence(&flux).unwrap();
        let expected = [-c / h * g.cell_volume(), 0.0, 0.0, c / h * g.cell_volume()];
        for (a, b) in mu.masses().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(mu.is_balanced());
    }

    #[test]
    fn divergence_rejects_density_fields() {
        let g = grid1(3, 1.0);
        let f = MatrixField::zeros(g, 1, FieldKind::Density);
        assert!(matches!(discrete_divergence(&f), Err(Error::Flag { .. })));
        assert!(discrete_divergence(&f.to_mass()).unwrap().is_zero());
    }

    #[test]
    fn pairing_measure_examples() {
        let g = GridSpec::unit_box(&[4, 4]).unwrap();
        let id = VectorField::coordinates(g.clone());
        let mut mu = VectorMeasure::zeros(g.clone(), 2);
        let (a, b) = ([0.6, 0.9], [0.1, 0.3]);
        let v = [0.5, -2.0];
        mu.add_dirac(&a, &v).unwrap();
        mu.add_dirac(&b, &[-v[0], -v[1]]).unwrap();
        let ca = g.cell_center(g.locate(&a).unwrap());
        let cb = g.cell_center(g.locate(&b).unwrap());
        let expected = v[0] * (ca[0] - cb[0]) + v[1] * (ca[1] - cb[1]);
        assert!((pairing_measure(&id, &mu).unwrap() - expected).abs() < 1e-14);

        let konst = VectorField::from_fn(g.clone(), 2, |_| vec![1.5, -0.5]).unwrap();
        assert!(pairing_measure(&konst, &mu).unwrap().abs() < 1e-14);
        assert_eq!(pairing_measure(&VectorField::zeros(g, 2), &mu).unwrap(), 0.0);
    }

    #[test]
    fn affine_fields_have_exact_interior_gradient() {
        let g = GridSpec::new(vec![5, 4, 3], vec![0.2, 0.3, 0.5], vec![-1.0, 0.0, 2.0]).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.25, 3.0, -1.0]]).unwrap();
        let f = VectorField::from_fn(g.clone(), 2, |x| {
            let mut v = a.matvec(x);
            v[0] += 7.0;
            v
        })
        .unwrap();
        let df = discrete_gradient(&f);
        for c in 0..g.cell_count() {
            let cell = df.cell(c);
            for k in 0..3 {
                for r in 0..2 {
                    let want = if g.has_next(c, k) { a[(r, k)] } else { 0.0 };
                    assert!((cell[(r, k)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lp_field_norm_examples() {
        let g = GridSpec::unit_box(&[2, 2]).unwrap();
        let zero = MatrixField::zeros(g.clone(), 2, FieldKind::Density);
        assert_eq!(lp_field_norm(&zero, Exponent::TWO).unwrap(), 0.0);

        let mut single = MatrixField::zeros(g.clone(), 2, FieldKind::Mass);
        single.set_cell(1, &Matrix::from_diag(&[3.0, 4.0])).unwrap();
        assert!((lp_field_norm(&single, Exponent::ONE).unwrap() - 7.0).abs() < 1e-14);
        assert!(lp_field_norm(&single, Exponent::TWO).is_err());

        let ident =
            MatrixField::from_fn(g, 2, FieldKind::Density, |_| Matrix::identity(2)).unwrap();
        assert!((lp_field_norm(&ident, Exponent::TWO).unwrap() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn gradient_norm_is_close_to_the_analytic_bound() {
        let g = GridSpec::unit_box(&[32, 32]).unwrap();
        let est = gradient_norm_estimate(&g, 50);
        let bound = (8.0f64 * 1024.0).sqrt();
        assert!(est <= bound && est > 0.9 * bound, "{est} vs {bound}");
    }

    #[test]
    fn restored_flux_has_prescribed_divergence() {
        let g = GridSpec::unit_box(&[6, 5]).unwrap();
        let n = g.cell_count();
        let mut target: Vec<f64> = (0..2 * n).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        subtract_component_means(&mut target, 2);
        let mut flux: Vec<f64> = (0..4 * n).map(|i| ((i * 3 % 5) as f64) * 0.1).collect();
        let res = restore_divergence(&g, 2, &mut flux, &target);
        assert!(res < 1e-9, "{res}");
    }
}
