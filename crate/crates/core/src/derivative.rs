//! Fréchet derivative of `c⁻² ↦ Λ`, its adjoint with respect to the
//! Hilbert-Schmidt data inner product, and the descent direction.
//!
//! With Neumann data taken along the outward normal, the discrete identity
//! reads `gᵀ(Λ₁ - Λ₂)h = -ω² Σ_cells (c₁⁻² - c₂⁻²) ⟨u₁u₂⟩_cell |cell|`, where
//! `⟨·⟩_cell` averages the four corner values. Linearizing gives
//!
//! ```text
//! DF(δ)_pq = -ω² Σ_cells δ_cell ⟨u_p u_q⟩_cell |cell|
//! ```
//!
//! and the adjoint is the nodal field `G(x) = -ω² Σ_pq M_pq u_p(x) u_q(x)`
//! with `M = W R W` (`W` the `H^{-1/2}` weight), so that
//! `⟨DF(δ), R⟩_Y = ⟨δ, G⟩_{L²}` exactly.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::domain::{project, CellSampled, Grid, NodalField, Partition, PwcField};
use crate::error::{Error, Result};
use crate::forward::{dtn_data_norm, BoundaryWeights, DtnMatrix, ForwardModel, NormKind};

/// Discrete solutions `u_p` for every boundary indicator at one coefficient.
#[derive(Debug, Clone)]
pub struct SolutionBank {
    grid: Arc<Grid>,
    field: PwcField,
    omega2: f64,
    u: DMatrix<f64>,
}

impl SolutionBank {
    pub fn new(grid: Arc<Grid>, field: PwcField, omega2: f64, u: DMatrix<f64>) -> Self {
        Self { grid, field, omega2, u }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn field(&self) -> &PwcField {
        &self.field
    }

    pub fn omega2(&self) -> f64 {
        self.omega2
    }

    /// Nodes by boundary indicators.
    pub fn solutions(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Solution for boundary data `g`, by superposition.
    pub fn solution_for(&self, g: &[f64]) -> Result<NodalField> {
        if g.len() != self.u.ncols() {
            return Err(Error::Mismatch(format!("{} boundary values for {} columns", g.len(), self.u.ncols())));
        }
        let v = &self.u * nalgebra::DVector::from_column_slice(g);
        NodalField::new(self.grid.clone(), v.as_slice().to_vec())
    }
}

/// `R = F(c⁻²) - y` together with its data norm.
#[derive(Debug, Clone)]
pub struct Residual {
    pub matrix: DMatrix<f64>,
    pub norm: f64,
}

impl Residual {
    pub fn new(model: &DtnMatrix, data: &DtnMatrix) -> Result<Self> {
        if model.nb() != data.nb() {
            return Err(Error::Mismatch(format!("DtN sizes differ: {} vs {}", model.nb(), data.nb())));
        }
        let matrix = &model.lambda - &data.lambda;
        let norm = dtn_data_norm(&matrix, &model.weights, NormKind::HilbertSchmidt)?;
        Ok(Self { matrix, norm })
    }

    pub fn zero(nb: usize) -> Self {
        Self { matrix: DMatrix::zeros(nb, nb), norm: 0.0 }
    }
}

/// Per-node quadrature weights `|cell|/4 Σ_adjacent δ_cell`.
fn node_weights(grid: &Grid, cell_values: &[f64]) -> Vec<f64> {
    let q = 0.25 * grid.cell_area();
    let mut w = vec![0.0; grid.n_nodes()];
    for (c, &d) in cell_values.iter().enumerate() {
        if d != 0.0 {
            for n in grid.cell_corners(c) {
                w[n] += q * d;
            }
        }
    }
    w
}

/// `DF(c⁻²)δ` for a perturbation given by its grid-cell values.
pub fn apply_df_cells(bank: &SolutionBank, cell_values: &[f64]) -> Result<DMatrix<f64>> {
    if cell_values.len() != bank.grid.n_cells() {
        return Err(Error::Mismatch(format!(
            "{} cell values for {} grid cells",
            cell_values.len(),
            bank.grid.n_cells()
        )));
    }
    let w = node_weights(&bank.grid, cell_values);
    let rows: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0).collect();
    let nb = bank.u.ncols();
    let sub = DMatrix::from_fn(rows.len(), nb, |r, p| bank.u[(rows[r], p)]);
    let mut weighted = sub.clone();
    for (r, &i) in rows.iter().enumerate() {
        weighted.row_mut(r).scale_mut(w[i]);
    }
    Ok(sub.transpose() * weighted * (-bank.omega2))
}

pub fn apply_df(bank: &SolutionBank, delta: &impl CellSampled) -> Result<DMatrix<f64>> {
    if delta.grid() != bank.grid.as_ref() {
        return Err(Error::Mismatch("perturbation lives on another grid".into()));
    }
    apply_df_cells(bank, &delta.cell_values())
}

/// `DF(c⁻²)* j₂(R)` as a nodal field. `j₂` is the identity here.
pub fn apply_df_adjoint(bank: &SolutionBank, r: &DMatrix<f64>, weights: &BoundaryWeights) -> Result<NodalField> {
    let nb = bank.u.ncols();
    if r.nrows() != nb || r.ncols() != nb || weights.nb() != nb {
        return Err(Error::Mismatch(format!(
            "residual {}x{} / weights {} against {} boundary solutions",
            r.nrows(),
            r.ncols(),
            weights.nb(),
            nb
        )));
    }
    let w = &weights.wminus;
    let mt = w * r * w;
    let um = &bank.u * &mt;
    let values = (0..bank.u.nrows())
        .map(|x| -bank.omega2 * um.row(x).dot(&bank.u.row(x)))
        .collect();
    NodalField::new(bank.grid.clone(), values)
}

/// Descent direction restricted to the piecewise-constant space: the
/// representer of `δ ↦ ⟨DF(δ), R⟩_Y` over `span{χ_{D_j}}`.
pub fn descent_direction(
    bank: &SolutionBank,
    r: &DMatrix<f64>,
    weights: &BoundaryWeights,
    partition: &Arc<Partition>,
) -> Result<(NodalField, PwcField)> {
    let g = apply_df_adjoint(bank, r, weights)?;
    let t = project(&g, partition, bank.field.bounds())?;
    Ok((g, t))
}

/// Largest `‖DF(c⁻²)δ‖_Y / ‖δ‖` over the subdomain indicators of `c`'s
/// partition.
pub fn df_norm_probe(model: &ForwardModel, c: &PwcField, kind: NormKind) -> Result<f64> {
    let (_, bank) = model.evaluate(c)?;
    let p = c.partition();
    let mut best = 0.0f64;
    for j in 0..p.len() {
        let delta = PwcField::indicator(p.clone(), j, c.bounds());
        let d = apply_df(&bank, &delta)?;
        let ratio = dtn_data_norm(&d, model.weights(), kind)? / p.area(j).sqrt();
        best = best.max(ratio);
    }
    Ok(best)
}

/// Estimate of `‖DF(c₁⁻²) - DF(c₂⁻²)‖` from the subdomain indicators of
/// `c₁`'s partition.
pub fn lipschitz_df_probe(model: &ForwardModel, c1: &PwcField, c2: &PwcField) -> Result<f64> {
    if !c1.partition().same_as(c2.partition()) {
        return Err(Error::Mismatch("probe fields live on different partitions".into()));
    }
    let (_, b1) = model.evaluate(c1)?;
    let (_, b2) = model.evaluate(c2)?;
    let p = c1.partition();
    let mut best = 0.0f64;
    for j in 0..p.len() {
        let cells: Vec<f64> = p.cell_of().iter().map(|&d| f64::from(u8::from(d == j))).collect();
        let diff = apply_df_cells(&b1, &cells)? - apply_df_cells(&b2, &cells)?;
        let ratio = dtn_data_norm(&diff, model.weights(), NormKind::HilbertSchmidt)? / p.area(j).sqrt();
        best = best.max(ratio);
    }
    Ok(best)
}
