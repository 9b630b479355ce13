//! Discrete Helmholtz problem `(-Δ - ω² c⁻²) u = f`, `u = g` on the boundary,
//! and its Dirichlet-to-Neumann matrix.
//!
//! The discretization is the five-point stencil written as a bilinear form
//!
//! ```text
//! B(u, v) = Σ_edges w_e (u_a - u_b)(v_a - v_b) - ω² Σ_cells c_cell h² ¼ Σ_corners u v
//! ```
//!
//! with edge weight 1 for edges crossing the interior and ½ for edges lying on
//! the boundary. Interior rows of `B` are exactly the five-point equations
//! scaled by `h²`, with the nodal coefficient taken as the average of the
//! adjacent cells. Neumann data are defined weakly from the same form, so the
//! discrete Alessandrini identity holds to solver precision.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::banded::{BandLu, BandMatrix};
use crate::derivative::SolutionBank;
use crate::domain::{Bounds, Grid, NodalField, PwcField};
use crate::error::{Error, Result};

/// Relative residual accepted from a single linear solve.
pub const SOLVE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// `0 < ω² < λ₁/B₂`
    Low,
    /// `λ_n/B₁ < ω² < λ_{n+1}/B₂`
    Band { n: usize },
}

/// Frequency window certifying that `ω²` avoids every band
/// `[λ_n/B₂, λ_n/B₁]` that could hold a Dirichlet eigenvalue.
#[derive(Debug, Clone)]
pub struct SpectrumWindow {
    pub kind: WindowKind,
    pub omega2: f64,
    pub lower: f64,
    pub upper: f64,
    /// Laplacian eigenvalues (with multiplicity) consulted by the check.
    pub eigenvalues: Vec<f64>,
    /// Distance from `ω²` to the closest forbidden band.
    pub distance: f64,
}

/// Dirichlet eigenvalues `π²(p² + q²)` of the unit square, sorted, with
/// multiplicity, covering everything up to `limit` plus the next one above it.
pub fn dirichlet_eigenvalues(limit: f64) -> Vec<f64> {
    let mut pmax = 1usize;
    while PI * PI * ((pmax * pmax) as f64 + 1.0) <= limit {
        pmax += 1;
    }
    let top = pmax + 1;
    let mut all: Vec<f64> = (1..=top)
        .flat_map(|p| (1..=top).map(move |q| PI * PI * ((p * p + q * q) as f64)))
        .collect();
    all.sort_by(f64::total_cmp);
    let keep = all.iter().position(|&l| l > limit).map_or(all.len(), |i| i + 1);
    all.truncate(keep);
    all
}

pub fn spectrum_guard(omega2: f64, b1: f64, b2: f64) -> Result<SpectrumWindow> {
    if !(omega2 > 0.0 && omega2.is_finite()) {
        return Err(Error::Config(format!("omega^2 must be positive and finite, got {omega2}")));
    }
    let bounds = Bounds::new(b1, b2)?;
    let eig = dirichlet_eigenvalues(omega2 * bounds.hi);
    for (k, &l) in eig.iter().enumerate() {
        let (lo, hi) = (l / bounds.hi, l / bounds.lo);
        if lo <= omega2 && omega2 <= hi {
            return Err(Error::Inadmissible { omega2, n: k + 1, lo, hi });
        }
    }
    let below = eig.iter().take_while(|&&l| l / bounds.lo < omega2).count();
    let upper = eig[below] / bounds.hi;
    let (kind, lower) = if below == 0 {
        (WindowKind::Low, 0.0)
    } else {
        (WindowKind::Band { n: below }, eig[below - 1] / bounds.lo)
    };
    let distance = match kind {
        WindowKind::Low => upper - omega2,
        WindowKind::Band { .. } => (omega2 - lower).min(upper - omega2),
    };
    Ok(SpectrumWindow { kind, omega2, lower, upper, eigenvalues: eig, distance })
}

/// Discrete surrogates of the `H^{1/2}(∂Ω)` and `H^{-1/2}(∂Ω)` norms built
/// from the periodic Laplacian on the boundary loop.
#[derive(Debug, Clone)]
pub struct BoundaryWeights {
    m: usize,
    hb: f64,
    pub wplus: DMatrix<f64>,
    pub wminus: DMatrix<f64>,
    /// Symmetric square root of `wminus`.
    pub wminus_sqrt: DMatrix<f64>,
}

impl BoundaryWeights {
    pub fn nb(&self) -> usize {
        self.wplus.nrows()
    }

    pub fn hb(&self) -> f64 {
        self.hb
    }

    pub fn grid_m(&self) -> usize {
        self.m
    }
}

pub fn build_boundary_weights(grid: &Grid) -> BoundaryWeights {
    let nb = grid.boundary().len();
    let hb = grid.h();
    let s = 1.0 / (hb * hb);
    let mut lap = DMatrix::<f64>::zeros(nb, nb);
    for k in 0..nb {
        lap[(k, k)] += 2.0 * s;
        lap[(k, (k + 1) % nb)] -= s;
        lap[(k, (k + nb - 1) % nb)] -= s;
    }
    let eig = SymmetricEigen::new(lap);
    let v = &eig.eigenvectors;
    let spectral = |f: &dyn Fn(f64) -> f64| {
        let mut scaled = v.clone();
        for (j, &mu) in eig.eigenvalues.iter().enumerate() {
            let fj = f(1.0 + mu.max(0.0));
            scaled.column_mut(j).scale_mut(fj);
        }
        &scaled * v.transpose()
    };
    let wplus = spectral(&|x| x.sqrt() * hb);
    let wminus = spectral(&|x| hb / x.sqrt());
    let wminus_sqrt = spectral(&|x| (hb / x.sqrt()).sqrt());
    BoundaryWeights { m: grid.m(), hb, wplus, wminus, wminus_sqrt }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    /// Weighted Hilbert-Schmidt norm, the data-space norm.
    #[default]
    HilbertSchmidt,
    /// Largest singular value of the weighted matrix.
    Operator,
}

fn check_weights(a: &DMatrix<f64>, w: &BoundaryWeights) -> Result<()> {
    if a.nrows() != w.nb() || a.ncols() != w.nb() {
        return Err(Error::Mismatch(format!(
            "{}x{} matrix against boundary weights of size {}",
            a.nrows(),
            a.ncols(),
            w.nb()
        )));
    }
    Ok(())
}

/// `‖W^{1/2} A W^{1/2}‖` with `W = wminus`.
pub fn dtn_data_norm(a: &DMatrix<f64>, weights: &BoundaryWeights, kind: NormKind) -> Result<f64> {
    check_weights(a, weights)?;
    let s = &weights.wminus_sqrt;
    let weighted = s * a * s;
    Ok(match kind {
        NormKind::HilbertSchmidt => weighted.norm(),
        NormKind::Operator => weighted.singular_values().max(),
    })
}

/// Inner product inducing the Hilbert-Schmidt data norm:
/// `⟨A, B⟩ = tr(Aᵀ W B W)`.
pub fn data_inner(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &BoundaryWeights) -> Result<f64> {
    check_weights(a, weights)?;
    check_weights(b, weights)?;
    let w = &weights.wminus;
    Ok(a.dot(&(w * b * w)))
}

/// Discrete Dirichlet-to-Neumann matrix at one frequency.
#[derive(Debug, Clone)]
pub struct DtnMatrix {
    pub lambda: DMatrix<f64>,
    pub weights: Arc<BoundaryWeights>,
    pub omega2: f64,
}

impl DtnMatrix {
    pub fn nb(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.lambda - self.lambda.transpose()).norm() / self.lambda.norm()
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        dtn_data_norm(&self.lambda, &self.weights, kind)
    }
}

/// How the Neumann trace is extracted from a discrete solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeumannScheme {
    /// Residual of the discrete bilinear form at boundary nodes.
    #[default]
    Variational,
    /// One-sided difference towards the interior neighbour.
    OneSided,
}

/// Helmholtz operator for a fixed coefficient and frequency, with its
/// interior system already factored.
#[derive(Debug)]
pub struct HelmholtzOperator {
    grid: Arc<Grid>,
    field: PwcField,
    omega2: f64,
    window: SpectrumWindow,
    /// Lumped mass `h² ¼ Σ_adjacent cells c` per node.
    mass: Vec<f64>,
    lu: BandLu,
}

impl HelmholtzOperator {
    pub fn new(field: &PwcField, omega2: f64) -> Result<Self> {
        let bounds = field.bounds();
        let window = spectrum_guard(omega2, bounds.lo, bounds.hi)?;
        field.check_admissible()?;
        let grid = field.partition().grid().clone();
        let m = grid.m();
        let area = grid.cell_area();
        let coeff = field.coeffs();
        let cell_of = field.partition().cell_of();
        let mut mass = vec![0.0; grid.n_nodes()];
        for c in 0..grid.n_cells() {
            let v = 0.25 * area * coeff[cell_of[c]];
            for n in grid.cell_corners(c) {
                mass[n] += v;
            }
        }
        let ni = grid.interior().len();
        let bw = m - 2;
        let mut a = BandMatrix::zeros(ni, bw, bw);
        for (k, &node) in grid.interior().iter().enumerate() {
            a.add(k, k, 4.0 - omega2 * mass[node]);
            for nb in neighbours(&grid, node) {
                if let Some(l) = grid.interior_index(nb) {
                    a.add(k, l, -1.0);
                }
            }
        }
        let lu = a.factor()?;
        Ok(Self { grid, field: field.clone(), omega2, window, mass, lu })
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

    pub fn window(&self) -> &SpectrumWindow {
        &self.window
    }

    pub fn min_pivot(&self) -> f64 {
        self.lu.min_pivot()
    }

    /// `(S u)` at `node`, where `S` is the matrix of the bilinear form.
    fn apply_form(&self, u: &[f64], node: usize) -> f64 {
        let mut s = -self.omega2 * self.mass[node] * u[node];
        for nb in neighbours(&self.grid, node) {
            s += edge_weight(&self.grid, node, nb) * (u[node] - u[nb]);
        }
        s
    }

    /// Solves for the interior values of `u` given its boundary values and an
    /// already-scaled interior right-hand side, with one step of iterative
    /// refinement.
    fn solve_interior(&self, u: &mut [f64], source: &[f64]) -> Result<()> {
        let interior = self.grid.interior();
        let mut rhs: Vec<f64> = interior
            .iter()
            .zip(source)
            .map(|(&node, &f)| {
                f + neighbours(&self.grid, node)
                    .filter(|&nb| self.grid.boundary_index(nb).is_some())
                    .map(|nb| u[nb])
                    .sum::<f64>()
            })
            .collect();
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            for &node in interior {
                u[node] = 0.0;
            }
            return Ok(());
        }
        let mut x = rhs.clone();
        self.lu.solve_in_place(&mut x);
        for (&node, &v) in interior.iter().zip(&x) {
            u[node] = v;
        }
        for _ in 0..2 {
            for (k, &node) in interior.iter().enumerate() {
                rhs[k] = source[k] - self.apply_form(u, node);
            }
            let res = rhs.iter().map(|v| v * v).sum::<f64>().sqrt() / rhs_norm;
            if res <= 1e-14 {
                return Ok(());
            }
            self.lu.solve_in_place(&mut rhs);
            for (&node, &d) in interior.iter().zip(&rhs) {
                u[node] += d;
            }
        }
        for (k, &node) in interior.iter().enumerate() {
            rhs[k] = source[k] - self.apply_form(u, node);
        }
        let res = rhs.iter().map(|v| v * v).sum::<f64>().sqrt() / rhs_norm;
        if res > SOLVE_RTOL {
            return Err(Error::SolverAccuracy { residual: res });
        }
        Ok(())
    }

    /// Solves `(-Δ_h - ω² c⁻²) u = f` in the interior with `u = g` on the
    /// boundary (`g` in boundary-loop order).
    pub fn solve(&self, g: &[f64], f: Option<&NodalField>) -> Result<NodalField> {
        let grid = &self.grid;
        if g.len() != grid.boundary().len() {
            return Err(Error::Mismatch(format!(
                "{} boundary values for {} boundary nodes",
                g.len(),
                grid.boundary().len()
            )));
        }
        let h2 = grid.cell_area();
        let source: Vec<f64> = match f {
            Some(f) => {
                if f.grid_arc().m() != grid.m() {
                    return Err(Error::Mismatch("source lives on another grid".into()));
                }
                grid.interior().iter().map(|&n| h2 * f.values()[n]).collect()
            }
            None => vec![0.0; grid.interior().len()],
        };
        let mut u = vec![0.0; grid.n_nodes()];
        for (&node, &v) in grid.boundary().iter().zip(g) {
            u[node] = v;
        }
        self.solve_interior(&mut u, &source)?;
        NodalField::new(grid.clone(), u)
    }

    /// Discrete solutions for every boundary indicator, one column per
    /// boundary node.
    pub fn boundary_solutions(&self) -> Result<DMatrix<f64>> {
        let grid = &self.grid;
        let nb = grid.boundary().len();
        let zero = vec![0.0; grid.interior().len()];
        let columns: Result<Vec<Vec<f64>>> = (0..nb)
            .into_par_iter()
            .map(|p| {
                let mut u = vec![0.0; grid.n_nodes()];
                u[grid.boundary()[p]] = 1.0;
                self.solve_interior(&mut u, &zero)?;
                Ok(u)
            })
            .collect();
        let columns = columns?;
        Ok(DMatrix::from_fn(grid.n_nodes(), nb, |i, p| columns[p][i]))
    }

    /// Neumann coefficients of the solutions stored column-wise in `u`.
    pub fn neumann_traces(&self, u: &DMatrix<f64>, scheme: NeumannScheme) -> DMatrix<f64> {
        let grid = &self.grid;
        let bnodes = grid.boundary();
        let nb = bnodes.len();
        let m = grid.m();
        DMatrix::from_fn(nb, u.ncols(), |q, p| {
            let col = u.column(p);
            let node = bnodes[q];
            match scheme {
                NeumannScheme::Variational => self.apply_form(col.as_slice(), node),
                NeumannScheme::OneSided => {
                    let (i, j) = grid.node_ij(node);
                    let ii = if i == 0 { 1 } else if i == m - 1 { m - 2 } else { i };
                    let jj = if j == 0 { 1 } else if j == m - 1 { m - 2 } else { j };
                    col[node] - col[grid.node(ii, jj)]
                }
            }
        })
    }
}

fn neighbours(grid: &Grid, node: usize) -> impl Iterator<Item = usize> + '_ {
    let (i, j) = grid.node_ij(node);
    let m = grid.m();
    let mut out = [usize::MAX; 4];
    if i > 0 {
        out[0] = node - 1;
    }
    if i + 1 < m {
        out[1] = node + 1;
    }
    if j > 0 {
        out[2] = node - m;
    }
    if j + 1 < m {
        out[3] = node + m;
    }
    out.into_iter().filter(|&n| n != usize::MAX)
}

fn edge_weight(grid: &Grid, a: usize, b: usize) -> f64 {
    if grid.boundary_index(a).is_some() && grid.boundary_index(b).is_some() {
        0.5
    } else {
        1.0
    }
}

/// Forward map `c⁻² ↦ Λ` at a fixed grid and frequency.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    grid: Arc<Grid>,
    weights: Arc<BoundaryWeights>,
    omega2: f64,
    scheme: NeumannScheme,
}

impl ForwardModel {
    pub fn new(grid: Arc<Grid>, omega2: f64) -> Self {
        let weights = Arc::new(build_boundary_weights(&grid));
        Self { grid, weights, omega2, scheme: NeumannScheme::Variational }
    }

    pub fn with_scheme(mut self, scheme: NeumannScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_omega2(&self, omega2: f64) -> Self {
        Self { omega2, ..self.clone() }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn weights(&self) -> &Arc<BoundaryWeights> {
        &self.weights
    }

    pub fn omega2(&self) -> f64 {
        self.omega2
    }

    pub fn operator(&self, field: &PwcField) -> Result<HelmholtzOperator> {
        if field.partition().grid().m() != self.grid.m() {
            return Err(Error::Mismatch("field lives on another grid".into()));
        }
        HelmholtzOperator::new(field, self.omega2)
    }

    /// DtN matrix and the boundary solutions it was built from.
    pub fn evaluate(&self, field: &PwcField) -> Result<(DtnMatrix, SolutionBank)> {
        let op = self.operator(field)?;
        let u = op.boundary_solutions()?;
        let lambda = op.neumann_traces(&u, self.scheme);
        let dtn = DtnMatrix { lambda, weights: self.weights.clone(), omega2: self.omega2 };
        let bank = SolutionBank::new(self.grid.clone(), field.clone(), self.omega2, u);
        Ok((dtn, bank))
    }

    pub fn dtn(&self, field: &PwcField) -> Result<DtnMatrix> {
        Ok(self.evaluate(field)?.0)
    }
}

/// Assembles the DtN matrix of an already-built operator.
pub fn assemble_dtn(op: &HelmholtzOperator, weights: Arc<BoundaryWeights>) -> Result<DtnMatrix> {
    let u = op.boundary_solutions()?;
    let lambda = op.neumann_traces(&u, NeumannScheme::Variational);
    Ok(DtnMatrix { lambda, weights, omega2: op.omega2() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_uniform_partition;

    fn const_field(m: usize, c: f64, b1: f64, b2: f64) -> PwcField {
        let g = Arc::new(Grid::new(m).unwrap());
        let p = Arc::new(make_uniform_partition(&g, 1).unwrap());
        PwcField::constant(p, c, Bounds::new(b1, b2).unwrap())
    }

    #[test]
    fn guard_examples() {
        let w = spectrum_guard(5.0, 1.0, 2.0).unwrap();
        assert_eq!(w.kind, WindowKind::Low);
        let l1 = 2.0 * PI * PI;
        assert!((w.upper - l1 / 2.0).abs() < 1e-12);
        assert!((w.upper - 9.869604401089358).abs() < 1e-12);

        let err = spectrum_guard(l1 / 2.0, 1.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::Inadmissible { n: 1, .. }), "{err}");
        let err = spectrum_guard(l1, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Inadmissible { n: 1, .. }));
        assert!(spectrum_guard(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn guard_band_window() {
        // between λ₁ = 2π² and λ₂ = 5π² for a narrow coefficient range
        let w = spectrum_guard(30.0, 1.0, 1.2).unwrap();
        assert_eq!(w.kind, WindowKind::Band { n: 1 });
        assert!(w.lower < 30.0 && 30.0 < w.upper);
        assert!(w.distance > 0.0);
        // λ₂ = λ₃ = 5π² ≈ 49.35 is a double eigenvalue
        let err = spectrum_guard(45.0, 1.0, 1.2).unwrap_err();
        assert!(matches!(err, Error::Inadmissible { n: 2, .. }), "{err}");
    }

    #[test]
    fn eigenvalue_list_is_complete() {
        let eig = dirichlet_eigenvalues(200.0);
        assert!(eig.last().unwrap() > &200.0);
        let brute: Vec<f64> = {
            let mut v: Vec<f64> = (1..20)
                .flat_map(|p| (1..20).map(move |q| PI * PI * (p * p + q * q) as f64))
                .filter(|&l| l <= 200.0)
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(&eig[..eig.len() - 1], &brute[..]);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let f = const_field(9, 1.0, 1.0, 2.0);
        let op = HelmholtzOperator::new(&f, 1.0).unwrap();
        let u = op.solve(&vec![0.0; 32], None).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn near_laplace_limit_reproduces_harmonic_polynomial() {
        let f = const_field(17, 1.0, 1.0, 1.0);
        let omega2 = 1e-6;
        let op = HelmholtzOperator::new(&f, omega2).unwrap();
        let exact = NodalField::from_fn(f.partition().grid().clone(), |x, y| x * x - y * y);
        let src = NodalField::from_fn(f.partition().grid().clone(), |x, y| -omega2 * (x * x - y * y));
        let u = op.solve(&exact.boundary_values(), Some(&src)).unwrap();
        // x² - y² is reproduced exactly by the five-point stencil
        assert!(u.max_abs_diff(&exact) < 1e-12);
    }

    #[test]
    fn dtn_is_symmetric_and_annihilates_constants_at_low_frequency() {
        let f = const_field(9, 1.3, 1.0, 2.0);
        let model = ForwardModel::new(f.partition().grid().clone(), 1e-9);
        let dtn = model.dtn(&f).unwrap();
        assert!(dtn.asymmetry() < 1e-9);
        let ones = nalgebra::DVector::from_element(dtn.nb(), 1.0);
        assert!((&dtn.lambda * ones).amax() < 1e-8);
    }

    #[test]
    fn weights_examples() {
        let g = Grid::new(9).unwrap();
        let w = build_boundary_weights(&g);
        let hb = w.hb();
        let ones = nalgebra::DVector::from_element(w.nb(), 1.0);
        assert!((&w.wplus * &ones - &ones * hb).amax() < 1e-12);
        let prod = &w.wplus * &w.wminus;
        let target = DMatrix::identity(w.nb(), w.nb()) * (hb * hb);
        assert!((prod - target).amax() < 1e-10);
        let sq = &w.wminus_sqrt * &w.wminus_sqrt;
        assert!((sq - &w.wminus).amax() < 1e-12);
        // alternating mode is the top eigenvector of the loop Laplacian
        let alt = nalgebra::DVector::from_fn(w.nb(), |k, _| if k % 2 == 0 { 1.0 } else { -1.0 });
        let expect = &alt * (hb * (1.0 + 4.0 / (hb * hb)).sqrt());
        assert!((&w.wplus * &alt - expect).amax() < 1e-10);
        assert!(w.wplus.clone().cholesky().is_some());
        assert!(w.wminus.clone().cholesky().is_some());
    }

    #[test]
    fn data_norm_examples() {
        let g = Grid::new(3).unwrap();
        let mut w = build_boundary_weights(&g);
        w.wminus_sqrt = DMatrix::identity(8, 8);
        w.wminus = DMatrix::identity(8, 8);
        let zero = DMatrix::zeros(8, 8);
        assert_eq!(dtn_data_norm(&zero, &w, NormKind::HilbertSchmidt).unwrap(), 0.0);
        let mut a = DMatrix::zeros(8, 8);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = 4.0;
        assert!((dtn_data_norm(&a, &w, NormKind::HilbertSchmidt).unwrap() - 5.0).abs() < 1e-14);
        assert!((dtn_data_norm(&a, &w, NormKind::Operator).unwrap() - 4.0).abs() < 1e-12);
        assert!((data_inner(&a, &a, &w).unwrap() - 25.0).abs() < 1e-14);
        assert!(dtn_data_norm(&DMatrix::zeros(4, 4), &w, NormKind::HilbertSchmidt).is_err());
    }
}
