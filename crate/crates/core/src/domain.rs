//! Discretization of the unit square: the node grid, partitions of its cells
//! into subdomains, piecewise-constant fields over a partition, and the
//! projection onto them.
//!
//! Fields are compared through their grid-cell midpoint values. A nodal field
//! is sampled at a cell midpoint by averaging the four corners (exact for the
//! bilinear interpolant), a piecewise-constant field by its coefficient. All
//! integrals use the cell-area midpoint rule, which is exact for piecewise
//! constants.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Uniform node grid on the unit square with `m` nodes per side.
#[derive(Debug, Clone)]
pub struct Grid {
    m: usize,
    boundary: Vec<usize>,
    interior: Vec<usize>,
    boundary_pos: Vec<Option<usize>>,
    interior_pos: Vec<Option<usize>>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
    }
}

impl Grid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::Config(format!("grid needs at least 3 nodes per side, got m = {m}")));
        }
        let n = m * m;
        let mut boundary = Vec::with_capacity(4 * (m - 1));
        // counter-clockwise loop starting at the origin
        for i in 0..m - 1 {
            boundary.push(i);
        }
        for j in 0..m - 1 {
            boundary.push(j * m + m - 1);
        }
        for i in (1..m).rev() {
            boundary.push((m - 1) * m + i);
        }
        for j in (1..m).rev() {
            boundary.push(j * m);
        }
        let mut boundary_pos = vec![None; n];
        for (p, &node) in boundary.iter().enumerate() {
            boundary_pos[node] = Some(p);
        }
        let mut interior = Vec::with_capacity((m - 2) * (m - 2));
        let mut interior_pos = vec![None; n];
        for j in 1..m - 1 {
            for i in 1..m - 1 {
                interior_pos[j * m + i] = Some(interior.len());
                interior.push(j * m + i);
            }
        }
        Ok(Self { m, boundary, interior, boundary_pos, interior_pos })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Node spacing `1/(m-1)`.
    pub fn h(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.m * self.m
    }

    pub fn cells_per_side(&self) -> usize {
        self.m - 1
    }

    pub fn n_cells(&self) -> usize {
        (self.m - 1) * (self.m - 1)
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.m + i
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % self.m, node / self.m)
    }

    pub fn node_xy(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(node);
        (i as f64 * self.h(), j as f64 * self.h())
    }

    /// Boundary nodes as one closed counter-clockwise loop.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_index(&self, node: usize) -> Option<usize> {
        self.boundary_pos[node]
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_pos[node]
    }

    pub fn cell(&self, ci: usize, cj: usize) -> usize {
        cj * (self.m - 1) + ci
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % (self.m - 1), cell / (self.m - 1))
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (ci, cj) = self.cell_ij(cell);
        ((ci as f64 + 0.5) * self.h(), (cj as f64 + 0.5) * self.h())
    }

    pub fn cell_corners(&self, cell: usize) -> [usize; 4] {
        let (ci, cj) = self.cell_ij(cell);
        let a = self.node(ci, cj);
        [a, a + 1, a + self.m, a + self.m + 1]
    }

    /// Grid cells touching `node` (one to four of them).
    pub fn node_cells(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.node_ij(node);
        let c = self.m - 1;
        [(0usize, 0usize), (1, 0), (0, 1), (1, 1)].into_iter().filter_map(move |(di, dj)| {
            let ci = (i + di).checked_sub(1)?;
            let cj = (j + dj).checked_sub(1)?;
            (ci < c && cj < c).then(|| cj * c + ci)
        })
    }
}

/// Axis-aligned rectangle of grid cells, half-open in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CellRect {
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
}

/// Disjoint cover of the grid cells by `N` subdomains.
#[derive(Debug, Clone)]
pub struct Partition {
    grid: Arc<Grid>,
    cell_of: Vec<usize>,
    cells: Vec<Vec<usize>>,
    level: usize,
    r0: f64,
    cells_per_side: Option<usize>,
    parent: Option<Arc<Partition>>,
    parent_map: Vec<usize>,
}

impl Partition {
    /// Builds a partition from a grid-cell to subdomain map. Every subdomain
    /// index below `n` must be hit at least once.
    pub fn from_cell_map(grid: Arc<Grid>, cell_of: Vec<usize>, n: usize, level: usize) -> Result<Self> {
        if cell_of.len() != grid.n_cells() {
            return Err(Error::Config(format!(
                "cell map has {} entries, grid has {} cells",
                cell_of.len(),
                grid.n_cells()
            )));
        }
        if n == 0 {
            return Err(Error::Config("partition needs at least one subdomain".into()));
        }
        let mut cells = vec![Vec::new(); n];
        for (c, &d) in cell_of.iter().enumerate() {
            if d >= n {
                return Err(Error::Config(format!("cell {c} mapped to subdomain {d} >= N = {n}")));
            }
            cells[d].push(c);
        }
        if let Some(d) = cells.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("subdomain {d} is empty")));
        }
        let h = grid.h();
        let r0 = cells
            .iter()
            .map(|cs| {
                let r = bounding_rect(&grid, cs);
                h * (((r.i1 - r.i0).pow(2) + (r.j1 - r.j0).pow(2)) as f64).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        Ok(Self { grid, cell_of, cells, level, r0, cells_per_side: None, parent: None, parent_map: Vec::new() })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Number of subdomains `N`.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Smallest subdomain diameter.
    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn cells_per_side(&self) -> Option<usize> {
        self.cells_per_side
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    /// Subdomain containing each grid cell.
    pub fn cell_of(&self) -> &[usize] {
        &self.cell_of
    }

    pub fn parent(&self) -> Option<&Arc<Partition>> {
        self.parent.as_ref()
    }

    /// Child subdomain to parent subdomain; empty for a root partition.
    pub fn parent_map(&self) -> &[usize] {
        &self.parent_map
    }

    pub fn area(&self, j: usize) -> f64 {
        self.cells[j].len() as f64 * self.grid.cell_area()
    }

    /// True when both partitions split the same grid identically.
    pub fn same_as(&self, other: &Partition) -> bool {
        self.grid == other.grid && self.cell_of == other.cell_of
    }

    /// Subdomain `j` touches no boundary node of the grid.
    pub fn is_interior(&self, j: usize) -> bool {
        let r = bounding_rect(&self.grid, &self.cells[j]);
        let c = self.grid.cells_per_side();
        r.i0 > 0 && r.j0 > 0 && r.i1 < c && r.j1 < c
    }

    /// Checks the disjoint-cover and parent-containment invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = vec![false; self.grid.n_cells()];
        for (j, cs) in self.cells.iter().enumerate() {
            for &c in cs {
                if seen[c] || self.cell_of[c] != j {
                    return Err(Error::Config(format!("grid cell {c} is not covered exactly once")));
                }
                seen[c] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Config("subdomains do not cover the grid".into()));
        }
        if let Some(parent) = &self.parent {
            for (j, cs) in self.cells.iter().enumerate() {
                let pj = self.parent_map[j];
                if cs.iter().any(|&c| parent.cell_of[c] != pj) {
                    return Err(Error::Config(format!("subdomain {j} is not contained in parent {pj}")));
                }
            }
        }
        Ok(())
    }

    fn rect(&self, j: usize) -> Result<CellRect> {
        let r = bounding_rect(&self.grid, &self.cells[j]);
        if (r.i1 - r.i0) * (r.j1 - r.j0) != self.cells[j].len() {
            return Err(Error::Config(format!("subdomain {j} is not a rectangle")));
        }
        Ok(r)
    }
}

fn bounding_rect(grid: &Grid, cells: &[usize]) -> CellRect {
    let mut r = CellRect { i0: usize::MAX, i1: 0, j0: usize::MAX, j1: 0 };
    for &c in cells {
        let (ci, cj) = grid.cell_ij(c);
        r.i0 = r.i0.min(ci);
        r.i1 = r.i1.max(ci + 1);
        r.j0 = r.j0.min(cj);
        r.j1 = r.j1.max(cj + 1);
    }
    r
}

/// Uniform partition into `k x k` square subdomains of side `1/k`.
pub fn make_uniform_partition(grid: &Arc<Grid>, k: usize) -> Result<Partition> {
    let c = grid.cells_per_side();
    if k == 0 || !c.is_multiple_of(k) {
        return Err(Error::Config(format!(
            "{k} cells per side does not divide the {c} grid cells per side (m = {})",
            grid.m()
        )));
    }
    let s = c / k;
    let cell_of = (0..grid.n_cells())
        .map(|cell| {
            let (ci, cj) = grid.cell_ij(cell);
            (cj / s) * k + ci / s
        })
        .collect();
    let mut p = Partition::from_cell_map(grid.clone(), cell_of, k * k, 0)?;
    p.cells_per_side = Some(k);
    p.r0 = std::f64::consts::SQRT_2 / k as f64;
    Ok(p)
}

/// Splits every subdomain into `factor x factor` children.
pub fn refine_partition(p: &Arc<Partition>, factor: usize) -> Result<Partition> {
    if factor < 2 {
        return Err(Error::Config(format!("refinement factor must be at least 2, got {factor}")));
    }
    let grid = p.grid.clone();
    let mut child = if let Some(k) = p.cells_per_side {
        make_uniform_partition(&grid, k * factor)?
    } else {
        let mut cell_of = vec![0; grid.n_cells()];
        for j in 0..p.len() {
            let r = p.rect(j)?;
            let (w, h) = (r.i1 - r.i0, r.j1 - r.j0);
            if w % factor != 0 || h % factor != 0 {
                return Err(Error::Config(format!(
                    "subdomain {j} ({w}x{h} grid cells) is not divisible by factor {factor} (m = {})",
                    grid.m()
                )));
            }
            let (sw, sh) = (w / factor, h / factor);
            for &c in &p.cells[j] {
                let (ci, cj) = grid.cell_ij(c);
                let sub = ((cj - r.j0) / sh) * factor + (ci - r.i0) / sw;
                cell_of[c] = j * factor * factor + sub;
            }
        }
        Partition::from_cell_map(grid.clone(), cell_of, p.len() * factor * factor, 0)?
    };
    child.parent_map = child.cells.iter().map(|cs| p.cell_of[cs[0]]).collect();
    child.level = p.level + 1;
    child.parent = Some(p.clone());
    child.check_invariants()?;
    Ok(child)
}

/// Splits the single subdomain `j` into four quadrants (local Haar-type
/// refinement). The quadrants take the place of `j` in the numbering.
pub fn split_cell(p: &Arc<Partition>, j: usize) -> Result<Partition> {
    if j >= p.len() {
        return Err(Error::Config(format!("subdomain {j} out of range (N = {})", p.len())));
    }
    let grid = p.grid.clone();
    let r = p.rect(j)?;
    let (w, h) = (r.i1 - r.i0, r.j1 - r.j0);
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Config(format!("subdomain {j} ({w}x{h} grid cells) cannot be halved")));
    }
    let cell_of = (0..grid.n_cells())
        .map(|c| {
            let d = p.cell_of[c];
            if d < j {
                d
            } else if d > j {
                d + 3
            } else {
                let (ci, cj) = grid.cell_ij(c);
                j + 2 * ((cj - r.j0) / (h / 2)) + (ci - r.i0) / (w / 2)
            }
        })
        .collect();
    let mut child = Partition::from_cell_map(grid, cell_of, p.len() + 3, p.level + 1)?;
    child.parent_map = child.cells.iter().map(|cs| p.cell_of[cs[0]]).collect();
    child.parent = Some(p.clone());
    child.check_invariants()?;
    Ok(child)
}

/// Box constraint `[lo, hi]` on the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bounds need 0 < B1 <= B2 < inf, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Anything that can be sampled at grid-cell midpoints.
pub trait CellSampled {
    fn grid(&self) -> &Grid;
    fn cell_values(&self) -> Vec<f64>;
}

/// Piecewise-constant field `sum_j c_j chi_{D_j}`.
#[derive(Debug, Clone)]
pub struct PwcField {
    partition: Arc<Partition>,
    coeffs: Vec<f64>,
    bounds: Bounds,
}

impl PwcField {
    pub fn new(partition: Arc<Partition>, coeffs: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if coeffs.len() != partition.len() {
            return Err(Error::Config(format!(
                "{} coefficients for a partition with N = {}",
                coeffs.len(),
                partition.len()
            )));
        }
        Ok(Self { partition, coeffs, bounds })
    }

    pub fn constant(partition: Arc<Partition>, value: f64, bounds: Bounds) -> Self {
        let n = partition.len();
        Self { partition, coeffs: vec![value; n], bounds }
    }

    /// Indicator of subdomain `j` with unit coefficient.
    pub fn indicator(partition: Arc<Partition>, j: usize, bounds: Bounds) -> Self {
        let mut coeffs = vec![0.0; partition.len()];
        coeffs[j] = 1.0;
        Self { partition, coeffs, bounds }
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        Self::new(self.partition.clone(), coeffs, self.bounds)
    }

    pub fn with_bounds(&self, bounds: Bounds) -> Self {
        Self { bounds, ..self.clone() }
    }

    /// Bounds shrunk to the actual coefficient range.
    pub fn tight_bounds(&self) -> Result<Bounds> {
        let lo = self.coeffs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Bounds::new(lo, hi)
    }

    /// Checks `B1 <= c_j <= B2` for every coefficient.
    pub fn check_admissible(&self) -> Result<()> {
        match self.coeffs.iter().position(|&c| !self.bounds.contains(c)) {
            None => Ok(()),
            Some(index) => Err(Error::OutOfBounds {
                index,
                value: self.coeffs[index],
                lo: self.bounds.lo,
                hi: self.bounds.hi,
            }),
        }
    }

    pub fn is_admissible(&self) -> bool {
        self.check_admissible().is_ok()
    }

    /// `self + scale * other` on the same partition.
    pub fn axpy(&self, scale: f64, other: &PwcField) -> Result<Self> {
        if !self.partition.same_as(&other.partition) {
            return Err(Error::Mismatch("fields live on different partitions".into()));
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + scale * b).collect();
        self.with_coeffs(coeffs)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| s * c).collect(), ..self.clone() }
    }

    /// Re-expresses the field on another partition of the same grid by cell
    /// averaging. Exact when `target` refines this field's partition.
    pub fn embed(&self, target: &Arc<Partition>) -> Result<Self> {
        project(self, target, self.bounds)
    }

    /// Midpoint value per node, averaging the adjacent subdomain coefficients.
    pub fn nodal_average(&self) -> NodalField {
        let grid = self.partition.grid().clone();
        let values = (0..grid.n_nodes())
            .map(|node| {
                let (s, n) = grid
                    .node_cells(node)
                    .fold((0.0, 0usize), |(s, n), c| (s + self.coeffs[self.partition.cell_of[c]], n + 1));
                s / n as f64
            })
            .collect();
        NodalField { grid, values }
    }
}

impl CellSampled for PwcField {
    fn grid(&self) -> &Grid {
        self.partition.grid()
    }

    fn cell_values(&self) -> Vec<f64> {
        self.partition.cell_of.iter().map(|&d| self.coeffs[d]).collect()
    }
}

/// One real value per grid node, row-major.
#[derive(Debug, Clone)]
pub struct NodalField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::Config(format!(
                "nodal field has {} values, grid has {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n_nodes();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.n_nodes())
            .map(|node| {
                let (x, y) = grid.node_xy(node);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn boundary_values(&self) -> Vec<f64> {
        self.grid.boundary().iter().map(|&n| self.values[n]).collect()
    }

    pub fn max_abs_diff(&self, other: &NodalField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl CellSampled for NodalField {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn cell_values(&self) -> Vec<f64> {
        (0..self.grid.n_cells())
            .map(|c| self.grid.cell_corners(c).iter().map(|&n| self.values[n]).sum::<f64>() * 0.25)
            .collect()
    }
}

/// Cell averages over each subdomain: the L2 projection onto
/// `span{chi_{D_j}}`.
pub fn project(f: &impl CellSampled, p: &Arc<Partition>, bounds: Bounds) -> Result<PwcField> {
    if f.grid() != p.grid().as_ref() {
        return Err(Error::Mismatch(format!(
            "field on m = {} projected onto partition of m = {}",
            f.grid().m(),
            p.grid().m()
        )));
    }
    let cv = f.cell_values();
    let coeffs = p
        .cells()
        .iter()
        .map(|cs| cs.iter().map(|&c| cv[c]).sum::<f64>() / cs.len() as f64)
        .collect();
    PwcField::new(p.clone(), coeffs, bounds)
}

/// Coordinate-wise clipping into `[B1, B2]`.
pub fn clamp_to_bounds(f: &PwcField) -> PwcField {
    let b = f.bounds;
    PwcField { coeffs: f.coeffs.iter().map(|c| c.clamp(b.lo, b.hi)).collect(), ..f.clone() }
}

/// Projection onto the admissible set: cell averaging, then clipping.
pub fn project_to_admissible(f: &impl CellSampled, p: &Arc<Partition>, bounds: Bounds) -> Result<PwcField> {
    Ok(clamp_to_bounds(&project(f, p, bounds)?))
}

pub fn l2_norm(f: &impl CellSampled) -> f64 {
    let area = f.grid().cell_area();
    (f.cell_values().iter().map(|v| v * v).sum::<f64>() * area).sqrt()
}

pub fn l2_dist(f: &impl CellSampled, g: &impl CellSampled) -> Result<f64> {
    l2_inner_diff(f, g).map(f64::sqrt)
}

fn l2_inner_diff(f: &impl CellSampled, g: &impl CellSampled) -> Result<f64> {
    if f.grid() != g.grid() {
        return Err(Error::Mismatch(format!("grids differ: m = {} vs m = {}", f.grid().m(), g.grid().m())));
    }
    let area = f.grid().cell_area();
    let s: f64 = f.cell_values().iter().zip(g.cell_values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s * area)
}

/// L2 inner product with midpoint quadrature.
pub fn l2_inner(f: &impl CellSampled, g: &impl CellSampled) -> Result<f64> {
    if f.grid() != g.grid() {
        return Err(Error::Mismatch(format!("grids differ: m = {} vs m = {}", f.grid().m(), g.grid().m())));
    }
    let area = f.grid().cell_area();
    Ok(f.cell_values().iter().zip(g.cell_values()).map(|(a, b)| a * b).sum::<f64>() * area)
}

/// Bregman distance of the squared L2 norm: `0.5 * ||f - g||^2`.
pub fn bregman(f: &impl CellSampled, g: &impl CellSampled) -> Result<f64> {
    Ok(0.5 * l2_inner_diff(f, g)?)
}
