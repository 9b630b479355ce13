//! Independent checks of the forward map and its derivative, and empirical
//! stability sampling across partition sizes.
//!
//! Quadratures here are written out against the grid directly rather than
//! reusing the assembly code they audit.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::derivative::{apply_df, apply_df_adjoint, df_norm_probe, lipschitz_df_probe};
use crate::domain::{l2_dist, l2_inner, make_uniform_partition, Bounds, Grid, NodalField, Partition, PwcField};
use crate::error::{Error, Result};
use crate::forward::{dtn_data_norm, data_inner, ForwardModel, HelmholtzOperator, NormKind};

/// Generator for trial `index` of experiment `tag`. Streams never overlap, so
/// trials can run in any order.
pub fn trial_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | index);
    rng
}

/// Least-squares line `y = slope x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub h: f64,
    pub max_error: f64,
    pub seconds: f64,
}

/// Solves `-Δu - ω²u = (2π² - ω²) sin(πx) sin(πy)` with zero boundary data
/// on each grid and compares with `sin(πx) sin(πy)` at the nodes. Returns
/// the rows and the observed orders between consecutive grids.
pub fn manufactured_convergence(ms: &[usize], omega2: f64) -> Result<(Vec<ConvergenceRow>, Vec<f64>)> {
    let mut rows = Vec::new();
    for &m in ms {
        let grid = Arc::new(Grid::new(m)?);
        let p = Arc::new(make_uniform_partition(&grid, 1)?);
        let c = PwcField::constant(p, 1.0, Bounds::new(1.0, 1.0)?);
        let start = Instant::now();
        let op = HelmholtzOperator::new(&c, omega2)?;
        let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let f = NodalField::from_fn(grid.clone(), |x, y| (2.0 * PI * PI - omega2) * exact(x, y));
        let u = op.solve(&vec![0.0; grid.boundary().len()], Some(&f))?;
        let seconds = start.elapsed().as_secs_f64();
        let max_error = u.max_abs_diff(&NodalField::from_fn(grid.clone(), exact));
        rows.push(ConvergenceRow { m, h: grid.h(), max_error, seconds });
    }
    let orders = rows.windows(2).map(|w| (w[0].max_error / w[1].max_error).ln() / (w[0].h / w[1].h).ln()).collect();
    Ok((rows, orders))
}

#[derive(Debug, Clone, Serialize)]
pub struct AlessandriniAudit {
    pub trials: usize,
    pub max_defect: f64,
    pub defects: Vec<f64>,
}

/// `-ω² Σ_cells (c₁ - c₂) |cell| ¼ Σ_corners u₁u₂`
fn interior_pairing(grid: &Grid, c1: &PwcField, c2: &PwcField, u1: &[f64], u2: &[f64], omega2: f64) -> f64 {
    let m = grid.m();
    let k = m - 1;
    let h = 1.0 / k as f64;
    let (a, b) = (c1.partition().cell_of(), c2.partition().cell_of());
    let mut s = 0.0;
    for cj in 0..k {
        for ci in 0..k {
            let cell = cj * k + ci;
            let d = c1.coeffs()[a[cell]] - c2.coeffs()[b[cell]];
            if d == 0.0 {
                continue;
            }
            let corners = [cj * m + ci, cj * m + ci + 1, (cj + 1) * m + ci, (cj + 1) * m + ci + 1];
            let avg: f64 = corners.iter().map(|&n| u1[n] * u2[n]).sum::<f64>() / 4.0;
            s += d * h * h * avg;
        }
    }
    -omega2 * s
}

fn relative_defect(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares `gᵀ(Λ₁ - Λ₂)h` with the interior pairing of the two solutions
/// over random boundary pairs `(g, h)`.
pub fn audit_alessandrini(
    model: &ForwardModel,
    c1: &PwcField,
    c2: &PwcField,
    trials: usize,
    seed: u64,
) -> Result<AlessandriniAudit> {
    let op1 = model.operator(c1)?;
    let op2 = model.operator(c2)?;
    let l1 = model.dtn(c1)?.lambda;
    let l2 = model.dtn(c2)?.lambda;
    let diff = &l1 - &l2;
    let grid = model.grid().clone();
    let nb = grid.boundary().len();
    let defects: Result<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, 1, t as u64);
            let g: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u1 = op1.solve(&h, None)?;
            let u2 = op2.solve(&g, None)?;
            let pair = DVector::from_vec(g).dot(&(&diff * DVector::from_vec(h)));
            let inner = interior_pairing(&grid, c1, c2, u1.values(), u2.values(), model.omega2());
            Ok(relative_defect(pair, inner))
        })
        .collect();
    let defects = defects?;
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    Ok(AlessandriniAudit { trials, max_defect, defects })
}

/// Largest relative mismatch of `⟨DF δ, R⟩_Y` against `⟨δ, DF* R⟩_{L²}` over
/// random pairs.
pub fn adjoint_dot_test(model: &ForwardModel, c: &PwcField, pairs: usize, seed: u64) -> Result<f64> {
    let (dtn, bank) = model.evaluate(c)?;
    let nb = dtn.nb();
    let n = c.coeffs().len();
    let mut worst = 0.0f64;
    for k in 0..pairs {
        let mut rng = trial_rng(seed, 2, k as u64);
        let delta = c.with_coeffs((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let r = DMatrix::from_fn(nb, nb, |_, _| rng.gen_range(-1.0..1.0));
        let lhs = data_inner(&apply_df(&bank, &delta)?, &r, model.weights())?;
        let g = apply_df_adjoint(&bank, &r, model.weights())?;
        let rhs = l2_inner(&delta, &g)?;
        worst = worst.max(relative_defect(lhs, rhs));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientPoint {
    pub t: f64,
    pub rel_error: f64,
    /// Estimated rounding level of the difference quotient at this `t`.
    pub noise: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionReport {
    pub points: Vec<GradientPoint>,
    /// Log-log slope over the points that sit above the rounding level.
    pub slope: Option<f64>,
    pub smallest_t_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub directions: Vec<DirectionReport>,
    pub min_slope: f64,
    pub max_smallest_t_error: f64,
    pub pass: bool,
}

pub const GRADIENT_MIN_SLOPE: f64 = 1.8;
pub const GRADIENT_MAX_ERROR: f64 = 1e-5;

/// `c + tδ` with bounds tightened to its own range.
fn shifted(c: &PwcField, t: f64, delta: &PwcField) -> Result<PwcField> {
    let f = c.axpy(t, delta)?;
    let b = f.tight_bounds()?;
    Ok(f.with_bounds(b))
}

/// Central differences `(Λ(c + tδ) - Λ(c - tδ)) / 2t` against `DF(c)δ`.
/// A `t` whose perturbed fields fail the frequency guard is halved until
/// both evaluations succeed.
pub fn gradient_check(model: &ForwardModel, c: &PwcField, deltas: &[PwcField], t_grid: &[f64]) -> Result<GradientReport> {
    if t_grid.iter().any(|&t| !(t > 0.0 && t <= 0.1)) {
        return Err(Error::Config("difference steps must lie in (0, 0.1]".into()));
    }
    let (base, bank) = model.evaluate(c)?;
    let base_norm = base.norm(NormKind::HilbertSchmidt)?;
    let w = model.weights();
    let mut directions = Vec::new();
    for delta in deltas {
        let exact = apply_df(&bank, delta)?;
        let exact_norm = dtn_data_norm(&exact, w, NormKind::HilbertSchmidt)?;
        let mut points = Vec::new();
        for &t0 in t_grid {
            let mut t = t0;
            let fd = loop {
                let attempt = (|| -> Result<DMatrix<f64>> {
                    let plus = model.dtn(&shifted(c, t, delta)?)?.lambda;
                    let minus = model.dtn(&shifted(c, -t, delta)?)?.lambda;
                    Ok((plus - minus) / (2.0 * t))
                })();
                match attempt {
                    Ok(fd) => break fd,
                    Err(Error::Inadmissible { .. } | Error::NearEigenfrequency { .. } | Error::Config(_)) if t > t0 * 1e-6 => {
                        t *= 0.5
                    }
                    Err(e) => return Err(e),
                }
            };
            let err = dtn_data_norm(&(&fd - &exact), w, NormKind::HilbertSchmidt)?;
            let (rel_error, noise) = if exact_norm == 0.0 {
                (err, 0.0)
            } else {
                (err / exact_norm, 1e-14 * base_norm / (t * exact_norm))
            };
            points.push(GradientPoint { t, rel_error, noise });
        }
        let usable: Vec<&GradientPoint> = points.iter().filter(|p| p.rel_error > 10.0 * p.noise && p.rel_error > 0.0).collect();
        let slope = (usable.len() >= 2).then(|| {
            let xs: Vec<f64> = usable.iter().map(|p| p.t.ln()).collect();
            let ys: Vec<f64> = usable.iter().map(|p| p.rel_error.ln()).collect();
            fit_line(&xs, &ys).0
        });
        let smallest_t_error = points
            .iter()
            .min_by(|a, b| a.t.total_cmp(&b.t))
            .map_or(0.0, |p| p.rel_error);
        let exact_zero = exact_norm == 0.0 && smallest_t_error == 0.0;
        let pass = exact_zero || (slope.is_some_and(|s| s >= GRADIENT_MIN_SLOPE) && smallest_t_error <= GRADIENT_MAX_ERROR);
        directions.push(DirectionReport { points, slope, smallest_t_error, pass });
    }
    let min_slope = directions.iter().filter_map(|d| d.slope).fold(f64::INFINITY, f64::min);
    let max_smallest_t_error = directions.iter().map(|d| d.smallest_t_error).fold(0.0, f64::max);
    let pass = directions.iter().all(|d| d.pass);
    Ok(GradientReport { directions, min_slope, max_smallest_t_error, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyRow {
    pub omega2: f64,
    pub df_norm: f64,
    pub lipschitz_probe: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyScaling {
    pub rows: Vec<FrequencyRow>,
    /// Slope of `log ‖DF‖` against `log ω²`.
    pub df_slope: f64,
    /// Slope of `log ‖DF(c₁) - DF(c₂)‖` against `log ω⁴`.
    pub lipschitz_slope: f64,
}

pub fn frequency_scaling(grid: &Arc<Grid>, c1: &PwcField, c2: &PwcField, omega_grid: &[f64]) -> Result<FrequencyScaling> {
    let base = ForwardModel::new(grid.clone(), omega_grid[0]);
    let rows: Result<Vec<FrequencyRow>> = omega_grid
        .iter()
        .map(|&w2| {
            let model = base.with_omega2(w2);
            Ok(FrequencyRow {
                omega2: w2,
                df_norm: df_norm_probe(&model, c1, NormKind::HilbertSchmidt)?,
                lipschitz_probe: lipschitz_df_probe(&model, c1, c2)?,
            })
        })
        .collect();
    let rows = rows?;
    let lw: Vec<f64> = rows.iter().map(|r| r.omega2.ln()).collect();
    let (df_slope, _) = fit_line(&lw, &rows.iter().map(|r| r.df_norm.ln()).collect::<Vec<_>>());
    let lw4: Vec<f64> = lw.iter().map(|x| 2.0 * x).collect();
    let (lipschitz_slope, _) = fit_line(&lw4, &rows.iter().map(|r| r.lipschitz_probe.ln()).collect::<Vec<_>>());
    Ok(FrequencyScaling { rows, df_slope, lipschitz_slope })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySample {
    pub big_n: usize,
    pub adversarial: bool,
    pub coeff_dist: f64,
    pub data_dist: f64,
    pub data_dist_op: f64,
    /// `‖c₁ - c₂‖_{L²} / ‖Λ₁ - Λ₂‖_Y`
    pub ratio: f64,
    pub ratio_op: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub big_n: usize,
    pub samples: usize,
    pub max_ratio: f64,
    pub max_ratio_op: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityTable {
    pub omega2: f64,
    pub b2: f64,
    pub exponent: f64,
    pub rows: Vec<StabilityRow>,
    pub samples: Vec<StabilitySample>,
    /// Smallest `K` with `ratio ≤ ω⁻² exp(K(1 + ω²B₂)N^a)` on every sample.
    pub k_hat: f64,
    pub k_hat_op: f64,
    /// Least-squares fit of `log(max ratio · ω²)` on `(1 + ω²B₂)N^a`.
    pub lsq_slope: f64,
    pub lsq_intercept: f64,
}

impl StabilityTable {
    /// Fraction of samples bounded by `ω⁻² exp(K(1 + ω²B₂)N^a)`.
    pub fn coverage(&self, k: f64) -> f64 {
        let ok = self
            .samples
            .iter()
            .filter(|s| s.ratio <= (k * (1.0 + self.omega2 * self.b2) * (s.big_n as f64).powf(self.exponent)).exp() / self.omega2 * (1.0 + 1e-12))
            .count();
        ok as f64 / self.samples.len().max(1) as f64
    }
}

/// Subdomains farthest from the boundary of a uniform `k × k` partition.
fn deepest_subdomains(p: &Partition, k: usize) -> Vec<usize> {
    let grid = p.grid();
    let depth: Vec<usize> = p
        .cells()
        .iter()
        .map(|cs| {
            let (x, y) = grid.cell_center(cs[0]);
            let (i, j) = ((x * k as f64) as usize, (y * k as f64) as usize);
            i.min(j).min(k - 1 - i).min(k - 1 - j)
        })
        .collect();
    let top = depth.iter().copied().max().unwrap_or(0);
    (0..p.len()).filter(|&j| depth[j] == top).collect()
}

/// Samples coefficient pairs in `W_N` for each `N` and records
/// `‖c₁ - c₂‖ / ‖Λ₁ - Λ₂‖_Y`. Odd-numbered samples differ in a single
/// deep-interior subdomain; even ones are independent uniform draws.
pub fn estimate_lipschitz_constant(
    model: &ForwardModel,
    bounds: Bounds,
    big_ns: &[usize],
    samples_per_n: usize,
    seed: u64,
    exponent: f64,
) -> Result<StabilityTable> {
    let grid = model.grid().clone();
    let w = model.weights();
    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for &big_n in big_ns {
        let k = (big_n as f64).sqrt().round() as usize;
        if k * k != big_n {
            return Err(Error::Config(format!("N = {big_n} is not a perfect square")));
        }
        let p = Arc::new(make_uniform_partition(&grid, k)?);
        let deep = deepest_subdomains(&p, k);
        let draw: Result<Vec<Option<StabilitySample>>> = (0..samples_per_n)
            .into_par_iter()
            .map(|i| {
                let mut rng = trial_rng(seed, 3 + big_n as u64, i as u64);
                let c1: Vec<f64> = (0..big_n).map(|_| rng.gen_range(bounds.lo..=bounds.hi)).collect();
                let adversarial = i % 2 == 1;
                let c2: Vec<f64> = if adversarial {
                    let j = deep[(i / 2) % deep.len()];
                    let mut c2 = c1.clone();
                    let mid = 0.5 * (bounds.lo + bounds.hi);
                    let amp = rng.gen_range(0.2..1.0) * 0.5 * (bounds.hi - bounds.lo);
                    c2[j] = if c1[j] > mid { c1[j] - amp } else { c1[j] + amp };
                    c2
                } else {
                    (0..big_n).map(|_| rng.gen_range(bounds.lo..=bounds.hi)).collect()
                };
                let f1 = PwcField::new(p.clone(), c1, bounds)?;
                let f2 = PwcField::new(p.clone(), c2, bounds)?;
                let coeff_dist = l2_dist(&f1, &f2)?;
                let diff = model.dtn(&f1)?.lambda - model.dtn(&f2)?.lambda;
                let data_dist = dtn_data_norm(&diff, w, NormKind::HilbertSchmidt)?;
                let data_dist_op = dtn_data_norm(&diff, w, NormKind::Operator)?;
                if coeff_dist == 0.0 || data_dist == 0.0 || data_dist_op == 0.0 {
                    return Ok(None);
                }
                Ok(Some(StabilitySample {
                    big_n,
                    adversarial,
                    coeff_dist,
                    data_dist,
                    data_dist_op,
                    ratio: coeff_dist / data_dist,
                    ratio_op: coeff_dist / data_dist_op,
                }))
            })
            .collect();
        let kept: Vec<StabilitySample> = draw?.into_iter().flatten().collect();
        if kept.is_empty() {
            return Err(Error::Calibration(format!("every sampled pair at N = {big_n} was degenerate")));
        }
        rows.push(StabilityRow {
            big_n,
            samples: kept.len(),
            max_ratio: kept.iter().map(|s| s.ratio).fold(0.0, f64::max),
            max_ratio_op: kept.iter().map(|s| s.ratio_op).fold(0.0, f64::max),
        });
        samples.extend(kept);
    }
    let omega2 = model.omega2();
    let x = |n: usize| (1.0 + omega2 * bounds.hi) * (n as f64).powf(exponent);
    let envelope = |f: fn(&StabilityRow) -> f64| rows.iter().map(|r| (f(r) * omega2).ln() / x(r.big_n)).fold(f64::NEG_INFINITY, f64::max);
    let k_hat = envelope(|r| r.max_ratio);
    let k_hat_op = envelope(|r| r.max_ratio_op);
    let (lsq_slope, lsq_intercept) = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| x(r.big_n)).collect();
        let ys: Vec<f64> = rows.iter().map(|r| (r.max_ratio * omega2).ln()).collect();
        fit_line(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(StabilityTable { omega2, b2: bounds.hi, exponent, rows, samples, k_hat, k_hat_op, lsq_slope, lsq_intercept })
}

/// `v[i+1] ≥ (1 - tol) v[i]` for every consecutive pair.
pub fn nondecreasing_within(v: &[f64], tol: f64) -> bool {
    v.windows(2).all(|w| w[1] >= (1.0 - tol) * w[0])
}

/// Step sizes for the central-difference check.
pub const GRADIENT_T_GRID: [f64; 7] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SuiteOptions {
    pub convergence_ms: Vec<usize>,
    /// Grid for the identity, derivative and frequency checks.
    pub m: usize,
    pub omega2: f64,
    pub bounds: Bounds,
    pub alessandrini_trials: usize,
    pub alessandrini_fields: usize,
    pub gradient_directions: usize,
    pub adjoint_pairs: usize,
    pub frequency_grid: Vec<f64>,
    pub stability_ns: Vec<usize>,
    pub stability_samples: usize,
    pub stability_omega2: f64,
    pub exponent: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
    pub convergence: Vec<ConvergenceRow>,
    pub gradient: GradientReport,
    pub frequency: FrequencyScaling,
    pub stability: StabilityTable,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,value,threshold,pass\n");
        for c in &self.checks {
            s.push_str(&format!("{},{:?},{},{}\n", c.name, c.value, c.threshold, c.pass));
        }
        s
    }

    /// `key = value` lines, one pair per check plus the overall verdict.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!("{}.value = {:?}\n{}.pass = {}\n", c.name, c.value, c.name, c.pass));
        }
        s.push_str(&format!("pass = {}\n", self.passed()));
        s
    }
}

fn random_field(p: &Arc<Partition>, bounds: Bounds, rng: &mut ChaCha8Rng) -> Result<PwcField> {
    let c = (0..p.len()).map(|_| rng.gen_range(bounds.lo..=bounds.hi)).collect();
    PwcField::new(p.clone(), c, bounds)
}

/// Runs every oracle with its acceptance threshold.
pub fn run_suite(o: &SuiteOptions) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let (convergence, orders) = manufactured_convergence(&o.convergence_ms, 1.0)?;
    let worst = orders.iter().copied().max_by(|a, b| (a - 2.0).abs().total_cmp(&(b - 2.0).abs())).unwrap_or(f64::NAN);
    checks.push(Check { name: "manufactured_order", value: worst, threshold: "2.0 +- 0.3".into(), pass: (worst - 2.0).abs() <= 0.3 });
    let slowest = convergence.iter().map(|r| r.seconds).fold(0.0, f64::max);
    checks.push(Check { name: "manufactured_solve_seconds", value: slowest, threshold: "< 1".into(), pass: slowest < 1.0 });

    let grid = Arc::new(Grid::new(o.m)?);
    let model = ForwardModel::new(grid.clone(), o.omega2);
    let sizes = [1usize, 2, 4];
    let mut defect = 0.0f64;
    for i in 0..o.alessandrini_fields {
        let mut rng = trial_rng(o.seed, 10, i as u64);
        let p = Arc::new(make_uniform_partition(&grid, sizes[i % sizes.len()])?);
        let c1 = random_field(&p, o.bounds, &mut rng)?;
        let c2 = random_field(&p, o.bounds, &mut rng)?;
        defect = defect.max(audit_alessandrini(&model, &c1, &c2, o.alessandrini_trials, o.seed + i as u64)?.max_defect);
    }
    checks.push(Check { name: "alessandrini_max_defect", value: defect, threshold: "<= 1e-9".into(), pass: defect <= 1e-9 });

    let mut rng = trial_rng(o.seed, 11, 0);
    let p4 = Arc::new(make_uniform_partition(&grid, 2)?);
    let c = random_field(&p4, o.bounds, &mut rng)?;
    let deltas: Vec<PwcField> = (0..o.gradient_directions)
        .map(|_| c.with_coeffs((0..p4.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect::<Result<_>>()?;
    let gradient = gradient_check(&model, &c, &deltas, &GRADIENT_T_GRID)?;
    checks.push(Check {
        name: "gradient_min_slope",
        value: gradient.min_slope,
        threshold: format!(">= {GRADIENT_MIN_SLOPE}"),
        pass: gradient.min_slope >= GRADIENT_MIN_SLOPE,
    });
    checks.push(Check {
        name: "gradient_smallest_t_error",
        value: gradient.max_smallest_t_error,
        threshold: format!("<= {GRADIENT_MAX_ERROR:e}"),
        pass: gradient.max_smallest_t_error <= GRADIENT_MAX_ERROR,
    });
    let adjoint = adjoint_dot_test(&model, &c, o.adjoint_pairs, o.seed)?;
    checks.push(Check { name: "adjoint_dot_defect", value: adjoint, threshold: "<= 1e-10".into(), pass: adjoint <= 1e-10 });

    let c2 = random_field(&p4, o.bounds, &mut rng)?;
    let frequency = frequency_scaling(&grid, &c, &c2, &o.frequency_grid)?;
    for (name, v) in [("df_frequency_slope", frequency.df_slope), ("lipschitz_frequency_slope", frequency.lipschitz_slope)] {
        checks.push(Check { name, value: v, threshold: "1.0 +- 0.1".into(), pass: (v - 1.0).abs() <= 0.1 });
    }

    let smodel = model.with_omega2(o.stability_omega2);
    let stability = estimate_lipschitz_constant(&smodel, o.bounds, &o.stability_ns, o.stability_samples, o.seed, o.exponent)?;
    let maxes: Vec<f64> = stability.rows.iter().map(|r| r.max_ratio).collect();
    let growth = maxes.windows(2).map(|w| w[1] / w[0]).fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "stability_min_growth",
        value: growth,
        threshold: ">= 0.9".into(),
        pass: nondecreasing_within(&maxes, 0.1),
    });
    checks.push(Check { name: "stability_k_hat", value: stability.k_hat, threshold: "> 0".into(), pass: stability.k_hat > 0.0 });
    Ok(SuiteReport { checks, convergence, gradient, frequency, stability })
}
