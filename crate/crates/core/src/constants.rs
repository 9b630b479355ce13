//! Stability-constant calculus for the multi-level descent.
//!
//! Per level with `N` subdomains:
//!
//! ```text
//! L̂ = L̂₀ω²,  L = L₀ω⁴,  C = ω⁻² exp(K(1 + ω²B₂) N^a),  C̃ = L C²,
//! η = L̂₀ω² φ(N),  ρ = ½ (2 C̃ L̂)⁻² (1 + √(1 - 8C̃η) - 4C̃η)²
//! ```
//!
//! with `a = 4/7` by default. Exponentials are combined in the log domain so
//! that vanishing constants give infinities rather than NaNs.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::derivative::{df_norm_probe, lipschitz_df_probe};
use crate::domain::{l2_dist, make_uniform_partition, Bounds, Grid, PwcField};
use crate::error::{Error, Result};
use crate::forward::{spectrum_guard, ForwardModel, NormKind};
use crate::verify::{estimate_lipschitz_constant, trial_rng, StabilityTable};

pub const DEFAULT_EXPONENT: f64 = 4.0 / 7.0;

/// Largest argument accepted by `exp` before overflow.
const EXP_LIMIT: f64 = 709.0;

/// Bound `φ(N)` on the distance from the true coefficient to the
/// piecewise-constant space with `N` subdomains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressionModel {
    /// Exact representability, `φ ≡ 0`.
    Zero,
    /// `φ(N) = c_phi N^{-beta}`.
    PowerLaw { c_phi: f64, beta: f64 },
    /// Piecewise-linear interpolation of `(N, φ)` pairs, held constant
    /// outside the tabulated range.
    Table { points: Vec<(f64, f64)> },
}

impl CompressionModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::PowerLaw { c_phi, beta } => {
                if !(*c_phi > 0.0 && c_phi.is_finite()) {
                    return Err(Error::InvalidModel(format!("c_phi must be positive, got {c_phi}")));
                }
                if !(*beta > 0.0 && beta.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "beta must be positive for phi to decrease in N, got {beta}"
                    )));
                }
                Ok(())
            }
            Self::Table { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidModel("empty phi table".into()));
                }
                if points.iter().any(|&(n, v)| !(n >= 1.0 && v > 0.0 && v.is_finite())) {
                    return Err(Error::InvalidModel("phi table needs N >= 1 and positive values".into()));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 < w[0].1)) {
                    return Err(Error::InvalidModel("phi table must be strictly decreasing in N".into()));
                }
                Ok(())
            }
        }
    }

    pub fn phi(&self, n: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::PowerLaw { c_phi, beta } => c_phi * n.powf(-beta),
            Self::Table { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if n <= first.0 {
                    return first.1;
                }
                if n >= last.0 {
                    return last.1;
                }
                let k = points.partition_point(|p| p.0 <= n);
                let (a, b) = (points[k - 1], points[k]);
                a.1 + (b.1 - a.1) * (n - a.0) / (b.0 - a.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    Analytic,
    Empirical,
}

/// A-priori data together with the frequency and the compression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsBundle {
    pub lhat0: f64,
    pub l0: f64,
    pub big_k: f64,
    pub b1: f64,
    pub b2: f64,
    pub omega2: f64,
    pub eps: f64,
    pub phi: CompressionModel,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default)]
    pub calibration: Calibration,
}

fn default_exponent() -> f64 {
    DEFAULT_EXPONENT
}

impl ConstantsBundle {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lhat0", self.lhat0), ("l0", self.l0)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let pos = [("K", self.big_k), ("eps", self.eps), ("exponent", self.exponent)];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        self.phi.validate()?;
        spectrum_guard(self.omega2, self.b1, self.b2)?;
        Ok(())
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.b1, self.b2)
    }

    pub fn with_omega2(&self, omega2: f64) -> Self {
        Self { omega2, ..self.clone() }
    }

    /// `K (1 + ω² B₂) N^a`
    pub fn stability_exponent(&self, big_n: f64) -> f64 {
        self.big_k * (1.0 + self.omega2 * self.b2) * big_n.powf(self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConstants {
    pub big_n: usize,
    /// `L̂ = L̂₀ω²`
    pub lhat: f64,
    /// `L = L₀ω⁴`
    pub lip: f64,
    /// `C = ω⁻² exp(K(1 + ω²B₂)N^a)`
    pub stab: f64,
    /// `C̃ = L C²`
    pub ctilde: f64,
    pub eta: f64,
    /// Convergence radius, present iff `8 C̃ η < 1`.
    pub rho: Option<f64>,
}

impl LevelConstants {
    /// Same level with `η` replaced and `ρ` recomputed.
    pub fn with_eta(&self, eta: f64) -> Self {
        let mut lc = Self { eta, rho: None, ..self.clone() };
        lc.rho = admissible_rho(&lc);
        lc
    }
}

pub fn derive_level(bundle: &ConstantsBundle, big_n: usize) -> Result<LevelConstants> {
    if big_n == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    let w2 = bundle.omega2;
    let arg = bundle.stability_exponent(big_n as f64);
    if 2.0 * arg > EXP_LIMIT {
        return Err(Error::Overflow(format!(
            "exp(2 K (1 + w^2 B2) N^a) with exponent {:.4e} overflows; reduce K, omega^2, or N = {big_n}",
            2.0 * arg
        )));
    }
    let lhat = bundle.lhat0 * w2;
    let lip = bundle.l0 * w2 * w2;
    let stab = arg.exp() / w2;
    let ctilde = lip * stab * stab;
    let eta = bundle.lhat0 * w2 * bundle.phi.phi(big_n as f64);
    let values = [lhat, lip, stab, ctilde, eta];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow(format!("non-finite level constants at N = {big_n}: {values:?}")));
    }
    let mut lc = LevelConstants { big_n, lhat, lip, stab, ctilde, eta, rho: None };
    lc.rho = admissible_rho(&lc);
    Ok(lc)
}

fn admissible_rho(lc: &LevelConstants) -> Option<f64> {
    (8.0 * lc.ctilde * lc.eta < 1.0).then(|| compute_rho(lc).ok()).flatten()
}

/// `ρ = ½ (2 C̃ L̂)⁻² (1 + √(1 - 8C̃η) - 4C̃η)²`, defined up to and including
/// `8C̃η = 1`.
pub fn compute_rho(lc: &LevelConstants) -> Result<f64> {
    rho_formula(lc.ctilde, lc.lhat, lc.eta)
}

pub fn rho_formula(ctilde: f64, lhat: f64, eta: f64) -> Result<f64> {
    let x = ctilde * eta;
    if !(8.0 * x <= 1.0) {
        return Err(Error::LevelInadmissible { value: 8.0 * x });
    }
    let inner = 1.0 + (1.0 - 8.0 * x).sqrt() - 4.0 * x;
    let d = 2.0 * ctilde * lhat;
    Ok(0.5 * inner * inner / (d * d))
}

/// Outcome of the level-refinement inequalities between two levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTransition {
    /// `8 C̃_{n+1} η_{n+1}`, must stay below 1.
    pub first_lhs: f64,
    pub first: bool,
    /// `(3 + ε) η_n + η_{n+1}`
    pub second_lhs: f64,
    /// `2^{-5/2} (L̂_{n+1} C_{n+1} C̃_{n+1})⁻¹`
    pub second_rhs: f64,
    pub second: bool,
    /// `(3 + ε) η_n` against the right side of the original criterion.
    pub original_lhs: f64,
    pub original_rhs: f64,
    pub original: bool,
    pub reasons: Vec<String>,
}

impl LevelTransition {
    pub fn passes(&self) -> bool {
        self.first && self.second
    }

    /// The two-line condition implies the original criterion.
    pub fn implication_holds(&self) -> bool {
        !self.passes() || self.original
    }
}

pub fn check_level_transition(cur: &LevelConstants, next: &LevelConstants, eps: f64) -> LevelTransition {
    let x = next.ctilde * next.eta;
    let first_lhs = 8.0 * x;
    let first = first_lhs < 1.0;
    let second_lhs = (3.0 + eps) * cur.eta + next.eta;
    let second_rhs = 2f64.powf(-2.5) / (next.lhat * next.stab * next.ctilde);
    let second = second_lhs <= second_rhs;
    let original_lhs = (3.0 + eps) * cur.eta;
    let original_rhs = if first {
        let lead = std::f64::consts::FRAC_1_SQRT_2 / (next.lhat * next.stab);
        lead * ((1.0 + (1.0 - first_lhs).sqrt()) / (2.0 * next.ctilde) - 2.0 * next.eta) - next.eta
    } else {
        f64::NAN
    };
    let original = original_lhs < original_rhs;
    let mut reasons = Vec::new();
    if !first {
        reasons.push(format!("8 C~_(n+1) eta_(n+1) = {first_lhs:.6e} is not < 1"));
    }
    if !second {
        reasons.push(format!(
            "(3+eps) eta_n + eta_(n+1) = {second_lhs:.6e} exceeds 2^(-5/2) (L^ C C~)^(-1) = {second_rhs:.6e}"
        ));
    }
    LevelTransition { first_lhs, first, second_lhs, second_rhs, second, original_lhs, original_rhs, original, reasons }
}

/// The frequency-explicit refinement conditions for `N_n → N_{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaConditions {
    pub n_cur: usize,
    pub n_next: usize,
    /// `φ(N_{n+1}) - 8⁻¹ω⁻²(L₀L̂₀)⁻¹ e^{-2K(1+ω²B₂)N_{n+1}^a}`, must be < 0.
    pub first_lhs: f64,
    pub first: bool,
    /// `(3+ε)φ(N_n) + φ(N_{n+1}) - 2^{-5/2}ω⁻²(L̂₀²L₀)⁻¹ e^{-3K(1+ω²B₂)N_{n+1}^a}`,
    /// must be <= 0.
    pub second_lhs: f64,
    pub second: bool,
    pub level: LevelTransition,
    pub reasons: Vec<String>,
}

impl OmegaConditions {
    pub fn passes(&self) -> bool {
        self.first && self.second
    }

    pub fn implication_holds(&self) -> bool {
        (!self.passes() || self.level.passes()) && self.level.implication_holds()
    }
}

fn log_or_neg_inf(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `8⁻¹ω⁻²(L₀L̂₀)⁻¹ e^{-2K(1+ω²B₂)N^a}`
fn om1_threshold(b: &ConstantsBundle, big_n: f64) -> f64 {
    (-2.0 * b.stability_exponent(big_n) - 8f64.ln() - b.omega2.ln() - log_or_neg_inf(b.l0) - log_or_neg_inf(b.lhat0)).exp()
}

/// `2^{-5/2}ω⁻²(L̂₀²L₀)⁻¹ e^{-3K(1+ω²B₂)N^a}`
fn om2_threshold(b: &ConstantsBundle, big_n: f64) -> f64 {
    (-3.0 * b.stability_exponent(big_n) - 2.5 * 2f64.ln() - b.omega2.ln()
        - 2.0 * log_or_neg_inf(b.lhat0)
        - log_or_neg_inf(b.l0))
    .exp()
}

pub fn check_omega_conditions(bundle: &ConstantsBundle, n_cur: usize, n_next: usize) -> Result<OmegaConditions> {
    let phi = |n: usize| bundle.phi.phi(n as f64);
    let first_lhs = phi(n_next) - om1_threshold(bundle, n_next as f64);
    let second_lhs = (3.0 + bundle.eps) * phi(n_cur) + phi(n_next) - om2_threshold(bundle, n_next as f64);
    let first = first_lhs < 0.0;
    let second = second_lhs <= 0.0;
    let level = check_level_transition(&derive_level(bundle, n_cur)?, &derive_level(bundle, n_next)?, bundle.eps);
    let mut reasons = Vec::new();
    if !first {
        reasons.push(format!("N {n_cur} -> {n_next}: first frequency condition {first_lhs:.6e} is not < 0"));
    }
    if !second {
        reasons.push(format!("N {n_cur} -> {n_next}: second frequency condition {second_lhs:.6e} is not <= 0"));
    }
    Ok(OmegaConditions { n_cur, n_next, first_lhs, first, second_lhs, second, level, reasons })
}

/// Left side of the `N_max` equation,
/// `(4+ε)φ(N) - 2^{-5/2}ω⁻²(L̂₀²L₀)⁻¹ e^{-3K(1+ω²B₂)N^a}`.
pub fn n_max_residual(bundle: &ConstantsBundle, big_n: f64) -> f64 {
    (4.0 + bundle.eps) * bundle.phi.phi(big_n) - om2_threshold(bundle, big_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NMax {
    /// Refinement stops at `n = ⌊root⌋`.
    Finite { n: u64, root: f64 },
    /// The condition holds for every scanned `N` up to the cap.
    Unbounded,
    /// No point of the scan satisfies the condition.
    Indeterminate,
}

pub const N_MAX_CAP: f64 = 1e9;

/// Solves the `N_max` equation by a logarithmic scan followed by bisection.
pub fn solve_n_max(bundle: &ConstantsBundle, cap: f64) -> Result<NMax> {
    bundle.phi.validate()?;
    if bundle.phi == CompressionModel::Zero {
        return Ok(NMax::Unbounded);
    }
    let f = |n: f64| n_max_residual(bundle, n);
    let steps = 4000usize;
    let grid: Vec<f64> = (0..=steps).map(|k| cap.powf(k as f64 / steps as f64)).collect();
    let Some(neg) = grid.iter().position(|&n| f(n) <= 0.0) else {
        return Ok(NMax::Indeterminate);
    };
    let Some(pos) = grid[neg..].iter().position(|&n| f(n) > 0.0).map(|k| k + neg) else {
        return Ok(NMax::Unbounded);
    };
    let (mut lo, mut hi) = (grid[pos - 1], grid[pos]);
    while hi - lo > 1e-9 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(NMax::Finite { n: lo.floor() as u64, root: lo })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub omega2: f64,
    pub rho: Option<f64>,
    /// `L₀L̂₀ω² e^{2K(1+ω²B₂)N^a}`, the bound on `L C² L̂`.
    pub denominator_bound: Option<f64>,
    /// `½ (4 · denominator_bound)⁻²`
    pub rho_lower_bound: Option<f64>,
    pub note: Option<String>,
}

/// Convergence radius at level `N` across a grid of squared frequencies.
pub fn rho_vs_omega(bundle: &ConstantsBundle, big_n: usize, omega_grid: &[f64]) -> Vec<RhoRow> {
    omega_grid
        .iter()
        .map(|&w2| {
            let b = bundle.with_omega2(w2);
            let skip = |note: String| RhoRow { omega2: w2, rho: None, denominator_bound: None, rho_lower_bound: None, note: Some(note) };
            if let Err(e) = spectrum_guard(w2, b.b1, b.b2) {
                return skip(e.to_string());
            }
            let lc = match derive_level(&b, big_n) {
                Ok(lc) => lc,
                Err(e) => return skip(e.to_string()),
            };
            let bound = b.l0 * b.lhat0 * w2 * (2.0 * b.stability_exponent(big_n as f64)).exp();
            let lower = 0.5 / (16.0 * bound * bound);
            match lc.rho {
                Some(rho) => RhoRow { omega2: w2, rho: Some(rho), denominator_bound: Some(bound), rho_lower_bound: Some(lower), note: None },
                None => RhoRow {
                    denominator_bound: Some(bound),
                    ..skip(format!("8 C~ eta = {:.6e} is not < 1", 8.0 * lc.ctilde * lc.eta))
                },
            }
        })
        .collect()
}

/// Halves `ω²` from `start` until `ρ ≥ target` or `ω²` drops below `floor`.
pub fn lower_frequency_until(
    bundle: &ConstantsBundle,
    big_n: usize,
    start: f64,
    target: f64,
    floor: f64,
) -> (Vec<RhoRow>, Option<RhoRow>) {
    let mut rows = Vec::new();
    let mut w2 = start;
    while w2 >= floor {
        let row = rho_vs_omega(bundle, big_n, &[w2]).pop().expect("one row");
        let hit = row.rho.is_some_and(|r| r >= target);
        rows.push(row.clone());
        if hit {
            return (rows, Some(row));
        }
        w2 *= 0.5;
    }
    (rows, None)
}

/// Sampling plan for fitting `L̂₀`, `L₀` and `K` numerically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSpec {
    pub m: usize,
    pub omega2: f64,
    pub b1: f64,
    pub b2: f64,
    /// Coefficient at which `‖DF‖` is probed.
    pub background: f64,
    pub big_ns: Vec<usize>,
    /// Pairs drawn for `L₀` and per `N` for the stability ratios.
    pub samples: usize,
    pub seed: u64,
    pub eps: f64,
    pub phi: CompressionModel,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    /// `(N, ‖DF‖ / ω²)` per partition size.
    pub lhat0_samples: Vec<(usize, f64)>,
    /// `(N, probe / (ω⁴ ‖c₁ - c₂‖))` per sampled pair.
    pub l0_samples: Vec<(usize, f64)>,
    pub stability: StabilityTable,
    /// `log(max ratio · ω²) - K̂ (1 + ω²B₂) N^a` per `N`; all `≤ 0`.
    pub k_residuals: Vec<(usize, f64)>,
}

/// Analytic mode: the bundle is taken verbatim once it validates.
pub fn calibrate_analytic(bundle: &ConstantsBundle) -> Result<ConstantsBundle> {
    bundle.validate()?;
    Ok(ConstantsBundle { calibration: Calibration::Analytic, ..bundle.clone() })
}

/// Empirical mode: `L̂₀` from indicator probes of `DF`, `L₀` from the
/// derivative-difference probe on random pairs, and `K` as the smallest
/// exponent bounding every sampled stability ratio.
pub fn calibrate_empirical(spec: &EmpiricalSpec) -> Result<(ConstantsBundle, CalibrationReport)> {
    if spec.samples < MIN_CALIBRATION_SAMPLES {
        return Err(Error::Calibration(format!(
            "{} samples requested, at least {MIN_CALIBRATION_SAMPLES} pairs are needed",
            spec.samples
        )));
    }
    if spec.big_ns.is_empty() {
        return Err(Error::Calibration("no partition sizes to sample".into()));
    }
    let bounds = Bounds::new(spec.b1, spec.b2)?;
    spectrum_guard(spec.omega2, spec.b1, spec.b2)?;
    let grid = Arc::new(Grid::new(spec.m)?);
    let model = ForwardModel::new(grid.clone(), spec.omega2);
    let w2 = spec.omega2;

    let mut partitions = Vec::new();
    for &n in &spec.big_ns {
        let k = (n as f64).sqrt().round() as usize;
        if k * k != n {
            return Err(Error::Config(format!("N = {n} is not a perfect square")));
        }
        partitions.push(Arc::new(make_uniform_partition(&grid, k)?));
    }

    let mut lhat0_samples = Vec::new();
    for p in &partitions {
        let c = PwcField::constant(p.clone(), spec.background, bounds);
        lhat0_samples.push((p.len(), df_norm_probe(&model, &c, NormKind::HilbertSchmidt)? / w2));
    }

    let mut l0_samples = Vec::new();
    for i in 0..spec.samples {
        let p = &partitions[i % partitions.len()];
        let mut rng = trial_rng(spec.seed, 0, i as u64);
        let c1: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(bounds.lo..=bounds.hi)).collect();
        let step = 0.1 * (bounds.hi - bounds.lo);
        let c2: Vec<f64> = c1.iter().map(|&c| (c + rng.gen_range(-step..=step)).clamp(bounds.lo, bounds.hi)).collect();
        let f1 = PwcField::new(p.clone(), c1, bounds)?;
        let f2 = PwcField::new(p.clone(), c2, bounds)?;
        let d = l2_dist(&f1, &f2)?;
        if d == 0.0 {
            continue;
        }
        l0_samples.push((p.len(), lipschitz_df_probe(&model, &f1, &f2)? / (w2 * w2 * d)));
    }

    let stability = estimate_lipschitz_constant(&model, bounds, &spec.big_ns, spec.samples, spec.seed, spec.exponent)?;
    let lhat0 = lhat0_samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let l0 = l0_samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let big_k = stability.k_hat;
    for (name, v) in [("lhat0", lhat0), ("l0", l0), ("K", big_k)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Calibration(format!("fitted {name} = {v} is not finite and positive")));
        }
    }
    let k_residuals = stability
        .rows
        .iter()
        .map(|r| {
            let x = (1.0 + w2 * spec.b2) * (r.big_n as f64).powf(spec.exponent);
            (r.big_n, (r.max_ratio * w2).ln() - big_k * x)
        })
        .collect();
    let bundle = ConstantsBundle {
        lhat0,
        l0,
        big_k,
        b1: spec.b1,
        b2: spec.b2,
        omega2: spec.omega2,
        eps: spec.eps,
        phi: spec.phi.clone(),
        exponent: spec.exponent,
        calibration: Calibration::Empirical,
    };
    bundle.validate()?;
    Ok((bundle, CalibrationReport { lhat0_samples, l0_samples, stability, k_residuals }))
}
