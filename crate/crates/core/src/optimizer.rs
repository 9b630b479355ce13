//! Projected steepest descent at one level and the coarse-to-fine driver.
//!
//! Each step uses the explicit step length `μ_k = t_k⁻² u_k r_k` with
//!
//! ```text
//! u_k = -C̃ r_k² + (1 - 2C̃η) r_k - η - C̃η²
//! ```
//!
//! and no line search. `v_k` and `w_k` are logged for diagnostics only.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::constants::{check_omega_conditions, derive_level, ConstantsBundle, LevelConstants};
use crate::derivative::{descent_direction, Residual, SolutionBank};
use crate::domain::{bregman, clamp_to_bounds, l2_dist, l2_norm, project_to_admissible, NodalField, Partition, PwcField};
use crate::error::{Error, Result};
use crate::forward::{DtnMatrix, ForwardModel};

pub const DEFAULT_MAX_ITER: usize = 500;

/// `(u_k, v_k, w_k, μ_k)` for residual norm `r`, direction norm `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepScalars {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub mu: f64,
}

pub fn step_scalars(ctilde: f64, lip: f64, eta: f64, r: f64, t: f64) -> StepScalars {
    let u = -ctilde * r * r + (1.0 - 2.0 * ctilde * eta) * r - eta - ctilde * eta * eta;
    if t == 0.0 {
        return StepScalars { u, v: 0.0, w: 0.0, mu: 0.0 };
    }
    let it2 = 1.0 / (t * t);
    let r2 = r * r;
    StepScalars {
        u,
        v: it2 * u * r2 * (r - eta) - 0.5 * it2 * u * u * r2,
        w: lip * it2 * u * r2,
        mu: it2 * u * r,
    }
}

/// Iterate together with everything needed to take the next step.
#[derive(Debug, Clone)]
pub struct DescentState {
    pub k: usize,
    pub c: PwcField,
    pub dtn: DtnMatrix,
    pub residual: Residual,
    /// Unrestricted adjoint field `DF* R`.
    pub gradient: NodalField,
    /// `T_k`, the adjoint restricted to the level's partition.
    pub direction: PwcField,
    pub t: f64,
    pub scalars: StepScalars,
}

impl DescentState {
    pub fn new(model: &ForwardModel, c: PwcField, data: &DtnMatrix, lc: &LevelConstants, k: usize) -> Result<Self> {
        let (dtn, bank) = model.evaluate(&c)?;
        Self::from_parts(model, c, dtn, &bank, data, lc, k)
    }

    fn from_parts(
        model: &ForwardModel,
        c: PwcField,
        dtn: DtnMatrix,
        bank: &SolutionBank,
        data: &DtnMatrix,
        lc: &LevelConstants,
        k: usize,
    ) -> Result<Self> {
        let residual = Residual::new(&dtn, data)?;
        let (gradient, direction) = descent_direction(bank, &residual.matrix, model.weights(), c.partition())?;
        let t = l2_norm(&direction);
        let scalars = step_scalars(lc.ctilde, lc.lip, lc.eta, residual.norm, t);
        Ok(Self { k, c, dtn, residual, gradient, direction, t, scalars })
    }

    pub fn r(&self) -> f64 {
        self.residual.norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Residual at or below the discrepancy level.
    Discrepancy,
    /// `u_k ≤ 0` before the discrepancy level was reached.
    UNonpositive,
    /// Vanishing direction above the discrepancy level.
    Stationary,
    MaxIter,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Discrepancy => "discrepancy",
            Self::UNonpositive => "u_nonpositive",
            Self::Stationary => "stationary",
            Self::MaxIter => "max_iter",
        }
    }
}

pub enum Step {
    Advanced(Box<DescentState>),
    Stop(StopReason),
}

/// One projected steepest-descent step. Declines with a stop reason when
/// `u_k ≤ 0` or `t_k = 0`.
pub fn descent_step(model: &ForwardModel, state: &DescentState, lc: &LevelConstants, data: &DtnMatrix) -> Result<Step> {
    if !(state.scalars.u > 0.0) {
        return Ok(Step::Stop(StopReason::UNonpositive));
    }
    if state.t == 0.0 {
        return Ok(Step::Stop(StopReason::Stationary));
    }
    let trial = state.c.axpy(-state.scalars.mu, &state.direction)?;
    let next = clamp_to_bounds(&project_to_admissible(&trial, state.c.partition(), state.c.bounds())?);
    Ok(Step::Advanced(Box::new(DescentState::new(model, next, data, lc, state.k + 1)?)))
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub r: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub mu: f64,
    /// Bregman distance to the best approximation, when it is known.
    pub bregman: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSettings {
    pub max_iter: usize,
    pub eps: f64,
    /// Lower limit on the discrepancy level, guarding against `η = 0`.
    pub residual_floor: f64,
}

impl Default for LevelSettings {
    fn default() -> Self {
        Self { max_iter: DEFAULT_MAX_ITER, eps: 0.1, residual_floor: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRun {
    pub level: usize,
    pub big_n: usize,
    #[serde(skip)]
    pub partition: Arc<Partition>,
    pub constants: LevelConstants,
    pub threshold: f64,
    pub history: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Index of the last iterate.
    pub k_n: usize,
    #[serde(skip)]
    pub final_field: PwcField,
    pub final_residual: f64,
    /// `Δ₂(c₀, z†) < ρ`, known only with a reference `z†`.
    pub start_in_ball: Option<bool>,
    pub warnings: Vec<String>,
}

impl LevelRun {
    pub fn residuals(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.r).collect()
    }

    /// `r_{k+1} < r_k` along the whole level.
    pub fn strictly_decreasing(&self) -> bool {
        self.history.windows(2).all(|w| w[1].r < w[0].r)
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Discrepancy
    }

    /// `k,r_k,t_k,u_k,mu_k,bregman_opt,v_k,w_k` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,r_k,t_k,u_k,mu_k,bregman_opt,v_k,w_k\n");
        for h in &self.history {
            let b = h.bregman.map(|b| format!("{b:?}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:?},{:?},{:?},{:?},{},{:?},{:?}", h.k, h.r, h.t, h.u, h.mu, b, h.v, h.w);
        }
        s
    }
}

/// Runs projected descent on `start`'s partition until the residual reaches
/// `max((3 + ε)η, floor)`, `u_k ≤ 0`, or `max_iter` steps have been taken.
pub fn run_level(
    model: &ForwardModel,
    start: PwcField,
    lc: &LevelConstants,
    data: &DtnMatrix,
    settings: &LevelSettings,
    reference: Option<&PwcField>,
    level: usize,
) -> Result<LevelRun> {
    if let Some(z) = reference {
        if !z.partition().same_as(start.partition()) {
            return Err(Error::Mismatch("reference iterate lives on another partition".into()));
        }
    }
    start.check_admissible()?;
    let threshold = ((3.0 + settings.eps) * lc.eta).max(settings.residual_floor);
    let audit = |c: &PwcField| reference.map(|z| bregman(c, z)).transpose();
    let start_in_ball = match (audit(&start)?, lc.rho) {
        (Some(d), Some(rho)) => Some(d < rho),
        _ => None,
    };
    let partition = start.partition().clone();
    let mut state = DescentState::new(model, start, data, lc, 0)?;
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let stop = loop {
        history.push(IterationRecord {
            k: state.k,
            r: state.r(),
            t: state.t,
            u: state.scalars.u,
            v: state.scalars.v,
            w: state.scalars.w,
            mu: state.scalars.mu,
            bregman: audit(&state.c)?,
        });
        if state.r() <= threshold {
            break StopReason::Discrepancy;
        }
        if state.k >= settings.max_iter {
            break StopReason::MaxIter;
        }
        match descent_step(model, &state, lc, data)? {
            Step::Advanced(next) => state = *next,
            Step::Stop(reason) => {
                warnings.push(match reason {
                    StopReason::UNonpositive => format!(
                        "u_k = {:e} <= 0 at k = {} with r_k = {:e} above the discrepancy level {:e}",
                        state.scalars.u,
                        state.k,
                        state.r(),
                        threshold
                    ),
                    _ => format!("vanishing direction at k = {} with r_k = {:e}", state.k, state.r()),
                });
                break reason;
            }
        }
    };
    Ok(LevelRun {
        level,
        big_n: partition.len(),
        partition,
        constants: lc.clone(),
        threshold,
        history,
        stop,
        k_n: state.k,
        final_residual: state.r(),
        final_field: state.c,
        start_in_ball,
        warnings,
    })
}

/// Where a level's `η` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum EtaSource {
    /// `L̂₀ω² φ(N)` from the bundle.
    Model,
    Fixed(f64),
    /// `‖F(P_N c†) - y‖`, which needs the true coefficient.
    ProjectedTruth,
}

#[derive(Debug, Clone)]
pub struct MultilevelOptions {
    pub settings: LevelSettings,
    /// One entry per level; the last entry is reused for any further levels.
    pub eta: Vec<EtaSource>,
    /// Total iteration budget shared by the levels in order.
    pub budget: Option<usize>,
    /// Downgrade failed refinement conditions to warnings.
    pub override_level_check: bool,
    /// Synthetic truth, enabling the Bregman audit and the error bound.
    pub truth: Option<PwcField>,
}

impl Default for MultilevelOptions {
    fn default() -> Self {
        Self {
            settings: LevelSettings::default(),
            eta: vec![EtaSource::Model],
            budget: None,
            override_level_check: false,
            truth: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionReport {
    pub n_cur: usize,
    pub n_next: usize,
    pub frequency_conditions: bool,
    pub level_conditions: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultilevelRun {
    pub levels: Vec<LevelRun>,
    pub transitions: Vec<TransitionReport>,
    /// `(4 + ε) C_n η_n` for the last level.
    pub data_error_bound: f64,
    /// `‖P_N c† - c†‖` for the last level, with a known truth.
    pub approximation_error: Option<f64>,
    /// `‖c - c†‖ / ‖c†‖` at the end, with a known truth.
    pub relative_error: Option<f64>,
    pub warnings: Vec<String>,
}

impl MultilevelRun {
    pub fn final_field(&self) -> &PwcField {
        &self.levels.last().expect("at least one level").final_field
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.k_n).sum()
    }

    pub fn error_bound(&self) -> Option<f64> {
        self.approximation_error.map(|a| self.data_error_bound + a)
    }
}

/// Coarse-to-fine descent over `schedule`, warm-starting every level with the
/// previous level's final iterate.
pub fn run_multilevel(
    model: &ForwardModel,
    schedule: &[Arc<Partition>],
    bundle: &ConstantsBundle,
    data: &DtnMatrix,
    start: &PwcField,
    opts: &MultilevelOptions,
) -> Result<MultilevelRun> {
    if schedule.is_empty() {
        return Err(Error::Config("empty level schedule".into()));
    }
    if (bundle.omega2 - model.omega2()).abs() > 1e-12 * model.omega2() {
        return Err(Error::Config(format!(
            "bundle omega^2 = {} differs from the forward model's {}",
            bundle.omega2,
            model.omega2()
        )));
    }
    let bounds = bundle.bounds()?;
    let mut warnings = Vec::new();
    let mut transitions = Vec::new();
    for w in schedule.windows(2) {
        let (a, b) = (w[0].len(), w[1].len());
        let oc = check_omega_conditions(bundle, a, b)?;
        let mut reasons = oc.reasons.clone();
        if !oc.passes() {
            if !opts.override_level_check {
                return Err(Error::TransitionRefused(reasons.join("; ")));
            }
            reasons.extend(oc.level.reasons.iter().cloned());
            warnings.push(format!("refinement {a} -> {b} proceeds under override: {}", reasons.join("; ")));
        }
        transitions.push(TransitionReport {
            n_cur: a,
            n_next: b,
            frequency_conditions: oc.passes(),
            level_conditions: oc.level.passes(),
            reasons,
        });
    }

    let mut levels: Vec<LevelRun> = Vec::new();
    let mut current = start.clone();
    let mut remaining = opts.budget;
    for (n, p) in schedule.iter().enumerate() {
        let source = *opts.eta.get(n).or(opts.eta.last()).unwrap_or(&EtaSource::Model);
        let reference = opts.truth.as_ref().map(|t| project_to_admissible(t, p, bounds)).transpose()?;
        let mut lc = derive_level(bundle, p.len())?;
        match source {
            EtaSource::Model => {}
            EtaSource::Fixed(eta) => lc = lc.with_eta(eta),
            EtaSource::ProjectedTruth => {
                let z = reference
                    .as_ref()
                    .ok_or_else(|| Error::Config("projected-truth eta needs a known truth".into()))?;
                let r = Residual::new(&model.dtn(z)?, data)?;
                lc = lc.with_eta(r.norm);
            }
        }
        let warm = clamp_to_bounds(&current.embed(p)?.with_bounds(bounds));
        let mut settings = opts.settings;
        if let Some(rem) = remaining {
            settings.max_iter = settings.max_iter.min(rem);
        }
        let run = run_level(model, warm, &lc, data, &settings, reference.as_ref(), n)?;
        if let Some(rem) = remaining.as_mut() {
            *rem -= run.k_n;
        }
        for w in &run.warnings {
            warnings.push(format!("level {n} (N = {}): {w}", p.len()));
        }
        if run.start_in_ball == Some(false) {
            warnings.push(format!("level {n}: starting iterate lies outside the convergence ball"));
        }
        current = run.final_field.clone();
        levels.push(run);
    }

    let last = levels.last().expect("nonempty schedule");
    let data_error_bound = (4.0 + bundle.eps) * last.constants.stab * last.constants.eta;
    let (approximation_error, relative_error) = match &opts.truth {
        Some(t) => {
            let pt = project_to_admissible(t, &last.partition, bounds)?;
            (Some(l2_dist(&pt, t)?), Some(l2_dist(&last.final_field, t)? / l2_norm(t)))
        }
        None => (None, None),
    };
    Ok(MultilevelRun { levels, transitions, data_error_bound, approximation_error, relative_error, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{Calibration, CompressionModel};
    use crate::domain::{make_uniform_partition, Bounds, Grid};

    #[test]
    fn step_scalar_examples() {
        let s = step_scalars(1.0, 1.0, 0.0, 0.5, 2.0);
        assert_eq!(s.u, 0.25);
        assert_eq!(s.mu, 0.03125);
        assert_eq!(s.v, 0.0078125 - 0.001953125);
        assert_eq!(s.v, 0.005859375);
        assert_eq!(s.w, 0.25 * 0.25 * 0.25);
        // r = η gives u = -4 C̃ η²
        let eta = 0.1;
        let s = step_scalars(2.0, 1.0, eta, eta, 1.0);
        assert!((s.u + 4.0 * 2.0 * eta * eta).abs() < 1e-16);
        assert!(s.u <= 0.0);
    }

    fn setup(m: usize) -> (ForwardModel, Arc<Partition>, Arc<Partition>, PwcField, DtnMatrix, ConstantsBundle) {
        let g = Arc::new(Grid::new(m).unwrap());
        let coarse = Arc::new(make_uniform_partition(&g, 1).unwrap());
        let fine = Arc::new(make_uniform_partition(&g, 2).unwrap());
        let b = Bounds::new(1.0, 2.0).unwrap();
        let truth = PwcField::new(fine.clone(), vec![1.2, 1.8, 1.5, 1.3], b).unwrap();
        let model = ForwardModel::new(g, 5.0);
        let data = model.dtn(&truth).unwrap();
        let bundle = ConstantsBundle {
            lhat0: 1e-3,
            l0: 1e-3,
            big_k: 1e-3,
            b1: 1.0,
            b2: 2.0,
            omega2: 5.0,
            eps: 0.1,
            phi: CompressionModel::Zero,
            exponent: 4.0 / 7.0,
            calibration: Calibration::Analytic,
        };
        (model, coarse, fine, truth, data, bundle)
    }

    #[test]
    fn exact_start_stops_immediately() {
        let (model, _, fine, truth, data, bundle) = setup(9);
        let lc = derive_level(&bundle, 4).unwrap();
        let settings = LevelSettings { residual_floor: 1e-12, ..Default::default() };
        let run = run_level(&model, truth.clone(), &lc, &data, &settings, Some(&truth), 0).unwrap();
        assert_eq!(run.stop, StopReason::Discrepancy);
        assert_eq!(run.k_n, 0);
        assert!(run.partition.same_as(&fine));
    }

    #[test]
    fn zero_iterations_reports_max_iter() {
        let (model, _, fine, _, data, bundle) = setup(9);
        let lc = derive_level(&bundle, 4).unwrap();
        let start = PwcField::constant(fine, 1.5, Bounds::new(1.0, 2.0).unwrap());
        let settings = LevelSettings { max_iter: 0, ..Default::default() };
        let run = run_level(&model, start, &lc, &data, &settings, None, 0).unwrap();
        assert_eq!(run.stop, StopReason::MaxIter);
        assert_eq!(run.history.len(), 1);
    }

    #[test]
    fn descent_reduces_error_and_stays_admissible() {
        let (model, _, fine, truth, data, bundle) = setup(9);
        let lc = derive_level(&bundle, 4).unwrap().with_eta(0.0);
        let start = PwcField::constant(fine, 1.5, Bounds::new(1.0, 2.0).unwrap());
        let settings = LevelSettings { max_iter: 30, residual_floor: 1e-10, ..Default::default() };
        let run = run_level(&model, start, &lc, &data, &settings, Some(&truth), 0).unwrap();
        let r = run.residuals();
        assert!(r[r.len() - 1] < 0.1 * r[0], "{r:?}");
        assert!(run.final_field.is_admissible());
        let breg: Vec<f64> = run.history.iter().map(|h| h.bregman.unwrap()).collect();
        assert!(breg.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{breg:?}");
        for h in &run.history[..run.history.len() - 1] {
            assert!(h.u > 0.0 && h.mu > 0.0);
        }
    }

    #[test]
    fn multilevel_single_level_matches_run_level() {
        let (model, _, fine, truth, data, bundle) = setup(9);
        let start = PwcField::constant(fine.clone(), 1.5, Bounds::new(1.0, 2.0).unwrap());
        let settings = LevelSettings { max_iter: 5, residual_floor: 1e-10, ..Default::default() };
        let opts = MultilevelOptions { settings, eta: vec![EtaSource::Fixed(0.0)], truth: Some(truth.clone()), ..Default::default() };
        let ml = run_multilevel(&model, std::slice::from_ref(&fine), &bundle, &data, &start, &opts).unwrap();
        let lc = derive_level(&bundle, 4).unwrap().with_eta(0.0);
        let z = project_to_admissible(&truth, &fine, truth.bounds()).unwrap();
        let single = run_level(&model, start, &lc, &data, &settings, Some(&z), 0).unwrap();
        assert_eq!(ml.levels[0].residuals(), single.residuals());
        assert_eq!(ml.levels[0].to_csv(), single.to_csv());
    }

    #[test]
    fn failing_transition_is_refused_unless_overridden() {
        let (model, coarse, fine, truth, data, mut bundle) = setup(9);
        bundle.phi = CompressionModel::PowerLaw { c_phi: 1e6, beta: 1.0 };
        let start = PwcField::constant(coarse.clone(), 1.5, Bounds::new(1.0, 2.0).unwrap());
        let mut opts = MultilevelOptions {
            settings: LevelSettings { max_iter: 2, ..Default::default() },
            eta: vec![EtaSource::ProjectedTruth, EtaSource::Fixed(0.0)],
            truth: Some(truth),
            ..Default::default()
        };
        let sched = [coarse, fine];
        let err = run_multilevel(&model, &sched, &bundle, &data, &start, &opts).unwrap_err();
        assert!(matches!(err, Error::TransitionRefused(_)), "{err}");
        opts.override_level_check = true;
        let run = run_multilevel(&model, &sched, &bundle, &data, &start, &opts).unwrap();
        assert_eq!(run.levels.len(), 2);
        assert!(!run.warnings.is_empty());
        assert!(!run.transitions[0].frequency_conditions);
    }

    #[test]
    fn budget_is_shared_across_levels() {
        let (model, coarse, fine, truth, data, bundle) = setup(9);
        let start = PwcField::constant(coarse.clone(), 1.5, Bounds::new(1.0, 2.0).unwrap());
        let opts = MultilevelOptions {
            settings: LevelSettings { max_iter: 100, residual_floor: 1e-14, ..Default::default() },
            eta: vec![EtaSource::Fixed(0.0)],
            budget: Some(7),
            truth: Some(truth),
            ..Default::default()
        };
        let run = run_multilevel(&model, &[coarse, fine], &bundle, &data, &start, &opts).unwrap();
        assert_eq!(run.total_iterations(), 7);
    }

    #[test]
    fn csv_header_and_rows() {
        let (model, _, fine, _, data, bundle) = setup(9);
        let lc = derive_level(&bundle, 4).unwrap();
        let start = PwcField::constant(fine, 1.5, Bounds::new(1.0, 2.0).unwrap());
        let settings = LevelSettings { max_iter: 2, ..Default::default() };
        let run = run_level(&model, start, &lc, &data, &settings, None, 0).unwrap();
        let csv = run.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,r_k,t_k,u_k,mu_k,bregman_opt,v_k,w_k");
        assert_eq!(lines.len(), 1 + run.history.len());
        assert!(lines[1].starts_with("0,"));
        assert_eq!(lines[1].split(',').nth(5), Some(""));
    }
}
