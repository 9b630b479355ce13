//! TOML experiment configuration and its validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use helmholtz_dtn::constants::{CompressionModel, ConstantsBundle, Calibration, EmpiricalSpec, DEFAULT_EXPONENT};
use helmholtz_dtn::domain::{make_uniform_partition, Bounds, Grid, Partition, PwcField};
use helmholtz_dtn::forward::{spectrum_guard, SpectrumWindow};
use helmholtz_dtn::optimizer::{EtaSource, LevelSettings, DEFAULT_MAX_ITER};
use helmholtz_dtn::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    #[serde(default)]
    pub truth: Option<TruthSection>,
    #[serde(default)]
    pub schedule: Option<ScheduleSection>,
    #[serde(default)]
    pub bundle: Option<BundleSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub constants: ConstantsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub omega2: f64,
    pub b1: f64,
    pub b2: f64,
}

/// Either `cells_per_side` with `coeffs`, or a `pwc` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    #[serde(default)]
    pub cells_per_side: Option<usize>,
    #[serde(default)]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default)]
    pub file: Option<PathBuf>,
}

/// Level sizes `N_n`, or a base size with refinement factors per side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default)]
    pub levels: Option<Vec<usize>>,
    #[serde(default)]
    pub base: Option<usize>,
    #[serde(default)]
    pub factors: Option<Vec<usize>>,
    /// Constant starting coefficient; defaults to the midpoint of the bounds.
    #[serde(default)]
    pub start: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleMode {
    Analytic,
    Calibrate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSection {
    pub mode: BundleMode,
    #[serde(default)]
    pub lhat0: Option<f64>,
    #[serde(default)]
    pub l0: Option<f64>,
    #[serde(default)]
    pub big_k: Option<f64>,
    #[serde(default = "default_phi")]
    pub phi: CompressionModel,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    /// Calibration: sampled partition sizes.
    #[serde(default = "default_calibration_ns")]
    pub big_ns: Vec<usize>,
    /// Calibration: pairs per partition size.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Calibration: coefficient at which `‖DF‖` is probed.
    #[serde(default)]
    pub background: Option<f64>,
}

fn default_phi() -> CompressionModel {
    CompressionModel::Zero
}

fn default_exponent() -> f64 {
    DEFAULT_EXPONENT
}

fn default_calibration_ns() -> Vec<usize> {
    vec![1, 4, 16]
}

fn default_samples() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Total iterations shared across levels.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub residual_floor: f64,
    /// One entry per level, the last one repeating.
    #[serde(default)]
    pub eta: Vec<EtaSource>,
    /// Existing `dtn` file; synthesized from the truth when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Relative Gaussian noise added to synthesized data.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub override_level_check: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_eps() -> f64 {
    0.1
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            eps: default_eps(),
            max_iter: default_max_iter(),
            budget: None,
            residual_floor: 0.0,
            eta: Vec::new(),
            data: None,
            noise: 0.0,
            override_level_check: false,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub convergence_ms: Vec<usize>,
    pub alessandrini_m: usize,
    pub alessandrini_trials: usize,
    pub alessandrini_fields: usize,
    pub gradient_directions: usize,
    pub adjoint_pairs: usize,
    pub frequency_grid: Vec<f64>,
    pub stability_ns: Vec<usize>,
    pub stability_samples: usize,
    pub stability_omega2: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            convergence_ms: vec![17, 33, 65],
            alessandrini_m: 33,
            alessandrini_trials: 50,
            alessandrini_fields: 5,
            gradient_directions: 10,
            adjoint_pairs: 20,
            frequency_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
            stability_ns: vec![1, 4, 16, 64],
            stability_samples: 20,
            stability_omega2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSection {
    /// Level at which the `ρ` table is evaluated.
    pub big_n: usize,
    pub omega_grid: Vec<f64>,
    /// Target radius for the frequency-lowering sweep.
    pub target_rho: f64,
    pub omega_floor: f64,
    pub n_max_cap: f64,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        Self {
            big_n: 4,
            omega_grid: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            target_rho: 1e3,
            omega_floor: 1e-6,
            n_max_cap: helmholtz_dtn::constants::N_MAX_CAP,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&io::read_text(path)?)?;
        // relative paths inside the file are taken from the file's directory
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = cfg.truth.as_mut() {
            if let Some(f) = t.file.as_mut() {
                if f.is_relative() {
                    *f = dir.join(&*f);
                }
            }
        }
        if let Some(d) = cfg.run.data.as_mut() {
            if d.is_relative() {
                *d = dir.join(&*d);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.physics.b1, self.physics.b2).map_err(|e| Error::Config(format!("physics.b1/b2: {e}")))
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Grid::new(self.grid.m).map(Arc::new).map_err(|e| Error::Config(format!("grid.m: {e}")))
    }

    /// Checks everything that does not need a solve, starting with the
    /// spectrum guard so that a forbidden frequency reports its band.
    pub fn validate(&self) -> Result<SpectrumWindow> {
        self.grid()?;
        self.bounds()?;
        let window = spectrum_guard(self.physics.omega2, self.physics.b1, self.physics.b2)?;
        let r = &self.run;
        if !(r.eps > 0.0 && r.eps.is_finite()) {
            return Err(Error::Config(format!("run.eps must be positive, got {}", r.eps)));
        }
        if !(r.noise >= 0.0 && r.noise.is_finite()) {
            return Err(Error::Config(format!("run.noise must be nonnegative, got {}", r.noise)));
        }
        if !(r.residual_floor >= 0.0) {
            return Err(Error::Config(format!("run.residual_floor must be nonnegative, got {}", r.residual_floor)));
        }
        for e in &r.eta {
            if let EtaSource::Fixed(v) = e {
                if !(*v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("run.eta: fixed value must be nonnegative, got {v}")));
                }
            }
        }
        if let Some(b) = &self.bundle {
            b.phi.validate().map_err(|e| Error::Config(format!("bundle.phi: {e}")))?;
            if b.mode == BundleMode::Analytic {
                self.analytic_bundle()?;
            }
        }
        Ok(window)
    }

    /// Level partitions, coarse to fine. An empty schedule is a usage error.
    pub fn schedule(&self, grid: &Arc<Grid>) -> Result<Vec<Arc<Partition>>> {
        let s = self.schedule.as_ref().ok_or_else(|| Error::Config("missing [schedule] section".into()))?;
        let sides: Vec<usize> = match (&s.levels, s.base, &s.factors) {
            (Some(levels), None, None) => levels
                .iter()
                .map(|&n| perfect_root(n).ok_or_else(|| Error::Config(format!("schedule.levels: N = {n} is not a perfect square"))))
                .collect::<Result<_>>()?,
            (None, Some(base), Some(factors)) => {
                let mut k = perfect_root(base)
                    .ok_or_else(|| Error::Config(format!("schedule.base: N = {base} is not a perfect square")))?;
                let mut v = vec![k];
                for &f in factors {
                    if f < 2 {
                        return Err(Error::Config(format!("schedule.factors: factor {f} must be at least 2")));
                    }
                    k *= f;
                    v.push(k);
                }
                v
            }
            _ => {
                return Err(Error::Config("schedule needs either `levels` or both `base` and `factors`".into()));
            }
        };
        if sides.is_empty() {
            return Err(Error::Config("empty schedule".into()));
        }
        let mut parts: Vec<Arc<Partition>> = Vec::new();
        for (n, &k) in sides.iter().enumerate() {
            let p = match parts.last() {
                None => make_uniform_partition(grid, k),
                Some(prev) => {
                    let kp = prev.cells_per_side().expect("uniform");
                    if k <= kp || k % kp != 0 {
                        return Err(Error::Config(format!(
                            "schedule: {k} cells per side does not refine {kp} (level {n})"
                        )));
                    }
                    helmholtz_dtn::domain::refine_partition(prev, k / kp)
                }
            }
            .map_err(|e| Error::Config(format!("schedule level {n}: {e}")))?;
            parts.push(Arc::new(p));
        }
        Ok(parts)
    }

    pub fn truth(&self, grid: &Arc<Grid>) -> Result<PwcField> {
        let t = self.truth.as_ref().ok_or_else(|| Error::Config("missing [truth] section".into()))?;
        let bounds = self.bounds()?;
        let coeffs = match (&t.file, &t.coeffs) {
            (Some(f), None) => io::parse_pwc(&io::read_text(f)?)?.1,
            (None, Some(c)) => c.clone(),
            _ => return Err(Error::Config("truth needs exactly one of `coeffs` and `file`".into())),
        };
        let k = match t.cells_per_side {
            Some(k) => k,
            None => perfect_root(coeffs.len())
                .ok_or_else(|| Error::Config(format!("truth: {} coefficients do not fill a square", coeffs.len())))?,
        };
        if k * k != coeffs.len() {
            return Err(Error::Config(format!("truth: {} coefficients for {k}x{k} cells", coeffs.len())));
        }
        let p = make_uniform_partition(grid, k).map_err(|e| Error::Config(format!("truth.cells_per_side: {e}")))?;
        PwcField::new(Arc::new(p), coeffs, bounds)
    }

    pub fn start(&self, first: &Arc<Partition>) -> Result<PwcField> {
        let bounds = self.bounds()?;
        let c = self.schedule.as_ref().and_then(|s| s.start).unwrap_or(0.5 * (bounds.lo + bounds.hi));
        let f = PwcField::constant(first.clone(), c, bounds);
        f.check_admissible()?;
        Ok(f)
    }

    pub fn level_settings(&self) -> LevelSettings {
        LevelSettings { max_iter: self.run.max_iter, eps: self.run.eps, residual_floor: self.run.residual_floor }
    }

    fn bundle_section(&self) -> Result<&BundleSection> {
        self.bundle.as_ref().ok_or_else(|| Error::Config("missing [bundle] section".into()))
    }

    pub fn analytic_bundle(&self) -> Result<ConstantsBundle> {
        let b = self.bundle_section()?;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("bundle.{name} is required in analytic mode")));
        let bundle = ConstantsBundle {
            lhat0: need(b.lhat0, "lhat0")?,
            l0: need(b.l0, "l0")?,
            big_k: need(b.big_k, "big_k")?,
            b1: self.physics.b1,
            b2: self.physics.b2,
            omega2: self.physics.omega2,
            eps: self.run.eps,
            phi: b.phi.clone(),
            exponent: b.exponent,
            calibration: Calibration::Analytic,
        };
        bundle.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("bundle: {msg}")),
            other => other,
        })?;
        Ok(bundle)
    }

    pub fn empirical_spec(&self) -> Result<EmpiricalSpec> {
        let b = self.bundle_section()?;
        Ok(EmpiricalSpec {
            m: self.grid.m,
            omega2: self.physics.omega2,
            b1: self.physics.b1,
            b2: self.physics.b2,
            background: b.background.unwrap_or(self.physics.b1),
            big_ns: b.big_ns.clone(),
            samples: b.samples,
            seed: self.run.seed,
            eps: self.run.eps,
            phi: b.phi.clone(),
            exponent: b.exponent,
        })
    }
}

fn perfect_root(n: usize) -> Option<usize> {
    let k = (n as f64).sqrt().round() as usize;
    (k > 0 && k * k == n).then_some(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
m = 17

[physics]
omega2 = 1.0
b1 = 1.0
b2 = 2.0

[truth]
coeffs = [1.5]

[schedule]
levels = [1, 4]
"#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        let g = cfg.grid().unwrap();
        assert_eq!(cfg.truth(&g).unwrap().coeffs(), &[1.5]);
        let s = cfg.schedule(&g).unwrap();
        assert_eq!(s.iter().map(|p| p.len()).collect::<Vec<_>>(), vec![1, 4]);
        assert_eq!(cfg.start(&s[0]).unwrap().coeffs(), &[1.5]);
        // the snapshot parses back to the same configuration
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn factor_schedule() {
        let text = MINIMAL.replace("levels = [1, 4]", "base = 1\nfactors = [2, 2]");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let s = cfg.schedule(&cfg.grid().unwrap()).unwrap();
        assert_eq!(s.iter().map(|p| p.len()).collect::<Vec<_>>(), vec![1, 4, 16]);
    }

    #[test]
    fn bad_schedules() {
        for bad in ["levels = []", "levels = [2]", "levels = [4, 1]", "levels = [4, 9]", "levels = [1, 1024]"] {
            let cfg = ExperimentConfig::parse(&MINIMAL.replace("levels = [1, 4]", bad)).unwrap();
            assert!(matches!(cfg.schedule(&cfg.grid().unwrap()), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn forbidden_band_is_reported() {
        let cfg = ExperimentConfig::parse(&MINIMAL.replace("omega2 = 1.0", "omega2 = 12.0")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Inadmissible { .. })));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse(&MINIMAL.replace("m = 17", "m = 17\nsize = 3")).is_err());
    }

    #[test]
    fn analytic_bundle_requires_constants() {
        let text = format!("{MINIMAL}\n[bundle]\nmode = \"analytic\"\nlhat0 = 1.0\nl0 = 1e-3\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::parse(&format!("{text}big_k = 0.01\n")).unwrap();
        let b = cfg.analytic_bundle().unwrap();
        assert_eq!((b.b2, b.omega2, b.eps), (2.0, 1.0, 0.1));
    }
}
