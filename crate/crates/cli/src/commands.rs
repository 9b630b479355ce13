//! Subcommand bodies. Each one validates the configuration before solving,
//! writes its files from a single thread, and returns the process exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use helmholtz_dtn::constants::{
    calibrate_analytic, calibrate_empirical, check_omega_conditions, derive_level, lower_frequency_until, rho_vs_omega,
    solve_n_max, ConstantsBundle, NMax, RhoRow,
};
use helmholtz_dtn::domain::{Grid, PwcField};
use helmholtz_dtn::forward::{DtnMatrix, ForwardModel, SpectrumWindow, WindowKind};
use helmholtz_dtn::optimizer::{run_multilevel, EtaSource, MultilevelOptions, MultilevelRun};
use helmholtz_dtn::verify::{run_suite, trial_rng, SuiteOptions};
use helmholtz_dtn::{Error, Result};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{BundleMode, ExperimentConfig};
use crate::io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ADMISSIBILITY: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::Parse(_) | Error::InvalidModel(_) | Error::Mismatch(_) => EXIT_USAGE,
        Error::Inadmissible { .. }
        | Error::OutOfBounds { .. }
        | Error::NearEigenfrequency { .. }
        | Error::LevelInadmissible { .. }
        | Error::TransitionRefused(_) => EXIT_ADMISSIBILITY,
        Error::SolverAccuracy { .. } | Error::Overflow(_) | Error::Calibration(_) => EXIT_FAIL,
    }
}

/// A command's exit code and the lines it prints.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub lines: Vec<String>,
}

struct RunDir {
    path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Ok(Self { path: path.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        io::write_text(&self.path.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Config snapshot and `key = value` metadata; no timestamps, so reruns
    /// with the same seed are byte-identical.
    fn finish(mut self, command: &str, cfg: &ExperimentConfig, code: i32, extra: &[(String, String)]) -> Result<()> {
        let mut snap = cfg.clone();
        snap.run.out = None;
        self.write("config.toml", &snap.to_toml())?;
        let mut meta = String::new();
        let _ = writeln!(meta, "command = {command}");
        let _ = writeln!(meta, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(meta, "seed = {}", cfg.run.seed);
        let _ = writeln!(meta, "exit_code = {code}");
        for (k, v) in extra {
            let _ = writeln!(meta, "{k} = {v}");
        }
        self.files.push("metadata.txt".into());
        let _ = writeln!(meta, "files = {}", self.files.join(","));
        io::write_text(&self.path.join("metadata.txt"), &meta)
    }
}

fn window_line(w: &SpectrumWindow) -> String {
    match w.kind {
        WindowKind::Low => format!("omega^2 = {} lies below the first band (< {:.6})", w.omega2, w.upper),
        WindowKind::Band { n } => {
            format!("omega^2 = {} lies between bands {n} and {} in ({:.6}, {:.6})", w.omega2, n + 1, w.lower, w.upper)
        }
    }
}

/// Adds `noise ‖Λ‖_F / nb` times standard normal entries.
fn add_noise(dtn: &DtnMatrix, noise: f64, seed: u64) -> DtnMatrix {
    if noise == 0.0 {
        return dtn.clone();
    }
    let nb = dtn.nb();
    let scale = noise * dtn.lambda.norm() / nb as f64;
    let mut rng = trial_rng(seed, 100, 0);
    let e = DMatrix::from_fn(nb, nb, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    DtnMatrix { lambda: &dtn.lambda + e * scale, ..dtn.clone() }
}

fn synthesize(cfg: &ExperimentConfig, model: &ForwardModel, truth: &PwcField) -> Result<DtnMatrix> {
    Ok(add_noise(&model.dtn(truth)?, cfg.run.noise, cfg.run.seed))
}

/// Truth field, DtN matrix and boundary weights.
pub fn forward(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let window = cfg.validate()?;
    let grid = cfg.grid()?;
    let truth = cfg.truth(&grid)?;
    let model = ForwardModel::new(grid, cfg.physics.omega2);
    let dtn = synthesize(cfg, &model, &truth)?;
    let mut dir = RunDir::create(out)?;
    dir.write("truth.pwc", &io::format_pwc(&truth))?;
    dir.write("dtn.txt", &io::format_dtn(&dtn))?;
    dir.write("wplus.txt", &io::format_matrix("wplus", &model.weights().wplus))?;
    dir.write("wminus.txt", &io::format_matrix("wminus", &model.weights().wminus))?;
    let lines = vec![window_line(&window), format!("wrote {} boundary nodes to {}", dtn.nb(), out.display())];
    dir.finish("forward", cfg, EXIT_OK, &[("window".into(), window_line(&window))])?;
    Ok(Outcome { code: EXIT_OK, lines })
}

fn bundle(cfg: &ExperimentConfig) -> Result<ConstantsBundle> {
    let section = cfg.bundle.as_ref().ok_or_else(|| Error::Config("missing [bundle] section".into()))?;
    match section.mode {
        BundleMode::Analytic => calibrate_analytic(&cfg.analytic_bundle()?),
        BundleMode::Calibrate => Ok(calibrate_empirical(&cfg.empirical_spec()?)?.0),
    }
}

fn load_data(cfg: &ExperimentConfig, path: &Path, model: &ForwardModel) -> Result<DtnMatrix> {
    let (omega2, lambda) = io::parse_dtn(&io::read_text(path)?)?;
    let nb = model.weights().nb();
    if lambda.nrows() != nb {
        return Err(Error::Config(format!("run.data: {} boundary nodes, grid m = {} has {nb}", lambda.nrows(), cfg.grid.m)));
    }
    if (omega2 - model.omega2()).abs() > 1e-12 * model.omega2() {
        return Err(Error::Config(format!("run.data: recorded omega^2 = {omega2} differs from physics.omega2 = {}", model.omega2())));
    }
    Ok(DtnMatrix { lambda, weights: model.weights().clone(), omega2 })
}

fn bound_report(run: &MultilevelRun) -> String {
    let last = run.levels.last().expect("nonempty");
    let mut s = String::new();
    let _ = writeln!(s, "levels = {}", run.levels.len());
    let _ = writeln!(s, "final_n = {}", last.big_n);
    let _ = writeln!(s, "final_residual = {:?}", last.final_residual);
    let _ = writeln!(s, "total_iterations = {}", run.total_iterations());
    let _ = writeln!(s, "stab = {:?}", last.constants.stab);
    let _ = writeln!(s, "eta = {:?}", last.constants.eta);
    let _ = writeln!(s, "data_error_bound = {:?}", run.data_error_bound);
    let opt = |v: Option<f64>| v.map_or("unknown".to_string(), |v| format!("{v:?}"));
    let _ = writeln!(s, "approximation_error = {}", opt(run.approximation_error));
    let _ = writeln!(s, "error_bound = {}", opt(run.error_bound()));
    let _ = writeln!(s, "relative_error = {}", opt(run.relative_error));
    let _ = writeln!(s, "warnings = {}", run.warnings.len());
    for (i, w) in run.warnings.iter().enumerate() {
        let _ = writeln!(s, "warning.{i} = {w}");
    }
    s
}

fn levels_csv(run: &MultilevelRun) -> String {
    let mut s = String::from("level,n,k_n,stop,final_residual,threshold,eta,ctilde,rho\n");
    for l in &run.levels {
        let rho = l.constants.rho.map(|r| format!("{r:?}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{:?},{:?},{:?},{:?},{}",
            l.level,
            l.big_n,
            l.k_n,
            l.stop.as_str(),
            l.final_residual,
            l.threshold,
            l.constants.eta,
            l.constants.ctilde,
            rho
        );
    }
    s
}

fn transitions_csv(run: &MultilevelRun) -> String {
    let mut s = String::from("n_cur,n_next,frequency_conditions,level_conditions,reasons\n");
    for t in &run.transitions {
        let _ = writeln!(s, "{},{},{},{},\"{}\"", t.n_cur, t.n_next, t.frequency_conditions, t.level_conditions, t.reasons.join("; "));
    }
    s
}

/// Multi-level projected descent from the configured schedule.
pub fn reconstruct(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let grid: Arc<Grid> = cfg.grid()?;
    let schedule = cfg.schedule(&grid)?;
    let start = cfg.start(&schedule[0])?;
    let model = ForwardModel::new(grid.clone(), cfg.physics.omega2);
    let truth = cfg.truth.as_ref().map(|_| cfg.truth(&grid)).transpose()?;
    let (data, synthesized) = match (&cfg.run.data, &truth) {
        (Some(path), _) => (load_data(cfg, path, &model)?, false),
        (None, Some(t)) => (synthesize(cfg, &model, t)?, true),
        (None, None) => return Err(Error::Config("reconstruct needs run.data or a [truth] section".into())),
    };
    let bundle = bundle(cfg)?;
    let opts = MultilevelOptions {
        settings: cfg.level_settings(),
        eta: if cfg.run.eta.is_empty() { vec![EtaSource::Model] } else { cfg.run.eta.clone() },
        budget: cfg.run.budget,
        override_level_check: cfg.run.override_level_check,
        truth: truth.clone(),
    };
    let run = run_multilevel(&model, &schedule, &bundle, &data, &start, &opts)?;

    let mut dir = RunDir::create(out)?;
    if synthesized {
        dir.write("data.txt", &io::format_dtn(&data))?;
    }
    for l in &run.levels {
        dir.write(&format!("level_{}_n{}.csv", l.level, l.big_n), &l.to_csv())?;
    }
    dir.write("levels.csv", &levels_csv(&run))?;
    dir.write("transitions.csv", &transitions_csv(&run))?;
    dir.write("final.pwc", &io::format_pwc(run.final_field()))?;
    dir.write("bound_report.txt", &bound_report(&run))?;
    let mut lines: Vec<String> = run
        .levels
        .iter()
        .map(|l| format!("level {} N={} iterations={} stop={} residual={:.6e}", l.level, l.big_n, l.k_n, l.stop.as_str(), l.final_residual))
        .collect();
    if let Some(e) = run.relative_error {
        lines.push(format!("relative L2 error {e:.6e}"));
    }
    lines.extend(run.warnings.iter().map(|w| format!("warning: {w}")));
    let extra = vec![
        ("calibration".to_string(), format!("{:?}", bundle.calibration).to_lowercase()),
        ("levels".to_string(), run.levels.len().to_string()),
        ("warnings".to_string(), run.warnings.len().to_string()),
    ];
    dir.finish("reconstruct", cfg, EXIT_OK, &extra)?;
    Ok(Outcome { code: EXIT_OK, lines })
}

/// The oracle suite; exit code 1 when any check fails.
pub fn verify(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let v = &cfg.verify;
    let opts = SuiteOptions {
        convergence_ms: v.convergence_ms.clone(),
        m: v.alessandrini_m,
        omega2: cfg.physics.omega2,
        bounds: cfg.bounds()?,
        alessandrini_trials: v.alessandrini_trials,
        alessandrini_fields: v.alessandrini_fields,
        gradient_directions: v.gradient_directions,
        adjoint_pairs: v.adjoint_pairs,
        frequency_grid: v.frequency_grid.clone(),
        stability_ns: v.stability_ns.clone(),
        stability_samples: v.stability_samples,
        stability_omega2: v.stability_omega2,
        exponent: cfg.bundle.as_ref().map_or(helmholtz_dtn::constants::DEFAULT_EXPONENT, |b| b.exponent),
        seed: cfg.run.seed,
    };
    let report = run_suite(&opts)?;
    let code = if report.passed() { EXIT_OK } else { EXIT_FAIL };
    let mut dir = RunDir::create(out)?;
    dir.write("verify.csv", &report.to_csv())?;
    dir.write("summary.txt", &report.summary())?;
    let mut conv = String::from("m,h,max_error\n");
    for r in &report.convergence {
        let _ = writeln!(conv, "{},{:?},{:?}", r.m, r.h, r.max_error);
    }
    dir.write("convergence.csv", &conv)?;
    let mut stab = String::from("n,samples,max_ratio,max_ratio_op\n");
    for r in &report.stability.rows {
        let _ = writeln!(stab, "{},{},{:?},{:?}", r.big_n, r.samples, r.max_ratio, r.max_ratio_op);
    }
    dir.write("stability.csv", &stab)?;
    let lines = report
        .checks
        .iter()
        .map(|c| format!("{} {} = {:.6e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold))
        .collect();
    dir.finish("verify", cfg, code, &[("pass".into(), report.passed().to_string())])?;
    Ok(Outcome { code, lines })
}

fn rho_csv(rows: &[RhoRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    let mut s = String::from("omega2,rho,denominator_bound,rho_lower_bound,note\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{},{},{},\"{}\"",
            r.omega2,
            opt(r.rho),
            opt(r.denominator_bound),
            opt(r.rho_lower_bound),
            r.note.clone().unwrap_or_default()
        );
    }
    s
}

/// `ρ` strictly increases along the table (ordered by decreasing `ω²`) over
/// the rows where it is defined, with at least two such rows.
pub fn rho_increases_as_omega_decreases(rows: &[RhoRow]) -> bool {
    let mut defined: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.rho.map(|rho| (r.omega2, rho))).collect();
    defined.sort_by(|a, b| b.0.total_cmp(&a.0));
    defined.len() >= 2 && defined.windows(2).all(|w| w[1].1 > w[0].1)
}

/// Level constants, refinement conditions, `ρ`-versus-`ω²` tables and `N_max`.
pub fn constants(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let bundle = bundle(cfg)?;
    let c = &cfg.constants;
    let mut dir = RunDir::create(out)?;
    let mut lines = Vec::new();

    if cfg.schedule.is_some() {
        let grid = cfg.grid()?;
        let schedule = cfg.schedule(&grid)?;
        let mut s = String::from("n,lhat,lip,stab,ctilde,eta,rho\n");
        for p in &schedule {
            let lc = derive_level(&bundle, p.len())?;
            let rho = lc.rho.map(|r| format!("{r:?}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:?},{:?},{:?},{:?},{:?},{}", lc.big_n, lc.lhat, lc.lip, lc.stab, lc.ctilde, lc.eta, rho);
        }
        dir.write("level_constants.csv", &s)?;
        let mut t = String::from("n_cur,n_next,om1_lhs,om1,om2_lhs,om2,level_first_lhs,level_first,level_second_lhs,level_second_rhs,level_second,original\n");
        for w in schedule.windows(2) {
            let oc = check_omega_conditions(&bundle, w[0].len(), w[1].len())?;
            let l = &oc.level;
            let _ = writeln!(
                t,
                "{},{},{:?},{},{:?},{},{:?},{},{:?},{:?},{},{}",
                oc.n_cur, oc.n_next, oc.first_lhs, oc.first, oc.second_lhs, oc.second, l.first_lhs, l.first, l.second_lhs,
                l.second_rhs, l.second, l.original
            );
            lines.push(format!("N {} -> {}: conditions {}", oc.n_cur, oc.n_next, if oc.passes() { "hold" } else { "fail" }));
        }
        dir.write("transitions.csv", &t)?;
    }

    let rows = rho_vs_omega(&bundle, c.big_n, &c.omega_grid);
    dir.write("rho_vs_omega.csv", &rho_csv(&rows))?;
    let monotone = rho_increases_as_omega_decreases(&rows);
    lines.push(format!("rho strictly increasing as omega^2 decreases at N = {}: {monotone}", c.big_n));

    let (sweep, hit) = lower_frequency_until(&bundle, c.big_n, cfg.physics.omega2, c.target_rho, c.omega_floor);
    dir.write("rho_sweep.csv", &rho_csv(&sweep))?;
    match &hit {
        Some(r) => lines.push(format!("rho = {:.6e} >= {} at omega^2 = {:?}", r.rho.unwrap_or(f64::NAN), c.target_rho, r.omega2)),
        None => lines.push(format!("rho stays below {} down to omega^2 = {:?}", c.target_rho, c.omega_floor)),
    }

    let n_max = solve_n_max(&bundle, c.n_max_cap)?;
    let n_max_text = match n_max {
        NMax::Finite { n, root } => format!("kind = finite\nn_max = {n}\nroot = {root:?}\n"),
        NMax::Unbounded => "kind = unbounded\n".to_string(),
        NMax::Indeterminate => "kind = indeterminate\n".to_string(),
    };
    dir.write("n_max.txt", &n_max_text)?;
    lines.push(format!("N_max: {}", n_max_text.trim().replace('\n', ", ")));

    let code = if monotone && hit.is_some() { EXIT_OK } else { EXIT_FAIL };
    dir.finish("constants", cfg, code, &[("rho_monotone".into(), monotone.to_string()), ("target_reached".into(), hit.is_some().to_string())])?;
    Ok(Outcome { code, lines })
}

/// Writes the bundle as a `[bundle]` section in analytic mode, ready to paste
/// into a configuration.
pub fn bundle_toml(b: &ConstantsBundle) -> String {
    #[derive(serde::Serialize)]
    struct Section<'a> {
        mode: &'a str,
        lhat0: f64,
        l0: f64,
        big_k: f64,
        exponent: f64,
        phi: &'a helmholtz_dtn::constants::CompressionModel,
    }
    #[derive(serde::Serialize)]
    struct Doc<'a> {
        bundle: Section<'a>,
    }
    let doc = Doc { bundle: Section { mode: "analytic", lhat0: b.lhat0, l0: b.l0, big_k: b.big_k, exponent: b.exponent, phi: &b.phi } };
    toml::to_string(&doc).expect("bundle serializes")
}

/// Fits `L̂₀`, `L₀` and `K` (or echoes an analytic bundle).
pub fn calibrate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let section = cfg.bundle.as_ref().ok_or_else(|| Error::Config("missing [bundle] section".into()))?;
    let mut dir = RunDir::create(out)?;
    let b = match section.mode {
        BundleMode::Analytic => calibrate_analytic(&cfg.analytic_bundle()?)?,
        BundleMode::Calibrate => {
            let (b, report) = calibrate_empirical(&cfg.empirical_spec()?)?;
            let mut s = String::from("quantity,n,value\n");
            for (n, v) in &report.lhat0_samples {
                let _ = writeln!(s, "lhat0,{n},{v:?}");
            }
            for (n, v) in &report.l0_samples {
                let _ = writeln!(s, "l0,{n},{v:?}");
            }
            for (n, v) in &report.k_residuals {
                let _ = writeln!(s, "k_residual,{n},{v:?}");
            }
            dir.write("calibration.csv", &s)?;
            let mut t = String::from("n,adversarial,coeff_dist,data_dist,ratio,ratio_op\n");
            for x in &report.stability.samples {
                let _ = writeln!(t, "{},{},{:?},{:?},{:?},{:?}", x.big_n, x.adversarial, x.coeff_dist, x.data_dist, x.ratio, x.ratio_op);
            }
            dir.write("stability_samples.csv", &t)?;
            b
        }
    };
    dir.write("bundle.toml", &bundle_toml(&b))?;
    let lines = vec![format!("lhat0 = {:.6e}, l0 = {:.6e}, K = {:.6e}", b.lhat0, b.l0, b.big_k)];
    dir.finish("calibrate", cfg, EXIT_OK, &[])?;
    Ok(Outcome { code: EXIT_OK, lines })
}
