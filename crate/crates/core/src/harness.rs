//! Experiment orchestration: config files, validation, suite execution,
//! reports and the reproducibility manifest.
//!
//! Configs are TOML with unknown keys rejected. Validation runs before any
//! computation and reports every violated precondition of the selected
//! suite, not just the first. A run writes a key-value manifest plus CSV
//! reports into the output directory; identical (config, seed) pairs
//! reproduce those files byte-for-byte (wall-clock time is printed to
//! stdout only, never persisted).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constants::{ConstantsInput, ConstantsReport};
use crate::moments::{
    self, FactorizationOutcome, MomentExperiment, MomentReport, PropositionKind, SigmaField,
};
use crate::noise::{MeasureKind, QuadBudget, SpectralMeasure};
use crate::rng::stream_rng;
use crate::basis::default_mode_cutoff;
use crate::solver::{
    sup_metric, CoefficientSpec, DriftSpec, InitialCondition, ScalarFn, SimulationConfig,
    Simulator, Trajectory,
};
use crate::transport::{self, TransportExperiment, TransportReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation failed:\n{}", .0.iter().map(|s| format!("  - {s}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("suite failed: {0}")]
    Suite(String),
}

/// The verification suites the runner knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Constants,
    Simulate,
    VerifyMoments,
    VerifyT2,
    Couple,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Constants => "constants",
            Suite::Simulate => "simulate",
            Suite::VerifyMoments => "verify-moments",
            Suite::VerifyT2 => "verify-t2",
            Suite::Couple => "couple",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub kind: String,
    pub eta: f64,
    pub kappa: Option<f64>,
    pub radius: Option<f64>,
    pub radii: Option<Vec<f64>>,
    pub density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dimension: usize,
    pub dt: f64,
    pub t_end: f64,
    pub modes_per_axis: Option<usize>,
    pub grid_per_axis: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    pub sigma: ScalarFn,
    pub b: ScalarFn,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    /// Constant-in-time coefficients on the H-orthonormal directions.
    pub coefficients: Vec<f64>,
    /// Optional per-step schedule overriding `coefficients` (row per step).
    pub schedule: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    pub p: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    /// pointwise | sup | sup-small-p | factorization
    pub proposition: String,
    pub p: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub t: Option<f64>,
    pub x: Option<Vec<f64>>,
    /// Coarsening factors of the base dt for the factorization study.
    pub refine_levels: Option<Vec<usize>>,
    pub paths: Option<usize>,
    /// Use σ(u) with the configured coefficients instead of constant σ.
    #[serde(default)]
    pub state_dependent: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T2Section {
    pub n_samples: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub write_trajectories: bool,
    #[serde(default = "default_stride")]
    pub trajectory_stride: usize,
}

fn default_stride() -> usize {
    1
}

/// Parsed experiment file; sections beyond the selected suite's needs may
/// be absent.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub out_dir: Option<PathBuf>,
    pub measure: MeasureSection,
    pub solver: SolverSection,
    pub coefficients: CoefficientsSection,
    pub initial: Option<InitialCondition>,
    pub drift: Option<DriftSection>,
    pub constants: Option<ConstantsSection>,
    pub moments: Option<MomentsSection>,
    pub t2: Option<T2Section>,
    pub output: Option<OutputSection>,
}

/// Reads and parses a config file; unknown keys are rejected by the parser
/// (typo safety). Precondition validation happens per suite in `resolve`.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Vec<u8>), HarnessError> {
    let bytes = std::fs::read(path)
        .map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
    let text = String::from_utf8_lossy(&bytes);
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    Ok((cfg, bytes))
}

impl ExperimentConfig {
    pub fn build_measure(&self, errors: &mut Vec<String>) -> Option<SpectralMeasure> {
        let dimension = self.solver.dimension;
        let kind = match self.measure.kind.as_str() {
            "point-mass" | "point-mass-at-zero" => MeasureKind::PointMassAtZero,
            "riesz" => match self.measure.kappa {
                Some(kappa) => MeasureKind::Riesz { kappa },
                None => {
                    errors.push("riesz measure needs `kappa`".into());
                    return None;
                }
            },
            "ball-uniform" => match self.measure.radius {
                Some(radius) => MeasureKind::BallUniform { radius },
                None => {
                    errors.push("ball-uniform measure needs `radius`".into());
                    return None;
                }
            },
            "tabulated-radial" => match (&self.measure.radii, &self.measure.density) {
                (Some(r), Some(d)) => {
                    MeasureKind::TabulatedRadial { radii: r.clone(), density: d.clone() }
                }
                _ => {
                    errors.push("tabulated-radial measure needs `radii` and `density`".into());
                    return None;
                }
            },
            other => {
                errors.push(format!(
                    "unknown measure kind `{other}` (point-mass, riesz, ball-uniform, tabulated-radial)"
                ));
                return None;
            }
        };
        let measure = SpectralMeasure { kind, dimension, eta: self.measure.eta };
        errors.extend(measure.violations());
        Some(measure)
    }

    pub fn build_simulation(
        &self,
        measure: &SpectralMeasure,
        errors: &mut Vec<String>,
    ) -> SimulationConfig {
        let n = self
            .solver
            .modes_per_axis
            .unwrap_or_else(|| default_mode_cutoff(self.solver.dt));
        let m = self.solver.grid_per_axis.unwrap_or(2 * n);
        let cfg = SimulationConfig {
            dimension: self.solver.dimension,
            modes_per_axis: n,
            grid_per_axis: m,
            dt: self.solver.dt,
            t_end: self.solver.t_end,
            trials: self.trials,
            seed: self.seed,
            measure: measure.clone(),
        };
        errors.extend(cfg.violations());
        cfg
    }

    pub fn build_coefficients(&self) -> CoefficientSpec {
        CoefficientSpec::new(self.coefficients.sigma, self.coefficients.b)
    }

    pub fn build_initial(&self) -> InitialCondition {
        self.initial.clone().unwrap_or(InitialCondition::Zero)
    }

    fn build_drift(
        &self,
        steps: usize,
        rank: usize,
        errors: &mut Vec<String>,
    ) -> Option<DriftSpec> {
        let Some(section) = &self.drift else {
            errors.push("this suite needs a [drift] section".into());
            return None;
        };
        let drift = match &section.schedule {
            Some(rows) => {
                if rows.len() != steps {
                    errors.push(format!(
                        "drift schedule has {} rows, solver takes {steps} steps",
                        rows.len()
                    ));
                    return None;
                }
                DriftSpec::piecewise(
                    rows.iter().map(|r| DVector::from_vec(r.clone())).collect(),
                )
            }
            None => DriftSpec::constant(section.coefficients.clone(), steps),
        };
        for i in 0..drift.n_steps() {
            if drift.step(i).len() > rank {
                errors.push(format!(
                    "drift uses {} H-directions but the Gram has rank {rank}",
                    drift.step(i).len()
                ));
                return None;
            }
        }
        // Pad to the full rank so the solver's pairing is well-typed.
        let padded: Vec<DVector<f64>> = (0..drift.n_steps())
            .map(|i| {
                let mut c = DVector::zeros(rank);
                for (j, v) in drift.step(i).iter().enumerate() {
                    c[j] = *v;
                }
                c
            })
            .collect();
        Some(DriftSpec::piecewise(padded))
    }
}

/// Reproducibility record of one run. Wall-clock is carried in memory for
/// console display but excluded from the persisted file so that reruns with
/// the same (config, seed) are byte-identical.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub suite: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub trials: usize,
    pub passes: Vec<(String, bool)>,
    pub numbers: Vec<(String, String)>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn overall_pass(&self) -> bool {
        self.passes.iter().all(|(_, p)| *p)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "suite = {}", self.suite);
        let _ = writeln!(out, "config_hash = {}", self.config_hash);
        let _ = writeln!(out, "code_version = {}", self.code_version);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "stream_scheme = chacha8(master_seed).set_stream(trial_index)");
        let _ = writeln!(out, "pass_overall = {}", self.overall_pass());
        for (name, pass) in &self.passes {
            let _ = writeln!(out, "pass.{name} = {pass}");
        }
        for (key, value) in &self.numbers {
            let _ = writeln!(out, "num.{key} = {value}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.txt"), self.render())?;
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.17e}")
}

fn hash_inputs(config_bytes: &[u8], seed: u64, trials: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_bytes);
    hasher.update(seed.to_le_bytes());
    hasher.update((trials as u64).to_le_bytes());
    let digest = hasher.finalize();
    digest.iter().fold(String::with_capacity(64), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    })
}

/// Runs one suite end to end: validate, execute, write manifest + reports.
pub fn run(
    config: &ExperimentConfig,
    config_bytes: &[u8],
    suite: Suite,
    out_dir: &Path,
) -> Result<RunManifest, HarnessError> {
    let start = Instant::now();
    let mut manifest = RunManifest {
        suite: suite.name().to_string(),
        config_hash: hash_inputs(config_bytes, config.seed, config.trials),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        trials: config.trials,
        passes: Vec::new(),
        numbers: Vec::new(),
        wall_clock_secs: 0.0,
    };
    std::fs::create_dir_all(out_dir)?;
    match suite {
        Suite::Constants => run_constants(config, out_dir, &mut manifest)?,
        Suite::Simulate => run_simulate(config, out_dir, &mut manifest)?,
        Suite::VerifyMoments => run_moments(config, out_dir, &mut manifest)?,
        Suite::VerifyT2 => run_t2(config, out_dir, &mut manifest)?,
        Suite::Couple => run_couple(config, out_dir, &mut manifest)?,
    }
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn run_constants(
    config: &ExperimentConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), HarnessError> {
    let mut errors = Vec::new();
    let measure = config.build_measure(&mut errors);
    let Some(section) = &config.constants else {
        errors.push("the constants suite needs a [constants] section".into());
        return Err(HarnessError::Validation(errors));
    };
    if !(section.p > 0.0) {
        errors.push(format!("constants p must be positive, got {}", section.p));
    }
    if !(section.epsilon > 0.0) {
        errors.push(format!("constants epsilon must be positive, got {}", section.epsilon));
    }
    if !(config.solver.t_end > 0.0) {
        errors.push(format!("t_end must be positive, got {}", config.solver.t_end));
    }
    let coeffs = config.build_coefficients();
    if !errors.is_empty() {
        return Err(HarnessError::Validation(errors));
    }
    let measure = measure.expect("validated");
    let input = ConstantsInput {
        t_horizon: config.solver.t_end,
        p: section.p,
        epsilon: section.epsilon,
        l_sigma: coeffs.l_sigma,
        l_b: coeffs.l_b,
        k_sigma: coeffs.k_sigma.max(f64::MIN_POSITIVE),
    };
    let report = ConstantsReport::compute(&measure, &input)
        .map_err(|e| HarnessError::Suite(e.to_string()))?;
    let lines = report.key_value_lines();
    let mut text = String::new();
    for (k, v) in &lines {
        let _ = writeln!(text, "{k} = {v}");
    }
    std::fs::write(out_dir.join("constants.txt"), &text)?;
    for (k, v) in lines {
        manifest.numbers.push((format!("constants.{k}"), v));
    }
    // Internal consistency: the minimized constant never exceeds the
    // explicit displayed bound (trivially true when the bound is +inf).
    let bound_ok = match (report.c_t_p_eta, report.ln_c_t_p_eta_bound) {
        (Some(c), Some(lb)) => c.ln_value <= lb,
        _ => true,
    };
    manifest.passes.push(("constants_bound_consistency".into(), bound_ok));
    let finite_ok = report.k_eta.is_finite() && report.c_g_t_eta.is_finite();
    manifest.passes.push(("constants_finite".into(), finite_ok));
    Ok(())
}

fn resolved_simulator(
    config: &ExperimentConfig,
) -> Result<(Simulator, CoefficientSpec, InitialCondition), HarnessError> {
    let mut errors = Vec::new();
    let measure = config.build_measure(&mut errors);
    let sim_cfg = match &measure {
        Some(m) => Some(config.build_simulation(m, &mut errors)),
        None => None,
    };
    if !errors.is_empty() {
        return Err(HarnessError::Validation(errors));
    }
    let sim = Simulator::new(sim_cfg.expect("validated"), &QuadBudget::default())
        .map_err(|e| HarnessError::Suite(e.to_string()))?;
    Ok((sim, config.build_coefficients(), config.build_initial()))
}

fn write_trajectory_outputs(
    traj: &Trajectory,
    out_dir: &Path,
    name: &str,
    manifest: &RunManifest,
    stream: u64,
    output: Option<&OutputSection>,
) -> Result<(), HarnessError> {
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    std::fs::write(out_dir.join(format!("{name}.csv")), csv)?;
    if let Some(out) = output {
        if out.write_trajectories {
            write_trajectory_binary(
                traj,
                &out_dir.join(format!("{name}.traj")),
                &manifest.config_hash,
                manifest.seed,
                stream,
                out.trajectory_stride.max(1),
            )?;
        }
    }
    Ok(())
}

fn run_simulate(
    config: &ExperimentConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), HarnessError> {
    let (sim, coeffs, u0) = resolved_simulator(config)?;
    let mut sups = Vec::with_capacity(config.trials);
    let mut first: Option<Trajectory> = None;
    for trial in 0..config.trials {
        let mut rng = stream_rng(config.seed, trial as u64);
        let traj = sim
            .run(&coeffs, &u0, &mut rng)
            .map_err(|e| HarnessError::Suite(format!("trial {trial}: {e}")))?;
        sups.push(traj.sup_abs());
        if trial == 0 {
            first = Some(traj);
        }
    }
    let mean = sups.iter().sum::<f64>() / sups.len() as f64;
    let max = sups.iter().cloned().fold(0.0f64, f64::max);
    manifest.numbers.push(("simulate.mean_sup_abs".into(), fmt_num(mean)));
    manifest.numbers.push(("simulate.max_sup_abs".into(), fmt_num(max)));
    if let Some(traj) = first {
        write_trajectory_outputs(
            &traj,
            out_dir,
            "trajectory0",
            manifest,
            0,
            config.output.as_ref(),
        )?;
    }
    manifest.passes.push(("simulate_no_blowup".into(), true));
    Ok(())
}

fn moment_report_csv(reports: &[MomentReport]) -> String {
    let mut out = String::from(
        "proposition,p,eta,epsilon,trials,lhs,lhs_se,rhs,ln_rhs,pass,unstable,coarse_lhs\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.proposition,
            fmt_num(r.p),
            fmt_num(r.eta),
            r.epsilon.map(fmt_num).unwrap_or_default(),
            r.trials,
            fmt_num(r.lhs),
            fmt_num(r.lhs_se),
            fmt_num(r.rhs),
            fmt_num(r.ln_rhs),
            r.pass,
            r.unstable,
            r.coarse_lhs.map(fmt_num).unwrap_or_default(),
        );
    }
    out
}

fn run_moments(
    config: &ExperimentConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), HarnessError> {
    let mut errors = Vec::new();
    let measure = config.build_measure(&mut errors);
    let Some(section) = config.moments.clone() else {
        errors.push("verify-moments needs a [moments] section".into());
        return Err(HarnessError::Validation(errors));
    };
    let sim_cfg = measure.as_ref().map(|m| config.build_simulation(m, &mut errors));
    let coeffs = config.build_coefficients();
    let sigma = if section.state_dependent {
        SigmaField::OfSolution { coeffs, u0: config.build_initial() }
    } else {
        match coeffs.sigma {
            ScalarFn::Const { value } => SigmaField::Constant(value),
            ScalarFn::Zero => SigmaField::Constant(0.0),
            _ => SigmaField::OfSolution { coeffs, u0: config.build_initial() },
        }
    };
    let exp = sim_cfg.map(|config_inner| MomentExperiment {
        p: section.p.unwrap_or(2.0),
        config: config_inner,
        sigma,
        trials: config.trials,
        confidence: 4.0,
    });
    let kind = match section.proposition.as_str() {
        "pointwise" => Some(if config.trials == 0 || matches!(exp.as_ref().map(|e| &e.sigma), Some(SigmaField::Constant(_)))
        {
            PropositionKind::PointwiseExact
        } else {
            PropositionKind::Pointwise
        }),
        "sup" => Some(PropositionKind::SupLargeP),
        "sup-small-p" => Some(PropositionKind::SupSmallP),
        "factorization" => None,
        other => {
            errors.push(format!(
                "unknown proposition `{other}` (pointwise, sup, sup-small-p, factorization)"
            ));
            return Err(HarnessError::Validation(errors));
        }
    };
    if section.p.is_none() && section.proposition != "factorization" {
        errors.push("moment verification needs `p`".into());
    }
    if section.proposition == "sup-small-p" && section.epsilon.is_none() {
        errors.push("sup-small-p needs `epsilon`".into());
    }
    if section.proposition == "factorization" && section.alpha.is_none() {
        errors.push("factorization needs `alpha`".into());
    }
    if let (Some(exp), Some(kind)) = (&exp, kind) {
        errors.extend(exp.violations(kind));
    }
    if !errors.is_empty() {
        return Err(HarnessError::Validation(errors));
    }
    let exp = exp.expect("validated");

    match section.proposition.as_str() {
        "factorization" => {
            let alpha = section.alpha.expect("validated");
            let t = section.t.unwrap_or(exp.config.t_end);
            let x = section.x.clone().unwrap_or_else(|| vec![0.5; exp.config.dimension]);
            let levels = section.refine_levels.clone().unwrap_or_else(|| vec![4, 2, 1]);
            let paths = section.paths.unwrap_or(16);
            let sigma_value = match &exp.sigma {
                SigmaField::Constant(c) => *c,
                _ => {
                    return Err(HarnessError::Validation(vec![
                        "factorization study runs with constant sigma".into(),
                    ]))
                }
            };
            let outcomes =
                moments::factorization_study(&exp.config, sigma_value, alpha, t, &x, &levels, paths)
                    .map_err(|e| HarnessError::Suite(e.to_string()))?;
            let beta_res = moments::beta_identity_residual(alpha);
            write_factorization_csv(&outcomes, beta_res, out_dir)?;
            let mut monotone = true;
            for w in outcomes.windows(2) {
                if w[1].residual >= w[0].residual {
                    monotone = false;
                }
            }
            for o in &outcomes {
                manifest
                    .numbers
                    .push((format!("factorization.residual_dt_{}", o.dt), fmt_num(o.residual)));
            }
            manifest.numbers.push(("factorization.beta_residual".into(), fmt_num(beta_res)));
            manifest.passes.push(("factorization_monotone".into(), monotone));
            manifest.passes.push(("beta_identity".into(), beta_res < 1e-6));
        }
        "pointwise" => {
            let t = section.t.unwrap_or(exp.config.t_end);
            let x = section.x.clone().unwrap_or_else(|| vec![0.5; exp.config.dimension]);
            let report = moments::verify_pointwise_moment(&exp, t, &x)
                .map_err(|e| HarnessError::Suite(e.to_string()))?;
            finish_moment_suite(&[report], out_dir, manifest)?;
        }
        "sup" => {
            let report = moments::verify_sup_moment(&exp)
                .map_err(|e| HarnessError::Suite(e.to_string()))?;
            finish_moment_suite(&[report], out_dir, manifest)?;
        }
        "sup-small-p" => {
            let report =
                moments::verify_sup_moment_small_p(&exp, section.epsilon.expect("validated"))
                    .map_err(|e| HarnessError::Suite(e.to_string()))?;
            finish_moment_suite(&[report], out_dir, manifest)?;
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn finish_moment_suite(
    reports: &[MomentReport],
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), HarnessError> {
    std::fs::write(out_dir.join("moments.csv"), moment_report_csv(reports))?;
    for r in reports {
        manifest.numbers.push((format!("{}.lhs", r.proposition), fmt_num(r.lhs)));
        manifest.numbers.push((format!("{}.lhs_se", r.proposition), fmt_num(r.lhs_se)));
        manifest.numbers.push((format!("{}.rhs", r.proposition), fmt_num(r.rhs)));
        manifest.numbers.push((format!("{}.ln_rhs", r.proposition), fmt_num(r.ln_rhs)));
        manifest.passes.push((r.proposition.clone(), r.pass));
    }
    Ok(())
}

fn write_factorization_csv(
    outcomes: &[FactorizationOutcome],
    beta_residual: f64,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    let mut out = String::from("dt,residual,convolution,factorized,beta_residual\n");
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(o.dt),
            fmt_num(o.residual),
            fmt_num(o.convolution),
            fmt_num(o.factorized),
            fmt_num(beta_residual),
        );
    }
    std::fs::write(out_dir.join("factorization.csv"), out)?;
    Ok(())
}

fn build_t2_experiment(config: &ExperimentConfig) -> Result<TransportExperiment, HarnessError> {
    let mut errors = Vec::new();
    let measure = config.build_measure(&mut errors);
    let sim_cfg = measure.as_ref().map(|m| config.build_simulation(m, &mut errors));
    let n_samples = match &config.t2 {
        Some(t2) => t2.n_samples,
        None => {
            errors.push("verify-t2 needs a [t2] section with n_samples".into());
            0
        }
    };
    // Rank needs the Gram; build it only when the config is sound so far.
    let experiment = if errors.is_empty() {
        let sim_cfg = sim_cfg.clone().expect("validated");
        let sim = Simulator::new(sim_cfg.clone(), &QuadBudget::default())
            .map_err(|e| HarnessError::Suite(e.to_string()))?;
        let drift = config.build_drift(sim_cfg.steps(), sim.gram().rank(), &mut errors);
        drift.map(|drift| TransportExperiment {
            config: sim_cfg,
            coeffs: config.build_coefficients(),
            u0: config.build_initial(),
            drift,
            trials: config.trials,
            n_samples,
            confidence: 4.0,
        })
    } else {
        None
    };
    if let Some(exp) = &experiment {
        errors.extend(exp.violations());
    }
    if !errors.is_empty() {
        return Err(HarnessError::Validation(errors));
    }
    Ok(experiment.expect("validated"))
}

fn t2_report_csv(r: &TransportReport) -> String {
    let mut out = String::from(
        "entropy,coupling,coupling_se,w2_sq,w2_sq_paired,paired_mean_cost,theorem_c,ln_theorem_c,two_c_h,ln_two_c_h,ratio_w2,ratio_coupling,coupling_pass,w2_pass,admissible,degenerate,pass,trials,n_samples\n",
    );
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_num(r.entropy),
        fmt_num(r.coupling),
        fmt_num(r.coupling_se),
        fmt_num(r.w2_sq),
        fmt_num(r.w2_sq_paired),
        fmt_num(r.paired_mean_cost),
        fmt_num(r.theorem_c),
        fmt_num(r.ln_theorem_c),
        fmt_num(r.two_c_h),
        fmt_num(r.ln_two_c_h),
        fmt_num(r.ratio_w2),
        fmt_num(r.ratio_coupling),
        r.coupling_pass,
        r.w2_pass,
        r.admissible,
        r.degenerate,
        r.pass,
        r.trials,
        r.n_samples,
    );
    out
}

fn run_t2(
    config: &ExperimentConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), HarnessError> {
    let exp = build_t2_experiment(config)?;
    let report = transport::verify_t2(&exp).map_err(|e| HarnessError::Suite(e.to_string()))?;
    std::fs::write(out_dir.join("t2.csv"), t2_report_csv(&report))?;
    manifest.numbers.push(("t2.entropy".into(), fmt_num(report.entropy)));
    manifest.numbers.push(("t2.coupling".into(), fmt_num(report.coupling)));
    manifest.numbers.push(("t2.coupling_se".into(), fmt_num(report.coupling_se)));
    manifest.numbers.push(("t2.w2_sq".into(), fmt_num(report.w2_sq)));
    manifest.numbers.push(("t2.w2_sq_paired".into(), fmt_num(report.w2_sq_paired)));
    manifest.numbers.push(("t2.theorem_c".into(), fmt_num(report.theorem_c)));
    manifest.numbers.push(("t2.ln_theorem_c".into(), fmt_num(report.ln_theorem_c)));
    manifest.numbers.push(("t2.two_c_h".into(), fmt_num(report.two_c_h)));
    manifest.numbers.push(("t2.ratio_w2".into(), fmt_num(report.ratio_w2)));
    manifest.passes.push(("t2_coupling".into(), report.coupling_pass));
    manifest.passes.push(("t2_w2".into(), report.w2_pass || report.degenerate));
    manifest.passes.push(("t2_admissible".into(), report.admissible));
    Ok(())
}

fn run_couple(
    config: &ExperimentConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), HarnessError> {
    let exp = build_t2_experiment(config)?;
    let sim = Simulator::new(exp.config.clone(), &QuadBudget::default())
        .map_err(|e| HarnessError::Suite(e.to_string()))?;
    let mut csv = String::from("pair,sup_uv\n");
    let mut costs = Vec::with_capacity(exp.trials);
    let mut first: Option<(Trajectory, Trajectory)> = None;
    for pair in 0..exp.trials {
        let mut rng = stream_rng(exp.config.seed, pair as u64);
        let (u, v) = sim
            .run_coupled(&exp.coeffs, &exp.u0, &exp.drift, &mut rng)
            .map_err(|e| HarnessError::Suite(format!("pair {pair}: {e}")))?;
        let d = sup_metric(&u, &v).map_err(|e| HarnessError::Suite(e.to_string()))?;
        let _ = writeln!(csv, "{pair},{}", fmt_num(d));
        costs.push(d * d);
        if pair == 0 {
            first = Some((u, v));
        }
    }
    std::fs::write(out_dir.join("couple.csv"), csv)?;
    if let Some((u, v)) = first {
        write_trajectory_outputs(&u, out_dir, "coupled_u0", manifest, 0, config.output.as_ref())?;
        write_trajectory_outputs(&v, out_dir, "coupled_v0", manifest, 0, config.output.as_ref())?;
    }
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
        / (costs.len().max(2) - 1) as f64;
    let se = (var / costs.len() as f64).sqrt();
    let entropy = transport::entropy_of_drift(&exp.drift, exp.config.dt);
    let ke = crate::constants::k_eta(&exp.config.measure, exp.config.measure.eta)
        .map_err(|e| HarnessError::Suite(e.to_string()))?;
    let theorem = crate::constants::theorem_constant(
        exp.config.t_end,
        exp.coeffs.l_sigma,
        exp.coeffs.l_b,
        exp.coeffs.k_sigma,
        exp.config.measure.eta,
        ke,
        exp.config.dimension,
    )
    .map_err(|e| HarnessError::Suite(e.to_string()))?;
    let bound = 2.0 * theorem.value * entropy;
    manifest.numbers.push(("couple.mean_sup_sq".into(), fmt_num(mean)));
    manifest.numbers.push(("couple.se".into(), fmt_num(se)));
    manifest.numbers.push(("couple.gronwall_bound".into(), fmt_num(bound)));
    manifest
        .passes
        .push(("couple_gronwall".into(), exp.drift.is_zero() || mean <= bound + 4.0 * se));
    Ok(())
}

/// Binary trajectory snapshot file: header (magic, version, config hash,
/// seed, stream, geometry, dt, stride, count) followed by row-major f64
/// grid fields at the given snapshot stride, each preceded by its time.
pub fn write_trajectory_binary(
    traj: &Trajectory,
    path: &Path,
    config_hash: &str,
    seed: u64,
    stream: u64,
    stride: usize,
) -> Result<(), HarnessError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(b"TRAJ");
    buf.extend_from_slice(&1u32.to_le_bytes());
    let mut hash_bytes = [0u8; 32];
    for (i, chunk) in config_hash.as_bytes().chunks(2).take(32).enumerate() {
        let s = std::str::from_utf8(chunk).unwrap_or("00");
        hash_bytes[i] = u8::from_str_radix(s, 16).unwrap_or(0);
    }
    buf.extend_from_slice(&hash_bytes);
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&stream.to_le_bytes());
    let basis = traj.basis();
    buf.extend_from_slice(&(basis.dimension() as u32).to_le_bytes());
    buf.extend_from_slice(&(basis.modes_per_axis() as u32).to_le_bytes());
    buf.extend_from_slice(&(basis.intervals_per_axis() as u32).to_le_bytes());
    buf.extend_from_slice(&(stride as u32).to_le_bytes());
    let indices: Vec<usize> = (0..traj.n_snapshots()).step_by(stride).collect();
    buf.extend_from_slice(&(indices.len() as u32).to_le_bytes());
    for i in indices {
        buf.extend_from_slice(&traj.times()[i].to_le_bytes());
        for v in traj.field(i) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("exp.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    const BASE: &str = r#"
seed = 42
trials = 4

[measure]
kind = "point-mass"
eta = 0.0

[solver]
dimension = 1
dt = 0.05
t_end = 0.25
modes_per_axis = 4
grid_per_axis = 8

[coefficients]
sigma = { kind = "const", value = 1.0 }
b = { kind = "zero" }
"#;

    #[test]
    fn minimal_config_loads_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), BASE);
        let (cfg, _) = load_config(&path).unwrap();
        assert_eq!(cfg.seed, 42);
        let mut errors = Vec::new();
        let measure = cfg.build_measure(&mut errors).unwrap();
        let sim = cfg.build_simulation(&measure, &mut errors);
        assert!(errors.is_empty(), "{errors:?}");
        assert_eq!(sim.modes_per_axis, 4);
        assert_eq!(sim.grid_per_axis, 8);
    }

    #[test]
    fn default_resolution_follows_decay_rule() {
        let dir = tempfile::tempdir().unwrap();
        let body = BASE.replace("modes_per_axis = 4\ngrid_per_axis = 8\n", "");
        let path = write_config(dir.path(), &body);
        let (cfg, _) = load_config(&path).unwrap();
        let mut errors = Vec::new();
        let measure = cfg.build_measure(&mut errors).unwrap();
        let sim = cfg.build_simulation(&measure, &mut errors);
        assert!(errors.is_empty());
        assert_eq!(sim.modes_per_axis, default_mode_cutoff(0.05));
        assert_eq!(sim.grid_per_axis, 2 * sim.modes_per_axis);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\nunknown_key = 1\n");
        let path = write_config(dir.path(), &body);
        match load_config(&path) {
            Err(HarnessError::Parse(msg)) => assert!(msg.contains("unknown_key"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn moment_validation_cites_threshold() {
        // p = 5 at d = 1, η = 0: threshold is exactly 5, must be named.
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{BASE}\n[moments]\nproposition = \"sup\"\np = 5.0\n"
        );
        let path = write_config(dir.path(), &body);
        let (mut cfg, bytes) = load_config(&path).unwrap();
        cfg.trials = 1000;
        match run(&cfg, &bytes, Suite::VerifyMoments, dir.path()) {
            Err(HarnessError::Validation(v)) => {
                assert!(v.iter().any(|s| s.contains('5')), "{v:?}");
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn riesz_kappa_validation_cites_range() {
        let dir = tempfile::tempdir().unwrap();
        let body = BASE.replace(
            "kind = \"point-mass\"\neta = 0.0",
            "kind = \"riesz\"\neta = 0.9\nkappa = 1.5",
        );
        let path = write_config(dir.path(), &body);
        let (cfg, _) = load_config(&path).unwrap();
        let mut errors = Vec::new();
        cfg.build_measure(&mut errors);
        assert!(errors.iter().any(|s| s.contains("(0, 1)")), "{errors:?}");
    }

    #[test]
    fn constants_suite_runs_and_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\n[constants]\np = 6.0\nepsilon = 0.1\n");
        let path = write_config(dir.path(), &body);
        let (cfg, bytes) = load_config(&path).unwrap();
        let manifest = run(&cfg, &bytes, Suite::Constants, dir.path()).unwrap();
        assert!(manifest.overall_pass());
        assert!(dir.path().join("constants.txt").exists());
        assert!(dir.path().join("manifest.txt").exists());
        let text = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(text.contains("pass_overall = true"));
        assert!(!text.contains("wall_clock"));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\n[constants]\np = 6.0\nepsilon = 0.1\n");
        let path = write_config(dir.path(), &body);
        let (cfg, bytes) = load_config(&path).unwrap();
        let out1 = dir.path().join("run1");
        let out2 = dir.path().join("run2");
        run(&cfg, &bytes, Suite::Constants, &out1).unwrap();
        run(&cfg, &bytes, Suite::Constants, &out2).unwrap();
        let m1 = std::fs::read(out1.join("manifest.txt")).unwrap();
        let m2 = std::fs::read(out2.join("manifest.txt")).unwrap();
        assert_eq!(m1, m2);
        let c1 = std::fs::read(out1.join("constants.txt")).unwrap();
        let c2 = std::fs::read(out2.join("constants.txt")).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn simulate_suite_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), BASE);
        let (cfg, bytes) = load_config(&path).unwrap();
        let manifest = run(&cfg, &bytes, Suite::Simulate, dir.path()).unwrap();
        assert!(manifest.overall_pass());
        assert!(dir.path().join("trajectory0.csv").exists());
    }

    #[test]
    fn t2_suite_missing_drift_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\n[t2]\nn_samples = 4\n");
        let path = write_config(dir.path(), &body);
        let (mut cfg, bytes) = load_config(&path).unwrap();
        cfg.trials = 128;
        match run(&cfg, &bytes, Suite::VerifyT2, dir.path()) {
            Err(HarnessError::Validation(v)) => {
                assert!(v.iter().any(|s| s.contains("[drift]")), "{v:?}");
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn t2_suite_end_to_end_small() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\n[drift]\ncoefficients = [1.0]\n\n[t2]\nn_samples = 8\n");
        let path = write_config(dir.path(), &body);
        let (mut cfg, bytes) = load_config(&path).unwrap();
        cfg.trials = 128;
        let manifest = run(&cfg, &bytes, Suite::VerifyT2, dir.path()).unwrap();
        assert!(manifest.overall_pass(), "{manifest:?}");
        assert!(dir.path().join("t2.csv").exists());
    }

    #[test]
    fn couple_suite_gronwall_check() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{BASE}\n[drift]\ncoefficients = [0.5]\n\n[t2]\nn_samples = 4\n");
        let path = write_config(dir.path(), &body);
        let (mut cfg, bytes) = load_config(&path).unwrap();
        cfg.trials = 100;
        let manifest = run(&cfg, &bytes, Suite::Couple, dir.path()).unwrap();
        assert!(manifest.overall_pass());
        assert!(dir.path().join("couple.csv").exists());
    }
}
