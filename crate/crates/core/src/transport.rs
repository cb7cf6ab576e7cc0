//! Transportation-inequality verification under the path-space uniform
//! metric.
//!
//! The target chain for a deterministic drift h applied through the noise:
//!
//!   W₂²(Q, P) ≤ E sup_{(t,x)} |u - v|² ≤ 2 C H(Q|P),
//!
//! where (u, v) is the coupled pair driven by one noise realization with
//! the drift only in u, H(Q|P) = ½∫‖h(s)‖²_H ds is exact for deterministic
//! drifts, and C is the explicit Gronwall constant. The Wasserstein
//! distance between uniform sample clouds is computed by exact optimal
//! assignment, so the only approximations on the left are Monte Carlo and
//! finite-sample bias, both of which push the one-sided test toward
//! failure rather than spurious success.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::assignment;
use crate::constants::{self, ConstantsError};
use crate::noise::QuadBudget;
use crate::rng::stream_rng;
use crate::solver::{
    sup_metric, CoefficientSpec, DriftSpec, InitialCondition, SimulationConfig, Simulator,
    SolverError, Trajectory,
};

/// Largest cloud size accepted by the exact assignment (cubic cost).
pub const DEFAULT_W2_SAMPLE_CAP: usize = 512;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("sample clouds have different sizes: {0} vs {1}")]
    SampleCountMismatch(usize, usize),
    #[error("{n} samples exceed the exact-assignment cap {cap}")]
    TooManySamples { n: usize, cap: usize },
    #[error("experiment invalid: {0:?}")]
    InvalidExperiment(Vec<String>),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
}

/// One T2-verification experiment.
#[derive(Debug, Clone)]
pub struct TransportExperiment {
    pub config: SimulationConfig,
    pub coeffs: CoefficientSpec,
    pub u0: InitialCondition,
    pub drift: DriftSpec,
    /// Coupled pairs for the Gronwall-bound estimate.
    pub trials: usize,
    /// Cloud size for the empirical Wasserstein distance.
    pub n_samples: usize,
    /// One-sided allowance in standard errors.
    pub confidence: f64,
}

impl TransportExperiment {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.config.violations();
        if self.trials < 100 {
            v.push(format!("transport experiments need trials >= 100, got {}", self.trials));
        }
        if self.n_samples < 2 {
            v.push(format!("empirical W2 needs at least 2 samples, got {}", self.n_samples));
        }
        if self.n_samples > DEFAULT_W2_SAMPLE_CAP {
            v.push(format!(
                "n_samples {} exceeds the exact-assignment cap {DEFAULT_W2_SAMPLE_CAP}",
                self.n_samples
            ));
        }
        if !(self.coeffs.k_sigma > 0.0) {
            v.push("transport verification needs a nonzero sigma bound K_sigma".into());
        }
        if self.drift.n_steps() != self.config.steps() {
            v.push(format!(
                "drift has {} steps, solver takes {}",
                self.drift.n_steps(),
                self.config.steps()
            ));
        }
        v
    }
}

/// Relative entropy of the drifted law: H(Q|P) = ½ ∫_0^T ‖h(s)‖²_H ds,
/// exact for deterministic piecewise-constant drifts.
pub fn entropy_of_drift(drift: &DriftSpec, dt: f64) -> f64 {
    0.5 * drift.integral_h_norm_sq(dt)
}

/// Trajectory cloud with grid fields materialized once; distances are then
/// pure array scans.
struct Cloud {
    fields: Vec<Vec<f64>>,
}

impl Cloud {
    fn new(samples: &[Trajectory]) -> Cloud {
        let fields = samples
            .iter()
            .map(|t| {
                let mut flat = Vec::with_capacity(t.n_snapshots() * t.basis().grid_count());
                for i in 0..t.n_snapshots() {
                    flat.extend(t.field(i));
                }
                flat
            })
            .collect();
        Cloud { fields }
    }

    fn sup_sq(&self, i: usize, other: &Cloud, j: usize) -> f64 {
        let mut best = 0.0f64;
        for (a, b) in self.fields[i].iter().zip(&other.fields[j]) {
            best = best.max((a - b).abs());
        }
        best * best
    }
}

/// Squared empirical 2-Wasserstein distance between two equal-size uniform
/// trajectory clouds under the uniform metric: the mean cost of the exact
/// optimal assignment on the n×n matrix of squared sup-distances.
pub fn empirical_w2(
    samples_a: &[Trajectory],
    samples_b: &[Trajectory],
    cap: usize,
) -> Result<f64, TransportError> {
    if samples_a.len() != samples_b.len() {
        return Err(TransportError::SampleCountMismatch(samples_a.len(), samples_b.len()));
    }
    let n = samples_a.len();
    if n > cap {
        return Err(TransportError::TooManySamples { n, cap });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let a = Cloud::new(samples_a);
    let b = Cloud::new(samples_b);
    let mut cost = vec![0.0f64; n * n];
    cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, c) in row.iter_mut().enumerate() {
            *c = a.sup_sq(i, &b, j);
        }
    });
    let sol = assignment::solve(n, &cost);
    Ok(sol.total_cost / n as f64)
}

/// Monte Carlo estimate of the coupled second moment
/// E sup_{(t,x)} |u - v|² over independent coupled pairs.
pub fn coupling_bound(
    exp: &TransportExperiment,
) -> Result<(f64, f64), TransportError> {
    let v = exp.violations();
    if !v.is_empty() {
        return Err(TransportError::InvalidExperiment(v));
    }
    let sim = Simulator::new(exp.config.clone(), &QuadBudget::default())?;
    let costs = coupled_sup_costs(&sim, exp, exp.trials, 0)?;
    Ok(mean_se(&costs.0))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type CoupledRuns = (Vec<f64>, Vec<Trajectory>, Vec<Trajectory>);

/// Runs `count` coupled pairs on streams `stream_base..stream_base+count`,
/// returning per-pair sup² costs and the first `keep` trajectory pairs.
fn coupled_sup_costs(
    sim: &Simulator,
    exp: &TransportExperiment,
    count: usize,
    keep: usize,
) -> Result<CoupledRuns, TransportError> {
    let runs: Vec<Result<(f64, Option<(Trajectory, Trajectory)>), SolverError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(exp.config.seed, i as u64);
            let (u, v) = sim.run_coupled(&exp.coeffs, &exp.u0, &exp.drift, &mut rng)?;
            let d = sup_metric(&u, &v)?;
            let kept = if i < keep { Some((u, v)) } else { None };
            Ok((d * d, kept))
        })
        .collect();
    let mut costs = Vec::with_capacity(count);
    let mut us = Vec::with_capacity(keep);
    let mut vs = Vec::with_capacity(keep);
    for r in runs {
        let (c, kept) = r?;
        costs.push(c);
        if let Some((u, v)) = kept {
            us.push(u);
            vs.push(v);
        }
    }
    Ok((costs, us, vs))
}

/// Complete T2 report: exact entropy, Monte Carlo coupling bound, empirical
/// Wasserstein distances (independent clouds for the headline number,
/// paired clouds for the plan-admissibility invariant), and the theorem
/// constant with both value and log.
#[derive(Debug, Clone, Serialize)]
pub struct TransportReport {
    pub entropy: f64,
    pub coupling: f64,
    pub coupling_se: f64,
    /// W₂² between the drifted cloud and an independent undrifted cloud.
    pub w2_sq: f64,
    /// W₂² between the coupled clouds (same streams); admissibility check.
    pub w2_sq_paired: f64,
    /// Mean paired cost (the coupling as one feasible transport plan).
    pub paired_mean_cost: f64,
    pub theorem_c: f64,
    pub ln_theorem_c: f64,
    pub two_c_h: f64,
    pub ln_two_c_h: f64,
    pub ratio_w2: f64,
    pub ratio_coupling: f64,
    pub coupling_pass: bool,
    pub w2_pass: bool,
    pub admissible: bool,
    /// Zero drift: Q = P and 2CH = 0; the empirical W₂² then only reflects
    /// finite-sample bias, so the W2 flag is informational.
    pub degenerate: bool,
    pub pass: bool,
    pub trials: usize,
    pub n_samples: usize,
}

pub fn verify_t2(exp: &TransportExperiment) -> Result<TransportReport, TransportError> {
    let violations = exp.violations();
    if !violations.is_empty() {
        return Err(TransportError::InvalidExperiment(violations));
    }
    let sim = Simulator::new(exp.config.clone(), &QuadBudget::default())?;
    let dt = exp.config.dt;
    let eta = exp.config.measure.eta;
    let entropy = entropy_of_drift(&exp.drift, dt);
    let ke = constants::k_eta(&exp.config.measure, eta)?;
    let theorem = constants::theorem_constant(
        exp.config.t_end,
        exp.coeffs.l_sigma,
        exp.coeffs.l_b,
        exp.coeffs.k_sigma,
        eta,
        ke,
        exp.config.dimension,
    )?;
    let two_c_h = 2.0 * theorem.value * entropy;
    let ln_two_c_h = if entropy > 0.0 {
        2.0f64.ln() + theorem.ln_value + entropy.ln()
    } else {
        f64::NEG_INFINITY
    };

    // Coupled pairs: streams 0..pairs. The first n_samples double as the
    // u-cloud (law Q) and the paired v-cloud.
    let pairs = exp.trials.max(exp.n_samples);
    let (costs, us, vs_paired) = coupled_sup_costs(&sim, exp, pairs, exp.n_samples)?;
    let (coupling, coupling_se) = mean_se(&costs[..exp.trials]);
    let paired_mean_cost = costs[..exp.n_samples].iter().sum::<f64>() / exp.n_samples as f64;

    // Independent undrifted samples (law P) on fresh streams.
    let vs_indep: Vec<Result<Trajectory, SolverError>> = (0..exp.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(exp.config.seed, (pairs + i) as u64);
            sim.run(&exp.coeffs, &exp.u0, &mut rng)
        })
        .collect();
    let vs_indep: Vec<Trajectory> = vs_indep.into_iter().collect::<Result<_, _>>()?;

    let w2_sq = empirical_w2(&us, &vs_indep, DEFAULT_W2_SAMPLE_CAP)?;
    let w2_sq_paired = empirical_w2(&us, &vs_paired, DEFAULT_W2_SAMPLE_CAP)?;

    let degenerate = exp.drift.is_zero();
    let band = exp.confidence * coupling_se;
    let coupling_pass = coupling <= two_c_h + band;
    let w2_pass = w2_sq <= two_c_h + band;
    let admissible = w2_sq_paired <= paired_mean_cost + 1e-9;
    let pass = coupling_pass && admissible && (w2_pass || degenerate);
    Ok(TransportReport {
        entropy,
        coupling,
        coupling_se,
        w2_sq,
        w2_sq_paired,
        paired_mean_cost,
        theorem_c: theorem.value,
        ln_theorem_c: theorem.ln_value,
        two_c_h,
        ln_two_c_h,
        ratio_w2: w2_sq / two_c_h,
        ratio_coupling: coupling / two_c_h,
        coupling_pass,
        w2_pass,
        admissible,
        degenerate,
        pass,
        trials: exp.trials,
        n_samples: exp.n_samples,
    })
}
