//! Mild-solution simulator for the stochastic heat equation on [0,1]^d with
//! time-white, space-colored noise, plus the drift-coupled pair sharing one
//! noise realization.
//!
//! Time discretization is exponential Euler with the nonlinearities frozen
//! at the left endpoint: per mode k,
//!
//!   a_k(t+Δt) = e^{-λ_k Δt} [ a_k(t) + Δt b̂_k(u(t)) + ŝ_k(t) ],
//!
//! where b̂ is the pseudospectral transform of b(u), and ŝ projects
//! σ(u(t,·))·ΔB with ΔB ~ N(0, QΔt) realized on the grid. The linear part
//! is exact for every Δt. Products are formed on an M >= 2N grid so that
//! quadratic aliasing cannot reach the retained modes.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::default_mode_cutoff;
use crate::noise::{HGram, NoiseError, QuadBudget, SpectralMeasure};
use crate::transform::SineBasis;

/// Hard cap converting numerical divergence into a diagnosable failure.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid simulation config: {0:?}")]
    InvalidConfig(Vec<String>),
    #[error("solution blew up at step {step} (|coefficient| > {BLOWUP_THRESHOLD:.0e})")]
    BlowUp { step: usize },
    #[error("trajectories live on different grids")]
    GridMismatch,
    #[error("initial field has nonzero boundary sample {0}")]
    NonzeroBoundary(f64),
    #[error("initial mode index {0} outside the retained range")]
    BadInitialMode(usize),
    #[error("drift has {got} direction coefficients, Gram rank is {expected}")]
    DriftRankMismatch { got: usize, expected: usize },
    #[error("drift specifies {got} steps, solver takes {expected}")]
    DriftStepMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Scalar nonlinearity with known Lipschitz/bound constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarFn {
    Zero,
    Const { value: f64 },
    /// sin(v): Lipschitz 1, bounded by 1; vanishes at v = 0.
    Sin,
    /// cos(v): Lipschitz 1, bounded by 1; nonzero at v = 0, so the noise
    /// acts from the start even for zero initial data.
    Cos,
    /// slope·v: Lipschitz |slope|, unbounded (admissible for b only).
    Linear { slope: f64 },
}

impl ScalarFn {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Const { value } => *value,
            ScalarFn::Sin => v.sin(),
            ScalarFn::Cos => v.cos(),
            ScalarFn::Linear { slope } => slope * v,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            ScalarFn::Zero | ScalarFn::Const { .. } => 0.0,
            ScalarFn::Sin | ScalarFn::Cos => 1.0,
            ScalarFn::Linear { slope } => slope.abs(),
        }
    }

    /// Supremum bound; infinite for the linear map.
    pub fn bound(&self) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Const { value } => value.abs(),
            ScalarFn::Sin | ScalarFn::Cos => 1.0,
            ScalarFn::Linear { slope } => {
                if *slope == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            ScalarFn::Zero => Some(0.0),
            ScalarFn::Const { value } => Some(*value),
            _ => None,
        }
    }
}

/// Diffusion and drift nonlinearities with their declared constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub sigma: ScalarFn,
    pub b: ScalarFn,
    pub l_sigma: f64,
    pub l_b: f64,
    pub k_sigma: f64,
}

impl CoefficientSpec {
    pub fn new(sigma: ScalarFn, b: ScalarFn) -> Self {
        CoefficientSpec {
            sigma,
            b,
            l_sigma: sigma.lipschitz(),
            l_b: b.lipschitz(),
            k_sigma: sigma.bound(),
        }
    }

    /// Additive-noise special case σ ≡ const, b ≡ 0.
    pub fn additive(sigma_value: f64) -> Self {
        Self::new(ScalarFn::Const { value: sigma_value }, ScalarFn::Zero)
    }
}

/// Full configuration of one simulation ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dimension: usize,
    pub modes_per_axis: usize,
    pub grid_per_axis: usize,
    pub dt: f64,
    pub t_end: f64,
    pub trials: usize,
    pub seed: u64,
    pub measure: SpectralMeasure,
}

impl SimulationConfig {
    /// Fills N by the decay-floor rule and M = 2N.
    pub fn with_default_resolution(
        dimension: usize,
        dt: f64,
        t_end: f64,
        trials: usize,
        seed: u64,
        measure: SpectralMeasure,
    ) -> Self {
        let n = default_mode_cutoff(dt);
        SimulationConfig {
            dimension,
            modes_per_axis: n,
            grid_per_axis: 2 * n,
            dt,
            t_end,
            trials,
            seed,
            measure,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.dimension != 1 && self.dimension != 2 {
            v.push(format!("dimension must be 1 or 2, got {}", self.dimension));
        }
        if self.modes_per_axis == 0 {
            v.push("modes_per_axis must be >= 1".into());
        }
        if self.grid_per_axis < 2 * self.modes_per_axis {
            v.push(format!(
                "grid_per_axis must be >= 2*modes_per_axis for dealiasing ({} < {})",
                self.grid_per_axis,
                2 * self.modes_per_axis
            ));
        }
        if !(self.dt > 0.0) {
            v.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0) {
            v.push(format!("t_end must be positive, got {}", self.t_end));
        } else if self.dt > 0.0 {
            let steps = self.t_end / self.dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                v.push(format!(
                    "t_end/dt must be integral, got {steps} (t_end={}, dt={})",
                    self.t_end, self.dt
                ));
            }
        }
        if self.trials == 0 {
            v.push("trials must be >= 1".into());
        }
        if self.dimension != self.measure.dimension {
            v.push(format!(
                "solver dimension {} and measure dimension {} disagree",
                self.dimension, self.measure.dimension
            ));
        }
        v.extend(self.measure.violations());
        v
    }
}

/// Initial datum; continuous, vanishing on the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// amplitude · ẽ_k.
    Mode { k: Vec<usize>, amplitude: f64 },
    /// Samples on the full closed grid (boundary included, row-major with
    /// first axis fastest, (M+1)^d values); boundary must be exactly zero.
    Samples { values: Vec<f64> },
}

impl InitialCondition {
    pub fn to_coeffs(&self, basis: &SineBasis) -> Result<DVector<f64>, SolverError> {
        let n = basis.modes_per_axis();
        let total = basis.mode_count();
        match self {
            InitialCondition::Zero => Ok(DVector::zeros(total)),
            InitialCondition::Mode { k, amplitude } => {
                if k.len() != basis.dimension() {
                    return Err(SolverError::BadInitialMode(k.len()));
                }
                let mut flat = 0usize;
                let mut mul = 1usize;
                for &ki in k {
                    if ki == 0 || ki > n {
                        return Err(SolverError::BadInitialMode(ki));
                    }
                    flat += (ki - 1) * mul;
                    mul *= n;
                }
                let mut c = DVector::zeros(total);
                c[flat] = *amplitude;
                Ok(c)
            }
            InitialCondition::Samples { values } => {
                let m = basis.intervals_per_axis();
                let full = (m + 1).pow(basis.dimension() as u32);
                if values.len() != full {
                    return Err(SolverError::Noise(NoiseError::DimensionMismatch {
                        got: values.len(),
                        expected: full,
                    }));
                }
                // Check the boundary ring and extract the interior.
                let mut interior = Vec::with_capacity(basis.grid_count());
                match basis.dimension() {
                    1 => {
                        if values[0] != 0.0 {
                            return Err(SolverError::NonzeroBoundary(values[0]));
                        }
                        if values[m] != 0.0 {
                            return Err(SolverError::NonzeroBoundary(values[m]));
                        }
                        interior.extend_from_slice(&values[1..m]);
                    }
                    2 => {
                        for i2 in 0..=m {
                            for i1 in 0..=m {
                                let v = values[i1 + (m + 1) * i2];
                                let on_boundary = i1 == 0 || i1 == m || i2 == 0 || i2 == m;
                                if on_boundary {
                                    if v != 0.0 {
                                        return Err(SolverError::NonzeroBoundary(v));
                                    }
                                } else {
                                    interior.push(v);
                                }
                            }
                        }
                    }
                    _ => unreachable!(),
                }
                Ok(DVector::from_vec(basis.forward(&interior)))
            }
        }
    }
}

/// Deterministic drift expressed on the H-orthonormal directions ê_j of the
/// Gram (so ‖h(s)‖²_H = Σ_j c_j(s)²), piecewise constant on solver steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    steps: Vec<DVector<f64>>,
}

impl DriftSpec {
    pub fn piecewise(steps: Vec<DVector<f64>>) -> Self {
        DriftSpec { steps }
    }

    /// The same direction coefficients on every step.
    pub fn constant(coeffs: Vec<f64>, steps: usize) -> Self {
        let c = DVector::from_vec(coeffs);
        DriftSpec { steps: vec![c; steps] }
    }

    pub fn zero(directions: usize, steps: usize) -> Self {
        DriftSpec { steps: vec![DVector::zeros(directions); steps] }
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, i: usize) -> &DVector<f64> {
        &self.steps[i]
    }

    /// ‖h(s)‖²_H on step i.
    pub fn h_norm_sq(&self, i: usize) -> f64 {
        self.steps[i].norm_squared()
    }

    /// ∫_0^T ‖h(s)‖²_H ds for the piecewise-constant drift.
    pub fn integral_h_norm_sq(&self, dt: f64) -> f64 {
        self.steps.iter().map(|c| c.norm_squared() * dt).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DriftSpec { steps: self.steps.iter().map(|c| c * factor).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.steps.iter().all(|c| c.iter().all(|v| *v == 0.0))
    }
}

/// A sampled random field on the time grid: spectral coefficients per step,
/// with grid fields materialized on demand.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    coeffs: Vec<DVector<f64>>,
    basis: Arc<SineBasis>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn coeffs(&self, i: usize) -> &DVector<f64> {
        &self.coeffs[i]
    }

    pub fn n_snapshots(&self) -> usize {
        self.times.len()
    }

    pub fn basis(&self) -> &SineBasis {
        &self.basis
    }

    /// Grid field at snapshot i (lazy; recomputed per call).
    pub fn field(&self, i: usize) -> Vec<f64> {
        self.basis.inverse(self.coeffs[i].as_slice())
    }

    /// u(t_i, x) for an arbitrary interior point.
    pub fn eval(&self, i: usize, x: &[f64]) -> f64 {
        self.basis.eval_at(self.coeffs[i].as_slice(), x)
    }

    /// max over all snapshots and grid points of |u|.
    pub fn sup_abs(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n_snapshots() {
            for v in self.field(i) {
                best = best.max(v.abs());
            }
        }
        best
    }

    fn same_grid(&self, other: &Trajectory) -> bool {
        self.times.len() == other.times.len()
            && self.basis.dimension() == other.basis.dimension()
            && self.basis.modes_per_axis() == other.basis.modes_per_axis()
            && self.basis.intervals_per_axis() == other.basis.intervals_per_axis()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0))
    }

    /// CSV rows (t, x, u) over the snapshot grid.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        match self.basis.dimension() {
            1 => writeln!(out, "t,x,u")?,
            _ => writeln!(out, "t,x1,x2,u")?,
        }
        for i in 0..self.n_snapshots() {
            let field = self.field(i);
            for (flat, v) in field.iter().enumerate() {
                let x = self.basis.grid_point(flat);
                match self.basis.dimension() {
                    1 => writeln!(out, "{:.17e},{:.17e},{:.17e}", self.times[i], x[0], v)?,
                    _ => writeln!(
                        out,
                        "{:.17e},{:.17e},{:.17e},{:.17e}",
                        self.times[i], x[0], x[1], v
                    )?,
                }
            }
        }
        Ok(())
    }
}

/// Uniform path-space distance: max over time and grid of |u1 - u2|.
pub fn sup_metric(a: &Trajectory, b: &Trajectory) -> Result<f64, SolverError> {
    if !a.same_grid(b) {
        return Err(SolverError::GridMismatch);
    }
    let mut best = 0.0f64;
    for i in 0..a.n_snapshots() {
        let fa = a.field(i);
        let fb = b.field(i);
        for (x, y) in fa.iter().zip(&fb) {
            best = best.max((x - y).abs());
        }
    }
    Ok(best)
}

/// Reusable simulation engine: basis tables, Gram factor and mode decay
/// factors are built once and shared by every trial.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimulationConfig,
    basis: Arc<SineBasis>,
    gram: Arc<HGram>,
    decay: DVector<f64>,
}

impl Simulator {
    pub fn new(config: SimulationConfig, budget: &QuadBudget) -> Result<Self, SolverError> {
        let gram = HGram::build(&config.measure, config.modes_per_axis, budget)?;
        Self::with_gram(config, Arc::new(gram))
    }

    pub fn with_gram(config: SimulationConfig, gram: Arc<HGram>) -> Result<Self, SolverError> {
        let violations = config.violations();
        if !violations.is_empty() {
            return Err(SolverError::InvalidConfig(violations));
        }
        assert_eq!(gram.modes_per_axis(), config.modes_per_axis);
        let basis = Arc::new(SineBasis::new(
            config.dimension,
            config.modes_per_axis,
            config.grid_per_axis,
        ));
        let decay =
            DVector::from_iterator(basis.mode_count(), basis.eigenvalues().iter().map(|lam| (-lam * config.dt).exp()));
        Ok(Simulator { config, basis, gram, decay })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn basis(&self) -> &Arc<SineBasis> {
        &self.basis
    }

    pub fn gram(&self) -> &Arc<HGram> {
        &self.gram
    }

    pub fn decay(&self) -> &DVector<f64> {
        &self.decay
    }

    /// One trajectory of the mild solution.
    pub fn run<R: Rng>(
        &self,
        coeffs: &CoefficientSpec,
        u0: &InitialCondition,
        rng: &mut R,
    ) -> Result<Trajectory, SolverError> {
        Ok(self.run_coupled_inner(coeffs, u0, None, rng)?.0)
    }

    /// The drift-coupled pair (u, v): identical noise stream, the drift
    /// applied only to u. With zero drift both components are bit-identical.
    pub fn run_coupled<R: Rng>(
        &self,
        coeffs: &CoefficientSpec,
        u0: &InitialCondition,
        drift: &DriftSpec,
        rng: &mut R,
    ) -> Result<(Trajectory, Trajectory), SolverError> {
        let (u, v) = self.run_coupled_inner(coeffs, u0, Some(drift), rng)?;
        Ok((u, v.expect("coupled run returns both trajectories")))
    }

    fn run_coupled_inner<R: Rng>(
        &self,
        coeffs: &CoefficientSpec,
        u0: &InitialCondition,
        drift: Option<&DriftSpec>,
        rng: &mut R,
    ) -> Result<(Trajectory, Option<Trajectory>), SolverError> {
        let steps = self.config.steps();
        if let Some(d) = drift {
            if d.n_steps() != steps {
                return Err(SolverError::DriftStepMismatch { got: d.n_steps(), expected: steps });
            }
            for i in 0..steps {
                if d.step(i).len() != self.gram.rank() {
                    return Err(SolverError::DriftRankMismatch {
                        got: d.step(i).len(),
                        expected: self.gram.rank(),
                    });
                }
            }
        }
        let dt = self.config.dt;
        let a0 = u0.to_coeffs(&self.basis)?;

        let mut a_u = a0.clone();
        let mut a_v = a0.clone();
        let mut times = Vec::with_capacity(steps + 1);
        let mut coeffs_u = Vec::with_capacity(steps + 1);
        let mut coeffs_v = if drift.is_some() { Vec::with_capacity(steps + 1) } else { Vec::new() };
        times.push(0.0);
        coeffs_u.push(a_u.clone());
        if drift.is_some() {
            coeffs_v.push(a_v.clone());
        }

        let sigma_const = coeffs.sigma.is_constant();
        let b_zero = matches!(coeffs.b, ScalarFn::Zero);

        for step in 0..steps {
            let increment = self.gram.sample_increment(dt, rng).0;

            // Component u (with drift when given).
            let drift_pairing =
                drift.map(|d| self.gram.pairing_from_direction_coeffs(d.step(step)));
            a_u = self.advance(
                &a_u,
                coeffs,
                &increment,
                drift_pairing.as_ref(),
                sigma_const,
                b_zero,
                dt,
            );
            if a_u.iter().any(|v| v.abs() > BLOWUP_THRESHOLD) {
                return Err(SolverError::BlowUp { step });
            }
            times.push((step + 1) as f64 * dt);
            coeffs_u.push(a_u.clone());

            if drift.is_some() {
                a_v = self.advance(&a_v, coeffs, &increment, None, sigma_const, b_zero, dt);
                if a_v.iter().any(|v| v.abs() > BLOWUP_THRESHOLD) {
                    return Err(SolverError::BlowUp { step });
                }
                coeffs_v.push(a_v.clone());
            }
        }
        let u = Trajectory { times: times.clone(), coeffs: coeffs_u, basis: self.basis.clone() };
        let v = drift.map(|_| Trajectory { times, coeffs: coeffs_v, basis: self.basis.clone() });
        Ok((u, v))
    }

    /// One exponential-Euler step of the full equation, reusable by the
    /// moment experiments that co-evolve a solution with a convolution.
    pub(crate) fn step_state(&self, a: &DVector<f64>, coeffs: &CoefficientSpec, increment: &DVector<f64>) -> DVector<f64> {
        self.advance(
            a,
            coeffs,
            increment,
            None,
            coeffs.sigma.is_constant(),
            matches!(coeffs.b, ScalarFn::Zero),
            self.config.dt,
        )
    }

    /// One exponential-Euler step. `drift_pairing`, when present, holds the
    /// H-pairing coordinates ⟨h(s), ẽ_m⟩_H of the drift on this step.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        a: &DVector<f64>,
        coeffs: &CoefficientSpec,
        increment: &DVector<f64>,
        drift_pairing: Option<&DVector<f64>>,
        sigma_const: Option<f64>,
        b_zero: bool,
        dt: f64,
    ) -> DVector<f64> {
        let needs_grid =
            sigma_const.is_none() || !b_zero || (drift_pairing.is_some() && sigma_const.is_none());
        let mut rhs = a.clone();
        if needs_grid {
            let u_grid = self.basis.inverse(a.as_slice());
            if !b_zero {
                let b_grid: Vec<f64> = u_grid.iter().map(|v| coeffs.b.eval(*v)).collect();
                let b_hat = self.basis.forward(&b_grid);
                for (r, bh) in rhs.iter_mut().zip(&b_hat) {
                    *r += dt * bh;
                }
            }
            match sigma_const {
                Some(c) => {
                    // σ constant: the grid round-trip is the identity on
                    // band-limited noise, so project directly.
                    for (r, db) in rhs.iter_mut().zip(increment.iter()) {
                        *r += c * db;
                    }
                    if let Some(w) = drift_pairing {
                        for (r, wk) in rhs.iter_mut().zip(w.iter()) {
                            *r += c * wk * dt;
                        }
                    }
                }
                None => {
                    let sigma_grid: Vec<f64> =
                        u_grid.iter().map(|v| coeffs.sigma.eval(*v)).collect();
                    let db_grid = self.basis.inverse(increment.as_slice());
                    let prod: Vec<f64> =
                        sigma_grid.iter().zip(&db_grid).map(|(s, n)| s * n).collect();
                    let s_hat = self.basis.forward(&prod);
                    for (r, sh) in rhs.iter_mut().zip(&s_hat) {
                        *r += sh;
                    }
                    if let Some(w) = drift_pairing {
                        let h_grid = self.basis.inverse(w.as_slice());
                        let dprod: Vec<f64> =
                            sigma_grid.iter().zip(&h_grid).map(|(s, h)| s * h * dt).collect();
                        let d_hat = self.basis.forward(&dprod);
                        for (r, dh) in rhs.iter_mut().zip(&d_hat) {
                            *r += dh;
                        }
                    }
                }
            }
        } else {
            let c = sigma_const.unwrap_or(0.0);
            for (r, db) in rhs.iter_mut().zip(increment.iter()) {
                *r += c * db;
            }
            if let Some(w) = drift_pairing {
                for (r, wk) in rhs.iter_mut().zip(w.iter()) {
                    *r += c * wk * dt;
                }
            }
        }
        rhs.component_mul_assign(&self.decay);
        rhs
    }
}

/// Convenience one-shot wrappers matching the operation contracts.
pub fn simulate<R: Rng>(
    config: &SimulationConfig,
    coeffs: &CoefficientSpec,
    u0: &InitialCondition,
    rng: &mut R,
) -> Result<Trajectory, SolverError> {
    Simulator::new(config.clone(), &QuadBudget::default())?.run(coeffs, u0, rng)
}

pub fn simulate_coupled<R: Rng>(
    config: &SimulationConfig,
    coeffs: &CoefficientSpec,
    u0: &InitialCondition,
    drift: &DriftSpec,
    rng: &mut R,
) -> Result<(Trajectory, Trajectory), SolverError> {
    Simulator::new(config.clone(), &QuadBudget::default())?.run_coupled(coeffs, u0, drift, rng)
}
