//! Spatial covariance structure of the time-white, space-colored noise.
//!
//! The noise is characterized by a nonnegative tempered spectral measure λ;
//! the covariance space is the completion of test functions under
//!
//!   ⟨φ,ψ⟩_H = ∫∫ φ(x)ψ(y) f(x-y) dx dy = ∫ Fφ(ξ) conj(Fψ)(ξ) λ(dξ),
//!
//! with f the Fourier transform of λ. Everything downstream works through
//! the Gram matrix Q of the zero-extended, L²-normalized sine modes under
//! this inner product. Entries are computed on the Fourier side, where the
//! sine-mode transforms are entire functions and the only singularity is
//! the radial weight of λ at the origin (handled by a grading substitution).
//!
//! All measures here are radially symmetric, which makes Q real and lets
//! mixed-parity entries vanish identically (skipped, not quadratured).

use std::io::Read;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::quad::{adaptive_simpson, dyadic_tail, gauss_legendre, gl_panel, TailOutcome};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid spectral measure: {0:?}")]
    InvalidMeasure(Vec<String>),
    #[error("coefficient vector has length {got}, Gram is {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("Gram not positive semidefinite: eigenvalue {min_eigenvalue:.3e} below -{tolerance:.3e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64, tolerance: f64 },
    #[error("quadrature diverged while {context} (last block ratio {last_ratio:.4})")]
    QuadratureDiverged { context: String, last_ratio: f64 },
    #[error("quadrature failed to converge while {context}")]
    QuadratureNonConvergence { context: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad Gram file: {0}")]
    Format(String),
}

/// The shape of the spectral measure, without dimension or regularity index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureKind {
    /// λ = δ_0; the covariance kernel is f ≡ 1 (a single global mode).
    PointMassAtZero,
    /// λ(dξ) = c_{d,κ} |ξ|^{κ-d} dξ, the measure whose Fourier transform is
    /// the Riesz kernel f(x) = |x|^{-κ}.
    Riesz { kappa: f64 },
    /// Unit Lebesgue density on the centered ball of the given radius.
    BallUniform { radius: f64 },
    /// User-supplied radial density, linearly interpolated between knots and
    /// zero beyond the last knot. Accepted as asserted valid apart from
    /// nonnegativity of the density itself.
    TabulatedRadial { radii: Vec<f64>, density: Vec<f64> },
}

/// A tempered radial spectral measure together with the dimension it lives
/// in and the regularity index η used by the finiteness hypothesis
/// K_η = ∫ (1+|ξ|²)^{-η} λ(dξ) < ∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralMeasure {
    #[serde(flatten)]
    pub kind: MeasureKind,
    pub dimension: usize,
    pub eta: f64,
}

impl SpectralMeasure {
    pub fn point_mass(dimension: usize, eta: f64) -> Self {
        SpectralMeasure { kind: MeasureKind::PointMassAtZero, dimension, eta }
    }

    pub fn riesz(dimension: usize, kappa: f64, eta: f64) -> Self {
        SpectralMeasure { kind: MeasureKind::Riesz { kappa }, dimension, eta }
    }

    pub fn ball_uniform(dimension: usize, radius: f64, eta: f64) -> Self {
        SpectralMeasure { kind: MeasureKind::BallUniform { radius }, dimension, eta }
    }

    /// All constraint violations, or empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let d = self.dimension;
        if d != 1 && d != 2 {
            v.push(format!("dimension must be 1 or 2, got {d}"));
        }
        if !(0.0..1.0).contains(&self.eta) {
            v.push(format!("eta must lie in [0,1), got {}", self.eta));
        }
        match &self.kind {
            MeasureKind::PointMassAtZero => {}
            MeasureKind::Riesz { kappa } => {
                let hi = 2.0f64.min(d as f64);
                if !(*kappa > 0.0 && *kappa < hi) {
                    v.push(format!("riesz exponent kappa must lie in (0, {hi}), got {kappa}"));
                }
                if 2.0 * self.eta <= *kappa {
                    v.push(format!(
                        "riesz requires 2*eta > kappa for a finite K_eta; got eta={}, kappa={kappa}",
                        self.eta
                    ));
                }
            }
            MeasureKind::BallUniform { radius } => {
                if !(*radius > 0.0) {
                    v.push(format!("ball radius must be positive, got {radius}"));
                }
            }
            MeasureKind::TabulatedRadial { radii, density } => {
                if radii.len() != density.len() || radii.len() < 2 {
                    v.push("tabulated measure needs matching radii/density tables, length >= 2".into());
                }
                if radii.first().map(|r| *r < 0.0).unwrap_or(false) {
                    v.push("tabulated radii must start at >= 0".into());
                }
                if radii.windows(2).any(|w| w[1] <= w[0]) {
                    v.push("tabulated radii must be strictly increasing".into());
                }
                if density.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                    v.push("tabulated density must be nonnegative and finite".into());
                }
            }
        }
        v
    }

    pub fn validated(self) -> Result<Self, NoiseError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(NoiseError::InvalidMeasure(v))
        }
    }

    /// Mass of the atom at the origin (zero except for the point mass).
    pub fn atom(&self) -> f64 {
        match self.kind {
            MeasureKind::PointMassAtZero => 1.0,
            _ => 0.0,
        }
    }

    /// Radial Lebesgue density ℓ(r) of the continuous part, r > 0.
    pub fn radial_density(&self, r: f64) -> f64 {
        match &self.kind {
            MeasureKind::PointMassAtZero => 0.0,
            MeasureKind::Riesz { kappa } => {
                riesz_constant(*kappa, self.dimension) * r.powf(kappa - self.dimension as f64)
            }
            MeasureKind::BallUniform { radius } => {
                if r <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            MeasureKind::TabulatedRadial { radii, density } => {
                if r <= radii[0] || r >= *radii.last().unwrap() {
                    if r <= radii[0] {
                        density[0]
                    } else {
                        0.0
                    }
                } else {
                    let idx = radii.partition_point(|&a| a < r).max(1);
                    let (r0, r1) = (radii[idx - 1], radii[idx]);
                    let w = (r - r0) / (r1 - r0);
                    density[idx - 1] * (1.0 - w) + density[idx] * w
                }
            }
        }
    }

    /// Power of r in the density near the origin (the grading exponent).
    pub fn origin_exponent(&self) -> f64 {
        match self.kind {
            MeasureKind::Riesz { kappa } => kappa - self.dimension as f64,
            _ => 0.0,
        }
    }

    /// Upper end of the radial support for compactly supported measures.
    pub fn support_radius(&self) -> Option<f64> {
        match &self.kind {
            MeasureKind::BallUniform { radius } => Some(*radius),
            MeasureKind::TabulatedRadial { radii, .. } => Some(*radii.last().unwrap()),
            _ => None,
        }
    }

    /// Surface measure of the unit sphere in this dimension (2 or 2π).
    pub fn sphere_surface(&self) -> f64 {
        match self.dimension {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI,
            _ => unreachable!(),
        }
    }
}

/// Normalization c_{d,κ} = π^{κ-d/2} Γ((d-κ)/2) / Γ(κ/2) of the Riesz pair
/// f(x) = |x|^{-κ}, λ(dξ) = c_{d,κ}|ξ|^{κ-d} dξ under the convention
/// Fφ(ξ) = ∫ e^{-2πi ξ·x} φ(x) dx. Cross-validated numerically by
/// [`validate_fourier_pair`].
pub fn riesz_constant(kappa: f64, dimension: usize) -> f64 {
    let d = dimension as f64;
    std::f64::consts::PI.powf(kappa - d / 2.0) * gamma((d - kappa) / 2.0) / gamma(kappa / 2.0)
}

/// Lebesgue density of the Riesz spectral measure at frequency ξ ≠ 0.
pub fn riesz_spectral_density(kappa: f64, dimension: usize, xi: &[f64]) -> Result<f64, NoiseError> {
    let hi = 2.0f64.min(dimension as f64);
    if !(kappa > 0.0 && kappa < hi) {
        return Err(NoiseError::InvalidMeasure(vec![format!(
            "riesz exponent kappa must lie in (0, {hi}), got {kappa}"
        )]));
    }
    if xi.len() != dimension {
        return Err(NoiseError::DimensionMismatch { got: xi.len(), expected: dimension });
    }
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(NoiseError::Unsupported(
            "riesz density is singular at xi = 0; integrate radially instead".into(),
        ));
    }
    Ok(riesz_constant(kappa, dimension) * r.powf(kappa - dimension as f64))
}

/// ∫ ψ(|ξ|) λ(dξ) for a smooth radial profile ψ, with dyadic-tail
/// convergence detection for measures of unbounded support.
pub fn radial_integral<F: Fn(f64) -> f64 + Copy>(
    measure: &SpectralMeasure,
    psi: F,
    max_tail_levels: usize,
    context: &str,
) -> Result<f64, NoiseError> {
    let mut total = measure.atom() * psi(0.0);
    let surface = measure.sphere_surface();
    let d = measure.dimension as f64;
    // Radial integrand ℓ(r) r^{d-1} ψ(r); exponent at the origin is
    // origin_exponent + d - 1 > -1 for every admissible measure.
    let s = measure.origin_exponent() + d - 1.0;
    let inner_cap = measure.support_radius().unwrap_or(1.0).min(1.0);
    if inner_cap > 0.0 {
        // Grading r = u^{1/(1+s)} absorbs the algebraic origin weight.
        let q = 1.0 + s;
        let upper = inner_cap.powf(q);
        let prefactor = match measure.kind {
            // For the Riesz density the weight is exactly c r^s.
            MeasureKind::Riesz { kappa } => riesz_constant(kappa, measure.dimension),
            _ => 1.0,
        };
        let body = |r: f64| match measure.kind {
            MeasureKind::Riesz { .. } => psi(r),
            _ => measure.radial_density(r) * r.powf(d - 1.0) * psi(r),
        };
        total += surface * prefactor / q
            * gl_panel(|u| body(u.powf(1.0 / q)), 0.0, upper, 64);
    }
    match measure.support_radius() {
        Some(rmax) => {
            if rmax > 1.0 {
                let blocks = (rmax - 1.0).ceil() as usize;
                let mut acc = 0.0;
                for b in 0..blocks {
                    let lo = 1.0 + b as f64;
                    let hi = (lo + 1.0).min(rmax);
                    acc += gl_panel(
                        |r| measure.radial_density(r) * r.powf(d - 1.0) * psi(r),
                        lo,
                        hi,
                        64,
                    );
                }
                total += surface * acc;
            }
            Ok(total)
        }
        None => {
            if measure.atom() > 0.0 {
                return Ok(total);
            }
            match dyadic_tail(
                |r| measure.radial_density(r) * r.powf(d - 1.0) * psi(r),
                1.0,
                1e-13 * total.abs().max(1.0),
                max_tail_levels,
            ) {
                TailOutcome::Converged(tail) => Ok(total + surface * tail),
                TailOutcome::Diverged { last_ratio, .. } => Err(NoiseError::QuadratureDiverged {
                    context: context.to_string(),
                    last_ratio,
                }),
            }
        }
    }
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        1.0 - u * u / 6.0 + u.powi(4) / 120.0
    } else {
        u.sin() / u
    }
}

/// Fourier transform of the zero-extended normalized sine mode,
/// Fẽ_k(ξ) = √2 ∫_0^1 sin(πkx) e^{-2πiξx} dx, in a pole-free form built
/// from e^{ic/2} sinc(c/2) factors (entire in ξ).
pub fn sine_mode_transform(k: usize, xi: f64) -> Complex<f64> {
    let pi = std::f64::consts::PI;
    let a = pi * k as f64 - 2.0 * pi * xi;
    let b = -(pi * k as f64 + 2.0 * pi * xi);
    let ea = Complex::new((a / 2.0).cos(), (a / 2.0).sin()) * sinc(a / 2.0);
    let eb = Complex::new((b / 2.0).cos(), (b / 2.0).sin()) * sinc(b / 2.0);
    Complex::new(0.0, -std::f64::consts::SQRT_2 / 2.0) * (ea - eb)
}

/// ∫_0^1 ẽ_k = Fẽ_k(0): 2√2/(πk) for odd k, 0 for even k.
fn mode_mean_1d(k: usize) -> f64 {
    if k % 2 == 1 {
        2.0 * std::f64::consts::SQRT_2 / (std::f64::consts::PI * k as f64)
    } else {
        0.0
    }
}

/// Quadrature budget for Gram assembly and measure integrals. Fixing the
/// budget fixes every node and weight, so results are bit-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadBudget {
    /// Gauss-Legendre points per unit block (16, 32 or 64).
    pub gl_points: usize,
    /// Dyadic refinement levels before a tail is declared divergent.
    pub max_tail_levels: usize,
    /// Negative-eigenvalue tolerance for PSD repair, relative to trace.
    pub psd_tol: f64,
}

impl Default for QuadBudget {
    fn default() -> Self {
        QuadBudget { gl_points: 32, max_tail_levels: 20, psd_tol: 1e-10 }
    }
}

/// Per-mode Gaussian increments of the noise over one time step, expressed
/// in the sine basis (so that a test function φ with coefficients φ̂ pairs
/// as φ̂ᵀ ΔB, with Var = φ̂ᵀQφ̂ Δt).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement(pub DVector<f64>);

/// Gram matrix of the sine modes under the H inner product, together with a
/// PSD square-root factor for sampling and the H-orthonormalized direction
/// basis used to express deterministic drifts.
#[derive(Debug, Clone)]
pub struct HGram {
    measure: SpectralMeasure,
    modes_per_axis: usize,
    budget: QuadBudget,
    matrix: DMatrix<f64>,
    /// factor · factorᵀ = Q (after PSD repair); size N^d × rank.
    factor: DMatrix<f64>,
    /// Columns are sine-basis coordinates of H-orthonormal directions ê_j;
    /// Q-orthonormal: colᵀ Q col = δ. Size N^d × rank.
    drift_basis: DMatrix<f64>,
    rank: usize,
}

impl HGram {
    /// Builds the Gram of the first N^d sine modes under the measure's H
    /// inner product, entry-by-entry on the Fourier side.
    pub fn build(
        measure: &SpectralMeasure,
        modes_per_axis: usize,
        budget: &QuadBudget,
    ) -> Result<HGram, NoiseError> {
        let measure = measure.clone().validated()?;
        assert!(modes_per_axis >= 1);
        let matrix = match measure.dimension {
            1 => gram_matrix_1d(&measure, modes_per_axis, budget),
            2 => gram_matrix_2d(&measure, modes_per_axis, budget),
            _ => unreachable!(),
        };
        Self::from_matrix(matrix, measure, modes_per_axis, *budget)
    }

    /// Wraps an explicit Gram matrix (reloaded from disk, or synthetic in
    /// tests), running the PSD repair and factorization.
    pub fn from_matrix(
        matrix: DMatrix<f64>,
        measure: SpectralMeasure,
        modes_per_axis: usize,
        budget: QuadBudget,
    ) -> Result<HGram, NoiseError> {
        let n = matrix.nrows();
        assert_eq!(matrix.ncols(), n);
        let trace: f64 = matrix.diagonal().iter().sum();
        let tol = budget.psd_tol * trace.max(f64::MIN_POSITIVE);
        // Symmetrize rounding noise before factorization.
        let sym = 0.5 * (&matrix + matrix.transpose());
        let (factor, drift_basis, rank) = psd_factor(&sym, tol)?;
        Ok(HGram { measure, modes_per_axis, budget, matrix: sym, factor, drift_basis, rank })
    }

    pub fn measure(&self) -> &SpectralMeasure {
        &self.measure
    }

    pub fn modes_per_axis(&self) -> usize {
        self.modes_per_axis
    }

    pub fn budget(&self) -> &QuadBudget {
        &self.budget
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Total number of modes N^d.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// PSD square-root factor: factor · factorᵀ = Q.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Sine-basis coordinates of the H-orthonormal directions ê_j.
    pub fn drift_basis(&self) -> &DMatrix<f64> {
        &self.drift_basis
    }

    /// ⟨φ,ψ⟩_H = φᵀ Q ψ for coefficient vectors in the sine basis.
    pub fn inner(&self, phi: &DVector<f64>, psi: &DVector<f64>) -> Result<f64, NoiseError> {
        if phi.len() != self.dim() {
            return Err(NoiseError::DimensionMismatch { got: phi.len(), expected: self.dim() });
        }
        if psi.len() != self.dim() {
            return Err(NoiseError::DimensionMismatch { got: psi.len(), expected: self.dim() });
        }
        Ok((phi.transpose() * &self.matrix * psi)[(0, 0)])
    }

    /// ‖φ‖²_H.
    pub fn norm_sq(&self, phi: &DVector<f64>) -> Result<f64, NoiseError> {
        self.inner(phi, phi)
    }

    /// H-pairing coordinates ⟨h, ẽ_m⟩_H of a drift given by coefficients c
    /// on the H-orthonormal directions: equals factor · c.
    pub fn pairing_from_direction_coeffs(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.factor * c
    }

    /// One noise increment over a step of length `dt`: factor · z · √dt.
    pub fn sample_increment<R: Rng>(&self, dt: f64, rng: &mut R) -> NoiseIncrement {
        assert!(dt >= 0.0);
        let z = DVector::from_fn(self.rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        NoiseIncrement(&self.factor * z * dt.sqrt())
    }

    /// Writes the Gram to a little-endian binary file; the matrix bytes are
    /// exact, so a reload reproduces it bit-for-bit.
    pub fn save(&self, path: &Path) -> Result<(), NoiseError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"HGRM");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.measure.dimension as u32).to_le_bytes());
        buf.extend_from_slice(&(self.modes_per_axis as u32).to_le_bytes());
        buf.extend_from_slice(&self.measure.eta.to_le_bytes());
        match &self.measure.kind {
            MeasureKind::PointMassAtZero => buf.extend_from_slice(&0u32.to_le_bytes()),
            MeasureKind::Riesz { kappa } => {
                buf.extend_from_slice(&1u32.to_le_bytes());
                buf.extend_from_slice(&kappa.to_le_bytes());
            }
            MeasureKind::BallUniform { radius } => {
                buf.extend_from_slice(&2u32.to_le_bytes());
                buf.extend_from_slice(&radius.to_le_bytes());
            }
            MeasureKind::TabulatedRadial { radii, density } => {
                buf.extend_from_slice(&3u32.to_le_bytes());
                buf.extend_from_slice(&(radii.len() as u32).to_le_bytes());
                for r in radii {
                    buf.extend_from_slice(&r.to_le_bytes());
                }
                for p in density {
                    buf.extend_from_slice(&p.to_le_bytes());
                }
            }
        }
        buf.extend_from_slice(&(self.budget.gl_points as u32).to_le_bytes());
        buf.extend_from_slice(&(self.budget.max_tail_levels as u32).to_le_bytes());
        buf.extend_from_slice(&self.budget.psd_tol.to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                buf.extend_from_slice(&self.matrix[(i, j)].to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<HGram, NoiseError> {
        let mut file = std::fs::File::open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], NoiseError> {
            if *pos + n > buf.len() {
                return Err(NoiseError::Format("truncated file".into()));
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32, NoiseError> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let read_f64 = |pos: &mut usize| -> Result<f64, NoiseError> {
            Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        if take(&mut pos, 4)? != b"HGRM" {
            return Err(NoiseError::Format("bad magic".into()));
        }
        let version = read_u32(&mut pos)?;
        if version != 1 {
            return Err(NoiseError::Format(format!("unsupported version {version}")));
        }
        let dimension = read_u32(&mut pos)? as usize;
        let modes_per_axis = read_u32(&mut pos)? as usize;
        let eta = read_f64(&mut pos)?;
        let kind = match read_u32(&mut pos)? {
            0 => MeasureKind::PointMassAtZero,
            1 => MeasureKind::Riesz { kappa: read_f64(&mut pos)? },
            2 => MeasureKind::BallUniform { radius: read_f64(&mut pos)? },
            3 => {
                let len = read_u32(&mut pos)? as usize;
                let mut radii = Vec::with_capacity(len);
                for _ in 0..len {
                    radii.push(read_f64(&mut pos)?);
                }
                let mut density = Vec::with_capacity(len);
                for _ in 0..len {
                    density.push(read_f64(&mut pos)?);
                }
                MeasureKind::TabulatedRadial { radii, density }
            }
            other => return Err(NoiseError::Format(format!("unknown measure tag {other}"))),
        };
        let budget = QuadBudget {
            gl_points: read_u32(&mut pos)? as usize,
            max_tail_levels: read_u32(&mut pos)? as usize,
            psd_tol: read_f64(&mut pos)?,
        };
        let dim = read_u32(&mut pos)? as usize;
        let mut matrix = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                matrix[(i, j)] = read_f64(&mut pos)?;
            }
        }
        let measure = SpectralMeasure { kind, dimension, eta };
        HGram::from_matrix(matrix, measure, modes_per_axis, budget)
    }
}

/// Cholesky when the matrix is strictly positive definite; otherwise a
/// symmetric-eigenvalue square root with small negative eigenvalues clipped
/// to zero (rank-deficient measures such as the point mass land here).
fn psd_factor(
    q: &DMatrix<f64>,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize), NoiseError> {
    let n = q.nrows();
    if let Some(chol) = q.clone().cholesky() {
        let l = chol.l();
        // Drift basis: columns of L^{-T}, i.e. solve Lᵀ X = I.
        let lt_inv = l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| NoiseError::Format("singular Cholesky factor".into()))?;
        return Ok((l, lt_inv, n));
    }
    let eig = nalgebra::SymmetricEigen::new(q.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -tol {
        return Err(NoiseError::NotPositiveSemidefinite { min_eigenvalue: min_eig, tolerance: tol });
    }
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > tol.max(1e-300))
        .collect();
    let rank = kept.len();
    let mut factor = DMatrix::zeros(n, rank);
    let mut basis = DMatrix::zeros(n, rank);
    for (c, &i) in kept.iter().enumerate() {
        let lam = eig.eigenvalues[i];
        let col = eig.eigenvectors.column(i);
        // Fix a deterministic sign: first nonzero component positive.
        let sign = col
            .iter()
            .find(|v| v.abs() > 1e-14)
            .map(|v| if *v < 0.0 { -1.0 } else { 1.0 })
            .unwrap_or(1.0);
        for r in 0..n {
            factor[(r, c)] = sign * col[r] * lam.sqrt();
            basis[(r, c)] = sign * col[r] / lam.sqrt();
        }
    }
    Ok((factor, basis, rank))
}

/// DC (non-oscillatory) part of 2·Re[Fẽ_j conj(Fẽ_k)] for same-parity j,k
/// at large radius: 8jk / (π² (4r²-j²)(4r²-k²)).
fn dc_product(j: usize, k: usize, r: f64) -> f64 {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let jj = (j * j) as f64;
    let kk = (k * k) as f64;
    8.0 * (j as f64) * (k as f64) / (pi2 * (4.0 * r * r - jj) * (4.0 * r * r - kk))
}

fn gram_matrix_1d(measure: &SpectralMeasure, n: usize, budget: &QuadBudget) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    // Atom contribution is an exact rank-one outer product of mode means.
    let atom = measure.atom();
    if atom > 0.0 {
        for j in 1..=n {
            for k in 1..=n {
                q[(j - 1, k - 1)] += atom * mode_mean_1d(j) * mode_mean_1d(k);
            }
        }
    }
    if matches!(measure.kind, MeasureKind::PointMassAtZero) {
        return q;
    }

    // Shared quadrature nodes on the half line with effective weights that
    // already include the radial density (and the ±ξ symmetry factor 2).
    let support = measure.support_radius();
    let r_cut = support.unwrap_or(2.0 * n as f64 + 8.0);
    let (glx, glw) = gauss_legendre(budget.gl_points).clone();
    let mut nodes: Vec<(f64, f64)> = Vec::new();

    let inner_cap = r_cut.min(1.0);
    let s = measure.origin_exponent();
    if s != 0.0 {
        // Graded origin block: r = u^{1/(1+s)} gives ℓ(r) dr = c du/(1+s).
        let c = riesz_constant(
            match measure.kind {
                MeasureKind::Riesz { kappa } => kappa,
                _ => unreachable!(),
            },
            1,
        );
        let qexp = 1.0 + s;
        let upper = inner_cap.powf(qexp);
        for (x, w) in glx.iter().zip(&glw) {
            let u = 0.5 * upper * (x + 1.0);
            let wq = 0.5 * upper * w;
            nodes.push((u.powf(1.0 / qexp), 2.0 * wq * c / qexp));
        }
    } else {
        for (x, w) in glx.iter().zip(&glw) {
            let r = 0.5 * inner_cap * (x + 1.0);
            let wq = 0.5 * inner_cap * w;
            nodes.push((r, 2.0 * wq * measure.radial_density(r)));
        }
    }
    // Unit oscillatory blocks out to the cutoff (~2 oscillation periods per
    // block, well inside a 32-point panel).
    let mut lo = 1.0;
    while lo < r_cut {
        let hi = (lo + 1.0).min(r_cut);
        for (x, w) in glx.iter().zip(&glw) {
            let r = 0.5 * (hi - lo) * (x + 1.0) + lo;
            let wq = 0.5 * (hi - lo) * w;
            nodes.push((r, 2.0 * wq * measure.radial_density(r)));
        }
        lo = hi;
    }

    // Cache mode transforms at every node.
    let cache: Vec<Vec<Complex<f64>>> = nodes
        .iter()
        .map(|(r, _)| (1..=n).map(|k| sine_mode_transform(k, *r)).collect())
        .collect();

    for j in 1..=n {
        for k in j..=n {
            if (j + k) % 2 == 1 {
                continue; // mixed parity: exactly zero for symmetric measures
            }
            let mut acc = 0.0;
            for (node, fs) in nodes.iter().zip(&cache) {
                acc += node.1 * (fs[j - 1] * fs[k - 1].conj()).re;
            }
            if support.is_none() {
                // Far tail: the oscillatory component beyond r_cut integrates
                // to O(r_cut^{κ-5}) by parts and is dropped; the smooth DC
                // component is mapped to [0,1] via r = r_cut/u.
                acc += gl_panel(
                    |u| {
                        if u <= 0.0 {
                            return 0.0;
                        }
                        let r = r_cut / u;
                        measure.radial_density(r) * dc_product(j, k, r) * r_cut / (u * u)
                    },
                    0.0,
                    1.0,
                    64,
                );
            }
            q[(j - 1, k - 1)] += acc;
            if j != k {
                q[(k - 1, j - 1)] += acc;
            }
        }
    }
    q
}

fn gram_matrix_2d(measure: &SpectralMeasure, n: usize, budget: &QuadBudget) -> DMatrix<f64> {
    let total = n * n;
    let mut q = DMatrix::zeros(total, total);
    let atom = measure.atom();
    if atom > 0.0 {
        let means: Vec<f64> = (0..total)
            .map(|flat| mode_mean_1d(flat % n + 1) * mode_mean_1d(flat / n + 1))
            .collect();
        for a in 0..total {
            for b in 0..total {
                q[(a, b)] += atom * means[a] * means[b];
            }
        }
    }
    if matches!(measure.kind, MeasureKind::PointMassAtZero) {
        return q;
    }

    let support = measure.support_radius();
    let r_cut = support.unwrap_or(2.0 * n as f64 + 16.0);
    let (glx, glw) = gauss_legendre(budget.gl_points).clone();

    // Polar nodes: radial blocks × angular rings whose resolution grows
    // with the ring radius (the transforms oscillate like e^{2πi r cosθ}).
    let mut ring_r: Vec<(f64, f64)> = Vec::new();
    let s = measure.origin_exponent() + 1.0; // density × Jacobian r
    if measure.origin_exponent() != 0.0 {
        let c = riesz_constant(
            match measure.kind {
                MeasureKind::Riesz { kappa } => kappa,
                _ => unreachable!(),
            },
            2,
        );
        let qexp = 1.0 + s;
        let upper = r_cut.min(1.0).powf(qexp);
        for (x, w) in glx.iter().zip(&glw) {
            let u = 0.5 * upper * (x + 1.0);
            let wq = 0.5 * upper * w;
            ring_r.push((u.powf(1.0 / qexp), wq * c / qexp));
        }
    } else {
        let cap = r_cut.min(1.0);
        for (x, w) in glx.iter().zip(&glw) {
            let r = 0.5 * cap * (x + 1.0);
            let wq = 0.5 * cap * w;
            ring_r.push((r, wq * measure.radial_density(r) * r));
        }
    }
    let mut lo = 1.0;
    while lo < r_cut {
        let hi = (lo + 1.0).min(r_cut);
        for (x, w) in glx.iter().zip(&glw) {
            let r = 0.5 * (hi - lo) * (x + 1.0) + lo;
            let wq = 0.5 * (hi - lo) * w;
            ring_r.push((r, wq * measure.radial_density(r) * r));
        }
        lo = hi;
    }

    // Accumulate per-axis transform caches ring by ring.
    let two_pi = 2.0 * std::f64::consts::PI;
    for (r, wr) in ring_r {
        if wr == 0.0 {
            continue;
        }
        let n_theta = 32 * (1 + ((8.0 * r + 32.0) / 32.0).ceil() as usize);
        let dtheta = two_pi / n_theta as f64;
        for it in 0..n_theta {
            // Midpoint rule in θ: spectrally accurate for periodic smooth
            // integrands.
            let theta = (it as f64 + 0.5) * dtheta;
            let xi1 = r * theta.cos();
            let xi2 = r * theta.sin();
            let f1: Vec<Complex<f64>> = (1..=n).map(|m| sine_mode_transform(m, xi1)).collect();
            let f2: Vec<Complex<f64>> = (1..=n).map(|m| sine_mode_transform(m, xi2)).collect();
            let w = wr * dtheta;
            for a in 0..total {
                let (a1, a2) = (a % n + 1, a / n + 1);
                for b in a..total {
                    let (b1, b2) = (b % n + 1, b / n + 1);
                    if (a1 + b1) % 2 == 1 || (a2 + b2) % 2 == 1 {
                        continue;
                    }
                    let term = (f1[a1 - 1] * f1[b1 - 1].conj() * f2[a2 - 1] * f2[b2 - 1].conj()).re;
                    q[(a, b)] += w * term;
                    if a != b {
                        q[(b, a)] += w * term;
                    }
                }
            }
        }
    }
    q
}

/// Result of checking the defining Fourier pairing ∫ f φ dx = ∫ Fφ dλ for a
/// Gaussian test function of a given width.
#[derive(Debug, Clone)]
pub struct FourierPairCheck {
    pub width: f64,
    pub physical_side: f64,
    pub spectral_side: f64,
    pub relative_residual: f64,
}

/// Validates the (f, λ) pair for Gaussian test functions φ_w(x) =
/// e^{-|x|²/(2w²)}, whose transform is known in closed form. Supports the
/// measures whose kernel f has a usable closed form (point mass, Riesz in
/// d=1,2, ball in d=1).
pub fn validate_fourier_pair(
    measure: &SpectralMeasure,
    widths: &[f64],
    budget: &QuadBudget,
) -> Result<Vec<FourierPairCheck>, NoiseError> {
    let measure = measure.clone().validated()?;
    let d = measure.dimension as f64;
    let pi = std::f64::consts::PI;
    let mut out = Vec::with_capacity(widths.len());
    for &w in widths {
        assert!(w > 0.0);
        // Fφ(ξ) = (2π w²)^{d/2} e^{-2π²w²|ξ|²}.
        let transform_amp = (2.0 * pi * w * w).powf(d / 2.0);
        let spectral_profile = move |r: f64| transform_amp * (-2.0 * pi * pi * w * w * r * r).exp();
        let spectral_side = radial_integral(
            &measure,
            spectral_profile,
            budget.max_tail_levels,
            "fourier-pair spectral side",
        )?;

        let physical_side = match &measure.kind {
            MeasureKind::PointMassAtZero => {
                // f ≡ 1: ∫ φ = (2π)^{d/2} w^d.
                (2.0 * pi).powf(d / 2.0) * w.powf(d)
            }
            MeasureKind::Riesz { kappa } => {
                // ∫ |x|^{-κ} φ_w = surface · ∫ r^{d-1-κ} e^{-r²/2w²} dr.
                let surface = measure.sphere_surface();
                let s = d - 1.0 - kappa;
                let qexp = 1.0 + s;
                let upper = 1.0f64.powf(qexp);
                let origin = gl_panel(
                    |u| {
                        let r = u.powf(1.0 / qexp);
                        (-r * r / (2.0 * w * w)).exp() / qexp
                    },
                    0.0,
                    upper,
                    64,
                );
                let tail = adaptive_simpson(
                    &|r: f64| r.powf(s) * (-r * r / (2.0 * w * w)).exp(),
                    1.0,
                    1.0 + 10.0 * w,
                    1e-13,
                )
                .ok_or_else(|| NoiseError::QuadratureNonConvergence {
                    context: "fourier-pair physical side (riesz tail)".into(),
                })?;
                surface * (origin + tail)
            }
            MeasureKind::BallUniform { radius } => {
                if measure.dimension != 1 {
                    return Err(NoiseError::Unsupported(
                        "ball-uniform kernel check implemented for d=1 only".into(),
                    ));
                }
                // f(x) = sin(2πRx)/(πx), f(0) = 2R.
                let rr = *radius;
                let f = move |x: f64| {
                    if x.abs() < 1e-8 {
                        2.0 * rr * (1.0 - (2.0 * pi * rr * x).powi(2) / 6.0)
                    } else {
                        (2.0 * pi * rr * x).sin() / (pi * x)
                    }
                };
                let upper = 1.0 + 10.0 * w;
                let mut acc = 0.0;
                let mut lo = 0.0;
                while lo < upper {
                    let hi = (lo + 0.25 / rr.max(0.25)).min(upper);
                    acc += gl_panel(|x| f(x) * (-x * x / (2.0 * w * w)).exp(), lo, hi, 32);
                    lo = hi;
                }
                2.0 * acc
            }
            MeasureKind::TabulatedRadial { .. } => {
                return Err(NoiseError::Unsupported(
                    "tabulated measures have no closed-form kernel to check against".into(),
                ));
            }
        };
        let denom = physical_side.abs().max(spectral_side.abs()).max(f64::MIN_POSITIVE);
        out.push(FourierPairCheck {
            width: w,
            physical_side,
            spectral_side,
            relative_residual: (physical_side - spectral_side).abs() / denom,
        });
    }
    Ok(out)
}

/// Empirical comparison of the two constructions of the stochastic integral
/// of a piecewise-constant deterministic integrand: one direct Gaussian draw
/// with the exact variance per step, against the mode-series expansion
/// through the Gram factor.
#[derive(Debug, Clone)]
pub struct WalshSeriesCheck {
    pub exact_variance: f64,
    pub direct_mean: f64,
    pub direct_variance: f64,
    pub series_mean: f64,
    pub series_variance: f64,
    /// Largest moment mismatch measured in CLT standard errors.
    pub max_deviation_se: f64,
}

/// `step_coeffs[s]` holds the sine-basis coefficients of the integrand on
/// step s (length dim). Both routes are estimated over `trials`
/// realizations; first and second moments are compared against each other
/// and the exact variance in CLT units.
pub fn walsh_vs_series_check<R: Rng>(
    gram: &HGram,
    step_coeffs: &[DVector<f64>],
    dt: f64,
    trials: usize,
    rng: &mut R,
) -> Result<WalshSeriesCheck, NoiseError> {
    assert!(trials >= 2);
    let mut norms = Vec::with_capacity(step_coeffs.len());
    let mut projected: Vec<DVector<f64>> = Vec::with_capacity(step_coeffs.len());
    for g in step_coeffs {
        norms.push(self::HGram::norm_sq(gram, g)?.max(0.0).sqrt());
        projected.push(gram.factor.transpose() * g);
    }
    let exact_variance: f64 = norms.iter().map(|n| n * n * dt).sum();

    let mut direct = Vec::with_capacity(trials);
    let mut series = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut a = 0.0;
        let mut b = 0.0;
        for (norm, proj) in norms.iter().zip(&projected) {
            let z: f64 = rng.sample(StandardNormal);
            a += norm * dt.sqrt() * z;
            let zv = DVector::from_fn(gram.rank, |_, _| rng.sample::<f64, _>(StandardNormal));
            b += proj.dot(&zv) * dt.sqrt();
        }
        direct.push(a);
        series.push(b);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    let (md, ms) = (mean(&direct), mean(&series));
    let (vd, vs) = (var(&direct, md), var(&series, ms));
    let n = trials as f64;
    // CLT scales: se(mean) = σ/√n, se(var) ≈ σ²√(2/n) for Gaussian data.
    let sigma2 = exact_variance.max(f64::MIN_POSITIVE);
    let se_mean = (sigma2 / n).sqrt();
    let se_var = sigma2 * (2.0 / n).sqrt();
    let dev = [
        (md - 0.0).abs() / se_mean,
        (ms - 0.0).abs() / se_mean,
        (vd - exact_variance).abs() / se_var,
        (vs - exact_variance).abs() / se_var,
        (vd - vs).abs() / (se_var * std::f64::consts::SQRT_2),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    Ok(WalshSeriesCheck {
        exact_variance,
        direct_mean: md,
        direct_variance: vd,
        series_mean: ms,
        series_variance: vs,
        max_deviation_se: dev,
    })
}
