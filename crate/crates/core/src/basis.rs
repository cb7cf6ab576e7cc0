//! Dirichlet eigenstructure of the Laplacian on [0,1]^d and the associated
//! heat Green kernel.
//!
//! The kernel is represented by its exact sine eigenexpansion
//!
//!   G_t(x,y) = Σ_k e^{-π²|k|² t} e_k(x) e_k(y),
//!   e_k(x) = 2^{d/2} ∏_i sin(π k_i x_i),
//!
//! which makes the linear part of the heat semigroup exact. The module also
//! carries the free-space Gaussian kernel H_t used as a pointwise upper bound
//! for G_t, and the closed-form mode integrals behind the mass and L² bounds.

use thiserror::Error;

use crate::quad::gl_panel;

/// Largest spatial dimension supported by the toolkit.
pub const MAX_DIM: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("dimension {0} unsupported (expected 1 or 2)")]
    BadDimension(usize),
    #[error("mode index component must be >= 1, got {0}")]
    BadModeComponent(usize),
    #[error("mode index has {got} components, expected {expected}")]
    ModeDimensionMismatch { got: usize, expected: usize },
    #[error("point lies outside the closed cube [0,1]^d: coordinate {0}")]
    OutsideDomain(f64),
    #[error("time must be strictly positive, got {0} (G_0 is a distribution)")]
    NonpositiveTime(f64),
}

/// Multi-index of a Dirichlet sine mode; every component is >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(components: Vec<usize>) -> Result<Self, BasisError> {
        if components.is_empty() || components.len() > MAX_DIM {
            return Err(BasisError::BadDimension(components.len()));
        }
        for &k in &components {
            if k == 0 {
                return Err(BasisError::BadModeComponent(k));
            }
        }
        Ok(MultiIndex(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }

    /// π²|k|², the Dirichlet eigenvalue of -Δ for this mode.
    pub fn eigenvalue(&self) -> f64 {
        let pi = std::f64::consts::PI;
        pi * pi * self.0.iter().map(|&k| (k * k) as f64).sum::<f64>()
    }
}

fn check_point(x: &[f64], d: usize) -> Result<(), BasisError> {
    if x.len() != d {
        return Err(BasisError::BadDimension(x.len()));
    }
    for &xi in x {
        if !(0.0..=1.0).contains(&xi) {
            return Err(BasisError::OutsideDomain(xi));
        }
    }
    Ok(())
}

/// L²-normalized Dirichlet eigenfunction e_k(x) = 2^{d/2} ∏ sin(π k_i x_i).
pub fn eigenfunction(k: &MultiIndex, x: &[f64]) -> Result<f64, BasisError> {
    check_point(x, k.dim())?;
    let pi = std::f64::consts::PI;
    let mut v = 1.0;
    for (ki, xi) in k.components().iter().zip(x) {
        v *= std::f64::consts::SQRT_2 * (pi * *ki as f64 * xi).sin();
    }
    Ok(v)
}

/// Free-space Gaussian heat kernel H_t(x) = (4πt)^{-d/2} exp(-|x|²/4t).
#[derive(Debug, Clone, Copy)]
pub struct GaussKernel {
    pub dimension: usize,
}

impl GaussKernel {
    pub fn new(dimension: usize) -> Result<Self, BasisError> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(BasisError::BadDimension(dimension));
        }
        Ok(GaussKernel { dimension })
    }

    /// H_t evaluated at the displacement vector `x`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, BasisError> {
        if t <= 0.0 {
            return Err(BasisError::NonpositiveTime(t));
        }
        if x.len() != self.dimension {
            return Err(BasisError::BadDimension(x.len()));
        }
        let r2: f64 = x.iter().map(|xi| xi * xi).sum();
        let pi = std::f64::consts::PI;
        Ok((4.0 * pi * t).powf(-(self.dimension as f64) / 2.0) * (-r2 / (4.0 * t)).exp())
    }

    /// Total mass by quadrature over [-w, w]^d; used as a self-test that the
    /// normalization integrates to 1 over all of space.
    pub fn quadrature_mass(&self, t: f64, half_width: f64) -> Result<f64, BasisError> {
        if t <= 0.0 {
            return Err(BasisError::NonpositiveTime(t));
        }
        // Product structure: the d-dimensional mass is the 1-d mass^d.
        // Composite panels keep the kernel's narrow core resolved.
        let f = |x: f64| (4.0 * std::f64::consts::PI * t).powf(-0.5) * (-x * x / (4.0 * t)).exp();
        let blocks = (4.0 * half_width).ceil() as usize;
        let h = 2.0 * half_width / blocks as f64;
        let mut one_d = 0.0;
        for b in 0..blocks {
            let lo = -half_width + b as f64 * h;
            one_d += gl_panel(f, lo, lo + h, 32);
        }
        Ok(one_d.powi(self.dimension as i32))
    }
}

/// Truncated eigenexpansion of the Dirichlet heat kernel.
///
/// Immutable after construction; all evaluations are pure.
#[derive(Debug, Clone)]
pub struct GreenEvaluator {
    dimension: usize,
    mode_cutoff: usize,
    /// Eigenvalues π²|k|² for the flattened mode set (k_1 fastest).
    eigenvalues: Vec<f64>,
}

/// Terms with e^{-λt} below this threshold are dropped from kernel sums.
const TERM_FLOOR: f64 = 1e-300;

impl GreenEvaluator {
    pub fn new(dimension: usize, mode_cutoff: usize) -> Result<Self, BasisError> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(BasisError::BadDimension(dimension));
        }
        if mode_cutoff == 0 {
            return Err(BasisError::BadModeComponent(0));
        }
        let pi = std::f64::consts::PI;
        let n = mode_cutoff;
        let total = n.pow(dimension as u32);
        let mut eigenvalues = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut sq = 0usize;
            for _ in 0..dimension {
                let k = rem % n + 1;
                rem /= n;
                sq += k * k;
            }
            eigenvalues.push(pi * pi * sq as f64);
        }
        Ok(GreenEvaluator { dimension, mode_cutoff, eigenvalues })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn mode_cutoff(&self) -> usize {
        self.mode_cutoff
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// G_t(x,y) by the truncated eigensum. Rejects t <= 0.
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64, BasisError> {
        if t <= 0.0 {
            return Err(BasisError::NonpositiveTime(t));
        }
        check_point(x, self.dimension)?;
        check_point(y, self.dimension)?;
        let pi = std::f64::consts::PI;
        // The sine product is formed before the weight so the summands are
        // bitwise symmetric under swapping x and y.
        let g1 = |t: f64, a: f64, b: f64| {
            let mut acc = 0.0;
            for k in 1..=self.mode_cutoff {
                let lam = pi * pi * (k * k) as f64;
                let w = (-lam * t).exp();
                if w < TERM_FLOOR {
                    break;
                }
                let s = (pi * k as f64 * a).sin() * (pi * k as f64 * b).sin();
                acc += (2.0 * w) * s;
            }
            acc
        };
        // Separable: the d-dimensional kernel is the product of per-axis
        // kernels (eigenvalues add, eigenfunctions multiply).
        match self.dimension {
            1 => Ok(g1(t, x[0], y[0])),
            2 => Ok(g1(t, x[0], y[0]) * g1(t, x[1], y[1])),
            _ => unreachable!(),
        }
    }

    /// ∫_{[0,1]^d} G_t(x,y) dy via the closed-form mode integrals
    /// ∫_0^1 √2 sin(πky) dy = 2√2/(πk) for odd k (zero for even k).
    pub fn mass(&self, t: f64, x: &[f64]) -> Result<f64, BasisError> {
        if t <= 0.0 {
            return Err(BasisError::NonpositiveTime(t));
        }
        check_point(x, self.dimension)?;
        let pi = std::f64::consts::PI;
        let axis_mass = |t: f64, xi: f64| {
            let mut acc = 0.0;
            let mut k = 1usize;
            while k <= self.mode_cutoff {
                let lam = pi * pi * (k * k) as f64;
                let w = (-lam * t).exp();
                if w < TERM_FLOOR {
                    break;
                }
                acc += w * (4.0 / (pi * k as f64)) * (pi * k as f64 * xi).sin();
                k += 2;
            }
            acc
        };
        Ok(x.iter().map(|&xi| axis_mass(t, xi)).product())
    }

    /// ∫_{[0,1]^d} G_t(x,y)² dy = Σ_k e^{-2π²|k|²t} e_k(x)² (Parseval).
    pub fn l2(&self, t: f64, x: &[f64]) -> Result<f64, BasisError> {
        if t <= 0.0 {
            return Err(BasisError::NonpositiveTime(t));
        }
        check_point(x, self.dimension)?;
        let pi = std::f64::consts::PI;
        let axis_l2 = |t: f64, xi: f64| {
            let mut acc = 0.0;
            for k in 1..=self.mode_cutoff {
                let lam = pi * pi * (k * k) as f64;
                let w = (-2.0 * lam * t).exp();
                if w < TERM_FLOOR {
                    break;
                }
                let s = (pi * k as f64 * xi).sin();
                acc += w * 2.0 * s * s;
            }
            acc
        };
        Ok(x.iter().map(|&xi| axis_l2(t, xi)).product())
    }

    /// The Appendix-style L² upper bound (4π)^{-d/2} t^{-d/2}.
    pub fn l2_bound(&self, t: f64) -> f64 {
        (4.0 * std::f64::consts::PI * t).powf(-(self.dimension as f64) / 2.0)
    }

    /// |∫ G_t(x,z) G_s(z,y) dz - G_{t+s}(x,y)| with the composition integral
    /// done by composite Simpson on `quad_points` intervals per axis.
    ///
    /// A numerical self-test of the semigroup property; exact modulo
    /// quadrature error because the per-mode coefficients multiply as
    /// e^{-λt} e^{-λs} = e^{-λ(t+s)}.
    pub fn semigroup_residual(
        &self,
        t: f64,
        s: f64,
        x: &[f64],
        y: &[f64],
        quad_points: usize,
    ) -> Result<f64, BasisError> {
        if t <= 0.0 {
            return Err(BasisError::NonpositiveTime(t));
        }
        if s <= 0.0 {
            return Err(BasisError::NonpositiveTime(s));
        }
        check_point(x, self.dimension)?;
        check_point(y, self.dimension)?;
        let n = quad_points.max(2) & !1; // even interval count for Simpson
        let h = 1.0 / n as f64;
        let composed = match self.dimension {
            1 => {
                let mut acc = 0.0;
                for i in 0..=n {
                    let z = [i as f64 * h];
                    let w = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += w * self.eval(t, x, &z)? * self.eval(s, &z, y)?;
                }
                acc * h / 3.0
            }
            2 => {
                // Tensor Simpson; kernel factorization keeps this exact in
                // structure, the quadrature only sees smooth sine sums.
                let mut acc = 0.0;
                for i in 0..=n {
                    let wi = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    for j in 0..=n {
                        let wj = if j == 0 || j == n {
                            1.0
                        } else if j % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        let z = [i as f64 * h, j as f64 * h];
                        acc += wi * wj * self.eval(t, x, &z)? * self.eval(s, &z, y)?;
                    }
                }
                acc * h * h / 9.0
            }
            _ => unreachable!(),
        };
        Ok((composed - self.eval(t + s, x, y)?).abs())
    }
}

/// Smallest mode count whose slowest retained decay factor e^{-π²N²Δt}
/// drops below 1e-14, clamped to [8, 512]. The default cutoff rule for
/// simulation configs.
pub fn default_mode_cutoff(dt: f64) -> usize {
    let pi = std::f64::consts::PI;
    let n = (14.0 * std::f64::consts::LN_10 / (pi * pi * dt)).sqrt().ceil() as usize;
    n.clamp(8, 512)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn eigenfunction_boundary_and_midpoint() {
        let k = MultiIndex::new(vec![1]).unwrap();
        assert_close(eigenfunction(&k, &[0.0]).unwrap(), 0.0, 1e-15);
        assert_close(eigenfunction(&k, &[1.0]).unwrap(), 0.0, 1e-12);
        assert_close(eigenfunction(&k, &[0.5]).unwrap(), std::f64::consts::SQRT_2, 1e-15);
    }

    #[test]
    fn eigenfunction_2d_exact_values() {
        let k = MultiIndex::new(vec![1, 2]).unwrap();
        assert_close(eigenfunction(&k, &[0.5, 0.25]).unwrap(), 2.0, 1e-14);
    }

    #[test]
    fn eigenfunction_rejects_bad_input() {
        assert!(MultiIndex::new(vec![0]).is_err());
        let k = MultiIndex::new(vec![1]).unwrap();
        assert_eq!(eigenfunction(&k, &[1.5]), Err(BasisError::OutsideDomain(1.5)));
    }

    #[test]
    fn eigenfunction_l2_norm_is_one() {
        // Composite Simpson of e_k² over [0,1].
        let k = MultiIndex::new(vec![3]).unwrap();
        let n = 512;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let v = eigenfunction(&k, &[i as f64 * h]).unwrap();
            acc += w * v * v;
        }
        assert_close(acc * h / 3.0, 1.0, 1e-12);
    }

    #[test]
    fn green_fixture_value() {
        // Oracle: truncated eigensum Σ_k 2 e^{-π²k²·0.1} sin²(πk/2), frozen.
        let g = GreenEvaluator::new(1, 64).unwrap();
        let v = g.eval(0.1, &[0.5], &[0.5]).unwrap();
        assert_close(v, 0.745693231264826, 1e-12);
    }

    #[test]
    fn green_dominated_by_gauss_at_fixture() {
        let g = GreenEvaluator::new(1, 64).unwrap();
        let h = GaussKernel::new(1).unwrap();
        let gv = g.eval(0.1, &[0.5], &[0.5]).unwrap();
        let hv = h.eval(0.1, &[0.0]).unwrap();
        assert_close(hv, 0.8920620580763856, 1e-12);
        assert!(gv <= hv);
    }

    #[test]
    fn green_decays_for_large_time() {
        let g = GreenEvaluator::new(1, 64).unwrap();
        let v = g.eval(1000.0, &[0.3], &[0.7]).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn green_rejects_time_zero() {
        let g = GreenEvaluator::new(1, 16).unwrap();
        assert!(matches!(g.eval(0.0, &[0.5], &[0.5]), Err(BasisError::NonpositiveTime(_))));
    }

    #[test]
    fn mass_fixture_and_bounds() {
        let g = GreenEvaluator::new(1, 512).unwrap();
        // Oracle: Σ_{odd k} (4/πk) e^{-π²k²·0.1} sin(πk/2), frozen.
        let v = g.mass(0.1, &[0.5]).unwrap();
        assert_close(v, 0.47448746037974915, 1e-12);
        assert!(v > 0.0 && v < 1.0);
        // Dirichlet boundary: zero mass.
        assert_close(g.mass(0.1, &[0.0]).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn mass_monotone_toward_one_as_t_shrinks() {
        // The true gap 1 - mass is ~2·erfc(1/(4√t)): representable at
        // t = 1e-2, but ~1e-29 at t <= 1e-3, far below f64 resolution. The
        // monotone approach is asserted up to summation rounding there.
        let g = GreenEvaluator::new(1, 512).unwrap();
        let m2 = g.mass(1e-2, &[0.5]).unwrap();
        let m3 = g.mass(1e-3, &[0.5]).unwrap();
        let m4 = g.mass(1e-4, &[0.5]).unwrap();
        let rounding = 1e-12;
        assert!(m2 < m3 && m3 <= m4 + rounding && m4 <= 1.0 + rounding);
        assert!(1.0 - m2 > 1e-5 && 1.0 - m3 < 1e-6 && 1.0 - m4 < 1e-6);
    }

    #[test]
    fn l2_fixture_below_bound() {
        let g = GreenEvaluator::new(1, 64).unwrap();
        let v = g.l2(0.1, &[0.5]).unwrap();
        // Oracle: Parseval eigensum Σ_{odd k} 2 e^{-2π²k²·0.1}, frozen.
        assert_close(v, 0.2778223048035786, 1e-12);
        assert!(v < g.l2_bound(0.1));
    }

    #[test]
    fn l2_2d_below_bound() {
        let g = GreenEvaluator::new(2, 32).unwrap();
        let v = g.l2(0.05, &[0.5, 0.5]).unwrap();
        let bound = g.l2_bound(0.05);
        assert_close(bound, 1.5915494309189535, 1e-12);
        assert!(v < bound);
        // Large time: everything decays.
        assert!(g.l2(50.0, &[0.5, 0.5]).unwrap() < 1e-12);
    }

    #[test]
    fn semigroup_residual_small() {
        let g = GreenEvaluator::new(1, 64).unwrap();
        let r = g.semigroup_residual(0.05, 0.05, &[0.5], &[0.5], 256).unwrap();
        assert!(r < 1e-8, "residual {r}");
    }

    #[test]
    fn semigroup_residual_near_singular_limit() {
        // s = 1e-4 needs many modes and a finer mesh; looser tolerance.
        let g = GreenEvaluator::new(1, 256).unwrap();
        let r = g.semigroup_residual(0.1, 1e-4, &[0.5], &[0.5], 2048).unwrap();
        assert!(r < 1e-4, "residual {r}");
    }

    #[test]
    fn mode_coefficients_compose_exactly() {
        // Per-mode exponent additivity: e^{-λt} e^{-λs} = e^{-λ(t+s)}.
        let g = GreenEvaluator::new(1, 16).unwrap();
        for &lam in g.eigenvalues() {
            let lhs = (-lam * 0.2f64).exp() * (-lam * 0.05f64).exp();
            let rhs = (-lam * 0.25f64).exp();
            assert!((lhs - rhs).abs() <= 1e-16 * rhs.max(1.0));
        }
    }

    #[test]
    fn gauss_kernel_mass_is_one() {
        let h = GaussKernel::new(1).unwrap();
        let m = h.quadrature_mass(0.1, 8.0).unwrap();
        assert_close(m, 1.0, 1e-10);
        let h2 = GaussKernel::new(2).unwrap();
        assert_close(h2.quadrature_mass(0.05, 8.0).unwrap(), 1.0, 1e-10);
    }

    #[test]
    fn eigenvalues_positive_and_monotone_per_axis() {
        let g = GreenEvaluator::new(2, 6).unwrap();
        let n = 6;
        for k2 in 0..n {
            for k1 in 0..n {
                let lam = g.eigenvalues()[k1 + n * k2];
                assert!(lam > 0.0);
                if k1 + 1 < n {
                    assert!(g.eigenvalues()[k1 + 1 + n * k2] > lam);
                }
                if k2 + 1 < n {
                    assert!(g.eigenvalues()[k1 + n * (k2 + 1)] > lam);
                }
            }
        }
    }

    #[test]
    fn default_cutoff_satisfies_floor_rule() {
        let dt = 0.01;
        let n = default_mode_cutoff(dt);
        let pi = std::f64::consts::PI;
        assert!((-pi * pi * (n * n) as f64 * dt).exp() < 1e-14);
    }
}
