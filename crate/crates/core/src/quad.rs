//! Shared quadrature machinery: Gauss-Legendre panels, adaptive Simpson,
//! graded substitutions for endpoint singularities, and a dyadic tail
//! integrator that distinguishes convergence from divergence.

use std::sync::OnceLock;

/// Nodes and weights for an n-point Gauss-Legendre rule on [-1, 1].
///
/// Computed once by Newton iteration on the Legendre polynomial; the
/// iteration is deterministic, so repeated runs produce identical rules.
fn gauss_legendre_raw(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Recurrence for P_n(x) and P'_n(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

static GL16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
static GL32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
static GL64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();

/// Cached Gauss-Legendre rule; `n` must be one of 16, 32, 64.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    match n {
        16 => GL16.get_or_init(|| gauss_legendre_raw(16)),
        32 => GL32.get_or_init(|| gauss_legendre_raw(32)),
        64 => GL64.get_or_init(|| gauss_legendre_raw(64)),
        _ => panic!("unsupported Gauss-Legendre order {n}"),
    }
}

/// ∫_a^b f dx by an n-point Gauss-Legendre panel.
pub fn gl_panel<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + c * x);
    }
    c * acc
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
///
/// Returns `None` when the recursion depth limit is reached before the
/// tolerance is met, so callers can surface non-convergence instead of
/// silently accepting a bad value.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Option<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
        let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
        Some(l + r)
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Outcome of a tail integral ∫_{r0}^∞ g dr over dyadic blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum TailOutcome {
    /// Converged; carries the value including a geometric extrapolation of
    /// the remainder beyond the last block.
    Converged(f64),
    /// Block contributions failed to decay after the level cap; carries the
    /// partial sum and the last observed block ratio.
    Diverged { partial: f64, last_ratio: f64 },
}

/// Integrates a nonnegative, eventually-monotone integrand over
/// [r0, ∞) using dyadic blocks [r0·2^i, r0·2^{i+1}] with 64-point
/// Gauss-Legendre panels per block.
///
/// The block sums of a power-law integrand form a geometric sequence; the
/// observed ratio decides convergence. `max_levels` caps the refinement
/// (the hypothesis-violated detection path).
pub fn dyadic_tail<F: FnMut(f64) -> f64>(
    mut g: F,
    r0: f64,
    tol: f64,
    max_levels: usize,
) -> TailOutcome {
    let mut sum = 0.0;
    let mut prev_block = f64::NAN;
    let mut last_ratio = f64::NAN;
    let mut lo = r0;
    for level in 0..max_levels {
        let hi = lo * 2.0;
        // Two panels per block keeps the per-block error well below the
        // geometric-ratio resolution.
        let mid = 0.5 * (lo + hi);
        let block = gl_panel(&mut g, lo, mid, 64) + gl_panel(&mut g, mid, hi, 64);
        sum += block;
        if prev_block.is_finite() && prev_block > 0.0 {
            last_ratio = block / prev_block;
            if block.abs() < tol && last_ratio < 0.999 {
                let remainder = if last_ratio > 0.0 && last_ratio < 1.0 {
                    block * last_ratio / (1.0 - last_ratio)
                } else {
                    0.0
                };
                return TailOutcome::Converged(sum + remainder);
            }
        } else if block.abs() < tol && level > 0 {
            return TailOutcome::Converged(sum);
        }
        prev_block = block;
        lo = hi;
    }
    if last_ratio.is_finite() && last_ratio < 0.999 {
        let remainder = if last_ratio > 0.0 {
            prev_block * last_ratio / (1.0 - last_ratio)
        } else {
            0.0
        };
        TailOutcome::Converged(sum + remainder)
    } else {
        TailOutcome::Diverged { partial: sum, last_ratio }
    }
}

/// ∫_0^{r0} r^s g(r) dr for s > -1, via the grading r = u^{1/(1+s)}.
///
/// The substitution absorbs the algebraic endpoint singularity exactly:
/// r^s dr = du/(1+s) up to the power map, leaving a smooth integrand.
pub fn graded_origin<F: FnMut(f64) -> f64>(mut g: F, r0: f64, s: f64, gl: usize) -> f64 {
    assert!(s > -1.0, "non-integrable origin exponent {s}");
    let q = 1.0 + s;
    let upper = r0.powf(q);
    gl_panel(|u| g(u.powf(1.0 / q)) / q, 0.0, upper, gl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_panel_exact_on_polynomials() {
        // GL-16 integrates degree-31 polynomials exactly.
        let val = gl_panel(|x| x.powi(7) - 3.0 * x.powi(4) + 2.0, -1.0, 2.0, 16);
        let exact = |x: f64| x.powi(8) / 8.0 - 3.0 * x.powi(5) / 5.0 + 2.0 * x;
        assert!((val - (exact(2.0) - exact(-1.0))).abs() < 1e-13);
    }

    #[test]
    fn simpson_matches_known_integral() {
        let v = adaptive_simpson(&|x: f64| (-x * x).exp(), 0.0, 6.0, 1e-12).unwrap();
        assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn graded_handles_inverse_sqrt() {
        // ∫_0^1 r^{-1/2} dr = 2.
        let v = graded_origin(|_| 1.0, 1.0, -0.5, 32);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dyadic_tail_converges_on_power_law() {
        // ∫_1^∞ r^{-3} dr = 1/2.
        match dyadic_tail(|r| r.powi(-3), 1.0, 1e-14, 40) {
            TailOutcome::Converged(v) => assert!((v - 0.5).abs() < 1e-9, "got {v}"),
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn dyadic_tail_flags_divergence() {
        // ∫_1^∞ r^{-1} dr diverges; ratio stays at 1 across blocks.
        match dyadic_tail(|r| 1.0 / r, 1.0, 1e-14, 20) {
            TailOutcome::Diverged { last_ratio, .. } => {
                assert!((last_ratio - 1.0).abs() < 1e-6);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
