//! Closed-form evaluation of the explicit constants appearing in the moment
//! bounds for the stochastic convolution and in the transportation
//! inequality, including the two one-dimensional minimizations (over the
//! factorization exponent α and over the auxiliary moment order q) that the
//! displays leave implicit.
//!
//! Several of these constants are astronomically large for realistic
//! parameters: the q-infimum constant easily exceeds 1e20 and the final
//! Gronwall constant exp(6 C L²T) then overflows f64. All evaluations are
//! therefore carried in log space internally, and both the value (possibly
//! +inf) and its natural log are exposed.

use serde::Serialize;
use thiserror::Error;

use crate::noise::{radial_integral, NoiseError, QuadBudget, SpectralMeasure};

#[derive(Debug, Error)]
pub enum ConstantsError {
    #[error("alpha window empty: requires p > {threshold} (got p = {p})")]
    EmptyWindow { p: f64, threshold: f64 },
    #[error("integrability condition violated: {0}")]
    ConditionViolated(String),
    #[error("K_eta integral diverged: hypothesis violated ({context}, block ratio {last_ratio:.4})")]
    KEtaDiverged { context: String, last_ratio: f64 },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid input: {0}")]
    BadInput(String),
}

/// K_η = ∫ (1+|ξ|²)^{-η} λ(dξ), by adaptive radial quadrature with
/// tail-divergence detection. A divergent tail is the distinct
/// "hypothesis violated" outcome, not a numerical failure.
pub fn k_eta(measure: &SpectralMeasure, eta: f64) -> Result<f64, ConstantsError> {
    if !(0.0..1.0).contains(&eta) {
        return Err(ConstantsError::BadInput(format!("eta must lie in [0,1), got {eta}")));
    }
    let psi = move |r: f64| (1.0 + r * r).powf(-eta);
    match radial_integral(measure, psi, measure_budget(measure).max_tail_levels, "K_eta") {
        Ok(v) => Ok(v),
        Err(NoiseError::QuadratureDiverged { context, last_ratio }) => {
            Err(ConstantsError::KEtaDiverged { context, last_ratio })
        }
        Err(e) => Err(e.into()),
    }
}

fn measure_budget(_measure: &SpectralMeasure) -> QuadBudget {
    QuadBudget::default()
}

/// Smallest moment order for which the α-window opens.
pub fn p_threshold(d: usize, eta: f64) -> f64 {
    (4.0 + d as f64) / (1.0 - eta)
}

/// The open α-interval ((d+2)/2p, 1/2 - 1/p - η/2); nonempty exactly when
/// p exceeds (4+d)/(1-η).
pub fn alpha_window(p: f64, d: usize, eta: f64) -> Result<(f64, f64), ConstantsError> {
    let lo = (d as f64 + 2.0) / (2.0 * p);
    let hi = 0.5 - 1.0 / p - eta / 2.0;
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(ConstantsError::EmptyWindow { p, threshold: p_threshold(d, eta) })
    }
}

/// ln C'_{T,p,α} = ln [ |sin(πα)/π|^p (4π)^{-d/2}
///                      ((p-1)/(αp-1-d/2))^{p-1} T^{αp-d/2} ].
pub fn ln_c_prime(t_horizon: f64, p: f64, alpha: f64, d: usize) -> Result<f64, ConstantsError> {
    let df = d as f64;
    let denom = alpha * p - 1.0 - df / 2.0;
    if denom <= 0.0 {
        return Err(ConstantsError::ConditionViolated(format!(
            "need alpha > d/(2p) + 1/p, i.e. alpha > {}; got {alpha}",
            (df / 2.0 + 1.0) / p
        )));
    }
    let pi = std::f64::consts::PI;
    let sin_term = (alpha * pi).sin().abs() / pi;
    Ok(p * sin_term.ln()
        - df / 2.0 * (4.0 * pi).ln()
        + (p - 1.0) * ((p - 1.0).ln() - denom.ln())
        + (alpha * p - df / 2.0) * t_horizon.ln())
}

/// C'_{T,p,α}; zero (degenerate) when sin(πα) = 0.
pub fn c_prime(t_horizon: f64, p: f64, alpha: f64, d: usize) -> Result<f64, ConstantsError> {
    ln_c_prime(t_horizon, p, alpha, d).map(f64::exp)
}

/// ln of the closed-form bound on C''_{T,p,α,η}:
/// ¼ (8pK_η)^{p/2} [ ((p-2)/(p-2-2αp))^{(p-2)/2} T^{p/2-1-αp}
///   + (η/8π²)^{η(p-2)/2} ((p-2)/(p-2-2αp-ηp))^{(p-2)/2} T^{p/2-1-αp-ηp/2} ].
pub fn ln_c_double_prime(
    t_horizon: f64,
    p: f64,
    alpha: f64,
    eta: f64,
    k_eta: f64,
) -> Result<f64, ConstantsError> {
    if p <= 2.0 {
        return Err(ConstantsError::BadInput(format!("need p > 2, got {p}")));
    }
    let d1 = p - 2.0 - 2.0 * alpha * p;
    let d2 = p - 2.0 - 2.0 * alpha * p - eta * p;
    if d2 <= 0.0 {
        return Err(ConstantsError::ConditionViolated(format!(
            "need alpha < 1/2 - 1/p - eta/2 = {}; got {alpha}",
            0.5 - 1.0 / p - eta / 2.0
        )));
    }
    let pi = std::f64::consts::PI;
    let half_pm2 = (p - 2.0) / 2.0;
    let ln_t = t_horizon.ln();
    let term1 = half_pm2 * ((p - 2.0) / d1).ln() + (p / 2.0 - 1.0 - alpha * p) * ln_t;
    // η^{η(p-2)/2} → 1 as η → 0 (the exponent vanishes first).
    let eta_coef = if eta > 0.0 {
        eta * half_pm2 * (eta / (8.0 * pi * pi)).ln()
    } else {
        0.0
    };
    let term2 = eta_coef
        + half_pm2 * ((p - 2.0) / d2).ln()
        + (p / 2.0 - 1.0 - alpha * p - eta * p / 2.0) * ln_t;
    Ok((0.25f64).ln() + p / 2.0 * (8.0 * p * k_eta).ln() + log_sum_exp(term1, term2))
}

pub fn c_double_prime(
    t_horizon: f64,
    p: f64,
    alpha: f64,
    eta: f64,
    k_eta: f64,
) -> Result<f64, ConstantsError> {
    ln_c_double_prime(t_horizon, p, alpha, eta, k_eta).map(f64::exp)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Result of the α-minimization for the uniform-metric moment constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CTpEta {
    pub value: f64,
    pub ln_value: f64,
    pub argmin_alpha: f64,
}

/// C_{T,p,η} = min over the open α-window of C'·C''. The window is shrunk
/// by 1e-6 at both ends (the infimum is approached from the interior; both
/// endpoints blow up), scanned coarsely, then refined by golden section.
pub fn c_t_p_eta(
    t_horizon: f64,
    p: f64,
    eta: f64,
    d: usize,
    k_eta: f64,
) -> Result<CTpEta, ConstantsError> {
    let (lo, hi) = alpha_window(p, d, eta)?;
    let lo = lo + 1e-6;
    let hi = hi - 1e-6;
    if lo >= hi {
        return Err(ConstantsError::EmptyWindow { p, threshold: p_threshold(d, eta) });
    }
    let objective = |alpha: f64| -> f64 {
        match (
            ln_c_prime(t_horizon, p, alpha, d),
            ln_c_double_prime(t_horizon, p, alpha, eta, k_eta),
        ) {
            (Ok(a), Ok(b)) => a + b,
            _ => f64::INFINITY,
        }
    };
    let (argmin, ln_value) = scan_then_golden(objective, lo, hi, 64);
    Ok(CTpEta { value: ln_value.exp(), ln_value, argmin_alpha: argmin })
}

/// Coarse grid scan followed by golden-section refinement on the bracket
/// around the best grid point. Deterministic for fixed inputs.
fn scan_then_golden<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, coarse: usize) -> (f64, f64) {
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    let h = (hi - lo) / coarse as f64;
    for i in 0..=coarse {
        let x = lo + h * i as f64;
        let v = f(x);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = lo + h * best_i.saturating_sub(1) as f64;
    let mut b = (lo + h * (best_i + 1) as f64).min(hi);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    let xm = 0.5 * (a + b);
    let fm = f(xm);
    if fm <= f1 && fm <= f2 {
        (xm, fm)
    } else if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// ln of the explicit closed-form upper bound on C_{T,p,η}. Evaluated
/// exactly as displayed; at η = 0 a factor (p-2)/(pη) inside the max
/// diverges and the bound is +inf (still a valid upper bound).
pub fn ln_c_t_p_eta_bound(
    t_horizon: f64,
    p: f64,
    eta: f64,
    d: usize,
    k_eta: f64,
) -> Result<f64, ConstantsError> {
    alpha_window(p, d, eta)?;
    let df = d as f64;
    let pi = std::f64::consts::PI;
    let ln_t = t_horizon.ln();
    let ln_a = (1.5 * p - 2.0) * ((3.0 * p - 4.0) / (p - 4.0 - df)).ln();
    let ln_b = if eta > 0.0 {
        (p - 1.0) * (2.0 * (p - 1.0) / ((1.0 - eta) * p - 4.0 - df)).ln()
            + (p / 2.0 - 1.0) * ((p - 2.0) / (p * eta)).ln()
    } else {
        f64::INFINITY
    };
    let ln_first = ln_a.max(ln_b) + (p / 2.0 - 1.0 - df / 2.0) * ln_t;
    let eta_coef = if eta > 0.0 {
        eta * (p - 2.0) / 2.0 * (eta / (8.0 * pi * pi)).ln()
    } else {
        0.0
    };
    let ln_second = eta_coef
        + (1.5 * p - 2.0) * ((3.0 * p - 4.0) / ((1.0 - eta) * p - 4.0 - df)).ln()
        + ((1.0 - eta) * p / 2.0 - 1.0 - df / 2.0) * ln_t;
    Ok(p / 2.0 * p.ln()
        + (0.25f64).ln()
        + df / 2.0 * (1.0 / (4.0 * pi)).ln()
        + p * ((8.0 * k_eta).sqrt() / pi).ln()
        + log_sum_exp(ln_first, ln_second))
}

pub fn c_t_p_eta_bound(
    t_horizon: f64,
    p: f64,
    eta: f64,
    d: usize,
    k_eta: f64,
) -> Result<f64, ConstantsError> {
    ln_c_t_p_eta_bound(t_horizon, p, eta, d, k_eta).map(f64::exp)
}

/// Result of the q-infimum for the small-p uniform-moment constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CTpEtaEps {
    pub value: f64,
    pub ln_value: f64,
    pub argmin_q: f64,
}

/// C_{T,p,η,ε} = inf over q > (4+d)/(1-η) of
/// (1 + qC_q/(q-p)) · p q^{-q/p} (q-p+qC_q)^{q/p-1} ε^{q/p-1},
/// with C_q the minimized constant at moment order q. The infimum is
/// located on a log-spaced q-grid and refined by golden section; the whole
/// computation runs in log space because C_q grows superexponentially in q.
pub fn c_t_p_eta_eps(
    t_horizon: f64,
    p: f64,
    eta: f64,
    eps: f64,
    d: usize,
    k_eta: f64,
) -> Result<CTpEtaEps, ConstantsError> {
    let q_min = p_threshold(d, eta);
    if !(p > 0.0 && p <= q_min) {
        return Err(ConstantsError::BadInput(format!(
            "small-p constant defined for 0 < p <= {q_min}, got {p}"
        )));
    }
    if eps <= 0.0 {
        return Err(ConstantsError::BadInput(format!("epsilon must be positive, got {eps}")));
    }
    let ln_objective = |ln_delta: f64| -> f64 {
        let q = q_min + ln_delta.exp();
        let ln_c = match c_t_p_eta(t_horizon, q, eta, d, k_eta) {
            Ok(c) => c.ln_value,
            Err(_) => return f64::INFINITY,
        };
        let ln_qc = q.ln() + ln_c;
        let ln_qmp = (q - p).ln();
        // ln(1 + qC/(q-p))
        let x = ln_qc - ln_qmp;
        let t1 = if x > 40.0 { x } else { x.exp().ln_1p() };
        // ln(q - p + qC)
        let t3 = log_sum_exp(ln_qmp, ln_qc);
        t1 + p.ln() - q / p * q.ln() + (q / p - 1.0) * (t3 + eps.ln())
    };
    // δ = q - q_min on a fixed log grid spanning six decades around q_min.
    let lo = (1e-3 * q_min).ln();
    let hi = (1e3 * q_min).ln();
    let (ln_delta_best, ln_value) = scan_then_golden(ln_objective, lo, hi, 120);
    if !ln_value.is_finite() {
        return Err(ConstantsError::BadInput(
            "no finite candidate found in the q-infimum".into(),
        ));
    }
    Ok(CTpEtaEps {
        value: ln_value.exp(),
        ln_value,
        argmin_q: q_min + ln_delta_best.exp(),
    })
}

/// Time-integrated bound C_{G,T,η} on ∫_0^T ‖G_t(x,·)‖²_H dt, exactly as
/// displayed: a small-T branch for T <= η/8π² and a large-T branch after.
pub fn c_g_t_eta(t_horizon: f64, eta: f64, k_eta: f64) -> f64 {
    assert!(t_horizon > 0.0 && (0.0..1.0).contains(&eta));
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let breakpoint = eta / (8.0 * pi2);
    if t_horizon <= breakpoint {
        (1.0 - eta).recip() * k_eta * breakpoint.powf(eta) * t_horizon.powf(1.0 - eta)
    } else {
        k_eta * t_horizon + eta * eta / (8.0 * pi2 * (1.0 - eta))
    }
}

/// Pointwise bound K_η (1 ∨ (η/8π²)^η t^{-η}) on ‖G_t(x,·)‖²_H.
pub fn g_h_norm_bound(t: f64, eta: f64, k_eta: f64) -> f64 {
    assert!(t > 0.0 && (0.0..1.0).contains(&eta));
    if eta == 0.0 {
        return k_eta;
    }
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    k_eta * 1.0f64.max((eta / (8.0 * pi2)).powf(eta) * t.powf(-eta))
}

/// The final Gronwall constant of the transportation inequality:
/// C = 6 K_σ² C_{G,T,η} exp(6 (C_{T,2,η,ε₀} L_σ² + T L_b²) T),
/// with ε₀ = 1/(6L_σ²). For L_σ = 0 the drift-variance term the ε-constant
/// controls vanishes identically and its exponent contribution is defined
/// as zero.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoremConstant {
    pub value: f64,
    pub ln_value: f64,
    pub c_g: f64,
    /// The small-p constant at (p=2, ε₀), when L_σ > 0.
    pub c_eps: Option<f64>,
    pub exponent: f64,
}

pub fn theorem_constant(
    t_horizon: f64,
    l_sigma: f64,
    l_b: f64,
    k_sigma: f64,
    eta: f64,
    k_eta: f64,
    d: usize,
) -> Result<TheoremConstant, ConstantsError> {
    if k_sigma <= 0.0 {
        return Err(ConstantsError::BadInput(format!("K_sigma must be positive, got {k_sigma}")));
    }
    if l_sigma < 0.0 || l_b < 0.0 {
        return Err(ConstantsError::BadInput("Lipschitz constants must be nonnegative".into()));
    }
    let c_g = c_g_t_eta(t_horizon, eta, k_eta);
    let (c_eps, sigma_term) = if l_sigma > 0.0 {
        let eps0 = 1.0 / (6.0 * l_sigma * l_sigma);
        let c = c_t_p_eta_eps(t_horizon, 2.0, eta, eps0, d, k_eta)?;
        (Some(c.value), c.value * l_sigma * l_sigma)
    } else {
        (None, 0.0)
    };
    let exponent = 6.0 * (sigma_term + t_horizon * l_b * l_b) * t_horizon;
    let ln_value = (6.0 * k_sigma * k_sigma * c_g).ln() + exponent;
    Ok(TheoremConstant { value: ln_value.exp(), ln_value, c_g, c_eps, exponent })
}

/// Everything the `constants` suite reports for one parameter set.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub k_eta: f64,
    /// Present when p exceeds the window threshold.
    pub alpha_window: Option<(f64, f64)>,
    pub c_prime_at_argmin: Option<f64>,
    pub c_double_prime_at_argmin: Option<f64>,
    pub c_t_p_eta: Option<CTpEta>,
    pub c_t_p_eta_bound: Option<f64>,
    pub ln_c_t_p_eta_bound: Option<f64>,
    /// Present when 0 < p <= threshold (the complementary regime).
    pub c_t_p_eta_eps: Option<CTpEtaEps>,
    pub c_g_t_eta: f64,
    pub theorem: TheoremConstant,
}

/// Inputs for a constants report.
#[derive(Debug, Clone)]
pub struct ConstantsInput {
    pub t_horizon: f64,
    pub p: f64,
    pub epsilon: f64,
    pub l_sigma: f64,
    pub l_b: f64,
    pub k_sigma: f64,
}

impl ConstantsReport {
    pub fn compute(
        measure: &SpectralMeasure,
        input: &ConstantsInput,
    ) -> Result<ConstantsReport, ConstantsError> {
        let eta = measure.eta;
        let d = measure.dimension;
        let ke = k_eta(measure, eta)?;
        let (window, cp, cdp, ctpe, bound, ln_bound, ctpe_eps) =
            match alpha_window(input.p, d, eta) {
                Ok(w) => {
                    let c = c_t_p_eta(input.t_horizon, input.p, eta, d, ke)?;
                    let cp = c_prime(input.t_horizon, input.p, c.argmin_alpha, d)?;
                    let cdp =
                        c_double_prime(input.t_horizon, input.p, c.argmin_alpha, eta, ke)?;
                    let lb = ln_c_t_p_eta_bound(input.t_horizon, input.p, eta, d, ke)?;
                    (Some(w), Some(cp), Some(cdp), Some(c), Some(lb.exp()), Some(lb), None)
                }
                Err(_) => {
                    let c =
                        c_t_p_eta_eps(input.t_horizon, input.p, eta, input.epsilon, d, ke)?;
                    (None, None, None, None, None, None, Some(c))
                }
            };
        let theorem = theorem_constant(
            input.t_horizon,
            input.l_sigma,
            input.l_b,
            input.k_sigma,
            eta,
            ke,
            d,
        )?;
        Ok(ConstantsReport {
            k_eta: ke,
            alpha_window: window,
            c_prime_at_argmin: cp,
            c_double_prime_at_argmin: cdp,
            c_t_p_eta: ctpe,
            c_t_p_eta_bound: bound,
            ln_c_t_p_eta_bound: ln_bound,
            c_t_p_eta_eps: ctpe_eps,
            c_g_t_eta: c_g_t_eta(input.t_horizon, eta, ke),
            theorem,
        })
    }

    /// Flat key-value lines, the machine-readable report format.
    pub fn key_value_lines(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let fmt = |v: f64| format!("{v:.17e}");
        out.push(("k_eta".into(), fmt(self.k_eta)));
        if let Some((lo, hi)) = self.alpha_window {
            out.push(("alpha_window_lo".into(), fmt(lo)));
            out.push(("alpha_window_hi".into(), fmt(hi)));
        }
        if let Some(v) = self.c_prime_at_argmin {
            out.push(("c_prime_at_argmin".into(), fmt(v)));
        }
        if let Some(v) = self.c_double_prime_at_argmin {
            out.push(("c_double_prime_at_argmin".into(), fmt(v)));
        }
        if let Some(c) = self.c_t_p_eta {
            out.push(("c_t_p_eta".into(), fmt(c.value)));
            out.push(("c_t_p_eta_ln".into(), fmt(c.ln_value)));
            out.push(("c_t_p_eta_argmin_alpha".into(), fmt(c.argmin_alpha)));
        }
        if let Some(v) = self.c_t_p_eta_bound {
            out.push(("c_t_p_eta_bound".into(), fmt(v)));
        }
        if let Some(v) = self.ln_c_t_p_eta_bound {
            out.push(("c_t_p_eta_bound_ln".into(), fmt(v)));
        }
        if let Some(c) = self.c_t_p_eta_eps {
            out.push(("c_t_p_eta_eps".into(), fmt(c.value)));
            out.push(("c_t_p_eta_eps_ln".into(), fmt(c.ln_value)));
            out.push(("c_t_p_eta_eps_argmin_q".into(), fmt(c.argmin_q)));
        }
        out.push(("c_g_t_eta".into(), fmt(self.c_g_t_eta)));
        out.push(("theorem_c".into(), fmt(self.theorem.value)));
        out.push(("theorem_c_ln".into(), fmt(self.theorem.ln_value)));
        if let Some(c) = self.theorem.c_eps {
            out.push(("theorem_c_eps0".into(), fmt(c)));
        }
        out
    }
}
