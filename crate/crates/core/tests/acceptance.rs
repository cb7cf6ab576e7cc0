//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line (visible with `--nocapture`, and on failure).
//!
//! Every tolerance is pinned here, in code. Monte Carlo checks are
//! one-sided with a 4-standard-error allowance and fixed seeds, so the
//! whole suite is deterministic.

use heatlab_core::basis::{GaussKernel, GreenEvaluator};
use heatlab_core::constants::{
    self, c_g_t_eta, c_t_p_eta, g_h_norm_bound, k_eta, ln_c_prime, ln_c_double_prime,
    ln_c_t_p_eta_bound, ConstantsInput, ConstantsReport,
};
use heatlab_core::harness::{self, Suite};
use heatlab_core::moments::{
    self, MomentExperiment, SigmaField,
};
use heatlab_core::noise::{HGram, QuadBudget, SpectralMeasure};
use heatlab_core::solver::{
    sup_metric, CoefficientSpec, DriftSpec, InitialCondition, ScalarFn, SimulationConfig,
    Simulator,
};
use heatlab_core::transport::{self, TransportExperiment};
use heatlab_core::rng::stream_rng;
use nalgebra::DVector;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("[acceptance] {criterion}: {} ({detail})", if pass { "pass" } else { "FAIL" });
    assert!(pass, "{criterion}: {detail}");
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (lo.ln(), hi.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Criterion 1: kernel suite on a (t,x,y) lattice in d = 1 and d = 2:
/// exact symmetry, Gaussian domination with slack >= -1e-8, mass in (0,1),
/// L² below (4π)^{-d/2} t^{-d/2}, semigroup residual < 1e-8 in d = 1.
#[test]
fn criterion_1_kernel_suite() {
    let times = log_spaced(1e-3, 1.0, 7);
    let coords: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut ok = true;
    let mut detail = String::new();

    // d = 1.
    let g1 = GreenEvaluator::new(1, 256).unwrap();
    let h1 = GaussKernel::new(1).unwrap();
    for &t in &times {
        for &x in &coords {
            for &y in &coords {
                let gxy = g1.eval(t, &[x], &[y]).unwrap();
                let gyx = g1.eval(t, &[y], &[x]).unwrap();
                if gxy.to_bits() != gyx.to_bits() {
                    ok = false;
                    detail = format!("symmetry broken at t={t}, x={x}, y={y}");
                }
                let hxy = h1.eval(t, &[x - y]).unwrap();
                if gxy > hxy + 1e-8 {
                    ok = false;
                    detail = format!("domination broken: G={gxy} > H={hxy} at t={t}");
                }
            }
            let mass = g1.mass(t, &[x]).unwrap();
            // The true gap 1 - mass falls below f64 resolution for t <= 1e-3;
            // the strict bound is asserted up to summation rounding.
            if !(mass > 0.0 && mass < 1.0 + 1e-12) {
                ok = false;
                detail = format!("mass {mass} outside (0,1) at t={t}, x={x}");
            }
            let l2 = g1.l2(t, &[x]).unwrap();
            if !(l2 < g1.l2_bound(t)) {
                ok = false;
                detail = format!("l2 {l2} above bound at t={t}, x={x}");
            }
        }
    }
    // Semigroup identity by quadrature (d = 1).
    for &(t, s, q) in &[(0.05, 0.05, 512usize), (0.1, 0.02, 512), (0.3, 0.2, 256)] {
        let r = g1.semigroup_residual(t, s, &[0.3], &[0.6], q).unwrap();
        if r >= 1e-8 {
            ok = false;
            detail = format!("semigroup residual {r} at t={t}, s={s}");
        }
    }

    // d = 2 on a smaller spatial lattice.
    let g2 = GreenEvaluator::new(2, 256).unwrap();
    let h2 = GaussKernel::new(2).unwrap();
    let coords2 = [0.25, 0.5, 0.75];
    for &t in &times {
        for &x1 in &coords2 {
            for &x2 in &coords2 {
                for &y1 in &coords2 {
                    for &y2 in &coords2 {
                        let x = [x1, x2];
                        let y = [y1, y2];
                        let gxy = g2.eval(t, &x, &y).unwrap();
                        let gyx = g2.eval(t, &y, &x).unwrap();
                        if gxy.to_bits() != gyx.to_bits() {
                            ok = false;
                            detail = format!("2d symmetry broken at t={t}");
                        }
                        let hxy = h2.eval(t, &[x1 - y1, x2 - y2]).unwrap();
                        if gxy > hxy + 1e-8 {
                            ok = false;
                            detail = format!("2d domination broken at t={t}: {gxy} > {hxy}");
                        }
                    }
                }
                let mass = g2.mass(t, &[x1, x2]).unwrap();
                if !(mass > 0.0 && mass < 1.0 + 1e-12) {
                    ok = false;
                    detail = format!("2d mass {mass} at t={t}");
                }
                let l2 = g2.l2(t, &[x1, x2]).unwrap();
                if !(l2 < g2.l2_bound(t)) {
                    ok = false;
                    detail = format!("2d l2 {l2} above bound at t={t}");
                }
            }
        }
    }
    if detail.is_empty() {
        detail = "symmetry, domination, mass, l2, semigroup on full lattice".into();
    }
    report("criterion 1 kernel suite", ok, &detail);
}

/// Criterion 2: the H-norm of the kernel slice through the Gram machinery
/// stays under K_η (1 ∨ (η/8π²)^η t^{-η}) on a log grid, and its time
/// integral stays under C_{G,T,η}, for the point mass and the Riesz
/// (d=1, κ=0.5, η=0.3) fixtures.
#[test]
fn criterion_2_kernel_h_norm_bounds() {
    let budget = QuadBudget::default();
    let fixtures = [
        SpectralMeasure::point_mass(1, 0.0),
        SpectralMeasure::riesz(1, 0.5, 0.3),
    ];
    let t_end = 1.0;
    // The point-mass bound at η = 0 is exactly 1 while the true norm at
    // t = 1e-3 sits 1e-29 below it, so the mode truncation must push its
    // oscillating remainder below rounding: N = 64 leaves O(1e-20).
    let n = 64;
    let xs = [0.125, 0.25, 0.5, 0.7, 0.9];
    let mut ok = true;
    let mut detail = String::new();
    for measure in &fixtures {
        let eta = measure.eta;
        let ke = k_eta(measure, eta).unwrap();
        let gram = HGram::build(measure, n, &budget).unwrap();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let h_norm_sq = |t: f64, x: f64| {
            let coeffs = DVector::from_iterator(
                n,
                (1..=n).map(|k| {
                    (-pi2 * (k * k) as f64 * t).exp()
                        * std::f64::consts::SQRT_2
                        * (std::f64::consts::PI * k as f64 * x).sin()
                }),
            );
            gram.norm_sq(&coeffs).unwrap()
        };
        for &t in &log_spaced(1e-3, t_end, 25) {
            for &x in &xs {
                let got = h_norm_sq(t, x);
                let bound = g_h_norm_bound(t, eta, ke) * (1.0 + 1e-12);
                if got > bound {
                    ok = false;
                    detail = format!("pointwise H-norm {got} > bound {bound} at t={t}, x={x} ({measure:?})");
                }
            }
        }
        // ∫_0^T ‖G_t(x,·)‖²_H dt by graded quadrature t = T u^{1/(1-η)}
        // (smooths the t^{-η} weight near zero).
        let q = 1.0 / (1.0 - eta);
        for &x in &xs {
            let integral = heatlab_core::quad::gl_panel(
                |u| {
                    let t = t_end * u.powf(q);
                    h_norm_sq(t, x) * t_end * q * u.powf(q - 1.0)
                },
                0.0,
                1.0,
                64,
            );
            let bound = c_g_t_eta(t_end, eta, ke);
            if integral > bound {
                ok = false;
                detail = format!("integrated H-norm {integral} > C_G {bound} at x={x} ({measure:?})");
            }
        }
    }
    if detail.is_empty() {
        detail = "pointwise and integrated H-norm bounds on both fixtures".into();
    }
    report("criterion 2 lemma bounds end-to-end", ok, &detail);
}

/// Criterion 3: constants fixtures reproduce (bit-identical across
/// re-evaluation, frozen values at 1e-12), the minimized constant stays
/// below the explicit displayed bound on a 3×3 (p, η) grid, and golden
/// section agrees with a 1e4-point grid scan to 1e-6 relative.
#[test]
fn criterion_3_constants_suite() {
    let mut ok = true;
    let mut detail = String::new();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);

    // Frozen fixtures (direct display evaluations).
    let cp = constants::c_prime(1.0, 6.0, 0.3, 1).unwrap();
    if rel(cp, 105.79994633750117) > 1e-12 {
        ok = false;
        detail = format!("c_prime fixture drifted: {cp}");
    }
    let cdp = constants::c_double_prime(1.0, 6.0, 0.3, 0.0, 1.0).unwrap();
    if rel(cdp, 5_529_600.0) > 1e-12 {
        ok = false;
        detail = format!("c_double_prime fixture drifted: {cdp}");
    }
    if rel(c_g_t_eta(1.0, 0.3, 2.0), 2.0016283761656806) > 1e-12 {
        ok = false;
        detail = "c_g fixture drifted".into();
    }
    if rel(g_h_norm_bound(1e-4, 0.5, 1.0), 7.957747154594768) > 1e-12 {
        ok = false;
        detail = "g_h_norm fixture drifted".into();
    }
    let ke_ball = k_eta(&SpectralMeasure::ball_uniform(1, 1.0, 0.5), 0.5).unwrap();
    if rel(ke_ball, 2.0 * (1.0 + 2.0f64.sqrt()).ln()) > 1e-9 {
        ok = false;
        detail = format!("k_eta ball fixture drifted: {ke_ball}");
    }

    // Bit-identical re-evaluation under the fixed default budget.
    let measure = SpectralMeasure::point_mass(1, 0.0);
    let input = ConstantsInput {
        t_horizon: 1.0,
        p: 6.0,
        epsilon: 1.0 / 6.0,
        l_sigma: 0.0,
        l_b: 0.0,
        k_sigma: 1.0,
    };
    let r1 = ConstantsReport::compute(&measure, &input).unwrap();
    let r2 = ConstantsReport::compute(&measure, &input).unwrap();
    for ((k1, v1), (k2, v2)) in r1.key_value_lines().iter().zip(r2.key_value_lines().iter()) {
        if k1 != k2 || v1 != v2 {
            ok = false;
            detail = format!("re-evaluation not bit-identical at {k1}");
        }
    }

    // Explicit-bound domination on the 3×3 grid (η > 0 keeps it finite).
    for &p in &[12.0, 16.0, 20.0] {
        for &eta in &[0.1, 0.3, 0.5] {
            let c = c_t_p_eta(1.0, p, eta, 1, 1.0).unwrap();
            let b = ln_c_t_p_eta_bound(1.0, p, eta, 1, 1.0).unwrap();
            if c.ln_value > b {
                ok = false;
                detail = format!("min {} above bound {b} at p={p}, eta={eta}", c.ln_value);
            }
        }
    }

    // Golden section vs 1e4-point grid scan.
    for &(p, eta) in &[(6.0, 0.0), (12.0, 0.3), (20.0, 0.5)] {
        let got = c_t_p_eta(1.0, p, eta, 1, 1.0).unwrap();
        let (lo, hi) = constants::alpha_window(p, 1, eta).unwrap();
        let mut best = f64::INFINITY;
        let n = 10_000;
        for i in 1..n {
            let a = lo + (hi - lo) * i as f64 / n as f64;
            if let (Ok(x), Ok(y)) =
                (ln_c_prime(1.0, p, a, 1), ln_c_double_prime(1.0, p, a, eta, 1.0))
            {
                best = best.min(x + y);
            }
        }
        if (got.ln_value - best).abs() > 1e-6 * best.abs() {
            ok = false;
            detail = format!("golden {} vs grid {best} at p={p}, eta={eta}", got.ln_value);
        }
    }
    if detail.is_empty() {
        detail = "fixtures, bit-stability, bound grid, minimizer oracle".into();
    }
    report("criterion 3 constants suite", ok, &detail);
}

fn fixture_sim_config(n: usize, dt: f64, t_end: f64, seed: u64) -> SimulationConfig {
    SimulationConfig {
        dimension: 1,
        modes_per_axis: n,
        grid_per_axis: 2 * n,
        dt,
        t_end,
        trials: 1,
        seed,
        measure: SpectralMeasure::point_mass(1, 0.0),
    }
}

/// Criterion 4: pointwise bound at p = 2 for constant σ, fully
/// deterministic; the margin must be the Burkholder factor 8.
#[test]
fn criterion_4_pointwise_moment_exact() {
    let exp = MomentExperiment {
        p: 2.0,
        config: fixture_sim_config(16, 0.01, 0.5, 1),
        sigma: SigmaField::Constant(1.0),
        trials: 0,
        confidence: 4.0,
    };
    let rep = moments::verify_pointwise_moment(&exp, 0.5, &[0.5]).unwrap();
    let margin = rep.rhs / rep.lhs;
    let ok = rep.pass && (margin - 8.0).abs() < 1e-9;
    report(
        "criterion 4 pointwise moment (p=2)",
        ok,
        &format!("lhs={:.6e}, rhs={:.6e}, margin={margin:.12}", rep.lhs, rep.rhs),
    );
}

/// Criterion 5: uniform moment bound at p = 6 (d=1, η=0, σ≡1, T=1) over
/// 1e4 trials, one-sided at 4 standard errors.
#[test]
fn criterion_5_sup_moment_large_p() {
    let mut config = fixture_sim_config(16, 0.01, 1.0, 505);
    config.trials = 10_000;
    let exp = MomentExperiment {
        p: 6.0,
        config,
        sigma: SigmaField::Constant(1.0),
        trials: 10_000,
        confidence: 4.0,
    };
    let rep = moments::verify_sup_moment(&exp).unwrap();
    report(
        "criterion 5 uniform moment (p=6)",
        rep.pass,
        &format!("lhs={:.6e}±{:.2e}, ln rhs={:.4}", rep.lhs, rep.lhs_se, rep.ln_rhs),
    );
}

/// Criterion 6: small-p uniform bound at p = 2, ε = 1/6, same setting,
/// 1e4 trials, one-sided at 4 standard errors.
#[test]
fn criterion_6_sup_moment_small_p() {
    let mut config = fixture_sim_config(16, 0.01, 1.0, 606);
    config.trials = 10_000;
    let exp = MomentExperiment {
        p: 2.0,
        config,
        sigma: SigmaField::Constant(1.0),
        trials: 10_000,
        confidence: 4.0,
    };
    let rep = moments::verify_sup_moment_small_p(&exp, 1.0 / 6.0).unwrap();
    report(
        "criterion 6 uniform moment small p (p=2, eps=1/6)",
        rep.pass,
        &format!("lhs={:.6e}±{:.2e}, ln rhs={:.4}", rep.lhs, rep.lhs_se, rep.ln_rhs),
    );
}

/// Criterion 7: factorization residual decreasing across
/// Δt ∈ {4e-3, 2e-3, 1e-3}, plus the deterministic kernel identity
/// quadrature within 1e-6.
#[test]
fn criterion_7_factorization() {
    let cfg = SimulationConfig {
        dimension: 1,
        modes_per_axis: 8,
        grid_per_axis: 16,
        dt: 1e-3,
        t_end: 0.5,
        trials: 1,
        seed: 707,
        measure: SpectralMeasure::point_mass(1, 0.0),
    };
    let out = moments::factorization_study(&cfg, 1.0, 0.3, 0.5, &[0.5], &[4, 2, 1], 16).unwrap();
    let monotone = out[0].residual > out[1].residual && out[1].residual > out[2].residual;
    let beta = moments::beta_identity_residual(0.3);
    let ok = monotone && beta < 1e-6;
    report(
        "criterion 7 factorization identity",
        ok,
        &format!(
            "residuals {:.4e} > {:.4e} > {:.4e}, beta residual {beta:.2e}",
            out[0].residual, out[1].residual, out[2].residual
        ),
    );
}

/// Criterion 8: coupling/Gronwall. Additive case: deterministic chain
/// sup|u-v|² <= 6 K_σ² C_{G,T,η} ∫‖h‖² exactly (zero-variance Monte Carlo).
/// Multiplicative fixture: one-sided pass against the theorem constant at
/// 4 standard errors with 1e3 coupled pairs.
#[test]
fn criterion_8_coupling_gronwall() {
    // Additive: σ ≡ K_σ = 1, b ≡ 0, drift ê_1, T = 1.
    let config = fixture_sim_config(16, 0.01, 1.0, 808);
    let steps = config.steps();
    let additive = TransportExperiment {
        config: config.clone(),
        coeffs: CoefficientSpec::additive(1.0),
        u0: InitialCondition::Zero,
        drift: DriftSpec::constant(vec![1.0], steps),
        trials: 100,
        n_samples: 8,
        confidence: 4.0,
    };
    let (mean, se) = transport::coupling_bound(&additive).unwrap();
    let ke = 1.0; // point mass
    let cg = c_g_t_eta(1.0, 0.0, ke);
    let additive_rhs = 6.0 * 1.0 * cg * additive.drift.integral_h_norm_sq(config.dt);
    // u - v is deterministic up to float cancellation noise in the shared
    // noise terms; the spread must sit at rounding scale.
    let additive_ok = se <= 1e-12 * mean && mean <= additive_rhs;

    // Multiplicative: σ = cos (L_σ = K_σ = 1, active at u ≡ 0), 1e3 pairs.
    let mult = TransportExperiment {
        config: fixture_sim_config(16, 0.01, 1.0, 809),
        coeffs: CoefficientSpec::new(ScalarFn::Cos, ScalarFn::Zero),
        u0: InitialCondition::Zero,
        drift: DriftSpec::constant(vec![1.0], steps),
        trials: 1000,
        n_samples: 8,
        confidence: 4.0,
    };
    let (m_mean, m_se) = transport::coupling_bound(&mult).unwrap();
    let theorem = constants::theorem_constant(1.0, 1.0, 0.0, 1.0, 0.0, ke, 1).unwrap();
    let m_rhs = theorem.value * mult.drift.integral_h_norm_sq(config.dt);
    let mult_ok = m_mean <= m_rhs + 4.0 * m_se;

    let ok = additive_ok && mult_ok;
    report(
        "criterion 8 coupling gronwall",
        ok,
        &format!(
            "additive {mean:.4e} <= {additive_rhs:.4e} (se {se:.1e}); multiplicative {m_mean:.4e} vs ln C={:.3e}",
            theorem.ln_value
        ),
    );
}

/// Criterion 9: T2 verification on the fixture experiment (d=1, η=0,
/// Lipschitz bounded σ, deterministic drift ê_1): empirical W₂² with
/// n = 256 and exact assignment below 2CH + band, and the admissibility
/// invariant W₂² <= paired-coupling mean cost.
#[test]
fn criterion_9_t2_verification() {
    let config = fixture_sim_config(16, 0.01, 1.0, 909);
    let steps = config.steps();
    let exp = TransportExperiment {
        config,
        coeffs: CoefficientSpec::new(ScalarFn::Cos, ScalarFn::Zero),
        u0: InitialCondition::Zero,
        drift: DriftSpec::constant(vec![1.0], steps),
        trials: 1000,
        n_samples: 256,
        confidence: 4.0,
    };
    let rep = transport::verify_t2(&exp).unwrap();
    let ok = rep.pass && rep.w2_pass && rep.admissible && !rep.degenerate;
    report(
        "criterion 9 t2 verification",
        ok,
        &format!(
            "W2²={:.4e} (paired {:.4e} <= plan {:.4e}), coupling={:.4e}±{:.1e}, 2CH ln={:.3e}",
            rep.w2_sq, rep.w2_sq_paired, rep.paired_mean_cost, rep.coupling, rep.coupling_se,
            rep.ln_two_c_h
        ),
    );
}

/// Criterion 10: identical (config, seed) runs produce byte-identical
/// manifests and CSV reports, via the harness entry points.
#[test]
fn criterion_10_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
seed = 13
trials = 128

[measure]
kind = "riesz"
eta = 0.3
kappa = 0.5

[solver]
dimension = 1
dt = 0.05
t_end = 0.5
modes_per_axis = 8
grid_per_axis = 16

[coefficients]
sigma = { kind = "cos" }
b = { kind = "zero" }

[drift]
coefficients = [1.0]

[t2]
n_samples = 16

[constants]
p = 8.0
epsilon = 0.1
"#;
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, body).unwrap();
    let (cfg, bytes) = harness::load_config(&path).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for suite in [Suite::Constants, Suite::VerifyT2] {
        let out1 = dir.path().join(format!("{}-1", suite.name()));
        let out2 = dir.path().join(format!("{}-2", suite.name()));
        harness::run(&cfg, &bytes, suite, &out1).unwrap();
        harness::run(&cfg, &bytes, suite, &out2).unwrap();
        for entry in std::fs::read_dir(&out1).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(out1.join(&name)).unwrap();
            let b = std::fs::read(out2.join(&name)).unwrap();
            if a != b {
                ok = false;
                detail = format!("{} differs across reruns in {}", name.to_string_lossy(), suite.name());
            }
        }
    }
    if detail.is_empty() {
        detail = "constants and verify-t2 reruns byte-identical".into();
    }
    report("criterion 10 reproducibility", ok, &detail);
}

/// Determinism is also exercised under noise-free coupling: zero drift
/// keeps the coupled pair exactly identical (supporting check for the
/// coupling machinery used above).
#[test]
fn supporting_zero_drift_coupling_exact() {
    let config = fixture_sim_config(8, 0.02, 0.5, 42);
    let sim = Simulator::new(config.clone(), &QuadBudget::default()).unwrap();
    let drift = DriftSpec::zero(sim.gram().rank(), config.steps());
    let coeffs = CoefficientSpec::new(ScalarFn::Sin, ScalarFn::Zero);
    let (u, v) = sim
        .run_coupled(&coeffs, &InitialCondition::Zero, &drift, &mut stream_rng(42, 0))
        .unwrap();
    let d = sup_metric(&u, &v).unwrap();
    report("supporting zero-drift coupling", d == 0.0, &format!("sup|u-v| = {d}"));
}
