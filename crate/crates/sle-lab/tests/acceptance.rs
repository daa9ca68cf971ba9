//! Acceptance suite: one test — and one printed pass/fail line — per
//! criterion.  Run with
//!
//! ```text
//! cargo test --test acceptance -- --nocapture
//! ```
//!
//! The statistical criteria use fixed seeds and are deterministic.

use num::complex::Complex64;
use sle_lab::algebra::{
    affine_bracket_residual, annihilator_check, basis, conjugation_check, kappa_weights,
    singular_check, virasoro_bracket_residual, virasoro_internal_check, CurrentId,
    GradedVector, ModuleSpec, Sl2,
};
use sle_lab::martingales::{
    all_sl2_observables, bb_weights, drift_test, integrator_discrepancy, residue_identity_report,
    ObservableKind, ObservableSpec, Probe,
};
use sle_lab::scalar::{Rat, Scalar};
use sle_lab::sde::{
    BrownianDriver, Integrator, PathConfig, SLEPathState, SignConvention, SimCase, step_path,
};
use sle_lab::series::{Series, Var};
use sle_lab::symmetry::{
    central_charge, commutator_check, generating_function_check, sample_states, OpCache, OpId,
    SymWindows,
};
use sle_lab::martingales::Sgn;
use std::time::Instant;

fn report(n: u32, name: &str, pass: bool, detail: &str, t0: Instant) {
    println!(
        "acceptance {:02} [{}] {} — {} ({:.1}s)",
        n,
        if pass { "pass" } else { "FAIL" },
        name,
        detail,
        t0.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rat(p: i64, q: i64) -> Rat {
    Rat::ratio(p, q)
}

// ----------------------------------------------------------------------
// 1. Degenerate singular vectors, exact
// ----------------------------------------------------------------------

#[test]
fn criterion_01_singular_vectors() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for kappa in [rat(2, 1), rat(6, 1), rat(8, 3)] {
        let (c, h) = kappa_weights(&kappa);
        let (l1, l2) = singular_check(&c, &h, &kappa).unwrap();
        if !(l1.is_zero() && l2.is_zero()) {
            ok = false;
            detail = format!("nonzero residual at κ={kappa}");
        }
    }
    // Off-curve controls: perturb h away from the weight determined by κ.
    for i in 0..5i64 {
        let kappa = rat(2 * i + 3, 2);
        let (c, h) = kappa_weights(&kappa);
        let h_bad = h.add(&rat(i + 1, 7));
        let (l1, l2) = singular_check(&c, &h_bad, &kappa).unwrap();
        if l1.is_zero() && l2.is_zero() {
            ok = false;
            detail = format!("control {i} unexpectedly annihilated");
        }
    }
    if ok {
        detail = "3 conforming zero, 5 controls nonzero".into();
    }
    report(1, "singular vectors", ok, &detail, t0);
}

// ----------------------------------------------------------------------
// 2. Sugawara annihilator, exact
// ----------------------------------------------------------------------

#[test]
fn criterion_02_annihilator() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for rank in [1u16, 2u16] {
        for lambda in [rat(0, 1), rat(1, 2)] {
            let spec = ModuleSpec::HeisenbergFock { rank, lambda: lambda.clone() };
            let top = GradedVector::top(spec, 0);
            let tau1 = rat(2, 1).sub(&rat(4, 1).mul(&lambda).mul(&lambda));
            let mut taus = vec![tau1];
            taus.resize(rank as usize, rat(2, 1));
            let r = annihilator_check(&rat(4, 1), &taus, &top).unwrap();
            if !r.is_zero() {
                ok = false;
                detail = format!("heisenberg rank={rank} λ={lambda} residual nonzero");
            }
        }
    }
    // Both e^{Λ} and e^{-Λ} live in the charged sector; take the
    // charge-(±1) top vectors.
    for charge_sign in [1i64, -1] {
        for (kp, kq, tp, tq) in [(2, 1, 1, 1), (1, 1, 3, 2), (3, 1, 1, 2)] {
            let spec = ModuleSpec::LatticeSl2 { charged: true };
            let top = if charge_sign == 1 {
                GradedVector::top(spec, 0)
            } else {
                // e^{-Λ}: reflect the top monomial charge.
                let m = sle_lab::algebra::Monomial::Lattice { charge: -1, modes: vec![] };
                GradedVector::from_monomial(spec, 0, m)
            };
            let r = annihilator_check(&rat(kp, kq), &[rat(tp, tq)], &top).unwrap();
            if !r.is_zero() {
                ok = false;
                detail = format!("lattice charge {charge_sign} (κ={kp}/{kq}, τ={tp}/{tq}) nonzero");
            }
        }
    }
    // Away from the constraint κ + 2τ = 4 the vector must survive.
    let spec = ModuleSpec::LatticeSl2 { charged: true };
    let top = GradedVector::top(spec, 0);
    let r = annihilator_check(&rat(2, 1), &[rat(2, 1)], &top).unwrap();
    if r.is_zero() {
        ok = false;
        detail = "κ=2, τ=2 unexpectedly annihilated".into();
    }
    if ok {
        detail = "4 fock + 6 lattice zero, off-constraint nonzero".into();
    }
    report(2, "sugawara annihilator", ok, &detail, t0);
}

// ----------------------------------------------------------------------
// 3. Sugawara Virasoro + affine brackets, exact
// ----------------------------------------------------------------------

#[test]
fn criterion_03_brackets() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    let d_max = 4;
    let specs = [
        ModuleSpec::HeisenbergFock { rank: 1, lambda: rat(1, 2) },
        ModuleSpec::HeisenbergFock { rank: 2, lambda: rat(1, 3) },
        ModuleSpec::LatticeSl2 { charged: true },
        ModuleSpec::LatticeSl2 { charged: false },
    ];
    let vira_pairs = [(2, -2), (1, -1), (0, 1), (2, -1), (-2, 1), (1, 1)];
    'outer: for spec in &specs {
        for mono in basis(spec, d_max) {
            let v = GradedVector::from_monomial(spec.clone(), d_max, mono);
            for (m, n) in vira_pairs {
                let r = virasoro_bracket_residual(m, n, &v).unwrap();
                if !r.is_zero() {
                    ok = false;
                    detail = format!("[L{m},L{n}] residual on {spec:?}");
                    break 'outer;
                }
            }
        }
    }
    let mode_pairs = [(0, 0), (1, -1), (2, -2), (1, 1), (-1, 2), (2, 0)];
    'outer2: for charged in [true, false] {
        let spec = ModuleSpec::LatticeSl2 { charged };
        for mono in basis(&spec, d_max) {
            let v = GradedVector::from_monomial(spec.clone(), d_max, mono);
            for x in [Sl2::E, Sl2::H, Sl2::F] {
                for y in [Sl2::E, Sl2::H, Sl2::F] {
                    for (m, n) in mode_pairs {
                        let r = affine_bracket_residual(x, m, y, n, &v).unwrap();
                        if !r.is_zero() {
                            ok = false;
                            detail =
                                format!("[{x:?}({m}),{y:?}({n})] residual, charged={charged}");
                            break 'outer2;
                        }
                    }
                }
            }
        }
    }
    if ok {
        detail = "virasoro (c=rank resp. 1) and affine brackets zero on deg ≤ 4".into();
    }
    report(3, "sugawara + affine brackets", ok, &detail, t0);
}

// ----------------------------------------------------------------------
// 4. Conjugation formulas, exact
// ----------------------------------------------------------------------

fn random_series(seed: i64, depth: i64, with_positive: bool) -> Series<Rat> {
    let mut terms = Vec::new();
    for n in 1..=depth {
        let p = ((seed * 7 + n * 13) % 11) - 5;
        let q = 1 + ((seed + n).rem_euclid(4));
        if p != 0 {
            terms.push((-n, rat(p, q)));
        }
    }
    if with_positive {
        terms.push((1, rat(1, 3)));
    }
    Series::from_terms(Var::Zeta, &terms)
}

#[test]
fn criterion_04_conjugation() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    let d_max = 4;
    let spec = ModuleSpec::LatticeSl2 { charged: true };
    let ids = [Sl2::E, Sl2::H, Sl2::F];
    'outer: for (i, a_id) in ids.iter().enumerate() {
        for (j, x_id) in ids.iter().enumerate() {
            let a = random_series((i * 3 + j) as i64 + 1, 4, false);
            let x = random_series((i + 5 * j) as i64 + 2, 3, true);
            let rows = conjugation_check(
                &spec,
                CurrentId::Sl2(*a_id),
                &a,
                CurrentId::Sl2(*x_id),
                &x,
                d_max,
            )
            .unwrap();
            for (mono, r) in rows {
                if !r.is_zero() {
                    ok = false;
                    detail = format!("ad({a_id:?}) on {x_id:?} residual at {mono:?}");
                    break 'outer;
                }
            }
        }
    }
    let fock = ModuleSpec::HeisenbergFock { rank: 1, lambda: rat(1, 2) };
    for (spec, id) in [
        (spec.clone(), CurrentId::Sl2(Sl2::E)),
        (spec.clone(), CurrentId::Sl2(Sl2::H)),
        (fock.clone(), CurrentId::Heis(1)),
    ] {
        let a = random_series(9, 4, false);
        for m in -2..=2 {
            let rows = virasoro_internal_check(&spec, id, &a, m, d_max).unwrap();
            if rows.iter().any(|(_, r)| !r.is_zero()) {
                ok = false;
                detail = format!("virasoro-internal residual, id={id:?}, m={m}");
            }
        }
    }
    if ok {
        detail = "9 adjoint formulas + internal virasoro zero to deg 4".into();
    }
    report(4, "conjugation formulas", ok, &detail, t0);
}

// ----------------------------------------------------------------------
// 5. sl₂ drift certification + negative control
// ----------------------------------------------------------------------

fn sl2_cfg(tau: f64, seed: u64) -> PathConfig {
    PathConfig {
        kappa: 2.0,
        tau: Some(tau),
        taus: None,
        lambda: None,
        dt: 1e-3,
        t_horizon: 0.25,
        n_window: 16,
        m_window: 12,
        seed,
        integrator: Integrator::CoefficientEuler,
        case: SimCase::Sl2,
        sign_convention: SignConvention::AppC,
        allow_invariant_violation: true,
    }
}

#[test]
fn criterion_05_sl2_drift() {
    let t0 = Instant::now();
    let probe = Probe::Point { re: 4.0, im: 0.0 };
    let mut specs = all_sl2_observables(probe);
    let (c6, h6) = bb_weights(6.0);
    specs.push(ObservableSpec { kind: ObservableKind::VirasoroBB { c: c6, h: h6 }, probe });
    let times = [0.05, 0.15, 0.25];
    let n_paths = 10_000;
    let reports = drift_test(&sl2_cfg(1.0, 41), &specs, n_paths, &times, 3.0).unwrap();
    let worst = reports.iter().map(|r| r.max_z).fold(0.0, f64::max);
    let all_pass = reports.iter().all(|r| r.pass);
    // Negative control: τ = 2 breaks the κ + 2τ = 4 constraint.
    let control = drift_test(&sl2_cfg(2.0, 41), &specs, n_paths, &times, 5.0).unwrap();
    let control_worst = control.iter().map(|r| r.max_z).fold(0.0, f64::max);
    let ok = all_pass && control_worst > 5.0;
    report(
        5,
        "sl₂ drift certification",
        ok,
        &format!("17 observables max|z|={worst:.2} (≤3), control max|z|={control_worst:.1} (>5)"),
        t0,
    );
}

// ----------------------------------------------------------------------
// 6. Heisenberg drift certification
// ----------------------------------------------------------------------

#[test]
fn criterion_06_heisenberg_drift() {
    let t0 = Instant::now();
    let cfg = PathConfig {
        kappa: 4.0,
        tau: None,
        taus: Some(vec![1.0]),
        lambda: Some(0.5),
        dt: 1e-3,
        t_horizon: 0.25,
        n_window: 16,
        m_window: 12,
        seed: 42,
        integrator: Integrator::CoefficientEuler,
        case: SimCase::Heisenberg { rank: 1 },
        sign_convention: SignConvention::AppC,
        allow_invariant_violation: false,
    };
    let probe = Probe::Point { re: 4.0, im: 0.0 };
    let specs = vec![
        ObservableSpec { kind: ObservableKind::HeisenbergCurrent { dir: 1, lambda: 0.5 }, probe },
        ObservableSpec { kind: ObservableKind::HeisenbergVirasoro { lambda: 0.5 }, probe },
    ];
    let times = [0.05, 0.15, 0.25];
    let reports = drift_test(&cfg, &specs, 10_000, &times, 3.0).unwrap();
    let worst = reports.iter().map(|r| r.max_z).fold(0.0, f64::max);
    let ok = reports.iter().all(|r| r.pass);
    report(
        6,
        "heisenberg drift certification",
        ok,
        &format!("current + virasoro max|z|={worst:.2} (≤3)"),
        t0,
    );
}

// ----------------------------------------------------------------------
// 7. Integrator cross-validation
// ----------------------------------------------------------------------

#[test]
fn criterion_07_integrator_halving() {
    let t0 = Instant::now();
    let n_paths = 1_000;
    let coarse_cfg = sl2_cfg(1.0, 7);
    let mut fine_cfg = coarse_cfg.clone();
    fine_cfg.dt = 5e-4;
    let coarse = integrator_discrepancy(&coarse_cfg, n_paths).unwrap();
    let fine = integrator_discrepancy(&fine_cfg, n_paths).unwrap();
    let ratio = fine / coarse;
    let ok = (0.35..=0.65).contains(&ratio);
    report(
        7,
        "integrator halving",
        ok,
        &format!("{coarse:.3e} → {fine:.3e}, ratio {ratio:.3} ∈ [0.35, 0.65]"),
        t0,
    );
}

// ----------------------------------------------------------------------
// 8. Symmetry commutators + generating functions, exact
// ----------------------------------------------------------------------

#[test]
fn criterion_08_symmetry() {
    let t0 = Instant::now();
    let w = SymWindows::default();
    let mut cache = OpCache::default();
    let states = sample_states(&w, 3);
    let ids = [OpId::E, OpId::H, OpId::F, OpId::L];
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut detail = String::new();
    'outer: for a in ids {
        for b in ids {
            for la in -2..=2 {
                for lb in -2..=2 {
                    let r = commutator_check(a, la, b, lb, &states, &w, &mut cache).unwrap();
                    worst = worst.max(r.max_residual);
                    if r.max_residual != 0.0 {
                        ok = false;
                        detail = format!("[{a:?}({la}),{b:?}({lb})] residual {}", r.max_residual);
                        break 'outer;
                    }
                }
            }
        }
    }
    let mut gf_worst = 0.0f64;
    for id in [OpId::E, OpId::H, OpId::F, OpId::L] {
        for bra in [Sgn::Plus, Sgn::Minus] {
            for ket in [Sgn::Plus, Sgn::Minus] {
                let g = generating_function_check(id, bra, ket, &w, 6, &mut cache).unwrap();
                gf_worst = gf_worst.max(g.max_residual);
                if g.max_residual >= 1e-12 || g.sign != 1 {
                    ok = false;
                    detail = format!("gf {id:?} ⟨{bra:?}|…|{ket:?}⟩ residual {}", g.max_residual);
                }
            }
        }
    }
    let cc = central_charge(&w, &mut cache).unwrap();
    if cc != Rat::int(1) {
        ok = false;
        detail = format!("central charge {cc} ≠ 1");
    }
    if ok {
        detail = format!("400 commutators exact, gf residual {gf_worst:.1e}, c=1");
    }
    report(8, "symmetry algebra", ok, &detail, t0);
}

// ----------------------------------------------------------------------
// 9. Deterministic Loewner sanity
// ----------------------------------------------------------------------

#[test]
fn criterion_09_deterministic_sanity() {
    let t0 = Instant::now();
    let mut cfg = sl2_cfg(1.0, 3);
    cfg.kappa = 0.0;
    cfg.tau = None;
    cfg.case = SimCase::VirasoroOnly;
    cfg.dt = 1e-4;
    cfg.allow_invariant_violation = false;
    let variances = cfg.validate().unwrap();
    let steps = (cfg.t_horizon / cfg.dt).round() as i64;
    let mut state = SLEPathState::initial(&cfg.case);
    let mut driver = BrownianDriver::new(cfg.seed, 0, &variances, cfg.dt);
    for _ in 0..steps {
        let db = driver.step();
        step_path(&cfg, &mut state, &db).unwrap();
    }
    let t = state.t;
    // √(z² + 4t) = z Σ_k binom(1/2, k) (4t)^k z^{-2k}.
    let mut ok = true;
    let mut detail = String::new();
    let mut binom = 1.0f64;
    let mut worst_rel = 0.0f64;
    for k in 0..=4usize {
        if k > 0 {
            binom *= (0.5 - (k as f64 - 1.0)) / k as f64;
        }
        let want = binom * (4.0 * t).powi(k as i32);
        let got = state.g().coeff(1 - 2 * k as i64).unwrap().0.re;
        let rel = (got - want).abs() / want.abs();
        worst_rel = worst_rel.max(rel);
        if rel > 1e-4 {
            ok = false;
            detail = format!("z^{} coefficient rel err {rel:.2e}", 1 - 2 * k as i64);
        }
    }
    // a₁(t) = 2t on stochastic paths, to integrator accumulation error.
    let cfg2 = sl2_cfg(1.0, 11);
    let vars2 = cfg2.validate().unwrap();
    let steps2 = (cfg2.t_horizon / cfg2.dt).round() as i64;
    let mut worst_a1 = 0.0f64;
    for path in 0..20u64 {
        let mut s = SLEPathState::initial(&cfg2.case);
        let mut drv = BrownianDriver::new(cfg2.seed, path, &vars2, cfg2.dt);
        for _ in 0..steps2 {
            let db = drv.step();
            step_path(&cfg2, &mut s, &db).unwrap();
        }
        let a1 = s.a1();
        worst_a1 = worst_a1.max((a1 - Complex64::new(2.0 * s.t, 0.0)).norm());
    }
    if worst_a1 > 1e-6 {
        ok = false;
        detail = format!("a₁ deviation {worst_a1:.2e} > 1e-6");
    }
    if ok {
        detail = format!("√(z²+4t) rel err {worst_rel:.1e} to z⁻⁷, a₁ dev {worst_a1:.1e}");
    }
    report(9, "deterministic sanity", ok, &detail, t0);
}

// ----------------------------------------------------------------------
// 10. Residue-identity probe report
// ----------------------------------------------------------------------

#[test]
fn criterion_10_residue_report() {
    let t0 = Instant::now();
    let cfg = PathConfig {
        kappa: 4.0,
        tau: None,
        taus: Some(vec![1.0]),
        lambda: Some(0.5),
        dt: 1e-3,
        t_horizon: 0.1,
        n_window: 16,
        m_window: 12,
        seed: 17,
        integrator: Integrator::CoefficientEuler,
        case: SimCase::Heisenberg { rank: 1 },
        sign_convention: SignConvention::AppC,
        allow_invariant_violation: false,
    };
    let rep =
        residue_identity_report(&cfg, 200, &[0.0, 0.05, 0.1], Probe::Point { re: 4.0, im: 0.0 })
            .unwrap();
    let ok = rep.t0_both_zero && !rep.rows.is_empty();
    report(
        10,
        "residue-identity report",
        ok,
        &format!("{} rows, both sides zero at t=0: {}", rep.rows.len(), rep.t0_both_zero),
        t0,
    );
}
