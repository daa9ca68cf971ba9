//! Stochastic simulation of the coupled system: the SLE(κ) Loewner
//! coefficients together with the internal coefficient processes of the
//! Heisenberg and sl₂ cases.
//!
//! Two integrators are provided for the sl₂ internal process:
//!
//! * coefficient Euler–Maruyama directly on the coefficient series
//!   `e_t(ζ), h_t(ζ), f_t(ζ)`;
//! * a multiplicative (Lie-group) scheme that right-multiplies the matrix
//!   `Θ_t = e^{𝐞}e^{𝐡}e^{𝐟}` by the exponential of the noise increment
//!   and Gauss-refactorizes.
//!
//! All per-path randomness is reproducible from `(seed, path index,
//! stream index)`, so runs are bit-stable and the two integrators can be
//! driven by identical Brownian increments.

use crate::scalar::Cf64;
use crate::series::{exp_series_depth, log_series_depth, Series, SeriesError, Var};
use num::complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum SdeError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("Gauss decomposition failed: {0}")]
    Gauss(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

pub type SdeResult<T> = std::result::Result<T, SdeError>;

// ----------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    CoefficientEuler,
    Multiplicative,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimCase {
    VirasoroOnly,
    Heisenberg { rank: u16 },
    Sl2,
}

/// Which sign the internal noise terms carry.  The two conventions differ
/// by `B → -B` and are distributionally equivalent; the default follows
/// the derivation that also produces the closed coefficient SDEs.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignConvention {
    AppC,
    Sec5,
}

impl Default for SignConvention {
    fn default() -> Self {
        SignConvention::AppC
    }
}

fn default_n_window() -> i64 {
    16
}
fn default_m_window() -> i64 {
    12
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PathConfig {
    pub kappa: f64,
    /// sl₂ coupling; derived as `(4-κ)/2` when omitted.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Heisenberg couplings; derived as `τ₁ = 2-4λ²`, `τ_i = 2` when
    /// omitted.
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
    /// Heisenberg top weight.
    #[serde(default)]
    pub lambda: Option<f64>,
    pub dt: f64,
    pub t_horizon: f64,
    /// Loewner-series window depth (coefficients of `z^{-n_window}…z`).
    #[serde(default = "default_n_window")]
    pub n_window: i64,
    /// Internal-series window depth (coefficients of `ζ^{-m_window}…ζ⁻¹`).
    #[serde(default = "default_m_window")]
    pub m_window: i64,
    pub seed: u64,
    pub integrator: Integrator,
    pub case: SimCase,
    #[serde(default)]
    pub sign_convention: SignConvention,
    /// Permit τ values that violate the algebraic null-vector relation
    /// (used for negative controls of the martingale tests).
    #[serde(default)]
    pub allow_invariant_violation: bool,
}

impl PathConfig {
    /// Validate and return the effective per-stream noise variances
    /// `[κ, τ…]`.  All validation failures are collected.
    pub fn validate(&self) -> SdeResult<Vec<f64>> {
        let mut errs = Vec::new();
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            errs.push(format!("κ must be ≥ 0, got {}", self.kappa));
        }
        if self.kappa == 0.0 && self.case != SimCase::VirasoroOnly {
            errs.push("κ = 0 is only supported for the virasoro-only case".into());
        }
        if !(self.dt > 0.0) {
            errs.push(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_horizon > 0.0) {
            errs.push(format!("t_horizon must be > 0, got {}", self.t_horizon));
        }
        if self.n_window < 4 {
            errs.push(format!("n_window must be ≥ 4, got {}", self.n_window));
        }
        if self.m_window < 4 {
            errs.push(format!("m_window must be ≥ 4, got {}", self.m_window));
        }
        let mut vars = vec![self.kappa];
        match &self.case {
            SimCase::VirasoroOnly => {
                if self.tau.is_some() || self.taus.is_some() || self.lambda.is_some() {
                    errs.push("virasoro-only takes neither τ nor λ".into());
                }
            }
            SimCase::Heisenberg { rank } => {
                if *rank == 0 {
                    errs.push("heisenberg rank must be ≥ 1".into());
                }
                if self.tau.is_some() {
                    errs.push("heisenberg uses `taus`, not `tau`".into());
                }
                let lambda = self.lambda.unwrap_or(0.0);
                if lambda * lambda > 0.5 + 1e-12 {
                    errs.push(format!(
                        "|λ| ≤ 1/√2 required (τ₁ = 2-4λ² would be negative), got λ = {lambda}"
                    ));
                }
                let derived: Vec<f64> = (0..*rank)
                    .map(|i| if i == 0 { 2.0 - 4.0 * lambda * lambda } else { 2.0 })
                    .collect();
                let taus = match &self.taus {
                    None => derived,
                    Some(t) => {
                        if t.len() != *rank as usize {
                            errs.push(format!("expected {} τ values, got {}", rank, t.len()));
                        }
                        if t.iter().any(|x| *x < 0.0) {
                            errs.push("all τ_i must be ≥ 0".into());
                        }
                        if t != &derived && !self.allow_invariant_violation {
                            errs.push(
                                "explicit τ values violate τ₁ = 2-4λ², τ_i = 2; \
                                 set allow_invariant_violation for negative controls"
                                    .into(),
                            );
                        }
                        t.clone()
                    }
                };
                if (self.kappa - 4.0).abs() > 1e-12 && !self.allow_invariant_violation {
                    errs.push(format!("heisenberg requires κ = 4, got {}", self.kappa));
                }
                vars.extend(taus);
            }
            SimCase::Sl2 => {
                if self.taus.is_some() || self.lambda.is_some() {
                    errs.push("sl2 uses `tau`, takes no λ".into());
                }
                let derived = (4.0 - self.kappa) / 2.0;
                let tau = match self.tau {
                    None => derived,
                    Some(t) => {
                        if (t - derived).abs() > 1e-12 && !self.allow_invariant_violation {
                            errs.push(
                                "explicit τ violates κ+2τ-4 = 0; \
                                 set allow_invariant_violation for negative controls"
                                    .into(),
                            );
                        }
                        t
                    }
                };
                if tau < 0.0 {
                    errs.push(format!("sl2 noise variance τ must be ≥ 0, got {tau}"));
                }
                vars.extend([tau, tau, tau]);
            }
        }
        if self.integrator == Integrator::Multiplicative && self.case != SimCase::Sl2 {
            errs.push("the multiplicative integrator is defined for the sl2 case only".into());
        }
        if errs.is_empty() {
            Ok(vars)
        } else {
            Err(SdeError::Config(errs))
        }
    }
}

// ----------------------------------------------------------------------
// Brownian driver
// ----------------------------------------------------------------------

/// Per-path driver producing the increments of the mutually independent
/// Brownian motions `B^{(0)}, …`; stream `r` has variance `variances[r]`.
pub struct BrownianDriver {
    rngs: Vec<ChaCha8Rng>,
    scales: Vec<f64>,
}

impl BrownianDriver {
    pub fn new(seed: u64, path: u64, variances: &[f64], dt: f64) -> Self {
        let rngs = (0..variances.len())
            .map(|stream| {
                let mut hasher = Sha256::new();
                hasher.update(seed.to_le_bytes());
                hasher.update(path.to_le_bytes());
                hasher.update((stream as u64).to_le_bytes());
                let digest = hasher.finalize();
                let mut key = [0u8; 32];
                key.copy_from_slice(&digest);
                ChaCha8Rng::from_seed(key)
            })
            .collect();
        let scales = variances.iter().map(|v| (v * dt).sqrt()).collect();
        BrownianDriver { rngs, scales }
    }

    /// Increments `dB^{(r)} = √(variance_r · dt) · N(0,1)` for one step.
    pub fn step(&mut self) -> Vec<f64> {
        self.rngs
            .iter_mut()
            .zip(&self.scales)
            .map(|(rng, s)| {
                let n: f64 = StandardNormal.sample(rng);
                s * n
            })
            .collect()
    }
}

// ----------------------------------------------------------------------
// Path state
// ----------------------------------------------------------------------

#[derive(Clone, PartialEq, Debug)]
pub enum InternalState {
    None,
    /// One series `h^i_t(ζ)` per Heisenberg direction.
    Heisenberg(Vec<Series<Cf64>>),
    Sl2 {
        e: Series<Cf64>,
        h: Series<Cf64>,
        f: Series<Cf64>,
    },
}

#[derive(Clone, PartialEq, Debug)]
pub struct SLEPathState {
    pub t: f64,
    /// Driving Brownian value `B_t`.
    pub b0: f64,
    /// `ρ_t(z) = z + r₀(t) + r₋₁(t) z⁻¹ + …`, so `g_t = ρ_t + B_t`.
    pub rho: Series<Cf64>,
    pub internal: InternalState,
}

impl SLEPathState {
    pub fn initial(case: &SimCase) -> Self {
        let internal = match case {
            SimCase::VirasoroOnly => InternalState::None,
            SimCase::Heisenberg { rank } => InternalState::Heisenberg(
                (0..*rank).map(|_| Series::zero(Var::Zeta)).collect(),
            ),
            SimCase::Sl2 => InternalState::Sl2 {
                e: Series::zero(Var::Zeta),
                h: Series::zero(Var::Zeta),
                f: Series::zero(Var::Zeta),
            },
        };
        SLEPathState {
            t: 0.0,
            b0: 0.0,
            rho: Series::monomial(Var::Z, 1, Cf64::real(1.0)),
            internal,
        }
    }

    /// `g_t(z) = ρ_t(z) + B_t`.
    pub fn g(&self) -> Series<Cf64> {
        self.rho
            .add(&Series::constant(Var::Z, Cf64::real(self.b0)))
            .expect("same var")
    }

    /// Coefficient of `z⁻¹` in `g_t` (equals `2t` up to integrator error).
    pub fn a1(&self) -> Complex64 {
        self.rho.coeff(-1).map(|c| c.0).unwrap_or_default()
    }
}

fn assert_strictly_negative(s: &Series<Cf64>, what: &str) {
    if let Some(hi) = s.support_hi() {
        assert!(hi <= -1, "{what} left ζ⁻¹ℂ[[ζ⁻¹]] (top exponent {hi})");
    }
}

// ----------------------------------------------------------------------
// Integration steps
// ----------------------------------------------------------------------

/// Step of the Loewner coefficient SDE `dρ_t(z) = 2/ρ_t(z) dt - dB_t`;
/// the noise enters only the constant term, so `r₀(t) = -B_t` exactly.
///
/// The noise is handled Euler–Maruyama style, while the deterministic
/// drift uses a trapezoid (Heun) correction: the plain left-point drift
/// accumulates an `O(dt)` coefficient bias that would dominate the
/// deterministic κ = 0 comparison against the exact `√(z²+4t)` series.
pub fn step_loewner(state: &mut SLEPathState, db0: f64, dt: f64, n_window: i64) -> SdeResult<()> {
    let depth = (n_window + 2) as usize;
    let inv = state.rho.mul_inverse_depth(depth)?;
    let pred = state.rho.add(&inv.scale(&Cf64::real(2.0 * dt)))?;
    let inv_pred = pred.mul_inverse_depth(depth)?;
    let drift = inv.add(&inv_pred)?.scale(&Cf64::real(dt));
    let noise = Series::constant(Var::Z, Cf64::real(-db0));
    state.rho = state
        .rho
        .add(&drift)?
        .add(&noise)?
        .clamp(-n_window, 1);
    state.b0 += db0;
    state.t += dt;
    Ok(())
}

/// `dh^i_t(ζ) = ρ_t(ζ)⁻¹ dB^{(i)}` (driftless; `ρ⁻¹` is the
/// multiplicative inverse).
pub fn step_internal_heisenberg(
    state: &mut SLEPathState,
    db: &[f64],
    m_window: i64,
) -> SdeResult<()> {
    let inv = rho_inv_zeta(&state.rho, m_window)?;
    let hs = match &mut state.internal {
        InternalState::Heisenberg(hs) => hs,
        _ => return Err(SdeError::Config(vec!["case is not heisenberg".into()])),
    };
    assert_eq!(db.len(), hs.len(), "one increment per direction");
    for (h, dbi) in hs.iter_mut().zip(db) {
        *h = h.add(&inv.scale(&Cf64::real(*dbi)))?.clamp(-m_window, -1);
        assert_strictly_negative(h, "h^i");
    }
    Ok(())
}

fn rho_inv_zeta(rho: &Series<Cf64>, m_window: i64) -> SdeResult<Series<Cf64>> {
    Ok(rho
        .clone()
        .retag(Var::Zeta)
        .mul_inverse_depth((m_window + 3) as usize)?)
}

fn noise_sign(sign: SignConvention) -> f64 {
    match sign {
        SignConvention::AppC => 1.0,
        SignConvention::Sec5 => -1.0,
    }
}

/// Euler–Maruyama step of the closed sl₂ coefficient SDEs.  With the
/// default sign convention:
///
/// ```text
/// de = -e^{2h}/(√2 ρ) (dB² + i dB³)
/// dh = -τ/(2ρ²) dt - dB¹/(√2 ρ) + f/(√2 ρ) (dB² + i dB³)
/// df = -√2 f/ρ dB¹ - (1-f²)/(√2 ρ) dB² + i (1+f²)/(√2 ρ) dB³
/// ```
///
/// the opposite convention flips every noise term.
pub fn step_internal_sl2(
    state: &mut SLEPathState,
    db: &[f64],
    dt: f64,
    tau: f64,
    m_window: i64,
    sign: SignConvention,
) -> SdeResult<()> {
    let s = noise_sign(sign);
    let inv = rho_inv_zeta(&state.rho, m_window)?;
    let inv2 = inv.mul(&inv)?;
    let (e, h, f) = match &mut state.internal {
        InternalState::Sl2 { e, h, f } => (e, h, f),
        _ => return Err(SdeError::Config(vec!["case is not sl2".into()])),
    };
    assert_eq!(db.len(), 3, "three internal increments");
    let (db1, db2, db3) = (db[0], db[1], db[2]);
    let sqrt2 = std::f64::consts::SQRT_2;
    let db23 = Complex64::new(db2, db3); // dB² + i dB³
    let depth = (m_window + 3) as i64;

    let e2h = exp_series_depth(&h.scale(&Cf64::real(2.0)), depth)?;
    let f2 = f.mul(f)?;
    let one = Series::constant(Var::Zeta, Cf64::real(1.0));

    // de = -s · e^{2h}/(√2 ρ) (dB² + i dB³).
    let de = e2h
        .mul(&inv)?
        .scale(&Cf64(db23 * (-s / sqrt2)));
    // dh = -τ/(2ρ²) dt + s·(-dB¹/(√2 ρ) + f/(√2 ρ)(dB² + i dB³)).
    let dh = inv2
        .scale(&Cf64::real(-tau * dt / 2.0))
        .add(&inv.scale(&Cf64::real(-s * db1 / sqrt2)))?
        .add(&f.mul(&inv)?.scale(&Cf64(db23 * (s / sqrt2))))?;
    // df = s·(-√2 f/ρ dB¹ - (1-f²)/(√2 ρ) dB² + i (1+f²)/(√2 ρ) dB³).
    let df = f
        .mul(&inv)?
        .scale(&Cf64::real(-s * sqrt2 * db1))
        .add(&one.sub(&f2)?.mul(&inv)?.scale(&Cf64::real(-s * db2 / sqrt2)))?
        .add(
            &one.add(&f2)?
                .mul(&inv)?
                .scale(&Cf64(Complex64::new(0.0, s * db3 / sqrt2))),
        )?;

    *e = e.add(&de)?.clamp(-m_window, -1);
    *h = h.add(&dh)?.clamp(-m_window, -1);
    *f = f.add(&df)?.clamp(-m_window, -1);
    assert_strictly_negative(e, "e");
    assert_strictly_negative(h, "h");
    assert_strictly_negative(f, "f");
    Ok(())
}

// ----------------------------------------------------------------------
// Multiplicative (Lie-group) integrator
// ----------------------------------------------------------------------

/// 2×2 matrix with truncated-series entries.
#[derive(Clone, Debug)]
struct Mat2 {
    a: Series<Cf64>,
    b: Series<Cf64>,
    c: Series<Cf64>,
    d: Series<Cf64>,
}

impl Mat2 {
    fn identity() -> Self {
        let one = Series::constant(Var::Zeta, Cf64::real(1.0));
        let zero = Series::zero(Var::Zeta);
        Mat2 { a: one.clone(), b: zero.clone(), c: zero, d: one }
    }

    fn mul(&self, o: &Mat2) -> SdeResult<Mat2> {
        Ok(Mat2 {
            a: self.a.mul(&o.a)?.add(&self.b.mul(&o.c)?)?,
            b: self.a.mul(&o.b)?.add(&self.b.mul(&o.d)?)?,
            c: self.c.mul(&o.a)?.add(&self.d.mul(&o.c)?)?,
            d: self.c.mul(&o.b)?.add(&self.d.mul(&o.d)?)?,
        })
    }

    fn add(&self, o: &Mat2) -> SdeResult<Mat2> {
        Ok(Mat2 {
            a: self.a.add(&o.a)?,
            b: self.b.add(&o.b)?,
            c: self.c.add(&o.c)?,
            d: self.d.add(&o.d)?,
        })
    }

    fn scale(&self, s: Cf64) -> Mat2 {
        Mat2 {
            a: self.a.scale(&s),
            b: self.b.scale(&s),
            c: self.c.scale(&s),
            d: self.d.scale(&s),
        }
    }

    fn is_negligible(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|s| s.is_zero() || s.support_hi().is_none())
    }
}

/// `Θ = e^{𝐞}e^{𝐡}e^{𝐟}` as a matrix `[[e^h + e·e^{-h}·f, e·e^{-h}],
/// [e^{-h}·f, e^{-h}]]`.
fn theta_matrix(e: &Series<Cf64>, h: &Series<Cf64>, f: &Series<Cf64>, depth: i64) -> SdeResult<Mat2> {
    let eh = exp_series_depth(h, depth)?;
    let emh = exp_series_depth(&h.neg(), depth)?;
    let b = e.mul(&emh)?;
    let c = emh.mul(f)?;
    let a = eh.add(&b.mul(f)?)?;
    Ok(Mat2 { a, b, c, d: emh })
}

/// Gauss refactorization `e = B/D`, `f = C/D`, `h = -log D`.
fn gauss_refactor(m: &Mat2, m_window: i64) -> SdeResult<(Series<Cf64>, Series<Cf64>, Series<Cf64>)> {
    let d0 = m.d.coeff(0).map(|c| c.0).unwrap_or_default();
    if (d0 - Complex64::new(1.0, 0.0)).norm() > 1e-6 {
        return Err(SdeError::Gauss(format!(
            "D-entry constant term {d0} departs from 1"
        )));
    }
    let dinv = m.d.mul_inverse_depth((m_window + 3) as usize)?;
    let e = m.b.mul(&dinv)?.clamp(-m_window, -1);
    let f = m.c.mul(&dinv)?.clamp(-m_window, -1);
    let h = log_series_depth(&m.d, (m_window + 2) as i64)?
        .neg()
        .clamp(-m_window, -1);
    Ok((e, f, h))
}

/// One multiplicative step: `Θ ← Θ · exp(±Σ_r X_r ⊗ ρ⁻¹ ΔB^{(r)})`
/// followed by Gauss refactorization.  The Itô drift of the target SDE is
/// produced by the quadratic variation of the exponent, so the exponent
/// carries the noise only.
pub fn step_multiplicative(
    state: &mut SLEPathState,
    db: &[f64],
    dt: f64,
    m_window: i64,
    sign: SignConvention,
) -> SdeResult<()> {
    let s = noise_sign(sign);
    let inv = rho_inv_zeta(&state.rho, m_window)?;
    let (e, h, f) = match &mut state.internal {
        InternalState::Sl2 { e, h, f } => (e, h, f),
        _ => return Err(SdeError::Config(vec!["case is not sl2".into()])),
    };
    assert_eq!(db.len(), 3, "three internal increments");
    let _ = dt;
    let sqrt2 = std::f64::consts::SQRT_2;
    // Σ_r X_r ΔB^r with the orthonormal basis X₁ = H/√2, X₂ = (E+F)/√2,
    // X₃ = i(E-F)/√2:
    //   [[ΔB¹/√2, (ΔB² + iΔB³)/√2], [(ΔB² - iΔB³)/√2, -ΔB¹/√2]].
    let n11 = Complex64::new(db[0] / sqrt2, 0.0) * (-s);
    let n12 = Complex64::new(db[1], db[2]) / sqrt2 * (-s);
    let n21 = Complex64::new(db[1], -db[2]) / sqrt2 * (-s);
    // Sign: the increment enters as s·N with s = -1 in the default
    // convention; fold s into the entries (note -s above because the
    // convention constant multiplies +Σ in the sec-5 form).
    let n = Mat2 {
        a: inv.scale(&Cf64(n11)),
        b: inv.scale(&Cf64(n12)),
        c: inv.scale(&Cf64(n21)),
        d: inv.scale(&Cf64(-n11)),
    };
    // exp(N): entries of N^k sink below the window for k > m_window.
    let mut exp_n = Mat2::identity();
    let mut term = Mat2::identity();
    for k in 1..=(m_window + 2) {
        term = term.mul(&n)?.scale(Cf64::real(1.0 / k as f64));
        if term.is_negligible() {
            break;
        }
        exp_n = exp_n.add(&term)?;
    }
    let depth = (m_window + 3) as i64;
    let theta = theta_matrix(e, h, f, depth)?;
    let next = theta.mul(&exp_n)?;
    let (ne, nf, nh) = gauss_refactor(&next, m_window)?;
    *e = ne;
    *f = nf;
    *h = nh;
    assert_strictly_negative(e, "e");
    assert_strictly_negative(h, "h");
    assert_strictly_negative(f, "f");
    Ok(())
}

// ----------------------------------------------------------------------
// Path driver
// ----------------------------------------------------------------------

/// One sampled row of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub values: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub path: u64,
    pub samples: Vec<Sample>,
}

/// Advance one path by a single step, using the given per-stream
/// increments (`db[0]` drives the Loewner equation).
pub fn step_path(cfg: &PathConfig, state: &mut SLEPathState, db: &[f64]) -> SdeResult<()> {
    // The internal steps read ρ_t, so they go before the Loewner update.
    match &cfg.case {
        SimCase::VirasoroOnly => {}
        SimCase::Heisenberg { .. } => {
            step_internal_heisenberg(state, &db[1..], cfg.m_window)?;
        }
        SimCase::Sl2 => {
            let tau = cfg.tau.unwrap_or((4.0 - cfg.kappa) / 2.0);
            match cfg.integrator {
                Integrator::CoefficientEuler => step_internal_sl2(
                    state,
                    &db[1..],
                    cfg.dt,
                    tau,
                    cfg.m_window,
                    cfg.sign_convention,
                )?,
                Integrator::Multiplicative => step_multiplicative(
                    state,
                    &db[1..],
                    cfg.dt,
                    cfg.m_window,
                    cfg.sign_convention,
                )?,
            }
        }
    }
    step_loewner(state, db[0], cfg.dt, cfg.n_window)
}

/// Simulate `n_paths` independent paths, evaluating `eval` at each sample
/// time (snapped to the step grid).  Fully reproducible from the seed;
/// paths are simulated concurrently.
pub fn run_paths<F>(
    cfg: &PathConfig,
    n_paths: u64,
    sample_times: &[f64],
    eval: F,
) -> SdeResult<Vec<Trajectory>>
where
    F: Fn(&SLEPathState) -> Vec<Complex64> + Sync,
{
    let variances = cfg.validate()?;
    let total_steps = (cfg.t_horizon / cfg.dt).round() as i64;
    let sample_steps: Vec<i64> = sample_times
        .iter()
        .map(|t| ((t / cfg.dt).round() as i64).clamp(0, total_steps))
        .collect();
    (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut driver = BrownianDriver::new(cfg.seed, path, &variances, cfg.dt);
            let mut state = SLEPathState::initial(&cfg.case);
            let mut at_step: Vec<Option<Sample>> = vec![None; sample_steps.len()];
            for step in 0..=total_steps {
                for (slot, &s) in at_step.iter_mut().zip(&sample_steps) {
                    if s == step {
                        *slot = Some(Sample { t: state.t, values: eval(&state) });
                    }
                }
                if step < total_steps {
                    let db = driver.step();
                    step_path(cfg, &mut state, &db)?;
                }
            }
            // One sample per requested time, in request order.
            let samples = at_step.into_iter().map(|s| s.expect("sample recorded")).collect();
            Ok(Trajectory { path, samples })
        })
        .collect()
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------
