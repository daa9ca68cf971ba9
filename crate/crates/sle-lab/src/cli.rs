//! Experiment configuration, suite orchestration, and result emission.
//!
//! Four suites are exposed through the `sle-lab` binary:
//!
//! * `algebra-verify` — exact rational checks on the graded modules:
//!   level-two singular vectors, annihilating operators, Sugawara/affine
//!   bracket relations, and the closed conjugation formulas;
//! * `simulate` — Monte Carlo simulation of the coupled SDE system with
//!   per-path observable trajectories;
//! * `drift-test` — statistical drift certification of the closed-form
//!   observables (optionally the vector-valued component check, the
//!   integrator cross-validation, and the residue-identity probe);
//! * `symmetry-verify` — exact bracket relations and generating-function
//!   comparisons for the symmetry operators.
//!
//! Configuration is one JSON document (unknown keys rejected, all
//! validation errors collected before any computation).  Every run writes
//! a `manifest.json` with a configuration echo and a pass/fail roll-up;
//! all other artifacts reference the manifest hash.  All randomness flows
//! from the single config seed, so a repeated run with the same config
//! and seed produces byte-identical CSVs.  Thread count follows rayon's
//! `RAYON_NUM_THREADS` environment variable.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num::rational::BigRational;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::{
    affine_bracket_residual, annihilator_check, basis, conjugation_check, kappa_weights,
    singular_check, top_monomial, virasoro_bracket_residual, virasoro_internal_check, AlgError,
    CurrentId, GradedVector, ModuleSpec, Monomial, Sl2,
};
use crate::martingales::{
    all_sl2_observables, bb_weights, drift_test, integrator_discrepancy, monomial_label,
    residue_identity_report, vector_martingale_check, DriftReport, MgError, ObservableKind,
    ObservableSpec, Probe, Sgn,
};
use crate::scalar::{Rat, Scalar};
use crate::sde::{run_paths, PathConfig, SdeError, SignConvention, SimCase};
use crate::series::{Series, Var};
use crate::symmetry::{
    central_charge, commutator_check, generating_function_check, sample_states, OpCache, OpId,
    SymError, SymWindows,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Algebra(#[from] AlgError),
    #[error(transparent)]
    Martingales(#[from] MgError),
    #[error(transparent)]
    Symmetry(#[from] SymError),
    #[error(transparent)]
    Sde(#[from] SdeError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

// ----------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    AlgebraVerify,
    Simulate,
    DriftTest,
    SymmetryVerify,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::AlgebraVerify => "algebra-verify",
            Suite::Simulate => "simulate",
            Suite::DriftTest => "drift-test",
            Suite::SymmetryVerify => "symmetry-verify",
        }
    }
}

/// Scalar carrier of a suite: exact Gaussian rationals or IEEE doubles.
/// The algebraic suites are exact, the Monte Carlo suites are floating
/// point; an explicit value must agree with the suite.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarMode {
    Exact,
    Float,
}

/// One experiment: suite selection plus the knobs of that suite.
/// Unknown keys are rejected; validation collects every error.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub suite: Suite,
    /// SDE configuration; required by `simulate` and `drift-test`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathConfig>,
    /// Scalar carrier; defaults to the suite's natural mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar_mode: Option<ScalarMode>,
    /// Degree cutoff of the exact algebra checks (default 4).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<i64>,
    /// Observables for `simulate`/`drift-test`; defaults to the full
    /// closed-form set of the configured case at `probe`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<Vec<ObservableSpec>>,
    /// Default probe when `observables` is omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Probe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_times: Option<Vec<f64>>,
    /// Drift z-score threshold (default 3.0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Run the vector-valued component drift check up to this degree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_d_max: Option<i64>,
    /// Cross-validate the two integrators (dt vs dt/2) on this many paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator_halving_paths: Option<u64>,
    /// Record the residue-identity report at this probe (Heisenberg only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residue_probe: Option<Probe>,
    /// Symmetry truncation windows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<SymWindows>,
    /// Symmetry bracket grid: all |ℓ|, |m| ≤ level_max (default 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_max: Option<i64>,
    /// Generating-function comparison depth (levels down to -gf-depth).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gf_depth: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    fn needs_paths(&self) -> bool {
        matches!(self.suite, Suite::Simulate | Suite::DriftTest)
    }

    /// Collect every validation error (never just the first).
    fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match (self.suite, self.scalar_mode) {
            (_, None) => {}
            (Suite::AlgebraVerify | Suite::SymmetryVerify, Some(ScalarMode::Exact)) => {}
            (Suite::Simulate | Suite::DriftTest, Some(ScalarMode::Float)) => {}
            (s, Some(m)) => errs.push(format!(
                "scalar mode {m:?} does not match suite {}; exact suites are \
                 algebra-verify and symmetry-verify",
                s.name()
            )),
        }
        if self.needs_paths() {
            match &self.path {
                None => errs.push(format!("suite {} requires `path`", self.suite.name())),
                Some(p) => {
                    if let Err(SdeError::Config(mut v)) = p.validate() {
                        errs.append(&mut v);
                    }
                    if let Some(times) = &self.sample_times {
                        for t in times {
                            if *t < 0.0 || *t > p.t_horizon + 1e-12 {
                                errs.push(format!("sample time {t} outside [0, {}]", p.t_horizon));
                            }
                        }
                    }
                    for o in self.effective_observables(p) {
                        if let Err(e) = o.validate_for(&p.case) {
                            errs.push(e.to_string());
                        }
                        if let Probe::Coefficient { index } = o.probe {
                            if index > p.n_window - 4 || index < -1 {
                                errs.push(format!(
                                    "coefficient probe {index} needs n_window ≥ {}",
                                    index + 4
                                ));
                            }
                        }
                    }
                }
            }
            if self.n_paths == Some(0) {
                errs.push("n_paths must be ≥ 1".into());
            }
            if let Some(t) = self.threshold {
                if !(t > 0.0) {
                    errs.push(format!("threshold must be > 0, got {t}"));
                }
            }
        } else if self.path.is_some() && self.suite == Suite::AlgebraVerify {
            errs.push("algebra-verify takes no `path` section".into());
        }
        if let Some(d) = self.d_max {
            if !(1..=8).contains(&d) {
                errs.push(format!("d_max must be in 1..=8, got {d}"));
            }
        }
        if self.suite == Suite::SymmetryVerify {
            let w = self.windows.unwrap_or_default();
            if w.d_max < 2 || w.j_max < 2 || w.n_i > -2 || w.n_g > -2 || w.pad < 2 {
                errs.push(format!("symmetry windows are infeasible: {w:?}"));
            }
            let lm = self.level_max.unwrap_or(2);
            if !(0..=2).contains(&lm) {
                errs.push(format!("level_max must be in 0..=2, got {lm}"));
            }
        }
        errs
    }

    fn effective_observables(&self, path: &PathConfig) -> Vec<ObservableSpec> {
        if let Some(o) = &self.observables {
            return o.clone();
        }
        let probe = self.probe.unwrap_or(Probe::Point { re: 4.0, im: 0.0 });
        match &path.case {
            SimCase::Sl2 => {
                let mut specs = all_sl2_observables(probe);
                let (c, h) = bb_weights(6.0);
                specs.push(ObservableSpec { kind: ObservableKind::VirasoroBB { c, h }, probe });
                specs
            }
            SimCase::Heisenberg { rank } => {
                let lambda = path.lambda.unwrap_or(0.0);
                let mut specs: Vec<ObservableSpec> = (1..=*rank)
                    .map(|dir| ObservableSpec {
                        kind: ObservableKind::HeisenbergCurrent { dir, lambda },
                        probe,
                    })
                    .collect();
                specs.push(ObservableSpec {
                    kind: ObservableKind::HeisenbergVirasoro { lambda },
                    probe,
                });
                specs
            }
            SimCase::VirasoroOnly => {
                let (c, h) = bb_weights(path.kappa.max(f64::MIN_POSITIVE));
                vec![ObservableSpec { kind: ObservableKind::VirasoroBB { c, h }, probe }]
            }
        }
    }
}

/// Parse and validate a configuration file.  Unknown keys are a parse
/// error; semantic problems are collected into one `Validation` error.
pub fn parse_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)?;
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Validation(errs))
    }
}

// ----------------------------------------------------------------------
// Manifest and artifact plumbing
// ----------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub suite: Suite,
    pub seed: u64,
    /// SHA-256 of the canonical run identity (version, suite, config,
    /// seed); every artifact references this hash.
    pub manifest_sha256: String,
    pub config: serde_json::Value,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<String>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn run_hash(cfg: &ExperimentConfig, seed: u64) -> String {
    let identity = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "suite": cfg.suite,
        "config": cfg,
        "seed": seed,
    });
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&identity).expect("serializable"));
    format!("{:x}", hasher.finalize())
}

/// Collected suite output: the pass/fail roll-up plus named artifacts.
struct SuiteOutput {
    checks: Vec<Check>,
    /// `(file name, CSV header, CSV rows)`.
    csv: Vec<(String, String, Vec<String>)>,
    /// `(file name, JSON payload)`.
    json: Vec<(String, serde_json::Value)>,
}

impl SuiteOutput {
    fn new() -> Self {
        SuiteOutput { checks: Vec::new(), csv: Vec::new(), json: Vec::new() }
    }
}

fn write_artifacts(out_dir: &Path, hash: &str, out: &SuiteOutput) -> CliResult<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut names = Vec::new();
    for (name, header, rows) in &out.csv {
        let path = out_dir.join(name);
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut body = format!("# manifest-sha256: {hash}\n{header}\n");
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        f.write_all(body.as_bytes()).map_err(|e| io_err(&path, e))?;
        names.push(name.clone());
    }
    for (name, payload) in &out.json {
        let path = out_dir.join(name);
        let wrapped = serde_json::json!({ "manifest_sha256": hash, "report": payload });
        let text = serde_json::to_string_pretty(&wrapped)?;
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        names.push(name.clone());
    }
    Ok(names)
}

// ----------------------------------------------------------------------
// algebra-verify
// ----------------------------------------------------------------------

fn residuals_zero(rs: &[(Monomial, GradedVector)]) -> (bool, String) {
    let bad: Vec<String> = rs
        .iter()
        .filter(|(_, v)| !v.is_zero())
        .map(|(m, _)| monomial_label(m))
        .collect();
    if bad.is_empty() {
        (true, format!("{} residuals, all zero", rs.len()))
    } else {
        (false, format!("nonzero on {}", bad.join(", ")))
    }
}

fn run_algebra(cfg: &ExperimentConfig) -> CliResult<SuiteOutput> {
    let d_max = cfg.d_max.unwrap_or(4);
    let mut out = SuiteOutput::new();

    // Level-two singular vectors on the degenerate curve, plus
    // deterministic off-curve controls.
    for kappa in [Rat::int(2), Rat::int(6), Rat::ratio(8, 3)] {
        let (c, h) = kappa_weights(&kappa);
        let (r1, r2) = singular_check(&c, &h, &kappa)?;
        out.checks.push(Check::new(
            format!("singular(kappa={kappa})"),
            r1.is_zero() && r2.is_zero(),
            "L1 and L2 residuals of the level-two null vector",
        ));
    }
    for i in 0..5i64 {
        let kappa = Rat::ratio(2 * i + 3, 2);
        let (c, h) = kappa_weights(&kappa);
        let off_h = h.add(&Rat::ratio(i + 1, 7));
        let (r1, r2) = singular_check(&c, &off_h, &kappa)?;
        out.checks.push(Check::new(
            format!("singular-control({i})"),
            !(r1.is_zero() && r2.is_zero()),
            "off-curve (c,h) must not produce a null vector",
        ));
    }

    // Annihilating operator on Fock tops.
    for ell in [1u16, 2] {
        for lambda in [Rat::int(0), Rat::ratio(1, 2)] {
            let spec = ModuleSpec::HeisenbergFock { rank: ell, lambda: lambda.clone() };
            let top = GradedVector::from_monomial(spec.clone(), 2, top_monomial(&spec));
            let tau1 = Rat::int(2).sub(&Rat::int(4).mul(&lambda).mul(&lambda));
            let mut taus = vec![tau1];
            taus.extend(std::iter::repeat(Rat::int(2)).take(ell as usize - 1));
            let r = annihilator_check(&Rat::int(4), &taus, &top)?;
            out.checks.push(Check::new(
                format!("annihilator(heisenberg,l={ell},lambda={lambda})"),
                r.is_zero(),
                "κ=4 with τ₁=2-4λ², τ_i=2",
            ));
        }
    }
    // Annihilating operator on both charged lattice tops, on and off the
    // κ+2τ=4 relation.
    let lattice = ModuleSpec::LatticeSl2 { charged: true };
    for (kp, kq, tp, tq, expect_zero) in
        [(2, 1, 1, 1, true), (1, 1, 3, 2, true), (3, 1, 1, 2, true), (2, 1, 2, 1, false)]
    {
        for charge in [1i64, -1] {
            let top = GradedVector::from_monomial(
                lattice.clone(),
                2,
                Monomial::Lattice { charge, modes: Vec::new() },
            );
            let r = annihilator_check(&Rat::ratio(kp, kq), &[Rat::ratio(tp, tq)], &top)?;
            out.checks.push(Check::new(
                format!("annihilator(sl2,kappa={kp}/{kq},tau={tp}/{tq},charge={charge})"),
                r.is_zero() == expect_zero,
                if expect_zero { "κ+2τ=4 annihilates" } else { "κ+2τ≠4 must not annihilate" },
            ));
        }
    }

    // Sugawara Virasoro brackets (central charge from the module) and
    // affine brackets on all basis vectors of degree ≤ d_max.
    let modules = [
        ModuleSpec::HeisenbergFock { rank: 1, lambda: Rat::ratio(1, 2) },
        ModuleSpec::HeisenbergFock { rank: 2, lambda: Rat::ratio(1, 3) },
        ModuleSpec::LatticeSl2 { charged: true },
    ];
    let spec_label = |s: &ModuleSpec| match s {
        ModuleSpec::VirasoroVerma { .. } => "verma".to_string(),
        ModuleSpec::HeisenbergFock { rank, lambda } => format!("heis,l={rank},lambda={lambda}"),
        ModuleSpec::LatticeSl2 { .. } => "sl2".to_string(),
    };
    let vir_pairs = [(2, -2), (1, -1), (0, 1), (2, -1), (-2, 1), (1, 1)];
    for spec in &modules {
        let mut residuals = Vec::new();
        for m in basis(spec, d_max) {
            let v = GradedVector::from_monomial(spec.clone(), d_max, m.clone());
            for (a, b) in vir_pairs {
                residuals.push((m.clone(), virasoro_bracket_residual(a, b, &v)?));
            }
        }
        let (pass, detail) = residuals_zero(&residuals);
        out.checks
            .push(Check::new(format!("virasoro-brackets({})", spec_label(spec)), pass, detail));
    }
    let aff_pairs = [(0, 0), (1, -1), (2, -2), (1, 1), (-1, 2), (2, 0)];
    let mut residuals = Vec::new();
    for m in basis(&lattice, d_max) {
        let v = GradedVector::from_monomial(lattice.clone(), d_max, m.clone());
        for x in [Sl2::E, Sl2::H, Sl2::F] {
            for y in [Sl2::E, Sl2::H, Sl2::F] {
                for (a, b) in aff_pairs {
                    residuals.push((m.clone(), affine_bracket_residual(x, a, y, b, &v)?));
                }
            }
        }
    }
    let (pass, detail) = residuals_zero(&residuals);
    out.checks.push(Check::new("affine-brackets(sl2)", pass, detail));

    // Closed conjugation formulas with a fixed rational series of depth 4,
    // and the internal-coordinate Virasoro conjugation.
    let a = Series::from_terms(
        Var::Zeta,
        &[
            (-1, Rat::ratio(1, 2)),
            (-2, Rat::ratio(-1, 3)),
            (-3, Rat::ratio(1, 5)),
            (-4, Rat::ratio(2, 7)),
        ],
    );
    let x = Series::from_terms(Var::Zeta, &[(-2, Rat::int(1)), (1, Rat::ratio(1, 3))]);
    for aa in [Sl2::E, Sl2::H, Sl2::F] {
        for xx in [Sl2::E, Sl2::H, Sl2::F] {
            let rs = conjugation_check(
                &lattice,
                CurrentId::Sl2(aa),
                &a,
                CurrentId::Sl2(xx),
                &x,
                d_max,
            )?;
            let (pass, detail) = residuals_zero(&rs);
            out.checks
                .push(Check::new(format!("conjugation({aa:?},{xx:?})"), pass, detail));
        }
    }
    let fock = ModuleSpec::HeisenbergFock { rank: 1, lambda: Rat::ratio(1, 2) };
    let rs = conjugation_check(&fock, CurrentId::Heis(1), &a, CurrentId::Heis(1), &x, d_max)?;
    let (pass, detail) = residuals_zero(&rs);
    out.checks.push(Check::new("conjugation(heis,heis)", pass, detail));
    for spec in [&fock, &lattice] {
        let id = match spec {
            ModuleSpec::HeisenbergFock { .. } => CurrentId::Heis(1),
            _ => CurrentId::Sl2(Sl2::H),
        };
        let mut residuals = Vec::new();
        for m in -2..=2 {
            residuals.extend(virasoro_internal_check(spec, id, &a, m, d_max)?);
        }
        let (pass, detail) = residuals_zero(&residuals);
        out.checks
            .push(Check::new(format!("virasoro-internal({})", spec_label(spec)), pass, detail));
    }

    out.json.push((
        "algebra_checks.json".into(),
        serde_json::to_value(&out.checks)?,
    ));
    Ok(out)
}

// ----------------------------------------------------------------------
// simulate
// ----------------------------------------------------------------------

fn default_sample_times(path: &PathConfig) -> Vec<f64> {
    (0..=4).map(|i| path.t_horizon * i as f64 / 4.0).collect()
}

fn run_simulate(cfg: &ExperimentConfig) -> CliResult<SuiteOutput> {
    let path = cfg.path.as_ref().expect("validated");
    let specs = cfg.effective_observables(path);
    for s in &specs {
        s.validate_for(&path.case)?;
    }
    let times = cfg.sample_times.clone().unwrap_or_else(|| default_sample_times(path));
    let n_paths = cfg.n_paths.unwrap_or(100);
    let trajs = run_paths(path, n_paths, &times, |s| {
        specs
            .iter()
            .map(|o| crate::martingales::eval_observable(s, o).expect("validated"))
            .collect()
    })?;
    let mut header = String::from("path,t");
    for s in &specs {
        let id = s.id().replace(',', ";");
        header.push_str(&format!(",{id}_re,{id}_im"));
    }
    let mut rows = Vec::new();
    for traj in &trajs {
        for sample in &traj.samples {
            let mut row = format!("{},{}", traj.path, sample.t);
            for v in &sample.values {
                row.push_str(&format!(",{},{}", v.re, v.im));
            }
            rows.push(row);
        }
    }
    let mut out = SuiteOutput::new();
    out.checks.push(Check::new(
        "simulate",
        true,
        format!("{} paths × {} sample times × {} observables", n_paths, times.len(), specs.len()),
    ));
    out.csv.push(("trajectories.csv".into(), header, rows));
    Ok(out)
}

// ----------------------------------------------------------------------
// drift-test
// ----------------------------------------------------------------------

fn drift_csv(reports: &[DriftReport]) -> (String, Vec<String>) {
    let header = "observable,t,mean_re,mean_im,se_re,se_im,z_re,z_im".to_string();
    let mut rows = Vec::new();
    for rep in reports {
        let obs = rep.observable.replace(',', ";");
        for r in &rep.rows {
            rows.push(format!(
                "{obs},{},{},{},{},{},{},{}",
                r.t, r.mean_re, r.mean_im, r.se_re, r.se_im, r.z_re, r.z_im
            ));
        }
    }
    (header, rows)
}

fn summarize_drift(name: &str, reports: &[DriftReport], checks: &mut Vec<Check>) {
    let failing: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} (max z = {:.2})", r.observable, r.max_z))
        .collect();
    let max_z = reports.iter().map(|r| r.max_z).fold(0.0f64, f64::max);
    checks.push(Check::new(
        name,
        failing.is_empty(),
        if failing.is_empty() {
            format!("{} observables, max |z| = {max_z:.3}", reports.len())
        } else {
            format!("failing: {}", failing.join(", "))
        },
    ));
}

fn module_for_case(path: &PathConfig) -> CliResult<ModuleSpec> {
    let to_rat = |x: f64| -> CliResult<Rat> {
        BigRational::from_float(x)
            .map(Rat::from_big)
            .ok_or_else(|| CliError::Validation(vec![format!("non-finite parameter {x}")]))
    };
    Ok(match &path.case {
        SimCase::VirasoroOnly => {
            let (c, h) = kappa_weights(&to_rat(path.kappa)?);
            ModuleSpec::VirasoroVerma { c, h }
        }
        SimCase::Heisenberg { rank } => ModuleSpec::HeisenbergFock {
            rank: *rank,
            lambda: to_rat(path.lambda.unwrap_or(0.0))?,
        },
        SimCase::Sl2 => ModuleSpec::LatticeSl2 { charged: true },
    })
}

fn run_drift(cfg: &ExperimentConfig) -> CliResult<SuiteOutput> {
    let path = cfg.path.as_ref().expect("validated");
    let specs = cfg.effective_observables(path);
    let times = cfg.sample_times.clone().unwrap_or_else(|| default_sample_times(path));
    let n_paths = cfg.n_paths.unwrap_or(1000);
    let threshold = cfg.threshold.unwrap_or(3.0);
    let mut out = SuiteOutput::new();

    let reports = drift_test(path, &specs, n_paths, &times, threshold)?;
    summarize_drift("drift(closed-form)", &reports, &mut out.checks);
    let (header, rows) = drift_csv(&reports);
    out.csv.push(("drift.csv".into(), header, rows));
    out.json
        .push(("drift_reports.json".into(), serde_json::to_value(&reports)?));

    if let Some(d) = cfg.vector_d_max {
        let module = module_for_case(path)?;
        let vreports = vector_martingale_check(path, &module, d, n_paths, &times, threshold)?;
        summarize_drift("drift(vector)", &vreports, &mut out.checks);
        out.json
            .push(("vector_drift_reports.json".into(), serde_json::to_value(&vreports)?));
    }

    if let Some(n) = cfg.integrator_halving_paths {
        let d1 = integrator_discrepancy(path, n)?;
        let mut half = path.clone();
        half.dt /= 2.0;
        let d2 = integrator_discrepancy(&half, n)?;
        let ratio = if d1 > 0.0 { d2 / d1 } else { f64::NAN };
        out.checks.push(Check::new(
            "integrator-halving",
            (0.35..=0.65).contains(&ratio),
            format!("discrepancy {d1:.3e} → {d2:.3e}, ratio {ratio:.3}"),
        ));
        out.json.push((
            "integrator.json".into(),
            serde_json::json!({ "dt": path.dt, "discrepancy": d1,
                                "dt_half": half.dt, "discrepancy_half": d2, "ratio": ratio }),
        ));
    }

    if let Some(probe) = cfg.residue_probe {
        let rep = residue_identity_report(path, n_paths, &times, probe)?;
        out.checks.push(Check::new(
            "residue-identity-report",
            rep.t0_both_zero,
            "report generated; both sides exactly zero at t = 0",
        ));
        out.json
            .push(("residue_report.json".into(), serde_json::to_value(&rep)?));
    }
    Ok(out)
}

// ----------------------------------------------------------------------
// symmetry-verify
// ----------------------------------------------------------------------

fn run_symmetry(cfg: &ExperimentConfig) -> CliResult<SuiteOutput> {
    let w = cfg.windows.unwrap_or_default();
    let lmax = cfg.level_max.unwrap_or(2);
    let gf_depth = cfg.gf_depth.unwrap_or(3);
    let mut cache = OpCache::default();
    let states = sample_states(&w, 2);
    let ids = [OpId::E, OpId::H, OpId::F, OpId::L];
    let mut out = SuiteOutput::new();

    let mut residual_map = BTreeMap::new();
    let mut worst = 0.0f64;
    for ia in ids {
        for ib in ids {
            for la in -lmax..=lmax {
                for lb in -lmax..=lmax {
                    let rep = commutator_check(ia, la, ib, lb, &states, &w, &mut cache)?;
                    worst = worst.max(rep.max_residual);
                    residual_map
                        .insert(format!("{ia:?}({la}),{ib:?}({lb})"), serde_json::to_value(&rep)?);
                }
            }
        }
    }
    out.checks.push(Check::new(
        "symmetry-commutators",
        worst == 0.0,
        format!(
            "all |l|,|m| ≤ {lmax} over {} relations; max safe-window residual {worst:e}",
            residual_map.len()
        ),
    ));
    out.json.push((
        "commutators.json".into(),
        serde_json::Value::Object(residual_map.into_iter().collect()),
    ));

    let header =
        "id,bra,ket,level,op_re,op_im,closed_re,closed_im,sign,residual".to_string();
    let mut rows = Vec::new();
    let mut gf_worst = 0.0f64;
    let mut gf_sign_ok = true;
    for id in ids {
        for bra in [Sgn::Plus, Sgn::Minus] {
            for ket in [Sgn::Plus, Sgn::Minus] {
                let rep = generating_function_check(id, bra, ket, &w, gf_depth, &mut cache)?;
                gf_worst = gf_worst.max(rep.max_residual);
                gf_sign_ok &= rep.sign == 1;
                for r in &rep.rows {
                    rows.push(format!(
                        "{id:?},{bra:?},{ket:?},{},{},{},{},{},{},{}",
                        r.level, r.op_re, r.op_im, r.closed_re, r.closed_im, rep.sign, r.residual
                    ));
                }
            }
        }
    }
    out.checks.push(Check::new(
        "generating-functions",
        gf_worst < 1e-12 && gf_sign_ok,
        format!("max residual {gf_worst:e}, construction sign {}", if gf_sign_ok { "+1" } else { "mixed" }),
    ));
    out.csv.push(("generating_functions.csv".into(), header, rows));

    let c = central_charge(&w, &mut cache)?;
    out.checks.push(Check::new(
        "central-charge",
        c == Rat::int(1),
        format!("[L2,L-2] - 4·L0 on the constant state gives c = {c}"),
    ));
    Ok(out)
}

// ----------------------------------------------------------------------
// Orchestration
// ----------------------------------------------------------------------

/// Run one suite and write its artifacts; returns the manifest.
pub fn run_suite(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<RunManifest> {
    let started = Instant::now();
    let seed = cfg.path.as_ref().map_or(0, |p| p.seed);
    let hash = run_hash(cfg, seed);
    let output = match cfg.suite {
        Suite::AlgebraVerify => run_algebra(cfg)?,
        Suite::Simulate => run_simulate(cfg)?,
        Suite::DriftTest => run_drift(cfg)?,
        Suite::SymmetryVerify => run_symmetry(cfg)?,
    };
    let artifacts = write_artifacts(out_dir, &hash, &output)?;
    let pass = output.checks.iter().all(|c| c.pass);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        suite: cfg.suite,
        seed,
        manifest_sha256: hash,
        config: serde_json::to_value(cfg)?,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        artifacts,
        checks: output.checks,
        pass,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

// ----------------------------------------------------------------------
// Command line
// ----------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug, clap::ValueEnum)]
enum SignArg {
    #[value(name = "appC")]
    AppC,
    #[value(name = "sec5")]
    Sec5,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `out-dir`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the internal-noise sign convention.
    #[arg(long, value_enum)]
    sign_convention: Option<SignArg>,
}

#[derive(Subcommand, Debug)]
enum SuiteCmd {
    /// Exact rational checks on the graded modules.
    AlgebraVerify(CommonArgs),
    /// Monte Carlo simulation with per-path observable trajectories.
    Simulate(CommonArgs),
    /// Statistical drift certification of the martingale observables.
    DriftTest(CommonArgs),
    /// Exact checks of the symmetry operators.
    SymmetryVerify(CommonArgs),
}

/// `sle-lab <suite> --config <file> [--seed S] [--out DIR]
/// [--sign-convention {appC, sec5}]`
#[derive(Parser, Debug)]
#[command(name = "sle-lab", version, about = "SLE with internal degrees of freedom")]
struct Cli {
    #[command(subcommand)]
    suite: SuiteCmd,
}

fn execute(suite: Suite, args: &CommonArgs) -> CliResult<RunManifest> {
    let mut cfg = parse_config(&args.config)?;
    if cfg.suite != suite {
        return Err(CliError::Validation(vec![format!(
            "config declares suite {}, command line requests {}",
            cfg.suite.name(),
            suite.name()
        )]));
    }
    if let Some(p) = cfg.path.as_mut() {
        if let Some(s) = args.seed {
            p.seed = s;
        }
        if let Some(s) = args.sign_convention {
            p.sign_convention = match s {
                SignArg::AppC => SignConvention::AppC,
                SignArg::Sec5 => SignConvention::Sec5,
            };
        }
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    run_suite(&cfg, &out_dir)
}

/// Binary entry point.  Exit status is the faithful conjunction of the
/// suite results: nonzero iff any asserted check fails or an error occurs.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let (suite, args) = match &cli.suite {
        SuiteCmd::AlgebraVerify(a) => (Suite::AlgebraVerify, a),
        SuiteCmd::Simulate(a) => (Suite::Simulate, a),
        SuiteCmd::DriftTest(a) => (Suite::DriftTest, a),
        SuiteCmd::SymmetryVerify(a) => (Suite::SymmetryVerify, a),
    };
    match execute(suite, args) {
        Ok(manifest) => {
            for c in &manifest.checks {
                println!("[{}] {}: {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            println!(
                "{}: {} in {:.2}s (manifest {})",
                manifest.suite.name(),
                if manifest.pass { "pass" } else { "FAIL" },
                manifest.wall_clock_seconds,
                &manifest.manifest_sha256[..12]
            );
            if manifest.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("sle-lab: {e}");
            ExitCode::FAILURE
        }
    }
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, CliError> {
        let cfg: ExperimentConfig = serde_json::from_value(v)?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Validation(errs))
        }
    }

    #[test]
    fn minimal_sl2_config_derives_tau() {
        let cfg = parse(serde_json::json!({
            "suite": "drift-test",
            "path": { "kappa": 2.0, "dt": 1e-3, "t-horizon": 0.1, "seed": 7,
                      "integrator": "coefficient-euler", "case": "sl2" }
        }))
        .unwrap();
        let vars = cfg.path.unwrap().validate().unwrap();
        assert_eq!(vars, vec![2.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r = parse(serde_json::json!({ "suite": "algebra-verify", "bogus": 1 }));
        assert!(matches!(r, Err(CliError::Json(_))));
    }

    #[test]
    fn heisenberg_large_lambda_rejected_with_constraint() {
        let r = parse(serde_json::json!({
            "suite": "drift-test",
            "path": { "kappa": 4.0, "lambda": 0.8, "dt": 1e-3, "t-horizon": 0.1,
                      "seed": 1, "integrator": "coefficient-euler",
                      "case": { "heisenberg": { "rank": 1 } } }
        }));
        match r {
            Err(CliError::Validation(errs)) => {
                assert!(errs.iter().any(|e| e.contains("2-4λ²")), "{errs:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn validation_collects_all_errors() {
        let r = parse(serde_json::json!({
            "suite": "drift-test",
            "threshold": -1.0,
            "path": { "kappa": -2.0, "dt": 0.0, "t-horizon": 0.1, "seed": 1,
                      "integrator": "coefficient-euler", "case": "sl2" }
        }));
        match r {
            Err(CliError::Validation(errs)) => assert!(errs.len() >= 3, "{errs:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn scalar_mode_must_match_suite() {
        let r = parse(serde_json::json!({
            "suite": "algebra-verify",
            "scalar-mode": "float"
        }));
        assert!(matches!(r, Err(CliError::Validation(_))));
    }

    #[test]
    fn simulate_runs_are_byte_identical() {
        let cfg = parse(serde_json::json!({
            "suite": "simulate",
            "n-paths": 3,
            "sample-times": [0.0, 0.05],
            "path": { "kappa": 2.0, "dt": 1e-2, "t-horizon": 0.05, "seed": 11,
                      "integrator": "coefficient-euler", "case": "sl2" }
        }))
        .unwrap();
        let dir = std::env::temp_dir().join("sle-lab-cli-test");
        let d1 = dir.join("a");
        let d2 = dir.join("b");
        run_suite(&cfg, &d1).unwrap();
        run_suite(&cfg, &d2).unwrap();
        let a = std::fs::read(d1.join("trajectories.csv")).unwrap();
        let b = std::fs::read(d2.join("trajectories.csv")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        let manifest = std::fs::read_to_string(d1.join("manifest.json")).unwrap();
        let m: serde_json::Value = serde_json::from_str(&manifest).unwrap();
        let hash = m["manifest_sha256"].as_str().unwrap();
        assert!(String::from_utf8(a).unwrap().starts_with(&format!("# manifest-sha256: {hash}")));
        std::fs::remove_dir_all(&dir).ok();
    }
}
