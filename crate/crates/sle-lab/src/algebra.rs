//! Exact computations on graded highest-weight modules.
//!
//! Three module families share one representation engine:
//!
//! * Virasoro Verma modules `M(c, h)` with the direct recursive action of
//!   the `L_n`;
//! * Heisenberg Fock spaces of rank `ℓ` with top weight `λ` attached to the
//!   first direction, Virasoro action via the quadratic (Sugawara)
//!   construction;
//! * the level-1 affine sl₂ modules in their lattice realization, where
//!   `E(z)` and `F(z)` act as vertex operators attached to `±α` with
//!   `(α|α) = 2` and the Cartan current is `α(z)`.
//!
//! All coefficients are exact Gaussian rationals ([`Rat`]), so every
//! identity checked here is asserted with zero tolerance.  Vectors are
//! graded by non-negative integer depth below the top; a [`GradedVector`]
//! carries a degree `cutoff` and an application mode decides whether a
//! result component beyond the cutoff is an error ([`ApplyMode::Strict`])
//! or is dropped as a completion-space projection ([`ApplyMode::Project`]).

use crate::scalar::{Rat, Scalar};
use crate::series::{
    exp_series_depth, residue, v_extract, Realization, Series, SeriesError, Var,
};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum AlgError {
    #[error("module mismatch: {0}")]
    ModuleMismatch(String),
    #[error("result component at degree {degree} exceeds the cutoff {cutoff}")]
    DegreeOverflow { degree: i64, cutoff: i64 },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

pub type AResult<T> = std::result::Result<T, AlgError>;

// ----------------------------------------------------------------------
// Module specifications
// ----------------------------------------------------------------------

/// Which highest-weight module a vector lives in.
#[derive(Clone, PartialEq, Debug)]
pub enum ModuleSpec {
    /// Virasoro Verma module with central charge `c` and top weight `h`.
    VirasoroVerma { c: Rat, h: Rat },
    /// Rank-`rank` Heisenberg Fock space; the top vector has `H_1(0)`
    /// eigenvalue `lambda` and eigenvalue 0 in the other directions.
    HeisenbergFock { rank: u16, lambda: Rat },
    /// Level-1 affine sl₂ module over the rank-one lattice `ℤα`,
    /// `(α|α) = 2`.  `charged` selects the module generated by `e^{±Λ}`
    /// (odd charge sectors, top weight 1/4); otherwise the vacuum module
    /// (even charge sectors).
    LatticeSl2 { charged: bool },
}

impl ModuleSpec {
    /// Level `k` of the affine algebra (1 for both affine families; not
    /// meaningful for Verma modules).
    pub fn level(&self) -> Rat {
        Rat::int(1)
    }

    /// Central charge of the Virasoro action.
    pub fn central_charge(&self) -> Rat {
        match self {
            ModuleSpec::VirasoroVerma { c, .. } => c.clone(),
            ModuleSpec::HeisenbergFock { rank, .. } => Rat::int(*rank as i64),
            ModuleSpec::LatticeSl2 { .. } => Rat::int(1),
        }
    }

    /// `L_0` eigenvalue of the top vector(s).
    pub fn top_weight(&self) -> Rat {
        match self {
            ModuleSpec::VirasoroVerma { h, .. } => h.clone(),
            ModuleSpec::HeisenbergFock { lambda, .. } => {
                lambda.mul(lambda).mul(&Rat::ratio(1, 2))
            }
            ModuleSpec::LatticeSl2 { charged } => {
                if *charged {
                    Rat::ratio(1, 4)
                } else {
                    Rat::int(0)
                }
            }
        }
    }

    /// `1 / (2(k + h∨))`, the prefactor of the quadratic Virasoro
    /// construction (1/2 for the Heisenberg algebra, 1/6 for sl₂ at
    /// level 1).
    fn sugawara_prefactor(&self) -> AResult<Rat> {
        match self {
            ModuleSpec::HeisenbergFock { .. } => Ok(Rat::ratio(1, 2)),
            ModuleSpec::LatticeSl2 { .. } => Ok(Rat::ratio(1, 6)),
            ModuleSpec::VirasoroVerma { .. } => Err(AlgError::Unsupported(
                "quadratic Virasoro construction needs an affine module".into(),
            )),
        }
    }

}

// ----------------------------------------------------------------------
// Basis monomials
// ----------------------------------------------------------------------

/// PBW basis monomial applied to the top vector.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Monomial {
    /// `L(-d₁)⋯L(-d_r)` with `d₁ ≥ d₂ ≥ … ≥ 1`.
    Verma(Vec<u32>),
    /// Product of `H_i(-m)` creations, stored as `(i, m)` sorted
    /// ascending (the factors commute).
    Fock(Vec<(u16, u32)>),
    /// `α(-m₁)⋯α(-m_r) · e^{qΛ}` with `Λ = α/2` and `m₁ ≥ … ≥ 1`; the
    /// charge `q` is odd in the charged module and even in the vacuum
    /// module.
    Lattice { charge: i64, modes: Vec<u32> },
}

/// Integer degree offset of the lattice charge sector `qΛ`: the conformal
/// weight `q²/4` minus the top weight of the module the sector belongs to.
fn charge_offset(q: i64) -> i64 {
    if q.rem_euclid(2) == 1 {
        (q * q - 1) / 4
    } else {
        q * q / 4
    }
}

impl Monomial {
    pub fn degree(&self) -> i64 {
        match self {
            Monomial::Verma(ds) => ds.iter().map(|&d| d as i64).sum(),
            Monomial::Fock(es) => es.iter().map(|&(_, m)| m as i64).sum(),
            Monomial::Lattice { charge, modes } => {
                charge_offset(*charge) + modes.iter().map(|&m| m as i64).sum::<i64>()
            }
        }
    }

    fn matches(&self, spec: &ModuleSpec) -> bool {
        match (self, spec) {
            (Monomial::Verma(_), ModuleSpec::VirasoroVerma { .. }) => true,
            (Monomial::Fock(es), ModuleSpec::HeisenbergFock { rank, .. }) => {
                es.iter().all(|&(i, m)| i >= 1 && i <= *rank && m >= 1)
            }
            (Monomial::Lattice { charge, .. }, ModuleSpec::LatticeSl2 { charged }) => {
                charge.rem_euclid(2) == if *charged { 1 } else { 0 }
            }
            _ => false,
        }
    }
}

/// Top monomial of a module; for the charged lattice module this is
/// `e^{Λ}` (use [`Monomial::Lattice`] directly for `e^{-Λ}`).
pub fn top_monomial(spec: &ModuleSpec) -> Monomial {
    match spec {
        ModuleSpec::VirasoroVerma { .. } => Monomial::Verma(vec![]),
        ModuleSpec::HeisenbergFock { .. } => Monomial::Fock(vec![]),
        ModuleSpec::LatticeSl2 { charged } => Monomial::Lattice {
            charge: if *charged { 1 } else { 0 },
            modes: vec![],
        },
    }
}

/// All partitions of `n` as non-increasing part lists (includes the empty
/// partition for `n = 0`).
fn partitions(n: i64) -> Vec<Vec<u32>> {
    fn rec(remaining: i64, max_part: i64, acc: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if remaining == 0 {
            out.push(acc.clone());
            return;
        }
        let mut p = max_part.min(remaining);
        while p >= 1 {
            acc.push(p as u32);
            rec(remaining - p, p, acc, out);
            acc.pop();
            p -= 1;
        }
    }
    let mut out = Vec::new();
    rec(n.max(0), n.max(0), &mut Vec::new(), &mut out);
    out
}

/// All basis monomials of degree at most `d_max`.
pub fn basis(spec: &ModuleSpec, d_max: i64) -> Vec<Monomial> {
    let mut out = Vec::new();
    match spec {
        ModuleSpec::VirasoroVerma { .. } => {
            for r in 0..=d_max {
                for p in partitions(r) {
                    out.push(Monomial::Verma(p));
                }
            }
        }
        ModuleSpec::HeisenbergFock { rank, .. } => {
            fn rec(
                rank: u16,
                remaining: i64,
                min_key: (u16, u32),
                acc: &mut Vec<(u16, u32)>,
                out: &mut Vec<Monomial>,
            ) {
                out.push(Monomial::Fock(acc.clone()));
                for i in 1..=rank {
                    for m in 1..=remaining {
                        let key = (i, m as u32);
                        if key < min_key {
                            continue;
                        }
                        acc.push(key);
                        rec(rank, remaining - m, key, acc, out);
                        acc.pop();
                    }
                }
            }
            rec(*rank, d_max, (1, 1), &mut Vec::new(), &mut out);
        }
        ModuleSpec::LatticeSl2 { charged } => {
            let parity = if *charged { 1 } else { 0 };
            let mut q = -(2 * d_max + 2);
            while q <= 2 * d_max + 2 {
                if q.rem_euclid(2) == parity && charge_offset(q) <= d_max {
                    for r in 0..=(d_max - charge_offset(q)) {
                        for p in partitions(r) {
                            out.push(Monomial::Lattice { charge: q, modes: p });
                        }
                    }
                }
                q += 1;
            }
        }
    }
    out.sort();
    out
}

// ----------------------------------------------------------------------
// Graded vectors
// ----------------------------------------------------------------------

/// How to treat result components beyond the degree cutoff.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ApplyMode {
    /// Error out ([`AlgError::DegreeOverflow`]).
    Strict,
    /// Drop them (projection of the graded completion).
    Project,
}

/// Finite linear combination of basis monomials, with a degree cutoff
/// marking how far the graded components are tracked.
#[derive(Clone, PartialEq, Debug)]
pub struct GradedVector {
    spec: ModuleSpec,
    cutoff: i64,
    terms: BTreeMap<Monomial, Rat>,
}

impl GradedVector {
    pub fn zero(spec: ModuleSpec, cutoff: i64) -> Self {
        GradedVector { spec, cutoff, terms: BTreeMap::new() }
    }

    /// The top vector of the module.
    pub fn top(spec: ModuleSpec, cutoff: i64) -> Self {
        let m = top_monomial(&spec);
        GradedVector::from_monomial(spec, cutoff, m)
    }

    pub fn from_monomial(spec: ModuleSpec, cutoff: i64, m: Monomial) -> Self {
        assert!(m.matches(&spec), "monomial does not belong to the module");
        assert!(m.degree() <= cutoff, "monomial beyond cutoff");
        let mut terms = BTreeMap::new();
        terms.insert(m, Rat::int(1));
        GradedVector { spec, cutoff, terms }
    }

    pub fn spec(&self) -> &ModuleSpec {
        &self.spec
    }

    pub fn cutoff(&self) -> i64 {
        self.cutoff
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> Rat {
        self.terms.get(m).cloned().unwrap_or_else(|| Rat::int(0))
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    pub fn max_degree(&self) -> Option<i64> {
        self.terms.keys().map(|m| m.degree()).max()
    }

    /// Change the cutoff, dropping components beyond the new value.
    pub fn with_cutoff(&self, cutoff: i64) -> Self {
        let mut out = self.clone();
        out.cutoff = cutoff;
        out.terms.retain(|m, _| m.degree() <= cutoff);
        out
    }

    fn add_term(&mut self, m: Monomial, c: Rat) {
        if c.is_zero() {
            return;
        }
        debug_assert!(m.matches(&self.spec));
        debug_assert!(m.degree() <= self.cutoff);
        let became_zero = {
            let entry = self.terms.entry(m).or_insert_with(|| Rat::int(0));
            *entry = entry.add(&c);
            entry.is_zero()
        };
        if became_zero {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn add(&self, rhs: &Self) -> AResult<Self> {
        if self.spec != rhs.spec {
            return Err(AlgError::ModuleMismatch(format!(
                "{:?} vs {:?}",
                self.spec, rhs.spec
            )));
        }
        let mut out = self.with_cutoff(self.cutoff.min(rhs.cutoff));
        for (m, c) in &rhs.terms {
            if m.degree() <= out.cutoff {
                out.add_term(m.clone(), c.clone());
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Self) -> AResult<Self> {
        self.add(&rhs.scale(&Rat::int(-1)))
    }

    pub fn scale(&self, c: &Rat) -> Self {
        let mut out = GradedVector::zero(self.spec.clone(), self.cutoff);
        if c.is_zero() {
            return out;
        }
        for (m, v) in &self.terms {
            out.terms.insert(m.clone(), v.mul(c));
        }
        out
    }

    /// Largest coefficient modulus (diagnostics).
    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.modulus()).fold(0.0, f64::max)
    }
}

// ----------------------------------------------------------------------
// Single-mode actions on monomials
// ----------------------------------------------------------------------

/// The sl₂ basis used for the lattice currents.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum Sl2 {
    E,
    H,
    F,
}

impl Sl2 {
    /// Invariant form `(X|Y)` normalized so that `(α|α) = (H|H) = 2`.
    pub fn form(self, other: Sl2) -> Rat {
        match (self, other) {
            (Sl2::H, Sl2::H) => Rat::int(2),
            (Sl2::E, Sl2::F) | (Sl2::F, Sl2::E) => Rat::int(1),
            _ => Rat::int(0),
        }
    }

    /// `[self, other]` as a list of `(coefficient, basis element)`.
    pub fn bracket(self, other: Sl2) -> Vec<(Rat, Sl2)> {
        match (self, other) {
            (Sl2::E, Sl2::F) => vec![(Rat::int(1), Sl2::H)],
            (Sl2::F, Sl2::E) => vec![(Rat::int(-1), Sl2::H)],
            (Sl2::H, Sl2::E) => vec![(Rat::int(2), Sl2::E)],
            (Sl2::E, Sl2::H) => vec![(Rat::int(-2), Sl2::E)],
            (Sl2::H, Sl2::F) => vec![(Rat::int(-2), Sl2::F)],
            (Sl2::F, Sl2::H) => vec![(Rat::int(2), Sl2::F)],
            _ => vec![],
        }
    }
}

/// A current of one of the affine module families.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CurrentId {
    /// `H_i(z)` on a Fock space (1-based direction).
    Heis(u16),
    /// An sl₂ current on a lattice module; `Sl2::H` is the Cartan current
    /// `α(z)`.
    Sl2(Sl2),
}

impl CurrentId {
    /// Invariant form `(A|X)` between two currents of the same family
    /// (`(H_i|H_j) = δ_ij` on the Fock side).
    pub fn form(self, other: CurrentId) -> AResult<Rat> {
        match (self, other) {
            (CurrentId::Heis(i), CurrentId::Heis(j)) => {
                Ok(if i == j { Rat::int(1) } else { Rat::int(0) })
            }
            (CurrentId::Sl2(a), CurrentId::Sl2(b)) => Ok(a.form(b)),
            _ => Err(AlgError::ModuleMismatch("currents of different families".into())),
        }
    }
}

/// `L_n` on a Verma monomial, returned as normal-ordered terms.
fn verma_l(n: i64, depths: &[u32], c: &Rat, h: &Rat) -> Vec<(Vec<u32>, Rat)> {
    if depths.is_empty() {
        return if n > 0 {
            vec![]
        } else if n == 0 {
            if h.is_zero() { vec![] } else { vec![(vec![], h.clone())] }
        } else {
            vec![(vec![(-n) as u32], Rat::int(1))]
        };
    }
    let d1 = depths[0] as i64;
    if n < 0 && -n >= d1 {
        let mut ds = Vec::with_capacity(depths.len() + 1);
        ds.push((-n) as u32);
        ds.extend_from_slice(depths);
        return vec![(ds, Rat::int(1))];
    }
    // Commute past the leading creation:
    // L_n L_{-d₁} = L_{-d₁} L_n + (n + d₁) L_{n-d₁} + δ_{n,d₁} (n³-n)/12 · c.
    let rest = &depths[1..];
    let mut out: Vec<(Vec<u32>, Rat)> = Vec::new();
    for (ds, co) in verma_l(n, rest, c, h) {
        for (ds2, co2) in verma_l(-d1, &ds, c, h) {
            out.push((ds2, co.mul(&co2)));
        }
    }
    let f = Rat::int(n + d1);
    if !f.is_zero() {
        for (ds, co) in verma_l(n - d1, rest, c, h) {
            out.push((ds, co.mul(&f)));
        }
    }
    if n == d1 {
        let cc = Rat::int(n * n * n - n).mul(&Rat::ratio(1, 12)).mul(c);
        if !cc.is_zero() {
            out.push((rest.to_vec(), cc));
        }
    }
    out
}

/// `H_i(n)` on a Fock monomial.
fn fock_h(dir: u16, n: i64, entries: &[(u16, u32)], lambda: &Rat) -> Vec<(Vec<(u16, u32)>, Rat)> {
    if n < 0 {
        let mut es = entries.to_vec();
        es.push((dir, (-n) as u32));
        es.sort_unstable();
        return vec![(es, Rat::int(1))];
    }
    if n == 0 {
        // H_i(0) commutes with the creations and reads the top weight.
        return if dir == 1 && !lambda.is_zero() {
            vec![(entries.to_vec(), lambda.clone())]
        } else {
            vec![]
        };
    }
    // [H_i(n), H_j(-m)] = n δ_ij δ_{nm} k with k = 1.
    let mut out = Vec::new();
    for (p, &(j, m)) in entries.iter().enumerate() {
        if j == dir && m as i64 == n {
            let mut es = entries.to_vec();
            es.remove(p);
            out.push((es, Rat::int(n)));
        }
    }
    out
}

/// `α(n)` on a lattice monomial.
fn lattice_alpha(n: i64, charge: i64, modes: &[u32]) -> Vec<(Monomial, Rat)> {
    if n < 0 {
        let mut ms = modes.to_vec();
        ms.push((-n) as u32);
        ms.sort_unstable_by(|a, b| b.cmp(a));
        return vec![(Monomial::Lattice { charge, modes: ms }, Rat::int(1))];
    }
    if n == 0 {
        // α(0) e^{qΛ} = (α|qΛ) e^{qΛ} = q e^{qΛ}.
        return if charge == 0 {
            vec![]
        } else {
            vec![(Monomial::Lattice { charge, modes: modes.to_vec() }, Rat::int(charge))]
        };
    }
    // [α(n), α(-m)] = 2n δ_{nm} k with k = 1.
    let mut out = Vec::new();
    for (p, &m) in modes.iter().enumerate() {
        if m as i64 == n {
            let mut ms = modes.to_vec();
            ms.remove(p);
            out.push((Monomial::Lattice { charge, modes: ms }, Rat::int(2 * n)));
        }
    }
    out
}

/// Coefficient of a creation-exponential partition `exp(b Σ_{m>0} z^m/m ·
/// α(-m))`: for parts with multiplicities `a_m`, `Π_m b^{a_m} / (m^{a_m}
/// a_m!)`.
fn partition_coeff(parts: &[u32], b: i64) -> Rat {
    let mut coeff = Rat::int(1);
    let mut i = 0;
    while i < parts.len() {
        let m = parts[i];
        let mut a = 0i64;
        while i < parts.len() && parts[i] == m {
            a += 1;
            i += 1;
        }
        let mut denom = Rat::int(1);
        for f in 1..=a {
            denom = denom.mul(&Rat::int(f * m as i64));
        }
        coeff = coeff.mul(&Rat::int(b).pow(a)).mul(&denom.inv().expect("nonzero"));
    }
    coeff
}

/// Mode `n` of the vertex operator attached to `β = b·α` (`b = ±1`, i.e.
/// `E(n)` or `F(n)`) on a lattice monomial.  The mode is the coefficient
/// of `z^{-n-1}` of `e^β z^{β(0)} · (creation exp) · (annihilation exp)`,
/// with trivial two-cocycle.
fn lattice_vertex(b: i64, n: i64, charge: i64, modes: &[u32]) -> Vec<(Monomial, Rat)> {
    debug_assert!(b == 1 || b == -1);
    assert!(modes.len() <= 30, "monomial too long for subset enumeration");
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << modes.len()) {
        // The annihilation exponential acts as the substitution
        // α(-m) ↦ α(-m) - 2b z^{-m} on each creation factor.
        let mut kept: Vec<u32> = Vec::new();
        let mut j_tot = 0i64;
        let mut removed = 0u32;
        for (p, &m) in modes.iter().enumerate() {
            if mask & (1 << p) != 0 {
                j_tot += m as i64;
                removed += 1;
            } else {
                kept.push(m);
            }
        }
        // z-budget left for the creation exponential, after z^{-j_tot}
        // from the removals and z^{bq} from z^{β(0)}.
        let m_total = -n - 1 + j_tot - b * charge;
        if m_total < 0 {
            continue;
        }
        let base = Rat::int(-2 * b).pow(removed as i64);
        for parts in partitions(m_total) {
            let coeff = base.mul(&partition_coeff(&parts, b));
            let mut ms = kept.clone();
            ms.extend_from_slice(&parts);
            ms.sort_unstable_by(|x, y| y.cmp(x));
            out.push((Monomial::Lattice { charge: charge + 2 * b, modes: ms }, coeff));
        }
    }
    out
}

fn mode_mono(spec: &ModuleSpec, id: CurrentId, n: i64, mono: &Monomial) -> AResult<Vec<(Monomial, Rat)>> {
    match (spec, id, mono) {
        (ModuleSpec::HeisenbergFock { rank, lambda }, CurrentId::Heis(i), Monomial::Fock(es)) => {
            if i < 1 || i > *rank {
                return Err(AlgError::Unsupported(format!("direction {i} out of 1..={rank}")));
            }
            Ok(fock_h(i, n, es, lambda)
                .into_iter()
                .map(|(es, c)| (Monomial::Fock(es), c))
                .collect())
        }
        (ModuleSpec::LatticeSl2 { .. }, CurrentId::Sl2(x), Monomial::Lattice { charge, modes }) => {
            Ok(match x {
                Sl2::H => lattice_alpha(n, *charge, modes),
                Sl2::E => lattice_vertex(1, n, *charge, modes),
                Sl2::F => lattice_vertex(-1, n, *charge, modes),
            })
        }
        _ => Err(AlgError::ModuleMismatch(format!(
            "current {id:?} does not act on {spec:?}"
        ))),
    }
}

/// Single current mode `X(n)` applied to a vector.  Currents shift the
/// degree by exactly `-n`, so overflow is decided per input component
/// before any work is done.
pub fn apply_current_mode(id: CurrentId, n: i64, v: &GradedVector, mode: ApplyMode) -> AResult<GradedVector> {
    let mut out = GradedVector::zero(v.spec.clone(), v.cutoff);
    for (mono, co) in &v.terms {
        let target = mono.degree() - n;
        if target > v.cutoff {
            match mode {
                ApplyMode::Strict => {
                    return Err(AlgError::DegreeOverflow { degree: target, cutoff: v.cutoff })
                }
                ApplyMode::Project => continue,
            }
        }
        for (m2, c2) in mode_mono(&v.spec, id, n, mono)? {
            debug_assert_eq!(m2.degree(), target, "current mode must shift degree by -n");
            out.add_term(m2, co.mul(&c2));
        }
    }
    Ok(out)
}

// ----------------------------------------------------------------------
// Virasoro action
// ----------------------------------------------------------------------

/// `L_n` on an affine module via the quadratic construction
/// `L_n = 1/(2(k+h∨)) Σ_j :Cas(n-j, j):` where `Cas(p, q)` is the
/// invariant quadratic expression (`Σ_i H_i(p)H_i(q)` for the Heisenberg
/// algebra, `½α(p)α(q) + E(p)F(q) + F(p)E(q)` for sl₂) and the normal
/// ordering keeps `A(p)B(q)` for `p < q` and swaps to `B(q)A(p)`
/// otherwise.
pub fn sugawara_l(n: i64, v: &GradedVector, mode: ApplyMode) -> AResult<GradedVector> {
    let pref = v.spec.sugawara_prefactor()?;
    let d_max = match v.max_degree() {
        Some(d) => d,
        None => return Ok(v.clone()),
    };
    if mode == ApplyMode::Strict {
        for (mono, _) in &v.terms {
            let target = mono.degree() - n;
            if target > v.cutoff {
                return Err(AlgError::DegreeOverflow { degree: target, cutoff: v.cutoff });
            }
        }
    }
    // Intermediate states within one normal-ordered pair can sit above the
    // final degree; work at a cutoff that never clips them.
    let work = 2 * d_max + n.abs() + 2;
    let vw = v.with_cutoff(work.max(v.cutoff));
    let pairs: Vec<(CurrentId, CurrentId, Rat)> = match &v.spec {
        ModuleSpec::HeisenbergFock { rank, .. } => (1..=*rank)
            .map(|i| (CurrentId::Heis(i), CurrentId::Heis(i), Rat::int(1)))
            .collect(),
        ModuleSpec::LatticeSl2 { .. } => vec![
            (CurrentId::Sl2(Sl2::H), CurrentId::Sl2(Sl2::H), Rat::ratio(1, 2)),
            (CurrentId::Sl2(Sl2::E), CurrentId::Sl2(Sl2::F), Rat::int(1)),
            (CurrentId::Sl2(Sl2::F), CurrentId::Sl2(Sl2::E), Rat::int(1)),
        ],
        ModuleSpec::VirasoroVerma { .. } => unreachable!(),
    };
    let mut acc = GradedVector::zero(v.spec.clone(), vw.cutoff);
    // Modes beyond the degree of the state annihilate it, so only
    // j with max(j, n-j) ≤ d_max contribute.
    for j in (n - d_max)..=d_max {
        let p = n - j;
        let q = j;
        for (a_id, b_id, wt) in &pairs {
            let t = if p < q {
                // A(p) B(q): the q-mode acts first.
                let t1 = apply_current_mode(*b_id, q, &vw, ApplyMode::Project)?;
                apply_current_mode(*a_id, p, &t1, ApplyMode::Project)?
            } else {
                // :A(p)B(q): = B(q) A(p): the p-mode acts first.
                let t1 = apply_current_mode(*a_id, p, &vw, ApplyMode::Project)?;
                apply_current_mode(*b_id, q, &t1, ApplyMode::Project)?
            };
            acc = acc.add(&t.scale(wt))?;
        }
    }
    Ok(acc.scale(&pref).with_cutoff(v.cutoff))
}

/// `L_n` on any supported module (direct action on Verma modules, the
/// quadratic construction on affine ones).
pub fn apply_l(n: i64, v: &GradedVector, mode: ApplyMode) -> AResult<GradedVector> {
    match &v.spec {
        ModuleSpec::VirasoroVerma { c, h } => {
            let mut out = GradedVector::zero(v.spec.clone(), v.cutoff);
            for (mono, co) in &v.terms {
                let target = mono.degree() - n;
                if target > v.cutoff {
                    match mode {
                        ApplyMode::Strict => {
                            return Err(AlgError::DegreeOverflow { degree: target, cutoff: v.cutoff })
                        }
                        ApplyMode::Project => continue,
                    }
                }
                let ds = match mono {
                    Monomial::Verma(ds) => ds,
                    _ => unreachable!(),
                };
                for (ds2, c2) in verma_l(n, ds, c, h) {
                    debug_assert_eq!(ds2.iter().map(|&d| d as i64).sum::<i64>(), target);
                    out.add_term(Monomial::Verma(ds2), co.mul(&c2));
                }
            }
            Ok(out)
        }
        _ => sugawara_l(n, v, mode),
    }
}

/// Public generator selector.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Gen {
    L(i64),
    /// `H_dir(n)` on a Fock space; on a lattice module `dir` must be 1
    /// and the generator is `α(n)`.
    H { dir: u16, n: i64 },
    E(i64),
    F(i64),
}

pub fn apply_generator(g: Gen, v: &GradedVector, mode: ApplyMode) -> AResult<GradedVector> {
    match g {
        Gen::L(n) => apply_l(n, v, mode),
        Gen::H { dir, n } => match &v.spec {
            ModuleSpec::HeisenbergFock { .. } => apply_current_mode(CurrentId::Heis(dir), n, v, mode),
            ModuleSpec::LatticeSl2 { .. } if dir == 1 => {
                apply_current_mode(CurrentId::Sl2(Sl2::H), n, v, mode)
            }
            _ => Err(AlgError::ModuleMismatch("H generator needs an affine module".into())),
        },
        Gen::E(n) => apply_current_mode(CurrentId::Sl2(Sl2::E), n, v, mode),
        Gen::F(n) => apply_current_mode(CurrentId::Sl2(Sl2::F), n, v, mode),
    }
}

// ----------------------------------------------------------------------
// Smeared currents and exponential conjugation
// ----------------------------------------------------------------------

/// `X ⊗ x(ζ) · v = Σ_n x_n X(n) v` for a (possibly truncated) coefficient
/// series `x`.  Modes below the window of a truncated `x` must all
/// overflow the cutoff; otherwise the truncation is insufficient.
pub fn apply_current(id: CurrentId, x: &Series<Rat>, v: &GradedVector, mode: ApplyMode) -> AResult<GradedVector> {
    if x.var() != Var::Zeta {
        return Err(AlgError::Unsupported("coefficient series must be in ζ".into()));
    }
    let min_deg = v.terms.keys().map(|m| m.degree()).min().unwrap_or(0);
    let needed_lo = min_deg - v.cutoff;
    if !x.is_exact() && x.window_lo() > needed_lo && !v.is_zero() {
        return Err(AlgError::Series(SeriesError::TruncationInsufficient {
            wanted: needed_lo,
            lo: x.window_lo(),
            hi: x.window_hi(),
        }));
    }
    let mut out = GradedVector::zero(v.spec.clone(), v.cutoff);
    for (n, c) in x.iter() {
        if c.is_zero() {
            continue;
        }
        let t = apply_current_mode(id, n, v, mode)?;
        out = out.add(&t.scale(c))?;
    }
    Ok(out)
}

/// `exp(A ⊗ a(ζ)) v` for `a` supported on strictly negative exponents, in
/// the graded completion truncated at the cutoff of `v`.
pub fn exp_current(id: CurrentId, a: &Series<Rat>, v: &GradedVector) -> AResult<GradedVector> {
    if let Some(hi) = a.support_hi() {
        if hi >= 0 {
            return Err(AlgError::Unsupported(
                "exponential needs strictly negative coefficient exponents".into(),
            ));
        }
    }
    let mut acc = v.clone();
    let mut term = v.clone();
    let mut k = 1i64;
    loop {
        term = apply_current(id, a, &term, ApplyMode::Project)?.scale(&Rat::ratio(1, k));
        if term.is_zero() {
            break;
        }
        acc = acc.add(&term)?;
        k += 1;
        assert!(k <= 4 * (v.cutoff + 2), "exponential failed to terminate");
    }
    Ok(acc)
}

/// `e^{-𝐚} (X ⊗ x) e^{𝐚} v` computed literally (conjugation by the
/// exponentiated smeared current `𝐚 = A ⊗ a(ζ)`), exact in all components
/// of degree ≤ the cutoff of `v`.
pub fn conjugated_current(
    a_id: CurrentId,
    a: &Series<Rat>,
    x_id: CurrentId,
    x: &Series<Rat>,
    v: &GradedVector,
) -> AResult<GradedVector> {
    let d = v.cutoff;
    // X ⊗ x can lower the degree by up to the top exponent of x.
    let drop = x.support_hi().unwrap_or(0).max(0);
    let work = d + drop;
    let w1 = exp_current(a_id, a, &v.with_cutoff(work))?;
    let w2 = apply_current(x_id, x, &w1, ApplyMode::Project)?;
    let w3 = exp_current(a_id, &a.neg(), &w2)?;
    Ok(w3.with_cutoff(d))
}

/// Closed form of `e^{-𝐚} (X ⊗ x) e^{𝐚}`: a list of smeared-current terms
/// plus a scalar.  `k` is the level of the module the result will act on.
pub fn conjugation_rhs_terms(
    a_id: CurrentId,
    a: &Series<Rat>,
    x_id: CurrentId,
    x: &Series<Rat>,
    k: &Rat,
    depth: i64,
) -> AResult<(Vec<(CurrentId, Series<Rat>)>, Rat)> {
    let da = a.derivative();
    let res_da_x = |weight: Rat| -> AResult<Rat> {
        if weight.is_zero() {
            return Ok(Rat::int(0));
        }
        Ok(weight.mul(k).mul(&residue(&da.mul(x)?)?))
    };
    match (a_id, x_id) {
        (CurrentId::Heis(i), CurrentId::Heis(j)) => {
            // Commutative case: X ⊗ x - k (A|X) Res ∂a·x.
            let w = if i == j { Rat::int(-1) } else { Rat::int(0) };
            Ok((vec![(x_id, x.clone())], res_da_x(w)?))
        }
        (CurrentId::Sl2(aa), CurrentId::Sl2(xx)) => {
            use Sl2::*;
            let e2a = |sign: i64| -> AResult<Series<Rat>> {
                Ok(exp_series_depth(&a.scale(&Rat::int(sign)), depth)?)
            };
            let ax = a.mul(x)?;
            let a2x = a.mul(&ax)?;
            let terms_scalar: (Vec<(Sl2, Series<Rat>)>, Rat) = match (aa, xx) {
                (H, H) => (vec![(H, x.clone())], res_da_x(Rat::int(-2))?),
                (E, H) => (vec![(H, x.clone()), (E, ax.scale(&Rat::int(2)))], Rat::int(0)),
                (F, H) => (vec![(H, x.clone()), (F, ax.scale(&Rat::int(-2)))], Rat::int(0)),
                (H, E) => (vec![(E, e2a(-2)?.mul(x)?)], Rat::int(0)),
                (E, E) => (vec![(E, x.clone())], Rat::int(0)),
                (F, E) => (
                    vec![(E, x.clone()), (H, ax.clone()), (F, a2x.scale(&Rat::int(-1)))],
                    res_da_x(Rat::int(-1))?,
                ),
                (H, F) => (vec![(F, e2a(2)?.mul(x)?)], Rat::int(0)),
                (E, F) => (
                    vec![(F, x.clone()), (H, ax.scale(&Rat::int(-1))), (E, a2x.scale(&Rat::int(-1)))],
                    res_da_x(Rat::int(-1))?,
                ),
                (F, F) => (vec![(F, x.clone())], Rat::int(0)),
            };
            Ok((
                terms_scalar.0.into_iter().map(|(y, s)| (CurrentId::Sl2(y), s)).collect(),
                terms_scalar.1,
            ))
        }
        _ => Err(AlgError::ModuleMismatch("currents of different families".into())),
    }
}

/// Residuals `(LHS - RHS) m` of the closed conjugation formula on every
/// basis monomial `m` of degree ≤ `d_max`, with components compared up to
/// degree `d_max`.
pub fn conjugation_check(
    spec: &ModuleSpec,
    a_id: CurrentId,
    a: &Series<Rat>,
    x_id: CurrentId,
    x: &Series<Rat>,
    d_max: i64,
) -> AResult<Vec<(Monomial, GradedVector)>> {
    let drop = x.support_hi().unwrap_or(0).max(0);
    let depth = d_max + drop + 2;
    let (rhs_terms, scalar) =
        conjugation_rhs_terms(a_id, a, x_id, x, &spec.level(), depth)?;
    let mut out = Vec::new();
    for m in basis(spec, d_max) {
        let v = GradedVector::from_monomial(spec.clone(), d_max, m.clone());
        let lhs = conjugated_current(a_id, a, x_id, x, &v)?;
        let mut rhs = v.scale(&scalar);
        for (y, s) in &rhs_terms {
            rhs = rhs.add(&apply_current(*y, s, &v, ApplyMode::Project)?)?;
        }
        out.push((m, lhs.sub(&rhs)?));
    }
    Ok(out)
}

/// Residuals of the internal-coordinate Virasoro conjugation
/// `e^{-𝐚} L_m e^{𝐚} = L_m - [∂a·A](m) + k (A|A)/2 · [(∂a)²]_{m}` on all
/// basis monomials of degree ≤ `d_max` (mode `m` of a weight-2 density is
/// its `z^{-m-2}` coefficient).
pub fn virasoro_internal_check(
    spec: &ModuleSpec,
    a_id: CurrentId,
    a: &Series<Rat>,
    m: i64,
    d_max: i64,
) -> AResult<Vec<(Monomial, GradedVector)>> {
    let da = a.derivative();
    let da2 = da.mul(&da)?;
    let scalar = {
        let c = if da2.is_exact() || da2.window_lo() <= -m - 2 {
            da2.coeff(-m - 2).unwrap_or_else(|_| Rat::int(0))
        } else {
            return Err(AlgError::Series(SeriesError::TruncationInsufficient {
                wanted: -m - 2,
                lo: da2.window_lo(),
                hi: da2.window_hi(),
            }));
        };
        c.mul(&a_id.form(a_id)?).mul(&spec.level()).mul(&Rat::ratio(1, 2))
    };
    let mut out = Vec::new();
    for mono in basis(spec, d_max) {
        let v = GradedVector::from_monomial(spec.clone(), d_max, mono.clone());
        // LHS at a working cutoff high enough that nothing relevant clips.
        let work = d_max + m.max(0);
        let w1 = exp_current(a_id, a, &v.with_cutoff(work))?;
        let w2 = sugawara_l(m, &w1, ApplyMode::Project)?;
        let lhs = exp_current(a_id, &a.neg(), &w2)?.with_cutoff(d_max);
        // RHS.
        let mut rhs = sugawara_l(m, &v, ApplyMode::Project)?;
        for (j, aj) in a.iter() {
            let co = aj.mul(&Rat::int(j)).neg();
            if co.is_zero() {
                continue;
            }
            rhs = rhs.add(&apply_current_mode(a_id, m + j, &v, ApplyMode::Project)?.scale(&co))?;
        }
        rhs = rhs.add(&v.scale(&scalar))?;
        out.push((mono, lhs.sub(&rhs)?));
    }
    Ok(out)
}

// ----------------------------------------------------------------------
// Pairing
// ----------------------------------------------------------------------

fn pairing_mono(mu: &Monomial, v: &GradedVector) -> AResult<Rat> {
    match mu {
        Monomial::Verma(ds) => {
            if let Some((&d, rest)) = ds.split_first() {
                // ⟨L(-d) u | v⟩ = ⟨u | L(d) v⟩.
                let v2 = apply_l(d as i64, v, ApplyMode::Strict)?;
                pairing_mono(&Monomial::Verma(rest.to_vec()), &v2)
            } else {
                Ok(v.coeff(&Monomial::Verma(vec![])))
            }
        }
        Monomial::Fock(es) => {
            if let Some((&(i, m), rest)) = es.split_first() {
                // ⟨H_i(-m) u | v⟩ = -⟨u | H_i(m) v⟩.
                let v2 = apply_current_mode(CurrentId::Heis(i), m as i64, v, ApplyMode::Strict)?;
                Ok(pairing_mono(&Monomial::Fock(rest.to_vec()), &v2)?.neg())
            } else {
                Ok(v.coeff(&Monomial::Fock(vec![])))
            }
        }
        Monomial::Lattice { charge, modes } => {
            if let Some((&m, rest)) = modes.split_first() {
                let v2 = apply_current_mode(CurrentId::Sl2(Sl2::H), m as i64, v, ApplyMode::Strict)?;
                Ok(pairing_mono(
                    &Monomial::Lattice { charge: *charge, modes: rest.to_vec() },
                    &v2,
                )?
                .neg())
            } else {
                // Charge sectors are paired as dual basis functionals.
                Ok(v.coeff(&Monomial::Lattice { charge: *charge, modes: vec![] }))
            }
        }
    }
}

/// Contravariant pairing `⟨u|v⟩`.  Virasoro modes move across without a
/// sign (`⟨L_n u|v⟩ = ⟨u|L_{-n} v⟩`), current modes with a sign
/// (`⟨X(n) u|v⟩ = -⟨u|X(-n) v⟩`); top vectors are normalized to pair to 1
/// with themselves.
pub fn pairing(u: &GradedVector, v: &GradedVector) -> AResult<Rat> {
    if u.spec != v.spec {
        return Err(AlgError::ModuleMismatch(format!("{:?} vs {:?}", u.spec, v.spec)));
    }
    let mut acc = Rat::int(0);
    for (mu, cu) in &u.terms {
        let p = pairing_mono(mu, v)?;
        acc = acc.add(&cu.mul(&p));
    }
    Ok(acc)
}

// ----------------------------------------------------------------------
// Exponentiated automorphism operators Q(ρ) and R(ρ)
// ----------------------------------------------------------------------

/// `Q(ρ) v = exp(-Σ_{j<0} v_j L_j) v` for `ρ = z + b₀ + b₋₁ z⁻¹ + …`,
/// with the exponential coordinates `v_j` extracted from `ρ` and the
/// result truncated at the cutoff of `v`.
pub fn q_operator(rho: &Series<Rat>, v: &GradedVector) -> AResult<GradedVector> {
    let need = (v.cutoff + 1).max(1) as usize;
    let vc = v_extract(rho, Realization::Loewner, need)?;
    exp_l_combination(&vc.modes, v)
}

/// `R(ρ) v = exp(-Σ_{i>0} v_i L_i) v₀^{-L₀} v` for a power-series
/// automorphism `ρ(w) = w + a₂w² + …` tangent to the identity
/// (`v₀ = ρ′(0) = 1`; other leading coefficients are rejected because
/// `v₀^{-L₀}` is not rational on a module with non-integer weights).
pub fn r_operator(rho: &Series<Rat>, v: &GradedVector) -> AResult<GradedVector> {
    let need = (v.max_degree().unwrap_or(0) + 1).max(1) as usize;
    let vc = v_extract(rho, Realization::PowerSeries, need)?;
    if vc.v0 != Rat::int(1) {
        return Err(AlgError::Unsupported(
            "R(ρ) is only supported for ρ′(0) = 1".into(),
        ));
    }
    exp_l_combination(&vc.modes, v)
}

/// `exp(-Σ_j v_j L_j) v` truncated at the cutoff of `v`.
fn exp_l_combination(modes: &[(i64, Rat)], v: &GradedVector) -> AResult<GradedVector> {
    let mut acc = v.clone();
    let mut term = v.clone();
    let mut k = 1i64;
    loop {
        let mut nt = GradedVector::zero(v.spec.clone(), v.cutoff);
        for (j, vj) in modes {
            if vj.is_zero() {
                continue;
            }
            nt = nt.add(&apply_l(*j, &term, ApplyMode::Project)?.scale(&vj.neg()))?;
        }
        term = nt.scale(&Rat::ratio(1, k));
        if term.is_zero() {
            break;
        }
        acc = acc.add(&term)?;
        k += 1;
        assert!(k <= 6 * (v.cutoff + 2), "exponential failed to terminate");
    }
    Ok(acc)
}

// ----------------------------------------------------------------------
// Singular vectors and the annihilating operator
// ----------------------------------------------------------------------

/// `c(κ) = 1 - 3(κ-4)²/(2κ)` and `h(κ) = (6-κ)/(2κ)`.
pub fn kappa_weights(kappa: &Rat) -> (Rat, Rat) {
    let four = Rat::int(4);
    let d = kappa.sub(&four);
    let c = Rat::int(1).sub(
        &Rat::int(3)
            .mul(&d)
            .mul(&d)
            .mul(&Rat::int(2).mul(kappa).inv().expect("κ ≠ 0")),
    );
    let h = Rat::int(6)
        .sub(kappa)
        .mul(&Rat::int(2).mul(kappa).inv().expect("κ ≠ 0"));
    (c, h)
}

/// For `χ = (-2L₋₂ + κ/2·L₋₁²)|c,h⟩` in the Verma module `M(c,h)`,
/// return `(L₁χ, L₂χ)`.  Both vanish exactly when `(c, h)` lie on the
/// level-two degenerate curve parametrized by κ.
pub fn singular_check(c: &Rat, h: &Rat, kappa: &Rat) -> AResult<(GradedVector, GradedVector)> {
    let spec = ModuleSpec::VirasoroVerma { c: c.clone(), h: h.clone() };
    let top = GradedVector::top(spec, 4);
    let l1 = apply_l(-1, &top, ApplyMode::Strict)?;
    let l11 = apply_l(-1, &l1, ApplyMode::Strict)?;
    let l2 = apply_l(-2, &top, ApplyMode::Strict)?;
    let chi = l2
        .scale(&Rat::int(-2))
        .add(&l11.scale(&kappa.mul(&Rat::ratio(1, 2))))?;
    Ok((
        apply_l(1, &chi, ApplyMode::Strict)?,
        apply_l(2, &chi, ApplyMode::Strict)?,
    ))
}

/// Residual of the annihilating operator
/// `-2L₋₂ + κ/2·L₋₁² + 1/2·Σ_r τ_r X_r(-1)²` on a top vector of an
/// affine module.  For a Fock space, `taus` holds one `τ_i` per
/// direction; for a lattice module it holds the single `τ` of the
/// quadratic Casimir term `τ/2·(½α(-1)² + E(-1)F(-1) + F(-1)E(-1))`.
pub fn annihilator_check(kappa: &Rat, taus: &[Rat], top: &GradedVector) -> AResult<GradedVector> {
    let v = top.with_cutoff(top.max_degree().unwrap_or(0) + 2);
    let l2 = sugawara_l(-2, &v, ApplyMode::Strict)?;
    let l1 = sugawara_l(-1, &v, ApplyMode::Strict)?;
    let l11 = sugawara_l(-1, &l1, ApplyMode::Strict)?;
    let mut acc = l2
        .scale(&Rat::int(-2))
        .add(&l11.scale(&kappa.mul(&Rat::ratio(1, 2))))?;
    match &v.spec {
        ModuleSpec::HeisenbergFock { rank, .. } => {
            if taus.len() != *rank as usize {
                return Err(AlgError::Unsupported(format!(
                    "expected {rank} τ values, got {}",
                    taus.len()
                )));
            }
            for (i, tau) in taus.iter().enumerate() {
                let id = CurrentId::Heis(i as u16 + 1);
                let t = apply_current_mode(id, -1, &v, ApplyMode::Strict)?;
                let tt = apply_current_mode(id, -1, &t, ApplyMode::Strict)?;
                acc = acc.add(&tt.scale(&tau.mul(&Rat::ratio(1, 2))))?;
            }
        }
        ModuleSpec::LatticeSl2 { .. } => {
            if taus.len() != 1 {
                return Err(AlgError::Unsupported("expected a single τ".into()));
            }
            let tau = &taus[0];
            let m1 = |id: Sl2, w: &GradedVector| -> AResult<GradedVector> {
                apply_current_mode(CurrentId::Sl2(id), -1, w, ApplyMode::Strict)
            };
            let hh = m1(Sl2::H, &m1(Sl2::H, &v)?)?;
            let ef = m1(Sl2::E, &m1(Sl2::F, &v)?)?;
            let fe = m1(Sl2::F, &m1(Sl2::E, &v)?)?;
            let cas = hh.scale(&Rat::ratio(1, 2)).add(&ef)?.add(&fe)?;
            acc = acc.add(&cas.scale(&tau.mul(&Rat::ratio(1, 2))))?;
        }
        ModuleSpec::VirasoroVerma { .. } => {
            return Err(AlgError::Unsupported(
                "annihilating operator acts on affine modules".into(),
            ))
        }
    }
    Ok(acc)
}

// ----------------------------------------------------------------------
// Bracket residuals (verification helpers)
// ----------------------------------------------------------------------

/// `[L_m, L_n] v - (m-n) L_{m+n} v - c/12·(m³-m) δ_{m+n,0} v`, computed
/// exactly on components of degree ≤ the cutoff of `v` (the input should
/// carry headroom `|m| + |n|` above the degrees of interest).
pub fn virasoro_bracket_residual(m: i64, n: i64, v: &GradedVector) -> AResult<GradedVector> {
    let work = v.cutoff + m.abs() + n.abs();
    let vw = v.with_cutoff(work);
    let ab = apply_l(m, &apply_l(n, &vw, ApplyMode::Project)?, ApplyMode::Project)?;
    let ba = apply_l(n, &apply_l(m, &vw, ApplyMode::Project)?, ApplyMode::Project)?;
    let mut res = ab.sub(&ba)?;
    res = res.sub(&apply_l(m + n, &vw, ApplyMode::Project)?.scale(&Rat::int(m - n)))?;
    if m + n == 0 {
        let cc = v
            .spec
            .central_charge()
            .mul(&Rat::int(m * m * m - m))
            .mul(&Rat::ratio(1, 12));
        res = res.sub(&vw.scale(&cc))?;
    }
    Ok(res.with_cutoff(v.cutoff))
}

/// `[X(m), Y(n)] v - [X,Y](m+n) v - m (X|Y) δ_{m+n,0} k v` on a lattice
/// module.
pub fn affine_bracket_residual(x: Sl2, m: i64, y: Sl2, n: i64, v: &GradedVector) -> AResult<GradedVector> {
    let work = v.cutoff + m.abs() + n.abs();
    let vw = v.with_cutoff(work);
    let cx = CurrentId::Sl2(x);
    let cy = CurrentId::Sl2(y);
    let ab = apply_current_mode(cx, m, &apply_current_mode(cy, n, &vw, ApplyMode::Project)?, ApplyMode::Project)?;
    let ba = apply_current_mode(cy, n, &apply_current_mode(cx, m, &vw, ApplyMode::Project)?, ApplyMode::Project)?;
    let mut res = ab.sub(&ba)?;
    for (co, z) in x.bracket(y) {
        res = res.sub(&apply_current_mode(CurrentId::Sl2(z), m + n, &vw, ApplyMode::Project)?.scale(&co))?;
    }
    if m + n == 0 {
        let cc = x.form(y).mul(&Rat::int(m)).mul(&v.spec.level());
        res = res.sub(&vw.scale(&cc))?;
    }
    Ok(res.with_cutoff(v.cutoff))
}

/// `[L_m, X(n)] v + n X(m+n) v` on an affine module.
pub fn mixed_bracket_residual(m: i64, id: CurrentId, n: i64, v: &GradedVector) -> AResult<GradedVector> {
    let work = v.cutoff + m.abs() + n.abs();
    let vw = v.with_cutoff(work);
    let ab = apply_l(m, &apply_current_mode(id, n, &vw, ApplyMode::Project)?, ApplyMode::Project)?;
    let ba = apply_current_mode(id, n, &apply_l(m, &vw, ApplyMode::Project)?, ApplyMode::Project)?;
    let res = ab.sub(&ba)?.add(&apply_current_mode(id, m + n, &vw, ApplyMode::Project)?.scale(&Rat::int(n)))?;
    Ok(res.with_cutoff(v.cutoff))
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------
