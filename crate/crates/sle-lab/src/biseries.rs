//! Two-variable truncated series for the double-residue kernels.
//!
//! A [`BiSeries`] holds coefficients on a rectangular exponent window in
//! `(z, w)` together with the expansion-region tag recording which
//! geometric expansion of `(w − z)⁻¹` produced it.  Values expanded in
//! different regions are distinct and cannot be combined; the tag makes
//! that a loud error instead of a silent wrong answer.
//!
//! Unlike the one-variable [`crate::series::Series`], the rectangle is a
//! *working* window: operations clamp into it, and callers are responsible
//! for choosing margins wide enough that the coefficients they finally
//! read (typically a residue in one variable) are exact.  The verification
//! suites check this by widening windows and asserting stability.

use crate::scalar::Scalar;
use crate::series::{Series, SeriesError, Var};

pub type Result<T> = std::result::Result<T, SeriesError>;

/// Which geometric expansion of `(w − z)⁻¹` is in effect.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Region {
    /// `|w| > |z|`: `(w−z)⁻¹ = Σ_{m≥0} z^m w^{−m−1}`.
    AbsWGtZ,
    /// `|z| > |w|`: `(w−z)⁻¹ = −Σ_{m≥0} w^m z^{−m−1}`.
    AbsZGtW,
}

/// Rectangular exponent window.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BiWindow {
    pub z_lo: i64,
    pub z_hi: i64,
    pub w_lo: i64,
    pub w_hi: i64,
}

impl BiWindow {
    pub fn new(z_lo: i64, z_hi: i64, w_lo: i64, w_hi: i64) -> Self {
        assert!(z_lo <= z_hi && w_lo <= w_hi, "empty window");
        BiWindow { z_lo, z_hi, w_lo, w_hi }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct BiSeries<S> {
    region: Region,
    win: BiWindow,
    zvar: Var,
    wvar: Var,
    /// Row-major: `coeffs[(ze − z_lo)·wspan + (we − w_lo)]`.
    coeffs: Vec<S>,
}

impl<S: Scalar> BiSeries<S> {
    fn wspan(&self) -> usize {
        (self.win.w_hi - self.win.w_lo + 1) as usize
    }

    fn idx(&self, ze: i64, we: i64) -> Option<usize> {
        if ze < self.win.z_lo || ze > self.win.z_hi || we < self.win.w_lo || we > self.win.w_hi {
            return None;
        }
        Some(((ze - self.win.z_lo) as usize) * self.wspan() + (we - self.win.w_lo) as usize)
    }

    pub fn zero(region: Region, zvar: Var, wvar: Var, win: BiWindow) -> Self {
        let n = ((win.z_hi - win.z_lo + 1) * (win.w_hi - win.w_lo + 1)) as usize;
        BiSeries { region, win, zvar, wvar, coeffs: vec![S::zero(); n] }
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn window(&self) -> BiWindow {
        self.win
    }

    pub fn coeff(&self, ze: i64, we: i64) -> S {
        self.idx(ze, we).map_or_else(S::zero, |i| self.coeffs[i].clone())
    }

    fn set(&mut self, ze: i64, we: i64, v: S) {
        if let Some(i) = self.idx(ze, we) {
            self.coeffs[i] = v;
        }
    }

    fn add_at(&mut self, ze: i64, we: i64, v: &S) {
        if v.is_zero() {
            return;
        }
        if let Some(i) = self.idx(ze, we) {
            self.coeffs[i] = self.coeffs[i].add(v);
        }
    }

    fn check_compatible(&self, rhs: &Self) -> Result<()> {
        if self.region != rhs.region {
            return Err(SeriesError::NotAut(format!(
                "expansion-region mismatch: {:?} vs {:?}",
                self.region, rhs.region
            )));
        }
        if self.win != rhs.win || self.zvar != rhs.zvar || self.wvar != rhs.wvar {
            return Err(SeriesError::NotAut("bi-series window/variable mismatch".into()));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.check_compatible(rhs)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a = a.add(b);
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.add(&rhs.neg())
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for a in out.coeffs.iter_mut() {
            *a = a.neg();
        }
        out
    }

    pub fn scale(&self, c: &S) -> Self {
        let mut out = self.clone();
        for a in out.coeffs.iter_mut() {
            *a = a.mul(c);
        }
        out
    }

    /// Full product, clamped to the shared window.
    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.check_compatible(rhs)?;
        let mut out = BiSeries::zero(self.region, self.zvar, self.wvar, self.win);
        for ze_a in self.win.z_lo..=self.win.z_hi {
            for we_a in self.win.w_lo..=self.win.w_hi {
                let a = self.coeff(ze_a, we_a);
                if a.is_zero() {
                    continue;
                }
                for ze_b in rhs.win.z_lo..=rhs.win.z_hi {
                    let ze = ze_a + ze_b;
                    if ze < out.win.z_lo || ze > out.win.z_hi {
                        continue;
                    }
                    for we_b in rhs.win.w_lo..=rhs.win.w_hi {
                        let we = we_a + we_b;
                        if we < out.win.w_lo || we > out.win.w_hi {
                            continue;
                        }
                        let b = rhs.coeff(ze_b, we_b);
                        if b.is_zero() {
                            continue;
                        }
                        out.add_at(ze, we, &a.mul(&b));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Multiply by a one-variable series in `z`.
    pub fn mul_z(&self, f: &Series<S>) -> Result<Self> {
        if f.var() != self.zvar {
            return Err(SeriesError::VarMismatch(f.var(), self.zvar));
        }
        let mut out = BiSeries::zero(self.region, self.zvar, self.wvar, self.win);
        for (n, c) in f.iter() {
            for ze in self.win.z_lo..=self.win.z_hi {
                let zt = ze + n;
                if zt < out.win.z_lo || zt > out.win.z_hi {
                    continue;
                }
                for we in self.win.w_lo..=self.win.w_hi {
                    let a = self.coeff(ze, we);
                    if !a.is_zero() {
                        out.add_at(zt, we, &a.mul(c));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Multiply by a one-variable series in `w`.
    pub fn mul_w(&self, f: &Series<S>) -> Result<Self> {
        if f.var() != self.wvar {
            return Err(SeriesError::VarMismatch(f.var(), self.wvar));
        }
        let mut out = BiSeries::zero(self.region, self.zvar, self.wvar, self.win);
        for (n, c) in f.iter() {
            for we in self.win.w_lo..=self.win.w_hi {
                let wt = we + n;
                if wt < out.win.w_lo || wt > out.win.w_hi {
                    continue;
                }
                for ze in self.win.z_lo..=self.win.z_hi {
                    let a = self.coeff(ze, we);
                    if !a.is_zero() {
                        out.add_at(ze, wt, &a.mul(c));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Embed a one-variable series in `z` as a bi-series.
    pub fn from_z(region: Region, f: &Series<S>, wvar: Var, win: BiWindow) -> Result<Self> {
        if !f.is_exact() && f.window_lo() > win.z_lo {
            return Err(SeriesError::TruncationInsufficient {
                wanted: win.z_lo,
                lo: f.window_lo(),
                hi: f.window_hi(),
            });
        }
        let mut out = BiSeries::zero(region, f.var(), wvar, win);
        for (n, c) in f.iter() {
            out.add_at(n, 0, c);
        }
        Ok(out)
    }

    /// Embed a one-variable series in `w` as a bi-series.
    pub fn from_w(region: Region, f: &Series<S>, zvar: Var, win: BiWindow) -> Result<Self> {
        if !f.is_exact() && f.window_lo() > win.w_lo {
            return Err(SeriesError::TruncationInsufficient {
                wanted: win.w_lo,
                lo: f.window_lo(),
                hi: f.window_hi(),
            });
        }
        let mut out = BiSeries::zero(region, zvar, f.var(), win);
        for (n, c) in f.iter() {
            out.add_at(0, n, c);
        }
        Ok(out)
    }

    /// Derivative in `z`.
    pub fn deriv_z(&self) -> Self {
        let mut out = BiSeries::zero(self.region, self.zvar, self.wvar, self.win);
        for ze in self.win.z_lo..=self.win.z_hi {
            for we in self.win.w_lo..=self.win.w_hi {
                let a = self.coeff(ze, we);
                if !a.is_zero() {
                    out.add_at(ze - 1, we, &a.mul(&S::from_int(ze)));
                }
            }
        }
        out
    }

    /// Residue in `w`: the coefficient series of `w⁻¹`, truncated below the
    /// window's `z_lo`.
    pub fn res_w(&self) -> Series<S> {
        let mut s = Series::zero(self.zvar);
        for ze in self.win.z_lo..=self.win.z_hi {
            let c = self.coeff(ze, -1);
            if !c.is_zero() {
                s = s.add(&Series::monomial(self.zvar, ze, c)).unwrap();
            }
        }
        s.truncated_at(self.win.z_lo).unwrap_or_else(|_| s)
    }

    /// Residue in `z`: the coefficient series of `z⁻¹`, truncated below the
    /// window's `w_lo`.
    pub fn res_z(&self) -> Series<S> {
        let mut s = Series::zero(self.wvar);
        for we in self.win.w_lo..=self.win.w_hi {
            let c = self.coeff(-1, we);
            if !c.is_zero() {
                s = s.add(&Series::monomial(self.wvar, we, c)).unwrap();
            }
        }
        s.truncated_at(self.win.w_lo).unwrap_or_else(|_| s)
    }
}

/// The region expansion of `1/(w − z)` on the window.
pub fn inv_w_minus_z<S: Scalar>(region: Region, zvar: Var, wvar: Var, win: BiWindow) -> BiSeries<S> {
    let mut out = BiSeries::zero(region, zvar, wvar, win);
    match region {
        Region::AbsWGtZ => {
            // Σ_{m≥0} z^m w^{−m−1}
            let mut m = 0i64;
            loop {
                let (ze, we) = (m, -m - 1);
                if ze > win.z_hi || we < win.w_lo {
                    break;
                }
                out.set(ze, we, S::one());
                m += 1;
            }
        }
        Region::AbsZGtW => {
            // −Σ_{m≥0} w^m z^{−m−1}
            let mut m = 0i64;
            loop {
                let (ze, we) = (-m - 1, m);
                if we > win.w_hi || ze < win.z_lo {
                    break;
                }
                out.set(ze, we, S::from_int(-1));
                m += 1;
            }
        }
    }
    out
}

/// Expansion of `1/(g(w) − g(z))` for `g = z + Σ_{n≤0} gₙ zⁿ`, in the tagged
/// region: factor `g(w) − g(z) = (w − z)·q(z, w)` with `q = 1 + lower
/// order`, invert `q` by a finite Neumann series, and multiply by the
/// region expansion of `(w − z)⁻¹`.
pub fn kernel_expand<S: Scalar>(
    g: &Series<S>,
    region: Region,
    zvar: Var,
    wvar: Var,
    win: BiWindow,
) -> Result<BiSeries<S>> {
    if g.support_hi() != Some(1) || g.coeff(1)? != S::one() {
        return Err(SeriesError::NotAut("kernel base must be z + lower order".into()));
    }
    // q(z, w) = 1 + Σ_{m≥1} g_{−m} · ( −Σ_{j=0}^{m−1} w^{j−m} z^{−j−1} )
    let mut q = BiSeries::zero(region, zvar, wvar, win);
    q.add_at(0, 0, &S::one());
    for (n, c) in g.iter() {
        if n >= 0 {
            continue; // n = 1 contributes the leading 1; n = 0 cancels
        }
        let m = -n;
        for j in 0..m {
            q.add_at(-j - 1, j - m, &c.neg());
        }
    }
    // Neumann inverse of q = 1 − u: q⁻¹ = Σ u^k; each u term has total
    // degree ≤ −2, so the sum is finite on the window.
    let mut u = q.neg();
    u.add_at(0, 0, &S::one());
    let mut inv = BiSeries::zero(region, zvar, wvar, win);
    inv.add_at(0, 0, &S::one());
    let mut pow = u.clone();
    let max_iter = ((win.z_hi - win.z_lo) + (win.w_hi - win.w_lo)) / 2 + 2;
    for _ in 0..max_iter {
        if pow.coeffs.iter().all(|c| c.is_zero()) {
            break;
        }
        inv = inv.add(&pow)?;
        pow = pow.mul(&u)?;
    }
    inv_w_minus_z(region, zvar, wvar, win).mul(&inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rat;
    use crate::series::residue;

    fn win() -> BiWindow {
        BiWindow::new(-8, 4, -8, 4)
    }

    #[test]
    fn inv_w_minus_z_regions() {
        let a: BiSeries<Rat> = inv_w_minus_z(Region::AbsWGtZ, Var::Z, Var::W, win());
        assert_eq!(a.coeff(0, -1), Rat::int(1));
        assert_eq!(a.coeff(3, -4), Rat::int(1));
        assert_eq!(a.coeff(-1, 0), Rat::int(0));
        let b: BiSeries<Rat> = inv_w_minus_z(Region::AbsZGtW, Var::Z, Var::W, win());
        assert_eq!(b.coeff(-1, 0), Rat::int(-1));
        assert_eq!(b.coeff(-4, 3), Rat::int(-1));
        assert_eq!(b.coeff(0, -1), Rat::int(0));
        // mixing regions is an error
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn res_w_of_w_power_kernel() {
        // Res_w[w^{−n−1}/(w−z)] in |w|>|z| is z^{−n−1} for n ≤ −1, else 0.
        let k: BiSeries<Rat> = inv_w_minus_z(Region::AbsWGtZ, Var::Z, Var::W, win());
        for n in -4i64..=2 {
            let shifted = k.mul_w(&Series::monomial(Var::W, -n - 1, Rat::int(1))).unwrap();
            let r = shifted.res_w();
            if n <= -1 {
                assert_eq!(r.coeff(-n - 1).unwrap(), Rat::int(1), "n={n}");
                assert_eq!(r.iter().count(), 1, "n={n}");
            } else {
                assert!(r.is_zero(), "n={n}");
            }
        }
    }

    #[test]
    fn formal_delta_reproduces_evaluation() {
        // (difference of the two region expansions of 1/(w−z)) paired
        // against a Laurent polynomial in w reproduces it at w = z.
        let f = Series::from_terms(Var::W, &[(2, Rat::int(1)), (-3, Rat::int(2)), (0, Rat::int(-5))]);
        let e1: BiSeries<Rat> = inv_w_minus_z(Region::AbsWGtZ, Var::Z, Var::W, win());
        let e2: BiSeries<Rat> = inv_w_minus_z(Region::AbsZGtW, Var::Z, Var::W, win());
        let r1 = e1.mul_w(&f).unwrap().res_w();
        let r2 = e2.mul_w(&f).unwrap().res_w();
        let diff = r1.sub(&r2).unwrap();
        // expected: f with w replaced by z
        let expect = Series::from_terms(Var::Z, &[(2, Rat::int(1)), (-3, Rat::int(2)), (0, Rat::int(-5))]);
        for n in -4..=4 {
            assert_eq!(diff.coeff(n).unwrap(), expect.coeff(n).unwrap(), "coefficient {n}");
        }
    }

    #[test]
    fn kernel_identity_matches_plain_inverse() {
        let z = Series::monomial(Var::Z, 1, Rat::int(1));
        let k = kernel_expand(&z, Region::AbsWGtZ, Var::Z, Var::W, win()).unwrap();
        let plain: BiSeries<Rat> = inv_w_minus_z(Region::AbsWGtZ, Var::Z, Var::W, win());
        assert_eq!(k, plain);
    }

    #[test]
    fn kernel_times_denominator_is_one_in_the_interior() {
        // (g(w) − g(z)) · kernel_expand(g) = 1 away from the window edges.
        let g = Series::from_terms(
            Var::Z,
            &[(1, Rat::int(1)), (0, Rat::int(2)), (-1, Rat::int(-3)), (-2, Rat::int(1))],
        );
        let w = win();
        let k = kernel_expand(&g, Region::AbsWGtZ, Var::Z, Var::W, w).unwrap();
        let gz = BiSeries::from_z(Region::AbsWGtZ, &g, Var::W, w).unwrap();
        let gw = BiSeries::from_w(Region::AbsWGtZ, &g.clone().retag(Var::W), Var::Z, w).unwrap();
        let prod = gw.sub(&gz).unwrap().mul(&k).unwrap();
        let margin = 3;
        for ze in (w.z_lo + margin)..=(w.z_hi - margin) {
            for we in (w.w_lo + margin)..=(w.w_hi - margin) {
                let expect = if ze == 0 && we == 0 { Rat::int(1) } else { Rat::int(0) };
                assert_eq!(prod.coeff(ze, we), expect, "cell ({ze},{we})");
            }
        }
    }

    #[test]
    fn double_residue_extraction() {
        // Res_z Res_w of w^{−n−1} z^{m} / (w − z) in |w|>|z|: the geometric
        // expansion contributes z^j w^{−j−1} with j ≥ 0, so the double
        // residue is 1 exactly when m = n ≤ −1.  Sanity anchor for the
        // double-residue plumbing used downstream.
        let k: BiSeries<Rat> = inv_w_minus_z(Region::AbsWGtZ, Var::Z, Var::W, win());
        for n in -3i64..=1 {
            for m in -3i64..=1 {
                let t = k
                    .mul_w(&Series::monomial(Var::W, -n - 1, Rat::int(1)))
                    .unwrap()
                    .mul_z(&Series::monomial(Var::Z, m, Rat::int(1)))
                    .unwrap();
                let r = residue(&t.res_w()).unwrap();
                let expect = if n == m && n <= -1 { Rat::int(1) } else { Rat::int(0) };
                assert_eq!(r, expect, "n={n} m={m}");
            }
        }
    }
}
