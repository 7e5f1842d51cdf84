//! Polynomial differential forms on the `2n` Weyl variables, the second-order
//! contraction `iota_Pi`, the induced BV Laplacian, and the (equivariant)
//! Berezin-type integration maps that the trace is built from.
//!
//! Conventions in force throughout (each pinned by a unit test):
//!
//!   * a form is a sum `f_S(y, h) dy_S` over subsets `S` of the variables,
//!     with `dy_S` kept in ascending index order;
//!   * `d(f dy_S) = sum_a (d_a f) dy^a ^ dy_S`, the new one-form slot entering
//!     from the left;
//!   * `iota_Pi(dy_{s_1} ^ .. ^ dy_{s_k}) = sum_{i<j} (-1)^{i+j-1}
//!     Pi^{s_i s_j} dy_{S - {s_i, s_j}}` (positions `i < j` are 1-based), and
//!     `iota_Pi` is linear over the coefficient functions — so
//!     `iota_Pi(dp ^ dq) = +1` for the standard tensor;
//!   * `Delta := iota_Pi d - d iota_Pi`.  This commutator form is the one that
//!     satisfies `Delta^2 = 0` and `Delta d + d Delta = 0` identically (the
//!     anticommutator does not), and it reproduces the normalizations
//!     `Delta(p dq) = +1`, `Delta(q dp) = -1`;
//!   * `berezin(beta) = (h^n / n!) [iota_Pi^n beta]_0` where `[.]_0` takes the
//!     zero-form part at `y = 0`;
//!   * the equivariant integral is `u^n e^{-h iota_Pi / u} (.)|_0`.  On a pure
//!     `2k`-form this is `u^{n-k} (-1)^k (h^k / k!) [iota_Pi^k .]_0`.  The
//!     negative exponent is forced by the cocycle identity: from
//!     `[iota_Pi, Delta] = 0` one gets
//!     `e^{-h iota/u} (h Delta + u d) = u d e^{-h iota/u}`, so the integral
//!     annihilates the image of `h Delta + u d`; with the opposite exponent it
//!     does not.  The price is a `(-1)^k` relative to `berezin` on `2k`-forms
//!     (equal up to `(-1)^n` at top degree).

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use crate::scalar::{format_terms, hbar_symbol, join_symbols, HbarSeries, Rational, UPolynomial};
use crate::weyl::{monomial_symbol, variable_name, PoissonTensor, WeylElement};

/// Printable name of the basis one-form subset encoded by `mask`
/// (bit `i` set means `dy^i` is present), e.g. `"dp1^dq1"`.
pub fn dy_symbol(n: usize, mask: u32) -> String {
    let mut parts = Vec::new();
    for i in 0..2 * n {
        if mask & (1 << i) != 0 {
            parts.push(format!("d{}", variable_name(n, i)));
        }
    }
    parts.join("^")
}

/// Sign of `dy^a ^ dy_S` when sorted into ascending order, or `None` if
/// `a` already occurs in `S`.
fn insert_sign(mask: u32, a: usize) -> Option<Rational> {
    let bit = 1u32 << a;
    if mask & bit != 0 {
        return None;
    }
    let below = (mask & (bit - 1)).count_ones();
    Some(if below % 2 == 0 { Rational::one() } else { -Rational::one() })
}

/// Sign of `dy_{m1} ^ dy_{m2}` when merged and sorted, or `None` on overlap.
fn merge_sign(m1: u32, m2: u32) -> Option<Rational> {
    if m1 & m2 != 0 {
        return None;
    }
    let mut crossings = 0u32;
    let mut rest = m2;
    while rest != 0 {
        let t = rest.trailing_zeros();
        // Elements of `m1` above `t` must be crossed to restore order.
        crossings += (m1 >> (t + 1)).count_ones();
        rest &= rest - 1;
    }
    Some(if crossings % 2 == 0 { Rational::one() } else { -Rational::one() })
}

/// `iota_Pi` applied to the basis form `dy_mask`: the list of
/// `(coefficient, remaining mask)` contributions.
fn contract_mask(pi: &PoissonTensor, mask: u32) -> Vec<(Rational, u32)> {
    let mut indices = Vec::new();
    for i in 0..32 {
        if mask & (1 << i) != 0 {
            indices.push(i as usize);
        }
    }
    let mut out = Vec::new();
    for i in 0..indices.len() {
        for j in (i + 1)..indices.len() {
            let v = pi.entry(indices[i], indices[j]);
            if v.is_zero() {
                continue;
            }
            // Positions are 1-based: sign (-1)^{(i+1)+(j+1)-1} = (-1)^{i+j+1}.
            let sign_neg = (i + j + 1) % 2 == 1;
            let coeff = if sign_neg { -v } else { v };
            let rest = mask & !(1 << indices[i]) & !(1 << indices[j]);
            out.push((coeff, rest));
        }
    }
    out
}

/// Polynomial differential form: a map from `dy` subsets to coefficient
/// functions in the Weyl variables.
#[derive(Clone, PartialEq, Eq)]
pub struct FormalForm {
    n: usize,
    terms: BTreeMap<u32, WeylElement>,
}

impl FormalForm {
    pub fn zero(n: usize) -> Self {
        assert!(n <= 16, "at most 16 pairs of variables are supported");
        FormalForm { n, terms: BTreeMap::new() }
    }

    pub fn one(n: usize) -> Self {
        FormalForm::from_weyl(&WeylElement::one(n))
    }

    /// A function, viewed as a zero-form.
    pub fn from_weyl(w: &WeylElement) -> Self {
        let mut f = FormalForm::zero(w.n());
        f.add_component(0, w);
        f
    }

    /// `c * dy_mask` with constant coefficient.
    pub fn basis(n: usize, mask: u32, c: &HbarSeries) -> Self {
        let mut f = FormalForm::zero(n);
        f.add_component(mask, &WeylElement::constant(n, c.clone()));
        f
    }

    /// The one-form `dy^idx`.
    pub fn dy(n: usize, idx: usize) -> Self {
        assert!(idx < 2 * n, "variable index out of range");
        FormalForm::basis(n, 1 << idx, &HbarSeries::one())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Components as `(dy mask, coefficient)` pairs, masks ascending.
    pub fn components(&self) -> impl Iterator<Item = (u32, &WeylElement)> {
        self.terms.iter().map(|(m, w)| (*m, w))
    }

    /// Coefficient function of `dy_mask` (zero if absent).
    pub fn coefficient(&self, mask: u32) -> WeylElement {
        self.terms.get(&mask).cloned().unwrap_or_else(|| WeylElement::zero(self.n))
    }

    /// Form degrees present, ascending.
    pub fn degrees(&self) -> Vec<u32> {
        let mut ds: Vec<u32> = self.terms.keys().map(|m| m.count_ones()).collect();
        ds.sort_unstable();
        ds.dedup();
        ds
    }

    /// Add `w * dy_mask`, dropping components that cancel.
    pub fn add_component(&mut self, mask: u32, w: &WeylElement) {
        assert_eq!(w.n(), self.n, "coefficient rank mismatch");
        assert_eq!(mask >> (2 * self.n), 0, "dy mask out of range");
        if w.is_zero() {
            return;
        }
        match self.terms.entry(mask) {
            Entry::Occupied(mut e) => {
                let sum = e.get().add(w);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
            Entry::Vacant(v) => {
                v.insert(w.clone());
            }
        }
    }

    pub fn add(&self, rhs: &FormalForm) -> FormalForm {
        assert_eq!(self.n, rhs.n, "form rank mismatch");
        let mut out = self.clone();
        for (mask, w) in rhs.components() {
            out.add_component(mask, w);
        }
        out
    }

    pub fn neg(&self) -> FormalForm {
        FormalForm {
            n: self.n,
            terms: self.terms.iter().map(|(m, w)| (*m, w.neg())).collect(),
        }
    }

    pub fn sub(&self, rhs: &FormalForm) -> FormalForm {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, c: &HbarSeries) -> FormalForm {
        let mut out = FormalForm::zero(self.n);
        for (mask, w) in self.components() {
            out.add_component(mask, &w.scale(c));
        }
        out
    }

    /// Multiply by a function (zero-form).
    pub fn scale_weyl(&self, f: &WeylElement) -> FormalForm {
        let mut out = FormalForm::zero(self.n);
        for (mask, w) in self.components() {
            out.add_component(mask, &w.mul(f));
        }
        out
    }

    /// Wedge product.  Coefficient functions commute; the sign comes from
    /// sorting the concatenated `dy` words.
    pub fn wedge(&self, rhs: &FormalForm) -> FormalForm {
        assert_eq!(self.n, rhs.n, "form rank mismatch");
        let mut out = FormalForm::zero(self.n);
        for (m1, w1) in self.components() {
            for (m2, w2) in rhs.components() {
                if let Some(sign) = merge_sign(m1, m2) {
                    let coeff = w1.mul(w2).scale(&HbarSeries::from_rational(sign));
                    out.add_component(m1 | m2, &coeff);
                }
            }
        }
        out
    }

    /// De Rham differential: `d(f dy_S) = sum_a (d_a f) dy^a ^ dy_S`.
    pub fn de_rham_d(&self) -> FormalForm {
        let mut out = FormalForm::zero(self.n);
        for (mask, w) in self.components() {
            for a in 0..2 * self.n {
                let df = w.deriv(a);
                if df.is_zero() {
                    continue;
                }
                if let Some(sign) = insert_sign(mask, a) {
                    out.add_component(mask | (1 << a), &df.scale(&HbarSeries::from_rational(sign)));
                }
            }
        }
        out
    }

    /// Second-order contraction with the Poisson tensor.
    pub fn iota_pi(&self, pi: &PoissonTensor) -> FormalForm {
        assert_eq!(pi.n(), self.n, "Poisson tensor rank mismatch");
        let mut out = FormalForm::zero(self.n);
        for (mask, w) in self.components() {
            for (coeff, rest) in contract_mask(pi, mask) {
                out.add_component(rest, &w.scale(&HbarSeries::from_rational(coeff)));
            }
        }
        out
    }

    /// BV Laplacian `Delta = iota_Pi d - d iota_Pi`, evaluated in one fused
    /// pass: each derivative `d_a w` is formed once per component and routed
    /// to both the `iota d` and `-d iota` destinations with scalar weights,
    /// skipping the three intermediate forms of the literal composition
    /// (which the unit tests pin this against).
    pub fn bv_delta(&self, pi: &PoissonTensor) -> FormalForm {
        assert_eq!(pi.n(), self.n, "Poisson tensor rank mismatch");
        let mut out = FormalForm::zero(self.n);
        for (mask, w) in self.components() {
            let contractions = contract_mask(pi, mask);
            for a in 0..2 * self.n {
                let df = w.deriv(a);
                if df.is_zero() {
                    continue;
                }
                let mut weights: Vec<(u32, Rational)> = Vec::new();
                // iota_Pi(d(w dy_S)): insert dy^a, then contract the merged word.
                if let Some(sign) = insert_sign(mask, a) {
                    for (coeff, rest) in contract_mask(pi, mask | (1 << a)) {
                        weights.push((rest, sign.clone() * coeff));
                    }
                }
                // -d(iota_Pi(w dy_S)): contract first, then insert dy^a.
                for (coeff, rest) in &contractions {
                    if let Some(sign) = insert_sign(*rest, a) {
                        weights.push((rest | (1 << a), -(sign * coeff.clone())));
                    }
                }
                for (target, weight) in weights {
                    if weight.is_zero() {
                        continue;
                    }
                    out.add_component(target, &df.scale(&HbarSeries::from_rational(weight)));
                }
            }
        }
        out
    }

    /// Zero-form part evaluated at `y = 0`.
    pub fn scalar_at_zero(&self) -> HbarSeries {
        self.coefficient(0).constant_term()
    }

    /// Berezin-type integral `(h^n / n!) [iota_Pi^n .]_0`; nonzero only on
    /// components of top form degree.
    pub fn berezin(&self, pi: &PoissonTensor) -> HbarSeries {
        let mut cur = self.clone();
        for _ in 0..self.n {
            cur = cur.iota_pi(pi);
        }
        let norm = Rational::factorial(self.n as u64).recip().expect("n! is nonzero");
        cur.scalar_at_zero().mul(&HbarSeries::monomial(self.n as i64, norm))
    }

    /// Equivariant integral `u^n e^{-h iota_Pi / u} (.)|_0`, as a polynomial
    /// in `u` (degree `n` down to `n - floor(top/2)`).
    pub fn equivariant_integral(&self, pi: &PoissonTensor) -> UPolynomial {
        assert_eq!(pi.n(), self.n, "Poisson tensor rank mismatch");
        let mut out = UPolynomial::zero();
        let mut cur = self.clone();
        for k in 0..=(self.n as i64) {
            let mut weight = Rational::factorial(k as u64).recip().expect("k! is nonzero");
            if k % 2 == 1 {
                weight = -weight;
            }
            let scalar = cur.scalar_at_zero().mul(&HbarSeries::monomial(k, weight));
            out = out.add(&UPolynomial::monomial(self.n as i64 - k, scalar));
            if k < self.n as i64 {
                cur = cur.iota_pi(pi);
            }
        }
        out
    }
}

impl fmt::Display for FormalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut flat: Vec<(Rational, String)> = Vec::new();
        for (mask, w) in self.components() {
            let dy = dy_symbol(self.n, mask);
            for (mono, series) in w.terms() {
                let ym = monomial_symbol(self.n, mono);
                for (exp, r) in series.iter() {
                    let sym = join_symbols(&[hbar_symbol(exp), ym.clone(), dy.clone()]);
                    flat.push((r.clone(), sym));
                }
            }
        }
        write!(f, "{}", format_terms(&flat))
    }
}

impl fmt::Debug for FormalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Form-valued Laurent polynomial in `u`: the target of the correlation map
/// on periodic cyclic chains.
#[derive(Clone, PartialEq, Eq)]
pub struct EquivariantForm {
    n: usize,
    terms: BTreeMap<i64, FormalForm>,
}

impl EquivariantForm {
    pub fn zero(n: usize) -> Self {
        EquivariantForm { n, terms: BTreeMap::new() }
    }

    pub fn from_form(form: &FormalForm) -> Self {
        let mut e = EquivariantForm::zero(form.n());
        e.add_form(0, form);
        e
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Components as `(u exponent, form)` pairs, exponents ascending.
    pub fn components(&self) -> impl Iterator<Item = (i64, &FormalForm)> {
        self.terms.iter().map(|(k, f)| (*k, f))
    }

    pub fn form_at(&self, k: i64) -> FormalForm {
        self.terms.get(&k).cloned().unwrap_or_else(|| FormalForm::zero(self.n))
    }

    pub fn add_form(&mut self, k: i64, form: &FormalForm) {
        assert_eq!(form.n(), self.n, "form rank mismatch");
        if form.is_zero() {
            return;
        }
        match self.terms.entry(k) {
            Entry::Occupied(mut e) => {
                let sum = e.get().add(form);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
            Entry::Vacant(v) => {
                v.insert(form.clone());
            }
        }
    }

    pub fn add(&self, rhs: &EquivariantForm) -> EquivariantForm {
        assert_eq!(self.n, rhs.n, "form rank mismatch");
        let mut out = self.clone();
        for (k, form) in rhs.components() {
            out.add_form(k, form);
        }
        out
    }

    pub fn neg(&self) -> EquivariantForm {
        EquivariantForm {
            n: self.n,
            terms: self.terms.iter().map(|(k, f)| (*k, f.neg())).collect(),
        }
    }

    pub fn sub(&self, rhs: &EquivariantForm) -> EquivariantForm {
        self.add(&rhs.neg())
    }

    /// The equivariant differential `h Delta + u d`.
    pub fn differential(&self, pi: &PoissonTensor) -> EquivariantForm {
        let mut out = EquivariantForm::zero(self.n);
        for (k, form) in self.components() {
            out.add_form(k, &form.bv_delta(pi).scale(&HbarSeries::hbar()));
            out.add_form(k + 1, &form.de_rham_d());
        }
        out
    }

    /// Equivariant integral, extended `u`-linearly.
    pub fn equivariant_integral(&self, pi: &PoissonTensor) -> UPolynomial {
        let mut out = UPolynomial::zero();
        for (k, form) in self.components() {
            let layer = form.equivariant_integral(pi);
            out = out.add(&UPolynomial::monomial(k, HbarSeries::one()).mul(&layer));
        }
        out
    }
}

impl fmt::Display for EquivariantForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut parts = Vec::new();
        for (k, form) in self.components() {
            let u = crate::scalar::u_symbol(k);
            if u.is_empty() {
                parts.push(format!("({form})"));
            } else {
                parts.push(format!("{u}*({form})"));
            }
        }
        write!(f, "{}", parts.join(" + "))
    }
}

impl fmt::Debug for EquivariantForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}
