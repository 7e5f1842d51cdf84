//! Formal Weyl algebras with the Moyal star product.
//!
//! `W_2n = K[[y^1..y^2n]]` carries the star product
//!
//! ```text
//! (f * g)(y) = exp( (h/2) Pi^{ij} d/dy1^i d/dy2^j ) f(y1) g(y2) |_{y1=y2=y}
//! ```
//!
//! for a constant antisymmetric tensor `Pi`.  Variables are ordered
//! `(p_1, ..., p_n, q^1, ..., q^n)` and the standard tensor has
//! `Pi^{p_i q^i} = +1`, so `[p, q]_* = p*q - q*p = h`.
//!
//! Elements are finitely supported polynomials in `y` with [`HbarSeries`]
//! coefficients (Laurent in `h`), which is exactly the subspace all of the
//! chain-level machinery in [`crate::hochschild`] and [`crate::correlation`]
//! needs; the star product of polynomials terminates, so no `y`-adic
//! truncation is ever introduced.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CoreError, CoreResult};
use crate::scalar::{format_terms, hbar_symbol, join_symbols, HbarSeries, Rational};

// ---------------------------------------------------------------------------
// Poisson tensor
// ---------------------------------------------------------------------------

/// Constant antisymmetric tensor `Pi^{ij}` on `2n` variables.
#[derive(Clone, PartialEq, Eq)]
pub struct PoissonTensor {
    n: usize,
    /// Nonzero entries `(i, j, Pi^{ij})`, kept in deterministic order.
    entries: Vec<(usize, usize, Rational)>,
}

impl PoissonTensor {
    /// The standard symplectic tensor: `Pi^{p_i q^i} = +1`.
    pub fn standard(n: usize) -> Self {
        let mut entries = Vec::with_capacity(2 * n);
        for i in 0..n {
            entries.push((i, n + i, Rational::one()));
            entries.push((n + i, i, -Rational::one()));
        }
        PoissonTensor { n, entries }
    }

    /// Build from a full `2n x 2n` matrix; must be antisymmetric.
    pub fn from_matrix(n: usize, m: &[Vec<Rational>]) -> CoreResult<Self> {
        let d = 2 * n;
        if m.len() != d || m.iter().any(|row| row.len() != d) {
            return Err(CoreError::dim(format!("Poisson tensor must be {d}x{d}")));
        }
        for (i, row) in m.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                if *entry != -&m[j][i] {
                    return Err(CoreError::invalid("Poisson tensor must be antisymmetric"));
                }
            }
        }
        let mut entries = Vec::new();
        for (i, row) in m.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                if !entry.is_zero() {
                    entries.push((i, j, entry.clone()));
                }
            }
        }
        Ok(PoissonTensor { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// `Pi^{ij}`.
    pub fn entry(&self, i: usize, j: usize) -> Rational {
        self.entries
            .iter()
            .find(|(a, b, _)| *a == i && *b == j)
            .map(|(_, _, v)| v.clone())
            .unwrap_or_else(Rational::zero)
    }

    /// Nonzero entries `(i, j, Pi^{ij})`.
    pub fn nonzeros(&self) -> &[(usize, usize, Rational)] {
        &self.entries
    }
}

/// Printable name of variable `idx` under the `(p_1..p_n, q^1..q^n)` order.
pub fn variable_name(n: usize, idx: usize) -> String {
    if idx < n {
        format!("p{}", idx + 1)
    } else {
        format!("q{}", idx - n + 1)
    }
}

// ---------------------------------------------------------------------------
// Monomials and elements
// ---------------------------------------------------------------------------

/// Exponent vector in graded-lexicographic order (total degree first).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Monomial {
    deg: u32,
    exps: Vec<u32>,
}

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        let deg = exps.iter().sum();
        Monomial { deg, exps }
    }

    pub fn constant(dim: usize) -> Self {
        Monomial { deg: 0, exps: vec![0; dim] }
    }

    pub fn degree(&self) -> u32 {
        self.deg
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn is_constant(&self) -> bool {
        self.deg == 0
    }

    pub(crate) fn mul(&self, other: &Monomial) -> Monomial {
        let exps = self
            .exps
            .iter()
            .zip(&other.exps)
            .map(|(a, b)| a + b)
            .collect();
        Monomial { deg: self.deg + other.deg, exps }
    }

    /// Divide by `y^i`, returning the dropped exponent as a factor.
    pub(crate) fn deriv(&self, i: usize) -> Option<(u32, Monomial)> {
        if self.exps[i] == 0 {
            return None;
        }
        let mut exps = self.exps.clone();
        let k = exps[i];
        exps[i] -= 1;
        Some((k, Monomial { deg: self.deg - 1, exps }))
    }
}

/// Element of the formal Weyl algebra: a `y`-polynomial over [`HbarSeries`].
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeylElement {
    n: usize,
    terms: BTreeMap<Monomial, HbarSeries>,
}

impl WeylElement {
    pub fn zero(n: usize) -> Self {
        WeylElement { n, terms: BTreeMap::new() }
    }

    pub fn one(n: usize) -> Self {
        WeylElement::constant(n, HbarSeries::one())
    }

    pub fn constant(n: usize, c: HbarSeries) -> Self {
        let mut w = WeylElement::zero(n);
        w.add_term(Monomial::constant(2 * n), &c);
        w
    }

    /// The coordinate `y^idx` (`0..n` are `p`'s, `n..2n` are `q`'s).
    pub fn variable(n: usize, idx: usize) -> Self {
        assert!(idx < 2 * n, "variable index out of range");
        let mut exps = vec![0u32; 2 * n];
        exps[idx] = 1;
        WeylElement::monomial(n, exps, HbarSeries::one())
    }

    pub fn monomial(n: usize, exps: Vec<u32>, c: HbarSeries) -> Self {
        assert_eq!(exps.len(), 2 * n, "exponent vector length");
        let mut w = WeylElement::zero(n);
        w.add_term(Monomial::new(exps), &c);
        w
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &HbarSeries)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Maximal total `y`-degree (0 for the zero element).
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Add `c * y^m`.  Coefficients that vanish (to their precision, if
    /// truncated) are not stored.
    pub fn add_term(&mut self, m: Monomial, c: &HbarSeries) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                let sum = e.get().add(c);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
            Entry::Vacant(v) => {
                v.insert(c.clone());
            }
        }
    }

    pub fn add(&self, rhs: &WeylElement) -> WeylElement {
        assert_eq!(self.n, rhs.n, "Weyl algebra rank mismatch");
        let mut out = self.clone();
        for (m, c) in rhs.terms() {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn neg(&self) -> WeylElement {
        WeylElement {
            n: self.n,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c.neg())).collect(),
        }
    }

    pub fn sub(&self, rhs: &WeylElement) -> WeylElement {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, c: &HbarSeries) -> WeylElement {
        let mut out = WeylElement::zero(self.n);
        for (m, v) in self.terms() {
            out.add_term(m.clone(), &v.mul(c));
        }
        out
    }

    /// Commutative (pointwise) product — the `h = 0` limit of the star
    /// product, used by the Wick machinery and the classical checks.
    pub fn mul(&self, rhs: &WeylElement) -> WeylElement {
        assert_eq!(self.n, rhs.n, "Weyl algebra rank mismatch");
        let mut out = WeylElement::zero(self.n);
        for (m1, c1) in self.terms() {
            for (m2, c2) in rhs.terms() {
                out.add_term(m1.mul(m2), &c1.mul(c2));
            }
        }
        out
    }

    /// Partial derivative in `y^i`.
    pub fn deriv(&self, i: usize) -> WeylElement {
        let mut out = WeylElement::zero(self.n);
        for (m, c) in self.terms() {
            if let Some((k, m2)) = m.deriv(i) {
                out.add_term(m2, &c.scale(&Rational::from_int(k as i64)));
            }
        }
        out
    }

    /// Coefficient of the constant monomial (the value at `y = 0`).
    pub fn constant_term(&self) -> HbarSeries {
        self.terms
            .get(&Monomial::constant(2 * self.n))
            .cloned()
            .unwrap_or_else(HbarSeries::zero)
    }

    /// Subtract the `y`-constant part (the image of `K * 1`); used for the
    /// reduced-bimodule normalization in the cyclic complex.
    pub fn without_constant(&self) -> WeylElement {
        let mut out = self.clone();
        out.terms.remove(&Monomial::constant(2 * self.n));
        out
    }

    /// Truncate every coefficient at `h^order`.
    pub fn truncate(&self, order: i64) -> WeylElement {
        let mut out = WeylElement::zero(self.n);
        for (m, c) in self.terms() {
            out.add_term(m.clone(), &c.truncate(order));
        }
        out
    }

    /// Moyal star product.
    pub fn star(&self, rhs: &WeylElement, pi: &PoissonTensor) -> CoreResult<WeylElement> {
        if self.n != rhs.n || self.n != pi.n() {
            return Err(CoreError::dim("star product requires matching rank"));
        }
        let mut out = WeylElement::zero(self.n);
        // level holds  sum  c * (m1 (x) m2)  after k applications of the
        // biderivation  T = Pi^{ij} d_i (x) d_j.
        let mut level: BTreeMap<(Monomial, Monomial), HbarSeries> = BTreeMap::new();
        for (m1, c1) in self.terms() {
            for (m2, c2) in rhs.terms() {
                let c = c1.mul(c2);
                if !c.is_zero() {
                    let entry = level
                        .entry((m1.clone(), m2.clone()))
                        .or_insert_with(HbarSeries::zero);
                    *entry = entry.add(&c);
                }
            }
        }
        let half = Rational::new(1, 2).expect("nonzero denominator");
        let mut weight = HbarSeries::one(); // (h/2)^k / k!
        let mut k: u64 = 0;
        loop {
            for ((m1, m2), c) in &level {
                out.add_term(m1.mul(m2), &c.mul(&weight));
            }
            // Stop once no further contraction is possible.
            if level.keys().all(|(m1, m2)| m1.degree() == 0 || m2.degree() == 0) {
                break;
            }
            let mut next: BTreeMap<(Monomial, Monomial), HbarSeries> = BTreeMap::new();
            for ((m1, m2), c) in &level {
                for (i, j, pij) in pi.nonzeros() {
                    let Some((a, d1)) = m1.deriv(*i) else { continue };
                    let Some((b, d2)) = m2.deriv(*j) else { continue };
                    let factor =
                        pij.clone() * Rational::from_int(a as i64) * Rational::from_int(b as i64);
                    let c2 = c.scale(&factor);
                    if c2.is_zero() {
                        continue;
                    }
                    let entry = next.entry((d1, d2)).or_insert_with(HbarSeries::zero);
                    *entry = entry.add(&c2);
                }
            }
            next.retain(|_, c| !c.is_zero());
            if next.is_empty() {
                break;
            }
            level = next;
            k += 1;
            weight = weight
                .mul(&HbarSeries::monomial(1, half.clone()))
                .scale(&Rational::from_int(k as i64).recip().expect("k >= 1"));
        }
        Ok(out)
    }

    /// Normalized star commutator `[f, g] = (f*g - g*f) / h`.
    ///
    /// Division is exact: every term of the star commutator of polynomial
    /// arguments carries at least one power of `h`.
    pub fn star_commutator(&self, rhs: &WeylElement, pi: &PoissonTensor) -> CoreResult<WeylElement> {
        let fg = self.star(rhs, pi)?;
        let gf = rhs.star(self, pi)?;
        let diff = fg.sub(&gf);
        let mut out = WeylElement::zero(self.n);
        for (m, c) in diff.terms() {
            debug_assert!(
                c.valuation().map_or(true, |v| v >= 1),
                "star commutator term without an h factor"
            );
            out.add_term(m.clone(), &c.shift(-1));
        }
        Ok(out)
    }

    /// Poisson bracket `{f, g} = Pi^{ij} d_i f d_j g` — the classical shadow
    /// of the normalized commutator, used as the axiom-(3) oracle.
    pub fn poisson_bracket(&self, rhs: &WeylElement, pi: &PoissonTensor) -> WeylElement {
        let mut out = WeylElement::zero(self.n);
        for (i, j, pij) in pi.nonzeros() {
            let d1 = self.deriv(*i);
            let d2 = rhs.deriv(*j);
            out = out.add(&d1.mul(&d2).scale(&HbarSeries::from_rational(pij.clone())));
        }
        out
    }

    /// Projection onto the quadratic part at `h = 0` (valued in `sp_2n`).
    pub fn pr1(&self) -> WeylElement {
        let mut out = WeylElement::zero(self.n);
        for (m, c) in self.terms() {
            if m.degree() == 2 {
                out.add_term(m.clone(), &HbarSeries::from_rational(c.coeff(0)));
            }
        }
        out
    }

    /// Projection onto the center: the value at `y = 0` (full `h`-series).
    pub fn pr3(&self) -> HbarSeries {
        self.constant_term()
    }
}

/// The curvature-like bilinears measuring the failure of `pr1`, `pr3` to be
/// Lie maps for the normalized commutator:
///
/// * `R1(f, g) = [pr1 f, pr1 g] - pr1 [f, g]` (quadratic, `h`-free),
/// * `R3(f, g) = -pr3 [f, g]` (central).
pub fn curvature_bilinears(
    f: &WeylElement,
    g: &WeylElement,
    pi: &PoissonTensor,
) -> CoreResult<(WeylElement, HbarSeries)> {
    let bracket = f.star_commutator(g, pi)?;
    let lie = f.pr1().star_commutator(&g.pr1(), pi)?;
    let r1 = lie.sub(&bracket.pr1());
    let r3 = bracket.pr3().neg();
    Ok((r1, r3))
}

impl fmt::Display for WeylElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms: Vec<(Rational, String)> = Vec::new();
        for (m, c) in self.terms() {
            let ystr = monomial_symbol(self.n, m);
            for (e, r) in c.iter() {
                terms.push((r.clone(), join_symbols(&[hbar_symbol(e), ystr.clone()])));
            }
        }
        write!(f, "{}", format_terms(&terms))
    }
}

impl fmt::Debug for WeylElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

pub(crate) fn monomial_symbol(n: usize, m: &Monomial) -> String {
    let mut parts = Vec::new();
    for (idx, &e) in m.exps().iter().enumerate() {
        if e == 0 {
            continue;
        }
        let name = variable_name(n, idx);
        if e == 1 {
            parts.push(name);
        } else {
            parts.push(format!("{name}^{e}"));
        }
    }
    parts.join("*")
}
