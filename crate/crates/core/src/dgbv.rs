//! Finite-dimensional (-1)-shifted dg symplectic spaces and their BV package:
//! the BV Laplacian obtained by contracting with a quadratic kernel, the BV
//! bracket, master-equation residuals, and the homotopy-RG flow `e^{h dP}`.
//!
//! # Conventions
//!
//! A space is a graded basis `e_1, ..., e_d` with integer degrees `|e_i|`, a
//! differential `Q` of degree `+1`, and a pairing `omega` of degree `-1`.
//! Functions live in `O(V) = Sym(V*)`; the coordinate `x^i` dual to `e_i`
//! has degree `-|e_i|` and is odd exactly when `|e_i|` is odd.
//!
//! * `Q` is stored as the matrix of the map on the basis, columns = images:
//!   `Q(e_j) = sum_i q[i][j] e_i`.  On coordinates this reads
//!   `Q(x^a) = sum_b q[a][b] x^b`, extended as an odd derivation.
//! * `omega[i][j] = omega(e_i, e_j)`; degree `-1` forces it to pair opposite
//!   parities, so graded antisymmetry is plain antisymmetry.
//! * A kernel `K = sum K^{ij} e_i (x) e_j` is stored as its full coefficient
//!   table with the graded symmetry `K^{ji} = (-1)^{|e_i||e_j|} K^{ij}`.
//! * The contraction `dK` acts on a monomial written in canonical
//!   (ascending-index) order as
//!   `dK(a_1 ... a_m) = sum_{s<t} eps(s,t) <K, a_s (x) a_t> a_1 ... ^s ... ^t ... a_m`
//!   where `eps(s,t)` is the Koszul sign of moving `a_s` to the front and
//!   `a_t` right behind it, and `<K, x^a (x) x^b> = K^{ab}`.
//!
//! Sign vector (fixes the convention; see the `sign_convention_vector` test):
//! on the four-variable space with parities (even, odd, odd, even) and
//! `K^{01} = K^{10} = 1`, `K^{23} = K^{32} = -1`, the contraction of the
//! top monomial `x0 x1 x2 x3` is `x2 x3 + x0 x1` — the second pair picks up
//! the Koszul `-1` from carrying `x2` across `x1` — and `dK` squares to zero.
//!
//! With these choices `[Q, dP] = -d(QP)`, which is what makes the RG
//! conjugation identity
//! `(Q + h D_{K0 + QP}) e^{h dP} = e^{h dP} (Q + h D_{K0})` come out exactly.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CoreError, CoreResult};
use crate::scalar::{format_terms, hbar_symbol, join_symbols, HbarSeries, Rational};
use crate::weyl::Monomial;

// ---------------------------------------------------------------------------
// Polynomial functionals
// ---------------------------------------------------------------------------

/// Element of `O(V) = Sym(V*)` with Laurent-in-`h` coefficients.  Monomials
/// are stored as exponent vectors in canonical ascending-index order; odd
/// variables never carry an exponent above 1.
#[derive(Clone, PartialEq, Eq)]
pub struct PolyFunctional {
    dim: usize,
    terms: BTreeMap<Monomial, HbarSeries>,
}

impl PolyFunctional {
    pub fn zero(dim: usize) -> Self {
        PolyFunctional { dim, terms: BTreeMap::new() }
    }

    pub fn one(dim: usize) -> Self {
        PolyFunctional::constant(dim, HbarSeries::one())
    }

    pub fn constant(dim: usize, c: HbarSeries) -> Self {
        let mut f = PolyFunctional::zero(dim);
        f.add_term(Monomial::constant(dim), &c);
        f
    }

    /// The coordinate `x^idx`.
    pub fn variable(dim: usize, idx: usize) -> Self {
        assert!(idx < dim, "variable index out of range");
        let mut exps = vec![0u32; dim];
        exps[idx] = 1;
        PolyFunctional::monomial(dim, exps, HbarSeries::one())
    }

    pub fn monomial(dim: usize, exps: Vec<u32>, c: HbarSeries) -> Self {
        assert_eq!(exps.len(), dim, "exponent vector length");
        let mut f = PolyFunctional::zero(dim);
        f.add_term(Monomial::new(exps), &c);
        f
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn add(&self, rhs: &PolyFunctional) -> PolyFunctional {
        assert_eq!(self.dim, rhs.dim, "functional dimension mismatch");
        let mut out = self.clone();
        for (m, c) in rhs.terms() {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn neg(&self) -> PolyFunctional {
        PolyFunctional {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c.neg())).collect(),
        }
    }

    pub fn sub(&self, rhs: &PolyFunctional) -> PolyFunctional {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, c: &HbarSeries) -> PolyFunctional {
        let mut out = PolyFunctional::zero(self.dim);
        for (m, v) in self.terms() {
            out.add_term(m.clone(), &v.mul(c));
        }
        out
    }

    pub fn scale_rational(&self, r: &Rational) -> PolyFunctional {
        self.scale(&HbarSeries::from_rational(r.clone()))
    }

    /// The `h = 0` part (coefficient of `h^0`, exact).
    pub fn classical_part(&self) -> PolyFunctional {
        let mut out = PolyFunctional::zero(self.dim);
        for (m, c) in self.terms() {
            out.add_term(m.clone(), &HbarSeries::from_rational(c.coeff(0)));
        }
        out
    }

    /// Drop monomials of word length above `max_len` (polynomial-degree
    /// truncation for power-series inputs).
    pub fn truncate_word_length(&self, max_len: u32) -> PolyFunctional {
        let mut out = PolyFunctional::zero(self.dim);
        for (m, c) in self.terms() {
            if m.degree() <= max_len {
                out.add_term(m.clone(), c);
            }
        }
        out
    }

    /// Truncate every coefficient at `h^order`.
    pub fn truncate_hbar(&self, order: i64) -> PolyFunctional {
        let mut out = PolyFunctional::zero(self.dim);
        for (m, c) in self.terms() {
            out.add_term(m.clone(), &c.truncate(order));
        }
        out
    }
}

impl fmt::Debug for PolyFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .terms()
            .map(|(m, c)| format!("({c}) {:?}", m.exps()))
            .collect();
        write!(f, "PolyFunctional[{}]", parts.join(" + "))
    }
}

// ---------------------------------------------------------------------------
// Quadratic kernels
// ---------------------------------------------------------------------------

/// Quadratic kernel `K = sum K^{ij} e_i (x) e_j` with Koszul-symmetric
/// coefficient table, homogeneous of the tagged degree (`|e_i| + |e_j|` for
/// every nonzero entry).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Kernel2 {
    dim: usize,
    degree: i64,
    entries: BTreeMap<(usize, usize), Rational>,
}

impl Kernel2 {
    /// Validates homogeneity and graded symmetry against the basis degrees.
    pub fn new(
        degrees: &[i64],
        degree: i64,
        entries: Vec<((usize, usize), Rational)>,
    ) -> CoreResult<Self> {
        let dim = degrees.len();
        let mut table: BTreeMap<(usize, usize), Rational> = BTreeMap::new();
        for ((i, j), v) in entries {
            if i >= dim || j >= dim {
                return Err(CoreError::dim("kernel index out of range"));
            }
            if v.is_zero() {
                continue;
            }
            let entry = table.entry((i, j)).or_insert_with(Rational::zero);
            *entry += &v;
        }
        table.retain(|_, v| !v.is_zero());
        for (&(i, j), v) in &table {
            if degrees[i] + degrees[j] != degree {
                return Err(CoreError::invalid(format!(
                    "kernel entry ({i},{j}) has degree {}, expected {degree}",
                    degrees[i] + degrees[j]
                )));
            }
            let sign = koszul_unit(degrees[i], degrees[j]);
            let mirrored = table.get(&(j, i)).cloned().unwrap_or_else(Rational::zero);
            if mirrored != v.clone() * Rational::from_int(sign) {
                return Err(CoreError::invalid(format!(
                    "kernel is not Koszul-symmetric at ({i},{j})"
                )));
            }
        }
        Ok(Kernel2 { dim, degree, entries: table })
    }

    pub fn zero(dim: usize, degree: i64) -> Self {
        Kernel2 { dim, degree, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> i64 {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize, j: usize) -> Rational {
        self.entries.get(&(i, j)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, &Rational)> {
        self.entries.iter().map(|(&(i, j), v)| (i, j, v))
    }

    pub fn add(&self, rhs: &Kernel2) -> CoreResult<Kernel2> {
        if self.dim != rhs.dim {
            return Err(CoreError::dim("kernel dimension mismatch"));
        }
        if self.degree != rhs.degree && !self.is_zero() && !rhs.is_zero() {
            return Err(CoreError::invalid("kernel degree mismatch in sum"));
        }
        let mut entries = self.entries.clone();
        for (&(i, j), v) in &rhs.entries {
            let entry = entries.entry((i, j)).or_insert_with(Rational::zero);
            *entry += v;
        }
        entries.retain(|_, v| !v.is_zero());
        let degree = if self.is_zero() { rhs.degree } else { self.degree };
        Ok(Kernel2 { dim: self.dim, degree, entries })
    }

    pub fn scale(&self, r: &Rational) -> Kernel2 {
        let mut entries = BTreeMap::new();
        if !r.is_zero() {
            for (&(i, j), v) in &self.entries {
                entries.insert((i, j), v * r);
            }
        }
        Kernel2 { dim: self.dim, degree: self.degree, entries }
    }
}

/// `(-1)^{ab}` for integer degrees.
fn koszul_unit(a: i64, b: i64) -> i64 {
    if (a % 2 != 0) && (b % 2 != 0) {
        -1
    } else {
        1
    }
}

// ---------------------------------------------------------------------------
// The dg symplectic space
// ---------------------------------------------------------------------------

/// A finite-dimensional dg symplectic space of degree `-1`: graded basis,
/// differential `Q`, pairing `omega`.  All structure equations are validated
/// at construction.
#[derive(Clone)]
pub struct DgSymplecticSpace {
    names: Vec<String>,
    degrees: Vec<i64>,
    q: Vec<Vec<Rational>>,
    omega: Vec<Vec<Rational>>,
}

impl DgSymplecticSpace {
    pub fn new(
        basis: Vec<(String, i64)>,
        q: Vec<Vec<Rational>>,
        omega: Vec<Vec<Rational>>,
    ) -> CoreResult<Self> {
        let dim = basis.len();
        if dim == 0 {
            return Err(CoreError::invalid("empty basis"));
        }
        let names: Vec<String> = basis.iter().map(|(n, _)| n.clone()).collect();
        let degrees: Vec<i64> = basis.iter().map(|(_, d)| *d).collect();
        {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != dim {
                return Err(CoreError::invalid("duplicate basis names"));
            }
        }
        let square = |m: &Vec<Vec<Rational>>, what: &str| -> CoreResult<()> {
            if m.len() != dim || m.iter().any(|r| r.len() != dim) {
                return Err(CoreError::dim(format!("{what} must be {dim}x{dim}")));
            }
            Ok(())
        };
        square(&q, "Q")?;
        square(&omega, "omega")?;

        // Q has degree +1:  q[i][j] != 0  requires |e_i| = |e_j| + 1.
        for i in 0..dim {
            for j in 0..dim {
                if !q[i][j].is_zero() && degrees[i] != degrees[j] + 1 {
                    return Err(CoreError::invalid(format!(
                        "Q entry ({i},{j}) violates degree +1"
                    )));
                }
            }
        }
        // Q^2 = 0.
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = Rational::zero();
                for (k, qik) in q[i].iter().enumerate() {
                    acc += &(qik * &q[k][j]);
                }
                if !acc.is_zero() {
                    return Err(CoreError::invalid("Q does not square to zero"));
                }
            }
        }
        // omega has degree -1 and is antisymmetric.
        for i in 0..dim {
            for j in 0..dim {
                if !omega[i][j].is_zero() && degrees[i] + degrees[j] != 1 {
                    return Err(CoreError::invalid(format!(
                        "omega entry ({i},{j}) violates degree -1"
                    )));
                }
                if omega[i][j] != -&omega[j][i] {
                    return Err(CoreError::invalid("omega is not antisymmetric"));
                }
            }
        }
        // Nondegeneracy.
        invert_matrix(&omega)
            .map_err(|_| CoreError::singular("omega is degenerate (no degree -1 pairing)"))?;
        // Q-compatibility: omega(Qa, b) + (-1)^{|a|} omega(a, Qb) = 0.
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = Rational::zero();
                for k in 0..dim {
                    acc += &(&q[k][i] * &omega[k][j]);
                }
                let sign = Rational::from_int(if degrees[i] % 2 != 0 { -1 } else { 1 });
                for k in 0..dim {
                    acc += &(&sign * &(&q[k][j] * &omega[i][k]));
                }
                if !acc.is_zero() {
                    return Err(CoreError::invalid("omega is not Q-compatible"));
                }
            }
        }
        Ok(DgSymplecticSpace { names, degrees, q, omega })
    }

    pub fn dim(&self) -> usize {
        self.degrees.len()
    }

    pub fn basis_names(&self) -> &[String] {
        &self.names
    }

    pub fn degrees(&self) -> &[i64] {
        &self.degrees
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// The coordinate functional dual to basis element `idx`.
    pub fn coordinate(&self, idx: usize) -> PolyFunctional {
        PolyFunctional::variable(self.dim(), idx)
    }

    fn parity(&self, idx: usize) -> bool {
        self.degrees[idx] % 2 != 0
    }

    /// Count of odd letters with variable index `< cutoff` in `m`.
    fn odd_prefix(&self, m: &Monomial, cutoff: usize) -> u32 {
        m.exps()
            .iter()
            .take(cutoff)
            .enumerate()
            .filter(|(v, _)| self.parity(*v))
            .map(|(_, e)| *e)
            .sum()
    }

    /// Graded product of canonical monomials: `None` when an odd variable
    /// collides, otherwise the Koszul sign and the merged exponent vector.
    fn mul_mono(&self, m1: &Monomial, m2: &Monomial) -> Option<(i64, Monomial)> {
        let mut crossings: u32 = 0;
        for v in 0..self.dim() {
            if !self.parity(v) || m2.exps()[v] == 0 {
                continue;
            }
            if m1.exps()[v] != 0 {
                return None;
            }
            // x^v from the right factor crosses every odd letter of the left
            // factor with a larger variable index.
            crossings += ((v + 1)..self.dim())
                .filter(|&w| self.parity(w))
                .map(|w| m1.exps()[w])
                .sum::<u32>();
        }
        let exps = m1
            .exps()
            .iter()
            .zip(m2.exps())
            .map(|(a, b)| a + b)
            .collect();
        let sign = if crossings % 2 == 0 { 1 } else { -1 };
        Some((sign, Monomial::new(exps)))
    }

    /// Graded-commutative product on functionals.
    pub fn mul(&self, a: &PolyFunctional, b: &PolyFunctional) -> PolyFunctional {
        assert_eq!(a.dim(), self.dim(), "functional dimension mismatch");
        assert_eq!(b.dim(), self.dim(), "functional dimension mismatch");
        let mut out = PolyFunctional::zero(self.dim());
        for (m1, c1) in a.terms() {
            for (m2, c2) in b.terms() {
                if let Some((sign, m)) = self.mul_mono(m1, m2) {
                    out.add_term(m, &c1.mul(c2).scale(&Rational::from_int(sign)));
                }
            }
        }
        out
    }

    /// Total degree of a monomial in `O(V)` (the coordinate `x^i` carries
    /// degree `-|e_i|`).
    pub fn monomial_degree(&self, m: &Monomial) -> i64 {
        m.exps()
            .iter()
            .enumerate()
            .map(|(v, &e)| -(self.degrees[v]) * e as i64)
            .sum()
    }

    /// `Some(d)` if every monomial of `f` has degree `d` (zero counts as
    /// homogeneous of any degree, reported as `None`).
    pub fn homogeneous_degree(&self, f: &PolyFunctional) -> Option<i64> {
        let mut it = f.terms().map(|(m, _)| self.monomial_degree(m));
        let first = it.next()?;
        if it.all(|d| d == first) {
            Some(first)
        } else {
            None
        }
    }

    fn monomial_parity(&self, m: &Monomial) -> bool {
        self.odd_prefix(m, self.dim()) % 2 != 0
    }

    /// Split into (even, odd) parts by monomial parity.
    pub fn parity_split(&self, f: &PolyFunctional) -> (PolyFunctional, PolyFunctional) {
        let mut even = PolyFunctional::zero(self.dim());
        let mut odd = PolyFunctional::zero(self.dim());
        for (m, c) in f.terms() {
            if self.monomial_parity(m) {
                odd.add_term(m.clone(), c);
            } else {
                even.add_term(m.clone(), c);
            }
        }
        (even, odd)
    }

    /// The differential on functionals (odd derivation extending the dual of
    /// the basis action).
    pub fn q_differential(&self, f: &PolyFunctional) -> PolyFunctional {
        assert_eq!(f.dim(), self.dim(), "functional dimension mismatch");
        let mut out = PolyFunctional::zero(self.dim());
        for (m, c) in f.terms() {
            for (m2, sign) in self.q_monomial(m) {
                out.add_term(m2, &c.scale(&sign));
            }
        }
        out
    }

    /// `Q` of a single canonical monomial, as `(monomial, coefficient)` pairs.
    /// Recursive form of the derivation rule
    /// `Q(x^a m) = Q(x^a) m + (-1)^{|x^a|} x^a Q(m)`.
    fn q_monomial(&self, m: &Monomial) -> Vec<(Monomial, Rational)> {
        let Some(a) = m.exps().iter().position(|&e| e > 0) else {
            return Vec::new();
        };
        let mut rest = m.exps().to_vec();
        rest[a] -= 1;
        let rest = Monomial::new(rest);
        let mut head = vec![0u32; self.dim()];
        head[a] = 1;

        let mut out: Vec<(Monomial, Rational)> = Vec::new();
        // Q(x^a) * rest
        for b in 0..self.dim() {
            if self.q[a][b].is_zero() {
                continue;
            }
            let mut xb = vec![0u32; self.dim()];
            xb[b] = 1;
            if let Some((sign, prod)) = self.mul_mono(&Monomial::new(xb), &rest) {
                out.push((prod, &self.q[a][b] * &Rational::from_int(sign)));
            }
        }
        // (-1)^{|x^a|} x^a * Q(rest)
        let head_sign = if self.parity(a) { -1 } else { 1 };
        let head = Monomial::new(head);
        for (m2, c2) in self.q_monomial(&rest) {
            if let Some((sign, prod)) = self.mul_mono(&head, &m2) {
                out.push((prod, c2 * Rational::from_int(head_sign * sign)));
            }
        }
        out
    }

    /// `Q` on kernels: `Q(a (x) b) = Qa (x) b + (-1)^{|a|} a (x) Qb`.
    pub fn q_on_kernel(&self, k: &Kernel2) -> CoreResult<Kernel2> {
        if k.dim() != self.dim() {
            return Err(CoreError::dim("kernel dimension mismatch"));
        }
        let mut entries: Vec<((usize, usize), Rational)> = Vec::new();
        for (i, j, v) in k.nonzeros() {
            // First slot: e_i -> sum_k q[k][i] e_k.
            for t in 0..self.dim() {
                if !self.q[t][i].is_zero() {
                    entries.push(((t, j), &self.q[t][i] * v));
                }
            }
            // Second slot with the Koszul sign of passing Q across e_i.
            let sign = Rational::from_int(if self.parity(i) { -1 } else { 1 });
            for t in 0..self.dim() {
                if !self.q[t][j].is_zero() {
                    entries.push(((i, t), &sign * &(&self.q[t][j] * v)));
                }
            }
        }
        Kernel2::new(&self.degrees, k.degree() + 1, entries)
    }

    /// The Poisson kernel `K0 = omega^{-1}`: the degree-1 Koszul-symmetric
    /// kernel with `K0 . omega = diag((-1)^{|e_i|+1})`, normalized so that on
    /// the elementary pair `omega(e, f) = 1` the contraction of `x xi` is
    /// `+1`.  `Q(K0) = 0` is verified.
    pub fn poisson_kernel(&self) -> CoreResult<Kernel2> {
        let inv = invert_matrix(&self.omega)
            .map_err(|_| CoreError::singular("omega is degenerate (no degree -1 pairing)"))?;
        let mut entries = Vec::new();
        for (i, row) in inv.iter().enumerate() {
            let sign = Rational::from_int(if self.degrees[i] % 2 == 0 { -1 } else { 1 });
            for (j, entry) in row.iter().enumerate() {
                entries.push(((i, j), &sign * entry));
            }
        }
        let k = Kernel2::new(&self.degrees, 1, entries)?;
        let qk = self.q_on_kernel(&k)?;
        if !qk.is_zero() {
            return Err(CoreError::invalid("Poisson kernel is not Q-closed"));
        }
        Ok(k)
    }

    /// Second-order contraction with a kernel applied to one monomial.
    fn contract_monomial(&self, k: &Kernel2, m: &Monomial) -> Vec<(Monomial, Rational)> {
        let mut out = Vec::new();
        let exps = m.exps();
        for a in 0..self.dim() {
            if exps[a] == 0 {
                continue;
            }
            // Same-variable pairs (even variables only; odd diagonal entries
            // of a Koszul-symmetric kernel vanish anyway).
            if exps[a] >= 2 {
                let kaa = k.entry(a, a);
                if !kaa.is_zero() {
                    let pairs = (exps[a] as i64) * (exps[a] as i64 - 1) / 2;
                    let mut reduced = exps.to_vec();
                    reduced[a] -= 2;
                    out.push((Monomial::new(reduced), &kaa * &Rational::from_int(pairs)));
                }
            }
            for b in (a + 1)..self.dim() {
                if exps[b] == 0 {
                    continue;
                }
                let kab = k.entry(a, b);
                if kab.is_zero() {
                    continue;
                }
                let count = Rational::from_int(exps[a] as i64 * exps[b] as i64);
                // eps = sign of moving one x^a to the front, then one x^b
                // right behind it (discount the extracted x^a).
                let mut flips: u32 = 0;
                if self.parity(a) {
                    flips += self.odd_prefix(m, a);
                }
                if self.parity(b) {
                    flips += self.odd_prefix(m, b) - if self.parity(a) { 1 } else { 0 };
                }
                let eps = Rational::from_int(if flips % 2 == 0 { 1 } else { -1 });
                let mut reduced = exps.to_vec();
                reduced[a] -= 1;
                reduced[b] -= 1;
                out.push((Monomial::new(reduced), &(&kab * &count) * &eps));
            }
        }
        out
    }

    /// The BV Laplacian / contraction operator `dK` for a quadratic kernel.
    pub fn bv_laplacian(&self, k: &Kernel2, f: &PolyFunctional) -> CoreResult<PolyFunctional> {
        if k.dim() != self.dim() || f.dim() != self.dim() {
            return Err(CoreError::dim("kernel/functional dimension mismatch"));
        }
        let mut out = PolyFunctional::zero(self.dim());
        for (m, c) in f.terms() {
            for (m2, w) in self.contract_monomial(k, m) {
                out.add_term(m2, &c.scale(&w));
            }
        }
        Ok(out)
    }

    /// BV bracket `{a, b} = dK(ab) - dK(a) b - (-1)^{|a|} a dK(b)`, extended
    /// bilinearly over the parity components of `a`.
    pub fn bv_bracket(
        &self,
        k: &Kernel2,
        a: &PolyFunctional,
        b: &PolyFunctional,
    ) -> CoreResult<PolyFunctional> {
        let (a_even, a_odd) = self.parity_split(a);
        let mut out = PolyFunctional::zero(self.dim());
        for (part, sign) in [(a_even, 1i64), (a_odd, -1i64)] {
            if part.is_zero() {
                continue;
            }
            let prod = self.mul(&part, b);
            let lead = self.bv_laplacian(k, &prod)?;
            let da_b = self.mul(&self.bv_laplacian(k, &part)?, b);
            let a_db = self.mul(&part, &self.bv_laplacian(k, b)?);
            out = out.add(&lead.sub(&da_b).sub(&a_db.scale_rational(&Rational::from_int(sign))));
        }
        Ok(out)
    }

    /// `e^{h dP} f` for a degree-0 kernel `P`; terminates because each
    /// contraction removes two letters.
    pub fn hrg_flow(&self, p: &Kernel2, f: &PolyFunctional) -> CoreResult<PolyFunctional> {
        if p.degree() != 0 && !p.is_zero() {
            return Err(CoreError::domain("RG flow requires a degree-0 kernel"));
        }
        let mut acc = f.clone();
        let mut cur = f.clone();
        let mut k: i64 = 0;
        while !cur.is_zero() {
            k += 1;
            // cur_k = h dP(cur_{k-1}) / k, so cur_k = h^k dP^k f / k!.
            cur = self
                .bv_laplacian(p, &cur)?
                .scale(&HbarSeries::monomial(1, Rational::from_int(k).recip()?));
            acc = acc.add(&cur);
        }
        Ok(acc)
    }

    /// Master-equation residual.  Classical: `Q I0 + 1/2 {I0, I0}` on the
    /// `h = 0` part.  Quantum: `Q I + h dK I + 1/2 {I, I}`.
    pub fn master_equation_check(
        &self,
        k: &Kernel2,
        i: &PolyFunctional,
        mode: MasterEquationMode,
    ) -> CoreResult<MasterEquationReport> {
        match self.homogeneous_degree(i) {
            None if !i.is_zero() => {
                return Err(CoreError::domain(
                    "master equation requires a homogeneous degree-0 functional",
                ))
            }
            Some(d) if d != 0 => {
                return Err(CoreError::domain(format!(
                    "master equation requires degree 0, got degree {d}"
                )))
            }
            _ => {}
        }
        let half = Rational::new(1, 2).expect("nonzero denominator");
        let residual = match mode {
            MasterEquationMode::Classical => {
                let i0 = i.classical_part();
                let bracket = self.bv_bracket(k, &i0, &i0)?;
                self.q_differential(&i0).add(&bracket.scale_rational(&half))
            }
            MasterEquationMode::Quantum => {
                for (_, c) in i.terms() {
                    if c.valuation().is_some_and(|v| v < 0) {
                        return Err(CoreError::domain(
                            "quantum master equation requires nonnegative h-valuation",
                        ));
                    }
                }
                let bracket = self.bv_bracket(k, i, i)?;
                self.q_differential(i)
                    .add(&self.bv_laplacian(k, i)?.scale(&HbarSeries::hbar()))
                    .add(&bracket.scale_rational(&half))
            }
        };
        Ok(MasterEquationReport { passed: residual.is_zero(), residual })
    }

    /// Canonical rendering with coordinates named after their basis elements.
    pub fn format_functional(&self, f: &PolyFunctional) -> String {
        let mut terms: Vec<(Rational, String)> = Vec::new();
        for (m, c) in f.terms() {
            let mono = self.format_monomial(m);
            for (e, r) in c.iter() {
                terms.push((r.clone(), join_symbols(&[hbar_symbol(e), mono.clone()])));
            }
        }
        format_terms(&terms)
    }

    fn format_monomial(&self, m: &Monomial) -> String {
        let mut parts = Vec::new();
        for (v, &e) in m.exps().iter().enumerate() {
            if e == 0 {
                continue;
            }
            if e == 1 {
                parts.push(self.names[v].clone());
            } else {
                parts.push(format!("{}^{e}", self.names[v]));
            }
        }
        parts.join("*")
    }
}

/// Master-equation flavor selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MasterEquationMode {
    Classical,
    Quantum,
}

/// Result of a master-equation check: the residual and whether it vanished.
#[derive(Clone, Debug)]
pub struct MasterEquationReport {
    pub passed: bool,
    pub residual: PolyFunctional,
}

// ---------------------------------------------------------------------------
// Stock spaces
// ---------------------------------------------------------------------------

/// The elementary acyclic-free pair: basis `e` (degree `k`), `f` (degree
/// `1-k`), `omega(e, f) = 1`, `Q = 0`.
pub fn pair_space(k: i64) -> DgSymplecticSpace {
    let z = Rational::zero;
    DgSymplecticSpace::new(
        vec![("e".into(), k), ("f".into(), 1 - k)],
        vec![vec![z(), z()], vec![z(), z()]],
        vec![vec![z(), Rational::one()], vec![-Rational::one(), z()]],
    )
    .expect("elementary pair is a valid space")
}

/// The elementary contractible block: two pairs `(e, f)`, `(E, F)` with
/// degrees `(k, 1-k, k+1, -k)`, `omega(e, f) = omega(E, F) = 1`, and
/// `Q(e) = E`, `Q(F) = (-1)^{k+1} f`.
pub fn q_block_space(k: i64) -> DgSymplecticSpace {
    let z = Rational::zero;
    let s = Rational::from_int(if (k + 1) % 2 == 0 { 1 } else { -1 });
    let mut q = vec![vec![z(); 4]; 4];
    q[2][0] = Rational::one();
    q[1][3] = s;
    let mut omega = vec![vec![z(); 4]; 4];
    omega[0][1] = Rational::one();
    omega[1][0] = -Rational::one();
    omega[2][3] = Rational::one();
    omega[3][2] = -Rational::one();
    DgSymplecticSpace::new(
        vec![
            ("e".into(), k),
            ("f".into(), 1 - k),
            ("E".into(), k + 1),
            ("F".into(), -k),
        ],
        q,
        omega,
    )
    .expect("elementary Q-block is a valid space")
}

/// Direct sum; basis names are suffixed with the 1-based block index.
pub fn direct_sum(blocks: &[DgSymplecticSpace]) -> CoreResult<DgSymplecticSpace> {
    if blocks.is_empty() {
        return Err(CoreError::invalid("empty direct sum"));
    }
    let dim: usize = blocks.iter().map(|b| b.dim()).sum();
    let mut basis = Vec::with_capacity(dim);
    let z = Rational::zero;
    let mut q = vec![vec![z(); dim]; dim];
    let mut omega = vec![vec![z(); dim]; dim];
    let mut offset = 0;
    for (b, block) in blocks.iter().enumerate() {
        for (name, deg) in block.basis_names().iter().zip(block.degrees()) {
            basis.push((format!("{name}{}", b + 1), *deg));
        }
        for i in 0..block.dim() {
            for j in 0..block.dim() {
                q[offset + i][offset + j] = block.q[i][j].clone();
                omega[offset + i][offset + j] = block.omega[i][j].clone();
            }
        }
        offset += block.dim();
    }
    DgSymplecticSpace::new(basis, q, omega)
}

// ---------------------------------------------------------------------------
// Exact linear algebra
// ---------------------------------------------------------------------------

/// Gauss-Jordan inverse over the rationals.
pub(crate) fn invert_matrix(m: &[Vec<Rational>]) -> CoreResult<Vec<Vec<Rational>>> {
    let n = m.len();
    let mut a: Vec<Vec<Rational>> = m.to_vec();
    let mut inv: Vec<Vec<Rational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Rational::one() } else { Rational::zero() })
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .ok_or_else(|| CoreError::singular("matrix is singular"))?;
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let scale = a[col][col].recip()?;
        for j in 0..n {
            a[col][j] = &a[col][j] * &scale;
            inv[col][j] = &inv[col][j] * &scale;
        }
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone();
            for j in 0..n {
                let t = &factor * &a[col][j];
                a[r][j] = &a[r][j] - &t;
                let t = &factor * &inv[col][j];
                inv[r][j] = &inv[r][j] - &t;
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(n: i64) -> HbarSeries {
        HbarSeries::from_int(n)
    }

    /// Dual coordinates on `pair_space(0)`: `x` (even, dual to `e`) and
    /// `xi` (odd, dual to `f`).
    fn pair_setup() -> (DgSymplecticSpace, Kernel2, PolyFunctional, PolyFunctional) {
        let sp = pair_space(0);
        let k = sp.poisson_kernel().unwrap();
        let x = sp.coordinate(0);
        let xi = sp.coordinate(1);
        (sp, k, x, xi)
    }

    #[test]
    fn poisson_kernel_pair() {
        let (_, k, _, _) = pair_setup();
        assert_eq!(k.degree(), 1);
        assert_eq!(k.entry(0, 1), Rational::one());
        assert_eq!(k.entry(1, 0), Rational::one());
        assert_eq!(k.entry(0, 0), Rational::zero());
    }

    #[test]
    fn purely_even_pairing_rejected() {
        let z = Rational::zero;
        let err = DgSymplecticSpace::new(
            vec![("a".into(), 0), ("b".into(), 0)],
            vec![vec![z(), z()], vec![z(), z()]],
            vec![vec![z(), Rational::one()], vec![-Rational::one(), z()]],
        );
        assert!(err.is_err());
        // Zero omega on an even space is degenerate.
        let err = DgSymplecticSpace::new(
            vec![("a".into(), 0), ("b".into(), 0)],
            vec![vec![z(), z()], vec![z(), z()]],
            vec![vec![z(), z()], vec![z(), z()]],
        );
        assert!(err.is_err());
    }

    #[test]
    fn laplacian_pair_examples() {
        let (sp, k, x, xi) = pair_setup();
        let x_xi = sp.mul(&x, &xi);
        assert_eq!(sp.bv_laplacian(&k, &x_xi).unwrap(), PolyFunctional::one(2));
        let x2_xi = sp.mul(&x, &x_xi);
        assert_eq!(
            sp.bv_laplacian(&k, &x2_xi).unwrap(),
            x.scale(&hs(2))
        );
        let c = PolyFunctional::constant(2, HbarSeries::monomial(-1, Rational::from_int(5)));
        assert!(sp.bv_laplacian(&k, &c).unwrap().is_zero());
    }

    #[test]
    fn bracket_pair_examples() {
        let (sp, k, x, xi) = pair_setup();
        assert_eq!(sp.bv_bracket(&k, &x, &xi).unwrap(), PolyFunctional::one(2));
        let x2 = sp.mul(&x, &x);
        assert_eq!(sp.bv_bracket(&k, &x2, &xi).unwrap(), x.scale(&hs(2)));
        let any = sp.mul(&x2, &xi).add(&x);
        assert!(sp.bv_bracket(&k, &any, &PolyFunctional::one(2)).unwrap().is_zero());
        // The odd bracket is graded symmetric: {a,b} = (-1)^{|a||b|} {b,a},
        // so {xi, x} = {x, xi} here (one argument is even).
        assert_eq!(sp.bv_bracket(&k, &xi, &x).unwrap(), PolyFunctional::one(2));
    }

    #[test]
    fn hrg_wick_counts() {
        let (sp, _, x, xi) = pair_setup();
        // P = e (x) e.
        let p = Kernel2::new(sp.degrees(), 0, vec![((0, 0), Rational::one())]).unwrap();
        let x2 = sp.mul(&x, &x);
        let expect = x2.add(&PolyFunctional::constant(2, HbarSeries::hbar()));
        assert_eq!(sp.hrg_flow(&p, &x2).unwrap(), expect);

        let lin = x.add(&xi.scale(&hs(3)));
        assert_eq!(sp.hrg_flow(&p, &lin).unwrap(), lin);

        let x4 = sp.mul(&x2, &x2);
        let expect = x4
            .add(&x2.scale(&HbarSeries::monomial(1, Rational::from_int(6))))
            .add(&PolyFunctional::constant(
                2,
                HbarSeries::monomial(2, Rational::from_int(3)),
            ));
        assert_eq!(sp.hrg_flow(&p, &x4).unwrap(), expect);
    }

    /// The documented sign vector: on `q_block_space(0)` the dual
    /// coordinates have parities (even, odd, odd, even), the Poisson kernel
    /// is `K^{01} = K^{10} = 1`, `K^{23} = K^{32} = -1`, and contracting the
    /// top monomial picks up a Koszul `-1` on the second pair.
    #[test]
    fn sign_convention_vector() {
        let sp = q_block_space(0);
        let k = sp.poisson_kernel().unwrap();
        assert_eq!(k.entry(0, 1), Rational::one());
        assert_eq!(k.entry(1, 0), Rational::one());
        assert_eq!(k.entry(2, 3), -Rational::one());
        assert_eq!(k.entry(3, 2), -Rational::one());

        let top = PolyFunctional::monomial(4, vec![1, 1, 1, 1], HbarSeries::one());
        let d = sp.bv_laplacian(&k, &top).unwrap();
        let mut expect = PolyFunctional::monomial(4, vec![0, 0, 1, 1], HbarSeries::one());
        expect.add_term(Monomial::new(vec![1, 1, 0, 0]), &HbarSeries::one());
        assert_eq!(d, expect);
        assert!(sp.bv_laplacian(&k, &d).unwrap().is_zero());
    }

    #[test]
    fn q_is_a_differential_here() {
        let sp = q_block_space(0);
        // Q(y) = x, Q(eta) = -z in dual coordinates (x, eta, y, z).
        let y = sp.coordinate(2);
        let eta = sp.coordinate(1);
        assert_eq!(sp.q_differential(&y), sp.coordinate(0));
        assert_eq!(sp.q_differential(&eta), sp.coordinate(3).neg());
        // Q^2 = 0 on a composite functional.
        let f = sp.mul(&sp.mul(&y, &eta), &sp.coordinate(0));
        assert!(sp.q_differential(&sp.q_differential(&f)).is_zero());
        // Derivation rule on an explicit product.
        let x = sp.coordinate(0);
        let qf = sp.q_differential(&sp.mul(&y, &x));
        assert_eq!(qf, sp.mul(&x, &x));
    }

    #[test]
    fn rg_conjugation_instance() {
        // Space with nonzero Q, P = e (x) e (degree 0), so that
        // Q(P) = E (x) e + e (x) E is nonzero and the kernel shift matters.
        let sp = q_block_space(0);
        let k0 = sp.poisson_kernel().unwrap();
        let p = Kernel2::new(sp.degrees(), 0, vec![((0, 0), Rational::one())]).unwrap();
        let qp = sp.q_on_kernel(&p).unwrap();
        assert!(!qp.is_zero());
        let shifted = k0.add(&qp).unwrap();

        let x = sp.coordinate(0);
        let y = sp.coordinate(2);
        let f = sp.mul(&sp.mul(&x, &x), &y);

        // (Q + h D_{K0 + QP}) e^{h dP} f  =  e^{h dP} (Q + h D_{K0}) f.
        let flowed = sp.hrg_flow(&p, &f).unwrap();
        let lhs = sp
            .q_differential(&flowed)
            .add(&sp.bv_laplacian(&shifted, &flowed).unwrap().scale(&HbarSeries::hbar()));
        let pre = sp
            .q_differential(&f)
            .add(&sp.bv_laplacian(&k0, &f).unwrap().scale(&HbarSeries::hbar()));
        let rhs = sp.hrg_flow(&p, &pre).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn master_equation_modes() {
        let (sp, k, x, _) = pair_setup();
        let zero = PolyFunctional::zero(2);
        let report = sp
            .master_equation_check(&k, &zero, MasterEquationMode::Quantum)
            .unwrap();
        assert!(report.passed);

        // Abelian: any even-coordinate polynomial is degree 0 and closed.
        let i = sp.mul(&x, &x).add(&x.scale(&HbarSeries::hbar()));
        let report = sp
            .master_equation_check(&k, &i, MasterEquationMode::Quantum)
            .unwrap();
        assert!(report.passed, "residual {:?}", report.residual);
        let report = sp
            .master_equation_check(&k, &i, MasterEquationMode::Classical)
            .unwrap();
        assert!(report.passed);

        // Perturbation with a Q-exact direction fails with residual Q(I).
        let sp = q_block_space(-1);
        let k = sp.poisson_kernel().unwrap();
        let i = sp.coordinate(2); // degree 0, Q(i) = dual of e
        assert_eq!(sp.homogeneous_degree(&i), Some(0));
        let report = sp
            .master_equation_check(&k, &i, MasterEquationMode::Quantum)
            .unwrap();
        assert!(!report.passed);
        assert_eq!(report.residual, sp.coordinate(0));

        // Degree constraint is enforced.
        let bad = sp.coordinate(0); // degree 1
        assert!(sp
            .master_equation_check(&k, &bad, MasterEquationMode::Quantum)
            .is_err());
    }

    /// If `(Q + h D_{K0})` kills `e^{I/h}` then it kills the flowed state
    /// with the shifted kernel.  Here `I = x xi'` squares to zero so the
    /// exponential is the honest polynomial `1 + I/h`.
    #[test]
    fn flowed_qme_instance() {
        let sp = q_block_space(-1);
        let k0 = sp.poisson_kernel().unwrap();
        // Dual degrees are (1, -2, 0, -1); I = x0 x3 has degree 0, odd^2 = 0.
        let i = sp.mul(&sp.coordinate(0), &sp.coordinate(3));
        assert!(!i.is_zero());
        let state = PolyFunctional::one(4).add(&i.scale(&HbarSeries::monomial(-1, Rational::one())));
        let qme = |kern: &Kernel2, s: &PolyFunctional| {
            sp.q_differential(s)
                .add(&sp.bv_laplacian(kern, s).unwrap().scale(&HbarSeries::hbar()))
        };
        assert!(qme(&k0, &state).is_zero());

        // P = e (x) F - F (x) e (both odd, degree 0 kernel).
        let p = Kernel2::new(
            sp.degrees(),
            0,
            vec![((0, 3), Rational::one()), ((3, 0), -Rational::one())],
        )
        .unwrap();
        let qp = sp.q_on_kernel(&p).unwrap();
        assert!(!qp.is_zero());
        let flowed = sp.hrg_flow(&p, &state).unwrap();
        assert_ne!(flowed, state);
        assert!(qme(&k0.add(&qp).unwrap(), &flowed).is_zero());
    }

    #[test]
    fn kernel_symmetry_enforced() {
        let sp = pair_space(0);
        // e (x) f alone is not Koszul-symmetric (needs the f (x) e partner).
        assert!(Kernel2::new(sp.degrees(), 1, vec![((0, 1), Rational::one())]).is_err());
        let ok = Kernel2::new(
            sp.degrees(),
            1,
            vec![((0, 1), Rational::one()), ((1, 0), Rational::one())],
        );
        assert!(ok.is_ok());
        // Wrong homogeneity degree.
        assert!(Kernel2::new(sp.degrees(), 0, vec![((0, 1), Rational::one()), ((1, 0), Rational::one())]).is_err());
    }

    #[test]
    fn direct_sum_and_display() {
        let sum = direct_sum(&[pair_space(0), q_block_space(1)]).unwrap();
        assert_eq!(sum.dim(), 6);
        assert_eq!(sum.basis_names()[0], "e1");
        assert_eq!(sum.basis_names()[2], "e2");
        let k = sum.poisson_kernel().unwrap();
        assert_eq!(k.degree(), 1);
        let f = sum
            .mul(&sum.coordinate(0), &sum.coordinate(1))
            .add(&PolyFunctional::constant(6, HbarSeries::monomial(1, Rational::new(1, 2).unwrap())));
        assert_eq!(sum.format_functional(&f), "1/2*h + e1*f1");
    }
}
