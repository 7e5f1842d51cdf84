//! Vertex-algebra layer: normally ordered polynomials in the free-field
//! generators, their operator product expansions, and the mode-level
//! consequences (commutators of contour modes, reduction modulo total
//! derivatives, and the chiral quantum master equation check).
//!
//! Fields live in a polynomial vertex algebra built from a finite set of
//! generators with a constant two-point pairing.  A normally ordered word
//! is a list of legs `D^k a` (the k-th derivative of a generator); words
//! are canonicalized by sorting legs and tracking the Koszul sign from
//! transposing odd legs.  The OPE engine contracts legs pairwise with the
//! free two-point kernel
//!
//! ```text
//! <D^k a(z) D^l b(w)> = hbar <a,b> (-1)^k (k+l)! / (z-w)^{k+l+1}
//! ```
//!
//! and Taylor-expands the surviving z-legs at w, producing the singular
//! part (and optionally the regular part) of `A(z) B(w)`.
//!
//! Modes are contour symbols `oint dw w^k (A(w))`.  Their commutators
//! close on mode symbols via the usual binomial formula, with constants
//! routed through the residue rule `1_(k) = delta_{k,-1}`.  Zero tests on
//! mode sums reduce modulo the relation `oint w^k T(Q) = -k oint w^{k-1} Q`
//! using an exact least-squares split against the image of the translation
//! operator.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CoreError, CoreResult};
use crate::scalar::{format_terms, hbar_symbol, join_symbols, HbarSeries, Rational};

/// Parity of a generator (cohomological degree mod 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn is_odd(self) -> bool {
        matches!(self, Parity::Odd)
    }

    fn flip(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// A finite set of free-field generators with parities and a constant
/// two-point pairing `<a_i, a_j>`.
///
/// The pairing must be graded antisymmetric:
/// `<a, b> = -(-1)^{|a||b|} <b, a>`, i.e. antisymmetric between even
/// generators and symmetric between odd ones (mixed-parity pairings must
/// vanish, since a nonzero constant pairing between fields of different
/// parity would itself be odd).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSet {
    names: Vec<String>,
    parities: Vec<Parity>,
    pairing: Vec<Vec<Rational>>,
}

impl GeneratorSet {
    pub fn new(
        names: Vec<String>,
        parities: Vec<Parity>,
        pairing: Vec<Vec<Rational>>,
    ) -> CoreResult<Self> {
        let n = names.len();
        if parities.len() != n || pairing.len() != n {
            return Err(CoreError::dim("generator set fields have mismatched lengths"));
        }
        for row in &pairing {
            if row.len() != n {
                return Err(CoreError::dim("pairing matrix is not square"));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let flip = if parities[i].is_odd() && parities[j].is_odd() {
                    Rational::one()
                } else {
                    -&Rational::one()
                };
                let expect = &flip * &pairing[j][i];
                if pairing[i][j] != expect {
                    return Err(CoreError::invalid(format!(
                        "pairing is not graded antisymmetric at ({}, {})",
                        names[i], names[j]
                    )));
                }
                if parities[i] != parities[j] && !pairing[i][j].is_zero() {
                    return Err(CoreError::invalid(format!(
                        "pairing couples generators of different parity ({}, {})",
                        names[i], names[j]
                    )));
                }
            }
        }
        for (idx, name) in names.iter().enumerate() {
            if name.is_empty() || names[..idx].contains(name) {
                return Err(CoreError::invalid(
                    "generator names must be nonempty and distinct",
                ));
            }
        }
        Ok(GeneratorSet { names, parities, pairing })
    }

    /// The even pair (beta, gamma) with `<beta, gamma> = 1`.
    pub fn beta_gamma() -> Self {
        let one = Rational::one();
        let zero = Rational::zero();
        GeneratorSet::new(
            vec!["beta".into(), "gamma".into()],
            vec![Parity::Even, Parity::Even],
            vec![vec![zero.clone(), one.clone()], vec![-&one, zero]],
        )
        .expect("preset is valid")
    }

    /// The odd pair (b, c) with `<b, c> = <c, b> = 1`.
    pub fn bc() -> Self {
        let one = Rational::one();
        let zero = Rational::zero();
        GeneratorSet::new(
            vec!["b".into(), "c".into()],
            vec![Parity::Odd, Parity::Odd],
            vec![vec![zero.clone(), one.clone()], vec![one, zero]],
        )
        .expect("preset is valid")
    }

    /// The combined system (beta, gamma, b, c) with the two pairings above
    /// and no cross terms.
    pub fn beta_gamma_bc() -> Self {
        let one = Rational::one();
        let z = Rational::zero;
        GeneratorSet::new(
            vec!["beta".into(), "gamma".into(), "b".into(), "c".into()],
            vec![Parity::Even, Parity::Even, Parity::Odd, Parity::Odd],
            vec![
                vec![z(), one.clone(), z(), z()],
                vec![-&one, z(), z(), z()],
                vec![z(), z(), z(), one.clone()],
                vec![z(), z(), one.clone(), z()],
            ],
        )
        .expect("preset is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn parity(&self, idx: usize) -> Parity {
        self.parities[idx]
    }

    pub fn pairing(&self, i: usize, j: usize) -> &Rational {
        &self.pairing[i][j]
    }

    /// Index of a generator by name.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One leg of a normally ordered word: the `der`-th derivative of
/// generator number `gen`.
pub type Leg = (usize, u32);

/// Sort legs and compute the Koszul sign of the sortation.  Returns `None`
/// when the word contains a repeated odd leg (the word is zero).
fn canonicalize_legs(gens: &GeneratorSet, legs: &mut Vec<Leg>) -> Option<bool> {
    // Insertion sort, counting transpositions of adjacent odd pairs.
    let mut negative = false;
    for i in 1..legs.len() {
        let mut j = i;
        while j > 0 && legs[j - 1] > legs[j] {
            if gens.parity(legs[j - 1].0).is_odd() && gens.parity(legs[j].0).is_odd() {
                negative = !negative;
            }
            legs.swap(j - 1, j);
            j -= 1;
        }
    }
    for w in legs.windows(2) {
        if w[0] == w[1] && gens.parity(w[0].0).is_odd() {
            return None;
        }
    }
    Some(negative)
}

fn legs_parity(gens: &GeneratorSet, legs: &[Leg]) -> Parity {
    let mut p = Parity::Even;
    for &(g, _) in legs {
        if gens.parity(g).is_odd() {
            p = p.flip();
        }
    }
    p
}

fn leg_name(gens: &GeneratorSet, leg: Leg) -> String {
    if leg.1 == 0 {
        gens.name(leg.0).to_string()
    } else {
        format!("D^{} {}", leg.1, gens.name(leg.0))
    }
}

fn word_name(gens: &GeneratorSet, legs: &[Leg]) -> String {
    if legs.is_empty() {
        return String::new();
    }
    let inner: Vec<String> = legs.iter().map(|&l| leg_name(gens, l)).collect();
    format!(":{}:", inner.join(" "))
}

/// A finite sum of normally ordered words with `HbarSeries` coefficients.
///
/// Words are kept in canonical form: legs sorted by `(generator, derivative
/// order)`, with the Koszul sign of the sortation absorbed into the
/// coefficient, and words with a repeated odd leg dropped.  The empty word
/// is the vacuum `1`, so constants are polynomials too.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexPolynomial {
    gens: GeneratorSet,
    terms: BTreeMap<Vec<Leg>, HbarSeries>,
}

impl VertexPolynomial {
    pub fn zero(gens: &GeneratorSet) -> Self {
        VertexPolynomial { gens: gens.clone(), terms: BTreeMap::new() }
    }

    /// The vacuum word with coefficient `c`.
    pub fn constant(gens: &GeneratorSet, c: HbarSeries) -> Self {
        let mut p = VertexPolynomial::zero(gens);
        p.add_term(Vec::new(), c);
        p
    }

    pub fn one(gens: &GeneratorSet) -> Self {
        VertexPolynomial::constant(gens, HbarSeries::one())
    }

    /// A single generator derivative `D^der a_gen` with coefficient 1.
    pub fn field(gens: &GeneratorSet, gen: usize, der: u32) -> CoreResult<Self> {
        if gen >= gens.len() {
            return Err(CoreError::dim("generator index out of range"));
        }
        let mut p = VertexPolynomial::zero(gens);
        p.add_term(vec![(gen, der)], HbarSeries::one());
        Ok(p)
    }

    /// A normally ordered word with the given coefficient.  The legs are
    /// canonicalized (sorted with Koszul signs; repeated odd legs give 0).
    pub fn word(gens: &GeneratorSet, legs: Vec<Leg>, coeff: HbarSeries) -> CoreResult<Self> {
        for &(g, _) in &legs {
            if g >= gens.len() {
                return Err(CoreError::dim("generator index out of range"));
            }
        }
        let mut p = VertexPolynomial::zero(gens);
        p.add_term(legs, coeff);
        Ok(p)
    }

    pub fn generators(&self) -> &GeneratorSet {
        &self.gens
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Leg>, &HbarSeries)> {
        self.terms.iter()
    }

    /// Coefficient of the vacuum word.
    pub fn constant_term(&self) -> HbarSeries {
        self.terms.get(&Vec::new()).cloned().unwrap_or_else(HbarSeries::zero)
    }

    /// The polynomial with the vacuum word removed.
    pub fn field_part(&self) -> VertexPolynomial {
        let mut p = self.clone();
        p.terms.remove(&Vec::new());
        p
    }

    /// Add `coeff * word(legs)` in place, canonicalizing the word.
    fn add_term(&mut self, mut legs: Vec<Leg>, coeff: HbarSeries) {
        if coeff.is_zero() {
            return;
        }
        let negative = match canonicalize_legs(&self.gens, &mut legs) {
            Some(n) => n,
            None => return,
        };
        let signed = if negative { coeff.neg() } else { coeff };
        let entry = self.terms.entry(legs);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(signed);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = o.get().add(&signed);
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, rhs: &VertexPolynomial) -> CoreResult<VertexPolynomial> {
        if self.gens != rhs.gens {
            return Err(CoreError::dim("generator mismatch"));
        }
        let mut out = self.clone();
        for (legs, c) in &rhs.terms {
            out.add_term(legs.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn neg(&self) -> VertexPolynomial {
        let mut out = VertexPolynomial::zero(&self.gens);
        for (legs, c) in &self.terms {
            out.terms.insert(legs.clone(), c.neg());
        }
        out
    }

    pub fn sub(&self, rhs: &VertexPolynomial) -> CoreResult<VertexPolynomial> {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, c: &HbarSeries) -> VertexPolynomial {
        let mut out = VertexPolynomial::zero(&self.gens);
        for (legs, coeff) in &self.terms {
            out.add_term(legs.clone(), coeff.mul(c));
        }
        out
    }

    /// Normally ordered product: concatenate words (with Koszul
    /// canonicalization), no contractions.
    pub fn normal_product(&self, rhs: &VertexPolynomial) -> CoreResult<VertexPolynomial> {
        if self.gens != rhs.gens {
            return Err(CoreError::dim("generator mismatch"));
        }
        let mut out = VertexPolynomial::zero(&self.gens);
        for (la, ca) in &self.terms {
            for (lb, cb) in &rhs.terms {
                let mut legs = la.clone();
                legs.extend_from_slice(lb);
                out.add_term(legs, ca.mul(cb));
            }
        }
        Ok(out)
    }

    /// Parity of the polynomial: `Some(p)` if every word has parity `p`
    /// (the zero polynomial counts as even), `None` if parities are mixed.
    pub fn parity(&self) -> Option<Parity> {
        let mut seen: Option<Parity> = None;
        for legs in self.terms.keys() {
            let p = legs_parity(&self.gens, legs);
            match seen {
                None => seen = Some(p),
                Some(q) if q != p => return None,
                _ => {}
            }
        }
        Some(seen.unwrap_or(Parity::Even))
    }

    /// The translation operator `T = d/dw`: Leibniz rule, raising one leg's
    /// derivative order at a time.  Constants are killed.
    pub fn translate(&self) -> VertexPolynomial {
        let mut out = VertexPolynomial::zero(&self.gens);
        for (legs, c) in &self.terms {
            for i in 0..legs.len() {
                let mut raised = legs.clone();
                raised[i].1 += 1;
                out.add_term(raised, c.clone());
            }
        }
        out
    }

    /// Apply `T` exactly `j` times.
    pub fn translate_pow(&self, j: u32) -> VertexPolynomial {
        let mut out = self.clone();
        for _ in 0..j {
            out = out.translate();
        }
        out
    }

    /// Largest total derivative order appearing in any word (0 for
    /// constants and the zero polynomial).
    pub fn max_total_derivative(&self) -> u32 {
        self.terms
            .keys()
            .map(|legs| legs.iter().map(|&(_, d)| d).sum::<u32>())
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for VertexPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<(Rational, String)> = Vec::new();
        for (legs, series) in &self.terms {
            let word = word_name(&self.gens, legs);
            for (exp, r) in series.iter() {
                let mut symbols = vec![hbar_symbol(exp)];
                if !word.is_empty() {
                    symbols.push(word.clone());
                }
                parts.push((r.clone(), join_symbols(&symbols)));
            }
        }
        write!(f, "{}", format_terms(&parts))
    }
}

/// The OPE of `A(z) B(w)`, organized around `w`.
///
/// `singular` maps `n >= 0` to the `n`-th product `A_(n) B`, the
/// coefficient of `(z-w)^{-n-1}`.  When the expansion was requested with a
/// regular part, `regular` maps `r >= 0` to the coefficient of `(z-w)^r`
/// up to the recorded order.
#[derive(Debug, Clone)]
pub struct OPEExpansion {
    gens: GeneratorSet,
    singular: BTreeMap<u32, VertexPolynomial>,
    regular: BTreeMap<u32, VertexPolynomial>,
    regular_order: Option<u32>,
}

impl OPEExpansion {
    pub fn generators(&self) -> &GeneratorSet {
        &self.gens
    }

    /// The `n`-th product `A_(n) B` (zero when absent).
    pub fn pole(&self, n: u32) -> VertexPolynomial {
        self.singular.get(&n).cloned().unwrap_or_else(|| VertexPolynomial::zero(&self.gens))
    }

    /// Nonzero singular coefficients, ordered by pole order `n`.
    pub fn singular_terms(&self) -> impl Iterator<Item = (u32, &VertexPolynomial)> {
        self.singular.iter().map(|(&n, p)| (n, p))
    }

    /// Coefficient of `(z-w)^r`; `None` if the expansion has no regular
    /// part or `r` exceeds the computed order.
    pub fn regular_coeff(&self, r: u32) -> Option<VertexPolynomial> {
        let order = self.regular_order?;
        if r > order {
            return None;
        }
        Some(self.regular.get(&r).cloned().unwrap_or_else(|| VertexPolynomial::zero(&self.gens)))
    }

    pub fn regular_order(&self) -> Option<u32> {
        self.regular_order
    }

    /// Largest `n` with `A_(n) B != 0`, or `None` for a regular OPE.
    pub fn max_pole(&self) -> Option<u32> {
        self.singular.keys().next_back().copied()
    }

    pub fn is_regular(&self) -> bool {
        self.singular.is_empty()
    }
}

impl fmt::Display for OPEExpansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut chunks: Vec<String> = Vec::new();
        for (&n, poly) in self.singular.iter().rev() {
            chunks.push(format!("({}) / (z-w)^{}", poly, n + 1));
        }
        if let Some(order) = self.regular_order {
            for r in 0..=order {
                if let Some(poly) = self.regular.get(&r) {
                    if r == 0 {
                        chunks.push(format!("({})", poly));
                    } else {
                        chunks.push(format!("({}) * (z-w)^{}", poly, r));
                    }
                }
            }
        }
        if chunks.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", chunks.join(" + "))
        }
    }
}

/// Enumerate partial matchings between the legs of `a_legs` (the z-word)
/// and `b_legs` (the w-word), restricted to pairs with nonzero pairing.
/// Each matching is a list of `(a_position, b_position)` pairs with
/// strictly increasing `a_position`.
fn enumerate_matchings(
    gens: &GeneratorSet,
    a_legs: &[Leg],
    b_legs: &[Leg],
) -> Vec<Vec<(usize, usize)>> {
    fn rec(
        gens: &GeneratorSet,
        a_legs: &[Leg],
        b_legs: &[Leg],
        pos: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if pos == a_legs.len() {
            out.push(current.clone());
            return;
        }
        // Leg `pos` stays uncontracted.
        rec(gens, a_legs, b_legs, pos + 1, used, current, out);
        for t in 0..b_legs.len() {
            if used[t] || gens.pairing(a_legs[pos].0, b_legs[t].0).is_zero() {
                continue;
            }
            used[t] = true;
            current.push((pos, t));
            rec(gens, a_legs, b_legs, pos + 1, used, current, out);
            current.pop();
            used[t] = false;
        }
    }
    let mut out = Vec::new();
    let mut used = vec![false; b_legs.len()];
    rec(gens, a_legs, b_legs, 0, &mut used, &mut Vec::new(), &mut out);
    out
}

/// Koszul sign of extracting the contracted pairs from the combined word
/// `[a_legs..., b_legs...]`.  Pairs are removed one at a time; removing a
/// pair whose w-side leg is odd costs one sign flip per surviving odd leg
/// strictly between the two ends of the pair.  (The two legs of a nonzero
/// contraction share a parity, and moving an even leg is free, so only the
/// odd-odd case contributes.)
fn contraction_sign(
    gens: &GeneratorSet,
    a_legs: &[Leg],
    b_legs: &[Leg],
    pairs: &[(usize, usize)],
) -> bool {
    let total = a_legs.len() + b_legs.len();
    let mut alive = vec![true; total];
    let parity_at = |idx: usize| -> Parity {
        if idx < a_legs.len() {
            gens.parity(a_legs[idx].0)
        } else {
            gens.parity(b_legs[idx - a_legs.len()].0)
        }
    };
    let mut negative = false;
    for &(s, t_rel) in pairs {
        let t = a_legs.len() + t_rel;
        if parity_at(t).is_odd() {
            for (idx, &live) in alive.iter().enumerate().take(t).skip(s + 1) {
                if live && parity_at(idx).is_odd() {
                    negative = !negative;
                }
            }
        }
        alive[s] = false;
        alive[t] = false;
    }
    negative
}

/// Core OPE routine.  Computes all singular coefficients exactly; when
/// `regular_order` is `Some(r)`, also computes the coefficients of
/// `(z-w)^0 ..= (z-w)^r`.
fn ope_impl(
    a: &VertexPolynomial,
    b: &VertexPolynomial,
    regular_order: Option<u32>,
) -> CoreResult<OPEExpansion> {
    if a.gens != b.gens {
        return Err(CoreError::dim("generator mismatch"));
    }
    let gens = a.gens.clone();
    let mut singular: BTreeMap<u32, VertexPolynomial> = BTreeMap::new();
    let mut regular: BTreeMap<u32, VertexPolynomial> = BTreeMap::new();

    for (a_legs, ca) in &a.terms {
        for (b_legs, cb) in &b.terms {
            let base = ca.mul(cb);
            for matching in enumerate_matchings(&gens, a_legs, b_legs) {
                if matching.is_empty() && regular_order.is_none() {
                    continue;
                }
                // Kernel factor and total pole order of the contractions.
                let mut kernel = Rational::one();
                let mut pole: u32 = 0;
                for &(s, t) in &matching {
                    let (ga, k) = a_legs[s];
                    let (gb, l) = b_legs[t];
                    let mut factor = gens.pairing(ga, gb) * &Rational::factorial((k + l) as u64);
                    if k % 2 == 1 {
                        factor = -&factor;
                    }
                    kernel = &kernel * &factor;
                    pole += k + l + 1;
                }
                if contraction_sign(&gens, a_legs, b_legs, &matching) {
                    kernel = -&kernel;
                }
                let edges = matching.len() as i64;

                // Remaining legs, in original word order.
                let mut rem_a: Vec<Leg> = Vec::new();
                for (idx, &leg) in a_legs.iter().enumerate() {
                    if !matching.iter().any(|&(s, _)| s == idx) {
                        rem_a.push(leg);
                    }
                }
                let rem_b: Vec<Leg> = b_legs
                    .iter()
                    .enumerate()
                    .filter(|(idx, _)| !matching.iter().any(|&(_, t)| t == *idx))
                    .map(|(_, &leg)| leg)
                    .collect();

                // Taylor-expand the surviving z-legs at w: D^k a(z) =
                // sum_m (z-w)^m / m! D^{k+m} a(w).  A term with total
                // Taylor order m_sum lands at (z-w)^{m_sum - pole}.
                let budget = match regular_order {
                    Some(r) => pole + r,
                    None => pole.saturating_sub(1),
                };
                distribute_taylor(&rem_a, budget, &mut |extra, taylor_denominator| {
                    let power = extra.iter().sum::<u32>() as i64 - pole as i64;
                    if regular_order.is_none() && power >= 0 {
                        return;
                    }
                    let mut legs: Vec<Leg> =
                        rem_a.iter().zip(extra).map(|(&(g, k), &m)| (g, k + m)).collect();
                    legs.extend_from_slice(&rem_b);
                    let rat = &kernel * &taylor_denominator.recip().expect("factorial is nonzero");
                    let coeff = base.mul(&HbarSeries::monomial(edges, rat));
                    let slot = if power < 0 {
                        singular
                            .entry((-power - 1) as u32)
                            .or_insert_with(|| VertexPolynomial::zero(&gens))
                    } else {
                        regular
                            .entry(power as u32)
                            .or_insert_with(|| VertexPolynomial::zero(&gens))
                    };
                    slot.add_term(legs, coeff);
                });
            }
        }
    }

    singular.retain(|_, p| !p.is_zero());
    regular.retain(|_, p| !p.is_zero());
    Ok(OPEExpansion { gens, singular, regular, regular_order })
}

/// Enumerate distributions of Taylor orders `m_i <= budget` (total) over
/// the legs, calling `f(orders, product of m_i!)` for each.
fn distribute_taylor(legs: &[Leg], budget: u32, f: &mut impl FnMut(&[u32], Rational)) {
    fn rec(
        len: usize,
        idx: usize,
        remaining: u32,
        acc: &mut Vec<u32>,
        denom: &Rational,
        f: &mut impl FnMut(&[u32], Rational),
    ) {
        if idx == len {
            f(acc, denom.clone());
            return;
        }
        for m in 0..=remaining {
            acc.push(m);
            let d = denom * &Rational::factorial(m as u64);
            rec(len, idx + 1, remaining - m, acc, &d, f);
            acc.pop();
        }
    }
    rec(legs.len(), 0, budget, &mut Vec::new(), &Rational::one(), f);
}

/// Singular part of the OPE `A(z) B(w)`.
pub fn ope_singular(a: &VertexPolynomial, b: &VertexPolynomial) -> CoreResult<OPEExpansion> {
    ope_impl(a, b, None)
}

/// Full OPE with the regular part computed through `(z-w)^regular_order`.
pub fn ope_expansion(
    a: &VertexPolynomial,
    b: &VertexPolynomial,
    regular_order: u32,
) -> CoreResult<OPEExpansion> {
    ope_impl(a, b, Some(regular_order))
}

/// The `n`-th product `A_(n) B`.
pub fn nth_product(
    a: &VertexPolynomial,
    b: &VertexPolynomial,
    n: u32,
) -> CoreResult<VertexPolynomial> {
    Ok(ope_singular(a, b)?.pole(n))
}

/// A contour mode `oint dw w^weight A(w)` (an integrated vertex operator).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSymbol {
    pub weight: i64,
    pub poly: VertexPolynomial,
}

impl ModeSymbol {
    pub fn new(weight: i64, poly: VertexPolynomial) -> Self {
        ModeSymbol { weight, poly }
    }
}

impl fmt::Display for ModeSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "oint[w^{}]({})", self.weight, self.poly)
    }
}

/// A finite sum of contour modes plus a central scalar.
///
/// Constants inside a mode are resolved on insertion by the residue rule
/// `oint w^k 1 = delta_{k,-1}`: a constant at weight -1 moves to the
/// central part, at any other weight it drops.
#[derive(Debug, Clone)]
pub struct ModeSum {
    gens: GeneratorSet,
    central: HbarSeries,
    modes: BTreeMap<i64, VertexPolynomial>,
}

impl ModeSum {
    pub fn zero(gens: &GeneratorSet) -> Self {
        ModeSum { gens: gens.clone(), central: HbarSeries::zero(), modes: BTreeMap::new() }
    }

    pub fn from_symbol(symbol: &ModeSymbol) -> Self {
        let mut out = ModeSum::zero(symbol.poly.generators());
        out.push(symbol.weight, symbol.poly.clone());
        out
    }

    pub fn generators(&self) -> &GeneratorSet {
        &self.gens
    }

    pub fn central(&self) -> &HbarSeries {
        &self.central
    }

    pub fn modes(&self) -> impl Iterator<Item = (i64, &VertexPolynomial)> {
        self.modes.iter().map(|(&k, p)| (k, p))
    }

    /// Add `oint w^weight (poly)`, routing constants per the residue rule.
    pub fn push(&mut self, weight: i64, poly: VertexPolynomial) {
        let constant = poly.constant_term();
        if weight == -1 && !constant.is_zero() {
            self.central = self.central.add(&constant);
        }
        let fields = poly.field_part();
        if fields.is_zero() {
            return;
        }
        let entry =
            self.modes.entry(weight).or_insert_with(|| VertexPolynomial::zero(&self.gens));
        *entry = entry.add(&fields).expect("same generator set");
        if entry.is_zero() {
            self.modes.remove(&weight);
        }
    }

    pub fn add(&self, rhs: &ModeSum) -> CoreResult<ModeSum> {
        if self.gens != rhs.gens {
            return Err(CoreError::dim("generator mismatch"));
        }
        let mut out = self.clone();
        out.central = out.central.add(&rhs.central);
        for (&k, p) in &rhs.modes {
            out.push(k, p.clone());
        }
        Ok(out)
    }

    pub fn neg(&self) -> ModeSum {
        let mut out = ModeSum::zero(&self.gens);
        out.central = self.central.neg();
        for (&k, p) in &self.modes {
            out.modes.insert(k, p.neg());
        }
        out
    }

    pub fn sub(&self, rhs: &ModeSum) -> CoreResult<ModeSum> {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, c: &HbarSeries) -> ModeSum {
        let mut out = ModeSum::zero(&self.gens);
        out.central = self.central.mul(c);
        for (&k, p) in &self.modes {
            let scaled = p.scale(c);
            if !scaled.is_zero() {
                out.modes.insert(k, scaled);
            }
        }
        out
    }

    /// Raw zero test, before any reduction modulo total derivatives.
    pub fn is_raw_zero(&self) -> bool {
        self.central.is_zero() && self.modes.is_empty()
    }

    /// Reduce modulo the contour relation `oint w^k T(Q) = -k oint w^{k-1} Q`.
    ///
    /// Each mode polynomial is split as `constant + T(q) + r` where `r` is
    /// the canonical residual transverse to the image of the translation
    /// operator (computed by an exact least-squares projection within each
    /// generator-content block).  The `T(q)` piece is pushed down to weight
    /// `k-1` with factor `-k` (it drops entirely at `k = 0`) and the split
    /// repeats until every mode is `T`-transverse.
    pub fn normalize(&self) -> ModeSum {
        let mut out = ModeSum::zero(&self.gens);
        out.central = self.central.clone();
        // Work queue of (weight, polynomial); reduction lowers total
        // derivative order, so this terminates.
        let mut queue: Vec<(i64, VertexPolynomial)> =
            self.modes.iter().map(|(&k, p)| (k, p.clone())).collect();
        while let Some((k, poly)) = queue.pop() {
            let (t_arg, residual) = split_translation(&poly);
            // Constants inside `poly` were already routed by push(), and
            // split_translation only sees the field part.
            if !residual.is_zero() {
                out.push(k, residual);
            }
            if !t_arg.is_zero() && k != 0 {
                let factor = HbarSeries::from_rational(Rational::from_int(-k));
                queue.push((k - 1, t_arg.scale(&factor)));
            }
        }
        out
    }

    /// Zero test modulo the contour relations.
    pub fn is_zero(&self) -> bool {
        let n = self.normalize();
        n.is_raw_zero()
    }

    /// Commutator of two mode sums, expanding every pair of symbols with
    /// the binomial mode-bracket formula.
    pub fn bracket(&self, rhs: &ModeSum) -> CoreResult<ModeSum> {
        if self.gens != rhs.gens {
            return Err(CoreError::dim("generator mismatch"));
        }
        let mut out = ModeSum::zero(&self.gens);
        for (&ka, pa) in &self.modes {
            for (&kb, pb) in &rhs.modes {
                let term = mode_bracket(&ModeSymbol::new(ka, pa.clone()), &ModeSymbol::new(kb, pb.clone()))?;
                out = out.add(&term)?;
            }
        }
        Ok(out)
    }
}

impl fmt::Display for ModeSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut chunks: Vec<String> = Vec::new();
        if !self.central.is_zero() {
            chunks.push(format!("{}", self.central));
        }
        for (&k, p) in &self.modes {
            chunks.push(format!("oint[w^{}]({})", k, p));
        }
        if chunks.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", chunks.join(" + "))
        }
    }
}

/// Graded commutator of two contour modes:
///
/// ```text
/// [oint z^m A(z), oint w^n B(w)] = sum_{j>=0} C(m, j) oint w^{m+n-j} (A_(j) B)(w)
/// ```
///
/// with generalized binomials `C(m, j)` (so negative contour weights are
/// allowed).  The sum is finite because the OPE has finitely many poles.
pub fn mode_bracket(a: &ModeSymbol, b: &ModeSymbol) -> CoreResult<ModeSum> {
    let expansion = ope_singular(&a.poly, &b.poly)?;
    let mut out = ModeSum::zero(a.poly.generators());
    for (j, poly) in expansion.singular_terms() {
        let c = Rational::binomial(a.weight, j as u64);
        if c.is_zero() {
            continue;
        }
        out.push(a.weight + b.weight - j as i64, poly.scale(&HbarSeries::from_rational(c)));
    }
    Ok(out)
}

/// Split a polynomial (its field part) as `T(q) + r`, with `r` the
/// canonical `T`-transverse residual.  Returns `(q, r)`.
///
/// `T` preserves the generator content of a word and raises the total
/// derivative order by one, so the splitting decomposes into independent
/// blocks indexed by (generator multiset, total derivative order).  Within
/// the block `(G, D)` the candidate sources are the canonical monomials of
/// type `(G, D-1)`; `T` is injective on non-constant monomials, so the
/// normal equations of the least-squares problem are nonsingular and the
/// residual is canonical (independent of basis ordering).
fn split_translation(poly: &VertexPolynomial) -> (VertexPolynomial, VertexPolynomial) {
    let gens = poly.generators();
    // Group field terms by (generator multiset, total derivative order).
    let mut blocks: BTreeMap<(Vec<usize>, u32), Vec<(Vec<Leg>, HbarSeries)>> = BTreeMap::new();
    for (legs, coeff) in poly.terms() {
        if legs.is_empty() {
            continue;
        }
        let key_gens: Vec<usize> = legs.iter().map(|&(g, _)| g).collect();
        let total: u32 = legs.iter().map(|&(_, d)| d).sum();
        blocks.entry((key_gens, total)).or_default().push((legs.clone(), coeff.clone()));
    }

    let mut q = VertexPolynomial::zero(gens);
    let mut r = VertexPolynomial::zero(gens);
    for ((content, total), terms) in blocks {
        if total == 0 {
            // No sources at derivative order -1: everything is residual.
            for (legs, coeff) in terms {
                r.add_term(legs, coeff);
            }
            continue;
        }
        let sources = canonical_monomials(gens, &content, total - 1);
        if sources.is_empty() {
            for (legs, coeff) in terms {
                r.add_term(legs, coeff);
            }
            continue;
        }
        // Target basis and the matrix of T on the block.
        let targets = canonical_monomials(gens, &content, total);
        let index: BTreeMap<&Vec<Leg>, usize> =
            targets.iter().enumerate().map(|(i, legs)| (legs, i)).collect();
        let mut matrix = vec![vec![Rational::zero(); sources.len()]; targets.len()];
        for (col, src) in sources.iter().enumerate() {
            let image = VertexPolynomial::word(gens, src.clone(), HbarSeries::one())
                .expect("canonical legs are valid")
                .translate();
            for (legs, coeff) in image.terms() {
                let row = *index.get(legs).expect("translate stays in block");
                // Canonical monomials have rational images under T.
                let mut val = Rational::zero();
                for (exp, c) in coeff.iter() {
                    debug_assert_eq!(exp, 0, "T has scalar matrix entries");
                    val = &val + c;
                }
                matrix[row][col] = val;
            }
        }

        // Solve the least-squares problem once per hbar order: collect the
        // block vector per (hbar exponent) and project.
        let mut by_order: BTreeMap<i64, Vec<Rational>> = BTreeMap::new();
        let mut truncations: BTreeMap<i64, Option<i64>> = BTreeMap::new();
        for (legs, coeff) in &terms {
            let row = *index.get(legs).expect("term is a canonical monomial");
            for (exp, c) in coeff.iter() {
                by_order.entry(exp).or_insert_with(|| vec![Rational::zero(); targets.len()])[row] =
                    c.clone();
                let t = truncations.entry(exp).or_insert_with(|| coeff.truncation());
                *t = match (*t, coeff.truncation()) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (None, b) => b,
                    (a, None) => a,
                };
            }
        }
        for (exp, vector) in by_order {
            let solution = least_squares(&matrix, &vector);
            // Assemble T(q)-part and residual for this hbar order.
            let trunc = truncations.get(&exp).copied().flatten();
            let lift = |val: &Rational| -> HbarSeries {
                let mut s = HbarSeries::monomial(exp, val.clone());
                if let Some(t) = trunc {
                    s = s.truncate(t);
                }
                s
            };
            let mut image = vec![Rational::zero(); targets.len()];
            for (col, x) in solution.iter().enumerate() {
                if x.is_zero() {
                    continue;
                }
                q.add_term(sources[col].clone(), lift(x));
                for (row, m_row) in matrix.iter().enumerate() {
                    let contrib = &m_row[col] * x;
                    image[row] = &image[row] + &contrib;
                }
            }
            for (row, legs) in targets.iter().enumerate() {
                let diff = &vector[row] - &image[row];
                if !diff.is_zero() {
                    r.add_term(legs.clone(), lift(&diff));
                }
            }
        }
    }
    (q, r)
}

/// All canonical words with the given (sorted) generator content and total
/// derivative order: derivative orders weakly increasing along a run of a
/// repeated even generator, strictly increasing along a run of a repeated
/// odd generator.
fn canonical_monomials(gens: &GeneratorSet, content: &[usize], total: u32) -> Vec<Vec<Leg>> {
    // Split the content into runs of equal generators.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &g in content {
        match runs.last_mut() {
            Some((h, count)) if *h == g => *count += 1,
            _ => runs.push((g, 1)),
        }
    }
    fn run_choices(strict: bool, min: u32, count: usize, total: u32) -> Vec<Vec<u32>> {
        if count == 0 {
            return if total == 0 { vec![Vec::new()] } else { Vec::new() };
        }
        let mut out = Vec::new();
        for first in min..=total {
            let next_min = if strict { first + 1 } else { first };
            // Remaining legs need at least next_min each.
            let rest = total - first;
            if (count as u32 - 1) * next_min > rest {
                if strict {
                    break;
                } else if first > 0 {
                    break;
                } else {
                    continue;
                }
            }
            for mut tail in run_choices(strict, next_min, count - 1, rest) {
                let mut choice = vec![first];
                choice.append(&mut tail);
                out.push(choice);
            }
        }
        out
    }
    fn rec(
        gens: &GeneratorSet,
        runs: &[(usize, usize)],
        idx: usize,
        remaining: u32,
        acc: &mut Vec<Leg>,
        out: &mut Vec<Vec<Leg>>,
    ) {
        if idx == runs.len() {
            if remaining == 0 {
                out.push(acc.clone());
            }
            return;
        }
        let (g, count) = runs[idx];
        let strict = gens.parity(g).is_odd();
        for s in 0..=remaining {
            for choice in run_choices(strict, 0, count, s) {
                let before = acc.len();
                for d in choice {
                    acc.push((g, d));
                }
                rec(gens, runs, idx + 1, remaining - s, acc, out);
                acc.truncate(before);
            }
        }
    }
    let mut out = Vec::new();
    rec(gens, &runs, 0, total, &mut Vec::new(), &mut out);
    out
}

/// Exact least squares: minimize `|M x - v|` over rationals via the normal
/// equations `M^T M x = M^T v`.  `M` must have full column rank.
fn least_squares(matrix: &[Vec<Rational>], vector: &[Rational]) -> Vec<Rational> {
    let rows = matrix.len();
    let cols = if rows == 0 { 0 } else { matrix[0].len() };
    let mut gram = vec![vec![Rational::zero(); cols]; cols];
    let mut proj = vec![Rational::zero(); cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut acc = Rational::zero();
            for row in matrix {
                acc = &acc + &(&row[i] * &row[j]);
            }
            gram[i][j] = acc;
        }
        let mut acc = Rational::zero();
        for (row, v) in matrix.iter().zip(vector) {
            acc = &acc + &(&row[i] * v);
        }
        proj[i] = acc;
    }
    solve_linear(&mut gram, &mut proj)
}

/// Gaussian elimination with exact rational arithmetic.  The matrix must
/// be nonsingular (guaranteed for the normal equations of an injective map).
fn solve_linear(a: &mut [Vec<Rational>], b: &mut [Rational]) -> Vec<Rational> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .expect("normal equations are nonsingular");
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let inv = a[col][col].recip().expect("pivot is nonzero");
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] * &inv;
            for c in col..n {
                let delta = &factor * &a[col][c];
                a[r][c] = &a[r][c] - &delta;
            }
            let delta = &factor * &b[col];
            b[r] = &b[r] - &delta;
        }
    }
    (0..n)
        .map(|i| &b[i] * &a[i][i].recip().expect("pivot is nonzero"))
        .collect()
}

/// Result of the chiral quantum master equation check for an interaction
/// mode `oint w^0 (gamma)`.
#[derive(Debug, Clone)]
pub struct QmeReport {
    /// The bracket `[oint gamma, oint gamma]`, reduced to normal form.
    pub bracket: ModeSum,
    /// Whether the bracket vanishes modulo contour relations.
    pub is_zero: bool,
    /// True when `gamma` is even, in which case `[oint gamma, oint gamma]`
    /// vanishes identically by skew-symmetry and the check carries no
    /// information.
    pub vacuous: bool,
}

impl fmt::Display for QmeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.is_zero { "satisfied" } else { "violated" };
        let qualifier = if self.vacuous { " (vacuously: even interaction)" } else { "" };
        write!(f, "QME {}{}: [oint gamma, oint gamma] = {}", verdict, qualifier, self.bracket)
    }
}

/// Check the chiral quantum master equation `[oint gamma, oint gamma] = 0`
/// modulo total derivatives, for a homogeneous interaction `gamma`.
///
/// Mixed-parity interactions are rejected: the graded bracket of the zero
/// mode with itself is only meaningful term-by-term for homogeneous
/// inputs.
pub fn qme_check(gamma: &VertexPolynomial) -> CoreResult<QmeReport> {
    let parity = gamma
        .parity()
        .ok_or_else(|| CoreError::domain("qme_check requires a parity-homogeneous interaction"))?;
    let mode = ModeSymbol::new(0, gamma.clone());
    let bracket = mode_bracket(&mode, &mode)?.normalize();
    let is_zero = bracket.is_raw_zero();
    Ok(QmeReport { bracket, is_zero, vacuous: !parity.is_odd() })
}
