//! Reduced Hochschild and cyclic chains over the Weyl algebra, with the
//! boundary `b`, Connes' operator `B`, and the periodic differential
//! `b + u B`.
//!
//! A chain is a sum of tensors `a_0 (x) a_1 (x) .. (x) a_p` where the slots
//! `a_1 .. a_p` live in the quotient of the algebra by its scalar part
//! (scalars here are full `h`-series constant in `y`).  Slots are normalized
//! at insertion time by dropping the `y`-constant part, so a tensor with a
//! scalar in an inner slot is identically zero and `b`, `B` are automatically
//! well defined on the quotient.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::CoreResult;
use crate::scalar::HbarSeries;
use crate::weyl::{monomial_symbol, Monomial, PoissonTensor, WeylElement};

/// Sum of elementary tensors.  Inner slots are expanded to single
/// `y`-monomials (coefficients, including `h`-powers, are absorbed into the
/// `a_0` value), so the map is keyed by pure monomial tails and is linear in
/// every slot — which is what the `b`/`B` cancellations require.  Tails of
/// mixed length may coexist in one sum.
#[derive(Clone, PartialEq, Eq)]
pub struct HochschildChain {
    n: usize,
    terms: BTreeMap<Vec<Monomial>, WeylElement>,
}

impl HochschildChain {
    pub fn zero(n: usize) -> Self {
        HochschildChain { n, terms: BTreeMap::new() }
    }

    /// Degree-zero chain consisting of a bare algebra element.
    pub fn from_element(a0: &WeylElement) -> Self {
        let mut c = HochschildChain::zero(a0.n());
        c.add_tensor(&[], a0);
        c
    }

    /// The elementary tensor `a0 (x) tail[0] (x) .. (x) tail[p-1]`.  Inner
    /// slots are reduced mod scalars; a tensor with a scalar slot is zero.
    pub fn elementary(a0: &WeylElement, tail: &[WeylElement]) -> Self {
        let mut c = HochschildChain::zero(a0.n());
        c.add_tensor(tail, a0);
        c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms as `(monomial tail, a0)` pairs in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Monomial>, &WeylElement)> {
        self.terms.iter()
    }

    /// Largest tensor length `p` present (0 for the zero chain).
    pub fn top_degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// Add `value (x) key` for a pure monomial tail; constant slots die in
    /// the quotient by scalars.
    pub fn add_mono_tensor(&mut self, key: Vec<Monomial>, value: &WeylElement) {
        assert_eq!(value.n(), self.n, "chain rank mismatch");
        if value.is_zero() || key.iter().any(Monomial::is_constant) {
            return;
        }
        match self.terms.entry(key) {
            Entry::Occupied(mut e) => {
                let sum = e.get().add(value);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
            Entry::Vacant(v) => {
                v.insert(value.clone());
            }
        }
    }

    /// Add `a0 (x) tail`, expanding each slot into monomials.
    pub fn add_tensor(&mut self, tail: &[WeylElement], a0: &WeylElement) {
        assert_eq!(a0.n(), self.n, "chain rank mismatch");
        if a0.is_zero() {
            return;
        }
        let mut acc: Vec<(Vec<Monomial>, HbarSeries)> = vec![(Vec::new(), HbarSeries::one())];
        for slot in tail {
            assert_eq!(slot.n(), self.n, "chain rank mismatch");
            let mut next = Vec::new();
            for (key, c) in &acc {
                for (m, mc) in slot.terms() {
                    if m.is_constant() {
                        continue;
                    }
                    let mut key2 = key.clone();
                    key2.push(m.clone());
                    next.push((key2, c.mul(mc)));
                }
            }
            acc = next;
            if acc.is_empty() {
                return;
            }
        }
        for (key, c) in acc {
            self.add_mono_tensor(key, &a0.scale(&c));
        }
    }

    pub fn add(&self, rhs: &HochschildChain) -> HochschildChain {
        assert_eq!(self.n, rhs.n, "chain rank mismatch");
        let mut out = self.clone();
        for (tail, a0) in rhs.terms() {
            out.add_mono_tensor(tail.clone(), a0);
        }
        out
    }

    pub fn neg(&self) -> HochschildChain {
        HochschildChain {
            n: self.n,
            terms: self.terms.iter().map(|(t, a)| (t.clone(), a.neg())).collect(),
        }
    }

    pub fn sub(&self, rhs: &HochschildChain) -> HochschildChain {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, c: &HbarSeries) -> HochschildChain {
        let mut out = HochschildChain::zero(self.n);
        for (tail, a0) in self.terms() {
            out.add_mono_tensor(tail.clone(), &a0.scale(c));
        }
        out
    }

    fn slot_element(&self, m: &Monomial) -> WeylElement {
        WeylElement::monomial(self.n, m.exps().to_vec(), HbarSeries::one())
    }

    /// Hochschild boundary
    /// `b = sum_{i=0}^{p-1} (-1)^i (.. a_i * a_{i+1} ..) + (-1)^p (a_p * a_0) (x) a_1 .. a_{p-1}`.
    pub fn boundary(&self, pi: &PoissonTensor) -> CoreResult<HochschildChain> {
        let mut out = HochschildChain::zero(self.n);
        for (tail, a0) in self.terms() {
            let p = tail.len();
            if p == 0 {
                continue;
            }
            // i = 0 merges into the head slot.
            let head = a0.star(&self.slot_element(&tail[0]), pi)?;
            out.add_mono_tensor(tail[1..].to_vec(), &head);
            // 1 <= i <= p-1 merges two inner slots; the product is re-expanded.
            for i in 1..p {
                let merged = self.slot_element(&tail[i - 1]).star(&self.slot_element(&tail[i]), pi)?;
                let signed = if i % 2 == 0 { a0.clone() } else { a0.neg() };
                for (m, mc) in merged.terms() {
                    if m.is_constant() {
                        continue;
                    }
                    let mut key = Vec::with_capacity(p - 1);
                    key.extend_from_slice(&tail[..i - 1]);
                    key.push(m.clone());
                    key.extend_from_slice(&tail[i + 1..]);
                    out.add_mono_tensor(key, &signed.scale(mc));
                }
            }
            // Wrap-around term.
            let wrapped = self.slot_element(&tail[p - 1]).star(a0, pi)?;
            let signed = if p % 2 == 0 { wrapped } else { wrapped.neg() };
            out.add_mono_tensor(tail[..p - 1].to_vec(), &signed);
        }
        Ok(out)
    }

    /// Connes\' operator
    /// `B = sum_{i=0}^{p} (-1)^{p i} 1 (x) a_i (x) .. (x) a_{i-1}` (cyclic
    /// rotations of all `p + 1` entries behind a fresh unit slot; rotations
    /// that place a scalar in a tail slot vanish).
    pub fn connes_operator(&self) -> HochschildChain {
        let mut out = HochschildChain::zero(self.n);
        for (tail, a0) in self.terms() {
            let p = tail.len();
            for (m0, c0) in a0.terms() {
                let mut cycle = Vec::with_capacity(p + 1);
                cycle.push(m0.clone());
                cycle.extend_from_slice(tail);
                for i in 0..=p {
                    let mut rotated = Vec::with_capacity(p + 1);
                    rotated.extend_from_slice(&cycle[i..]);
                    rotated.extend_from_slice(&cycle[..i]);
                    let signed = if (p * i) % 2 == 0 { c0.clone() } else { c0.neg() };
                    out.add_mono_tensor(rotated, &WeylElement::constant(self.n, signed));
                }
            }
        }
        out
    }
}

impl fmt::Display for HochschildChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut parts = Vec::new();
        for (tail, a0) in self.terms() {
            let mut slots = vec![wrap_sum(a0)];
            slots.extend(tail.iter().map(|m| monomial_symbol(self.n, m)));
            parts.push(slots.join(" | "));
        }
        write!(f, "{}", parts.join("  +  "))
    }
}

impl fmt::Debug for HochschildChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

fn wrap_sum(w: &WeylElement) -> String {
    let s = w.to_string();
    if s.contains(' ') {
        format!("({s})")
    } else {
        s
    }
}

/// Laurent polynomial in `u` with Hochschild-chain coefficients: an element
/// of the periodic cyclic complex.
#[derive(Clone, PartialEq, Eq)]
pub struct PeriodicChain {
    n: usize,
    terms: BTreeMap<i64, HochschildChain>,
}

impl PeriodicChain {
    pub fn zero(n: usize) -> Self {
        PeriodicChain { n, terms: BTreeMap::new() }
    }

    pub fn from_chain(chain: &HochschildChain) -> Self {
        let mut pc = PeriodicChain::zero(chain.n());
        pc.add_chain(0, chain);
        pc
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Components as `(u exponent, chain)` pairs, exponents ascending.
    pub fn components(&self) -> impl Iterator<Item = (i64, &HochschildChain)> {
        self.terms.iter().map(|(k, c)| (*k, c))
    }

    pub fn chain_at(&self, k: i64) -> HochschildChain {
        self.terms.get(&k).cloned().unwrap_or_else(|| HochschildChain::zero(self.n))
    }

    pub fn add_chain(&mut self, k: i64, chain: &HochschildChain) {
        assert_eq!(chain.n(), self.n, "chain rank mismatch");
        if chain.is_zero() {
            return;
        }
        match self.terms.entry(k) {
            Entry::Occupied(mut e) => {
                let sum = e.get().add(chain);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
            Entry::Vacant(v) => {
                v.insert(chain.clone());
            }
        }
    }

    pub fn add(&self, rhs: &PeriodicChain) -> PeriodicChain {
        assert_eq!(self.n, rhs.n, "chain rank mismatch");
        let mut out = self.clone();
        for (k, c) in rhs.components() {
            out.add_chain(k, c);
        }
        out
    }

    pub fn neg(&self) -> PeriodicChain {
        PeriodicChain {
            n: self.n,
            terms: self.terms.iter().map(|(k, c)| (*k, c.neg())).collect(),
        }
    }

    pub fn sub(&self, rhs: &PeriodicChain) -> PeriodicChain {
        self.add(&rhs.neg())
    }

    /// The periodic differential `b + u B`.
    pub fn differential(&self, pi: &PoissonTensor) -> CoreResult<PeriodicChain> {
        let mut out = PeriodicChain::zero(self.n);
        for (k, chain) in self.components() {
            out.add_chain(k, &chain.boundary(pi)?);
            out.add_chain(k + 1, &chain.connes_operator());
        }
        Ok(out)
    }
}

impl fmt::Display for PeriodicChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut parts = Vec::new();
        for (k, chain) in self.components() {
            let u = crate::scalar::u_symbol(k);
            if u.is_empty() {
                parts.push(format!("({chain})"));
            } else {
                parts.push(format!("{u}*({chain})"));
            }
        }
        write!(f, "{}", parts.join(" + "))
    }
}

impl fmt::Debug for PeriodicChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(n: usize) -> WeylElement {
        WeylElement::variable(n, 0)
    }

    fn q(n: usize) -> WeylElement {
        WeylElement::variable(n, n)
    }

    #[test]
    fn boundary_examples() {
        let pi = PoissonTensor::standard(1);
        // b(p (x) q) = p*q - q*p = h.
        let c = HochschildChain::elementary(&p(1), &[q(1)]);
        let expected = HochschildChain::from_element(&WeylElement::constant(1, HbarSeries::hbar()));
        assert_eq!(c.boundary(&pi).unwrap(), expected);

        // A scalar inner slot kills the tensor, so b(f (x) 1) = 0.
        let f = p(1).mul(&p(1));
        let c = HochschildChain::elementary(&f, &[WeylElement::one(1)]);
        assert!(c.is_zero());
        assert!(c.boundary(&pi).unwrap().is_zero());

        // b(1 (x) p (x) q) = p (x) q + q (x) p - 1 (x) pq.
        let c = HochschildChain::elementary(&WeylElement::one(1), &[p(1), q(1)]);
        let pq = p(1).mul(&q(1));
        let expected = HochschildChain::elementary(&p(1), &[q(1)])
            .add(&HochschildChain::elementary(&q(1), &[p(1)]))
            .sub(&HochschildChain::elementary(&WeylElement::one(1), &[pq]));
        assert_eq!(c.boundary(&pi).unwrap(), expected);
    }

    #[test]
    fn slot_reduction_makes_chains_well_defined() {
        // Shifting an inner slot by a scalar does not change the chain.
        let f = p(1);
        let shifted = q(1).add(&WeylElement::constant(1, HbarSeries::from_int(3)));
        assert_eq!(
            HochschildChain::elementary(&f, &[shifted]),
            HochschildChain::elementary(&f, &[q(1)])
        );
        // ... including shifts by h-series scalars.
        let hshift = q(1).add(&WeylElement::constant(1, HbarSeries::hbar()));
        assert_eq!(
            HochschildChain::elementary(&f, &[hshift]),
            HochschildChain::elementary(&f, &[q(1)])
        );
        // Scalar factors move freely across the tensor sign.
        let neg_hq = q(1).scale(&HbarSeries::hbar().neg());
        assert_eq!(
            HochschildChain::elementary(&f, &[neg_hq]),
            HochschildChain::elementary(&f.scale(&HbarSeries::hbar().neg()), &[q(1)])
        );
    }

    #[test]
    fn connes_examples() {
        let f = p(1).mul(&p(1));
        // B(f) = 1 (x) f.
        let expected =
            HochschildChain::elementary(&WeylElement::one(1), std::slice::from_ref(&f));
        assert_eq!(HochschildChain::from_element(&f).connes_operator(), expected);

        // B(f (x) g) = 1 (x) f (x) g - 1 (x) g (x) f.
        let c = HochschildChain::elementary(&p(1), &[q(1)]);
        let one = WeylElement::one(1);
        let expected = HochschildChain::elementary(&one, &[p(1), q(1)])
            .sub(&HochschildChain::elementary(&one, &[q(1), p(1)]));
        assert_eq!(c.connes_operator(), expected);

        // B(1 (x) f) = 0: the rotated-in unit dies in the quotient.
        let c = HochschildChain::elementary(&one, &[f]);
        assert!(c.connes_operator().is_zero());
    }

    #[test]
    fn periodic_differential_example() {
        let pi = PoissonTensor::standard(1);
        let f = p(1).mul(&p(1));
        let pc = PeriodicChain::from_chain(&HochschildChain::from_element(&f));
        let image = pc.differential(&pi).unwrap();
        let mut expected = PeriodicChain::zero(1);
        expected.add_chain(1, &HochschildChain::elementary(&WeylElement::one(1), &[f]));
        assert_eq!(image, expected);
    }

    fn random_element(rng: &mut ChaCha8Rng, n: usize) -> WeylElement {
        let mut w = WeylElement::zero(n);
        let terms = rng.random_range(1..=2);
        for _ in 0..terms {
            let mut exps = vec![0u32; 2 * n];
            for e in exps.iter_mut() {
                *e = rng.random_range(0..=1);
            }
            let deg: u32 = exps.iter().sum();
            if deg == 0 {
                exps[rng.random_range(0..2 * n)] = rng.random_range(1..=2);
            }
            let num = rng.random_range(-3i64..=3);
            if num == 0 {
                continue;
            }
            let hexp = rng.random_range(0..=1);
            let coeff = HbarSeries::monomial(hexp, Rational::from_int(num));
            w = w.add(&WeylElement::monomial(n, exps, coeff));
        }
        w
    }

    fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> HochschildChain {
        let p_len = rng.random_range(0..=4);
        let a0 = random_element(rng, n);
        let tail: Vec<WeylElement> = (0..p_len).map(|_| random_element(rng, n)).collect();
        HochschildChain::elementary(&a0, &tail)
    }

    #[test]
    fn complex_identities_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x8c41);
        for n in [1usize, 2] {
            let pi = PoissonTensor::standard(n);
            for _ in 0..30 {
                let c = random_chain(&mut rng, n);
                let b2 = c.boundary(&pi).unwrap().boundary(&pi).unwrap();
                assert!(b2.is_zero(), "b^2 = 0 failed on {c}");
                let bb2 = c.connes_operator().connes_operator();
                assert!(bb2.is_zero(), "B^2 = 0 failed on {c}");
                let anti = c
                    .boundary(&pi)
                    .unwrap()
                    .connes_operator()
                    .add(&c.connes_operator().boundary(&pi).unwrap());
                assert!(anti.is_zero(), "bB + Bb = 0 failed on {c}");

                let pc = PeriodicChain::from_chain(&c);
                let sq = pc.differential(&pi).unwrap().differential(&pi).unwrap();
                assert!(sq.is_zero(), "(b + uB)^2 = 0 failed on {c}");
            }
        }
    }

    #[test]
    fn display_round() {
        let c = HochschildChain::elementary(&p(1), &[q(1)]);
        assert_eq!(c.to_string(), "p1 | q1");
        let pc = PeriodicChain::from_chain(&HochschildChain::from_element(&p(1)))
            .differential(&PoissonTensor::standard(1))
            .unwrap();
        assert_eq!(pc.to_string(), "u*(1 | p1)");
    }
}
