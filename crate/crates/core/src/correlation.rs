//! The 1d correlation map and its trace: exact simplex integrals of sawtooth
//! propagators, the Wick-sum correlation `< f_0 (x) .. (x) f_m >`, the
//! equivariant trace on periodic chains, cyclic wheel integrals, and the
//! A-hat expansion factor.
//!
//! Propagator conventions: `P(s) = s - 1/2` on `(0, 1)` extended
//! 1-periodically, `P(0) = 0`, and self-contractions are excluded.  The
//! two-point kernel is first-argument-minus-second (it comes from
//! `d/d(theta_1)` of the heat kernel), so a matched pair of legs between
//! vertices `i < j` contributes `h * Pi^{ab} d_{a@i} d_{b@j}` weighted by
//! `P(theta_i - theta_j) = -(theta_j - theta_i - 1/2)`.  Simplex integrals
//! are tabulated in the `(theta_j - theta_i - 1/2)` basis, so the Wick sum
//! carries an extra `(-1)^{#edges}`.  The binding of `a` to the earlier
//! vertex is not a free choice: only this orientation satisfies the chain
//! maps `<b(c)> = h Delta <c>` (the smallest discriminating case is an
//! m = 3 chain; every m <= 1 diagram only sees even powers of `P`).  Each
//! vertex `1..m` receives exactly one descent leg `dy^a d_a`; vertex 0 none.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use num_traits::ToPrimitive;

use crate::bvforms::FormalForm;
use crate::error::{CoreError, CoreResult};
use crate::hochschild::{HochschildChain, PeriodicChain};
use crate::scalar::{HbarSeries, Rational, UPolynomial};
use crate::weyl::{Monomial, PoissonTensor, WeylElement};

// ---------------------------------------------------------------------------
// Exact integration over the ordered simplex
// ---------------------------------------------------------------------------

/// Polynomial in `theta_1 .. theta_m` with rational coefficients; only used
/// internally for the iterated simplex integration.
struct ThetaPoly {
    m: usize,
    terms: BTreeMap<Vec<u32>, Rational>,
}

impl ThetaPoly {
    fn constant(m: usize, c: Rational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(vec![0; m], c);
        }
        ThetaPoly { m, terms }
    }

    fn add_term(&mut self, exps: Vec<u32>, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exps) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += &c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    /// `theta_j - theta_i - 1/2 + shift_half` as a linear factor, with
    /// `theta_0 = 0` fixed.  `shift` is the constant term.
    fn edge_factor(m: usize, i: usize, j: usize, shift: Rational) -> Self {
        let mut p = ThetaPoly::constant(m, shift);
        let mut ej = vec![0; m];
        ej[j - 1] = 1;
        p.add_term(ej, Rational::one());
        if i > 0 {
            let mut ei = vec![0; m];
            ei[i - 1] = 1;
            p.add_term(ei, -Rational::one());
        }
        p
    }

    fn mul(&self, rhs: &ThetaPoly) -> ThetaPoly {
        let mut out = ThetaPoly { m: self.m, terms: BTreeMap::new() };
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let exps: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(exps, c1.clone() * c2.clone());
            }
        }
        out
    }

    /// Integrate out the last variable over `(theta_{m-1}, 1)` — over
    /// `(0, 1)` when only one variable is left.
    fn integrate_last(self) -> ThetaPoly {
        let m = self.m;
        assert!(m >= 1, "no variable left to integrate");
        let mut out = ThetaPoly { m: m - 1, terms: BTreeMap::new() };
        for (exps, c) in self.terms {
            let e = exps[m - 1];
            let c2 = c * Rational::from_int((e + 1) as i64).recip().expect("e + 1 is nonzero");
            // Upper bound theta_m = 1.
            out.add_term(exps[..m - 1].to_vec(), c2.clone());
            // Lower bound theta_{m-1} (drops entirely when it is 0).
            if m >= 2 {
                let mut lower = exps[..m - 1].to_vec();
                lower[m - 2] += e + 1;
                out.add_term(lower, -c2);
            }
        }
        out
    }

    fn into_constant(self) -> Rational {
        assert_eq!(self.m, 0, "polynomial still has free variables");
        self.terms.into_values().next().unwrap_or_else(Rational::zero)
    }
}

/// Multiset of propagator edges on vertices `{0..m}` (vertex 0 pinned at
/// `theta_0 = 0`), the exact integration request unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIntegrand {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl EdgeIntegrand {
    /// Edges are unordered pairs `{i, j}` with `0 <= i < j <= m`; repeats
    /// encode multiplicity.
    pub fn new(m: usize, mut edges: Vec<(usize, usize)>) -> CoreResult<Self> {
        for (i, j) in &edges {
            if i >= j || *j > m {
                return Err(CoreError::invalid(format!(
                    "edge ({i}, {j}) is not an ordered pair of distinct vertices in 0..={m}"
                )));
            }
        }
        edges.sort_unstable();
        Ok(EdgeIntegrand { m, edges })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Canonical text key, also used by the on-disk cache:
    /// `"m<k>:<i>-<j>,<i>-<j>,.."` with edges sorted.
    pub fn canonical_key(&self) -> String {
        let body: Vec<String> = self.edges.iter().map(|(i, j)| format!("{i}-{j}")).collect();
        format!("m{}:{}", self.m, body.join(","))
    }

    /// Exact value of
    /// `int_{0 < theta_1 < .. < theta_m < 1} prod_edges (theta_j - theta_i - 1/2)`.
    pub fn integrate(&self) -> Rational {
        let mut poly = ThetaPoly::constant(self.m, Rational::one());
        for (i, j) in &self.edges {
            let factor = ThetaPoly::edge_factor(self.m, *i, *j, -Rational::new(1, 2).unwrap());
            poly = poly.mul(&factor);
        }
        for _ in 0..self.m {
            poly = poly.integrate_last();
        }
        poly.into_constant()
    }
}

/// Packed form of a small edge multiset: each sorted edge as `i << 4 | j`,
/// zero-padded (unambiguous: `i < j` forces every edge byte to be nonzero).
/// Covers `m <= 12` and at most [`PACKED_EDGE_LIMIT`] edges; anything larger
/// goes through the string-keyed map.
type PackedEdges = (u8, [u8; PACKED_EDGE_LIMIT]);

const PACKED_EDGE_LIMIT: usize = 16;

fn pack_edges(m: usize, edges: &[u8]) -> Option<PackedEdges> {
    if m > 12 || edges.len() > PACKED_EDGE_LIMIT {
        return None;
    }
    let mut buf = [0u8; PACKED_EDGE_LIMIT];
    buf[..edges.len()].copy_from_slice(edges);
    Some((m as u8, buf))
}

fn unpack_edges(key: &PackedEdges) -> (usize, Vec<(usize, usize)>) {
    let edges = key
        .1
        .iter()
        .take_while(|b| **b != 0)
        .map(|b| ((b >> 4) as usize, (b & 0xf) as usize))
        .collect();
    (key.0 as usize, edges)
}

/// Shared memo table for simplex integrals, keyed by [`EdgeIntegrand::canonical_key`].
/// Insert-if-absent; duplicated computation is harmless because values are
/// exact.  A packed-key view of the same values serves the hot path without
/// string formatting.
#[derive(Default)]
pub struct SimplexCache {
    map: Mutex<BTreeMap<String, Rational>>,
    fast: Mutex<HashMap<PackedEdges, Rational>>,
}

impl SimplexCache {
    pub fn new() -> Self {
        SimplexCache::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Memoized [`EdgeIntegrand::integrate`].
    pub fn integral(&self, e: &EdgeIntegrand) -> Rational {
        let key = e.canonical_key();
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return v.clone();
        }
        let v = e.integrate();
        self.map
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| v.clone());
        v
    }

    /// Packed-key twin of [`SimplexCache::integral`]; falls through to the
    /// string-keyed map (and fills it) on the first sighting of a multiset.
    fn integral_packed(&self, key: PackedEdges) -> Rational {
        if let Some(v) = self.fast.lock().expect("cache lock").get(&key) {
            return v.clone();
        }
        let (m, edges) = unpack_edges(&key);
        let v = self.integral(&EdgeIntegrand::new(m, edges).expect("packed edges are valid"));
        self.fast
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| v.clone());
        v
    }

    /// Preload an entry (e.g. from the on-disk cache).
    pub fn insert(&self, key: String, value: Rational) {
        self.map.lock().expect("cache lock").entry(key).or_insert(value);
    }

    /// Snapshot of all entries in key order.
    pub fn entries(&self) -> Vec<(String, Rational)> {
        self.map
            .lock()
            .expect("cache lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Machine-word fractions for the hot path
// ---------------------------------------------------------------------------

/// Reduced fraction in `i128`; every operation is checked and a `None`
/// result makes the enclosing Wick enumeration fall back to the
/// arbitrary-precision path, so overflow can never corrupt a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Frac {
    pub(crate) num: i128,
    pub(crate) den: i128, // > 0, coprime to num
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Frac {
    pub(crate) const ZERO: Frac = Frac { num: 0, den: 1 };

    pub(crate) fn from_rational(r: &Rational) -> Option<Frac> {
        let num = r.numer().to_i128()?;
        let den = r.denom().to_i128()?;
        Some(Frac { num, den })
    }

    pub(crate) fn to_rational(self) -> Rational {
        Rational::from_big(self.num.into(), self.den.into()).expect("den > 0")
    }

    pub(crate) fn is_zero(self) -> bool {
        self.num == 0
    }

    /// `self * rhs`, cross-reducing before the multiply to delay overflow.
    pub(crate) fn mul(self, rhs: Frac) -> Option<Frac> {
        let g1 = gcd_u128(self.num.unsigned_abs(), rhs.den as u128).max(1) as i128;
        let g2 = gcd_u128(rhs.num.unsigned_abs(), self.den as u128).max(1) as i128;
        Some(Frac {
            num: (self.num / g1).checked_mul(rhs.num / g2)?,
            den: (self.den / g2).checked_mul(rhs.den / g1)?,
        })
    }

    fn mul_int(self, k: i128) -> Option<Frac> {
        self.mul(Frac { num: k, den: 1 })
    }

    /// `self / k` for `k > 0`.
    fn div_int(self, k: i128) -> Option<Frac> {
        self.mul(Frac { num: 1, den: k })
    }

    pub(crate) fn add(self, rhs: Frac) -> Option<Frac> {
        let g = gcd_u128(self.den as u128, rhs.den as u128).max(1) as i128;
        let lhs_scale = rhs.den / g;
        let rhs_scale = self.den / g;
        let num = self
            .num
            .checked_mul(lhs_scale)?
            .checked_add(rhs.num.checked_mul(rhs_scale)?)?;
        let den = self.den.checked_mul(lhs_scale)?;
        let g2 = gcd_u128(num.unsigned_abs(), den as u128).max(1) as i128;
        Some(Frac { num: num / g2, den: den / g2 })
    }
}

// ---------------------------------------------------------------------------
// The correlation map
// ---------------------------------------------------------------------------

/// One Wick term during enumeration: reduced vertex monomials and the
/// accumulated rational factor.
#[derive(Clone)]
struct WickState {
    slots: Vec<Monomial>,
    coeff: Rational,
}

/// Enumerate every descent assignment for the tail monomials: vertex `i`
/// (1-based) receives one leg `dy^{a_i} d_{a_i}`.  Returns
/// `(dy mask, wedge sign * derivative factors, reduced tail)` triples.
fn descent_choices(dim: usize, tail: &[Monomial]) -> Vec<(u32, Rational, Vec<Monomial>)> {
    let mut acc: Vec<(u32, i32, Rational, Vec<Monomial>)> =
        vec![(0, 0, Rational::one(), Vec::with_capacity(tail.len()))];
    for mono in tail {
        let mut next = Vec::new();
        for (mask, inv, coeff, reduced) in &acc {
            for a in 0..dim {
                let Some((k, red)) = mono.deriv(a) else { continue };
                let bit = 1u32 << a;
                if mask & bit != 0 {
                    // dy^a ^ dy^a = 0.
                    continue;
                }
                // Appending dy^a on the right crosses every present dy^s with s > a.
                let crossings = (mask >> (a + 1)).count_ones() as i32;
                let mut reduced2 = reduced.clone();
                reduced2.push(red);
                next.push((
                    mask | bit,
                    (inv + crossings) % 2,
                    coeff.clone() * Rational::from_int(k as i64),
                    reduced2,
                ));
            }
        }
        acc = next;
    }
    acc.into_iter()
        .map(|(mask, inv, coeff, reduced)| {
            let signed = if inv % 2 == 0 { coeff } else { -coeff };
            (mask, signed, reduced)
        })
        .collect()
}

/// Apply `sum_{ab} Pi^{ab} d_{a@i} d_{b@j}` once to each state.
fn contract_once(states: &[WickState], i: usize, j: usize, pi: &PoissonTensor) -> Vec<WickState> {
    let mut out = Vec::new();
    for st in states {
        for (a, b, v) in pi.nonzeros() {
            let Some((ka, ra)) = st.slots[i].deriv(*a) else { continue };
            let Some((kb, rb)) = st.slots[j].deriv(*b) else { continue };
            let mut slots = st.slots.clone();
            slots[i] = ra;
            slots[j] = rb;
            let coeff = st.coeff.clone()
                * v.clone()
                * Rational::from_int(ka as i64)
                * Rational::from_int(kb as i64);
            out.push(WickState { slots, coeff });
        }
    }
    out
}

/// Enumerate edge-multiplicity assignments pair by pair; at the end of the
/// pair list, emit `(final slots, coefficient, edge multiset)`.
fn wick_recurse(
    state: WickState,
    pairs: &[(usize, usize)],
    idx: usize,
    edges: Vec<(usize, usize)>,
    pi: &PoissonTensor,
    out: &mut Vec<(WickState, Vec<(usize, usize)>)>,
) {
    if idx == pairs.len() {
        out.push((state, edges));
        return;
    }
    let (i, j) = pairs[idx];
    // Multiplicity 0.
    wick_recurse(state.clone(), pairs, idx + 1, edges.clone(), pi, out);
    // Multiplicity e >= 1: e ordered applications of the pair operator,
    // divided by e!.
    let mut states = vec![state];
    let mut e: u64 = 0;
    let mut e_factorial = Rational::one();
    loop {
        e += 1;
        e_factorial = e_factorial * Rational::from_int(e as i64);
        states = contract_once(&states, i, j, pi);
        if states.is_empty() {
            return;
        }
        let inv = e_factorial.recip().expect("e! is nonzero");
        let mut edges2 = edges.clone();
        edges2.extend(std::iter::repeat((i, j)).take(e as usize));
        for st in &states {
            let scaled = WickState {
                slots: st.slots.clone(),
                coeff: st.coeff.clone() * inv.clone(),
            };
            wick_recurse(scaled, pairs, idx + 1, edges2.clone(), pi, out);
        }
    }
}

/// Arbitrary-precision correlation of a single `(tail, a0)` tensor term;
/// handles any rank, degree, and Poisson tensor.
fn correlate_term_general(
    tail: &[Monomial],
    a0: &WeylElement,
    pi: &PoissonTensor,
    cache: &SimplexCache,
    out: &mut FormalForm,
) {
    let n = a0.n();
    let dim = 2 * n;
    let m = tail.len();
    let pairs: Vec<(usize, usize)> = (0..=m)
        .flat_map(|i| ((i + 1)..=m).map(move |j| (i, j)))
        .collect();
    for (mask, descent_coeff, reduced_tail) in descent_choices(dim, tail) {
        for (m0, c0) in a0.terms() {
            let mut slots = Vec::with_capacity(m + 1);
            slots.push(m0.clone());
            slots.extend(reduced_tail.iter().cloned());
            let mut terms = Vec::new();
            wick_recurse(
                WickState { slots, coeff: descent_coeff.clone() },
                &pairs,
                0,
                Vec::new(),
                pi,
                &mut terms,
            );
            for (st, edges) in terms {
                let n_edges = edges.len() as i64;
                let integrand = EdgeIntegrand::new(m, edges).expect("enumerated edges are valid");
                // P(theta_i - theta_j) = -(theta_j - theta_i - 1/2) per edge.
                let mut weight = cache.integral(&integrand);
                if n_edges % 2 == 1 {
                    weight = -weight;
                }
                if weight.is_zero() {
                    continue;
                }
                // Evaluate all slots at the common zero mode.
                let mut exps = vec![0u32; dim];
                for s in &st.slots {
                    for (k, e) in s.exps().iter().enumerate() {
                        exps[k] += e;
                    }
                }
                let coeff = c0.mul(&HbarSeries::monomial(n_edges, st.coeff * weight));
                out.add_component(mask, &WeylElement::monomial(n, exps, coeff));
            }
        }
    }
}

/// Backtracking Wick enumerator over machine-word state.  One instance
/// handles one `(tail, a0 monomial)` pair: slot exponents are decremented and
/// restored in place, edges live on a shared stack, and leaves accumulate
/// into a keyed map so the expensive arbitrary-precision conversion happens
/// once per distinct `(mask, zero mode, edge count)` instead of once per
/// Wick term.  Any `i128` overflow sets `failed` and the caller redoes the
/// whole term on the general path.
struct CompactWick<'a> {
    dim: usize,
    m: usize,
    pi: &'a [(u8, u8, Frac)],
    pairs: Vec<(u8, u8)>,
    slots: Vec<u16>,
    edges: Vec<u8>,
    mask: u32,
    cache: &'a SimplexCache,
    /// `(mask, packed zero-mode exponents, edge count) -> coefficient`.
    acc: HashMap<(u32, u64, u8), Frac>,
    failed: bool,
}

impl<'a> CompactWick<'a> {
    fn new(dim: usize, m: usize, pi: &'a [(u8, u8, Frac)], cache: &'a SimplexCache) -> Self {
        let pairs = (0..=m as u8)
            .flat_map(|i| ((i + 1)..=m as u8).map(move |j| (i, j)))
            .collect();
        CompactWick {
            dim,
            m,
            pi,
            pairs,
            slots: vec![0; (m + 1) * dim],
            edges: Vec::with_capacity(PACKED_EDGE_LIMIT),
            mask: 0,
            cache,
            acc: HashMap::new(),
            failed: false,
        }
    }

    /// Load slot 0 from `a0` and slots `1..` from the reduced tail, then
    /// enumerate with the given descent prefactor.
    fn run(&mut self, mask: u32, descent_coeff: i128, a0: &[u32], reduced_tail: &[Vec<u16>]) {
        self.mask = mask;
        self.edges.clear();
        for (k, e) in a0.iter().enumerate() {
            self.slots[k] = *e as u16;
        }
        for (s, red) in reduced_tail.iter().enumerate() {
            self.slots[(s + 1) * self.dim..(s + 2) * self.dim].copy_from_slice(red);
        }
        self.wick(0, Frac { num: descent_coeff, den: 1 });
    }

    fn wick(&mut self, pair_idx: usize, coeff: Frac) {
        if self.failed {
            return;
        }
        if pair_idx == self.pairs.len() {
            self.leaf(coeff);
            return;
        }
        self.wick(pair_idx + 1, coeff);
        self.contract(pair_idx, 1, coeff);
    }

    /// Apply the `e`-th power of the pair operator (branching over the
    /// nonzero `Pi` entries), dividing by `e` as it goes so the accumulated
    /// factor is `1/e!`.
    fn contract(&mut self, pair_idx: usize, e: i128, coeff: Frac) {
        let (i, j) = self.pairs[pair_idx];
        let (oi, oj) = (i as usize * self.dim, j as usize * self.dim);
        for (a, b, v) in self.pi {
            let (sa, sb) = (oi + *a as usize, oj + *b as usize);
            let ka = self.slots[sa];
            let kb = self.slots[sb];
            if ka == 0 || kb == 0 {
                continue;
            }
            let Some(scaled) = coeff
                .mul(*v)
                .and_then(|c| c.mul_int(ka as i128 * kb as i128))
                .and_then(|c| c.div_int(e))
            else {
                self.failed = true;
                return;
            };
            if self.edges.len() == PACKED_EDGE_LIMIT {
                self.failed = true;
                return;
            }
            self.slots[sa] -= 1;
            self.slots[sb] -= 1;
            self.edges.push(i << 4 | j);
            self.wick(pair_idx + 1, scaled);
            self.contract(pair_idx, e + 1, scaled);
            self.edges.pop();
            self.slots[sa] += 1;
            self.slots[sb] += 1;
            if self.failed {
                return;
            }
        }
    }

    fn leaf(&mut self, coeff: Frac) {
        let key = pack_edges(self.m, &self.edges).expect("edge stack within packed limits");
        let weight = self.cache.integral_packed(key);
        let Some(mut weight) = Frac::from_rational(&weight) else {
            self.failed = true;
            return;
        };
        if weight.is_zero() {
            return;
        }
        // P(theta_i - theta_j) = -(theta_j - theta_i - 1/2) per edge.
        if self.edges.len() % 2 == 1 {
            weight.num = -weight.num;
        }
        let Some(value) = coeff.mul(weight) else {
            self.failed = true;
            return;
        };
        // Zero-mode exponents, eight bits per variable.
        let mut packed = 0u64;
        for k in 0..self.dim {
            let mut total = 0u16;
            for s in 0..=self.m {
                total += self.slots[s * self.dim + k];
            }
            if total > 0xff {
                self.failed = true;
                return;
            }
            packed |= (total as u64) << (8 * k);
        }
        let slot = self
            .acc
            .entry((self.mask, packed, self.edges.len() as u8))
            .or_insert(Frac::ZERO);
        match slot.add(value) {
            Some(sum) => *slot = sum,
            None => self.failed = true,
        }
    }
}

/// Compact image of the Poisson tensor, or `None` when an entry exceeds
/// machine words (forcing the general path).
fn compact_pi(pi: &PoissonTensor) -> Option<Vec<(u8, u8, Frac)>> {
    if pi.dim() > 8 {
        return None;
    }
    pi.nonzeros()
        .iter()
        .map(|(a, b, v)| Some((*a as u8, *b as u8, Frac::from_rational(v)?)))
        .collect()
}

/// Descent assignments in exponent-vector form:
/// `(dy mask, signed integer factor, reduced tail exponents)`.
fn compact_descents(dim: usize, tail: &[Monomial]) -> Vec<(u32, i128, Vec<Vec<u16>>)> {
    descent_choices(dim, tail)
        .into_iter()
        .map(|(mask, coeff, reduced)| {
            let factor = Frac::from_rational(&coeff)
                .expect("descent factors are products of sub-256 exponents");
            debug_assert_eq!(factor.den, 1);
            let exps = reduced
                .iter()
                .map(|mono| mono.exps().iter().map(|e| *e as u16).collect())
                .collect();
            (mask, factor.num, exps)
        })
        .collect()
}

/// `true` when a `(tail, a0)` term fits every packed bound of the compact
/// engine: rank, tail length, degrees, and edge capacity.
fn compact_term_ok(dim: usize, tail: &[Monomial], a0: &WeylElement) -> bool {
    if dim > 8 || tail.len() > 12 {
        return false;
    }
    let tail_deg: u32 = tail.iter().map(Monomial::degree).sum();
    let total = tail_deg + a0.degree();
    // Every per-variable zero-mode exponent is at most the total degree, and
    // the edge stack is bounded by half the total leg count.
    total <= 0xff && (total as usize).div_ceil(2) <= PACKED_EDGE_LIMIT
}

/// The free correlation map `< a_0 (x) a_1 (x) .. (x) a_m >` on a Hochschild
/// chain, producing a differential form in the zero modes.
pub fn correlation_free(
    chain: &HochschildChain,
    pi: &PoissonTensor,
    cache: &SimplexCache,
) -> FormalForm {
    let n = chain.n();
    let dim = 2 * n;
    let fast_pi = compact_pi(pi);
    let mut out = FormalForm::zero(n);
    for (tail, a0) in chain.terms() {
        let fast = match &fast_pi {
            Some(entries) if compact_term_ok(dim, tail, a0) => {
                correlate_term_compact(tail, a0, entries, cache, &mut out)
            }
            _ => false,
        };
        if !fast {
            correlate_term_general(tail, a0, pi, cache, &mut out);
        }
    }
    out
}

/// Compact-path correlation of one tensor term.  Returns `false` (leaving
/// `out` untouched) if any intermediate exceeded machine words.
fn correlate_term_compact(
    tail: &[Monomial],
    a0: &WeylElement,
    pi: &[(u8, u8, Frac)],
    cache: &SimplexCache,
    out: &mut FormalForm,
) -> bool {
    let n = a0.n();
    let dim = 2 * n;
    let descents = compact_descents(dim, tail);
    if descents.is_empty() {
        return true;
    }
    let mut engine = CompactWick::new(dim, tail.len(), pi, cache);
    let mut term_form = FormalForm::zero(n);
    for (m0, c0) in a0.terms() {
        engine.acc.clear();
        for (mask, coeff, reduced) in &descents {
            engine.run(*mask, *coeff, m0.exps(), reduced);
            if engine.failed {
                return false;
            }
        }
        let mut entries: Vec<(&(u32, u64, u8), &Frac)> = engine.acc.iter().collect();
        entries.sort_unstable_by_key(|(k, _)| **k);
        for ((mask, packed, n_edges), value) in entries.into_iter().map(|(k, v)| (*k, *v)) {
            if value.is_zero() {
                continue;
            }
            let exps: Vec<u32> =
                (0..dim).map(|k| ((packed >> (8 * k)) & 0xff) as u32).collect();
            let coeff = c0.mul(&HbarSeries::monomial(n_edges as i64, value.to_rational()));
            term_form.add_component(mask, &WeylElement::monomial(n, exps, coeff));
        }
    }
    for (mask, w) in term_form.components() {
        out.add_component(mask, w);
    }
    true
}

/// `Tr = (equivariant BV integral) o (correlation map)`, extended
/// `u`-linearly to periodic chains.
pub fn trace(pc: &PeriodicChain, pi: &PoissonTensor, cache: &SimplexCache) -> UPolynomial {
    let mut out = UPolynomial::zero();
    for (k, chain) in pc.components() {
        let form = correlation_free(chain, pi, cache);
        let layer = form.equivariant_integral(pi);
        out = out.add(&UPolynomial::monomial(k, HbarSeries::one()).mul(&layer));
    }
    out
}

// ---------------------------------------------------------------------------
// Wheel integrals and the A-hat factor
// ---------------------------------------------------------------------------

/// Directed cyclic integral
/// `int_{0 < theta_1 < .. < theta_k < 1} prod_{i=1}^{k} P(theta_{i+1} - theta_i)`
/// (indices mod `k`).  On the ordered simplex every consecutive factor is
/// `theta_{i+1} - theta_i - 1/2` and the single wrap-around factor is
/// `theta_1 - theta_k + 1/2`.
fn directed_wheel_integral(k: usize) -> Rational {
    let m = k;
    let half = Rational::new(1, 2).unwrap();
    let mut poly = ThetaPoly::constant(m, Rational::one());
    for i in 1..m {
        poly = poly.mul(&ThetaPoly::edge_factor(m, i, i + 1, -half.clone()));
    }
    // Wrap-around: theta_1 - theta_k + 1/2 = -(theta_k - theta_1 - 1/2).
    poly = poly
        .mul(&ThetaPoly::edge_factor(m, 1, m, -half).mul(&ThetaPoly::constant(m, -Rational::one())));
    for _ in 0..m {
        poly = poly.integrate_last();
    }
    poly.into_constant()
}

/// One-loop wheel contribution of size `k`: the cyclic simplex integral of
/// sawtooth propagators, averaged over the two orientations of the cycle.
///
/// Reversing the cycle negates every propagator factor (`P` is odd), so the
/// reversed directed integral is `(-1)^k` times the forward one and the
/// average is the directed value for even `k` and `0` for odd `k`.  The
/// vanishing is a property of the orientation pairing, not of the directed
/// integral itself (which is `1/360` at `k = 3`); it mirrors how the matrix
/// trace attached to an odd wheel vanishes by `Pi`-antisymmetry.
pub fn wheel_integral(k: u32) -> CoreResult<Rational> {
    if k == 0 {
        return Err(CoreError::domain("wheel size must be at least 1"));
    }
    if k == 1 {
        // Self-edge: P(0) = 0 by convention.
        return Ok(Rational::zero());
    }
    if k % 2 == 1 {
        return Ok(Rational::zero());
    }
    Ok(directed_wheel_integral(k as usize))
}

/// Taylor coefficients of `(x/2) / sinh(x/2)` up to `x^order` (inclusive):
/// `result[i]` is the coefficient of `x^i`.  Odd coefficients vanish.
pub fn a_hat_factor(order: u32) -> CoreResult<Vec<Rational>> {
    if order < 2 || order % 2 != 0 {
        return Err(CoreError::domain("A-hat factor order must be an even integer >= 2"));
    }
    let len = order as usize + 1;
    // sinh(x/2) / (x/2) = sum_k x^{2k} / (4^k (2k+1)!).
    let mut s = vec![Rational::zero(); len];
    let mut k = 0usize;
    while 2 * k < len {
        let denom = Rational::from_int(4).pow(k as i64)? * Rational::factorial(2 * k as u64 + 1);
        s[2 * k] = denom.recip()?;
        k += 1;
    }
    // Invert the unit power series.
    let mut t = vec![Rational::zero(); len];
    t[0] = Rational::one();
    for j in 1..len {
        let mut acc = Rational::zero();
        for i in 1..=j {
            if !s[i].is_zero() {
                acc += &(s[i].clone() * t[j - i].clone());
            }
        }
        t[j] = -acc;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::DEFAULT_HBAR_ORDER;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::new(n, d).unwrap()
    }

    #[test]
    fn simplex_examples() {
        let vol0 = EdgeIntegrand::new(0, vec![]).unwrap();
        assert_eq!(vol0.integrate(), Rational::one());
        let vol1 = EdgeIntegrand::new(1, vec![]).unwrap();
        assert_eq!(vol1.integrate(), Rational::one());
        let odd = EdgeIntegrand::new(1, vec![(0, 1)]).unwrap();
        assert_eq!(odd.integrate(), Rational::zero());
        let sq = EdgeIntegrand::new(2, vec![(1, 2), (1, 2)]).unwrap();
        assert_eq!(sq.integrate(), rat(1, 24));
        // By hand: int_{0<t1<t2<1} (t1 - 1/2) = int_0^1 (t - 1/2)(1 - t) dt = -1/12.
        let hand = EdgeIntegrand::new(2, vec![(0, 1)]).unwrap();
        assert_eq!(hand.integrate(), rat(-1, 12));
        // Simplex volume: m = 3, no edges.
        let vol3 = EdgeIntegrand::new(3, vec![]).unwrap();
        assert_eq!(vol3.integrate(), rat(1, 6));
    }

    #[test]
    fn edge_validation_and_key() {
        assert!(EdgeIntegrand::new(2, vec![(1, 1)]).is_err());
        assert!(EdgeIntegrand::new(2, vec![(2, 1)]).is_err());
        assert!(EdgeIntegrand::new(2, vec![(1, 3)]).is_err());
        let e = EdgeIntegrand::new(3, vec![(1, 3), (0, 1), (1, 3)]).unwrap();
        assert_eq!(e.canonical_key(), "m3:0-1,1-3,1-3");
        assert_eq!(EdgeIntegrand::new(2, vec![]).unwrap().canonical_key(), "m2:");
    }

    #[test]
    fn cache_is_insert_if_absent() {
        let cache = SimplexCache::new();
        let e = EdgeIntegrand::new(2, vec![(1, 2), (1, 2)]).unwrap();
        assert_eq!(cache.integral(&e), rat(1, 24));
        assert_eq!(cache.integral(&e), rat(1, 24));
        assert_eq!(cache.len(), 1);
        // Preloaded values win over recomputation (insert-if-absent both ways):
        // a deliberately wrong preload is returned verbatim.
        cache.insert("m1:".to_string(), rat(7, 1));
        assert_eq!(cache.len(), 2);
        let m1 = EdgeIntegrand::new(1, vec![]).unwrap();
        assert_eq!(cache.integral(&m1), rat(7, 1));
        assert_eq!(cache.len(), 2);
        assert_eq!(
            cache.entries().iter().map(|(k, _)| k.clone()).collect::<Vec<_>>(),
            vec!["m1:".to_string(), "m2:1-2,1-2".to_string()]
        );
    }

    fn p(n: usize) -> WeylElement {
        WeylElement::variable(n, 0)
    }

    fn q(n: usize) -> WeylElement {
        WeylElement::variable(n, n)
    }

    #[test]
    fn correlation_examples() {
        let pi = PoissonTensor::standard(1);
        let cache = SimplexCache::new();
        // <1> = 1.
        let c = HochschildChain::from_element(&WeylElement::one(1));
        assert_eq!(correlation_free(&c, &pi, &cache), FormalForm::one(1));
        // <p (x) q> = p dq.
        let c = HochschildChain::elementary(&p(1), &[q(1)]);
        let p_dq = FormalForm::dy(1, 1).scale_weyl(&p(1));
        assert_eq!(correlation_free(&c, &pi, &cache), p_dq);
        // <p^2 (x) q^2> = 2 p^2 q dq: the single-contraction term carries
        // int_0^1 (theta - 1/2) = 0 and drops.
        let c = HochschildChain::elementary(&p(1).mul(&p(1)), &[q(1).mul(&q(1))]);
        let expected = FormalForm::dy(1, 1)
            .scale_weyl(&p(1).mul(&p(1)).mul(&q(1)))
            .scale(&HbarSeries::from_int(2));
        assert_eq!(correlation_free(&c, &pi, &cache), expected);
        // <1 (x) p (x) q> = 1/2 dp ^ dq.
        let c = HochschildChain::elementary(&WeylElement::one(1), &[p(1), q(1)]);
        let expected = FormalForm::dy(1, 0)
            .wedge(&FormalForm::dy(1, 1))
            .scale(&HbarSeries::from_rational(rat(1, 2)));
        assert_eq!(correlation_free(&c, &pi, &cache), expected);
    }

    fn random_monomial(rng: &mut ChaCha8Rng, n: usize, max_deg: u32) -> Monomial {
        let mut exps = vec![0u32; 2 * n];
        let deg = rng.random_range(1..=max_deg);
        for _ in 0..deg {
            exps[rng.random_range(0..2 * n)] += 1;
        }
        Monomial::new(exps)
    }

    fn random_chain(rng: &mut ChaCha8Rng, n: usize, max_p: usize) -> HochschildChain {
        let len = rng.random_range(0..=max_p);
        let tail: Vec<WeylElement> = (0..len)
            .map(|_| {
                let m = random_monomial(rng, n, 3);
                WeylElement::monomial(n, m.exps().to_vec(), HbarSeries::one())
            })
            .collect();
        let a0_mono = if rng.random_bool(0.3) {
            Monomial::constant(2 * n)
        } else {
            random_monomial(rng, n, 3)
        };
        let coeff = HbarSeries::monomial(
            rng.random_range(0..=1),
            Rational::from_int(rng.random_range(1..=3)),
        );
        let a0 = WeylElement::monomial(n, a0_mono.exps().to_vec(), coeff);
        HochschildChain::elementary(&a0, &tail)
    }

    #[test]
    fn chain_map_identities_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x77aa);
        let cache = SimplexCache::new();
        for n in [1usize, 2] {
            let pi = PoissonTensor::standard(n);
            for _ in 0..25 {
                let c = random_chain(&mut rng, n, 3);
                let lhs_b = correlation_free(&c.boundary(&pi).unwrap(), &pi, &cache);
                let rhs_b = correlation_free(&c, &pi, &cache)
                    .bv_delta(&pi)
                    .scale(&HbarSeries::hbar());
                assert_eq!(lhs_b, rhs_b, "<b(c)> = h Delta <c> failed on {c}");
                let lhs_bb = correlation_free(&c.connes_operator(), &pi, &cache);
                let rhs_bb = correlation_free(&c, &pi, &cache).de_rham_d();
                assert_eq!(lhs_bb, rhs_bb, "<B(c)> = d <c> failed on {c}");
            }
        }
    }

    #[test]
    fn form_degree_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1dd1);
        let cache = SimplexCache::new();
        for n in [1usize, 2] {
            let pi = PoissonTensor::standard(n);
            for _ in 0..15 {
                let c = random_chain(&mut rng, n, 4);
                let p_len = c.top_degree();
                let form = correlation_free(&c, &pi, &cache);
                for d in form.degrees() {
                    assert_eq!(d as usize, p_len, "non-homogeneous correlation of {c}");
                }
            }
        }
    }

    /// Coefficient-wise h -> 0 limit.
    fn hbar_zero_part(f: &FormalForm) -> FormalForm {
        let n = f.n();
        let mut out = FormalForm::zero(n);
        for (mask, w) in f.components() {
            let mut w0 = WeylElement::zero(n);
            for (m, c) in w.terms() {
                let c0 = c.coeff(0);
                if !c0.is_zero() {
                    w0.add_term(m.clone(), &HbarSeries::from_rational(c0));
                }
            }
            out.add_component(mask, &w0);
        }
        out
    }

    #[test]
    fn classical_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc1a5);
        let cache = SimplexCache::new();
        for n in [1usize, 2] {
            let pi = PoissonTensor::standard(n);
            for _ in 0..10 {
                let c = random_chain(&mut rng, n, 3);
                for (tail, a0) in c.terms() {
                    let m = tail.len();
                    let single = {
                        let mut s = HochschildChain::zero(n);
                        s.add_mono_tensor(tail.clone(), a0);
                        s
                    };
                    let form = correlation_free(&single, &pi, &cache);
                    // (1/m!) a0 df_1 ^ .. ^ df_m with classical coefficients.
                    let mut expected = FormalForm::from_weyl(&hbar_zero_weyl(a0));
                    for mono in tail {
                        let f = WeylElement::monomial(n, mono.exps().to_vec(), HbarSeries::one());
                        expected = expected.wedge(&FormalForm::from_weyl(&f).de_rham_d());
                    }
                    let norm = Rational::factorial(m as u64).recip().unwrap();
                    expected = expected.scale(&HbarSeries::from_rational(norm));
                    assert_eq!(hbar_zero_part(&form), expected, "classical limit failed on {c}");
                }
            }
        }
    }

    fn hbar_zero_weyl(w: &WeylElement) -> WeylElement {
        let mut out = WeylElement::zero(w.n());
        for (m, c) in w.terms() {
            let c0 = c.coeff(0);
            if !c0.is_zero() {
                out.add_term(m.clone(), &HbarSeries::from_rational(c0));
            }
        }
        out
    }

    #[test]
    fn trace_examples() {
        let cache = SimplexCache::new();
        for n in [1usize, 2] {
            let pi = PoissonTensor::standard(n);
            let one = PeriodicChain::from_chain(&HochschildChain::from_element(&WeylElement::one(n)));
            assert_eq!(
                trace(&one, &pi, &cache),
                UPolynomial::monomial(n as i64, HbarSeries::one()),
                "Tr(1) = u^n failed for n = {n}"
            );
        }
        let pi = PoissonTensor::standard(1);
        let pq = PeriodicChain::from_chain(&HochschildChain::elementary(&p(1), &[q(1)]));
        assert!(trace(&pq, &pi, &cache).is_zero());
        // Cocycle instance.
        let image = pq.differential(&pi).unwrap();
        assert!(trace(&image, &pi, &cache).is_zero());
    }

    #[test]
    fn trace_kills_differentials_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let cache = SimplexCache::new();
        for n in [1usize, 2] {
            let pi = PoissonTensor::standard(n);
            for _ in 0..20 {
                let c = random_chain(&mut rng, n, 3);
                let mut pc = PeriodicChain::zero(n);
                pc.add_chain(rng.random_range(-1..=1), &c);
                let image = pc.differential(&pi).unwrap();
                let t = trace(&image, &pi, &cache);
                assert!(t.is_zero(), "Tr((b + uB)c) != 0 on {c}: {t}");
            }
        }
    }

    #[test]
    fn qme_smoke() {
        // For gamma with [gamma, gamma]_* = 0 (automatic here) of degree <= 2,
        // h Delta <1 (x) gamma^m> = 0 for m <= 3.
        let pi = PoissonTensor::standard(1);
        let cache = SimplexCache::new();
        let gammas = [
            p(1).mul(&q(1)),
            p(1).mul(&p(1)),
            q(1).mul(&q(1)).add(&p(1).mul(&q(1))),
        ];
        for gamma in &gammas {
            for m in 1..=3usize {
                let tail: Vec<WeylElement> = (0..m).map(|_| gamma.clone()).collect();
                let c = HochschildChain::elementary(&WeylElement::one(1), &tail);
                let form = correlation_free(&c, &pi, &cache);
                let residual = form.bv_delta(&pi).scale(&HbarSeries::hbar());
                assert!(
                    residual.is_zero(),
                    "h Delta <1 (x) gamma^{m}> != 0 for gamma = {gamma}: {residual}"
                );
            }
        }
    }

    #[test]
    fn wheel_values() {
        assert_eq!(wheel_integral(1).unwrap(), Rational::zero());
        assert_eq!(wheel_integral(2).unwrap(), rat(-1, 24));
        for k in [3u32, 5, 7, 9] {
            assert_eq!(wheel_integral(k).unwrap(), Rational::zero(), "odd wheel {k}");
        }
        assert!(wheel_integral(0).is_err());
        // The odd vanishing is an orientation-pairing effect; the directed
        // integral itself does not vanish (checked by hand via simplex
        // moments: int u^2 s t etc. over the 2-simplex).
        assert_eq!(directed_wheel_integral(3), rat(1, 360));
    }

    #[test]
    fn a_hat_values() {
        let t = a_hat_factor(4).unwrap();
        assert_eq!(t[0], Rational::one());
        assert_eq!(t[1], Rational::zero());
        assert_eq!(t[2], rat(-1, 24));
        assert_eq!(t[3], Rational::zero());
        assert_eq!(t[4], rat(7, 5760));
        assert!(a_hat_factor(3).is_err());
        assert!(a_hat_factor(0).is_err());
        // Observed match with the 2-wheel.
        assert_eq!(t[2], wheel_integral(2).unwrap());
    }

    #[test]
    fn a_hat_against_bernoulli_oracle() {
        // Independent route: (x/2)/sinh(x/2) = [x/(e^x - 1)] * e^{x/2}.
        let order = 12usize;
        let len = order + 1;
        // (e^x - 1)/x has coefficients 1/(n+1)!.
        let mut g = vec![Rational::zero(); len];
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = Rational::factorial(i as u64 + 1).recip().unwrap();
        }
        let mut bern = vec![Rational::zero(); len];
        bern[0] = Rational::one();
        for j in 1..len {
            let mut acc = Rational::zero();
            for i in 1..=j {
                acc += &(g[i].clone() * bern[j - i].clone());
            }
            bern[j] = -acc;
        }
        // Multiply by e^{x/2}.
        let mut expected = vec![Rational::zero(); len];
        for (j, e) in expected.iter_mut().enumerate() {
            let mut acc = Rational::zero();
            for (i, b) in bern.iter().enumerate().take(j + 1) {
                let half_pow = rat(1, 2).pow((j - i) as i64).unwrap();
                let term =
                    b.clone() * half_pow * Rational::factorial((j - i) as u64).recip().unwrap();
                acc += &term;
            }
            *e = acc;
        }
        let got = a_hat_factor(order as u32).unwrap();
        assert_eq!(got, expected);
    }

    // ------------------------------------------------------------------
    // Numeric oracle: nested Gauss-Legendre quadrature over the simplex
    // ------------------------------------------------------------------

    /// Nodes and weights of `k`-point Gauss-Legendre quadrature on [-1, 1],
    /// computed by Newton iteration on the Legendre recurrence.
    fn legendre_rule(k: usize) -> Vec<(f64, f64)> {
        let mut rule = Vec::with_capacity(k);
        for i in 1..=k {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (k as f64 + 0.5)).cos();
            for _ in 0..60 {
                // Evaluate P_k and P_k' at x.
                let (mut p0, mut p1) = (1.0f64, x);
                for j in 2..=k {
                    let jf = j as f64;
                    let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = k as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0f64, x);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let dp = k as f64 * (x * p1 - p0) / (x * x - 1.0);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            rule.push((x, w));
        }
        rule
    }

    /// `int prod_edges (theta_j - theta_i - 1/2)` over the ordered simplex,
    /// by nested Gauss-Legendre (exact for polynomials up to node degree).
    fn simplex_quadrature(m: usize, edges: &[(usize, usize)], rule: &[(f64, f64)]) -> f64 {
        fn go(
            level: usize,
            m: usize,
            thetas: &mut Vec<f64>,
            edges: &[(usize, usize)],
            rule: &[(f64, f64)],
        ) -> f64 {
            if level > m {
                let mut prod = 1.0;
                for (i, j) in edges {
                    let ti = if *i == 0 { 0.0 } else { thetas[i - 1] };
                    prod *= thetas[j - 1] - ti - 0.5;
                }
                return prod;
            }
            let lo = if level == 1 { 0.0 } else { thetas[level - 2] };
            let h = 1.0 - lo;
            let mut acc = 0.0;
            for (x, w) in rule {
                thetas.push(lo + h * (x + 1.0) / 2.0);
                acc += w * h / 2.0 * go(level + 1, m, thetas, edges, rule);
                thetas.pop();
            }
            acc
        }
        go(1, m, &mut Vec::new(), edges, rule)
    }

    #[test]
    fn simplex_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a55);
        let rule = legendre_rule(10);
        for _ in 0..50 {
            let m = rng.random_range(1..=4usize);
            let n_edges = rng.random_range(0..=5usize);
            let mut edges = Vec::with_capacity(n_edges);
            for _ in 0..n_edges {
                let i = rng.random_range(0..m);
                let j = rng.random_range(i + 1..=m);
                edges.push((i, j));
            }
            let e = EdgeIntegrand::new(m, edges.clone()).unwrap();
            let exact = e.integrate().to_f64();
            let numeric = simplex_quadrature(m, &edges, &rule);
            assert!(
                (exact - numeric).abs() < 1e-9,
                "simplex({}) exact {exact} vs quadrature {numeric}",
                e.canonical_key()
            );
        }
    }

    #[test]
    fn wheel_matches_quadrature() {
        // The directed cyclic integral as a simplex integral with a
        // sign-flipped wrap factor, evaluated numerically.
        let rule = legendre_rule(12);
        for k in 2..=6usize {
            let mut edges: Vec<(usize, usize)> = (1..k).map(|i| (i, i + 1)).collect();
            edges.push((1, k));
            // The quadrature product uses (theta_k - theta_1 - 1/2) for the
            // wrap edge; the wheel wants (theta_1 - theta_k + 1/2), which is
            // its negative, so flip the overall sign.
            let numeric = -simplex_quadrature(k, &edges, &rule);
            let exact = directed_wheel_integral(k).to_f64();
            assert!(
                (exact - numeric).abs() < 1e-9,
                "directed wheel({k}) exact {exact} vs quadrature {numeric}"
            );
        }
    }

    #[test]
    fn compact_path_matches_general_path() {
        // The packed-word Wick engine must reproduce the arbitrary-precision
        // enumeration term for term, including hbar powers and dy masks.
        let mut rng = ChaCha8Rng::seed_from_u64(0x0fa5);
        let cache = SimplexCache::new();
        for n in [1usize, 2, 3] {
            let pi = PoissonTensor::standard(n);
            for _ in 0..20 {
                let c = random_chain(&mut rng, n, 4);
                let fast = correlation_free(&c, &pi, &cache);
                let mut slow = FormalForm::zero(n);
                for (tail, a0) in c.terms() {
                    correlate_term_general(tail, a0, &pi, &cache, &mut slow);
                }
                assert_eq!(fast, slow, "engine mismatch on {c}");
            }
        }
        // A non-standard tensor with fraction entries stays on the compact
        // path (entries fit machine words) and must agree as well.
        let mut m = vec![vec![Rational::zero(); 4]; 4];
        m[0][2] = rat(2, 3);
        m[2][0] = rat(-2, 3);
        m[1][3] = rat(-5, 7);
        m[3][1] = rat(5, 7);
        let pi = PoissonTensor::from_matrix(2, &m).unwrap();
        for _ in 0..10 {
            let c = random_chain(&mut rng, 2, 3);
            let fast = correlation_free(&c, &pi, &cache);
            let mut slow = FormalForm::zero(2);
            for (tail, a0) in c.terms() {
                correlate_term_general(tail, a0, &pi, &cache, &mut slow);
            }
            assert_eq!(fast, slow, "engine mismatch on {c} with scaled tensor");
        }
    }

    #[test]
    fn correlation_respects_default_truncation() {
        // Truncated coefficients survive the pipeline with their precision.
        let pi = PoissonTensor::standard(1);
        let cache = SimplexCache::new();
        let c = HochschildChain::from_element(&WeylElement::constant(
            1,
            HbarSeries::one().truncate(DEFAULT_HBAR_ORDER),
        ));
        let form = correlation_free(&c, &pi, &cache);
        assert_eq!(
            form.coefficient(0).constant_term().truncation(),
            Some(DEFAULT_HBAR_ORDER)
        );
    }
}
