//! Holomorphic-limit side of the 2d→1d reduction: exact q-expansions,
//! Eisenstein generators, recognition of quasi-modular forms, A-cycle
//! averaging of Fourier kernels, and operator-formalism Fock traces.
//!
//! The quasi-modular ring is modeled as the free polynomial ring in E2,
//! E4, E6 (the standard structure theorem), with the weight of a monomial
//! `E2^a E4^b E6^c` equal to `2a + 4b + 6c`.  All series arithmetic is
//! exact over the rationals with explicit truncation orders.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CoreError, CoreResult};
use crate::scalar::{format_terms, join_symbols, Rational};

/// A truncated q-expansion with exact rational coefficients
/// `c_0 + c_1 q + ... + c_N q^N`, where `N` is the truncation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QSeries {
    coeffs: Vec<Rational>,
}

impl QSeries {
    pub fn zero(order: u32) -> Self {
        QSeries { coeffs: vec![Rational::zero(); order as usize + 1] }
    }

    pub fn one(order: u32) -> Self {
        let mut s = QSeries::zero(order);
        s.coeffs[0] = Rational::one();
        s
    }

    pub fn from_coeffs(coeffs: Vec<Rational>) -> CoreResult<Self> {
        if coeffs.is_empty() {
            return Err(CoreError::invalid("a q-series needs at least the constant coefficient"));
        }
        Ok(QSeries { coeffs })
    }

    /// Truncation order `N` (coefficients are known through `q^N`).
    pub fn truncation(&self) -> u32 {
        (self.coeffs.len() - 1) as u32
    }

    pub fn coeff(&self, n: u32) -> Option<&Rational> {
        self.coeffs.get(n as usize)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, rhs: &QSeries) -> QSeries {
        let n = self.coeffs.len().min(rhs.coeffs.len());
        QSeries { coeffs: (0..n).map(|i| &self.coeffs[i] + &rhs.coeffs[i]).collect() }
    }

    pub fn neg(&self) -> QSeries {
        QSeries { coeffs: self.coeffs.iter().map(|c| -c).collect() }
    }

    pub fn sub(&self, rhs: &QSeries) -> QSeries {
        self.add(&rhs.neg())
    }

    pub fn scale(&self, r: &Rational) -> QSeries {
        QSeries { coeffs: self.coeffs.iter().map(|c| c * r).collect() }
    }

    pub fn mul(&self, rhs: &QSeries) -> QSeries {
        let n = self.coeffs.len().min(rhs.coeffs.len());
        let mut coeffs = vec![Rational::zero(); n];
        for (i, a) in self.coeffs.iter().enumerate().take(n) {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate().take(n - i) {
                let prod = a * b;
                coeffs[i + j] = &coeffs[i + j] + &prod;
            }
        }
        QSeries { coeffs }
    }

    pub fn pow(&self, e: u32) -> QSeries {
        let mut out = QSeries::one(self.truncation());
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// The Euler operator `q d/dq`.
    pub fn q_derivative(&self) -> QSeries {
        QSeries {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, c)| c * &Rational::from_int(n as i64))
                .collect(),
        }
    }

    /// Lower the truncation order (raising it is not possible: the higher
    /// coefficients are unknown).
    pub fn truncate(&self, order: u32) -> QSeries {
        let n = (order as usize + 1).min(self.coeffs.len());
        QSeries { coeffs: self.coeffs[..n].to_vec() }
    }
}

fn q_symbol(n: usize) -> String {
    match n {
        0 => String::new(),
        1 => "q".to_string(),
        _ => format!("q^{}", n),
    }
}

impl fmt::Display for QSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<(Rational, String)> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(n, c)| (c.clone(), q_symbol(n)))
            .collect();
        write!(f, "{}", format_terms(&terms))
    }
}

/// Exact divisor power sum `sigma_e(n) = sum_{d | n} d^e`.
fn divisor_power_sum(n: u64, e: u32) -> Rational {
    let mut acc: i64 = 0;
    for d in 1..=n {
        if n % d == 0 {
            let mut p: i64 = 1;
            for _ in 0..e {
                p *= d as i64;
            }
            acc += p;
        }
    }
    Rational::from_int(acc)
}

/// The Eisenstein series `E_k` for `k` in {2, 4, 6}, through `q^order`:
///
/// ```text
/// E_k = 1 - (2k / B_k) sum_{n >= 1} sigma_{k-1}(n) q^n
/// ```
///
/// with `B_2 = 1/6`, `B_4 = -1/30`, `B_6 = 1/42`, giving the leading
/// coefficients -24, +240, -504.
pub fn eisenstein(k: u32, order: u32) -> CoreResult<QSeries> {
    let bernoulli = match k {
        2 => Rational::new(1, 6)?,
        4 => Rational::new(-1, 30)?,
        6 => Rational::new(1, 42)?,
        _ => return Err(CoreError::domain("Eisenstein generator index must be 2, 4, or 6")),
    };
    let factor = -&(&Rational::from_int(2 * k as i64) * &bernoulli.recip()?);
    let mut s = QSeries::one(order);
    for n in 1..=order {
        s.coeffs[n as usize] = &factor * &divisor_power_sum(n as u64, k - 1);
    }
    Ok(s)
}

/// A weight-homogeneous polynomial in the Eisenstein generators, together
/// with its cached q-expansion.  Monomials are keyed by the exponents
/// `(a, b, c)` of `E2^a E4^b E6^c`; every monomial satisfies
/// `2a + 4b + 6c = weight`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuasiModularForm {
    poly: BTreeMap<(u32, u32, u32), Rational>,
    weight: u32,
    expansion: QSeries,
}

fn monomial_weight(key: (u32, u32, u32)) -> u32 {
    2 * key.0 + 4 * key.1 + 6 * key.2
}

fn monomial_expansion(key: (u32, u32, u32), order: u32) -> QSeries {
    let mut s = QSeries::one(order);
    for (k, e) in [(2u32, key.0), (4, key.1), (6, key.2)] {
        if e > 0 {
            let gen = eisenstein(k, order).expect("valid generator index");
            s = s.mul(&gen.pow(e));
        }
    }
    s
}

impl QuasiModularForm {
    pub fn new(
        poly: BTreeMap<(u32, u32, u32), Rational>,
        weight: u32,
        order: u32,
    ) -> CoreResult<Self> {
        if weight % 2 != 0 {
            return Err(CoreError::domain("quasi-modular weight must be even"));
        }
        let mut expansion = QSeries::zero(order);
        for (&key, coeff) in &poly {
            if monomial_weight(key) != weight {
                return Err(CoreError::invalid(format!(
                    "monomial E2^{} E4^{} E6^{} has weight {}, not {}",
                    key.0,
                    key.1,
                    key.2,
                    monomial_weight(key),
                    weight
                )));
            }
            if coeff.is_zero() {
                continue;
            }
            expansion = expansion.add(&monomial_expansion(key, order).scale(coeff));
        }
        let poly = poly.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        Ok(QuasiModularForm { poly, weight, expansion })
    }

    pub fn weight(&self) -> u32 {
        self.weight
    }

    pub fn expansion(&self) -> &QSeries {
        &self.expansion
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(u32, u32, u32), &Rational)> {
        self.poly.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.poly.is_empty()
    }

    /// Re-expand the polynomial to a (possibly different) truncation order.
    pub fn expand_to(&self, order: u32) -> QSeries {
        let mut expansion = QSeries::zero(order);
        for (&key, coeff) in &self.poly {
            expansion = expansion.add(&monomial_expansion(key, order).scale(coeff));
        }
        expansion
    }
}

fn power_symbol(name: &str, e: u32) -> String {
    match e {
        0 => String::new(),
        1 => name.to_string(),
        _ => format!("{}^{}", name, e),
    }
}

impl fmt::Display for QuasiModularForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<(Rational, String)> = self
            .poly
            .iter()
            .map(|(&(a, b, c), coeff)| {
                let symbol = join_symbols(&[
                    power_symbol("E2", a),
                    power_symbol("E4", b),
                    power_symbol("E6", c),
                ]);
                (coeff.clone(), symbol)
            })
            .collect();
        write!(f, "{}", format_terms(&terms))
    }
}

/// All exponent triples `(a, b, c)` with `2a + 4b + 6c = weight`, in
/// lexicographic order.
fn weight_monomials(weight: u32) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for a in 0..=(weight / 2) {
        let rest = weight - 2 * a;
        for b in 0..=(rest / 4) {
            let rem = rest - 4 * b;
            if rem % 6 == 0 {
                out.push((a, b, rem / 6));
            }
        }
    }
    out
}

/// Outcome of [`recognize`]: either an exact quasi-modular representation
/// or a proof of failure (the residual of the best exact fit).
#[derive(Debug, Clone)]
pub enum RecognizeOutcome {
    Recognized(QuasiModularForm),
    /// No polynomial in E2, E4, E6 of this weight matches: `residual` is
    /// the difference between the input and the unique candidate fixed by
    /// the leading coefficients.
    NotQuasiModular { residual: QSeries },
}

/// Try to write `s` as a weight-homogeneous polynomial in E2, E4, E6.
///
/// The truncation of `s` must reach the rank bound of the weight's
/// monomial basis (the smallest order at which the basis expansions are
/// linearly independent); otherwise the question is undecidable at this
/// order and a domain error is returned — this is distinct from a genuine
/// recognition failure, which returns [`RecognizeOutcome::NotQuasiModular`]
/// with the residual as a witness.
pub fn recognize(s: &QSeries, weight: u32) -> CoreResult<RecognizeOutcome> {
    if weight % 2 != 0 {
        return Err(CoreError::domain("quasi-modular weight must be even"));
    }
    let basis = weight_monomials(weight);
    let order = s.truncation();

    // Determine the rank bound: the smallest truncation at which the basis
    // expansions are linearly independent.  The basis is free, so the
    // bound exists; search with a widening window.
    let mut probe = order.max(basis.len() as u32);
    let rank_bound = loop {
        let columns: Vec<QSeries> =
            basis.iter().map(|&key| monomial_expansion(key, probe)).collect();
        if let Some(bound) = full_rank_prefix(&columns, probe) {
            break bound;
        }
        if probe > 4 * (basis.len() as u32 + weight + 4) {
            return Err(CoreError::singular("basis rank bound search did not converge"));
        }
        probe *= 2;
    };
    if order < rank_bound {
        return Err(CoreError::domain(format!(
            "undecidable at this order: recognition at weight {} needs q-order >= {}, got {}",
            weight, rank_bound, order
        )));
    }

    let columns: Vec<QSeries> =
        basis.iter().map(|&key| monomial_expansion(key, order)).collect();
    let rows = order as usize + 1;
    let mut matrix: Vec<Vec<Rational>> = (0..rows)
        .map(|r| columns.iter().map(|c| c.coeffs[r].clone()).collect())
        .collect();
    let mut rhs: Vec<Rational> = s.coeffs().to_vec();
    let solution = eliminate_rectangular(&mut matrix, &mut rhs, basis.len());

    // Residual of the candidate against the full input.
    let mut residual = s.clone();
    for (key, x) in basis.iter().zip(&solution) {
        if x.is_zero() {
            continue;
        }
        residual = residual.sub(&monomial_expansion(*key, order).scale(x));
    }
    if residual.is_zero() {
        let poly: BTreeMap<(u32, u32, u32), Rational> =
            basis.into_iter().zip(solution).filter(|(_, x)| !x.is_zero()).collect();
        Ok(RecognizeOutcome::Recognized(QuasiModularForm::new(poly, weight, order)?))
    } else {
        Ok(RecognizeOutcome::NotQuasiModular { residual })
    }
}

/// Smallest truncation order whose rows span full column rank, if the
/// columns (expanded through `order`) are independent at all.
fn full_rank_prefix(columns: &[QSeries], order: u32) -> Option<u32> {
    let cols = columns.len();
    if cols == 0 {
        return Some(0);
    }
    // Incremental row reduction: feed rows one at a time.
    let mut reduced: Vec<Vec<Rational>> = Vec::new(); // rows in echelon form
    let mut pivots: Vec<usize> = Vec::new();
    for r in 0..=(order as usize) {
        let mut row: Vec<Rational> = columns.iter().map(|c| c.coeffs[r].clone()).collect();
        for (piv_row, &piv_col) in reduced.iter().zip(&pivots) {
            if row[piv_col].is_zero() {
                continue;
            }
            let factor = &row[piv_col] * &piv_row[piv_col].recip().expect("pivot nonzero");
            for c in 0..cols {
                let delta = &factor * &piv_row[c];
                row[c] = &row[c] - &delta;
            }
        }
        if let Some(col) = row.iter().position(|x| !x.is_zero()) {
            reduced.push(row);
            pivots.push(col);
            if reduced.len() == cols {
                return Some(r as u32);
            }
        }
    }
    None
}

/// Gaussian elimination for a tall system `M x = v` with full column rank:
/// returns the solution determined by the pivot rows (the earliest rows
/// that make the system nonsingular).  Inconsistent rows are left to the
/// caller, who checks the residual.
fn eliminate_rectangular(
    matrix: &mut [Vec<Rational>],
    rhs: &mut [Rational],
    cols: usize,
) -> Vec<Rational> {
    let rows = matrix.len();
    let mut pivot_rows: Vec<usize> = Vec::new();
    let mut next_row = 0;
    for col in 0..cols {
        let Some(pr) = (next_row..rows).find(|&r| !matrix[r][col].is_zero()) else {
            continue;
        };
        matrix.swap(next_row, pr);
        rhs.swap(next_row, pr);
        let inv = matrix[next_row][col].recip().expect("pivot nonzero");
        for r in 0..rows {
            if r == next_row || matrix[r][col].is_zero() {
                continue;
            }
            let factor = &matrix[r][col] * &inv;
            for c in 0..cols {
                let delta = &factor * &matrix[next_row][c];
                matrix[r][c] = &matrix[r][c] - &delta;
            }
            let delta = &factor * &rhs[next_row];
            rhs[r] = &rhs[r] - &delta;
        }
        pivot_rows.push(next_row);
        next_row += 1;
    }
    let mut solution = vec![Rational::zero(); cols];
    let mut pivot_iter = pivot_rows.into_iter();
    for col in 0..cols {
        // Rebuild which row holds this column's pivot.
        if let Some(r) = (0..rows).find(|&r| !matrix[r][col].is_zero()) {
            // After full elimination each pivot column has exactly one
            // nonzero entry (in its pivot row).
            solution[col] = &rhs[r] * &matrix[r][col].recip().expect("pivot nonzero");
            let _ = pivot_iter.next();
        }
    }
    solution
}

/// Fourier data of a function on an annular A-cycle region:
/// `sum c_{k,n} e^{2 pi i k z} q^n` with finite support.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FourierKernel {
    data: BTreeMap<(i64, u32), Rational>,
}

impl FourierKernel {
    pub fn new() -> Self {
        FourierKernel { data: BTreeMap::new() }
    }

    /// Add `c e^{2 pi i k z} q^n` to the kernel.
    pub fn insert(&mut self, k: i64, n: u32, c: Rational) {
        if c.is_zero() {
            return;
        }
        let entry = self.data.entry((k, n)).or_insert_with(Rational::zero);
        *entry = &*entry + &c;
        if entry.is_zero() {
            self.data.remove(&(k, n));
        }
    }

    pub fn coeff(&self, k: i64, n: u32) -> Rational {
        self.data.get(&(k, n)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn support(&self) -> impl Iterator<Item = (&(i64, u32), &Rational)> {
        self.data.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add(&self, rhs: &FourierKernel) -> FourierKernel {
        let mut out = self.clone();
        for (&(k, n), c) in &rhs.data {
            out.insert(k, n, c.clone());
        }
        out
    }

    /// Product of kernels: Fourier indices and q-orders add; q-orders
    /// beyond `q_order` are discarded.
    pub fn mul(&self, rhs: &FourierKernel, q_order: u32) -> FourierKernel {
        let mut out = FourierKernel::new();
        for (&(k1, n1), c1) in &self.data {
            for (&(k2, n2), c2) in &rhs.data {
                if n1 + n2 > q_order {
                    continue;
                }
                out.insert(k1 + k2, n1 + n2, c1 * c2);
            }
        }
        out
    }

    /// The constant Fourier mode (`k = 0` row) as a q-series through
    /// `q_order`.
    pub fn zero_mode(&self, q_order: u32) -> QSeries {
        let mut s = QSeries::zero(q_order);
        for (&(k, n), c) in &self.data {
            if k == 0 && n <= q_order {
                s.coeffs[n as usize] = &s.coeffs[n as usize] + c;
            }
        }
        s
    }
}

/// Kernel data for a multi-variable integrand: the factor attached to the
/// ordered pair `(i, j)` is a function of `z_i - z_j` (a function of `z_i`
/// alone when `i == j`).
pub type KernelMap = BTreeMap<(usize, usize), FourierKernel>;

/// Iterated A-cycle average:
///
/// ```text
/// (1/n!) sum_{orderings} oint_{A_1} dz_1 ... oint_{A_n} dz_n  Phi
/// ```
///
/// where each `oint_A` extracts the constant Fourier mode in one variable
/// and `Phi` is the product of the kernels in the map.  Expansions of the
/// integrand may differ per contour ordering (the kernels' annular regions
/// depend on it); `overrides` supplies the kernel map for specific
/// orderings, with `kernels` as the default.
pub fn a_cycle_average(
    kernels: &KernelMap,
    n: usize,
    overrides: &BTreeMap<Vec<usize>, KernelMap>,
    q_order: u32,
) -> CoreResult<QSeries> {
    if n == 0 {
        return Err(CoreError::domain("A-cycle average needs at least one variable"));
    }
    for map in std::iter::once(kernels).chain(overrides.values()) {
        for &(i, j) in map.keys() {
            if i >= n || j >= n {
                return Err(CoreError::dim(format!(
                    "kernel pair ({}, {}) out of range for {} variables",
                    i, j, n
                )));
            }
        }
    }
    for ordering in overrides.keys() {
        let mut sorted = ordering.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(CoreError::invalid("override key is not a permutation of the variables"));
        }
    }

    let orderings = permutations(n);
    let mut total = QSeries::zero(q_order);
    for ordering in &orderings {
        let map = overrides.get(ordering).unwrap_or(kernels);
        total = total.add(&extract_all_zero_modes(map, n, q_order));
    }
    let count = Rational::factorial(n as u64).recip()?;
    Ok(total.scale(&count))
}

/// Extract the constant Fourier mode in every variable from the product
/// of the kernels: keep exactly the terms whose net Fourier weight is zero
/// on each `z_i`.
fn extract_all_zero_modes(map: &KernelMap, n: usize, q_order: u32) -> QSeries {
    let factors: Vec<(&(usize, usize), &FourierKernel)> = map.iter().collect();
    let mut out = QSeries::zero(q_order);
    fn rec(
        factors: &[(&(usize, usize), &FourierKernel)],
        idx: usize,
        weights: &mut Vec<i64>,
        q_acc: u32,
        coeff: &Rational,
        q_order: u32,
        out: &mut QSeries,
    ) {
        if coeff.is_zero() {
            return;
        }
        if idx == factors.len() {
            if weights.iter().all(|&w| w == 0) {
                out.coeffs[q_acc as usize] = &out.coeffs[q_acc as usize] + coeff;
            }
            return;
        }
        let (&(i, j), kernel) = factors[idx];
        for (&(k, nq), c) in kernel.support() {
            if q_acc + nq > q_order {
                continue;
            }
            weights[i] += k;
            if i != j {
                weights[j] -= k;
            }
            let next = coeff * c;
            rec(factors, idx + 1, weights, q_acc + nq, &next, q_order, out);
            weights[i] -= k;
            if i != j {
                weights[j] += k;
            }
        }
    }
    let mut weights = vec![0i64; n];
    rec(&factors, 0, &mut weights, 0, &Rational::one(), q_order, &mut out);
    out
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: &mut Vec<usize>, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(acc.clone());
            return;
        }
        for idx in 0..remaining.len() {
            let v = remaining.remove(idx);
            acc.push(v);
            rec(remaining, acc, out);
            acc.pop();
            remaining.insert(idx, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut (0..n).collect(), &mut Vec::new(), &mut out);
    out
}

/// Which free-field system a Fock space quantizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FockSystem {
    /// Two fermionic species (occupation numbers in {0, 1}).
    Bc,
    /// Two bosonic species (unbounded occupation numbers).
    BetaGamma,
}

impl FockSystem {
    pub fn parse(name: &str) -> CoreResult<Self> {
        match name {
            "bc" => Ok(FockSystem::Bc),
            "betagamma" | "beta-gamma" | "bg" => Ok(FockSystem::BetaGamma),
            _ => Err(CoreError::domain(format!(
                "unknown Fock system '{}' (expected 'bc' or 'betagamma')",
                name
            ))),
        }
    }
}

impl fmt::Display for FockSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FockSystem::Bc => write!(f, "bc"),
            FockSystem::BetaGamma => write!(f, "betagamma"),
        }
    }
}

/// The state space of two free-field species truncated at total grading
/// `level`: states are occupation maps `mode -> count` per species for
/// positive modes, graded by `L0 = sum mode * count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    pub system: FockSystem,
    pub level: u32,
}

impl FockSpace {
    pub fn new(system: FockSystem, level: u32) -> Self {
        FockSpace { system, level }
    }

    /// All states of one species at exact grading `level`: occupation maps
    /// with `sum mode * count = level` (counts in {0, 1} for fermions).
    fn species_states(&self, level: u32) -> Vec<BTreeMap<u32, u32>> {
        let fermionic = self.system == FockSystem::Bc;
        fn rec(
            remaining: u32,
            max_part: u32,
            fermionic: bool,
            current: &mut Vec<(u32, u32)>,
            out: &mut Vec<BTreeMap<u32, u32>>,
        ) {
            if remaining == 0 {
                out.push(current.iter().cloned().collect());
                return;
            }
            let top = max_part.min(remaining);
            for part in (1..=top).rev() {
                let max_count = if fermionic { 1 } else { remaining / part };
                for count in 1..=max_count {
                    current.push((part, count));
                    rec(remaining - part * count, part - 1, fermionic, current, out);
                    current.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(level, level, fermionic, &mut Vec::new(), &mut out);
        out
    }

    /// All two-species states at exact grading `level`.
    pub fn states_at_level(&self, level: u32) -> Vec<[BTreeMap<u32, u32>; 2]> {
        let mut out = Vec::new();
        for l1 in 0..=level {
            let first = self.species_states(l1);
            let second = self.species_states(level - l1);
            for s1 in &first {
                for s2 in &second {
                    out.push([s1.clone(), s2.clone()]);
                }
            }
        }
        out
    }
}

/// How a diagonal operator weights the occupation of one species' modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModeSelector {
    /// `c(k) = sum_d coeffs[d] k^d` applied to every mode `k`.
    Polynomial(Vec<Rational>),
    /// Only the given mode contributes, with weight 1.
    SingleMode(u32),
}

impl ModeSelector {
    fn weight(&self, mode: u32) -> Rational {
        match self {
            ModeSelector::Polynomial(coeffs) => {
                let mut acc = Rational::zero();
                let mut p = Rational::one();
                let m = Rational::from_int(mode as i64);
                for c in coeffs {
                    acc = &acc + &(c * &p);
                    p = &p * &m;
                }
                acc
            }
            ModeSelector::SingleMode(m) => {
                if mode == *m {
                    Rational::one()
                } else {
                    Rational::zero()
                }
            }
        }
    }
}

/// A diagonal mode operator `constant + sum_{species, k} c(k) N_k`,
/// evaluated in the occupation basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagonalOperator {
    pub constant: Rational,
    /// Per-species mode weighting; `None` means the species is not acted on.
    pub species: [Option<ModeSelector>; 2],
}

impl DiagonalOperator {
    pub fn identity() -> Self {
        DiagonalOperator { constant: Rational::one(), species: [None, None] }
    }

    /// The grading operator `L0 = sum mode * N_mode` over both species.
    pub fn l0() -> Self {
        let linear = ModeSelector::Polynomial(vec![Rational::zero(), Rational::one()]);
        DiagonalOperator {
            constant: Rational::zero(),
            species: [Some(linear.clone()), Some(linear)],
        }
    }

    /// The number operator of a single mode of one species.
    pub fn number(species: usize, mode: u32) -> CoreResult<Self> {
        if species >= 2 {
            return Err(CoreError::dim("species index must be 0 or 1"));
        }
        let mut selectors = [None, None];
        selectors[species] = Some(ModeSelector::SingleMode(mode));
        Ok(DiagonalOperator { constant: Rational::zero(), species: selectors })
    }

    fn apply(&self, state: &[BTreeMap<u32, u32>; 2]) -> Rational {
        let mut acc = self.constant.clone();
        for (occ, selector) in state.iter().zip(&self.species) {
            if let Some(selector) = selector {
                for (&mode, &count) in occ {
                    let w = selector.weight(mode);
                    let contribution = &w * &Rational::from_int(count as i64);
                    acc = &acc + &contribution;
                }
            }
        }
        acc
    }
}

/// The graded dimension `Tr q^{L0}` by explicit level enumeration.
pub fn fock_character(space: &FockSpace) -> QSeries {
    let mut s = QSeries::zero(space.level);
    for level in 0..=space.level {
        let count = space.states_at_level(level).len() as i64;
        s.coeffs[level as usize] = Rational::from_int(count);
    }
    s
}

/// The weighted trace `Tr q^{L0} op` for a diagonal operator, by level
/// enumeration.
pub fn fock_trace(space: &FockSpace, op: &DiagonalOperator) -> QSeries {
    let mut s = QSeries::zero(space.level);
    for level in 0..=space.level {
        let mut acc = Rational::zero();
        for state in space.states_at_level(level) {
            acc = &acc + &op.apply(&state);
        }
        s.coeffs[level as usize] = acc;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::new(n, d).expect("nonzero denominator")
    }

    fn int(n: i64) -> Rational {
        Rational::from_int(n)
    }

    #[test]
    fn eisenstein_series_match_divisor_sums() {
        let e2 = eisenstein(2, 5).unwrap();
        let expect: Vec<Rational> =
            [1, -24, -72, -96, -168, -144].iter().map(|&n| int(n)).collect();
        assert_eq!(e2.coeffs(), &expect[..]);

        let e4 = eisenstein(4, 2).unwrap();
        assert_eq!(e4.coeffs(), &[int(1), int(240), int(2160)]);

        let e6 = eisenstein(6, 2).unwrap();
        assert_eq!(e6.coeffs(), &[int(1), int(-504), int(-16632)]);

        for k in [2, 4, 6] {
            assert_eq!(eisenstein(k, 10).unwrap().coeff(0), Some(&Rational::one()));
        }
        assert!(eisenstein(8, 4).is_err());
    }

    #[test]
    fn qseries_print_format() {
        let e2 = eisenstein(2, 3).unwrap();
        assert_eq!(format!("{}", e2), "1 - 24*q - 72*q^2 - 96*q^3");
        assert_eq!(format!("{}", QSeries::zero(4)), "0");
        let s = QSeries::from_coeffs(vec![int(0), Rational::one(), rat(1, 2)]).unwrap();
        assert_eq!(format!("{}", s), "q + 1/2*q^2");
    }

    #[test]
    fn ramanujan_derivative_identities_through_q30() {
        let order = 30;
        let e2 = eisenstein(2, order).unwrap();
        let e4 = eisenstein(4, order).unwrap();
        let e6 = eisenstein(6, order).unwrap();

        // 12 q dE2/dq = E2^2 - E4.
        let lhs = e2.q_derivative().scale(&int(12));
        let rhs = e2.mul(&e2).sub(&e4);
        assert_eq!(lhs, rhs);

        // 3 q dE4/dq = E2 E4 - E6.
        let lhs = e4.q_derivative().scale(&int(3));
        let rhs = e2.mul(&e4).sub(&e6);
        assert_eq!(lhs, rhs);

        // 2 q dE6/dq = E2 E6 - E4^2 (the third identity of the triple).
        let lhs = e6.q_derivative().scale(&int(2));
        let rhs = e2.mul(&e6).sub(&e4.mul(&e4));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn recognize_ramanujan_combination() {
        // q dE2/dq at weight 4 must come back as (E2^2 - E4)/12.
        let e2 = eisenstein(2, 12).unwrap();
        let outcome = recognize(&e2.q_derivative(), 4).unwrap();
        let RecognizeOutcome::Recognized(form) = outcome else {
            panic!("expected recognition");
        };
        assert_eq!(form.weight(), 4);
        let terms: Vec<_> = form.terms().map(|(&k, c)| (k, c.clone())).collect();
        assert_eq!(
            terms,
            vec![((0, 1, 0), rat(-1, 12)), ((2, 0, 0), rat(1, 12))]
        );
        assert_eq!(format!("{}", form), "-1/12*E4 + 1/12*E2^2");
    }

    #[test]
    fn recognize_round_trips_products() {
        // E4 E6 at weight 10.
        let order = 14;
        let e4 = eisenstein(4, order).unwrap();
        let e6 = eisenstein(6, order).unwrap();
        let outcome = recognize(&e4.mul(&e6), 10).unwrap();
        let RecognizeOutcome::Recognized(form) = outcome else {
            panic!("expected recognition");
        };
        let terms: Vec<_> = form.terms().map(|(&k, c)| (k, c.clone())).collect();
        assert_eq!(terms, vec![((0, 1, 1), Rational::one())]);
        assert_eq!(form.expansion(), &e4.mul(&e6));

        // Weight additivity: recognizing a product of recognized factors.
        let e2 = eisenstein(2, order).unwrap();
        let product = e2.mul(&e2).mul(&e4); // weight 8
        let outcome = recognize(&product, 8).unwrap();
        assert!(matches!(outcome, RecognizeOutcome::Recognized(_)));
    }

    #[test]
    fn recognize_rejects_non_quasi_modular_input() {
        let mut coeffs = vec![Rational::zero(); 9];
        coeffs[0] = Rational::one();
        coeffs[1] = Rational::one();
        let s = QSeries::from_coeffs(coeffs).unwrap();
        let outcome = recognize(&s, 2).unwrap();
        let RecognizeOutcome::NotQuasiModular { residual } = outcome else {
            panic!("1 + q is not quasi-modular");
        };
        // Candidate fixed by the constant term is E2 itself; the residual
        // starts at 25 q.
        assert_eq!(residual.coeff(0), Some(&Rational::zero()));
        assert_eq!(residual.coeff(1), Some(&int(25)));
    }

    #[test]
    fn recognize_reports_undecidable_at_low_order() {
        // Weight 12 has a 7-dimensional basis; a 2-term expansion cannot
        // decide membership.
        let s = QSeries::one(2);
        let err = recognize(&s, 12).unwrap_err();
        let msg = format!("{}", err);
        assert!(msg.contains("undecidable at this order"), "got: {}", msg);

        // Odd weight is a domain error.
        assert!(recognize(&s, 3).is_err());
    }

    #[test]
    fn recognize_zero_and_weight_zero() {
        let z = QSeries::zero(8);
        let RecognizeOutcome::Recognized(form) = recognize(&z, 4).unwrap() else {
            panic!("zero is quasi-modular at any weight");
        };
        assert!(form.is_zero());

        let one = QSeries::one(8);
        let RecognizeOutcome::Recognized(form) = recognize(&one, 0).unwrap() else {
            panic!("constants are weight-0 quasi-modular forms");
        };
        let terms: Vec<_> = form.terms().map(|(&k, c)| (k, c.clone())).collect();
        assert_eq!(terms, vec![((0, 0, 0), Rational::one())]);
    }

    #[test]
    fn quasi_modular_form_validates_weight_homogeneity() {
        let mut poly = BTreeMap::new();
        poly.insert((1, 0, 0), Rational::one()); // weight 2
        poly.insert((0, 1, 0), Rational::one()); // weight 4
        assert!(QuasiModularForm::new(poly, 4, 8).is_err());

        let mut poly = BTreeMap::new();
        poly.insert((2, 0, 0), Rational::one());
        let form = QuasiModularForm::new(poly, 4, 8).unwrap();
        let e2 = eisenstein(2, 8).unwrap();
        assert_eq!(form.expansion(), &e2.mul(&e2));
    }

    #[test]
    fn a_cycle_average_single_variable_reads_zero_row() {
        let mut kernel = FourierKernel::new();
        kernel.insert(0, 0, int(1));
        kernel.insert(0, 2, rat(3, 2));
        kernel.insert(1, 1, int(7)); // nonzero Fourier mode: dropped
        let mut map = KernelMap::new();
        map.insert((0, 0), kernel);
        let avg = a_cycle_average(&map, 1, &BTreeMap::new(), 4).unwrap();
        let mut expect = QSeries::zero(4);
        expect.coeffs[0] = int(1);
        expect.coeffs[2] = rat(3, 2);
        assert_eq!(avg, expect);
    }

    #[test]
    fn a_cycle_average_symmetric_kernel_is_ordering_independent() {
        // K(z0 - z1) with only k = 0 entries: both orderings give the zero
        // row; the average equals either.
        let mut kernel = FourierKernel::new();
        kernel.insert(0, 1, int(5));
        kernel.insert(2, 0, int(9)); // drops: no partner to cancel the mode
        let mut map = KernelMap::new();
        map.insert((0, 1), kernel.clone());
        let avg = a_cycle_average(&map, 2, &BTreeMap::new(), 3).unwrap();
        assert_eq!(avg, kernel.zero_mode(3));
    }

    #[test]
    fn a_cycle_average_mixed_orderings_take_the_mean() {
        // Per-ordering expansions that differ: ordering (0,1) sees c q,
        // ordering (1,0) sees 3 c q; the average must be 2 c q.
        let mut k_a = FourierKernel::new();
        k_a.insert(0, 1, int(1));
        let mut k_b = FourierKernel::new();
        k_b.insert(0, 1, int(3));
        let mut map_a = KernelMap::new();
        map_a.insert((0, 1), k_a);
        let mut map_b = KernelMap::new();
        map_b.insert((0, 1), k_b);
        let mut overrides = BTreeMap::new();
        overrides.insert(vec![0, 1], map_a.clone());
        overrides.insert(vec![1, 0], map_b);
        let avg = a_cycle_average(&map_a, 2, &overrides, 2).unwrap();
        let mut expect = QSeries::zero(2);
        expect.coeffs[1] = int(2);
        assert_eq!(avg, expect);
    }

    #[test]
    fn a_cycle_average_matches_direct_summation_oracle() {
        // Two kernels K01(z0 - z1), K10(z1 - z0): the zero-mode constraint
        // couples their Fourier indices (k, k).  Brute-force oracle:
        // sum over k of c01(k, n1) c10(k, n2) q^{n1+n2}.
        let mut k01 = FourierKernel::new();
        k01.insert(0, 0, int(2));
        k01.insert(1, 1, int(3));
        k01.insert(-1, 0, rat(1, 2));
        let mut k10 = FourierKernel::new();
        k10.insert(0, 1, int(5));
        k10.insert(1, 0, int(7));
        k10.insert(-1, 2, int(11));
        let mut map = KernelMap::new();
        map.insert((0, 1), k01.clone());
        map.insert((1, 0), k10.clone());

        let q_order = 4;
        let mut oracle = QSeries::zero(q_order);
        for (&(ka, na), ca) in k01.support() {
            for (&(kb, nb), cb) in k10.support() {
                // Net weight on z0 is ka - kb; on z1 it is kb - ka.
                if ka != kb || na + nb > q_order {
                    continue;
                }
                let prod = ca * cb;
                let slot = (na + nb) as usize;
                oracle.coeffs[slot] = &oracle.coeffs[slot] + &prod;
            }
        }
        let avg = a_cycle_average(&map, 2, &BTreeMap::new(), q_order).unwrap();
        assert_eq!(avg, oracle);
        assert!(!avg.is_zero());
    }

    /// Product of (1 + q^m) for m in lo..=hi, through q^order.
    fn product_one_plus(lo: u32, hi: u32, order: u32) -> QSeries {
        let mut s = QSeries::one(order);
        for m in lo..=hi {
            let mut factor = QSeries::one(order);
            if m <= order {
                factor.coeffs[m as usize] = Rational::one();
            }
            s = s.mul(&factor);
        }
        s
    }

    /// Product of (1 - q^m)^{-1} for m in 1..=order, through q^order.
    fn product_inverse_one_minus(order: u32) -> QSeries {
        let mut s = QSeries::one(order);
        for m in 1..=order {
            // Geometric series 1 + q^m + q^{2m} + ...
            let mut factor = QSeries::zero(order);
            let mut j = 0;
            while j * m <= order {
                factor.coeffs[(j * m) as usize] = Rational::one();
                j += 1;
            }
            s = s.mul(&factor);
        }
        s
    }

    #[test]
    fn fock_characters_match_examples_and_product_formulas() {
        let bc = FockSpace::new(FockSystem::Bc, 3);
        let chi = fock_character(&bc);
        assert_eq!(chi.coeffs(), &[int(1), int(2), int(3), int(6)]);

        let bg = FockSpace::new(FockSystem::BetaGamma, 3);
        let chi = fock_character(&bg);
        assert_eq!(chi.coeffs(), &[int(1), int(2), int(5), int(10)]);

        assert_eq!(
            fock_character(&FockSpace::new(FockSystem::Bc, 0)).coeffs(),
            &[int(1)]
        );

        // Product formulas through q^12.
        let order = 12;
        let bc = FockSpace::new(FockSystem::Bc, order);
        let product = product_one_plus(1, order, order);
        assert_eq!(fock_character(&bc), product.mul(&product));

        let bg = FockSpace::new(FockSystem::BetaGamma, order);
        let product = product_inverse_one_minus(order);
        assert_eq!(fock_character(&bg), product.mul(&product));
    }

    #[test]
    fn fock_trace_identities() {
        let bc = FockSpace::new(FockSystem::Bc, 8);
        let chi = fock_character(&bc);

        // op = identity reproduces the character.
        assert_eq!(fock_trace(&bc, &DiagonalOperator::identity()), chi);

        // op = L0 is q d/dq of the character.
        assert_eq!(fock_trace(&bc, &DiagonalOperator::l0()), chi.q_derivative());

        // Same identities for the bosonic system.
        let bg = FockSpace::new(FockSystem::BetaGamma, 6);
        let chi = fock_character(&bg);
        assert_eq!(fock_trace(&bg, &DiagonalOperator::identity()), chi);
        assert_eq!(fock_trace(&bg, &DiagonalOperator::l0()), chi.q_derivative());
    }

    #[test]
    fn fock_trace_single_mode_number_operator() {
        // N_1 on one bc species: only states with that mode occupied
        // contribute, giving q * prod_{m>=2}(1+q^m) * prod_{m>=1}(1+q^m).
        let order = 10;
        let bc = FockSpace::new(FockSystem::Bc, order);
        let trace = fock_trace(&bc, &DiagonalOperator::number(0, 1).unwrap());
        let rest = product_one_plus(2, order, order);
        let other = product_one_plus(1, order, order);
        let mut shift = QSeries::zero(order);
        shift.coeffs[1] = Rational::one();
        let expect = shift.mul(&rest).mul(&other);
        assert_eq!(trace, expect);
    }

    #[test]
    fn fock_system_parsing() {
        assert_eq!(FockSystem::parse("bc").unwrap(), FockSystem::Bc);
        assert_eq!(FockSystem::parse("betagamma").unwrap(), FockSystem::BetaGamma);
        assert_eq!(FockSystem::parse("bg").unwrap(), FockSystem::BetaGamma);
        assert!(FockSystem::parse("ising").is_err());
    }
}
