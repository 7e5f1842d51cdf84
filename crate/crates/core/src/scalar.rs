//! The ground ring `K = Q((h))[u, u^-1]`.
//!
//! Three layers:
//!
//! * [`Rational`] — arbitrary-precision rational numbers, always reduced,
//!   denominator positive.
//! * [`HbarSeries`] — Laurent series in the formal parameter `h` with an
//!   explicit truncation order.  A series is either *exact* (a Laurent
//!   polynomial, all higher coefficients known to vanish) or *truncated*
//!   (coefficients beyond `h^N` are unknown).  Mixing truncations resolves to
//!   the tighter bound; a product of series truncated at `N1`, `N2` with
//!   valuations `v1`, `v2` is known through `min(N1 + v2, N2 + v1)`.
//! * [`UPolynomial`] — Laurent polynomials in the equivariant variable `u`
//!   (of cohomological degree 2) with `HbarSeries` coefficients.
//!
//! Canonical printing orders monomials by ascending `u`-exponent, then
//! ascending `h`-exponent, and is byte-reproducible; the grammar in
//! [`crate::expr`] parses exactly what the printers emit.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{CoreError, CoreResult};

/// Default `h`-adic working precision used when an inherently infinite
/// expansion (series inversion) is requested on exact input.
pub const DEFAULT_HBAR_ORDER: i64 = 8;

// ---------------------------------------------------------------------------
// Rational
// ---------------------------------------------------------------------------

/// Arbitrary-precision rational number.
///
/// Invariants (maintained by the backing representation): reduced to lowest
/// terms, denominator positive, zero is `0/1`.  Equality is structural.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rational(BigRational);

impl Rational {
    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    /// `num/den`; fails on a zero denominator.
    pub fn new(num: i64, den: i64) -> CoreResult<Self> {
        if den == 0 {
            return Err(CoreError::DivisionByZero);
        }
        Ok(Rational(BigRational::new(BigInt::from(num), BigInt::from(den))))
    }

    pub fn from_int(n: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_big(num: BigInt, den: BigInt) -> CoreResult<Self> {
        if den.is_zero() {
            return Err(CoreError::DivisionByZero);
        }
        Ok(Rational(BigRational::new(num, den)))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn recip(&self) -> CoreResult<Self> {
        if self.is_zero() {
            return Err(CoreError::DivisionByZero);
        }
        Ok(Rational(self.0.recip()))
    }

    pub fn div(&self, rhs: &Rational) -> CoreResult<Self> {
        if rhs.is_zero() {
            return Err(CoreError::DivisionByZero);
        }
        Ok(Rational(&self.0 / &rhs.0))
    }

    /// Integer power; negative exponents require a nonzero base.
    pub fn pow(&self, exp: i64) -> CoreResult<Self> {
        if exp >= 0 {
            Ok(Rational(self.0.pow(exp as i32)))
        } else {
            if self.is_zero() {
                return Err(CoreError::DivisionByZero);
            }
            Ok(Rational(self.0.pow(exp as i32)))
        }
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    /// Best-effort conversion for the numeric oracles.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().expect("rational out of f64 range")
    }

    /// `n!` as a rational, for combinatorial weights.
    pub fn factorial(n: u64) -> Self {
        let mut acc = BigInt::one();
        for k in 2..=n {
            acc *= BigInt::from(k);
        }
        Rational(BigRational::from_integer(acc))
    }

    /// Generalized binomial coefficient `C(m, j)` with integer (possibly
    /// negative) upper argument: `m (m-1) ... (m-j+1) / j!`.
    pub fn binomial(m: i64, j: u64) -> Self {
        let mut num = BigInt::one();
        for t in 0..j {
            num *= BigInt::from(m - t as i64);
        }
        let mut den = BigInt::one();
        for t in 2..=j {
            den *= BigInt::from(t);
        }
        Rational(BigRational::new(num, den))
    }
}

impl From<i64> for Rational {
    fn from(n: i64) -> Self {
        Rational::from_int(n)
    }
}

macro_rules! rational_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl<'a> $trait<&'a Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                Rational(&self.0 $op &rhs.0)
            }
        }
        impl $trait<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational(self.0 $op rhs.0)
            }
        }
    };
}

rational_binop!(Add, add, +);
rational_binop!(Sub, sub, -);
rational_binop!(Mul, mul, *);

impl AddAssign<&Rational> for Rational {
    fn add_assign(&mut self, rhs: &Rational) {
        self.0 += &rhs.0;
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

// ---------------------------------------------------------------------------
// HbarSeries
// ---------------------------------------------------------------------------

/// Laurent series in `h` with explicit truncation bookkeeping.
///
/// `coeffs[i]` is the coefficient of `h^(val + i)`.  Both ends of `coeffs`
/// are nonzero; the zero series has empty `coeffs` and `val == 0`.
/// `trunc == None` means the series is exact (a Laurent polynomial);
/// `trunc == Some(n)` means coefficients of `h^k` for `k > n` are unknown.
///
/// Equality is structural (coefficients and truncation order both count);
/// operations never silently extend precision.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HbarSeries {
    val: i64,
    coeffs: Vec<Rational>,
    trunc: Option<i64>,
}

impl HbarSeries {
    pub fn zero() -> Self {
        HbarSeries { val: 0, coeffs: Vec::new(), trunc: None }
    }

    pub fn zero_truncated(order: i64) -> Self {
        HbarSeries { val: 0, coeffs: Vec::new(), trunc: Some(order) }
    }

    pub fn one() -> Self {
        HbarSeries::from_rational(Rational::one())
    }

    pub fn from_rational(r: Rational) -> Self {
        if r.is_zero() {
            HbarSeries::zero()
        } else {
            HbarSeries { val: 0, coeffs: vec![r], trunc: None }
        }
    }

    pub fn from_int(n: i64) -> Self {
        HbarSeries::from_rational(Rational::from_int(n))
    }

    /// The generator `h`.
    pub fn hbar() -> Self {
        HbarSeries::monomial(1, Rational::one())
    }

    /// `r * h^exp`.
    pub fn monomial(exp: i64, r: Rational) -> Self {
        if r.is_zero() {
            HbarSeries::zero()
        } else {
            HbarSeries { val: exp, coeffs: vec![r], trunc: None }
        }
    }

    /// Build from a coefficient window starting at `h^val`; normalizes.
    pub fn from_coeffs(val: i64, coeffs: Vec<Rational>, trunc: Option<i64>) -> Self {
        let mut s = HbarSeries { val, coeffs, trunc };
        s.normalize();
        s
    }

    fn normalize(&mut self) {
        if let Some(n) = self.trunc {
            // Drop coefficients beyond the declared precision.
            while self.val + self.coeffs.len() as i64 - 1 > n && !self.coeffs.is_empty() {
                self.coeffs.pop();
            }
        }
        while self.coeffs.last().is_some_and(Rational::is_zero) {
            self.coeffs.pop();
        }
        let lead = self.coeffs.iter().take_while(|c| c.is_zero()).count();
        if lead > 0 {
            self.coeffs.drain(..lead);
            self.val += lead as i64;
        }
        if self.coeffs.is_empty() {
            self.val = 0;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.trunc.is_none()
    }

    /// Lowest exponent with nonzero coefficient; `None` for the zero series.
    pub fn valuation(&self) -> Option<i64> {
        if self.is_zero() {
            None
        } else {
            Some(self.val)
        }
    }

    pub fn truncation(&self) -> Option<i64> {
        self.trunc
    }

    /// Coefficient of `h^exp` (zero outside the stored window).  Unknown
    /// coefficients beyond the truncation order also read as zero; use
    /// [`HbarSeries::known_coeff`] when the distinction matters.
    pub fn coeff(&self, exp: i64) -> Rational {
        let i = exp - self.val;
        if i < 0 || i >= self.coeffs.len() as i64 {
            Rational::zero()
        } else {
            self.coeffs[i as usize].clone()
        }
    }

    /// Coefficient of `h^exp`, or `None` if it lies beyond the truncation.
    pub fn known_coeff(&self, exp: i64) -> Option<Rational> {
        match self.trunc {
            Some(n) if exp > n => None,
            _ => Some(self.coeff(exp)),
        }
    }

    /// Iterate `(exponent, coefficient)` over nonzero coefficients, ascending.
    pub fn iter(&self) -> impl Iterator<Item = (i64, &Rational)> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(move |(i, c)| (self.val + i as i64, c))
    }

    fn min_trunc(a: Option<i64>, b: Option<i64>) -> Option<i64> {
        match (a, b) {
            (None, t) | (t, None) => t,
            (Some(x), Some(y)) => Some(x.min(y)),
        }
    }

    pub fn add(&self, rhs: &HbarSeries) -> HbarSeries {
        let trunc = Self::min_trunc(self.trunc, rhs.trunc);
        if self.is_zero() {
            let mut r = rhs.clone();
            r.trunc = trunc;
            r.normalize();
            return r;
        }
        if rhs.is_zero() {
            let mut r = self.clone();
            r.trunc = trunc;
            r.normalize();
            return r;
        }
        let lo = self.val.min(rhs.val);
        let hi = (self.val + self.coeffs.len() as i64).max(rhs.val + rhs.coeffs.len() as i64);
        let mut coeffs = vec![Rational::zero(); (hi - lo) as usize];
        for (e, c) in self.iter() {
            coeffs[(e - lo) as usize] += c;
        }
        for (e, c) in rhs.iter() {
            coeffs[(e - lo) as usize] += c;
        }
        HbarSeries::from_coeffs(lo, coeffs, trunc)
    }

    pub fn sub(&self, rhs: &HbarSeries) -> HbarSeries {
        self.add(&rhs.neg())
    }

    pub fn neg(&self) -> HbarSeries {
        HbarSeries {
            val: self.val,
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
            trunc: self.trunc,
        }
    }

    /// Product.  Truncation follows the conservative rule
    /// `min(N1 + v2, N2 + v1)`; a factor that is exactly zero yields exactly
    /// zero, while a zero-to-precision factor keeps its (shifted) precision.
    pub fn mul(&self, rhs: &HbarSeries) -> HbarSeries {
        let trunc = match (self.trunc, rhs.trunc) {
            (None, None) => None,
            _ => {
                // min(N1 + v2, N2 + v1), treating an exact factor as
                // infinitely precise.  A factor that is zero to its precision
                // has no valuation; its own truncation stands in (the product
                // of an O(h^{N+1}) unknown with the other factor is unknown
                // from order N + v onward).
                let b1 = self.trunc.map(|n1| n1 + rhs.valuation().unwrap_or(0));
                let b2 = rhs.trunc.map(|n2| n2 + self.valuation().unwrap_or(0));
                Self::min_trunc(b1, b2)
            }
        };
        if self.is_zero() || rhs.is_zero() {
            return match trunc {
                None => HbarSeries::zero(),
                Some(n) => HbarSeries::zero_truncated(n),
            };
        }
        let n = self.coeffs.len() + rhs.coeffs.len() - 1;
        let mut coeffs = vec![Rational::zero(); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                if b.is_zero() {
                    continue;
                }
                coeffs[i + j] += &(a * b);
            }
        }
        HbarSeries::from_coeffs(self.val + rhs.val, coeffs, trunc)
    }

    pub fn scale(&self, r: &Rational) -> HbarSeries {
        if r.is_zero() {
            return match self.trunc {
                None => HbarSeries::zero(),
                Some(n) => HbarSeries::zero_truncated(n),
            };
        }
        HbarSeries {
            val: self.val,
            coeffs: self.coeffs.iter().map(|c| c * r).collect(),
            trunc: self.trunc,
        }
    }

    /// Multiply by the exact monomial `h^k`.
    pub fn shift(&self, k: i64) -> HbarSeries {
        HbarSeries {
            val: self.val + k,
            coeffs: self.coeffs.clone(),
            trunc: self.trunc.map(|n| n + k),
        }
    }

    /// Forget coefficients beyond `h^order`.
    pub fn truncate(&self, order: i64) -> HbarSeries {
        let mut s = self.clone();
        s.trunc = Some(match s.trunc {
            Some(n) => n.min(order),
            None => order,
        });
        s.normalize();
        s
    }

    /// Multiplicative inverse.  Exact monomials invert exactly; otherwise the
    /// result is a truncated series.  For exact multi-term input the working
    /// order `fallback_order` bounds the expansion (measured relative to the
    /// leading term, i.e. the result carries `fallback_order - 2 v` more
    /// correct coefficients than its valuation `-v`).
    pub fn invert(&self, fallback_order: i64) -> CoreResult<HbarSeries> {
        if self.is_zero() {
            return Err(CoreError::DivisionByZero);
        }
        let v = self.val;
        let c0 = self.coeffs[0].recip()?;
        if self.coeffs.len() == 1 {
            return Ok(HbarSeries {
                val: -v,
                coeffs: vec![c0],
                trunc: self.trunc.map(|n| n - 2 * v),
            });
        }
        // Relative precision: number of known coefficients past the leading one.
        let rel = match self.trunc {
            Some(n) => n - v,
            None => fallback_order.max(0),
        };
        // x = self / (c0^-1 h^v) - 1 has positive relative valuation.
        let mut inv_rel = vec![Rational::zero(); rel as usize + 1];
        inv_rel[0] = Rational::one();
        // inv_rel solves (sum_j a_j t^j) * (sum_i b_i t^i) = 1 with a_0 = 1,
        // where a_j = coeffs[j] / coeffs[0]:  b_k = -sum_{j=1..k} a_j b_{k-j}.
        let a: Vec<Rational> = (0..=rel as usize)
            .map(|j| {
                if j < self.coeffs.len() {
                    self.coeffs[j].div(&self.coeffs[0]).expect("leading coeff nonzero")
                } else {
                    Rational::zero()
                }
            })
            .collect();
        for k in 1..=rel as usize {
            let mut acc = Rational::zero();
            for j in 1..=k {
                if !a[j].is_zero() && !inv_rel[k - j].is_zero() {
                    acc += &(&a[j] * &inv_rel[k - j]);
                }
            }
            inv_rel[k] = -acc;
        }
        let coeffs = inv_rel.into_iter().map(|b| &b * &c0).collect();
        Ok(HbarSeries::from_coeffs(-v, coeffs, Some(rel - v)))
    }

    /// `self / rhs` at the given fallback working order.
    pub fn div(&self, rhs: &HbarSeries, fallback_order: i64) -> CoreResult<HbarSeries> {
        Ok(self.mul(&rhs.invert(fallback_order)?))
    }

    pub fn pow(&self, exp: u32) -> HbarSeries {
        let mut acc = HbarSeries::one();
        for _ in 0..exp {
            acc = acc.mul(self);
        }
        acc
    }

    /// Substitute `h -> x` into the underlying Laurent polynomial (numeric
    /// oracle support; requires an exact series with nonnegative valuation).
    pub fn eval_f64(&self, x: f64) -> f64 {
        self.iter().map(|(e, c)| c.to_f64() * x.powi(e as i32)).sum()
    }
}

/// Binary series operation selector for the shared arithmetic entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesOp {
    Add,
    Mul,
    /// Invert the first operand, then multiply by the second (i.e. `b / a`).
    InvertFirst,
}

/// Arithmetic on truncated series through one dispatch point, as used by the
/// self-test driver.  `fallback_order` only matters for `InvertFirst` on
/// exact input.
pub fn series_arith(
    a: &HbarSeries,
    b: &HbarSeries,
    op: SeriesOp,
    fallback_order: i64,
) -> CoreResult<HbarSeries> {
    match op {
        SeriesOp::Add => Ok(a.add(b)),
        SeriesOp::Mul => Ok(a.mul(b)),
        SeriesOp::InvertFirst => Ok(a.invert(fallback_order)?.mul(b)),
    }
}

impl fmt::Display for HbarSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<(Rational, String)> = self
            .iter()
            .map(|(e, c)| (c.clone(), hbar_symbol(e)))
            .collect();
        write!(f, "{}", format_terms(&terms))
    }
}

impl fmt::Debug for HbarSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")?;
        if let Some(n) = self.trunc {
            write!(f, " + O(h^{})", n + 1)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// UPolynomial
// ---------------------------------------------------------------------------

/// Laurent polynomial in the degree-2 equivariant variable `u` over
/// [`HbarSeries`].  No zero coefficients are stored.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct UPolynomial {
    terms: std::collections::BTreeMap<i64, HbarSeries>,
}

impl UPolynomial {
    pub fn zero() -> Self {
        UPolynomial::default()
    }

    pub fn one() -> Self {
        UPolynomial::monomial(0, HbarSeries::one())
    }

    /// `c * u^k`.
    pub fn monomial(k: i64, c: HbarSeries) -> Self {
        let mut p = UPolynomial::default();
        if !c.is_zero() {
            p.terms.insert(k, c);
        }
        p
    }

    pub fn from_series(c: HbarSeries) -> Self {
        UPolynomial::monomial(0, c)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, k: i64) -> HbarSeries {
        self.terms.get(&k).cloned().unwrap_or_else(HbarSeries::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &HbarSeries)> {
        self.terms.iter().map(|(k, c)| (*k, c))
    }

    pub fn add_term(&mut self, k: i64, c: &HbarSeries) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(k).or_insert_with(HbarSeries::zero);
        *entry = entry.add(c);
        if entry.is_zero() {
            self.terms.remove(&k);
        }
    }

    pub fn add(&self, rhs: &UPolynomial) -> UPolynomial {
        let mut out = self.clone();
        for (k, c) in rhs.iter() {
            out.add_term(k, c);
        }
        out
    }

    pub fn neg(&self) -> UPolynomial {
        UPolynomial {
            terms: self.terms.iter().map(|(k, c)| (*k, c.neg())).collect(),
        }
    }

    pub fn sub(&self, rhs: &UPolynomial) -> UPolynomial {
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &UPolynomial) -> UPolynomial {
        let mut out = UPolynomial::zero();
        for (k1, c1) in self.iter() {
            for (k2, c2) in rhs.iter() {
                out.add_term(k1 + k2, &c1.mul(c2));
            }
        }
        out
    }

    pub fn scale(&self, c: &HbarSeries) -> UPolynomial {
        let mut out = UPolynomial::zero();
        for (k, v) in self.iter() {
            out.add_term(k, &v.mul(c));
        }
        out
    }
}

impl fmt::Display for UPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Flatten to monomials h^a u^b ordered by (u ascending, h ascending).
        let mut terms: Vec<(Rational, String)> = Vec::new();
        for (k, c) in self.iter() {
            for (e, r) in c.iter() {
                terms.push((r.clone(), join_symbols(&[hbar_symbol(e), u_symbol(k)])));
            }
        }
        write!(f, "{}", format_terms(&terms))
    }
}

impl fmt::Debug for UPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

// ---------------------------------------------------------------------------
// Canonical term printing
// ---------------------------------------------------------------------------

pub(crate) fn hbar_symbol(exp: i64) -> String {
    match exp {
        0 => String::new(),
        1 => "h".to_string(),
        e => format!("h^{e}"),
    }
}

pub(crate) fn u_symbol(exp: i64) -> String {
    match exp {
        0 => String::new(),
        1 => "u".to_string(),
        e => format!("u^{e}"),
    }
}

/// Join nonempty symbol factors with `*`.
pub(crate) fn join_symbols(parts: &[String]) -> String {
    let nonempty: Vec<&str> = parts.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
    nonempty.join("*")
}

/// Render a sum of `(coefficient, monomial)` terms with canonical sign and
/// coefficient conventions:  unit coefficients are dropped in front of a
/// nonempty monomial, the leading minus is attached, and subsequent terms are
/// joined with ` + ` / ` - `.
pub(crate) fn format_terms(terms: &[(Rational, String)]) -> String {
    let mut out = String::new();
    let mut first = true;
    for (coeff, mono) in terms {
        if coeff.is_zero() {
            continue;
        }
        let neg = coeff.is_negative();
        let mag = coeff.abs();
        if first {
            if neg {
                out.push('-');
            }
            first = false;
        } else if neg {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        if mono.is_empty() {
            out.push_str(&mag.to_string());
        } else if mag.is_one() {
            out.push_str(mono);
        } else {
            out.push_str(&format!("{mag}*{mono}"));
        }
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n, d).unwrap()
    }

    #[test]
    fn rational_basics() {
        assert_eq!(q(2, 4), q(1, 2));
        assert_eq!(q(1, -2), q(-1, 2));
        assert_eq!(q(-3, 7).to_string(), "-3/7");
        assert_eq!((&q(1, 2) + &q(1, 3)).to_string(), "5/6");
        assert_eq!((&q(2, 3) * &q(3, 2)), Rational::one());
        assert!(Rational::new(1, 0).is_err());
        assert_eq!(Rational::factorial(5), Rational::from_int(120));
        assert_eq!(Rational::binomial(-1, 3), q(-1, 1));
        assert_eq!(Rational::binomial(4, 2), q(6, 1));
        assert_eq!(Rational::binomial(0, 0), Rational::one());
    }

    #[test]
    fn series_product_truncates() {
        // (1 + h)(1 - h) at truncation order 4 -> 1 - h^2, truncation 4.
        let a = HbarSeries::from_coeffs(
            0,
            vec![Rational::one(), Rational::one()],
            Some(4),
        );
        let b = HbarSeries::from_coeffs(
            0,
            vec![Rational::one(), -Rational::one()],
            Some(4),
        );
        let p = a.mul(&b);
        assert_eq!(p.coeff(0), Rational::one());
        assert_eq!(p.coeff(1), Rational::zero());
        assert_eq!(p.coeff(2), q(-1, 1));
        assert_eq!(p.truncation(), Some(4));
    }

    #[test]
    fn series_inversion() {
        // invert(1 - h) at order 3 -> 1 + h + h^2 + h^3.
        let a = HbarSeries::from_coeffs(
            0,
            vec![Rational::one(), -Rational::one()],
            Some(3),
        );
        let inv = a.invert(DEFAULT_HBAR_ORDER).unwrap();
        for k in 0..=3 {
            assert_eq!(inv.coeff(k), Rational::one(), "coeff h^{k}");
        }
        assert_eq!(inv.truncation(), Some(3));

        // h^-1 * h = 1 exactly.
        let h = HbarSeries::hbar();
        let hinv = h.invert(DEFAULT_HBAR_ORDER).unwrap();
        assert!(hinv.is_exact());
        assert_eq!(hinv.mul(&h), HbarSeries::one());
    }

    #[test]
    fn series_truncation_rule() {
        // val 2 trunc 5  times  val -1 trunc 4:  min(5 + -1, 4 + 2) = 4.
        let a = HbarSeries::from_coeffs(2, vec![Rational::one(), Rational::one()], Some(5));
        let b = HbarSeries::from_coeffs(-1, vec![Rational::one()], Some(4));
        assert_eq!(a.mul(&b).truncation(), Some(4));
        // Addition truncates to the tighter bound.
        assert_eq!(a.add(&b).truncation(), Some(4));
        // Exact times truncated: bound shifts by the exact factor's valuation.
        let h2 = HbarSeries::monomial(2, Rational::one());
        assert_eq!(b.mul(&h2).truncation(), Some(6));
    }

    #[test]
    fn series_invert_roundtrip_with_truncation() {
        let a = HbarSeries::from_coeffs(
            -1,
            vec![q(2, 1), q(1, 3), Rational::one(), q(-1, 2)],
            Some(4),
        );
        let inv = a.invert(DEFAULT_HBAR_ORDER).unwrap();
        let prod = a.mul(&inv);
        // a * a^-1 = 1 through the retained precision.
        assert_eq!(prod.coeff(0), Rational::one());
        let n = prod.truncation().unwrap();
        for k in 1..=n {
            assert_eq!(prod.coeff(k), Rational::zero(), "coeff h^{k}");
        }
    }

    #[test]
    fn series_display() {
        let s = HbarSeries::from_coeffs(0, vec![Rational::one(), q(1, 2)], None);
        assert_eq!(s.to_string(), "1 + 1/2*h");
        assert_eq!(HbarSeries::zero().to_string(), "0");
        assert_eq!(HbarSeries::monomial(-2, q(-3, 7)).to_string(), "-3/7*h^-2");
        assert_eq!(HbarSeries::hbar().neg().to_string(), "-h");
    }

    #[test]
    fn upoly_display_and_ops() {
        // h*u^-1 + u
        let mut p = UPolynomial::zero();
        p.add_term(-1, &HbarSeries::hbar());
        p.add_term(1, &HbarSeries::one());
        assert_eq!(p.to_string(), "h*u^-1 + u");

        let u = UPolynomial::monomial(1, HbarSeries::one());
        let uinv = UPolynomial::monomial(-1, HbarSeries::one());
        assert_eq!(u.mul(&uinv), UPolynomial::one());
        assert_eq!(p.sub(&p), UPolynomial::zero());
    }

    #[test]
    fn ring_axioms_spot() {
        // Associativity / distributivity on a fixed triple of messy series.
        let a = HbarSeries::from_coeffs(-2, vec![q(1, 2), q(0, 1), q(3, 1)], Some(4));
        let b = HbarSeries::from_coeffs(0, vec![q(-2, 3), q(5, 1)], None);
        let c = HbarSeries::from_coeffs(1, vec![q(7, 2), q(1, 1), q(-1, 4)], Some(6));
        assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
        assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
        assert_eq!(a.add(&b), b.add(&a));
    }
}
