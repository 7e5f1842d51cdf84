//! Fedosov-equation verifier on the formal Weyl bundle, plus the numeric
//! heat-kernel oracle behind the sawtooth propagator.
//!
//! Forms here live on a formal base `R^d` with coordinates `x_1..x_d` and take
//! coefficients in `C[x] (x) W_2n`: every term is an `x`-monomial times a basis
//! wedge `dx^{i_1} ^ ... ^ dx^{i_k}` times a [`WeylElement`] in the fiber
//! variables `y = (p, q)`.  The smooth setting of Fedosov's construction is
//! replaced by polynomial data truncated in `x`-degree, `y`-degree, and
//! `hbar`-order; the verifier checks the flatness equation
//!
//! ```text
//!     nabla(gamma) + (1/2h)[gamma, gamma]_* + R_nabla  =  omega_h ,
//!     nabla := d_x + (1/h)[Gamma, -]_*
//! ```
//!
//! termwise up to those truncations and classifies the residual: zero (pass),
//! nonzero but central (`y`-degree 0 — the flatness consequence `D^2 =
//! (1/h)[omega_h, -] = 0` still holds), or non-central (genuine failure,
//! reported per offending term).

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CoreError, CoreResult};
use crate::scalar::{HbarSeries, Rational};
use crate::weyl::{Monomial, PoissonTensor, WeylElement};

// ---------------------------------------------------------------------------
// Forms with Weyl-algebra coefficients
// ---------------------------------------------------------------------------

/// A differential form on the formal base with coefficients in
/// `C[x_1..x_d] (x) W_2n`.  Keys are `(x-monomial, dx-subset bitmask)`; the
/// mask's bit `a` stands for `dx^{a+1}`, and wedge factors are stored in
/// ascending index order (signs from sorting are absorbed when terms are
/// added).
#[derive(Clone, PartialEq, Eq)]
pub struct WeylForm {
    d: usize,
    n: usize,
    terms: BTreeMap<(Monomial, u32), WeylElement>,
}

/// Parity of the permutation that merges the ascending wedge `m1` with the
/// ascending wedge `m2` (disjoint bitmasks) into one ascending wedge: counts
/// the pairs `i in m1`, `j in m2` with `i > j`.
fn shuffle_sign(m1: u32, m2: u32) -> bool {
    let mut swaps = 0u32;
    let mut rest = m2;
    while rest != 0 {
        let j = rest.trailing_zeros();
        swaps += (m1 >> (j + 1)).count_ones();
        rest &= rest - 1;
    }
    swaps % 2 == 1
}

fn mask_name(mask: u32) -> String {
    if mask == 0 {
        return "1".to_string();
    }
    let mut parts = Vec::new();
    for a in 0..32 {
        if mask & (1 << a) != 0 {
            parts.push(format!("dx{}", a + 1));
        }
    }
    parts.join("^")
}

fn x_monomial_name(m: &Monomial) -> String {
    if m.is_constant() {
        return "1".to_string();
    }
    let mut parts = Vec::new();
    for (a, &e) in m.exps().iter().enumerate() {
        if e == 1 {
            parts.push(format!("x{}", a + 1));
        } else if e > 1 {
            parts.push(format!("x{}^{}", a + 1, e));
        }
    }
    parts.join("*")
}

impl WeylForm {
    pub fn zero(d: usize, n: usize) -> Self {
        WeylForm { d, n, terms: BTreeMap::new() }
    }

    pub fn base_dim(&self) -> usize {
        self.d
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

    /// Add `coeff * x_mono * dx^mask`.  The mask must fit in the base
    /// dimension and the coefficient must live in the matching Weyl algebra.
    pub fn add_term(&mut self, x: Monomial, mask: u32, coeff: &WeylElement) -> CoreResult<()> {
        if x.exps().len() != self.d {
            return Err(CoreError::dim(format!(
                "x-monomial has {} exponents, base dimension is {}",
                x.exps().len(),
                self.d
            )));
        }
        if self.d < 32 && mask >= 1u32 << self.d {
            return Err(CoreError::dim(format!(
                "dx-mask {mask:#b} references coordinates beyond base dimension {}",
                self.d
            )));
        }
        if coeff.n() != self.n {
            return Err(CoreError::dim("coefficient lives in a different Weyl algebra"));
        }
        self.add_term_unchecked(x, mask, coeff);
        Ok(())
    }

    fn add_term_unchecked(&mut self, x: Monomial, mask: u32, coeff: &WeylElement) {
        if coeff.is_zero() {
            return;
        }
        let slot = self
            .terms
            .entry((x, mask))
            .or_insert_with(|| WeylElement::zero(self.n));
        *slot = slot.add(coeff);
        if slot.is_zero() {
            // `slot` borrowed from the map; re-look-up cheaply by key clone.
            let key = self
                .terms
                .iter()
                .find(|(_, w)| w.is_zero())
                .map(|(k, _)| k.clone());
            if let Some(k) = key {
                self.terms.remove(&k);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, u32, &WeylElement)> {
        self.terms.iter().map(|((x, mask), w)| (x, *mask, w))
    }

    pub fn add(&self, rhs: &WeylForm) -> CoreResult<WeylForm> {
        if self.d != rhs.d || self.n != rhs.n {
            return Err(CoreError::dim("form addition requires matching base and fiber"));
        }
        let mut out = self.clone();
        for ((x, mask), w) in &rhs.terms {
            out.add_term_unchecked(x.clone(), *mask, w);
        }
        Ok(out)
    }

    pub fn neg(&self) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            out.terms.insert((x.clone(), *mask), w.neg());
        }
        out
    }

    pub fn sub(&self, rhs: &WeylForm) -> CoreResult<WeylForm> {
        self.add(&rhs.neg())
    }

    /// Multiply every coefficient by a fixed scalar series (used for `1/h`
    /// and `1/2h` prefactors; negative `hbar` exponents are legal).
    pub fn scale(&self, c: &HbarSeries) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            out.add_term_unchecked(x.clone(), *mask, &w.scale(c));
        }
        out
    }

    /// The set of wedge degrees present, ascending.
    pub fn form_degrees(&self) -> Vec<u32> {
        let mut degs: Vec<u32> = self.terms.keys().map(|(_, m)| m.count_ones()).collect();
        degs.sort_unstable();
        degs.dedup();
        degs
    }

    /// True when every term has wedge degree `deg` (vacuously for 0).
    pub fn is_homogeneous(&self, deg: u32) -> bool {
        self.terms.keys().all(|(_, m)| m.count_ones() == deg)
    }

    /// Exterior derivative in the base coordinates:
    /// `d(f dx^S) = sum_a d_{x_a} f . dx^a ^ dx^S`.
    pub fn d_x(&self) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            for a in 0..self.d {
                let e = x.exps()[a];
                if e == 0 || mask & (1 << a) != 0 {
                    continue;
                }
                let mut exps = x.exps().to_vec();
                exps[a] -= 1;
                // Sort dx^a past the wedge factors below position a.
                let below = (mask & ((1u32 << a) - 1)).count_ones();
                let mut factor = Rational::from_int(e as i64);
                if below % 2 == 1 {
                    factor = -factor;
                }
                let dw = w.scale(&HbarSeries::from_rational(factor));
                out.add_term_unchecked(Monomial::new(exps), mask | (1 << a), &dw);
            }
        }
        out
    }

    /// Graded wedge product with the Moyal star on coefficients.
    pub fn wedge_star(&self, rhs: &WeylForm, pi: &PoissonTensor) -> CoreResult<WeylForm> {
        if self.d != rhs.d || self.n != rhs.n {
            return Err(CoreError::dim("wedge product requires matching base and fiber"));
        }
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x1, m1), w1) in &self.terms {
            for ((x2, m2), w2) in &rhs.terms {
                if m1 & m2 != 0 {
                    continue;
                }
                let mut prod = w1.star(w2, pi)?;
                if shuffle_sign(*m1, *m2) {
                    prod = prod.neg();
                }
                out.add_term_unchecked(x1.mul(x2), m1 | m2, &prod);
            }
        }
        Ok(out)
    }

    /// Graded normalized star commutator: the form-level version of
    /// `(1/h)[A, B] = (A ^* B - (-1)^{|A||B|} B ^* A) / h`.
    ///
    /// Coefficients carry form degree 0, so the only Koszul data is the dx
    /// shuffle, and `shuffle(m2, m1) = (-1)^{|m1||m2|} shuffle(m1, m2)` for
    /// disjoint masks.  The graded commutator therefore reduces termwise to
    /// the shuffle sign times [`WeylElement::star_commutator`] (which carries
    /// the `1/h` normalization already) — in particular `[gamma, gamma]` does
    /// NOT vanish for an odd form.
    pub fn graded_star_commutator(
        &self,
        rhs: &WeylForm,
        pi: &PoissonTensor,
    ) -> CoreResult<WeylForm> {
        if self.d != rhs.d || self.n != rhs.n {
            return Err(CoreError::dim("commutator requires matching base and fiber"));
        }
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x1, m1), w1) in &self.terms {
            for ((x2, m2), w2) in &rhs.terms {
                if m1 & m2 != 0 {
                    continue;
                }
                let mut comm = w1.star_commutator(w2, pi)?;
                if shuffle_sign(*m1, *m2) {
                    comm = comm.neg();
                }
                out.add_term_unchecked(x1.mul(x2), m1 | m2, &comm);
            }
        }
        Ok(out)
    }

    /// Part with `y`-degree 0 coefficients (the center of the Weyl fiber).
    pub fn central_part(&self) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            let c = w.constant_term();
            if !c.is_zero() {
                out.add_term_unchecked(x.clone(), *mask, &WeylElement::constant(self.n, c));
            }
        }
        out
    }

    /// Complement of [`WeylForm::central_part`].
    pub fn noncentral_part(&self) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            out.add_term_unchecked(x.clone(), *mask, &w.without_constant());
        }
        out
    }

    /// Drop terms of `x`-degree above `order`.
    pub fn truncate_x(&self, order: u32) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            if x.degree() <= order {
                out.add_term_unchecked(x.clone(), *mask, w);
            }
        }
        out
    }

    /// Drop coefficient monomials of `y`-degree above `order`.
    pub fn truncate_y(&self, order: u32) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            let mut kept = WeylElement::zero(self.n);
            for (m, c) in w.terms() {
                if m.degree() <= order {
                    kept.add_term(m.clone(), c);
                }
            }
            out.add_term_unchecked(x.clone(), *mask, &kept);
        }
        out
    }

    /// Truncate every coefficient series at `hbar^order`.
    pub fn truncate_hbar(&self, order: i64) -> WeylForm {
        let mut out = WeylForm::zero(self.d, self.n);
        for ((x, mask), w) in &self.terms {
            out.add_term_unchecked(x.clone(), *mask, &w.truncate(order));
        }
        out
    }
}

impl fmt::Display for WeylForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for ((x, mask), w) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({w})")?;
            if !x.is_constant() {
                write!(f, "*{}", x_monomial_name(x))?;
            }
            if *mask != 0 {
                write!(f, " {}", mask_name(*mask))?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for WeylForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

// ---------------------------------------------------------------------------
// Fedosov data and verification
// ---------------------------------------------------------------------------

/// Input to the flatness check: the connection 1-form `Gamma`, the sought
/// solution 1-form `gamma`, the curvature 2-form `R_nabla`, and the candidate
/// central 2-form `omega_h`, together with the truncation orders the
/// comparison is performed under.
#[derive(Clone)]
pub struct FedosovData {
    pub connection: WeylForm,
    pub gamma: WeylForm,
    pub curvature: WeylForm,
    pub omega: WeylForm,
    pub x_order: u32,
    pub y_order: u32,
    pub hbar_order: i64,
}

impl FedosovData {
    /// Validates shapes: `Gamma`, `gamma` homogeneous 1-forms; `R_nabla`,
    /// `omega_h` homogeneous 2-forms; `omega_h` central (`y`-degree 0); all
    /// four over the same base and fiber.
    pub fn new(
        connection: WeylForm,
        gamma: WeylForm,
        curvature: WeylForm,
        omega: WeylForm,
        x_order: u32,
        y_order: u32,
        hbar_order: i64,
    ) -> CoreResult<Self> {
        let d = gamma.base_dim();
        let n = gamma.n();
        for (name, form) in [
            ("Gamma", &connection),
            ("gamma", &gamma),
            ("R_nabla", &curvature),
            ("omega_h", &omega),
        ] {
            if form.base_dim() != d || form.n() != n {
                return Err(CoreError::dim(format!(
                    "{name} lives over a different base/fiber than gamma"
                )));
            }
        }
        if !connection.is_homogeneous(1) {
            return Err(CoreError::invalid("Gamma must be a 1-form"));
        }
        if !gamma.is_homogeneous(1) {
            return Err(CoreError::invalid("gamma must be a 1-form"));
        }
        if !curvature.is_homogeneous(2) {
            return Err(CoreError::invalid("R_nabla must be a 2-form"));
        }
        if !omega.is_homogeneous(2) {
            return Err(CoreError::invalid("omega_h must be a 2-form"));
        }
        if !omega.noncentral_part().is_zero() {
            return Err(CoreError::invalid(
                "omega_h must have central (y-degree 0) coefficients",
            ));
        }
        Ok(FedosovData { connection, gamma, curvature, omega, x_order, y_order, hbar_order })
    }
}

/// Outcome of [`fedosov_verify`], ordered from best to worst.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FedosovStatus {
    /// Residual zero up to the truncation orders: the equation holds.
    Pass,
    /// Residual nonzero but central: the candidate `omega_h` is off, yet
    /// `D^2 = (1/h)[residual + omega_h, -] = 0` still holds.
    CentralResidual,
    /// Residual has `y`-dependent coefficients: `D` is not flat.
    NonCentralResidual,
}

/// One offending location of a non-central residual, in printable form.
#[derive(Clone, Debug)]
pub struct ResidualTerm {
    /// Base monomial, e.g. `x1^2*x3` (or `1`).
    pub x_monomial: String,
    /// Wedge frame, e.g. `dx1^dx2`.
    pub frame: String,
    /// The non-central coefficient at that location.
    pub coefficient: String,
}

/// Verification result: the status, the full residual
/// `LHS - omega_h` (truncated), and the localized non-central terms.
#[derive(Clone)]
pub struct FedosovReport {
    pub status: FedosovStatus,
    pub residual: WeylForm,
    pub noncentral_terms: Vec<ResidualTerm>,
}

impl FedosovReport {
    pub fn passed(&self) -> bool {
        self.status == FedosovStatus::Pass
    }
}

impl fmt::Display for FedosovReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.status {
            FedosovStatus::Pass => write!(f, "pass: Fedosov equation holds up to truncation"),
            FedosovStatus::CentralResidual => {
                write!(f, "fail (central residual): {}", self.residual)
            }
            FedosovStatus::NonCentralResidual => {
                writeln!(f, "fail (non-central residual):")?;
                for t in &self.noncentral_terms {
                    writeln!(f, "  at {} {}: {}", t.x_monomial, t.frame, t.coefficient)?;
                }
                Ok(())
            }
        }
    }
}

/// Checks `d_x gamma + (1/h)[Gamma, gamma] + (1/2h)[gamma, gamma] + R_nabla =
/// omega_h` termwise up to the truncation orders in `data`, and classifies
/// the residual by centrality.  The `1/h` prefactors are exact because star
/// commutators have `hbar`-valuation >= 1; they are built into
/// [`WeylForm::graded_star_commutator`].
pub fn fedosov_verify(data: &FedosovData, pi: &PoissonTensor) -> CoreResult<FedosovReport> {
    if pi.n() != data.gamma.n() {
        return Err(CoreError::dim("Poisson tensor rank does not match fiber"));
    }
    let half = HbarSeries::from_rational(Rational::new(1, 2).expect("2 != 0"));

    let conn_term = data.connection.graded_star_commutator(&data.gamma, pi)?;
    let nabla_gamma = data.gamma.d_x().add(&conn_term)?;
    let self_term = data
        .gamma
        .graded_star_commutator(&data.gamma, pi)?
        .scale(&half);
    let lhs = nabla_gamma.add(&self_term)?.add(&data.curvature)?;

    let clip = |form: &WeylForm| {
        form.truncate_x(data.x_order)
            .truncate_y(data.y_order)
            .truncate_hbar(data.hbar_order)
    };
    let residual = clip(&lhs).sub(&clip(&data.omega))?;

    let noncentral = residual.noncentral_part();
    let status = if residual.is_zero() {
        FedosovStatus::Pass
    } else if noncentral.is_zero() {
        FedosovStatus::CentralResidual
    } else {
        FedosovStatus::NonCentralResidual
    };
    let noncentral_terms = noncentral
        .terms()
        .map(|(x, mask, w)| ResidualTerm {
            x_monomial: x_monomial_name(x),
            frame: mask_name(mask),
            coefficient: w.to_string(),
        })
        .collect();
    Ok(FedosovReport { status, residual, noncentral_terms })
}

// ---------------------------------------------------------------------------
// Heat-kernel oracle for the sawtooth propagator
// ---------------------------------------------------------------------------

/// Numeric value of `P(s) = int_0^infty d_{theta_1} h_t(theta_1, theta_2) dt`
/// at `s = theta_1 - theta_2`, with the `t`-integral split at `t_min`:
///
/// * over `(0, t_min]` the image-sum kernel integrates in closed form to
///   `sum_m -sgn(s+m)/2 * erfc(|s+m| / (2 sqrt(t_min)))`, truncated at
///   `|m| <= images` (the tail is Gaussian-small);
/// * over `[t_min, infinity)` the Fourier kernel integrates to
///   `-sum_k sin(2 pi k s) / (pi k) * exp(-4 pi^2 k^2 t_min)`, summed until
///   the terms drop below 1e-18.
///
/// Both pieces are exact integrals of their representations, so the result
/// reproduces the sawtooth to near machine precision once `images` covers the
/// Gaussian width.  `f64`-only: this is a validation oracle, not part of the
/// exact engine.
pub fn heat_propagator_at(s: f64, t_min: f64, images: u32) -> f64 {
    let width = 2.0 * t_min.sqrt();
    let mut small_t = 0.0_f64;
    let m_max = images as i64;
    for m in -m_max..=m_max {
        let x = s + m as f64;
        if x != 0.0 {
            let sign = if x > 0.0 { 1.0 } else { -1.0 };
            small_t -= 0.5 * sign * libm::erfc(x.abs() / width);
        }
    }
    let mut large_t = 0.0_f64;
    let decay = 4.0 * std::f64::consts::PI * std::f64::consts::PI * t_min;
    for k in 1..=100_000u64 {
        let kk = k as f64;
        let damp = (-decay * kk * kk).exp();
        if damp / (std::f64::consts::PI * kk) < 1e-18 {
            break;
        }
        large_t -= (2.0 * std::f64::consts::PI * kk * s).sin() / (std::f64::consts::PI * kk) * damp;
    }
    small_t + large_t
}

/// Max deviation `|P_num(s_i) - (s_i - 1/2)|` over the interior grid
/// `s_i = i / (samples + 1)`; see [`heat_propagator_at`].
pub fn heat_propagator_check(t_min: &Rational, images: u32, samples: u32) -> f64 {
    let t = t_min.to_f64();
    let mut worst = 0.0_f64;
    for i in 1..=samples.max(1) {
        let s = i as f64 / (samples as f64 + 1.0);
        let dev = (heat_propagator_at(s, t, images) - (s - 0.5)).abs();
        if dev > worst {
            worst = dev;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rat(a: i64, b: i64) -> Rational {
        Rational::new(a, b).unwrap()
    }

    /// `y`-variable `idx` of `W_2n` as a Weyl element.
    fn yvar(n: usize, idx: usize) -> WeylElement {
        WeylElement::variable(n, idx)
    }

    /// 1-form `w dx^{a+1}` with constant `x`-dependence.
    fn one_form(d: usize, a: usize, w: &WeylElement) -> WeylForm {
        let mut f = WeylForm::zero(d, w.n());
        f.add_term(Monomial::constant(d), 1 << a, w).unwrap();
        f
    }

    fn data(
        connection: WeylForm,
        gamma: WeylForm,
        curvature: WeylForm,
        omega: WeylForm,
    ) -> FedosovData {
        FedosovData::new(connection, gamma, curvature, omega, 6, 8, 8).unwrap()
    }

    #[test]
    fn zero_instance_passes() {
        let d = FedosovData::new(
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            4,
            4,
            4,
        )
        .unwrap();
        let report = fedosov_verify(&d, &PoissonTensor::standard(1)).unwrap();
        assert_eq!(report.status, FedosovStatus::Pass);
        assert!(report.passed());
        assert!(report.residual.is_zero());
    }

    #[test]
    fn darboux_instance_passes_and_central_mismatch_is_distinct() {
        // gamma = p dx1 + q dx2, Gamma = R = 0:
        //   (1/2h)[gamma, gamma] = (1/h)[p, q] dx1^dx2 = 1 dx1^dx2.
        let pi = PoissonTensor::standard(1);
        let p = yvar(1, 0);
        let q = yvar(1, 1);
        let gamma = one_form(2, 0, &p).add(&one_form(2, 1, &q)).unwrap();

        let mut omega = WeylForm::zero(2, 1);
        omega
            .add_term(Monomial::constant(2), 0b11, &WeylElement::one(1))
            .unwrap();

        let good = data(WeylForm::zero(2, 1), gamma.clone(), WeylForm::zero(2, 1), omega);
        let report = fedosov_verify(&good, &pi).unwrap();
        assert_eq!(report.status, FedosovStatus::Pass);

        // Same instance with omega_h = 0: residual 1 dx1^dx2, central.
        let off = data(
            WeylForm::zero(2, 1),
            gamma,
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
        );
        let report = fedosov_verify(&off, &pi).unwrap();
        assert_eq!(report.status, FedosovStatus::CentralResidual);
        assert!(!report.passed());
        assert_eq!(report.residual.to_string(), "(1) dx1^dx2");
        assert!(report.noncentral_terms.is_empty());
    }

    #[test]
    fn noncentral_perturbation_fails_localized() {
        // Perturb the passing Darboux instance by p^2 dx1: the new LHS picks
        // up (1/h)[p^2, q] dx1^dx2 = 2p dx1^dx2, a non-central residual.
        let pi = PoissonTensor::standard(1);
        let p = yvar(1, 0);
        let q = yvar(1, 1);
        let p2 = p.mul(&p);
        let gamma = one_form(2, 0, &p.add(&p2))
            .add(&one_form(2, 1, &q))
            .unwrap();
        let mut omega = WeylForm::zero(2, 1);
        omega
            .add_term(Monomial::constant(2), 0b11, &WeylElement::one(1))
            .unwrap();

        let bad = data(WeylForm::zero(2, 1), gamma, WeylForm::zero(2, 1), omega);
        let report = fedosov_verify(&bad, &pi).unwrap();
        assert_eq!(report.status, FedosovStatus::NonCentralResidual);
        assert_eq!(report.noncentral_terms.len(), 1);
        let term = &report.noncentral_terms[0];
        assert_eq!(term.x_monomial, "1");
        assert_eq!(term.frame, "dx1^dx2");
        assert_eq!(term.coefficient, "2*p1");
    }

    #[test]
    fn connection_commutator_enters_nabla() {
        // Gamma = q dx1, gamma = p dx2, R = 0:
        //   nabla gamma = (1/h)[Gamma, gamma] = (1/h)[q, p] dx1^dx2
        //               = -1 dx1^dx2,   [gamma, gamma] = 0 (repeated dx2).
        let pi = PoissonTensor::standard(1);
        let gamma_conn = one_form(2, 0, &yvar(1, 1));
        let gamma = one_form(2, 1, &yvar(1, 0));
        let mut omega = WeylForm::zero(2, 1);
        omega
            .add_term(
                Monomial::constant(2),
                0b11,
                &WeylElement::constant(1, HbarSeries::from_rational(rat(-1, 1))),
            )
            .unwrap();
        let inst = data(gamma_conn, gamma, WeylForm::zero(2, 1), omega);
        let report = fedosov_verify(&inst, &pi).unwrap();
        assert_eq!(report.status, FedosovStatus::Pass);
    }

    #[test]
    fn exterior_derivative_squares_to_zero_and_signs() {
        // d(x2 p dx1) = -p dx1^dx2 (sorting dx2 past dx1).
        let p = yvar(1, 0);
        let mut form = WeylForm::zero(2, 1);
        form.add_term(Monomial::new(vec![0, 1]), 0b01, &p).unwrap();
        let derived = form.d_x();
        assert_eq!(derived.to_string(), "(-p1) dx1^dx2");

        // d^2 = 0 on a mixed 0-form.
        let mut scalar_form = WeylForm::zero(3, 1);
        scalar_form
            .add_term(Monomial::new(vec![2, 1, 0]), 0, &WeylElement::one(1))
            .unwrap();
        scalar_form
            .add_term(Monomial::new(vec![0, 1, 3]), 0, &p)
            .unwrap();
        assert!(!scalar_form.d_x().is_zero());
        assert!(scalar_form.d_x().d_x().is_zero());
    }

    #[test]
    fn wedge_star_graded_antisymmetry_on_central_forms() {
        // For central (commuting) coefficients the wedge is graded-
        // antisymmetric: a ^ b = -(b ^ a) for two 1-forms.
        let pi = PoissonTensor::standard(1);
        let mut a = WeylForm::zero(2, 1);
        a.add_term(Monomial::new(vec![1, 0]), 0b01, &WeylElement::one(1))
            .unwrap();
        let mut b = WeylForm::zero(2, 1);
        b.add_term(Monomial::new(vec![0, 2]), 0b10, &WeylElement::one(1))
            .unwrap();
        let ab = a.wedge_star(&b, &pi).unwrap();
        let ba = b.wedge_star(&a, &pi).unwrap();
        assert_eq!(ab, ba.neg());
        assert_eq!(ab.to_string(), "(1)*x1*x2^2 dx1^dx2");
    }

    #[test]
    fn data_validation_rejects_bad_shapes() {
        let p = yvar(1, 0);
        // Non-central omega.
        let mut bad_omega = WeylForm::zero(2, 1);
        bad_omega.add_term(Monomial::constant(2), 0b11, &p).unwrap();
        let err = FedosovData::new(
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            bad_omega,
            4,
            4,
            4,
        );
        assert!(matches!(err, Err(CoreError::InvalidStructure(_))));

        // gamma of wrong wedge degree.
        let mut two_form = WeylForm::zero(2, 1);
        two_form.add_term(Monomial::constant(2), 0b11, &p).unwrap();
        let err = FedosovData::new(
            WeylForm::zero(2, 1),
            two_form,
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            4,
            4,
            4,
        );
        assert!(matches!(err, Err(CoreError::InvalidStructure(_))));

        // Mask referencing a coordinate beyond the base dimension.
        let mut f = WeylForm::zero(2, 1);
        let err = f.add_term(Monomial::constant(2), 0b100, &p);
        assert!(matches!(err, Err(CoreError::DimensionMismatch(_))));

        // x-monomial with the wrong number of exponents.
        let err = f.add_term(Monomial::constant(3), 0b01, &p);
        assert!(matches!(err, Err(CoreError::DimensionMismatch(_))));

        // Mismatched fiber rank between forms.
        let err = FedosovData::new(
            WeylForm::zero(2, 2),
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            WeylForm::zero(2, 1),
            4,
            4,
            4,
        );
        assert!(matches!(err, Err(CoreError::DimensionMismatch(_))));
    }

    /// Random 1-form over d=2, n=1 with small x/y degrees.
    fn random_one_form(rng: &mut ChaCha8Rng, max_terms: usize) -> WeylForm {
        let mut f = WeylForm::zero(2, 1);
        for _ in 0..rng.random_range(1..=max_terms) {
            let a = rng.random_range(0..2usize);
            let xexp = vec![rng.random_range(0..2u32), rng.random_range(0..2u32)];
            let yexp = vec![rng.random_range(0..3u32), rng.random_range(0..3u32)];
            let c = rat(rng.random_range(-3..=3i64), rng.random_range(1..=2i64));
            let w = WeylElement::monomial(1, yexp, HbarSeries::from_rational(c));
            f.add_term(Monomial::new(xexp), 1 << a, &w).unwrap();
        }
        f
    }

    #[test]
    fn synthesized_instances_classify_and_reject_perturbations() {
        let pi = PoissonTensor::standard(1);
        let half = HbarSeries::from_rational(rat(1, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0xfed0);
        let mut saw_pass = false;
        let mut saw_noncentral = false;

        for _ in 0..25 {
            let conn = random_one_form(&mut rng, 2);
            let gamma = random_one_form(&mut rng, 3);
            let mut curv = WeylForm::zero(2, 1);
            curv.add_term(
                Monomial::constant(2),
                0b11,
                &yvar(1, 0).mul(&yvar(1, 1)),
            )
            .unwrap();

            let lhs = gamma
                .d_x()
                .add(&conn.graded_star_commutator(&gamma, &pi).unwrap())
                .unwrap()
                .add(&gamma.graded_star_commutator(&gamma, &pi).unwrap().scale(&half))
                .unwrap()
                .add(&curv)
                .unwrap();
            let omega = lhs.central_part().truncate_x(6).truncate_hbar(8);

            let inst = FedosovData::new(conn.clone(), gamma.clone(), curv.clone(), omega.clone(), 6, 8, 8)
                .unwrap();
            let report = fedosov_verify(&inst, &pi).unwrap();
            if lhs.truncate_x(6).truncate_y(8).truncate_hbar(8).noncentral_part().is_zero() {
                assert_eq!(report.status, FedosovStatus::Pass);
                saw_pass = true;
            } else {
                assert_eq!(report.status, FedosovStatus::NonCentralResidual);
                assert!(!report.noncentral_terms.is_empty());
                saw_noncentral = true;
            }

            // A perturbation that visibly changes the LHS must be rejected.
            let perturbed;
            let mut guard = 0;
            loop {
                let delta = random_one_form(&mut rng, 1);
                let cand = gamma.add(&delta).unwrap();
                let new_lhs = cand
                    .d_x()
                    .add(&conn.graded_star_commutator(&cand, &pi).unwrap())
                    .unwrap()
                    .add(&cand.graded_star_commutator(&cand, &pi).unwrap().scale(&half))
                    .unwrap()
                    .add(&curv)
                    .unwrap();
                if new_lhs.sub(&lhs).unwrap().truncate_x(6).truncate_y(8).truncate_hbar(8).is_zero()
                {
                    guard += 1;
                    assert!(guard < 50, "could not draw an effective perturbation");
                    continue;
                }
                perturbed = cand;
                break;
            }
            let inst = FedosovData::new(conn, perturbed, curv, omega, 6, 8, 8).unwrap();
            let report = fedosov_verify(&inst, &pi).unwrap();
            assert_ne!(report.status, FedosovStatus::Pass);
        }
        assert!(saw_pass || saw_noncentral);
    }

    #[test]
    fn heat_oracle_matches_sawtooth() {
        let dev = heat_propagator_check(&rat(1, 100), 20, 63);
        assert!(dev < 1e-9, "max deviation {dev}");
    }

    #[test]
    fn heat_oracle_spec_points() {
        let t = 0.01;
        assert!((heat_propagator_at(0.25, t, 20) - (-0.25)).abs() < 1e-6);
        assert!(heat_propagator_at(0.5, t, 20).abs() < 1e-9);
        // s -> 0+ approaches the jump value -1/2 ...
        assert!((heat_propagator_at(1e-6, t, 20) - (-0.5)).abs() < 1e-3);
        // ... while s = 0 exactly hits the midpoint convention P(0) = 0.
        assert!(heat_propagator_at(0.0, t, 20).abs() < 1e-12);
    }
}
