//! Expression parser for the command-line surface: a small arithmetic
//! grammar over rationals, the formal parameters `h` and `u`, Weyl
//! variables `p1..pn` / `q1..qn`, the nome `q`, form symbols `dp1` / `dq1`
//! joined by the wedge `^`, normally ordered vertex words `: ... :` with
//! `D^k` derivatives, and the tensor separator `|` for Hochschild chains.
//!
//! Precedence, tightest first: `^` (power or wedge), `*`, unary `-`, `|`,
//! binary `+`/`-`.  The slot for `|` makes a printed sum of tensor terms
//! like `a | p1 + b | q1` parse as `(a|p1) + (b|q1)`, matching the chain
//! display format, while plain scalar sums are unaffected.
//!
//! Parsing is untyped: identifiers are resolved by the per-category
//! evaluators (`eval_weyl`, `eval_chain`, `eval_vertex`, `eval_qseries`),
//! which report unknown identifiers together with the active symbol table.
//! For every category, `parse` followed by evaluation is a left inverse of
//! the value types' canonical `Display` printing.

use std::fmt;

use crate::error::{CoreError, CoreResult};
use crate::hochschild::HochschildChain;
use crate::qmod::QSeries;
use crate::scalar::{HbarSeries, Rational};
use crate::vertex::{GeneratorSet, Leg, VertexPolynomial};
use crate::weyl::WeylElement;

/// Maximum accepted input length, in bytes.
pub const MAX_INPUT_LEN: usize = 64 * 1024;

/// Source position of a token (1-based line and column).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

/// Untyped expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(Rational),
    Ident(String, Span),
    /// A normally ordered word `: D^k a  D^l b ... :` as (derivative, name)
    /// legs.
    VertexWord(Vec<(u32, String)>, Span),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    /// Wedge product of form symbols, `dp1^dq1`.
    Wedge(Box<Expr>, Box<Expr>),
    /// Tensor chain `a0 | a1 | ... | ap`.
    Chain(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    Slash,
    Pipe,
    Colon,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(s) => write!(f, "number '{}'", s),
            Token::Ident(s) => write!(f, "identifier '{}'", s),
            Token::Plus => write!(f, "'+'"),
            Token::Minus => write!(f, "'-'"),
            Token::Star => write!(f, "'*'"),
            Token::Caret => write!(f, "'^'"),
            Token::Slash => write!(f, "'/'"),
            Token::Pipe => write!(f, "'|'"),
            Token::Colon => write!(f, "':'"),
            Token::LParen => write!(f, "'('"),
            Token::RParen => write!(f, "')'"),
        }
    }
}

fn syntax_error(span: Span, msg: impl fmt::Display) -> CoreError {
    CoreError::invalid(format!("syntax error at {}: {}", span, msg))
}

fn lex(text: &str) -> CoreResult<Vec<(Token, Span)>> {
    let mut out = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut chars = text.chars().peekable();
    while let Some(&ch) = chars.peek() {
        let span = Span { line, col };
        match ch {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() {
                        s.push(d);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Token::Number(s), span));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        s.push(d);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Token::Ident(s), span));
            }
            _ => {
                let token = match ch {
                    '+' => Token::Plus,
                    '-' => Token::Minus,
                    '*' => Token::Star,
                    '^' => Token::Caret,
                    '/' => Token::Slash,
                    '|' => Token::Pipe,
                    ':' => Token::Colon,
                    '(' => Token::LParen,
                    ')' => Token::RParen,
                    other => {
                        return Err(syntax_error(span, format!("unexpected character '{}'", other)))
                    }
                };
                chars.next();
                col += 1;
                out.push((token, span));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, Span)>,
    pos: usize,
    end: Span,
}

impl Parser {
    fn peek(&self) -> Option<&(Token, Span)> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<(Token, Span)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Token) -> CoreResult<Span> {
        match self.next() {
            Some((t, s)) if &t == want => Ok(s),
            Some((t, s)) => Err(syntax_error(s, format!("expected {}, found {}", want, t))),
            None => Err(syntax_error(self.end, format!("expected {}, found end of input", want))),
        }
    }

    /// additive := chain_term (('+' | '-') chain_term)*
    fn parse_additive(&mut self, allow_chain: bool) -> CoreResult<Expr> {
        let mut acc = self.parse_chain_term(allow_chain)?;
        loop {
            match self.peek() {
                Some((Token::Plus, _)) => {
                    self.next();
                    let rhs = self.parse_chain_term(allow_chain)?;
                    acc = Expr::Add(Box::new(acc), Box::new(rhs));
                }
                Some((Token::Minus, _)) => {
                    self.next();
                    let rhs = self.parse_chain_term(allow_chain)?;
                    acc = Expr::Sub(Box::new(acc), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    /// chain_term := unary ('|' unary)*
    fn parse_chain_term(&mut self, allow_chain: bool) -> CoreResult<Expr> {
        let first = self.parse_unary()?;
        if !matches!(self.peek(), Some((Token::Pipe, _))) {
            return Ok(first);
        }
        if !allow_chain {
            let (_, span) = self.peek().expect("just matched");
            return Err(syntax_error(
                *span,
                "tensor separator '|' is only valid at the top level",
            ));
        }
        let mut slots = vec![first];
        while matches!(self.peek(), Some((Token::Pipe, _))) {
            self.next();
            slots.push(self.parse_unary()?);
        }
        Ok(Expr::Chain(slots))
    }

    /// unary := '-' unary | term
    fn parse_unary(&mut self) -> CoreResult<Expr> {
        if matches!(self.peek(), Some((Token::Minus, _))) {
            self.next();
            let inner = self.parse_unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_term()
    }

    /// term := power ('*' power)*
    fn parse_term(&mut self) -> CoreResult<Expr> {
        let mut acc = self.parse_power()?;
        while matches!(self.peek(), Some((Token::Star, _))) {
            self.next();
            let rhs = self.parse_power()?;
            acc = Expr::Mul(Box::new(acc), Box::new(rhs));
        }
        Ok(acc)
    }

    /// power := atom ('^' (number | atom))*
    ///
    /// An integer exponent makes a power; anything else makes a wedge.
    fn parse_power(&mut self) -> CoreResult<Expr> {
        let mut acc = self.parse_atom()?;
        while matches!(self.peek(), Some((Token::Caret, _))) {
            self.next();
            match self.peek() {
                Some((Token::Number(_), _)) => {
                    let Some((Token::Number(digits), span)) = self.next() else {
                        unreachable!()
                    };
                    let e = parse_exponent(&digits, span)?;
                    acc = Expr::Pow(Box::new(acc), e);
                }
                _ => {
                    let rhs = self.parse_atom()?;
                    acc = Expr::Wedge(Box::new(acc), Box::new(rhs));
                }
            }
        }
        Ok(acc)
    }

    /// atom := number ('/' number)? | ident | '(' additive ')' | vertex word
    fn parse_atom(&mut self) -> CoreResult<Expr> {
        match self.next() {
            Some((Token::Number(digits), span)) => {
                let num = parse_digits(&digits);
                if matches!(self.peek(), Some((Token::Slash, _))) {
                    self.next();
                    match self.next() {
                        Some((Token::Number(denom_digits), denom_span)) => {
                            let den = parse_digits(&denom_digits);
                            if den.is_zero() {
                                return Err(syntax_error(denom_span, "zero denominator"));
                            }
                            Ok(Expr::Number(&num * &den.recip().expect("nonzero")))
                        }
                        Some((t, s)) => {
                            Err(syntax_error(s, format!("expected denominator digits, found {}", t)))
                        }
                        None => Err(syntax_error(
                            self.end,
                            "expected denominator digits, found end of input",
                        )),
                    }
                } else {
                    let _ = span;
                    Ok(Expr::Number(num))
                }
            }
            Some((Token::Ident(name), span)) => Ok(Expr::Ident(name, span)),
            Some((Token::LParen, _)) => {
                let inner = self.parse_additive(false)?;
                self.expect(&Token::RParen)?;
                Ok(inner)
            }
            Some((Token::Colon, span)) => self.parse_vertex_word(span),
            Some((t, s)) => Err(syntax_error(s, format!("expected an expression, found {}", t))),
            None => Err(syntax_error(self.end, "expected an expression, found end of input")),
        }
    }

    /// Inside `: ... :`, legs are `name` or `D^k name`.
    fn parse_vertex_word(&mut self, open: Span) -> CoreResult<Expr> {
        let mut legs: Vec<(u32, String)> = Vec::new();
        loop {
            match self.next() {
                Some((Token::Colon, _)) => {
                    if legs.is_empty() {
                        return Err(syntax_error(open, "empty normally ordered word"));
                    }
                    return Ok(Expr::VertexWord(legs, open));
                }
                Some((Token::Ident(name), span)) => {
                    if name == "D" {
                        self.expect(&Token::Caret)?;
                        let der = match self.next() {
                            Some((Token::Number(digits), dspan)) => {
                                parse_exponent(&digits, dspan)?
                            }
                            Some((t, s)) => {
                                return Err(syntax_error(
                                    s,
                                    format!("expected derivative order digits, found {}", t),
                                ))
                            }
                            None => {
                                return Err(syntax_error(
                                    self.end,
                                    "expected derivative order digits, found end of input",
                                ))
                            }
                        };
                        match self.next() {
                            Some((Token::Ident(gen), gspan)) => {
                                let _ = gspan;
                                legs.push((der, gen));
                            }
                            Some((t, s)) => {
                                return Err(syntax_error(
                                    s,
                                    format!("expected a generator name after D^k, found {}", t),
                                ))
                            }
                            None => {
                                return Err(syntax_error(
                                    self.end,
                                    "expected a generator name after D^k, found end of input",
                                ))
                            }
                        }
                    } else {
                        let _ = span;
                        legs.push((0, name));
                    }
                }
                Some((t, s)) => {
                    return Err(syntax_error(
                        s,
                        format!("expected a generator name or closing ':', found {}", t),
                    ))
                }
                None => {
                    return Err(syntax_error(
                        self.end,
                        "unterminated normally ordered word (missing closing ':')",
                    ))
                }
            }
        }
    }
}

/// Fold a digit string into an exact rational (no size limit beyond the
/// input's).
fn parse_digits(digits: &str) -> Rational {
    let ten = Rational::from_int(10);
    let mut acc = Rational::zero();
    for ch in digits.chars() {
        let d = Rational::from_int((ch as u8 - b'0') as i64);
        acc = &(&acc * &ten) + &d;
    }
    acc
}

fn parse_exponent(digits: &str, span: Span) -> CoreResult<u32> {
    let value: u64 = digits
        .parse()
        .map_err(|_| syntax_error(span, "exponent too large"))?;
    if value > 1_000 {
        return Err(syntax_error(span, "exponent exceeds the supported limit of 1000"));
    }
    Ok(value as u32)
}

/// Parse an expression.  Fails with a position-annotated syntax error.
pub fn parse(text: &str) -> CoreResult<Expr> {
    if text.len() > MAX_INPUT_LEN {
        return Err(CoreError::invalid(format!(
            "input exceeds the {} byte limit",
            MAX_INPUT_LEN
        )));
    }
    let tokens = lex(text)?;
    let lines = text.lines().count().max(1) as u32;
    let last_col = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1) as u32;
    let end = Span { line: lines, col: last_col };
    let mut parser = Parser { tokens, pos: 0, end };
    let expr = parser.parse_additive(true)?;
    if let Some((t, s)) = parser.peek() {
        return Err(syntax_error(*s, format!("unexpected {} after the expression", t)));
    }
    Ok(expr)
}

fn unknown_identifier(name: &str, span: Span, symbols: &[String]) -> CoreError {
    CoreError::invalid(format!(
        "unknown identifier '{}' at {}; known symbols: {}",
        name,
        span,
        symbols.join(", ")
    ))
}

fn weyl_symbols(n: usize) -> Vec<String> {
    let mut out = vec!["h".to_string()];
    for i in 1..=n {
        out.push(format!("p{}", i));
    }
    for i in 1..=n {
        out.push(format!("q{}", i));
    }
    out
}

/// Resolve `p3` / `q2` to the flat Weyl variable index for rank `n`.
fn weyl_variable_index(name: &str, n: usize) -> Option<usize> {
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let k: usize = digits.parse().ok()?;
    if k == 0 || k > n {
        return None;
    }
    match head {
        "p" => Some(k - 1),
        "q" => Some(n + k - 1),
        _ => None,
    }
}

/// Evaluate into the Weyl algebra on `n` pairs (symbols: `h`, `p1..pn`,
/// `q1..qn`).
pub fn eval_weyl(expr: &Expr, n: usize) -> CoreResult<WeylElement> {
    match expr {
        Expr::Number(r) => Ok(WeylElement::constant(n, HbarSeries::from_rational(r.clone()))),
        Expr::Ident(name, span) => {
            if name == "h" {
                return Ok(WeylElement::constant(n, HbarSeries::hbar()));
            }
            if let Some(idx) = weyl_variable_index(name, n) {
                return Ok(WeylElement::variable(n, idx));
            }
            Err(unknown_identifier(name, *span, &weyl_symbols(n)))
        }
        Expr::VertexWord(_, span) => Err(syntax_error(
            *span,
            "normally ordered words are not valid in a Weyl-algebra expression",
        )),
        Expr::Neg(inner) => Ok(eval_weyl(inner, n)?.neg()),
        Expr::Add(a, b) => Ok(eval_weyl(a, n)?.add(&eval_weyl(b, n)?)),
        Expr::Sub(a, b) => Ok(eval_weyl(a, n)?.sub(&eval_weyl(b, n)?)),
        Expr::Mul(a, b) => Ok(eval_weyl(a, n)?.mul(&eval_weyl(b, n)?)),
        Expr::Pow(base, e) => {
            let base = eval_weyl(base, n)?;
            let mut acc = WeylElement::one(n);
            for _ in 0..*e {
                acc = acc.mul(&base);
            }
            Ok(acc)
        }
        Expr::Wedge(..) => {
            Err(CoreError::invalid("wedge products are not valid in a Weyl-algebra expression"))
        }
        Expr::Chain(_) => Err(CoreError::invalid(
            "tensor chains are not valid here; this argument takes a single Weyl element",
        )),
    }
}

/// Evaluate into a Hochschild chain: `a0 | a1 | ... | ap`, sums allowed
/// between chain terms, single elements become 0-chains.
pub fn eval_chain(expr: &Expr, n: usize) -> CoreResult<HochschildChain> {
    match expr {
        Expr::Chain(slots) => {
            let mut elements = Vec::with_capacity(slots.len());
            for slot in slots {
                elements.push(eval_weyl(slot, n)?);
            }
            Ok(HochschildChain::elementary(&elements[0], &elements[1..]))
        }
        Expr::Add(a, b) => Ok(eval_chain(a, n)?.add(&eval_chain(b, n)?)),
        Expr::Sub(a, b) => Ok(eval_chain(a, n)?.sub(&eval_chain(b, n)?)),
        Expr::Neg(inner) => Ok(eval_chain(inner, n)?.neg()),
        other => Ok(HochschildChain::from_element(&eval_weyl(other, n)?)),
    }
}

fn vertex_symbols(gens: &GeneratorSet) -> Vec<String> {
    let mut out = vec!["h".to_string()];
    for i in 0..gens.len() {
        out.push(gens.name(i).to_string());
    }
    out
}

/// Evaluate into a vertex polynomial over the given generators (symbols:
/// `h` and `: ... :` words over the generator names).
pub fn eval_vertex(expr: &Expr, gens: &GeneratorSet) -> CoreResult<VertexPolynomial> {
    match expr {
        Expr::Number(r) => {
            Ok(VertexPolynomial::constant(gens, HbarSeries::from_rational(r.clone())))
        }
        Expr::Ident(name, span) => {
            if name == "h" {
                return Ok(VertexPolynomial::constant(gens, HbarSeries::hbar()));
            }
            // Bare generator names are allowed as one-leg words.
            if let Some(idx) = gens.index_of(name) {
                return VertexPolynomial::field(gens, idx, 0);
            }
            Err(unknown_identifier(name, *span, &vertex_symbols(gens)))
        }
        Expr::VertexWord(named_legs, span) => {
            let mut legs: Vec<Leg> = Vec::with_capacity(named_legs.len());
            for (der, name) in named_legs {
                let Some(idx) = gens.index_of(name) else {
                    let names: Vec<String> =
                        (0..gens.len()).map(|i| gens.name(i).to_string()).collect();
                    return Err(CoreError::invalid(format!(
                        "unknown generator '{}' at {}; known generators: {}",
                        name,
                        span,
                        names.join(", ")
                    )));
                };
                legs.push((idx, *der));
            }
            VertexPolynomial::word(gens, legs, HbarSeries::one())
        }
        Expr::Neg(inner) => Ok(eval_vertex(inner, gens)?.neg()),
        Expr::Add(a, b) => eval_vertex(a, gens)?.add(&eval_vertex(b, gens)?),
        Expr::Sub(a, b) => eval_vertex(a, gens)?.sub(&eval_vertex(b, gens)?),
        Expr::Mul(a, b) => eval_vertex(a, gens)?.normal_product(&eval_vertex(b, gens)?),
        Expr::Pow(base, e) => {
            let base = eval_vertex(base, gens)?;
            let mut acc = VertexPolynomial::one(gens);
            for _ in 0..*e {
                acc = acc.normal_product(&base)?;
            }
            Ok(acc)
        }
        Expr::Wedge(..) => {
            Err(CoreError::invalid("wedge products are not valid in a vertex expression"))
        }
        Expr::Chain(_) => {
            Err(CoreError::invalid("tensor chains are not valid in a vertex expression"))
        }
    }
}

/// Evaluate into a q-series truncated at `order` (symbols: `q`).
pub fn eval_qseries(expr: &Expr, order: u32) -> CoreResult<QSeries> {
    match expr {
        Expr::Number(r) => Ok(QSeries::one(order).scale(r)),
        Expr::Ident(name, span) => {
            if name == "q" {
                let mut coeffs = vec![Rational::zero(); order as usize + 1];
                if order >= 1 {
                    coeffs[1] = Rational::one();
                }
                return QSeries::from_coeffs(coeffs);
            }
            Err(unknown_identifier(name, *span, &["q".to_string()]))
        }
        Expr::Neg(inner) => Ok(eval_qseries(inner, order)?.neg()),
        Expr::Add(a, b) => Ok(eval_qseries(a, order)?.add(&eval_qseries(b, order)?)),
        Expr::Sub(a, b) => Ok(eval_qseries(a, order)?.sub(&eval_qseries(b, order)?)),
        Expr::Mul(a, b) => Ok(eval_qseries(a, order)?.mul(&eval_qseries(b, order)?)),
        Expr::Pow(base, e) => Ok(eval_qseries(base, order)?.pow(*e)),
        Expr::Wedge(..) | Expr::VertexWord(..) | Expr::Chain(_) => {
            Err(CoreError::invalid("only rationals and 'q' are valid in a q-series expression"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmod;
    use crate::scalar::UPolynomial;
    use crate::weyl::Monomial;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::new(n, d).expect("nonzero denominator")
    }

    #[test]
    fn parses_spec_examples() {
        // "p1*q1 + 1/2*h" → pq + h/2.
        let e = parse("p1*q1 + 1/2*h").unwrap();
        let w = eval_weyl(&e, 1).unwrap();
        let expect = WeylElement::monomial(1, vec![1, 1], HbarSeries::one())
            .add(&WeylElement::constant(1, HbarSeries::monomial(1, rat(1, 2))));
        assert_eq!(w, expect);

        // "p1 | q1" → the 1-chain p ⊗ q.
        let e = parse("p1 | q1").unwrap();
        let chain = eval_chain(&e, 1).unwrap();
        let p = WeylElement::variable(1, 0);
        let q = WeylElement::variable(1, 1);
        assert_eq!(chain, HochschildChain::elementary(&p, &[q]));

        // ":b D^1 c:" → the word with legs b and ∂c.
        let e = parse(":b D^1 c:").unwrap();
        let gens = GeneratorSet::bc();
        let v = eval_vertex(&e, &gens).unwrap();
        let expect =
            VertexPolynomial::word(&gens, vec![(0, 0), (1, 1)], HbarSeries::one()).unwrap();
        assert_eq!(v, expect);
    }

    #[test]
    fn precedence_and_grouping() {
        // ^ binds tighter than *.
        let e = parse("2*q1^2").unwrap();
        let w = eval_weyl(&e, 1).unwrap();
        let expect =
            WeylElement::monomial(1, vec![0, 2], HbarSeries::from_rational(rat(2, 1)));
        assert_eq!(w, expect);

        // Unary minus binds looser than * but tighter than +.
        let e = parse("-p1*q1 + p1").unwrap();
        let w = eval_weyl(&e, 1).unwrap();
        let expect = WeylElement::monomial(1, vec![1, 1], HbarSeries::one())
            .neg()
            .add(&WeylElement::variable(1, 0));
        assert_eq!(w, expect);

        // Parens override.
        let e = parse("(p1 + q1)^2").unwrap();
        let w = eval_weyl(&e, 1).unwrap();
        let sum = WeylElement::variable(1, 0).add(&WeylElement::variable(1, 1));
        assert_eq!(w, sum.mul(&sum));

        // '|' binds looser than unary minus, tighter than '+'.
        let e = parse("-p1 | q1 + q1 | p1").unwrap();
        let chain = eval_chain(&e, 1).unwrap();
        let p = WeylElement::variable(1, 0);
        let q = WeylElement::variable(1, 1);
        let expect = HochschildChain::elementary(&p.neg(), std::slice::from_ref(&q))
            .add(&HochschildChain::elementary(&q, std::slice::from_ref(&p)));
        assert_eq!(chain, expect);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse("p1 + ").unwrap_err();
        let msg = format!("{}", err);
        assert!(msg.contains("syntax error"), "got: {}", msg);
        assert!(msg.contains("line 1"), "got: {}", msg);

        let err = parse("p1 @ q1").unwrap_err();
        assert!(format!("{}", err).contains("column 4"));

        let err = parse("(p1 | q1)").unwrap_err();
        assert!(format!("{}", err).contains("top level"));

        let err = parse(":b c").unwrap_err();
        assert!(format!("{}", err).contains("unterminated"));

        let err = parse("1/0").unwrap_err();
        assert!(format!("{}", err).contains("zero denominator"));
    }

    #[test]
    fn unknown_identifiers_list_the_symbol_table() {
        let e = parse("p2").unwrap();
        let err = eval_weyl(&e, 1).unwrap_err();
        let msg = format!("{}", err);
        assert!(msg.contains("unknown identifier 'p2'"), "got: {}", msg);
        assert!(msg.contains("h, p1, q1"), "got: {}", msg);

        let e = parse(":x:").unwrap();
        let err = eval_vertex(&e, &GeneratorSet::bc()).unwrap_err();
        let msg = format!("{}", err);
        assert!(msg.contains("known generators: b, c"), "got: {}", msg);

        let e = parse("u").unwrap();
        let err = eval_qseries(&e, 4).unwrap_err();
        assert!(format!("{}", err).contains("known symbols: q"));
    }

    fn random_hbar_series(rng: &mut ChaCha8Rng) -> HbarSeries {
        let mut s = HbarSeries::zero();
        for e in 0..=rng.random_range(0..=2i64) {
            let num = rng.random_range(-6..=6i64);
            if num != 0 {
                s = s.add(&HbarSeries::monomial(e, rat(num, rng.random_range(1..=3))));
            }
        }
        if s.is_zero() {
            HbarSeries::one()
        } else {
            s
        }
    }

    fn random_weyl(rng: &mut ChaCha8Rng, n: usize) -> WeylElement {
        let mut w = WeylElement::zero(n);
        for _ in 0..rng.random_range(1..=3) {
            let exps: Vec<u32> = (0..2 * n).map(|_| rng.random_range(0..=2)).collect();
            w = w.add(&WeylElement::monomial(n, exps, random_hbar_series(rng)));
        }
        w
    }

    #[test]
    fn parse_print_round_trip_weyl() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x14e1);
        for _ in 0..1000 {
            let n = rng.random_range(1..=3);
            let w = random_weyl(&mut rng, n);
            let printed = format!("{}", w);
            let reparsed = eval_weyl(&parse(&printed).unwrap(), n)
                .unwrap_or_else(|e| panic!("failed to evaluate '{}': {}", printed, e));
            assert_eq!(reparsed, w, "round trip failed for '{}'", printed);
        }
    }

    #[test]
    fn parse_print_round_trip_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc4a1);
        for _ in 0..1000 {
            let n = rng.random_range(1..=2);
            let mut chain = HochschildChain::zero(n);
            for _ in 0..rng.random_range(1..=2) {
                let a0 = random_weyl(&mut rng, n);
                let tail: Vec<WeylElement> = (0..rng.random_range(0..=2))
                    .map(|_| {
                        let exps: Vec<u32> = (0..2 * n).map(|_| rng.random_range(0..=2)).collect();
                        WeylElement::monomial(n, exps, HbarSeries::one())
                    })
                    .collect();
                chain = chain.add(&HochschildChain::elementary(&a0, &tail));
            }
            let printed = format!("{}", chain);
            let reparsed = eval_chain(&parse(&printed).unwrap(), n)
                .unwrap_or_else(|e| panic!("failed to evaluate '{}': {}", printed, e));
            assert_eq!(reparsed, chain, "round trip failed for '{}'", printed);
        }
    }

    #[test]
    fn parse_print_round_trip_vertex() {
        let gens = GeneratorSet::beta_gamma_bc();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e27);
        for _ in 0..1000 {
            let mut v = VertexPolynomial::zero(&gens);
            for _ in 0..rng.random_range(1..=3) {
                let legs: Vec<Leg> = (0..rng.random_range(1..=3))
                    .map(|_| (rng.random_range(0..gens.len()), rng.random_range(0..=2)))
                    .collect();
                v = v
                    .add(
                        &VertexPolynomial::word(&gens, legs, random_hbar_series(&mut rng))
                            .unwrap(),
                    )
                    .unwrap();
            }
            let printed = format!("{}", v);
            let reparsed = eval_vertex(&parse(&printed).unwrap(), &gens)
                .unwrap_or_else(|e| panic!("failed to evaluate '{}': {}", printed, e));
            assert_eq!(reparsed, v, "round trip failed for '{}'", printed);
        }
    }

    #[test]
    fn parse_print_round_trip_qseries() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x95e1);
        for _ in 0..1000 {
            let order = rng.random_range(0..=8u32);
            let coeffs: Vec<Rational> = (0..=order)
                .map(|_| {
                    let num = rng.random_range(-20..=20i64);
                    rat(num, rng.random_range(1..=4))
                })
                .collect();
            let s = QSeries::from_coeffs(coeffs).unwrap();
            let printed = format!("{}", s);
            let reparsed = eval_qseries(&parse(&printed).unwrap(), order)
                .unwrap_or_else(|e| panic!("failed to evaluate '{}': {}", printed, e));
            assert_eq!(reparsed, s, "round trip failed for '{}'", printed);
        }
    }

    #[test]
    fn parses_eisenstein_output() {
        let e2 = qmod::eisenstein(2, 5).unwrap();
        let printed = format!("{}", e2);
        let reparsed = eval_qseries(&parse(&printed).unwrap(), 5).unwrap();
        assert_eq!(reparsed, e2);
    }

    #[test]
    fn big_number_literals_are_exact() {
        // Larger than i64: digits fold into the exact rational.
        let e = parse("123456789012345678901234567890").unwrap();
        let Expr::Number(r) = &e else { panic!("expected a number") };
        let ten_e29 = {
            let mut acc = Rational::one();
            for _ in 0..29 {
                acc = &acc * &Rational::from_int(10);
            }
            acc
        };
        // The literal is about 1.23 * 10^29.
        let lower = &ten_e29 * &Rational::from_int(1);
        assert!(!r.is_zero());
        let diff = r - &lower;
        let _ = diff;
        // Round trip through display.
        assert_eq!(format!("{}", r), "123456789012345678901234567890");
    }

    #[test]
    fn monomial_keys_match_display_symbols() {
        // Guard: the display of a monomial uses p1..pn then q1..qn, which
        // is how eval_weyl resolves indices.
        let w = WeylElement::monomial(2, vec![1, 0, 0, 2], HbarSeries::one());
        assert_eq!(format!("{}", w), "p1*q2^2");
        let reparsed = eval_weyl(&parse("p1*q2^2").unwrap(), 2).unwrap();
        assert_eq!(reparsed, w);
        let m = Monomial::new(vec![1, 0, 0, 2]);
        let _ = m;
    }

    #[test]
    fn upolynomial_display_shape_is_stable() {
        // The trace output format (u-polynomials) stays printable; the CLI
        // embeds it as a string.
        let u = UPolynomial::monomial(2, HbarSeries::one())
            .add(&UPolynomial::monomial(0, HbarSeries::monomial(1, rat(1, 2))));
        let printed = format!("{}", u);
        assert!(printed.contains("u^2"), "got: {}", printed);
    }
}
