//! Exact symbolic engine for the algebraic side of one-dimensional Chern
//! character computations.
//!
//! The crate is organised as a tower: [`scalar`] provides the ground ring
//! `Q((h))[u, u^-1]` (exact rationals, truncated Laurent series in the formal
//! quantization parameter `h`, and Laurent polynomials in the equivariant
//! variable `u`); [`weyl`] implements the Moyal star product on formal Weyl
//! algebras; [`hochschild`] and [`bvforms`] provide the cyclic complex and the
//! target complex of formal differential forms; [`correlation`] connects the
//! two through the exact simplex-integral correlation map and the equivariant
//! trace; [`dgbv`] is a finite-dimensional dg-BV laboratory for homotopy RG
//! flow; [`vertex`] implements normal-ordered OPEs and mode brackets for
//! free-field systems; [`qmod`] handles Eisenstein series, quasi-modular
//! recognition, A-cycle averages and Fock-space characters; [`expr`] is the
//! shared textual grammar.
//!
//! Everything outside the explicitly numeric oracles is exact: no floating
//! point enters any algebraic code path.

pub mod bvforms;
pub mod correlation;
pub mod fedosov;
pub mod dgbv;
pub mod error;
pub mod expr;
pub mod hochschild;
pub mod qmod;
pub mod scalar;
pub mod selftest;
pub mod vertex;
pub mod weyl;

pub use error::CoreError;
