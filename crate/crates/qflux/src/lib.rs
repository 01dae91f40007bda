//! Numerical toolkit for quasilinear elliptic problems of p-Laplace type.
//!
//! The library solves −div(a(|∇u|)∇u) = f on 2D grid domains by convex
//! energy minimization, computes the nonlinear flux V = a(|∇u|)∇u, and
//! verifies the algebraic machinery behind second-order flux regularity:
//! the pointwise differential inequality, the simplex nonnegativity lemma
//! with its Newton-inequality chains, and rearrangement-based norms.

pub mod config;
pub mod estimates;
pub mod expr;
pub mod grid;
pub mod matrix_lemma;
pub mod rearrangement;
pub mod simplex_forms;
pub mod solver;
pub mod structure;
