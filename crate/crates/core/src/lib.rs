//! Discovery of governing equations from noisy trajectory data.
//!
//! The pipeline regresses measured (or numerically recovered) derivatives on
//! a polynomial term library and finds each equation's active terms by exact
//! cardinality-constrained subset selection instead of coefficient
//! shrinkage: wide libraries are first reduced by an l1 screen, the
//! (k, lambda2) pair is tuned by cross-validation, the subset problem is
//! solved to proven optimality by branch and bound, and coefficients come
//! from a final least-squares refit on the original data.
//!
//! Built-in chaotic benchmark systems (three-variable and cyclic high-
//! dimensional Lorenz models, a Hopf normal form and a logistic map with
//! bifurcation-parameter sweeps, and a cylinder-wake mean-field model)
//! reproduce the recovery experiments behind the `eqdisc` CLI.
//!
//! With the default `parallel` feature, per-equation pipelines, CV grid
//! cells, and matrix kernels run on rayon; disabling it yields a fully
//! sequential build with bit-identical outputs.

pub mod derivatives;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod pipeline;
pub mod screen;
pub mod subset;
pub mod systems;
pub mod tuning;

pub use error::{Error, Result};
