//! Nonparametric empirical Bayes shrinkage for discrete count data.
//!
//! Many counts, one parameter each: `Y_i | θ_i` from a discrete linear
//! exponential family with `θ_i` drawn from an unknown prior. The optimal
//! compound rule divides a known coefficient ratio by an unknown shrinkage
//! factor — an adjacent-count ratio of the marginal pmf. This crate
//! estimates that factor directly by minimizing an empirical kernelized
//! Stein discrepancy: a convex quadratic program over the ratio-functional
//! vector, under monotonicity, tie and boundary constraints, with the kernel
//! bandwidth chosen by an asymptotic risk estimate.
//!
//! Both the plain squared error loss and the scaled variant `θ⁻¹(θ-δ)²` are
//! supported (`k = 0` and `k = 1` throughout the API).
//!
//! ```rust
//! use neb::dle::{sample_counts, sample_theta, DleModel, PriorSpec, SamplingModel};
//! use neb::bandwidth::{default_grid, select_lambda};
//! use neb::constraints::ConstraintFlags;
//!
//! let prior = PriorSpec::Uniform { lo: 1.0, hi: 8.0 };
//! let thetas = sample_theta(&prior, 200, 7).unwrap();
//! let gen = SamplingModel::Pure(DleModel::Poisson);
//! let sample = sample_counts(&gen, &thetas, DleModel::Poisson, 8).unwrap();
//!
//! let curve = select_lambda(&sample, 1, &default_grid(), ConstraintFlags::default(), None).unwrap();
//! let fitted = curve.solution();
//! assert_eq!(fitted.delta.len(), sample.len());
//! ```
//!
//! The `neb` binary exposes the same pipeline as `estimate`, `simulate` and
//! `selftest` subcommands; the book under `book/` walks through the concepts
//! chapter by chapter, and its code snippets compile and run as doctests of
//! this crate.

pub mod bandwidth;
pub mod bayes;
pub mod cli;
pub mod config;
pub mod constraints;
pub mod dle;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod qp;
mod quad;
pub mod risk;
pub mod selftest;
pub mod sim;
pub mod spline;

pub use error::{Error, Result};

/// Book chapters double as doctests: every fenced Rust block in `book/src`
/// is compiled and run by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(count_models, "../../../book/src/count-models.md");
    chapter!(shrinkage_rules, "../../../book/src/shrinkage-rules.md");
    chapter!(stein_discrepancy, "../../../book/src/stein-discrepancy.md");
    chapter!(fitting, "../../../book/src/fitting.md");
    chapter!(bandwidth_chapter, "../../../book/src/bandwidth.md");
    chapter!(solver, "../../../book/src/solver.md");
    chapter!(simulations, "../../../book/src/simulations.md");
    chapter!(cli_chapter, "../../../book/src/cli.md");
}
