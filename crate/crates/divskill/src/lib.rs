//! Residual skill optimization for complementary text-to-SQL ensembles.
//!
//! The crate is organized around the ensemble lifecycle:
//!
//! - [`domain`] — skills, instances, outcome records, residual sets.
//! - [`coverage`] — the population Pass@K objective, greedy selection, and
//!   the (1 - 1/e) guarantee check.
//! - [`metrics`] — empirical success rates, Pass@k curves, selected
//!   accuracy.
//! - [`residual`] — the batch-sequential optimization engine.
//! - [`agents`] — synthetic and LLM-backed executors behind one interface.
//! - [`selection`] — execution-output dedup plus the swapped-order pairwise
//!   tournament.
//! - [`exec`] — SQLite execution, result canonicalization, fingerprints.
//! - [`dataset`] — manifest ingestion and gold-result caching.
//! - [`trajectory`] — action extraction and edit-distance diversity
//!   diagnostics.
//!
//! Probability arithmetic is generic over [`scalar::ProbScalar`]; the
//! aliases below pin the two instantiations used throughout.

pub mod agents;
pub mod coverage;
pub mod dataset;
pub mod domain;
pub mod exec;
pub mod metrics;
pub mod residual;
pub mod scalar;
pub mod selection;
pub mod synth;
pub mod trajectory;

/// Default float probability scalar.
pub type Prob = f64;

/// Exact probability scalar for 0/1 matrices and tie-sensitive tests.
pub type ExactProb = num_rational::BigRational;

/// Population matrix over floats.
pub type FloatPopulation = coverage::PopulationMatrix<Prob>;

/// Population matrix over exact rationals.
pub type ExactPopulation = coverage::PopulationMatrix<ExactProb>;

/// Exact acceptance-rule success rate.
pub type Rate = residual::Rate;
