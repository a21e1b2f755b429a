//! Euclidean distance matrix completion on the fixed-rank manifold.
//!
//! Given a Bernoulli sample of squared pairwise distances among `n` points,
//! recover the rank-`r` centered Gram matrix with Riemannian gradient descent
//! driven by de-biased dual-basis sampling operators, then read off the
//! points with classical MDS.
//!
//! Indices are 0-based throughout; a pair is stored as `(i, j)` with `i < j`.

pub mod diagnostics;
pub mod dualbasis;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod manifold;
pub mod rng;
pub mod sampling;
pub mod solver;
pub mod synthdata;

#[doc(hidden)]
pub mod testutil;

pub use error::{EdmcError, Result};
pub use geometry::{DenseSym, PointCloud, RankRGram};
pub use sampling::{IndexPair, IndexSet, SampledDistances};
pub use solver::{dbre_solve, init_one_step, Problem, SolverConfig, SolverTrace};
