//! Diversity-preference-aware link recommendation.
//!
//! A user's diversity preference is the per-dimension histogram of profile
//! values held by their friends. Recommending `k` of `m` candidates so that
//! the recommended friends' value histograms point in the same direction as
//! the preference, summed over profile dimensions, is a binary sum-of-ratios
//! program. This crate solves its continuous relaxation with an iterative
//! Lagrangian scheme ([`solver`]), rounds the relaxed solution to a top-k
//! list, and ships the pieces needed to evaluate it:
//!
//! - [`model`]: social graph, profile store, preference vectors and sparse
//!   candidate profile matrices.
//! - [`problem`]: the per-user matching problem with compacted rows.
//! - [`subproblem`]: projected gradient ascent on the capped simplex.
//! - [`solver`]: the outer parameter iteration and top-k rounding.
//! - [`oracle`]: exhaustive search for small instances.
//! - [`baselines`]: MMR, MSD, DPP, DiRec and DPA-MMR re-rankers.
//! - [`metrics`]: DPMS, precision/recall/F1, DCG and paired t-tests.
//! - [`synth`]: seeded synthetic bundles with planted preference structure.
//! - [`io`] and [`pipeline`]: line-oriented file formats and the batch runs.
// Negated comparisons below reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod baselines;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod problem;
pub mod solver;
pub mod subproblem;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    CandidateProfileMatrix, CandidateSet, DiversityDistribution, DiversityPreference, FriendScope,
    ProfileStore, SocialGraph, UserId,
};
pub use problem::MatchingProblem;
pub use solver::{solve_dpa, Recommendation, SolveTrace, SolverConfig};
