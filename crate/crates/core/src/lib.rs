//! Simulation and verification toolkit for global similarity scores of
//! pairwise Markov chains.
//!
//! The crate models a two-dimensional process `Z_i = (X_i, Y_i)` that is
//! Markov on the product alphabet, computes optimal global alignment scores
//! (longest common subsequence and general scoring schemes) with a
//! bit-parallel kernel, applies triplet-based random transformations, and
//! evaluates moment lower/upper bounds together with exhaustive-enumeration
//! checks of the distributional identities behind them.
//!
//! Modules map onto the main subsystems:
//!
//! - [`markov`]: transition-matrix family, stationary distributions,
//!   lumpability, primitivity, mixing-time bounds, chain sampling
//! - [`alignment`]: global score `L_n`, LCS, and the checkpointed
//!   bit-parallel recomputation engine
//! - [`counters`]: triplet counters `V`/`U`, the constants `q`, `alpha`,
//!   `b(q)`, and the bound reports
//! - [`transform`]: the single and combined random transformations
//! - [`oracle`]: exact small-`n` enumeration of conditional laws
//! - [`experiments`]: `E(m)` curves, variance scans, tail checks

pub mod alignment;
pub mod counters;
pub mod error;
pub mod experiments;
pub mod markov;
pub mod oracle;
pub mod rng;
pub mod transform;

pub use alignment::{lcs, lcs_fast, score,LcsEngine, ScoringScheme};
pub use counters::{BoundReport, TripletPattern};
pub use error::{Error, Result};
pub use markov::{
    Alphabet, ChainSample, LumpOutcome, MarginalParams, MixingBound, PairState, StationaryDist,
    TransitionMatrix,
};
