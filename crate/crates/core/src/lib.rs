//! Exact simulation of probabilistic finite automata with ε-transitions,
//! brute-force oracles, random instance generation, and gradient-based
//! learning of automata from labeled strings.

pub mod engine;
pub mod error;
pub mod format;
pub mod generator;
pub mod learner;
pub mod oracle;
pub mod stochastic;

pub use engine::{closure_apply, ClosureMode, ClosureOutcome, FixedPointParams, Pfa, PfaParts, StateTrace};
pub use error::{PfaError, Result};
pub use format::PfaDocument;
pub use stochastic::{
    seeded_rng, AcceptIndicator, Matrix, ProbVector, SeededRng, StochasticKind, StochasticMatrix,
};
