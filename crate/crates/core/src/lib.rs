//! Inference for continuous-time Bayesian networks: exact inference over the
//! amalgamated joint process and expectation propagation over cluster graphs.

pub mod algebra;
pub mod cli;
pub mod clustergraph;
pub mod ep;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod model;
pub mod sampler;
pub mod scope;
pub mod suffstats;
pub mod tolerance;

pub use error::{CtbnError, Result};
