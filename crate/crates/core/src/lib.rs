//! Draft-and-verify speculative decoding for masked diffusion language models.
//!
//! A fast, approximate *drafter* unmasks tokens for `K` steps; a single pass
//! of an accurate *verifier* then decides which drafted tokens to send back
//! to MASK. At desk scale both roles are played by exact posterior oracles
//! ([`models::MarkovOracle`], [`models::EnumeratedOracle`]) with the drafter
//! wrapped in controllable approximation error ([`models::degrade`]).
//!
//! The [`bench`] module turns this into a cost/quality harness: synthetic
//! tasks with exact reference answers, NFE-based cost accounting, parameter
//! sweeps, and Pareto-frontier extraction.

pub mod bench;
pub mod config;
pub mod diffusion;
pub mod distribution;
pub mod error;
pub mod extmodel;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod sequence;
pub mod verification;

pub use error::{Error, Result};
