//! Synthetic anti-money-laundering transaction graphs.
//!
//! An agent-based backbone produces normal activity, seed laundering clusters are
//! hardened against a transaction monitor by a group-relative policy optimizer,
//! and the hardened clusters are embedded into the backbone. Fidelity
//! diagnostics compare the result against stylized facts of real payment graphs.

pub mod anomaly;
pub mod backbone;
pub mod embedder;
pub mod fidelity;
pub mod grpo;
pub mod model;
pub mod monitor;
pub mod pipeline;
pub mod rng;
