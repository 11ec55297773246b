//! Sparse multilayer perceptrons whose topology evolves during training.
//!
//! The network starts from an Erdős–Rényi random topology and, at the end of
//! every epoch, prunes weak connections and regrows new ones. Three pruning
//! criteria are provided:
//!
//! - **SET**: smallest weight magnitudes, uniform regrowth.
//! - **Path-weight**: connections with the smallest normalized weight inside
//!   the weakest input-to-output paths; regrowth favors neurons that many
//!   strong paths pass through.
//! - **Sensitivity**: gradient magnitude relative to weight magnitude,
//!   accumulated during backpropagation; regrowth favors neurons with large
//!   outgoing sensitivity.
//!
//! [`experiment`] ties everything into a reproducible training run driven by
//! a flat config file.

pub mod data;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod net;
pub mod paths;
pub mod seeds;
pub mod sensitivity;
pub mod topology;

pub use error::{Error, Result};
