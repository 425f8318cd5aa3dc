//! Aleatoric-uncertainty-aware multimodal learning over a bipartite
//! patient–modality graph.
//!
//! Every unimodal observation is encoded as a diagonal Gaussian. Patient
//! representations are built by message passing whose attention favours
//! low-variance messages and whose variance update follows the
//! composition rule for independent Gaussians. Missing modalities are
//! not imputed; they enter the graph as high-variance edges.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the
//! experiment configuration and the command-line harness live in the
//! companion `aum` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod graph;
pub(crate) mod math;
pub mod message_passing;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use gaussian::GaussianVec;
pub use tensor::{Tensor, TensorError};
