//! Heterogeneous Graph Transformer engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`hetgraph`]: typed, timestamped heterogeneous graph store and file ingestion
//! - [`sampler`]: type-balanced importance sampling of timestamp-instantiated subgraphs
//! - [`tensor`]: dense tensors with a reverse-mode tape and gradient checking
//! - [`hgt`]: the transformer layer stack (mutual attention, message passing,
//!   target-specific aggregation, relative temporal encoding)
//! - [`tasks`]: classification and link-scoring heads plus ranking metrics
//! - [`train`]: AdamW, cosine annealing and the mini-batch training loop
//! - [`synth`]: synthetic graph generators used for desk-scale experiments
//! - [`cli`]: the subcommands behind the `hgt` binary

pub mod cli;
pub mod error;
pub mod hetgraph;
pub mod hgt;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
