//! Planning-concept extraction from a chess agent with contrastive sparse autoencoders.
//!
//! The pipeline runs bottom-up through these modules:
//!
//! * [`chess`]: rules, FEN/UCI/SAN, the 112-plane input encoding and the 1858-entry policy index
//! * [`agent`]: the SE-residual policy/WDL/moves-left network and its weight files
//! * [`sampler`]: move scoring, optimal and suboptimal rollouts, tournaments
//! * [`dataset`]: PGN ingestion, root selection and the paired activation files
//! * [`csae`]: the contrastive sparse autoencoder, its losses, gradients and training
//! * [`metrics`]: activation tables and the sanity metrics computed over them
//! * [`analysis`]: activation maximization, clustering, taxonomy and feature comparison

pub mod agent;
pub mod analysis;
pub mod chess;
pub mod csae;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod metrics;
pub mod sampler;

pub use error::{Error, Result};
