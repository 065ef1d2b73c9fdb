pub mod cache_sim;
pub mod cli;
pub mod codec;
pub mod data_ingest;
pub mod error;
pub mod experiment;
pub mod federated;
pub mod gp_model;
pub mod predictor;
pub mod quantizer;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
