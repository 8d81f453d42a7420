//! Next-POI recommendation over check-in histories: data preparation,
//! coordinate encoding, POI embeddings and a prompt-based sequence model.

pub mod config;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod gcim;
pub mod geo;
pub mod ingest;
pub mod nn;
pub mod pam;
pub mod recommender;
pub mod synthetic;

pub use config::Config;
pub use error::{Error, Result};
