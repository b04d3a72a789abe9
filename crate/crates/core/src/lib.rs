//! Dynamic latent factor model built from a recurrent variational
//! autoencoder (the factor network) and an LSTM over firm characteristics
//! (the beta network), with the data pipeline and evaluation metrics
//! needed to train and score it on monthly stock panels.

pub mod beta_net;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod factor_net;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use exec::Exec;
