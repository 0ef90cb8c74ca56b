pub mod catalog;
pub mod codec;
pub mod embedding;
pub mod error;
pub mod lve;
pub mod metrics;
pub mod optim;
pub mod physics;
pub mod render;
pub mod seed;
pub mod seqvae;
pub mod synth;
mod tensor_io;
pub mod xml;

pub use error::{Error, Result};
