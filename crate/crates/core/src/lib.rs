//! Recurrent neural network grammars trained as a variational autoencoder:
//! a discriminative parser serves as the approximate posterior over trees
//! and a generative RNNG as the joint model of sentences and trees.

pub mod cli;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evalscore;
pub mod inference;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod transitions;
pub mod tree;
pub mod treebank;

pub use error::{Error, Result};
