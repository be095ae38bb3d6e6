//! TMAE self-supervised pretraining and the TouchSeqNet Siamese verifier for
//! touch-dynamics continuous authentication, on a small reverse-mode
//! autodiff engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod fingerca;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod synthgen;
pub mod tacn;
pub mod tensor;
pub mod tmae;
pub mod tokenizer;
pub mod touchseqnet;

pub(crate) mod linalg;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::Tensor;
