//! Hierarchical token-semantic audio transformer.
//!
//! This crate holds everything that is pure computation: a small dense tensor
//! type with tape-based reverse-mode differentiation, the log-mel frontend,
//! patch tokenization, the windowed-attention encoder, the token-semantic
//! head, augmentation, optimization and evaluation metrics. It is `no_std`
//! and only needs `alloc`; file formats and the command line live in the
//! companion `htsat` crate.
//!
//! All numeric code is generic over [`Real`], so the same forward and
//! backward paths run in `f32` for training and in `f64` for gradient
//! verification.

#![no_std]

extern crate alloc;

pub mod augment;
pub mod config;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod train;
pub mod window;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use model::{HtsModel, ParamStore};
pub use real::Real;
pub use rng::SeededRng;
pub use tensor::Tensor;
