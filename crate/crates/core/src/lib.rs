//! Conceptual-contextual embeddings.
//!
//! A text encoder is trained so that, for every knowledge-graph triplet
//! `(h, r, t)`, the encoding of `h`'s name in context plus the embedding of
//! `r` lands near the encoding of `t`. Because concepts are represented
//! through their names and corpus contexts, the encoder can embed concepts
//! that never appear in a training triplet.

pub mod artifact;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod index;
pub mod kg;
pub mod model;
pub mod synth;
pub mod text;
pub mod training;

pub use error::{Error, Result};
