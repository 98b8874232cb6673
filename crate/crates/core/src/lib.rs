//! Graph-augmented document-level neural machine translation.

// Dense numeric loops read more clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod ablate;
pub mod decode;
pub mod graph;
pub mod graph_encoder;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod tokenize;
pub mod train;
