//! Topic-attention network for multi-label aspect category detection.
//!
//! The crate is self-contained: a small reverse-mode tensor core drives a
//! bi-directional GRU encoder, a per-topic attention layer, and squash-based
//! category heads. Training minimizes a mean-square-error objective plus an
//! orthogonality penalty on the topic matrix. Corpus handling covers the
//! SemEval 2014/2016 restaurant review formats, word-embedding text files,
//! and stratified train/validation splitting.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod training;
