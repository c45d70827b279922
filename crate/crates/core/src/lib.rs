//! Multilingual vulnerability detection with a pool of language-specific
//! prompt matrices selected by key-query matching.
//!
//! Everything here is `no_std` + `alloc`: corpus preprocessing, the
//! tokenizer, a small reverse-mode tensor engine, the transformer encoder,
//! the parameter pool, the classifier, Adam training and metrics. File
//! formats and the command line live in the `mulvuln` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod optim;
pub mod pool;
pub mod tensor;
pub mod tokenizer;
pub mod train;
