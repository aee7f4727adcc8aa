//! Interlaced encoder networks for telling antonyms from synonyms.
//!
//! Two feed-forward encoders are trained with margin losses, their scores
//! seed attentive word graphs, and four graph-convolution branches feed a
//! small classifier.

pub mod checkpoint;
pub mod dataset;
pub mod embeddings;
pub mod encoders;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod sparse;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
