//! Prompt-learning text classification: templates turn a conversation into a
//! masked prompt, a scoring backend rates candidate words at the mask, and
//! verbalizers map those words onto labels. Several template/verbalizer
//! pairs can be ensembled, and few-shot training sets can be chosen by
//! embedding-space centrality.

pub mod corpus;
pub mod embeddings;
pub mod ensembling;
pub mod error;
pub mod evaluation;
pub mod prompting;
pub mod rng;
pub mod runner;
pub mod sampling;
pub mod scoring;
pub mod synthetic;
pub mod verbalizing;

pub use error::{Error, Result};
