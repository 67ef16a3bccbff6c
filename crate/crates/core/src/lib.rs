//! Build long topic sequences and IR-driven controlled streams from a
//! query/passage relevance corpus, then run rankers continually over them and
//! measure retrieval quality (MRR@K), forgetting (mf) and task similarity
//! (c-score).

pub mod clustering;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod retrieval;
pub mod seed;
pub mod streams;
pub mod synthetic;

pub use error::{Error, Result};
