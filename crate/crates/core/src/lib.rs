pub mod corpus;
pub mod embedding;
pub mod http;
pub mod text;
pub mod vector_index;
pub mod llm;
pub mod rerank;
pub mod ensemble;
pub mod providers;
pub mod evolve;
pub mod explain;
pub mod eval;
pub mod config;
pub mod error;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
