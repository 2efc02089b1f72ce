//! Construction of conversational-search corpora with inserted native ads,
//! and detection of those ads.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod ingestion;
pub mod injector;
pub mod language;
pub mod llm;
pub mod llm_detector;
pub mod pair_builder;
pub mod segment;
pub mod splitter;
pub mod synthetic;
pub mod text;
pub mod vocabulary;

pub use error::{ClientError, Error, Result};
