//! Technology extraction from company documents, semantic ranking of
//! technologies against company profiles, and Precision@k evaluation.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod gateway;
pub mod lexicon;
pub mod pipeline;
pub mod ranking;
pub mod text;

pub use error::{Error, Result};
