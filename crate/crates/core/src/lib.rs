//! Text embedding maps for document images.
//!
//! The crate turns OCR tokens into pixel-aligned embedding maps, fuses them
//! with image channels for a small per-pixel classifier, post-processes the
//! predicted probabilities into class masks and evaluates the masks with
//! page-level IoU, precision and recall plus Welch significance tests.

pub mod cli;
pub mod embeddings;
pub mod embedmap;
pub mod error;
pub mod experiment;
pub mod fusionnet;
pub mod ingest;
pub mod postproc;
pub mod segmetrics;
pub mod synthgen;

pub(crate) mod binio;

pub use error::{Error, Result};
