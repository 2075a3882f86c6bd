//! Multispectral (RGB + thermal IR) vision-language detection toolkit.
//!
//! The crate covers the numeric kernels, both detection-head variants
//! (query-based and convolutional), adaptive pseudo-labeling, few-shot split
//! sampling over COCO-style annotations, and a COCO-style evaluator.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod json;
pub mod pseudo;
pub mod tensor;
pub mod tensor_io;

pub use error::{Error, Result};
