//! Post-OCR text correction for Romanised Sanskrit and other Roman-script
//! languages.

pub mod align;
pub mod bpe;
pub mod copynet;
pub mod corpus;
pub mod distort;
pub mod error;
pub mod grapheme;
pub mod metrics;
pub mod nnet;
pub mod ocr;

pub use error::{Error, Result};
