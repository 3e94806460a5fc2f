//! Synthetic degradation of text line images and selection of degradation
//! settings whose OCR accuracy matches a target distribution.

mod config;
mod image;
mod render;
mod select;
pub(crate) mod steps;

pub use config::{apply_config, apply_config_stream, DistortionConfig, DistortionGrid};
pub use image::{GrayImage, BLACK, WHITE};
pub use render::{BitmapFont, BitmapReader, ExternalRenderer, TextRenderer, LINE_HEIGHT};
pub use select::{
    config_crrs, crr_histogram, kl_divergence, select_configs, ConfigScore, CrrDistribution, SelectOptions,
    Selection, DEFAULT_ALPHA, DEFAULT_BIN_WIDTH,
};
pub use steps::{apply_step, erode, gamma, gaussian_noise, perspective, salt_pepper, Step};
