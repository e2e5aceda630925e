//! Desk-scale backend: procedural face scenes, a style-based generator and
//! fitted or analytic companions for every model contract.

pub mod directions;
pub mod embedder;
pub mod encoder;
pub mod generator;
pub mod perceptual;
pub mod scene;
pub mod segmenter;
pub mod build;

pub use build::{build_toy_models, load_toy_models, save_toy_models, write_toy_clip, ToyCertificate, ToyModels, DEFAULT_TOY_SEED};
