//! Temporally coherent semantic face editing in video.
//!
//! The pipeline aligns face crops with temporally smoothed landmarks, inverts
//! them with an encoder, fine-tunes the generator around all pivots at once,
//! applies a latent edit, tunes the generator again so the edited crop blends
//! into its surroundings, and pastes the result back into the frame.
//! [`metrics`] scores identity consistency along the clip.
//!
//! Models are reached through the traits in [`model`]; [`toy`] provides a
//! small procedural backend that satisfies every contract.

pub mod alignment;
pub mod editing;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod pti;
pub mod seed;
pub mod stitching;
pub mod toy;

pub use error::{Error, Result};
