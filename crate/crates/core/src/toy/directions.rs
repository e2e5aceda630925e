//! Analytic edit directions of the toy generator.

use super::generator::ToyGenerator;
use crate::editing::EditDirection;
use crate::error::Result;

pub const GROW_RADIUS: &str = "grow_radius";
pub const SMILE: &str = "smile";
pub const HUE: &str = "hue";

/// Unit directions moving style coordinates of one layer: both face radii
/// (geometry layer), mouth curvature and skin hue (appearance layer).
pub fn toy_directions(gen: &ToyGenerator) -> Result<Vec<EditDirection>> {
    Ok(vec![
        EditDirection::unit(GROW_RADIUS, gen.style_direction(&[(2, 1.0), (3, 1.0)]), 1.0, Some(vec![0]))?,
        EditDirection::unit(SMILE, gen.style_direction(&[(6, 1.0)]), 1.0, Some(vec![1]))?,
        EditDirection::unit(HUE, gen.style_direction(&[(5, 1.0)]), 1.0, Some(vec![1]))?,
    ])
}
