//! Volumetric primitives attached to the coarse mesh, their UV-stacked payload
//! layout and primitive-local direction encodings.

mod layout;
mod place;
#[cfg(test)]
mod tests;

pub use layout::{stack_uv, unstack_uv, VolumeTexture};
pub use place::{place_primitives, PrimitiveSet, DEFAULT_SHELL};
