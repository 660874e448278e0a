//! Relightable articulated volumetric-primitive rendering.
//!
//! The crate covers the whole pipeline: a small reverse-mode autodiff
//! ([`tensor`]), skinned coarse meshes ([`rig`]), volumetric primitives attached to
//! them ([`primitives`]), ray marching and visibility ([`raymarch`]), illumination
//! features and light rigs ([`illum`]), the OLAT teacher and envmap student
//! decoders ([`appearance`]), their training ([`training`]), timed inference
//! ([`runtime`]) and a synthetic capture generator that stands in for a light
//! stage ([`synth`]).

pub mod appearance;
pub mod error;
pub mod illum;
pub mod math;
pub mod primitives;
pub mod raymarch;
pub mod rig;
pub mod runtime;
pub mod synth;
pub mod tensor;
pub mod training;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
