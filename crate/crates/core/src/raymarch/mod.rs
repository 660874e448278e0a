//! Ray marching of volumetric primitives, deep shadow volumes and mesh
//! visibility queries.

mod bvh;
mod camera;
mod field;
mod image_io;
mod march;
mod shadow;

pub use bvh::{intersect_triangle, Bvh, Hit};
pub use camera::Camera;
pub use field::{Field, MarchConfig};
pub use image_io::{load_pfm, save_pfm, save_png, to_srgb8};
pub use march::{march, march_backward, march_recorded, ColorOperator, MarchRecord};
pub use shadow::{deep_shadow, deep_shadow_reference};
