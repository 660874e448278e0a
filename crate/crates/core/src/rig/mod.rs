//! Skeleton, skinning, pose interpolation, UV atlas and texel projection.

mod atlas;
mod mesh;
mod pose;
mod skeleton;
#[cfg(test)]
mod tests;

pub use atlas::{barycentric_2d, locate_uv, rasterize_texels, surface_point, TexelGrid, TexelRef, UvAtlas};
pub use mesh::CoarseMesh;
pub use pose::{load_pose_stream, read_pose_stream, save_pose_stream, slerp_pose, write_pose_stream, Pose};
pub use skeleton::{blend_vertices, lbs_skin, Dof, Joint, Skeleton, MAX_INFLUENCES};
