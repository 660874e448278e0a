//! Synthetic light stage: procedural hand, ray-cast ground truth and capture simulation.

mod capture;
mod hand;
mod opacity;
mod render;
#[cfg(test)]
mod tests;

pub use capture::{simulate_capture, stage_rig, CameraRing, CaptureDataset, CaptureFrame, CaptureScript, Lighting, ManifestRecord};
pub use hand::{generate_hand, joint_limits, Capsule, HandParams, PosedSdf, ProceduralHand, HAND_POSE_DIM};
pub use opacity::{mean_voxel_extent, opacity_from_sdf, FrameGeometry, OpacityConfig, HAND_SHELL};
pub use render::{Material, ReferenceScene, SpecularLobe, SurfaceHit, GT_SCALE};
