use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hand::{PosedSdf, ProceduralHand};
use crate::error::{Error, Result};
use crate::primitives::PrimitiveSet;
use crate::raymarch::MarchConfig;
use crate::rig::{CoarseMesh, Pose, UvAtlas};
use crate::tensor::Tensor;

/// Normal half-extent factor used for hand primitives.
pub const HAND_SHELL: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpacityConfig {
    /// Opacity deep inside the surface.
    pub sharpness: f64,
    /// Sigmoid width in units of the mean smallest voxel extent.
    pub bandwidth_voxels: f64,
    /// Inward shift of the sigmoid center, in the same units.
    pub inset_voxels: f64,
}

impl Default for OpacityConfig {
    fn default() -> Self {
        OpacityConfig { sharpness: 1.0, bandwidth_voxels: 0.1, inset_voxels: 0.5 }
    }
}

pub fn mean_voxel_extent(set: &PrimitiveSet) -> f64 {
    let n = set.len().max(1) as f64;
    set.scales.iter().map(|s| 2.0 * s.min_element() / set.s as f64).sum::<f64>() / n
}

/// `sharpness · sigmoid(−(SDF(p) + inset)/bandwidth)` at every voxel center, `[N,1,S,S,S]`.
pub fn opacity_from_sdf(sdf: &PosedSdf<'_>, set: &PrimitiveSet, sharpness: f64, bandwidth: f64, inset: f64) -> Result<Tensor<f32>> {
    if !(bandwidth > 0.0) || !(sharpness >= 0.0) {
        return Err(Error::invalid(format!("opacity sharpness {sharpness}, bandwidth {bandwidth}")));
    }
    let s = set.s;
    let data: Vec<f32> = (0..set.len())
        .into_par_iter()
        .flat_map_iter(|k| {
            set.voxel_positions(k)
                .into_iter()
                .map(|p| (sharpness / (1.0 + ((sdf.eval(p) + inset) / bandwidth).exp())) as f32)
                .collect::<Vec<_>>()
        })
        .collect();
    Tensor::new(&[set.len(), 1, s, s, s], data)
}

/// Everything the renderers need about one posed frame.
#[derive(Clone, Debug)]
pub struct FrameGeometry {
    pub mesh: CoarseMesh,
    pub set: PrimitiveSet,
    pub opacity: Tensor<f32>,
    pub march: MarchConfig,
}

impl FrameGeometry {
    pub fn build(hand: &ProceduralHand, atlas: &UvAtlas, pose: &Pose, w: usize, s: usize, cfg: &OpacityConfig) -> Result<Self> {
        let mesh = hand.posed_mesh(pose)?;
        let set = crate::primitives::place_primitives(&mesh, atlas, w, s, HAND_SHELL)?;
        let sdf = hand.sdf(pose)?;
        let voxel = mean_voxel_extent(&set);
        let opacity = opacity_from_sdf(&sdf, &set, cfg.sharpness, cfg.bandwidth_voxels * voxel, cfg.inset_voxels * voxel)?;
        let march = MarchConfig::for_set(&set);
        Ok(FrameGeometry { mesh, set, opacity, march })
    }
}
