use rayon::prelude::*;

use super::field::{walk_segments, Field, MarchConfig};
use crate::error::{Error, Result};
use crate::math::DVec3;
use crate::primitives::PrimitiveSet;
use crate::tensor::Tensor;

/// Per-voxel transmittance from a point light, `[N, 1, S, S, S]`.
///
/// Each voxel center is reached by marching from the light; the last half
/// voxel before the destination is excluded so a voxel does not shadow itself.
pub fn deep_shadow(set: &PrimitiveSet, opacity: &[f32], light: DVec3, cfg: &MarchConfig) -> Result<Tensor<f32>> {
    cfg.validate()?;
    if !light.is_finite() {
        return Err(Error::invalid(format!("light position {light} is not finite")));
    }
    let field = Field::new(set, opacity, None)?;
    let v = set.voxels_per_primitive();
    let s = set.s;
    let data: Vec<f32> = (0..set.len())
        .into_par_iter()
        .flat_map_iter(|k| {
            let eps = set.scales[k].min_element() / s as f64;
            let field = &field;
            set.voxel_positions(k).into_iter().map(move |p| transmittance(field, light, p, eps, cfg) as f32)
        })
        .collect();
    debug_assert_eq!(data.len(), set.len() * v);
    Tensor::new(&[set.len(), 1, s, s, s], data)
}

/// Dense-step, no-early-exit variant used as a refinement reference.
pub fn deep_shadow_reference(set: &PrimitiveSet, opacity: &[f32], light: DVec3, cfg: &MarchConfig, refine: usize) -> Result<Tensor<f32>> {
    let fine = MarchConfig { step: cfg.step / refine.max(1) as f64, cutoff: 0.0, ..*cfg };
    deep_shadow(set, opacity, light, &fine)
}

fn transmittance(field: &Field, light: DVec3, p: DVec3, eps: f64, cfg: &MarchConfig) -> f64 {
    let to = p - light;
    let dist = to.length();
    let t_end = dist - eps;
    if t_end <= 0.0 {
        return 1.0;
    }
    let dir = to / dist;
    let iv = field.intervals(light, dir, t_end);
    let mut depth = 0.0;
    let cutoff_depth = if cfg.cutoff > 0.0 { -cfg.cutoff.ln() } else { f64::INFINITY };
    walk_segments(&iv, cfg.step, t_end, |pieces| {
        for pc in pieces {
            if let Some(taps) = field.taps_clamped(pc.k as usize, light + dir * pc.mid()) {
                depth += cfg.density * field.opacity_at(&taps) * pc.len();
            }
        }
        depth <= cutoff_depth
    });
    if depth > cutoff_depth {
        return 0.0;
    }
    (-depth).exp()
}
