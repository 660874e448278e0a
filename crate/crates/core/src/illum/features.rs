use rayon::prelude::*;

use super::EnvMap;
use crate::error::{Error, Result};
use crate::math::DVec3;
use crate::raymarch::Bvh;
use crate::rig::{rasterize_texels, CoarseMesh, UvAtlas};
use crate::tensor::Tensor;

pub const DEFAULT_SHININESS: [f64; 3] = [16.0, 32.0, 64.0];

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureOptions {
    pub shininess: Vec<f64>,
    /// Binary mesh visibility `h`; `false` sets `h ≡ 1`.
    pub visibility: bool,
    /// Weight each envmap texel by its solid angle (off by default).
    pub solid_angle: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions { shininess: DEFAULT_SHININESS.to_vec(), visibility: true, solid_angle: false }
    }
}

impl FeatureOptions {
    pub fn channels(&self) -> usize {
        3 + 3 * self.shininess.len()
    }
}

/// Texel-aligned features `[3 + 3·|α|, R, R]` in the order `d, s(α₁), s(α₂), …`,
/// plus the texel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub map: Tensor<f32>,
    pub mask: Vec<bool>,
}

/// Mirrors the direction towards the viewer about `n`.
pub fn reflect_view(p: DVec3, n: DVec3, viewer: DVec3) -> Result<DVec3> {
    let v = (viewer - p)
        .try_normalize()
        .ok_or_else(|| Error::invalid(format!("viewer coincides with surface point {p}")))?;
    Ok(2.0 * n.dot(v) * n - v)
}

/// Optional occlusion query for one surface point.
pub struct Visibility<'a> {
    pub bvh: &'a Bvh,
    pub skip: &'a [u32],
    pub t_min: f64,
}

impl Visibility<'_> {
    fn open(&self, p: DVec3, r: DVec3) -> bool {
        !self.bvh.occluded_front(p, r, self.t_min, f64::INFINITY, self.skip)
    }
}

/// `Σ_m E(r_m) h(r_m) max(n·r_m, 0)`.
pub fn diffuse_feature(env: &EnvMap, p: DVec3, n: DVec3, vis: Option<&Visibility>) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (m, r) in env.dirs().into_iter().enumerate() {
        let c = n.dot(r);
        if c > 0.0 && vis.is_none_or(|v| v.open(p, r)) {
            for ch in 0..3 {
                out[ch] += env.texels[m][ch] * c;
            }
        }
    }
    out
}

/// `Σ_m E(r_m) h(r_m) max(v̂·r_m, 0)^α` with `v̂` the reflected view direction.
pub fn specular_feature(env: &EnvMap, p: DVec3, n: DVec3, viewer: DVec3, alpha: f64, vis: Option<&Visibility>) -> Result<[f64; 3]> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("shininess {alpha} must be positive")));
    }
    let refl = reflect_view(p, n, viewer)?;
    let mut out = [0.0; 3];
    for (m, r) in env.dirs().into_iter().enumerate() {
        let c = refl.dot(r);
        if c > 0.0 && vis.is_none_or(|v| v.open(p, r)) {
            let w = c.powf(alpha);
            for ch in 0..3 {
                out[ch] += env.texels[m][ch] * w;
            }
        }
    }
    Ok(out)
}

/// Per-vertex features, `vertex × (3 + 3·|α|)` row-major. Visibility is
/// evaluated once per (vertex, texel) and shared by all channels.
pub fn vertex_features(mesh: &CoarseMesh, env: &EnvMap, viewer: DVec3, opts: &FeatureOptions) -> Result<Vec<f64>> {
    if let Some(a) = opts.shininess.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::invalid(format!("shininess {a} must be positive")));
    }
    let dirs = env.dirs();
    let weights: Vec<[f64; 3]> = if opts.solid_angle {
        env.texels.iter().zip(env.solid_angles()).map(|(t, w)| t.map(|v| v * w)).collect()
    } else {
        env.texels.clone()
    };
    let bvh = opts.visibility.then(|| Bvh::build(mesh));
    let adjacency = mesh.vertex_faces();
    let t_min = 1e-4 * mesh.bounds().extent().max_element().max(1e-12);
    let ch = opts.channels();
    let rows: Vec<Result<Vec<f64>>> = (0..mesh.vertices.len())
        .into_par_iter()
        .map(|i| {
            let (p, n) = (mesh.vertices[i], mesh.normals[i]);
            let refl = reflect_view(p, n, viewer)?;
            let vis = bvh.as_ref().map(|b| Visibility { bvh: b, skip: &adjacency[i], t_min });
            let mut row = vec![0.0; ch];
            for (m, &r) in dirs.iter().enumerate() {
                let cd = n.dot(r);
                let cs = refl.dot(r);
                if cd <= 0.0 && cs <= 0.0 {
                    continue;
                }
                if let Some(v) = &vis {
                    if !v.open(p, r) {
                        continue;
                    }
                }
                let e = weights[m];
                if cd > 0.0 {
                    for c in 0..3 {
                        row[c] += e[c] * cd;
                    }
                }
                if cs > 0.0 {
                    for (a, alpha) in opts.shininess.iter().enumerate() {
                        let w = cs.powf(*alpha);
                        for c in 0..3 {
                            row[3 + 3 * a + c] += e[c] * w;
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect();
    Ok(rows.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

/// Per-vertex features projected onto the atlas texels.
pub fn build_features(mesh: &CoarseMesh, atlas: &UvAtlas, env: &EnvMap, viewer: DVec3, opts: &FeatureOptions) -> Result<FeatureMap> {
    let per_vertex = vertex_features(mesh, env, viewer, opts)?;
    let grid = rasterize_texels(mesh, atlas, &per_vertex, opts.channels())?;
    let r = grid.resolution;
    Ok(FeatureMap { map: Tensor::new(&[grid.channels, r, r], grid.data.iter().map(|&v| v as f32).collect())?, mask: grid.mask })
}
