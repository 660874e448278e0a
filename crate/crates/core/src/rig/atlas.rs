use rayon::prelude::*;

use super::CoarseMesh;
use crate::error::{Error, Result};
use crate::math::{DVec2, DVec3};

/// A texel's owning face and barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TexelRef {
    pub face: u32,
    pub bary: [f64; 3],
}

/// Texel ownership map: texel `(row, col)` has center
/// `u = (col + 0.5) / res`, `v = (row + 0.5) / res`.
#[derive(Clone, Debug, PartialEq)]
pub struct UvAtlas {
    pub resolution: usize,
    pub texels: Vec<Option<TexelRef>>,
}

/// Barycentrics of `p` in the 2-D triangle, `None` when degenerate.
pub fn barycentric_2d(tri: &[DVec2; 3], p: DVec2) -> Option<[f64; 3]> {
    let [a, b, c] = *tri;
    let det = (b - a).perp_dot(c - a);
    if det.abs() < 1e-300 {
        return None;
    }
    let l1 = (p - a).perp_dot(c - a) / det;
    let l2 = (b - a).perp_dot(p - a) / det;
    Some([1.0 - l1 - l2, l1, l2])
}

const INSIDE_EPS: f64 = 1e-12;

fn clamp_bary(b: [f64; 3]) -> [f64; 3] {
    let c = b.map(|x| x.max(0.0));
    let s: f64 = c.iter().sum();
    c.map(|x| x / s)
}

impl UvAtlas {
    /// Assigns each texel to the first face (in index order) covering its center.
    pub fn build(mesh: &CoarseMesh, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::invalid("atlas resolution must be positive"));
        }
        let res = resolution as f64;
        let mut texels: Vec<Option<TexelRef>> = vec![None; resolution * resolution];
        for (f, tri) in mesh.uv.iter().enumerate() {
            let lo = tri[0].min(tri[1]).min(tri[2]) * res - 0.5;
            let hi = tri[0].max(tri[1]).max(tri[2]) * res - 0.5;
            let last = resolution as i64 - 1;
            let (c0, c1) = ((lo.x.ceil() as i64).max(0), (hi.x.floor() as i64).min(last));
            let (r0, r1) = ((lo.y.ceil() as i64).max(0), (hi.y.floor() as i64).min(last));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let idx = (r * resolution as i64 + c) as usize;
                    if texels[idx].is_some() {
                        continue;
                    }
                    let p = DVec2::new((c as f64 + 0.5) / res, (r as f64 + 0.5) / res);
                    if let Some(b) = barycentric_2d(tri, p) {
                        if b.iter().all(|&x| x >= -INSIDE_EPS) {
                            texels[idx] = Some(TexelRef { face: f as u32, bary: clamp_bary(b) });
                        }
                    }
                }
            }
        }
        Ok(UvAtlas { resolution, texels })
    }

    pub fn get(&self, row: usize, col: usize) -> Option<TexelRef> {
        self.texels[row * self.resolution + col]
    }

    pub fn valid_count(&self) -> usize {
        self.texels.iter().filter(|t| t.is_some()).count()
    }

    /// Nearest valid texel to `(row, col)` by Euclidean texel distance; ties
    /// go to the lowest index.
    pub fn nearest_valid(&self, row: usize, col: usize) -> Option<(usize, usize)> {
        let n = self.resolution;
        (0..n * n)
            .filter(|&i| self.texels[i].is_some())
            .min_by_key(|&i| {
                let (r, c) = ((i / n) as i64, (i % n) as i64);
                (r - row as i64).pow(2) + (c - col as i64).pow(2)
            })
            .map(|i| (i / n, i % n))
    }

    /// Texel center in UV space.
    pub fn texel_uv(&self, row: usize, col: usize) -> DVec2 {
        let res = self.resolution as f64;
        DVec2::new((col as f64 + 0.5) / res, (row as f64 + 0.5) / res)
    }
}

/// Face and barycentrics at an arbitrary UV, first covering face wins.
pub fn locate_uv(mesh: &CoarseMesh, uv: DVec2) -> Option<TexelRef> {
    mesh.uv.iter().enumerate().find_map(|(f, tri)| {
        barycentric_2d(tri, uv)
            .filter(|b| b.iter().all(|&x| x >= -INSIDE_EPS))
            .map(|b| TexelRef { face: f as u32, bary: clamp_bary(b) })
    })
}

/// Surface point interpolated at a texel reference.
pub fn surface_point(mesh: &CoarseMesh, t: &TexelRef) -> DVec3 {
    let tri = mesh.triangle(t.face as usize);
    tri[0] * t.bary[0] + tri[1] * t.bary[1] + tri[2] * t.bary[2]
}

/// Channel-major texel values plus a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelGrid {
    pub channels: usize,
    pub resolution: usize,
    /// `channels × resolution × resolution`.
    pub data: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TexelGrid {
    pub fn at(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[(ch * self.resolution + row) * self.resolution + col]
    }
}

/// Barycentric projection of per-vertex values (`vertex × channels`, row-major)
/// onto the atlas; invalid texels read 0.
pub fn rasterize_texels(mesh: &CoarseMesh, atlas: &UvAtlas, per_vertex: &[f64], channels: usize) -> Result<TexelGrid> {
    if channels == 0 || per_vertex.len() != mesh.vertices.len() * channels {
        return Err(Error::shape("rasterize_texels", &[per_vertex.len()], &[mesh.vertices.len(), channels]));
    }
    let n = atlas.resolution * atlas.resolution;
    let mut data = vec![0.0; channels * n];
    data.par_chunks_mut(n).enumerate().for_each(|(ch, plane)| {
        for (dst, t) in plane.iter_mut().zip(&atlas.texels) {
            if let Some(t) = t {
                let f = mesh.faces[t.face as usize];
                *dst = (0..3).map(|k| t.bary[k] * per_vertex[f[k] as usize * channels + ch]).sum();
            }
        }
    });
    Ok(TexelGrid { channels, resolution: atlas.resolution, data, mask: atlas.texels.iter().map(Option::is_some).collect() })
}
