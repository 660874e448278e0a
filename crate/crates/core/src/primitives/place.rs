use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{orthonormality_error, DMat3, DVec2, DVec3};
use crate::rig::{locate_uv, surface_point, CoarseMesh, TexelRef, UvAtlas};
use crate::tensor::{ParamStore, Tensor};

/// Normal-direction half-extent as a fraction of the larger tangent half-extent.
pub const DEFAULT_SHELL: f64 = 0.3;

const MIN_EXTENT: f64 = 1e-6;

/// `N = w²` oriented boxes, each an `S³` voxel grid.
///
/// Primitive `k = r·w + q` sits at UV cell row `r`, column `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveSet {
    pub w: usize,
    pub s: usize,
    pub centers: Vec<DVec3>,
    /// Columns are tangent, bitangent, normal.
    pub rotations: Vec<DMat3>,
    /// Half-extents along the local axes.
    pub scales: Vec<DVec3>,
}

/// Tangent frame and UV Jacobian of a face.
fn face_frame(mesh: &CoarseMesh, t: &TexelRef) -> (DMat3, DVec3, DVec3) {
    let f = t.face as usize;
    let [p0, p1, p2] = mesh.triangle(f);
    let [u0, u1, u2] = mesh.uv[f];
    let (e1, e2) = (p1 - p0, p2 - p0);
    let (d1, d2) = (u1 - u0, u2 - u0);
    let det = d1.perp_dot(d2);
    let (dpdu, dpdv) = if det.abs() > 1e-300 {
        ((e1 * d2.y - e2 * d1.y) / det, (e2 * d1.x - e1 * d2.x) / det)
    } else {
        (DVec3::ZERO, DVec3::ZERO)
    };
    let idx = mesh.faces[f];
    let interp: DVec3 = (0..3).map(|k| mesh.normals[idx[k] as usize] * t.bary[k]).sum();
    let n = interp
        .try_normalize()
        .or_else(|| e1.cross(e2).try_normalize())
        .unwrap_or(DVec3::Z);
    let tangent = (dpdu - n * n.dot(dpdu))
        .try_normalize()
        .or_else(|| (e1 - n * n.dot(e1)).try_normalize())
        .unwrap_or_else(|| n.any_orthonormal_vector());
    let bitangent = n.cross(tangent);
    (DMat3::from_cols(tangent, bitangent, n), dpdu, dpdv)
}

/// Attaches one primitive per UV cell to the mesh surface.
///
/// The rotation is the tangent frame at the cell-center UV (or at the nearest
/// valid atlas texel when the center is not covered). The box is the bounding
/// box, in that frame, of the cell's surface patch sampled at the atlas texels
/// inside the cell, padded along the normal by `shell` times the larger
/// tangent half-extent on both sides. Cells with fewer than three covered
/// texels fall back to the face's UV Jacobian times half a cell around the
/// surface point. Planar patches give the same box either way.
pub fn place_primitives(mesh: &CoarseMesh, atlas: &UvAtlas, w: usize, s: usize, shell: f64) -> Result<PrimitiveSet> {
    if w == 0 || s == 0 {
        return Err(Error::invalid(format!("primitive grid w={w}, S={s} must be positive")));
    }
    if !(shell > 0.0) {
        return Err(Error::invalid(format!("shell {shell} must be positive")));
    }
    if atlas.valid_count() == 0 {
        return Err(Error::invalid("atlas has no valid texels"));
    }
    let res = atlas.resolution;
    let cell = 1.0 / w as f64;
    let per_cell = res / w;
    let placed: Vec<(DVec3, DMat3, DVec3)> = (0..w * w)
        .into_par_iter()
        .map(|k| {
            let (r, q) = (k / w, k % w);
            let uv = DVec2::new((q as f64 + 0.5) * cell, (r as f64 + 0.5) * cell);
            let hit = locate_uv(mesh, uv).or_else(|| {
                let row = ((uv.y * res as f64) as usize).min(res - 1);
                let col = ((uv.x * res as f64) as usize).min(res - 1);
                let (vr, vc) = atlas.nearest_valid(row, col)?;
                atlas.get(vr, vc)
            });
            let hit = hit.expect("atlas has valid texels");
            let (rot, dpdu, dpdv) = face_frame(mesh, &hit);
            let origin = surface_point(mesh, &hit);
            let cols = q * per_cell..(q + 1) * per_cell;
            let local: Vec<DVec3> = (r * per_cell..(r + 1) * per_cell)
                .flat_map(|row| cols.clone().map(move |col| (row, col)))
                .filter_map(|(row, col)| atlas.get(row, col))
                .map(|t| rot.transpose() * (surface_point(mesh, &t) - origin))
                .collect();
            let (lo, hi) = if local.len() >= 3 {
                let lo = local.iter().fold(DVec3::ZERO, |a, p| a.min(*p));
                let hi = local.iter().fold(DVec3::ZERO, |a, p| a.max(*p));
                // Texel centers sit half a texel inside the cell.
                let grow = per_cell as f64 / (per_cell as f64 - 1.0).max(1.0);
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo) * DVec3::new(grow, grow, 1.0);
                (mid - half, mid + half)
            } else {
                let t = 0.5 * cell * DVec3::new(dpdu.length(), dpdv.length(), 0.0);
                (-t, t)
            };
            let half = 0.5 * (hi - lo);
            let (sx, sy) = (half.x.max(MIN_EXTENT), half.y.max(MIN_EXTENT));
            let sz = (half.z + shell * sx.max(sy)).max(MIN_EXTENT);
            (origin + rot * (0.5 * (lo + hi)), rot, DVec3::new(sx, sy, sz))
        })
        .collect();
    let set = PrimitiveSet {
        w,
        s,
        centers: placed.iter().map(|p| p.0).collect(),
        rotations: placed.iter().map(|p| p.1).collect(),
        scales: placed.iter().map(|p| p.2).collect(),
    };
    set.validate()?;
    Ok(set)
}

impl PrimitiveSet {
    pub fn len(&self) -> usize {
        self.w * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0
    }

    pub fn voxels_per_primitive(&self) -> usize {
        self.s * self.s * self.s
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.centers.len() != n || self.rotations.len() != n || self.scales.len() != n {
            return Err(Error::shape("primitive set", &[self.centers.len(), self.rotations.len(), self.scales.len()], &[n]));
        }
        if let Some(k) = self.rotations.iter().position(|r| orthonormality_error(r) > 1e-5) {
            return Err(Error::invalid(format!("primitive {k} rotation not orthonormal")));
        }
        if let Some(k) = self.scales.iter().position(|s| !(s.min_element() > 0.0)) {
            return Err(Error::invalid(format!("primitive {k} has non-positive scale")));
        }
        Ok(())
    }

    /// Voxel-center coordinate in `[-1, 1]` along one axis.
    pub fn voxel_coord(&self, i: usize) -> f64 {
        -1.0 + (2 * i + 1) as f64 / self.s as f64
    }

    /// World-space voxel centers of primitive `k`, index `j = (z·S + y)·S + x`.
    pub fn voxel_positions(&self, k: usize) -> Vec<DVec3> {
        let s = self.s;
        (0..s * s * s)
            .map(|j| {
                let u = DVec3::new(self.voxel_coord(j % s), self.voxel_coord(j / s % s), self.voxel_coord(j / (s * s)));
                self.centers[k] + self.rotations[k] * (self.scales[k] * u)
            })
            .collect()
    }

    /// `R_kᵀ (target − p) / ‖target − p‖` per voxel. Voxels within 1e-9 of
    /// the target get a zero vector; the flag reports whether any did.
    pub fn localized_directions(&self, k: usize, target: DVec3) -> (Vec<DVec3>, bool) {
        let rt = self.rotations[k].transpose();
        let mut degenerate = false;
        let dirs = self
            .voxel_positions(k)
            .into_iter()
            .map(|p| {
                let d = target - p;
                let len = d.length();
                if len < 1e-9 {
                    degenerate = true;
                    DVec3::ZERO
                } else {
                    rt * (d / len)
                }
            })
            .collect();
        (dirs, degenerate)
    }

    /// Localized directions of every voxel as a `[N, 3, S, S, S]` volume.
    pub fn direction_volume(&self, target: DVec3) -> (Tensor<f32>, bool) {
        let v = self.voxels_per_primitive();
        let per: Vec<(Vec<DVec3>, bool)> = (0..self.len()).into_par_iter().map(|k| self.localized_directions(k, target)).collect();
        let mut data = vec![0.0f32; self.len() * 3 * v];
        for (k, (dirs, _)) in per.iter().enumerate() {
            for (j, d) in dirs.iter().enumerate() {
                for c in 0..3 {
                    data[(k * 3 + c) * v + j] = d[c] as f32;
                }
            }
        }
        let s = self.s;
        (Tensor::new(&[self.len(), 3, s, s, s], data).expect("sized above"), per.iter().any(|p| p.1))
    }

    /// Applies a rigid motion to every primitive frame.
    pub fn transformed(&self, rigid: &crate::math::Rigid) -> PrimitiveSet {
        let q = DMat3::from_quat(rigid.rotation);
        PrimitiveSet {
            centers: self.centers.iter().map(|&c| rigid.point(c)).collect(),
            rotations: self.rotations.iter().map(|&r| q * r).collect(),
            ..self.clone()
        }
    }

    /// Records for the checkpoint container.
    pub fn to_params(&self) -> ParamStore<f64> {
        let n = self.len();
        let mut p = ParamStore::new();
        p.insert("primitives.layout", Tensor::new(&[2], vec![self.w as f64, self.s as f64]).unwrap());
        p.insert("primitives.centers", Tensor::new(&[n, 3], self.centers.iter().flat_map(|c| c.to_array()).collect()).unwrap());
        p.insert("primitives.rotations", Tensor::new(&[n, 9], self.rotations.iter().flat_map(|r| r.to_cols_array()).collect()).unwrap());
        p.insert("primitives.scales", Tensor::new(&[n, 3], self.scales.iter().flat_map(|c| c.to_array()).collect()).unwrap());
        p
    }

    pub fn from_params(p: &ParamStore<f64>) -> Result<Self> {
        let layout = p.get("primitives.layout")?.data();
        if layout.len() != 2 {
            return Err(Error::invalid("primitives.layout must hold [w, S]"));
        }
        let (w, s) = (layout[0] as usize, layout[1] as usize);
        let rows = |name: &str, width: usize| -> Result<Vec<f64>> {
            let t = p.get(name)?;
            if t.shape() != [w * w, width] {
                return Err(Error::shape("primitive record", t.shape(), &[w * w, width]));
            }
            Ok(t.data().to_vec())
        };
        let set = PrimitiveSet {
            w,
            s,
            centers: rows("primitives.centers", 3)?.chunks_exact(3).map(DVec3::from_slice).collect(),
            rotations: rows("primitives.rotations", 9)?.chunks_exact(9).map(DMat3::from_cols_slice).collect(),
            scales: rows("primitives.scales", 3)?.chunks_exact(3).map(DVec3::from_slice).collect(),
        };
        set.validate()?;
        Ok(set)
    }
}
