use crate::error::{Error, Result};
use crate::math::{Aabb, DMat3, DVec3};
use crate::primitives::PrimitiveSet;

/// Marching quadrature parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarchConfig {
    /// World-space step length.
    pub step: f64,
    /// Density per unit length of an opacity value of 1.
    pub density: f64,
    /// Early termination threshold on transmittance.
    pub cutoff: f64,
}

impl MarchConfig {
    /// Quarter of the mean smallest voxel extent as step, and a density that
    /// gives a fully opaque voxel an optical depth of 4.
    pub fn for_set(set: &PrimitiveSet) -> Self {
        let voxel = set.scales.iter().map(|s| 2.0 * s.min_element() / set.s as f64).sum::<f64>() / set.len() as f64;
        MarchConfig { step: 0.25 * voxel, density: 4.0 / voxel, cutoff: 1e-3 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.density >= 0.0 && self.cutoff >= 0.0) {
            return Err(Error::invalid(format!("march config {self:?}")));
        }
        Ok(())
    }
}

/// One primitive's contribution at a sample point: eight trilinear taps into
/// its `S³` voxels.
#[derive(Clone, Copy, Debug)]
pub struct Taps {
    pub k: u32,
    pub voxel: [u32; 8],
    pub weight: [f64; 8],
}

/// Read-only view of the primitive payloads used by the marcher.
pub struct Field<'a> {
    pub set: &'a PrimitiveSet,
    /// `[N, 1, S, S, S]` opacities.
    pub opacity: &'a [f32],
    /// `[N, 3, S, S, S]` colors, absent for shadow queries.
    pub color: Option<&'a [f32]>,
    pub(crate) world_to_local: Vec<DMat3>,
    pub(crate) bounds: Vec<Aabb>,
}

impl<'a> Field<'a> {
    pub fn new(set: &'a PrimitiveSet, opacity: &'a [f32], color: Option<&'a [f32]>) -> Result<Self> {
        let v = set.voxels_per_primitive();
        if opacity.len() != set.len() * v {
            return Err(Error::shape("opacity payload", &[opacity.len()], &[set.len(), 1, set.s, set.s, set.s]));
        }
        if let Some(c) = color {
            if c.len() != set.len() * 3 * v {
                return Err(Error::shape("color payload", &[c.len()], &[set.len(), 3, set.s, set.s, set.s]));
            }
        }
        let world_to_local = set
            .rotations
            .iter()
            .zip(&set.scales)
            .map(|(r, s)| DMat3::from_diagonal(s.recip()) * r.transpose())
            .collect();
        let bounds = (0..set.len())
            .map(|k| {
                let r = set.rotations[k];
                let half = r.x_axis.abs() * set.scales[k].x + r.y_axis.abs() * set.scales[k].y + r.z_axis.abs() * set.scales[k].z;
                Aabb { min: set.centers[k] - half, max: set.centers[k] + half }
            })
            .collect();
        Ok(Field { set, opacity, color, world_to_local, bounds })
    }

    /// Parameter interval `[enter, exit]` of the ray inside primitive `k`.
    pub fn interval(&self, k: usize, origin: DVec3, dir: DVec3, t_max: f64) -> Option<(f64, f64)> {
        let o = self.world_to_local[k] * (origin - self.set.centers[k]);
        let d = self.world_to_local[k] * dir;
        let unit = Aabb { min: DVec3::splat(-1.0), max: DVec3::ONE };
        unit.ray_interval(o, d.recip(), 0.0, t_max)
    }

    /// Intervals of every primitive crossed by the ray, sorted by entry.
    pub fn intervals(&self, origin: DVec3, dir: DVec3, t_max: f64) -> Vec<(f64, f64, u32)> {
        let inv = dir.recip();
        let mut out: Vec<(f64, f64, u32)> = (0..self.set.len())
            .filter(|&k| self.bounds[k].ray_interval(origin, inv, 0.0, t_max).is_some())
            .filter_map(|k| self.interval(k, origin, dir, t_max).map(|(a, b)| (a, b, k as u32)))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        out
    }

    /// Trilinear taps of primitive `k` at world point `p`, if inside its box.
    pub fn taps(&self, k: usize, p: DVec3) -> Option<Taps> {
        let u = self.world_to_local[k] * (p - self.set.centers[k]);
        if u.abs().max_element() > 1.0 {
            return None;
        }
        let s = self.set.s;
        let sf = s as f64;
        let axis = |c: f64| -> (usize, usize, f64) {
            if s == 1 {
                return (0, 0, 0.0);
            }
            let g = ((c + 1.0) * 0.5 * sf - 0.5).clamp(0.0, sf - 1.0);
            let i0 = (g.floor() as usize).min(s - 2);
            (i0, i0 + 1, g - i0 as f64)
        };
        let (x0, x1, fx) = axis(u.x);
        let (y0, y1, fy) = axis(u.y);
        let (z0, z1, fz) = axis(u.z);
        let mut voxel = [0u32; 8];
        let mut weight = [0.0; 8];
        for (n, (z, wz)) in [(z0, 1.0 - fz), (z1, fz)].into_iter().enumerate() {
            for (m, (y, wy)) in [(y0, 1.0 - fy), (y1, fy)].into_iter().enumerate() {
                for (l, (x, wx)) in [(x0, 1.0 - fx), (x1, fx)].into_iter().enumerate() {
                    let i = n * 4 + m * 2 + l;
                    voxel[i] = ((z * s + y) * s + x) as u32;
                    weight[i] = wz * wy * wx;
                }
            }
        }
        Some(Taps { k: k as u32, voxel, weight })
    }

    /// Interpolated opacity of a tap set (before density scaling).
    pub fn opacity_at(&self, t: &Taps) -> f64 {
        let base = t.k as usize * self.set.voxels_per_primitive();
        (0..8).map(|i| t.weight[i] * self.opacity[base + t.voxel[i] as usize] as f64).sum()
    }

    pub fn color_at(&self, t: &Taps) -> [f64; 3] {
        let c = self.color.expect("field built without color");
        let v = self.set.voxels_per_primitive();
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (t.k as usize * 3 + ch) * v;
            *o = (0..8).map(|i| t.weight[i] * c[base + t.voxel[i] as usize] as f64).sum();
        }
        out
    }

    /// Taps at `p`, treating points within rounding of the box surface as inside.
    pub(crate) fn taps_clamped(&self, k: usize, p: DVec3) -> Option<Taps> {
        let c = self.set.centers[k];
        let u = self.world_to_local[k] * (p - c);
        if u.abs().max_element() > 1.0 + 1e-9 {
            return None;
        }
        let r = self.set.rotations[k];
        let inside = c + r * (self.set.scales[k] * u.clamp(DVec3::splat(-1.0), DVec3::ONE));
        self.taps(k, inside)
    }
}

/// One primitive's share of a lattice segment: the clipped sub-interval.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Piece {
    pub k: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Piece {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Walks the fixed lattice of segments `[i·step, (i+1)·step]` along the ray,
/// clipping each to every primitive interval (and to `t_end`). `visit` gets
/// the non-empty pieces of one segment; returning `false` stops the walk.
pub(crate) fn walk_segments(intervals: &[(f64, f64, u32)], step: f64, t_end: f64, mut visit: impl FnMut(&[Piece]) -> bool) {
    let mut pieces: Vec<Piece> = Vec::new();
    let mut next = 0usize;
    let mut i = match intervals.first() {
        Some(&(a, _, _)) => (a / step).floor().max(0.0) as u64,
        None => return,
    };
    loop {
        let (s0, s1) = (i as f64 * step, ((i + 1) as f64 * step).min(t_end));
        if s0 >= t_end {
            return;
        }
        while next < intervals.len() && intervals[next].0 < s1 {
            next += 1;
        }
        pieces.clear();
        pieces.extend(intervals[..next].iter().filter_map(|&(a, b, k)| {
            let (lo, hi) = (a.max(s0), b.min(s1));
            (hi > lo).then_some(Piece { k, lo, hi })
        }));
        if pieces.is_empty() {
            match intervals.get(next) {
                Some(&(a, _, _)) => {
                    i = ((a / step).floor() as u64).max(i + 1);
                    continue;
                }
                None => return,
            }
        } else if !visit(&pieces) {
            return;
        }
        i += 1;
    }
}
