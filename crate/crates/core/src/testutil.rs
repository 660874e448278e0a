use crate::math::{DVec2, DVec3};
use crate::rig::CoarseMesh;

/// Unit UV sphere with a lat-long chart covering `[0,1]²`, outward winding.
pub fn uv_sphere(rings: usize, segments: usize) -> CoarseMesh {
    let mut v = vec![DVec3::Y];
    for r in 1..rings {
        let th = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let ph = std::f64::consts::TAU * s as f64 / segments as f64;
            v.push(DVec3::new(th.sin() * ph.sin(), th.cos(), th.sin() * ph.cos()));
        }
    }
    v.push(-DVec3::Y);
    let idx = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
    let bottom = v.len() as u32 - 1;
    let uv = |r: usize, s: usize| DVec2::new(s as f64 / segments as f64, r as f64 / rings as f64);
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    for s in 0..segments {
        faces.push([0, idx(1, s), idx(1, s + 1)]);
        uvs.push([DVec2::new((s as f64 + 0.5) / segments as f64, 0.0), uv(1, s), uv(1, s + 1)]);
        for r in 1..rings - 1 {
            faces.push([idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)]);
            uvs.push([uv(r, s), uv(r + 1, s), uv(r + 1, s + 1)]);
            faces.push([idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)]);
            uvs.push([uv(r, s), uv(r + 1, s + 1), uv(r, s + 1)]);
        }
        faces.push([idx(rings - 1, s), bottom, idx(rings - 1, s + 1)]);
        uvs.push([uv(rings - 1, s), DVec2::new((s as f64 + 0.5) / segments as f64, 1.0), uv(rings - 1, s + 1)]);
    }
    CoarseMesh::new(v, faces, uvs).unwrap()
}
