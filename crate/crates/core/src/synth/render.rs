use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::illum::{Brdf, PointLight};
use crate::math::DVec3;
use crate::raymarch::{Bvh, Camera};
use crate::rig::CoarseMesh;
use crate::tensor::Tensor;

/// Pixel value of a white Lambertian surface facing a unit light head-on.
pub const GT_SCALE: f64 = 255.0;

/// Skin-like diffuse plus specular material.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: [f64; 3],
    pub specular: [f64; 3],
    pub lobe: SpecularLobe,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpecularLobe {
    None,
    Phong { exponent: f64 },
    Ggx { roughness: f64 },
}

impl Default for Material {
    fn default() -> Self {
        Material { albedo: [0.8, 0.55, 0.45], specular: [0.12; 3], lobe: SpecularLobe::Phong { exponent: 24.0 } }
    }
}

impl Material {
    pub fn lambert(albedo: [f64; 3]) -> Self {
        Material { albedo, specular: [0.0; 3], lobe: SpecularLobe::None }
    }

    /// `f_r(v, l)` for unit vectors pointing away from the surface.
    pub fn eval(&self, n: DVec3, v: DVec3, l: DVec3) -> Result<[f64; 3]> {
        let mut f = Brdf::Lambert.eval(n, v, l, self.albedo)?;
        let spec = match self.lobe {
            SpecularLobe::None => return Ok(f),
            SpecularLobe::Phong { exponent } => Brdf::Phong { exponent }.eval(n, v, l, self.specular)?,
            SpecularLobe::Ggx { roughness } => Brdf::Ggx { roughness }.eval(n, v, l, self.specular)?,
        };
        for c in 0..3 {
            f[c] += spec[c];
        }
        Ok(f)
    }
}

/// First-hit surface sample seen through one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub point: DVec3,
    pub normal: DVec3,
    /// Unit vector toward the camera.
    pub view: DVec3,
    pub face: u32,
}

/// Ray-cast ground-truth renderer over a posed mesh: first-hit visibility,
/// direct lighting, hard shadows from `Bvh::occluded`, no interreflection.
pub struct ReferenceScene {
    pub mesh: CoarseMesh,
    pub bvh: Bvh,
    vertex_faces: Vec<Vec<u32>>,
    t_min: f64,
}

impl ReferenceScene {
    pub fn new(mesh: CoarseMesh) -> Self {
        let bvh = Bvh::build(&mesh);
        let vertex_faces = mesh.vertex_faces();
        let t_min = 1e-4 * mesh.bounds().extent().length().max(1e-12);
        ReferenceScene { mesh, bvh, vertex_faces, t_min }
    }

    pub fn trace(&self, camera: &Camera) -> Vec<Option<SurfaceHit>> {
        (0..camera.width * camera.height)
            .into_par_iter()
            .map(|i| {
                let (o, d) = camera.ray(i % camera.width, i / camera.width);
                let hit = self.bvh.closest_hit(o, d, 0.0, f64::INFINITY)?;
                let f = self.mesh.faces[hit.face as usize];
                let [a, b, c] = self.mesh.triangle(hit.face as usize);
                let point = a * hit.bary[0] + b * hit.bary[1] + c * hit.bary[2];
                let view = -d;
                let shading: DVec3 = (0..3).map(|k| self.mesh.normals[f[k] as usize] * hit.bary[k]).sum();
                let geometric = self.mesh.face_cross(hit.face as usize).normalize_or_zero();
                let mut normal = shading.try_normalize().unwrap_or(geometric);
                if normal.dot(view) <= 0.0 {
                    normal = if geometric.dot(view) > 0.0 { geometric } else { -geometric };
                }
                Some(SurfaceHit { point, normal, view, face: hit.face })
            })
            .collect()
    }

    /// Faces sharing a vertex with `face`; excluded from its shadow rays.
    fn neighborhood(&self, face: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self.mesh.faces[face as usize]
            .iter()
            .flat_map(|&v| self.vertex_faces[v as usize].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Whether `light` is blocked as seen from the surface sample.
    pub fn shadowed(&self, hit: &SurfaceHit, light: DVec3, skip: &[u32]) -> bool {
        let to = light - hit.point;
        let dist = to.length();
        self.bvh.occluded(hit.point, to / dist, self.t_min, dist, skip)
    }

    /// `[4, H, W]` linear RGB plus coverage.
    pub fn render(&self, camera: &Camera, lights: &[PointLight], material: &Material) -> Result<Tensor<f64>> {
        let hits = self.trace(camera);
        self.shade(camera, &hits, lights, material)
    }

    /// Shades precomputed hits; each pixel sums lights in order.
    pub fn shade(&self, camera: &Camera, hits: &[Option<SurfaceHit>], lights: &[PointLight], material: &Material) -> Result<Tensor<f64>> {
        let plane = camera.width * camera.height;
        let pixels: Vec<Result<[f64; 4]>> = hits
            .par_iter()
            .map(|h| {
                let Some(h) = h else { return Ok([0.0; 4]) };
                let skip = self.neighborhood(h.face);
                let mut acc = [0.0, 0.0, 0.0, 1.0];
                for light in lights {
                    if light.intensity == [0.0; 3] {
                        continue;
                    }
                    let l = (light.pos() - h.point).normalize();
                    let cos = h.normal.dot(l);
                    if cos <= 0.0 || self.shadowed(h, light.pos(), &skip) {
                        continue;
                    }
                    let f = material.eval(h.normal, h.view, l)?;
                    for c in 0..3 {
                        acc[c] += GT_SCALE * PI * light.intensity[c] * f[c] * cos;
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut out = Tensor::zeros(&[4, camera.height, camera.width]);
        for (i, px) in pixels.into_iter().enumerate() {
            let px = px?;
            for c in 0..4 {
                out.data_mut()[c * plane + i] = px[c];
            }
        }
        Ok(out)
    }

    /// Pixels whose surface faces `light` but is blocked by other geometry.
    pub fn shadow_mask(&self, camera: &Camera, light: DVec3) -> Vec<bool> {
        self.trace(camera)
            .par_iter()
            .map(|h| match h {
                Some(h) if h.normal.dot(light - h.point) > 0.0 => self.shadowed(h, light, &self.neighborhood(h.face)),
                _ => false,
            })
            .collect()
    }

    /// Mesh coverage per pixel.
    pub fn silhouette(&self, camera: &Camera) -> Vec<bool> {
        self.trace(camera).iter().map(Option::is_some).collect()
    }
}
