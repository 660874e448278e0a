use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{Aabb, DVec2, DVec3};

/// Triangle mesh with per-corner UVs and per-vertex normals.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseMesh {
    pub vertices: Vec<DVec3>,
    pub faces: Vec<[u32; 3]>,
    /// One UV triple per face, corner order matching `faces`.
    pub uv: Vec<[DVec2; 3]>,
    pub normals: Vec<DVec3>,
}

impl CoarseMesh {
    /// Builds a mesh and computes area-weighted normals.
    pub fn new(vertices: Vec<DVec3>, faces: Vec<[u32; 3]>, uv: Vec<[DVec2; 3]>) -> Result<Self> {
        let mut m = CoarseMesh { normals: vec![DVec3::Z; vertices.len()], vertices, faces, uv };
        m.validate()?;
        m.recompute_normals();
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("face {f} references a vertex >= {n}")));
        }
        if self.uv.len() != self.faces.len() {
            return Err(Error::shape("mesh uv/faces", &[self.uv.len()], &[self.faces.len()]));
        }
        if self.normals.len() != self.vertices.len() {
            return Err(Error::shape("mesh normals/vertices", &[self.normals.len()], &[self.vertices.len()]));
        }
        let in_unit = |c: f64| (0.0..=1.0).contains(&c);
        if let Some(f) = self.uv.iter().position(|t| t.iter().any(|p| !in_unit(p.x) || !in_unit(p.y))) {
            return Err(Error::invalid(format!("face {f} has UVs outside [0,1]")));
        }
        if let Some(v) = self.normals.iter().position(|nrm| (nrm.length() - 1.0).abs() > 1e-5) {
            return Err(Error::invalid(format!("normal {v} is not unit length")));
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [DVec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> DVec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(c - a)
    }

    /// Area-weighted vertex normals; zero-area faces contribute nothing and
    /// vertices without any area keep +z.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![DVec3::ZERO; self.vertices.len()];
        for f in 0..self.faces.len() {
            let c = self.face_cross(f);
            for &i in &self.faces[f] {
                acc[i as usize] += c;
            }
        }
        self.normals = acc.into_par_iter().map(|n| n.try_normalize().unwrap_or(DVec3::Z)).collect();
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }

    /// Faces incident to each vertex.
    pub fn vertex_faces(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (f, tri) in self.faces.iter().enumerate() {
            for &i in tri {
                out[i as usize].push(f as u32);
            }
        }
        out
    }

    /// Applies a rigid map to positions and normals.
    pub fn transformed(&self, rigid: &crate::math::Rigid) -> CoarseMesh {
        CoarseMesh {
            vertices: self.vertices.iter().map(|&v| rigid.point(v)).collect(),
            normals: self.normals.iter().map(|&n| rigid.vector(n)).collect(),
            ..self.clone()
        }
    }

    /// Concatenates meshes, e.g. two hands in one scene.
    pub fn merge(parts: &[&CoarseMesh]) -> CoarseMesh {
        let mut out = CoarseMesh { vertices: vec![], faces: vec![], uv: vec![], normals: vec![] };
        for m in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.normals.extend_from_slice(&m.normals);
            out.uv.extend_from_slice(&m.uv);
            out.faces.extend(m.faces.iter().map(|f| f.map(|i| i + base)));
        }
        out
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let opts = tobj::LoadOptions { triangulate: true, single_index: false, ..Default::default() };
        let (models, _) = tobj::load_obj(path, &opts).map_err(|e| Error::format(path, e.to_string()))?;
        let parts = models
            .iter()
            .map(|m| obj_model(&m.mesh).map_err(|r| Error::format(path, r)))
            .collect::<Result<Vec<_>>>()?;
        let mesh = CoarseMesh::merge(&parts.iter().collect::<Vec<_>>());
        mesh.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(mesh)
    }

    /// Writes `v`, `vt`, `vn` and `f v/vt/vn` records, one `vt` per face corner.
    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in self.uv.iter().flatten() {
            let _ = writeln!(s, "vt {} {}", t.x, t.y);
        }
        for n in &self.normals {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
        for (f, tri) in self.faces.iter().enumerate() {
            let c = |k: usize| format!("{}/{}/{}", tri[k] + 1, 3 * f + k + 1, tri[k] + 1);
            let _ = writeln!(s, "f {} {} {}", c(0), c(1), c(2));
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj_string())?;
        Ok(())
    }
}

fn obj_model(m: &tobj::Mesh) -> std::result::Result<CoarseMesh, String> {
    let vertices: Vec<DVec3> =
        m.positions.chunks_exact(3).map(|p| DVec3::new(p[0] as f64, p[1] as f64, p[2] as f64)).collect();
    if m.texcoord_indices.len() != m.indices.len() {
        return Err("every face corner needs a texture coordinate".into());
    }
    let tex = |k: u32| -> std::result::Result<DVec2, String> {
        let k = k as usize;
        m.texcoords
            .get(2 * k..2 * k + 2)
            .map(|t| DVec2::new(t[0] as f64, t[1] as f64))
            .ok_or_else(|| format!("texture index {k} out of range"))
    };
    let faces: Vec<[u32; 3]> = m.indices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let uv = m
        .texcoord_indices
        .chunks_exact(3)
        .map(|c| Ok([tex(c[0])?, tex(c[1])?, tex(c[2])?]))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let mut mesh = CoarseMesh { normals: vec![DVec3::Z; vertices.len()], vertices, faces, uv };
    if let Some(f) = mesh.faces.iter().position(|f| f.iter().any(|&i| i as usize >= mesh.vertices.len())) {
        return Err(format!("face {f} references a missing vertex"));
    }
    mesh.recompute_normals();
    if m.normal_indices.len() == m.indices.len() {
        for (&vi, &ni) in m.indices.iter().zip(&m.normal_indices) {
            let k = 3 * ni as usize;
            let n = m.normals.get(k..k + 3).ok_or_else(|| format!("normal index {ni} out of range"))?;
            if let Some(n) = DVec3::new(n[0] as f64, n[1] as f64, n[2] as f64).try_normalize() {
                mesh.normals[vi as usize] = n;
            }
        }
    }
    Ok(mesh)
}
