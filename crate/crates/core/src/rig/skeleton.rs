use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoarseMesh, Pose};
use crate::error::{Error, Result};
use crate::math::{DAffine3, DQuat, DVec3, Rigid};

pub const MAX_INFLUENCES: usize = 4;

/// One pose parameter: an angle (radians) about a fixed local axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dof {
    pub index: usize,
    pub axis: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest transform relative to the parent joint.
    pub translation: [f64; 3],
    /// Quaternion `[x, y, z, w]`.
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    #[serde(default)]
    pub dof: Option<Dof>,
}

fn identity_quat() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl Joint {
    pub fn rest_local(&self) -> Rigid {
        let [x, y, z, w] = self.rotation;
        Rigid::new(DQuat::from_xyzw(x, y, z, w).normalize(), DVec3::from_array(self.translation))
    }
}

/// Joint tree plus sparse skinning weights.
///
/// Multi-axis joints are expressed as chains of single-axis joints sharing a
/// pivot, so every pose parameter is one angle about one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub pose_dim: usize,
    pub joints: Vec<Joint>,
    /// Per vertex: up to four `(joint, weight)` pairs summing to one.
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl Skeleton {
    pub fn validate(&self) -> Result<()> {
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::invalid(format!("joint {i} ({}) has parent {p} not before it", j.name)));
                }
            } else if i != 0 {
                return Err(Error::invalid(format!("joint {i} ({}) has no parent; only joint 0 may be the root", j.name)));
            }
            if let Some(d) = j.dof {
                if d.index >= self.pose_dim {
                    return Err(Error::invalid(format!("joint {} uses pose index {} >= {}", j.name, d.index, self.pose_dim)));
                }
                if DVec3::from_array(d.axis).length() < 1e-12 {
                    return Err(Error::invalid(format!("joint {} has a zero axis", j.name)));
                }
            }
        }
        for (v, w) in self.weights.iter().enumerate() {
            if w.is_empty() || w.len() > MAX_INFLUENCES {
                return Err(Error::invalid(format!("vertex {v} has {} influences", w.len())));
            }
            let sum: f64 = w.iter().map(|(_, x)| x).sum();
            if (sum - 1.0).abs() > 1e-6 || w.iter().any(|&(j, x)| j >= self.joints.len() || x < 0.0) {
                return Err(Error::invalid(format!("vertex {v} weights invalid (sum {sum})")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Skeleton = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn joint_rotation(&self, j: &Joint, theta: &[f64]) -> DQuat {
        match j.dof {
            Some(d) => DQuat::from_axis_angle(DVec3::from_array(d.axis).normalize(), theta[d.index]),
            None => DQuat::IDENTITY,
        }
    }

    /// World transforms of every joint; `None` gives the rest configuration.
    pub fn world_transforms(&self, pose: Option<&Pose>) -> Vec<Rigid> {
        let mut out: Vec<Rigid> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let local = match pose {
                Some(p) => {
                    let l = j.rest_local();
                    Rigid::new(l.rotation * self.joint_rotation(j, &p.theta), l.translation)
                }
                None => j.rest_local(),
            };
            let parent = match j.parent {
                Some(p) => out[p],
                None => pose.map(|p| p.root).unwrap_or(Rigid::IDENTITY),
            };
            out.push(parent.then(&local));
        }
        out
    }

    /// Per-joint skinning matrices `posed * rest⁻¹`.
    pub fn skinning_matrices(&self, pose: &Pose) -> Vec<DAffine3> {
        let rest = self.world_transforms(None);
        let posed = self.world_transforms(Some(pose));
        rest.iter().zip(&posed).map(|(r, p)| p.affine() * r.inverse().affine()).collect()
    }
}

/// Linear blend skinning of the rest mesh; normals are recomputed on the result.
pub fn lbs_skin(skeleton: &Skeleton, rest: &CoarseMesh, pose: &Pose) -> Result<CoarseMesh> {
    if pose.theta.len() != skeleton.pose_dim {
        return Err(Error::shape("lbs pose dimension", &[pose.theta.len()], &[skeleton.pose_dim]));
    }
    if skeleton.weights.len() != rest.vertices.len() {
        return Err(Error::shape("lbs weights/vertices", &[skeleton.weights.len()], &[rest.vertices.len()]));
    }
    let mats = skeleton.skinning_matrices(pose);
    let mut out = CoarseMesh { vertices: blend_vertices(&rest.vertices, &skeleton.weights, &mats), ..rest.clone() };
    out.recompute_normals();
    Ok(out)
}

/// `Σ_j w_j K_j v` for every vertex.
pub fn blend_vertices(rest: &[DVec3], weights: &[Vec<(usize, f64)>], mats: &[DAffine3]) -> Vec<DVec3> {
    rest.par_iter()
        .zip(weights)
        .map(|(&v, w)| w.iter().map(|&(j, wt)| mats[j].transform_point3(v) * wt).sum())
        .collect()
}
