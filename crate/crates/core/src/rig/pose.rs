use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{wrap_angle, DQuat, DVec3, Rigid};

/// Joint angles plus the global root transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub theta: Vec<f64>,
    pub root: Rigid,
}

impl Pose {
    pub fn rest(dim: usize) -> Self {
        Pose { theta: vec![0.0; dim], root: Rigid::IDENTITY }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Shortest-arc interpolation of two poses of the same skeleton.
///
/// Each pose parameter is a rotation about a fixed axis, so quaternion slerp of a
/// joint reduces to moving the angle along the shorter way around the circle at
/// constant speed. The root rotation uses a full quaternion slerp (with the
/// antipodal sign flip) and the root translation is interpolated linearly.
pub fn slerp_pose(a: &Pose, b: &Pose, t: f64) -> Result<Pose> {
    if a.dim() != b.dim() {
        return Err(Error::shape("slerp_pose", &[a.dim()], &[b.dim()]));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("slerp parameter {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    let theta = a
        .theta
        .iter()
        .zip(&b.theta)
        .map(|(&x, &y)| x + t * wrap_angle(y - x))
        .collect();
    let rotation = if a.root.rotation == b.root.rotation {
        a.root.rotation
    } else {
        let qb = if a.root.rotation.dot(b.root.rotation) < 0.0 { -b.root.rotation } else { b.root.rotation };
        a.root.rotation.slerp(qb, t).normalize()
    };
    let translation = a.root.translation + (b.root.translation - a.root.translation) * t;
    Ok(Pose { theta, root: Rigid::new(rotation, translation) })
}

const PPS_MAGIC: &[u8; 4] = b"PPS1";
/// Root stored as quaternion `xyzw` then translation `xyz`.
const ROOT_FLOATS: usize = 7;

/// Writes a pose sequence: `PPS1`, pose dim (u32), frame count (u32), then per
/// frame `dim` angles followed by the 7 root floats, all f32 little-endian.
pub fn write_pose_stream<W: Write>(out: &mut W, poses: &[Pose]) -> Result<()> {
    let dim = poses.first().map(|p| p.dim()).unwrap_or(0);
    out.write_all(PPS_MAGIC)?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(poses.len() as u32).to_le_bytes())?;
    for p in poses {
        if p.dim() != dim {
            return Err(Error::shape("pose stream", &[p.dim()], &[dim]));
        }
        let q = p.root.rotation;
        let t = p.root.translation;
        let root = [q.x, q.y, q.z, q.w, t.x, t.y, t.z];
        for v in p.theta.iter().chain(root.iter()) {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pose_stream<R: Read>(input: &mut R, origin: &Path) -> Result<Vec<Pose>> {
    let mut header = [0u8; 12];
    input.read_exact(&mut header)?;
    if &header[..4] != PPS_MAGIC {
        return Err(Error::format(origin, "missing PPS1 magic"));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let frames = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut raw = vec![0u8; frames * (dim + ROOT_FLOATS) * 4];
    input.read_exact(&mut raw).map_err(|_| Error::format(origin, "truncated pose stream"))?;
    let vals: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(vals
        .chunks_exact(dim + ROOT_FLOATS)
        .map(|f| {
            let r = &f[dim..];
            Pose {
                theta: f[..dim].to_vec(),
                root: Rigid::new(DQuat::from_xyzw(r[0], r[1], r[2], r[3]).normalize(), DVec3::new(r[4], r[5], r[6])),
            }
        })
        .collect())
}

pub fn save_pose_stream(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pose_stream(&mut f, poses)?;
    f.flush()?;
    Ok(())
}

pub fn load_pose_stream(path: &Path) -> Result<Vec<Pose>> {
    read_pose_stream(&mut std::io::BufReader::new(std::fs::File::open(path)?), path)
}
