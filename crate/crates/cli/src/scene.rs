//! Pose, camera, light and envmap arguments shared by the commands and the
//! render service.

use std::path::Path;

use anyhow::bail;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use primlight::illum::{EnvMap, PointLight};
use primlight::math::DVec3;
use primlight::raymarch::{save_pfm, save_png, Camera};
use primlight::rig::{load_pose_stream, Pose};
use primlight::synth::{ProceduralHand, GT_SCALE};
use primlight::tensor::Tensor;
use primlight::training::EnvSplit;

use crate::exit::ConfigError;

/// Look-at point of the default cameras and the stage rig center.
pub const TARGET: [f64; 3] = [0.0, 0.07, 0.0];
/// Distance at which directional lights are placed.
pub const DIRECTIONAL_DISTANCE: f64 = 100.0;

/// Orbit camera around [`TARGET`]; angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Orbit {
    fn default() -> Self {
        Orbit { azimuth: 0.0, elevation: 8.5, radius: 0.4, fov_y: 0.6, width: 64, height: 64 }
    }
}

impl Orbit {
    pub fn eye(&self) -> DVec3 {
        let (a, e) = (self.azimuth.to_radians(), self.elevation.to_radians());
        DVec3::from_array(TARGET) + self.radius * DVec3::new(a.sin() * e.cos(), e.sin(), a.cos() * e.cos())
    }

    pub fn camera(&self) -> anyhow::Result<Camera> {
        if self.elevation.abs() >= 89.9 {
            bail!(ConfigError(format!("elevation {} must stay inside (-90, 90)", self.elevation)));
        }
        Camera::look_at(self.eye(), DVec3::from_array(TARGET), DVec3::Y, self.fov_y, self.width, self.height)
            .map_err(|e| ConfigError(e.to_string()).into())
    }
}

/// `rest`, `finger-over-palm`, `random[:seed]` or a pose-stream file
/// (`path[:index]`).
pub fn parse_pose(spec: &str, hand: &ProceduralHand) -> anyhow::Result<Pose> {
    match spec {
        "rest" => return Ok(Pose::rest(hand.pose_dim())),
        "finger-over-palm" => return Ok(hand.finger_over_palm()),
        _ => {}
    }
    if let Some(rest) = spec.strip_prefix("random") {
        let seed = rest.strip_prefix(':').map(str::parse::<u64>).transpose().map_err(|e| ConfigError(format!("pose {spec}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        return Ok(hand.random_pose(&mut rng, 0.5));
    }
    let (path, index) = match spec.rsplit_once(':') {
        Some((p, i)) if i.chars().all(|c| c.is_ascii_digit()) && !i.is_empty() => (p, i.parse::<usize>()?),
        _ => (spec, 0),
    };
    if !Path::new(path).exists() {
        bail!(ConfigError(format!("pose `{spec}` is neither a preset (rest, finger-over-palm, random[:seed]) nor an existing file")));
    }
    let poses = load_pose_stream(Path::new(path))?;
    let pose = poses.get(index).cloned().ok_or_else(|| ConfigError(format!("{path} has {} poses, index {index} requested", poses.len())))?;
    check_pose(&pose, hand)?;
    Ok(pose)
}

pub fn check_pose(pose: &Pose, hand: &ProceduralHand) -> anyhow::Result<()> {
    if pose.dim() != hand.pose_dim() || pose.theta.iter().any(|t| !t.is_finite()) {
        bail!(ConfigError(format!("pose needs {} finite angles, got {}", hand.pose_dim(), pose.dim())));
    }
    Ok(())
}

/// Three comma-separated numbers.
pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| format!("`{s}`: {e}"))?;
    match parts.as_slice() {
        [x, y, z] if parts.iter().all(|v| v.is_finite()) => Ok([*x, *y, *z]),
        _ => Err(format!("`{s}` is not three finite numbers x,y,z")),
    }
}

pub fn point_light(position: [f64; 3], intensity: [f64; 3]) -> PointLight {
    PointLight { position, intensity }
}

/// A far point light toward `dir` from the target.
pub fn directional_light(dir: [f64; 3], intensity: [f64; 3]) -> anyhow::Result<PointLight> {
    let d = DVec3::from_array(dir).try_normalize().ok_or_else(|| ConfigError("light direction must be nonzero".into()))?;
    Ok(PointLight { position: (DVec3::from_array(TARGET) + DIRECTIONAL_DISTANCE * d).to_array(), intensity })
}

/// Resamples an envmap to `rows × cols` keeping its summed radiance, so a
/// texel's light stands for all the texels it covers.
pub fn fit_envmap(env: &EnvMap, rows: usize, cols: usize) -> anyhow::Result<EnvMap> {
    if env.rows == rows && env.cols == cols {
        return Ok(env.clone());
    }
    let ratio = env.len() as f64 / (rows * cols) as f64;
    Ok(env.downsample(rows, cols).map_err(|e| ConfigError(e.to_string()))?.scaled(ratio))
}

/// `.hdr`/`.pfm` file, or `sky[:seed]` for a synthetic sky at the given
/// resolution and total intensity.
pub fn load_envmap(spec: &str, rows: usize, cols: usize, total: f64) -> anyhow::Result<EnvMap> {
    if let Some(rest) = spec.strip_prefix("sky") {
        let seed = rest.strip_prefix(':').map(str::parse::<u64>).transpose().map_err(|e| ConfigError(format!("envmap {spec}: {e}")))?;
        return Ok(EnvSplit::synthetic(1, 0, rows, cols, total, seed.unwrap_or(0)).train.remove(0));
    }
    if !Path::new(spec).exists() {
        bail!(ConfigError(format!("envmap `{spec}` not found (use an .hdr/.pfm file or sky[:seed])")));
    }
    let env = EnvMap::load(Path::new(spec)).map_err(|e| ConfigError(e.to_string()))?;
    fit_envmap(&env, rows, cols)
}

/// Linear-to-8-bit scale for exposure `ev`; 255 linear units map to white.
pub fn exposure(ev: f64) -> f32 {
    (2f64.powf(ev) / GT_SCALE) as f32
}

/// Writes `<prefix>.png` and `<prefix>.pfm`.
pub fn write_image(prefix: &Path, img: &Tensor<f32>, ev: f64) -> anyhow::Result<()> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_png(&prefix.with_extension("png"), img, exposure(ev))?;
    save_pfm(&prefix.with_extension("pfm"), img)?;
    Ok(())
}

/// `[4,H,W]` linear image to RGBA8 rows, top to bottom.
pub fn rgba8(img: &Tensor<f32>, ev: f64) -> Vec<u8> {
    let shape = img.shape();
    let plane = shape[1] * shape[2];
    let scale = exposure(ev);
    let mut out = Vec::with_capacity(4 * plane);
    for p in 0..plane {
        for c in 0..3 {
            out.push(primlight::raymarch::to_srgb8(img.data()[c * plane + p], scale));
        }
        let a = if shape[0] > 3 { img.data()[3 * plane + p] } else { 1.0 };
        out.push((a.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}
