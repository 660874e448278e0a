use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hand::ProceduralHand;
use super::render::{Material, ReferenceScene};
use crate::error::{Error, Result};
use crate::illum::{LightRig, PointLight};
use crate::math::DVec3;
use crate::raymarch::{load_pfm, save_pfm, save_png, Camera};
use crate::rig::{load_pose_stream, save_pose_stream, slerp_pose, Pose};
use crate::tensor::Tensor;

/// Cameras on a circle around the hand's long (y) axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    /// Height of the ring above the target, as a fraction of `radius`.
    pub lift: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub target: [f64; 3],
    /// Azimuth span in radians, starting in front of the palm (+z).
    pub arc: f64,
}

impl Default for CameraRing {
    fn default() -> Self {
        CameraRing { count: 6, radius: 0.4, lift: 0.15, fov_y: 0.6, width: 64, height: 64, target: [0.0, 0.07, 0.0], arc: 2.0 * PI }
    }
}

impl CameraRing {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let target = DVec3::from_array(self.target);
        let step = if self.arc >= 2.0 * PI - 1e-9 { self.arc / self.count as f64 } else { self.arc / (self.count.max(2) - 1) as f64 };
        let start = if self.arc >= 2.0 * PI - 1e-9 { 0.0 } else { -0.5 * self.arc };
        (0..self.count)
            .map(|i| {
                let a = start + step * i as f64;
                let eye = target + self.radius * DVec3::new(a.sin(), self.lift, a.cos());
                Camera::look_at(eye, target, DVec3::Y, self.fov_y, self.width, self.height)
            })
            .collect()
    }
}

/// Unit-intensity lights on a Fibonacci sphere, grouped for partial lighting.
pub fn stage_rig(count: usize, radius: f64, center: [f64; 3], group_size: usize) -> Result<LightRig> {
    let c = DVec3::from_array(center);
    let golden = PI * (3.0 - 5f64.sqrt());
    let lights = (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            PointLight { position: (c + radius * DVec3::new(r * phi.cos(), y, r * phi.sin())).to_array(), intensity: [1.0; 3] }
        })
        .collect();
    LightRig::new(lights, Some(group_size))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureScript {
    /// Total frames; rounded up so the last frame is fully lit.
    pub frames: usize,
    /// Fully-lit frames occur every `keyframe_interval` frames.
    pub keyframe_interval: usize,
    pub lights_per_group: usize,
    pub cameras: CameraRing,
    pub seed: u64,
    /// Fraction of each joint's range explored by keyframe poses.
    pub pose_amplitude: f64,
    /// Render the fully-lit keyframes too (they are not training data).
    pub render_keyframes: bool,
}

impl Default for CaptureScript {
    fn default() -> Self {
        CaptureScript {
            frames: 200,
            keyframe_interval: 3,
            lights_per_group: 5,
            cameras: CameraRing::default(),
            seed: 0,
            pose_amplitude: 0.6,
            render_keyframes: true,
        }
    }
}

impl CaptureScript {
    pub fn validate(&self) -> Result<()> {
        if self.keyframe_interval < 2 || self.frames < 2 || self.lights_per_group == 0 || self.cameras.count == 0 {
            return Err(Error::invalid(format!(
                "capture script: frames {}, keyframe interval {}, L {}, cameras {}",
                self.frames, self.keyframe_interval, self.lights_per_group, self.cameras.count
            )));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        let k = self.keyframe_interval;
        (self.frames.saturating_sub(1)).div_ceil(k) * k + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Lighting {
    Full,
    Partial { lights: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureFrame {
    pub index: usize,
    pub lighting: Lighting,
    /// Neighboring keyframes and interpolation parameter for partial frames.
    pub interpolation: Option<(usize, usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct CaptureDataset {
    pub script: CaptureScript,
    pub rig: LightRig,
    pub cameras: Vec<Camera>,
    pub frames: Vec<CaptureFrame>,
    pub poses: Vec<Pose>,
    pub material: Material,
    /// `[4,H,W]` images per `(frame, camera)`; `None` for skipped keyframes.
    pub images: Vec<Vec<Option<Tensor<f32>>>>,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub pose_file: String,
    pub frame: usize,
    pub camera: usize,
    #[serde(flatten)]
    pub lighting: Lighting,
    pub image: String,
    pub alpha: String,
}

/// Renders the scripted capture. Keyframe poses are random; partial frames
/// interpolate their neighbors and see a random group of lights.
pub fn simulate_capture(hand: &ProceduralHand, script: &CaptureScript, rig: &LightRig, material: &Material) -> Result<CaptureDataset> {
    script.validate()?;
    rig.validate()?;
    if script.lights_per_group > rig.len() {
        return Err(Error::invalid(format!("group of {} from {} lights", script.lights_per_group, rig.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let n = script.frame_count();
    let k = script.keyframe_interval;
    let keys: Vec<Pose> = (0..=(n - 1) / k).map(|_| hand.random_pose(&mut rng, script.pose_amplitude)).collect();
    let mut frames = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        if i % k == 0 {
            frames.push(CaptureFrame { index: i, lighting: Lighting::Full, interpolation: None });
            poses.push(keys[i / k].clone());
        } else {
            let (a, b) = (i / k * k, (i / k + 1) * k);
            let t = (i - a) as f64 / k as f64;
            let mut lights = sample(&mut rng, rig.len(), script.lights_per_group).into_vec();
            lights.sort_unstable();
            frames.push(CaptureFrame { index: i, lighting: Lighting::Partial { lights }, interpolation: Some((a, b, t)) });
            poses.push(slerp_pose(&keys[a / k], &keys[b / k], t)?);
        }
    }
    let cameras = script.cameras.cameras()?;
    let images = frames
        .iter()
        .zip(&poses)
        .map(|(f, pose)| {
            let lights: Vec<PointLight> = match &f.lighting {
                Lighting::Full if !script.render_keyframes => return Ok(vec![None; cameras.len()]),
                Lighting::Full => rig.lights.clone(),
                Lighting::Partial { lights } => lights.iter().map(|&i| rig.lights[i]).collect(),
            };
            let scene = ReferenceScene::new(hand.posed_mesh(pose)?);
            cameras
                .par_iter()
                .map(|cam| Ok(Some(scene.render(cam, &lights, material)?.cast())))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaptureDataset { script: script.clone(), rig: rig.clone(), cameras, frames, poses, material: material.clone(), images })
}

const POSES: &str = "poses.pps";

impl CaptureDataset {
    /// Partially-lit `(frame, camera)` pairs, the teacher's training samples.
    pub fn partial_samples(&self) -> Vec<(usize, usize)> {
        self.frames
            .iter()
            .filter(|f| matches!(f.lighting, Lighting::Partial { .. }))
            .flat_map(|f| (0..self.cameras.len()).map(move |c| (f.index, c)))
            .filter(|&(f, c)| self.images[f][c].is_some())
            .collect()
    }

    pub fn lights_of(&self, frame: usize) -> Vec<PointLight> {
        match &self.frames[frame].lighting {
            Lighting::Full => self.rig.lights.clone(),
            Lighting::Partial { lights } => lights.iter().map(|&i| self.rig.lights[i]).collect(),
        }
    }

    /// Writes poses, cameras, stage rig, script, material, images and a
    /// JSON-lines manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let img_dir = dir.join("images");
        std::fs::create_dir_all(&img_dir)?;
        save_pose_stream(&dir.join(POSES), &self.poses)?;
        std::fs::write(dir.join("cameras.json"), serde_json::to_string_pretty(&self.cameras)?)?;
        std::fs::write(dir.join("frames.json"), serde_json::to_string_pretty(&self.frames)?)?;
        std::fs::write(dir.join("script.json"), serde_json::to_string_pretty(&self.script)?)?;
        std::fs::write(dir.join("material.json"), serde_json::to_string_pretty(&self.material)?)?;
        self.rig.save(&dir.join("stage.json"))?;
        let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
        for f in &self.frames {
            for (c, img) in self.images[f.index].iter().enumerate() {
                let Some(img) = img else { continue };
                let stem = format!("f{:05}_c{c:02}", f.index);
                let (rgb, alpha) = (format!("images/{stem}.pfm"), format!("images/{stem}_alpha.pfm"));
                save_pfm(&dir.join(&rgb), img)?;
                let plane = img.len() / 4;
                save_pfm(&dir.join(&alpha), &Tensor::new(&[1, img.shape()[1], img.shape()[2]], img.data()[3 * plane..].to_vec())?)?;
                save_png(&img_dir.join(format!("{stem}.png")), img, 1.0 / 255.0)?;
                let rec = ManifestRecord { pose_file: POSES.into(), frame: f.index, camera: c, lighting: f.lighting.clone(), image: rgb, alpha };
                writeln!(manifest, "{}", serde_json::to_string(&rec)?)?;
            }
        }
        manifest.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let json = |name: &str| -> Result<String> { Ok(std::fs::read_to_string(dir.join(name))?) };
        let script: CaptureScript = serde_json::from_str(&json("script.json")?)?;
        let cameras: Vec<Camera> = serde_json::from_str(&json("cameras.json")?)?;
        let frames: Vec<CaptureFrame> = serde_json::from_str(&json("frames.json")?)?;
        let material: Material = serde_json::from_str(&json("material.json")?)?;
        let rig = LightRig::load(&dir.join("stage.json"))?;
        let poses = load_pose_stream(&dir.join(POSES))?;
        if poses.len() != frames.len() {
            return Err(Error::format(dir, format!("{} poses for {} frames", poses.len(), frames.len())));
        }
        let mut images = vec![vec![None; cameras.len()]; frames.len()];
        let manifest = std::fs::File::open(dir.join("manifest.jsonl"))?;
        for line in std::io::BufReader::new(manifest).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)?;
            if rec.frame >= frames.len() || rec.camera >= cameras.len() {
                return Err(Error::format(dir, format!("manifest record out of range: {line}")));
            }
            let rgb = load_pfm(&resolve(dir, &rec.image))?;
            let alpha = load_pfm(&resolve(dir, &rec.alpha))?;
            let mut data = rgb.into_data();
            data.extend_from_slice(alpha.data());
            images[rec.frame][rec.camera] = Some(Tensor::new(&[4, alpha.shape()[1], alpha.shape()[2]], data)?);
        }
        Ok(CaptureDataset { script, rig, cameras, frames, poses, material, images })
    }
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    dir.join(p)
}
