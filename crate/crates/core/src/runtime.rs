//! Inference: teacher renders under point lights, student renders under
//! envmaps, with a per-stage timing breakdown.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::appearance::{joint_encode, student_forward, StudentConfig, TeacherConfig};
use crate::error::Result;
use crate::illum::{vertex_features, EnvMap, FeatureOptions, PointLight};
use crate::primitives::{stack_uv, unstack_uv, VolumeTexture};
use crate::raymarch::{march, Camera};
use crate::rig::{rasterize_texels, Pose};
use crate::synth::FrameGeometry;
use crate::tensor::{ParamStore, Tape, Tensor};
use crate::training::{teacher_payload, Stage};

/// Wall-clock seconds per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    /// Skinning, primitive placement, opacity and the joint encoder.
    pub joint_decode: f64,
    /// Visibility rays for the illumination features.
    pub ray_tracing: f64,
    /// Projection of per-vertex features onto the texel grid.
    pub resampling: f64,
    pub texture_decode: f64,
    pub marching: f64,
}

impl StageTimes {
    pub const NAMES: [&'static str; 5] = ["joint decode", "ray tracing", "resampling", "texture decode", "marching"];

    pub fn values(&self) -> [f64; 5] {
        [self.joint_decode, self.ray_tracing, self.resampling, self.texture_decode, self.marching]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    *slot += t.elapsed().as_secs_f64();
    out
}

/// Marches a stacked color map `[3S,wS,wS]` through the frame's opacity; `[4,H,W]`.
pub fn march_map(geom: &FrameGeometry, map: &Tensor<f32>, camera: &Camera) -> Result<Tensor<f32>> {
    let color = unstack_uv(map, geom.set.s)?;
    let payload = VolumeTexture::new(color, geom.opacity.clone())?;
    march(&geom.set, &payload, camera, &geom.march)
}

/// Teacher image under a set of point lights, `[4,H,W]`, and the stage
/// breakdown: geometry under joint decode, deep shadows and direction volumes
/// under ray tracing, the U-Net under texture decode.
pub fn render_teacher(
    stage: &Stage,
    cfg: &TeacherConfig,
    params: &ParamStore<f32>,
    pose: &Pose,
    camera: &Camera,
    lights: &[PointLight],
) -> Result<(Tensor<f32>, StageTimes)> {
    let mut times = StageTimes::default();
    let geom = timed(&mut times.joint_decode, || stage.frame(pose))?;
    let (inputs, view) = timed(&mut times.ray_tracing, || {
        let inputs = stage.light_inputs(&geom, lights)?;
        let (view, _) = geom.set.direction_volume(camera.position());
        Ok((inputs, stack_uv(&view)?))
    })?;
    let map = timed(&mut times.texture_decode, || {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let c = teacher_payload(&mut tape, cfg, &bound, pose, &view, &inputs)?;
        Ok(tape.value(c).clone())
    })?;
    let img = timed(&mut times.marching, || march_map(&geom, &map, camera))?;
    Ok((img, times))
}

/// Student image under an envmap, `[4,H,W]`, and the stage breakdown.
pub fn render_student(
    stage: &Stage,
    cfg: &StudentConfig,
    params: &ParamStore<f32>,
    pose: &Pose,
    camera: &Camera,
    env: &EnvMap,
) -> Result<(Tensor<f32>, StageTimes)> {
    let mut times = StageTimes::default();
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let (geom, joint) = timed(&mut times.joint_decode, || {
        let geom = stage.frame(pose)?;
        let joint = joint_encode(&mut tape, &bound, "student.joint", &cfg.joint, &pose.theta, cfg.feature_res, cfg.leaky_slope)?;
        Ok((geom, joint))
    })?;
    let opts = FeatureOptions { shininess: cfg.shininess.clone(), visibility: cfg.visibility, solid_angle: false };
    let per_vertex = timed(&mut times.ray_tracing, || vertex_features(&geom.mesh, env, camera.position(), &opts))?;
    let features = timed(&mut times.resampling, || {
        let grid = rasterize_texels(&geom.mesh, &stage.atlas, &per_vertex, opts.channels())?;
        let r = grid.resolution;
        Tensor::new(&[grid.channels, r, r], grid.data.iter().map(|&v| v as f32).collect())
    })?;
    let map = timed(&mut times.texture_decode, || {
        let f = tape.constant(features);
        let c = student_forward(&mut tape, cfg, &bound, f, joint)?;
        Ok(tape.value(c).clone())
    })?;
    let img = timed(&mut times.marching, || march_map(&geom, &map, camera))?;
    Ok((img, times))
}

/// Per-run stage timings from repeated renders.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: Vec<StageTimes>,
    /// End-to-end seconds per run, including orchestration.
    pub wall: Vec<f64>,
}

impl BenchReport {
    /// Sample standard deviation per stage.
    pub fn std(&self) -> StageTimes {
        let m = self.mean().values();
        let n = self.runs.len();
        let mut var = [0.0; 5];
        for r in &self.runs {
            for (k, v) in r.values().iter().enumerate() {
                var[k] += (v - m[k]).powi(2) / (n.max(2) - 1) as f64;
            }
        }
        let s = var.map(f64::sqrt);
        StageTimes { joint_decode: s[0], ray_tracing: s[1], resampling: s[2], texture_decode: s[3], marching: s[4] }
    }

    pub fn mean_wall(&self) -> f64 {
        self.wall.iter().sum::<f64>() / self.wall.len().max(1) as f64
    }

    /// Every run's wall time covers its stages, and no stage exceeds the total.
    pub fn consistent(&self) -> bool {
        self.runs.len() == self.wall.len()
            && self.runs.iter().zip(&self.wall).all(|(r, &w)| {
                let max = r.values().into_iter().fold(0.0, f64::max);
                r.total() >= max && w + 1e-9 >= r.total()
            })
    }

    pub fn mean(&self) -> StageTimes {
        let n = self.runs.len().max(1) as f64;
        let mut m = StageTimes::default();
        for r in &self.runs {
            m.joint_decode += r.joint_decode / n;
            m.ray_tracing += r.ray_tracing / n;
            m.resampling += r.resampling / n;
            m.texture_decode += r.texture_decode / n;
            m.marching += r.marching / n;
        }
        m
    }

    /// One row per run, seconds.
    pub fn csv(&self) -> String {
        let mut out = String::from("run");
        for n in StageTimes::NAMES {
            out.push(',');
            out.push_str(&n.replace(' ', "_"));
        }
        out.push_str(",total,wall\n");
        for (i, r) in self.runs.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in r.values() {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push_str(&format!(",{:.6},{:.6}\n", r.total(), self.wall.get(i).copied().unwrap_or(f64::NAN)));
        }
        out
    }

    /// Mean ± standard deviation in milliseconds and share of the total per stage.
    pub fn table(&self) -> String {
        let (m, sd) = (self.mean(), self.std());
        let total = m.total().max(1e-12);
        let mut out = format!("{:<16}{:>12}{:>10}{:>9}\n", "stage", "mean ms", "± ms", "share");
        for ((n, v), d) in StageTimes::NAMES.iter().zip(m.values()).zip(sd.values()) {
            out.push_str(&format!("{:<16}{:>12.3}{:>10.3}{:>8.1}%\n", n, 1e3 * v, 1e3 * d, 100.0 * v / total));
        }
        let totals: Vec<f64> = self.runs.iter().map(StageTimes::total).collect();
        let n = totals.len();
        let var = totals.iter().map(|t| (t - m.total()).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        out.push_str(&format!("{:<16}{:>12.3}{:>10.3}{:>9}\n", "total", 1e3 * m.total(), 1e3 * var.sqrt(), format!("n={n}")));
        out.push_str(&format!("{:<16}{:>12.3}\n", "wall", 1e3 * self.mean_wall()));
        out
    }
}

/// Times `runs` student renders after `warmup` untimed ones.
#[allow(clippy::too_many_arguments)]
pub fn bench_student(
    stage: &Stage,
    cfg: &StudentConfig,
    params: &ParamStore<f32>,
    pose: &Pose,
    camera: &Camera,
    env: &EnvMap,
    runs: usize,
    warmup: usize,
) -> Result<BenchReport> {
    for _ in 0..warmup {
        render_student(stage, cfg, params, pose, camera, env)?;
    }
    let mut report = BenchReport::default();
    for _ in 0..runs {
        let t = Instant::now();
        let (_, times) = render_student(stage, cfg, params, pose, camera, env)?;
        report.wall.push(t.elapsed().as_secs_f64());
        report.runs.push(times);
    }
    Ok(report)
}
