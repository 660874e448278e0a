use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use primlight::appearance::{StudentConfig, TeacherConfig};
use primlight::illum::{build_features, env_to_rig, EnvMap, FeatureOptions, PointLight};
use primlight::raymarch::{save_pfm, save_png, Camera};
use primlight::rig::Pose;
use primlight::runtime::{bench_student, render_student, render_teacher, StageTimes};
use primlight::synth::{simulate_capture, CameraRing, CaptureScript, Material};
use primlight::tensor::{ParamStore, Tensor};
use primlight::training::*;

use crate::config::{ModelDir, RunConfig, STUDENT_STEM, TEACHER_STEM};
use crate::exit::{ConfigError, NumericError};
use crate::scene::{self, Orbit};

/// Loaded checkpoints for one model directory; either model may be absent.
pub struct Models {
    pub run: RunConfig,
    pub stage: Stage,
    pub teacher: Option<(TeacherConfig, ParamStore<f32>)>,
    pub student: Option<(StudentConfig, ParamStore<f32>)>,
}

/// What lights the hand.
#[derive(Clone, Debug)]
pub enum Illumination {
    Lights(Vec<PointLight>),
    Env(EnvMap),
}

impl Models {
    pub fn load(dir: &ModelDir) -> anyhow::Result<Self> {
        if !dir.path(crate::config::RUN_FILE).exists() {
            bail!(ConfigError(format!("no model in {}; run `primlight train-teacher` first", dir.0.display())));
        }
        let run = RunConfig::load(&dir.0)?;
        run.validate()?;
        let teacher = if dir.has_teacher() { Some(dir.teacher(&run)?) } else { None };
        let student = if dir.has_student() { Some(dir.student(&run)?) } else { None };
        if teacher.is_none() && student.is_none() {
            bail!(ConfigError(format!("{} holds no checkpoints; run `primlight train-teacher` first", dir.0.display())));
        }
        let stage = run.stage()?;
        Ok(Models { run, stage, teacher, student })
    }

    /// Point lights go through the teacher, envmaps through the student.
    pub fn render(&self, pose: &Pose, camera: &Camera, light: &Illumination) -> anyhow::Result<(Tensor<f32>, StageTimes)> {
        match light {
            Illumination::Lights(lights) => {
                let (cfg, params) = self.teacher.as_ref().ok_or_else(|| ConfigError("point and directional lights need a teacher checkpoint".into()))?;
                Ok(render_teacher(&self.stage, cfg, params, pose, camera, lights)?)
            }
            Illumination::Env(env) => {
                let (cfg, params) = self.student.as_ref().ok_or_else(|| {
                    ConfigError("envmap rendering needs a student checkpoint; run `primlight distill-student` first".into())
                })?;
                let env = scene::fit_envmap(env, self.run.env_rows, self.run.env_cols)?;
                let (mut img, times) = render_student(&self.stage, cfg, params, pose, camera, &env)?;
                if env.texels.iter().flatten().all(|v| *v == 0.0) {
                    let plane = img.shape()[1] * img.shape()[2];
                    img.data_mut()[..3 * plane].fill(0.0);
                }
                Ok((img, times))
            }
        }
    }
}

pub struct TeacherArgs {
    pub frames: usize,
    pub cameras: usize,
    pub px: usize,
    pub steps: usize,
    pub lr: f64,
    pub checkpoint_every: usize,
    pub resume: bool,
    pub write_capture: bool,
}

fn resume_state(dir: &Path, stem: &str, resume: bool) -> anyhow::Result<Option<TrainState>> {
    if !resume {
        return Ok(None);
    }
    if !dir.join(format!("{stem}.state.json")).exists() {
        bail!(ConfigError(format!("--resume given but {} has no {stem} checkpoint", dir.display())));
    }
    let state = TrainState::load(dir, stem)?;
    info!("resuming {stem} at step {}", state.step);
    Ok(Some(state))
}

fn train_config(steps: usize, lr: f64, checkpoint_every: usize, seed: u64) -> TrainConfig {
    TrainConfig { lr, checkpoint_every, ..TrainConfig::new(steps, seed) }
}

pub fn train_teacher_cmd(run: &RunConfig, dir: &ModelDir, seed: u64, a: &TeacherArgs) -> anyhow::Result<()> {
    let run = run.reconcile(&dir.0)?;
    let stage = run.stage()?;
    let script = CaptureScript {
        frames: a.frames,
        cameras: CameraRing { count: a.cameras, width: a.px, height: a.px, arc: 2.0, ..CameraRing::default() },
        seed,
        pose_amplitude: 0.5,
        render_keyframes: a.write_capture,
        ..CaptureScript::default()
    };
    let t = Instant::now();
    let capture = simulate_capture(&stage.hand, &script, &run.rig()?, &Material::default()).map_err(|e| ConfigError(e.to_string()))?;
    if a.write_capture {
        capture.write(&dir.path("capture"))?;
    }
    let frames: Vec<usize> = capture.frames.iter().filter(|f| f.interpolation.is_some()).map(|f| f.index).collect();
    let data = TeacherData::prepare(&stage, &capture, &frames, &[])?;
    info!("capture: {} partially lit samples in {:.1}s", data.samples.len(), t.elapsed().as_secs_f64());
    let cfg = run.teacher();
    let resume = resume_state(&dir.0, TEACHER_STEM, a.resume)?;
    let out = Output::new(&dir.0, TEACHER_STEM);
    let t = Instant::now();
    let result = train_teacher(&cfg, &data, &train_config(a.steps, a.lr, a.checkpoint_every, seed), resume, Some(&out))?;
    let mse = data.mse(&cfg, &result.state.params)?;
    println!(
        "teacher: {} steps in {:.1}s, training MSE {mse:.2}; checkpoint {}",
        result.state.step,
        t.elapsed().as_secs_f64(),
        dir.path(&format!("{TEACHER_STEM}.plt")).display()
    );
    Ok(())
}

pub struct StudentArgs {
    pub poses: usize,
    pub train_envs: usize,
    pub test_envs: usize,
    pub envs_per_view: usize,
    pub env_total: f64,
    pub cameras: usize,
    pub px: usize,
    pub steps: usize,
    pub lr: f64,
    pub checkpoint_every: usize,
    pub resume: bool,
    pub write_set: bool,
}

pub fn distill_student_cmd(dir: &ModelDir, seed: u64, a: &StudentArgs) -> anyhow::Result<()> {
    let run = RunConfig::load(&dir.0)?;
    let (tcfg, tparams) = dir.teacher(&run)?;
    let stage = run.stage()?;
    if a.poses == 0 || a.train_envs == 0 || a.test_envs == 0 || a.envs_per_view == 0 {
        bail!(ConfigError("poses, envmap counts and envs per view must be positive".into()));
    }
    let split = EnvSplit::synthetic(a.train_envs, a.test_envs, run.env_rows, run.env_cols, a.env_total, seed);
    split.check_disjoint()?;
    let test = split.test_hashes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<Pose> = (0..2 * a.poses).map(|_| stage.hand.random_pose(&mut rng, 0.5)).collect();
    let vectors: Vec<Vec<f64>> = pool.iter().map(|p| root_normalized_vertices(&stage.hand, p, &[])).collect::<primlight::Result<_>>()?;
    let poses: Vec<Pose> = pose_importance_sample(&vectors, a.poses, seed)?.into_iter().map(|i| pool[i].clone()).collect();
    let cameras = CameraRing { count: a.cameras, width: a.px, height: a.px, arc: 2.0, ..CameraRing::default() }.cameras()?;
    let dcfg = DistillConfig { light_radius: 1.0, envs_per_view: a.envs_per_view, seed };
    let t = Instant::now();
    let set = build_distill_set(&stage, &tcfg, &tparams, &poses, &cameras, &split.train, &test, &dcfg)?;
    let held_poses = &poses[..poses.len().min(8)];
    let held = build_distill_set(&stage, &tcfg, &tparams, held_poses, &cameras, &split.test, &HashSet::new(), &dcfg)?;
    info!("distillation set: {} samples, {} held-out in {:.1}s", set.samples.len(), held.samples.len(), t.elapsed().as_secs_f64());
    if a.write_set {
        set.write(&dir.path("distill"))?;
    }
    let env_dir = dir.path("envmaps");
    std::fs::create_dir_all(&env_dir)?;
    for (i, env) in split.test.iter().enumerate() {
        env.save_pfm(&env_dir.join(format!("test_{i:03}.pfm")))?;
    }
    let cfg = run.student();
    let features = set.features(&stage, &cfg)?;
    let resume = resume_state(&dir.0, STUDENT_STEM, a.resume)?;
    let out = Output::new(&dir.0, STUDENT_STEM);
    let t = Instant::now();
    let result = distill_student(&cfg, &set, &features, &test, &train_config(a.steps, a.lr, a.checkpoint_every, seed), resume, Some(&out))?;
    let train_mse = student_mse(&cfg, &result.state.params, &set, &features)?;
    let held_mse = student_mse(&cfg, &result.state.params, &held, &held.features(&stage, &cfg)?)?;
    println!(
        "student: {} steps in {:.1}s, training MSE {train_mse:.2}, held-out envmap MSE {held_mse:.2} ({:.2}x)",
        result.state.step,
        t.elapsed().as_secs_f64(),
        held_mse / train_mse
    );
    Ok(())
}

#[derive(Clone, Debug)]
pub enum RenderMode {
    Olat { index: usize },
    Point { position: [f64; 3] },
    Directional { direction: [f64; 3] },
    Envmap { spec: String },
}

pub struct RenderArgs {
    pub mode: RenderMode,
    pub intensity: f64,
    pub verify_linearity: bool,
    pub pose: String,
    pub orbit: Orbit,
    pub out: PathBuf,
    pub env_total: f64,
}

/// Largest absolute difference relative to the peak of `reference`.
fn relative_max_error(reference: &Tensor<f32>, sum: &[f64], channels: usize) -> f64 {
    let n = channels * reference.shape()[1] * reference.shape()[2];
    let peak = reference.data()[..n].iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let err = reference.data()[..n].iter().zip(sum).fold(0.0f64, |m, (a, b)| m.max((*a as f64 - b).abs()));
    if peak > 0.0 {
        err / peak
    } else {
        err
    }
}

pub fn render_cmd(dir: &ModelDir, ev: f64, a: &RenderArgs) -> anyhow::Result<()> {
    let models = Models::load(dir)?;
    let pose = scene::parse_pose(&a.pose, &models.stage.hand)?;
    let camera = a.orbit.camera()?;
    let b = [a.intensity; 3];
    let t = Instant::now();
    let img = match &a.mode {
        RenderMode::Olat { index } => {
            let rig = models.run.rig()?;
            let light = rig.lights.get(*index).ok_or_else(|| ConfigError(format!("light index {index} outside the {}-light rig", rig.len())))?;
            let light = PointLight { intensity: light.intensity.map(|v| v * a.intensity), ..*light };
            models.render(&pose, &camera, &Illumination::Lights(vec![light]))?.0
        }
        RenderMode::Point { position } => {
            let geom = models.stage.frame(&pose)?;
            if geom.set.direction_volume(primlight::math::DVec3::from_array(*position)).1 {
                warn!("light at {position:?} sits on a voxel center; its direction there is zeroed");
            }
            models.render(&pose, &camera, &Illumination::Lights(vec![scene::point_light(*position, b)]))?.0
        }
        RenderMode::Directional { direction } => {
            models.render(&pose, &camera, &Illumination::Lights(vec![scene::directional_light(*direction, b)?]))?.0
        }
        RenderMode::Envmap { spec } => {
            let env = scene::load_envmap(spec, models.run.env_rows, models.run.env_cols, a.env_total)?.scaled(a.intensity);
            if a.verify_linearity {
                verify_linearity(&models, &pose, &camera, &env)?
            } else {
                models.render(&pose, &camera, &Illumination::Env(env))?.0
            }
        }
    };
    if img.data().iter().any(|v| !v.is_finite()) {
        bail!(NumericError("render produced non-finite pixels".into()));
    }
    scene::write_image(&a.out, &img, ev)?;
    println!("wrote {} and .pfm in {:.1} ms", a.out.with_extension("png").display(), 1e3 * t.elapsed().as_secs_f64());
    Ok(())
}

/// Teacher render under the envmap's lights, checked against the sum of its
/// one-light renders.
fn verify_linearity(models: &Models, pose: &Pose, camera: &Camera, env: &EnvMap) -> anyhow::Result<Tensor<f32>> {
    let (cfg, params) = models.teacher.as_ref().ok_or_else(|| ConfigError("--verify-linearity renders with the teacher checkpoint".into()))?;
    let lights = env_to_rig(env, 1.0).lights;
    let (joint, _) = render_teacher(&models.stage, cfg, params, pose, camera, &lights)?;
    let mut sum = vec![0.0f64; joint.len()];
    for l in &lights {
        let (one, _) = render_teacher(&models.stage, cfg, params, pose, camera, std::slice::from_ref(l))?;
        for (s, v) in sum.iter_mut().zip(one.data()) {
            *s += *v as f64;
        }
    }
    let err = relative_max_error(&joint, &sum, 3);
    println!("linearity: envmap render vs sum of {} one-light renders, relative error {err:.3e}", lights.len());
    if !(err <= 1e-4) {
        bail!(NumericError(format!("linearity check failed: relative error {err:.3e} > 1e-4")));
    }
    Ok(joint)
}

pub struct FeatureArgs {
    pub envmap: String,
    pub env_total: f64,
    pub pose: String,
    pub orbit: Orbit,
    pub shininess: Vec<f64>,
    pub out: PathBuf,
}

/// Texel-space diffuse and specular feature maps with and without mesh
/// visibility, sharing one exposure per map so the two settings compare.
pub fn features_cmd(run: &RunConfig, ev: f64, a: &FeatureArgs) -> anyhow::Result<()> {
    let stage = run.stage()?;
    let pose = scene::parse_pose(&a.pose, &stage.hand)?;
    let env = scene::load_envmap(&a.envmap, run.env_rows, run.env_cols, a.env_total)?;
    if a.shininess.iter().any(|s| !(*s > 0.0)) {
        bail!(ConfigError(format!("shininess values {:?} must be positive", a.shininess)));
    }
    let mesh = stage.hand.posed_mesh(&pose)?;
    let viewer = a.orbit.eye();
    let mut names = vec!["diffuse".to_string()];
    names.extend(a.shininess.iter().map(|s| format!("specular_{s}")));
    let maps: Vec<(bool, Tensor<f32>)> = [true, false]
        .into_iter()
        .map(|visibility| {
            let opts = FeatureOptions { shininess: a.shininess.clone(), visibility, solid_angle: false };
            build_features(&mesh, &stage.atlas, &env, viewer, &opts).map(|f| (visibility, f.map))
        })
        .collect::<primlight::Result<_>>()?;
    let r = maps[0].1.shape()[1];
    let plane = r * r;
    for (k, name) in names.iter().enumerate() {
        let slice = |m: &Tensor<f32>| Tensor::new(&[3, r, r], m.data()[3 * k * plane..3 * (k + 1) * plane].to_vec());
        let peak = maps.iter().map(|(_, m)| slice(m).map(|t| t.data().iter().fold(0.0f32, |a, v| a.max(*v)))).collect::<primlight::Result<Vec<_>>>()?;
        let peak = peak.into_iter().fold(0.0f32, f32::max);
        let scale = if peak > 0.0 { 2f32.powf(ev as f32) / peak } else { 0.0 };
        for (visibility, m) in &maps {
            let sub = a.out.join(if *visibility { "visibility" } else { "no_visibility" });
            std::fs::create_dir_all(&sub)?;
            let img = slice(m)?;
            save_png(&sub.join(format!("{name}.png")), &img, scale)?;
            save_pfm(&sub.join(format!("{name}.pfm")), &img)?;
        }
    }
    println!("wrote {} feature maps for both visibility settings under {}", names.len(), a.out.display());
    Ok(())
}

pub struct BenchArgs {
    pub runs: usize,
    pub warmup: usize,
    pub csv: PathBuf,
    pub pose: String,
    pub orbit: Orbit,
    pub envmap: String,
    pub env_total: f64,
    pub random_weights: bool,
}

pub fn bench_cmd(dir: &ModelDir, fallback: &RunConfig, seed: u64, a: &BenchArgs) -> anyhow::Result<()> {
    if a.runs == 0 {
        bail!(ConfigError("--runs must be positive".into()));
    }
    if a.runs < 50 {
        warn!("{} runs requested; the report is meant for at least 50", a.runs);
    }
    let (run, cfg, params) = if a.random_weights {
        let run = if dir.0.join(crate::config::RUN_FILE).exists() { RunConfig::load(&dir.0)? } else { fallback.clone() };
        let cfg = run.student();
        let params = cfg.init(seed)?;
        (run, cfg, params)
    } else {
        let run = RunConfig::load(&dir.0)?;
        let (cfg, params) = dir.student(&run).context("bench times the student; pass --random-weights to time untrained weights")?;
        (run, cfg, params)
    };
    let stage = run.stage()?;
    let pose = scene::parse_pose(&a.pose, &stage.hand)?;
    let camera = a.orbit.camera()?;
    let env = scene::load_envmap(&a.envmap, run.env_rows, run.env_cols, a.env_total)?;
    let report = bench_student(&stage, &cfg, &params, &pose, &camera, &env, a.runs, a.warmup)?;
    if !report.consistent() {
        bail!(NumericError("stage times do not add up to the measured wall-clock totals".into()));
    }
    if let Some(d) = a.csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(&a.csv, report.csv())?;
    println!("student render, {}x{} px, {}, {} runs", camera.width, camera.height, run.summary(), a.runs);
    print!("{}", report.table());
    println!("csv: {}", a.csv.display());
    Ok(())
}
