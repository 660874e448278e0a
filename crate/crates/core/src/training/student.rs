use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{loss_total, masked_mse};
use super::stage::{loss_mask, render_image, render_map, teacher_olat, Stage};
use super::teacher::TrainOutcome;
use super::train::{run, Output, TrainConfig, TrainState};
use crate::appearance::{joint_encode, student_forward, ModelManifest, StudentConfig, TeacherConfig};
use crate::error::{Error, Result};
use crate::illum::{build_features, env_to_rig, olat_aggregate, EnvMap, FeatureOptions};
use crate::math::DVec3;
use crate::raymarch::{save_pfm, Camera, ColorOperator};
use crate::rig::{save_pose_stream, Pose};
use crate::tensor::{ParamStore, Scalar, Tape, Tensor};

/// Content hash of an envmap.
pub fn env_hash(env: &EnvMap) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (env.rows, env.cols).hash(&mut h);
    for t in &env.texels {
        for v in t {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Disjoint train and test envmaps.
#[derive(Clone, Debug)]
pub struct EnvSplit {
    pub train: Vec<EnvMap>,
    pub test: Vec<EnvMap>,
}

impl EnvSplit {
    /// Random skies: a dim ambient term plus one to three colored lobes,
    /// scaled to a fixed total intensity.
    pub fn synthetic(train: usize, test: usize, rows: usize, cols: usize, total: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = || {
            let lobes: Vec<(DVec3, f64, [f64; 3])> = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let z: f64 = rng.gen_range(-1.0..1.0);
                    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let r = (1.0 - z * z).sqrt();
                    let dir = DVec3::new(r * phi.cos(), z, r * phi.sin());
                    (dir, rng.gen_range(4.0..24.0), [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)])
                })
                .collect();
            let ambient = rng.gen_range(0.02..0.1);
            let env = EnvMap::from_fn(rows, cols, |d| {
                let mut c = [ambient; 3];
                for (mu, kappa, col) in &lobes {
                    let w = (kappa * (d.dot(*mu) - 1.0)).exp();
                    for i in 0..3 {
                        c[i] += w * col[i];
                    }
                }
                c
            });
            let sum: f64 = env.texels.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).sum();
            env.scaled(total / sum)
        };
        let train = (0..train).map(|_| make()).collect();
        let test = (0..test).map(|_| make()).collect();
        EnvSplit { train, test }
    }

    pub fn test_hashes(&self) -> HashSet<u64> {
        self.test.iter().map(env_hash).collect()
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let test = self.test_hashes();
        match self.train.iter().position(|e| test.contains(&env_hash(e))) {
            Some(i) => Err(Error::SplitViolation(format!("training envmap {i} is in the test split"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Distance of the envmap point lights from the origin.
    pub light_radius: f64,
    /// Envmaps drawn per `(pose, camera)`.
    pub envs_per_view: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { light_radius: 1.0, envs_per_view: 1, seed: 0 }
    }
}

/// One manifest line of a distillation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub pose: usize,
    pub camera: usize,
    pub env: usize,
    pub env_hash: u64,
}

pub struct DistillSample {
    pub record: DistillRecord,
    pub target: Tensor<f32>,
    pub mask: Vec<bool>,
    pub op: Arc<ColorOperator>,
}

/// Teacher pseudo-ground truth under envmap lighting.
pub struct DistillSet {
    pub poses: Vec<Pose>,
    pub cameras: Vec<Camera>,
    pub envs: Vec<EnvMap>,
    pub samples: Vec<DistillSample>,
}

/// Relative gap between the envmap render and the intensity-weighted sum of
/// per-light renders for one view.
pub fn olat_linearity_error(op: &ColorOperator, olat: &[Tensor<f32>], intensities: &[[f64; 3]]) -> Result<f64> {
    let refs: Vec<&Tensor<f32>> = olat.iter().collect();
    let direct = render_image(op, &olat_aggregate(&refs, intensities)?)?;
    let mut summed = vec![0.0f64; direct.len()];
    for (c, b) in olat.iter().zip(intensities) {
        let img = render_image(op, c)?;
        let plane = img.len() / 3;
        for (i, v) in img.data().iter().enumerate() {
            summed[i] += b[i / plane] * *v as f64;
        }
    }
    let num: f64 = direct.data().iter().zip(&summed).map(|(a, b)| (*a as f64 - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = summed.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok(num / den.max(1e-30))
}

/// Renders teacher pseudo-GT for every `(pose, camera)` under
/// `envs_per_view` training envmaps. Fails when a training envmap is in
/// `test_hashes`, and checks aggregation linearity on the first view.
pub fn build_distill_set(
    stage: &Stage,
    teacher: &TeacherConfig,
    params: &ParamStore<f32>,
    poses: &[Pose],
    cameras: &[Camera],
    envs: &[EnvMap],
    test_hashes: &HashSet<u64>,
    cfg: &DistillConfig,
) -> Result<DistillSet> {
    if envs.is_empty() {
        return Err(Error::invalid("no training envmaps"));
    }
    if let Some(i) = envs.iter().position(|e| test_hashes.contains(&env_hash(e))) {
        return Err(Error::SplitViolation(format!("training envmap {i} is in the test split")));
    }
    let (rows, cols) = (envs[0].rows, envs[0].cols);
    if envs.iter().any(|e| (e.rows, e.cols) != (rows, cols)) {
        return Err(Error::invalid("envmaps must share one resolution"));
    }
    let unit = EnvMap::constant(rows, cols, [1.0; 3]);
    let lights = env_to_rig(&unit, cfg.light_radius).lights;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::new();
    for (pi, pose) in poses.iter().enumerate() {
        let geom = stage.frame(pose)?;
        let inputs = stage.light_inputs(&geom, &lights)?;
        for (ci, cam) in cameras.iter().enumerate() {
            let view = stage.view_input(&geom, cam)?;
            let mut tape = Tape::new();
            let bound = params.bind_frozen(&mut tape);
            let olat: Vec<Tensor<f32>> =
                teacher_olat(&mut tape, teacher, &bound, pose, &view.dirs, &inputs)?.into_iter().map(|v| tape.value(v).clone()).collect();
            drop(tape);
            let refs: Vec<&Tensor<f32>> = olat.iter().collect();
            let alpha: Vec<f32> = view.op.alpha.clone();
            for _ in 0..cfg.envs_per_view.max(1) {
                let ei = rng.gen_range(0..envs.len());
                let intensities = &envs[ei].texels;
                if samples.is_empty() {
                    let err = olat_linearity_error(&view.op, &olat, intensities)?;
                    if err > 1e-4 {
                        return Err(Error::invalid(format!("envmap render deviates from the OLAT sum by {err:e}")));
                    }
                }
                let target = render_image(&view.op, &olat_aggregate(&refs, intensities)?)?;
                let mask: Vec<bool> = loss_mask(&alpha, &view.op);
                samples.push(DistillSample {
                    record: DistillRecord { pose: pi, camera: ci, env: ei, env_hash: env_hash(&envs[ei]) },
                    target,
                    mask,
                    op: Arc::clone(&view.op),
                });
            }
        }
    }
    Ok(DistillSet { poses: poses.to_vec(), cameras: cameras.to_vec(), envs: envs.to_vec(), samples })
}

impl DistillSet {
    pub fn assert_hygiene(&self, test_hashes: &HashSet<u64>) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if test_hashes.contains(&s.record.env_hash) {
                return Err(Error::SplitViolation(format!("distillation sample {i} uses a test envmap")));
            }
        }
        Ok(())
    }

    /// Student input features for every sample.
    pub fn features(&self, stage: &Stage, cfg: &StudentConfig) -> Result<Vec<Tensor<f32>>> {
        let opts = FeatureOptions { shininess: cfg.shininess.clone(), visibility: cfg.visibility, solid_angle: false };
        let meshes: Vec<_> = self.poses.iter().map(|p| stage.hand.posed_mesh(p)).collect::<Result<_>>()?;
        self.samples
            .par_iter()
            .map(|s| {
                let r = &s.record;
                let fm = build_features(&meshes[r.pose], &stage.atlas, &self.envs[r.env], self.cameras[r.camera].position(), &opts)?;
                Ok(fm.map)
            })
            .collect()
    }

    /// Writes poses, envmaps, pseudo-GT images and `manifest.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("envmaps"))?;
        std::fs::create_dir_all(dir.join("pseudo_gt"))?;
        save_pose_stream(&dir.join("poses.pps"), &self.poses)?;
        std::fs::write(dir.join("cameras.json"), serde_json::to_string_pretty(&self.cameras)?)?;
        for (i, e) in self.envs.iter().enumerate() {
            e.save_pfm(&dir.join(format!("envmaps/train_{i:03}.pfm")))?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
        for (i, s) in self.samples.iter().enumerate() {
            let image = format!("pseudo_gt/{i:05}.pfm");
            save_pfm(&dir.join(&image), &s.target)?;
            let line = serde_json::json!({
                "pose_file": "poses.pps",
                "frame": s.record.pose,
                "camera": s.record.camera,
                "envmap": format!("envmaps/train_{:03}.pfm", s.record.env),
                "envmap_hash": format!("{:016x}", s.record.env_hash),
                "image": image,
            });
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

fn student_payload<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &StudentConfig,
    bound: &crate::tensor::BoundParams,
    pose: &Pose,
    features: &Tensor<f32>,
) -> Result<crate::tensor::Var> {
    let joint = joint_encode(tape, bound, "student.joint", &cfg.joint, &pose.theta, cfg.feature_res, cfg.leaky_slope)?;
    let f = tape.constant(features.cast());
    student_forward(tape, cfg, bound, f, joint)
}

/// Student color map for one pose and feature map.
pub fn student_render(cfg: &StudentConfig, params: &ParamStore<f32>, pose: &Pose, features: &Tensor<f32>, op: &ColorOperator) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let c = student_payload(&mut tape, cfg, &bound, pose, features)?;
    render_image(op, tape.value(c))
}

/// Mean masked MSE of the student against a set's pseudo-GT.
pub fn student_mse(cfg: &StudentConfig, params: &ParamStore<f32>, set: &DistillSet, features: &[Tensor<f32>]) -> Result<f64> {
    let errs: Vec<f64> = set
        .samples
        .iter()
        .zip(features)
        .map(|(s, f)| masked_mse(&student_render(cfg, params, &set.poses[s.record.pose], f, &s.op)?, &s.target, &s.mask))
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

/// Trains the envmap student on `(features, pose) → payload` against the
/// set's pseudo-GT renders.
pub fn distill_student(
    cfg: &StudentConfig,
    set: &DistillSet,
    features: &[Tensor<f32>],
    test_hashes: &HashSet<u64>,
    train: &TrainConfig,
    resume: Option<TrainState>,
    out: Option<&Output>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    set.assert_hygiene(test_hashes)?;
    if features.len() != set.samples.len() {
        return Err(Error::shape("student features", &[features.len()], &[set.samples.len()]));
    }
    let state = match resume {
        Some(s) => s,
        None => TrainState::fresh(cfg.init(train.seed)?),
    };
    if let Some(o) = out {
        std::fs::create_dir_all(&o.dir)?;
        ModelManifest::for_student(cfg, train.steps, train.seed).save(&o.dir.join(format!("{}.json", o.stem)))?;
    }
    let (state, log) = run(
        state,
        set.samples.len(),
        train,
        out,
        |i| format!("{:?}", set.samples[i].record),
        |tape, bound, i, t| {
            let s = &set.samples[i];
            let c = student_payload(tape, cfg, bound, &set.poses[s.record.pose], &features[i])?;
            let img = render_map(tape, &s.op, c)?;
            let gt = tape.constant(s.target.clone());
            loss_total(tape, img, gt, &s.mask, c, t, &train.weights)
        },
    )?;
    Ok(TrainOutcome { state, log })
}
