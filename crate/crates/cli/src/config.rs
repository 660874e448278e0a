use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use primlight::appearance::{ModelManifest, Scale, StudentConfig, TeacherConfig};
use primlight::illum::LightRig;
use primlight::synth::{generate_hand, stage_rig, HandParams, HAND_POSE_DIM};
use primlight::tensor::{checkpoint, ParamStore};
use primlight::training::Stage;

use crate::exit::ConfigError;

pub const RUN_FILE: &str = "run.json";
pub const TEACHER_STEM: &str = "teacher";
pub const STUDENT_STEM: &str = "student";
pub const DEFAULT_CEILING: u64 = 4 << 30;

/// Everything that fixes a model's shapes, persisted as `run.json` next to
/// its checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scale: Scale,
    /// Primitives per UV side (`N = w²`).
    pub w: usize,
    /// Voxels per primitive side.
    pub s: usize,
    pub hand_seed: u64,
    /// Stage-rig light count.
    pub lights: usize,
    /// Envmap resolution the student sees (`M = rows·cols`).
    pub env_rows: usize,
    pub env_cols: usize,
    /// Upper bound on one payload's bytes.
    pub memory_ceiling: u64,
}

impl RunConfig {
    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => RunConfig { scale, w: 8, s: 8, hand_seed: 0, lights: 64, env_rows: 4, env_cols: 8, memory_ceiling: DEFAULT_CEILING },
            Scale::Paper => RunConfig { scale, w: 64, s: 16, hand_seed: 0, lights: 460, env_rows: 16, env_cols: 32, memory_ceiling: u64::MAX },
        }
    }

    pub fn primitives(&self) -> usize {
        self.w * self.w
    }

    pub fn env_size(&self) -> usize {
        self.env_rows * self.env_cols
    }

    /// Bytes of one RGB + opacity payload in f32.
    pub fn payload_bytes(&self) -> u64 {
        (self.primitives() * self.s.pow(3) * 4 * 4) as u64
    }

    pub fn summary(&self) -> String {
        format!(
            "N={} primitives (w={}), S={}, M={} envmap directions ({}x{}), {} stage lights",
            self.primitives(),
            self.w,
            self.s,
            self.env_size(),
            self.env_rows,
            self.env_cols,
            self.lights
        )
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.w == 0 || self.s == 0 || self.lights == 0 || self.env_rows == 0 || self.env_cols == 0 {
            bail!(ConfigError(format!("degenerate run config: {}", self.summary())));
        }
        if self.payload_bytes() > self.memory_ceiling {
            bail!(ConfigError(format!(
                "payload of {} bytes exceeds the memory ceiling of {} bytes; lower --w/--s or raise --memory-ceiling-gib",
                self.payload_bytes(),
                self.memory_ceiling
            )));
        }
        Ok(())
    }

    pub fn stage(&self) -> anyhow::Result<Stage> {
        let hand = generate_hand(&HandParams::default(), self.hand_seed)?;
        Ok(Stage::new(hand, self.w, self.s)?)
    }

    pub fn rig(&self) -> anyhow::Result<LightRig> {
        Ok(stage_rig(self.lights, 1.0, [0.0, 0.07, 0.0], 5)?)
    }

    pub fn teacher(&self) -> TeacherConfig {
        TeacherConfig::new(self.scale, self.s, self.w, HAND_POSE_DIM)
    }

    pub fn student(&self) -> StudentConfig {
        StudentConfig::new(self.scale, self.s, self.w, HAND_POSE_DIM)
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }

    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// The config recorded in `dir`, which must agree with `self` when present.
    pub fn reconcile(&self, dir: &Path) -> anyhow::Result<RunConfig> {
        if !dir.join(RUN_FILE).exists() {
            self.save(dir)?;
            return Ok(self.clone());
        }
        let stored = RunConfig::load(dir)?;
        if stored.w != self.w || stored.s != self.s || stored.hand_seed != self.hand_seed || stored.scale != self.scale {
            bail!(ConfigError(format!(
                "{} was built with {:?} scale, w={}, S={}, hand seed {}; the command line asks for {:?}, w={}, S={}, hand seed {}",
                dir.display(),
                stored.scale,
                stored.w,
                stored.s,
                stored.hand_seed,
                self.scale,
                self.w,
                self.s,
                self.hand_seed
            )));
        }
        Ok(stored)
    }
}

/// Model directory layout.
#[derive(Clone, Debug)]
pub struct ModelDir(pub PathBuf);

impl ModelDir {
    pub fn path(&self, file: &str) -> PathBuf {
        self.0.join(file)
    }

    pub fn has_teacher(&self) -> bool {
        self.path(&format!("{TEACHER_STEM}.plt")).exists()
    }

    pub fn has_student(&self) -> bool {
        self.path(&format!("{STUDENT_STEM}.plt")).exists()
    }

    pub fn teacher(&self, run: &RunConfig) -> anyhow::Result<(TeacherConfig, ParamStore<f32>)> {
        if !self.has_teacher() {
            bail!(ConfigError(format!("no teacher checkpoint in {}; run `primlight train-teacher` first", self.0.display())));
        }
        let manifest = ModelManifest::load(&self.path(&format!("{TEACHER_STEM}.json")))?;
        let cfg = manifest.teacher.context("teacher manifest without a teacher config")?;
        check_shape("teacher", cfg.s, cfg.w, run)?;
        Ok((cfg, checkpoint::load(&self.path(&format!("{TEACHER_STEM}.plt")))?))
    }

    pub fn student(&self, run: &RunConfig) -> anyhow::Result<(StudentConfig, ParamStore<f32>)> {
        if !self.has_student() {
            bail!(ConfigError(format!(
                "no student checkpoint in {}; envmap rendering needs one, run `primlight distill-student` first",
                self.0.display()
            )));
        }
        let manifest = ModelManifest::load(&self.path(&format!("{STUDENT_STEM}.json")))?;
        let cfg = manifest.student.context("student manifest without a student config")?;
        check_shape("student", cfg.s, cfg.w, run)?;
        Ok((cfg, checkpoint::load(&self.path(&format!("{STUDENT_STEM}.plt")))?))
    }
}

fn check_shape(what: &str, s: usize, w: usize, run: &RunConfig) -> anyhow::Result<()> {
    if s != run.s || w != run.w {
        bail!(ConfigError(format!("{what} checkpoint has S={s}, w={w} but the run config has S={}, w={}", run.s, run.w)));
    }
    Ok(())
}
