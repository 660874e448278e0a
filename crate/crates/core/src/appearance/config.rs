use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kaiming_uniform, ParamStore, Scalar, Tensor};

pub const LAMBDA_S: f64 = 25.0;
pub const LAMBDA_B: f64 = 100.0;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Published sizes: N = 4096, S = 16, full channel plans.
    Paper,
    /// Laptop sizes: hidden widths scaled by S/16.
    Desk,
}

fn scaled(c: usize, s: usize) -> usize {
    (c * s / 16).max(4)
}

/// Tile-and-convolve pose encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub pose_dim: usize,
    pub channels: Vec<usize>,
}

impl JointConfig {
    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&self.pose_dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    /// Voxels per primitive side.
    pub s: usize,
    /// Primitives per UV side.
    pub w: usize,
    /// Output channels of the encoder layers; the input has 7S channels.
    pub encoder: Vec<usize>,
    /// Output channels of the decoder layers; the last is 4S.
    pub decoder: Vec<usize>,
    pub joint: JointConfig,
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub leaky_slope: f64,
    /// Feed deep-shadow visibility; `false` zeroes the V channels.
    pub visibility: bool,
}

impl TeacherConfig {
    pub fn new(scale: Scale, s: usize, w: usize, pose_dim: usize) -> Self {
        let f = |c: usize| match scale {
            Scale::Paper => c,
            Scale::Desk => scaled(c, s),
        };
        TeacherConfig {
            s,
            w,
            encoder: vec![7 * s, f(64), f(64), f(64)],
            decoder: vec![f(128), f(128), f(128), 4 * s],
            joint: JointConfig { pose_dim, channels: vec![f(16), f(64)] },
            lambda_s: LAMBDA_S,
            lambda_b: LAMBDA_B,
            leaky_slope: LEAKY_SLOPE,
            visibility: true,
        }
    }

    pub fn paper() -> Self {
        Self::new(Scale::Paper, 16, 64, 25)
    }

    pub fn resolution(&self) -> usize {
        self.w * self.s
    }

    pub fn input_channels(&self) -> usize {
        7 * self.s
    }

    /// Spatial size of the bottleneck (and of `J_t`).
    pub fn bottleneck(&self) -> usize {
        (self.resolution() >> self.encoder.len()).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.w == 0 || self.encoder.is_empty() || self.encoder.len() != self.decoder.len() {
            return Err(Error::invalid(format!("teacher plan {:?}/{:?} with S={}, w={}", self.encoder, self.decoder, self.s, self.w)));
        }
        if *self.decoder.last().unwrap() != 4 * self.s {
            return Err(Error::invalid(format!("teacher output must have 4S = {} channels", 4 * self.s)));
        }
        if self.resolution() % (1 << self.encoder.len()) != 0 {
            return Err(Error::invalid(format!("UV size {} not divisible by 2^{}", self.resolution(), self.encoder.len())));
        }
        if self.joint.channels.is_empty() {
            return Err(Error::invalid("joint encoder needs at least one layer"));
        }
        Ok(())
    }

    /// Kaiming-uniform weights and zero biases.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        add_joint(&mut p, "teacher.joint", &self.joint, &mut rng);
        let mut cin = self.input_channels();
        let mut skips = Vec::new();
        for (i, &c) in self.encoder.iter().enumerate() {
            add_conv(&mut p, &format!("teacher.enc{i}"), c, cin, &mut rng);
            skips.push(c);
            cin = c;
        }
        cin += self.joint.out_channels();
        for (i, &c) in self.decoder.iter().enumerate() {
            let skip = skips[skips.len() - 1 - i];
            add_conv(&mut p, &format!("teacher.dec{i}"), c, cin + skip, &mut rng);
            cin = c;
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub s: usize,
    pub w: usize,
    /// Layer channel sizes including the input: `(3+3|α|+J, …, 3S)`.
    pub plan: Vec<usize>,
    pub joint: JointConfig,
    /// Side of the feature and `J_s` maps; the output is `wS`.
    pub feature_res: usize,
    pub shininess: Vec<f64>,
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub leaky_slope: f64,
    /// Mesh visibility in the features (ablation switch).
    pub visibility: bool,
}

impl StudentConfig {
    pub fn new(scale: Scale, s: usize, w: usize, pose_dim: usize) -> Self {
        let f = |c: usize| match scale {
            Scale::Paper => c,
            Scale::Desk => scaled(c, s),
        };
        let shininess = crate::illum::DEFAULT_SHININESS.to_vec();
        let joint = JointConfig { pose_dim, channels: vec![f(16), f(64)] };
        let input = 3 + 3 * shininess.len() + joint.out_channels();
        let mut plan = vec![input];
        plan.extend([256, 256, 128, 128, 64, 64, 32].map(f));
        plan.push(3 * s);
        let feature_res = match scale {
            Scale::Paper => 128,
            Scale::Desk => w * s,
        };
        StudentConfig { s, w, plan, joint, feature_res, shininess, lambda_s: LAMBDA_S, lambda_b: LAMBDA_B, leaky_slope: LEAKY_SLOPE, visibility: true }
    }

    pub fn paper() -> Self {
        Self::new(Scale::Paper, 16, 64, 25)
    }

    pub fn resolution(&self) -> usize {
        self.w * self.s
    }

    pub fn feature_channels(&self) -> usize {
        3 + 3 * self.shininess.len()
    }

    /// Number of ×2 upsamplings between feature and output resolution.
    pub fn upsamples(&self) -> usize {
        (self.resolution() / self.feature_res.max(1)).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution();
        if self.feature_res == 0 || r % self.feature_res != 0 || !(r / self.feature_res).is_power_of_two() {
            return Err(Error::invalid(format!("feature size {} must divide UV size {r} by a power of two", self.feature_res)));
        }
        if self.plan.len() < 2 || self.plan[0] != self.feature_channels() + self.joint.out_channels() {
            return Err(Error::invalid(format!(
                "student plan {:?} must start with {} feature + {} joint channels",
                self.plan,
                self.feature_channels(),
                self.joint.out_channels()
            )));
        }
        if *self.plan.last().unwrap() != 3 * self.s {
            return Err(Error::invalid(format!("student output must have 3S = {} channels", 3 * self.s)));
        }
        if self.upsamples() > self.plan.len() - 1 {
            return Err(Error::invalid("more upsamplings than layers"));
        }
        Ok(())
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        add_joint(&mut p, "student.joint", &self.joint, &mut rng);
        for i in 0..self.plan.len() - 1 {
            add_conv(&mut p, &format!("student.conv{i}"), self.plan[i + 1], self.plan[i], &mut rng);
        }
        Ok(p)
    }
}

fn add_conv<T: Scalar>(p: &mut ParamStore<T>, name: &str, cout: usize, cin: usize, rng: &mut ChaCha8Rng) {
    p.insert(format!("{name}.weight"), kaiming_uniform(&[cout, cin, 3, 3], rng));
    p.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

fn add_joint<T: Scalar>(p: &mut ParamStore<T>, prefix: &str, cfg: &JointConfig, rng: &mut ChaCha8Rng) {
    let mut cin = cfg.pose_dim;
    for (i, &c) in cfg.channels.iter().enumerate() {
        add_conv(p, &format!("{prefix}{i}"), c, cin, rng);
        cin = c;
    }
}

/// JSON sidecar describing a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub activation: String,
    #[serde(default)]
    pub teacher: Option<TeacherConfig>,
    #[serde(default)]
    pub student: Option<StudentConfig>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelManifest {
    pub fn for_teacher(cfg: &TeacherConfig, iterations: usize, seed: u64) -> Self {
        ModelManifest { activation: format!("leaky_relu({})", cfg.leaky_slope), teacher: Some(cfg.clone()), student: None, iterations, seed }
    }

    pub fn for_student(cfg: &StudentConfig, iterations: usize, seed: u64) -> Self {
        ModelManifest { activation: format!("leaky_relu({})", cfg.leaky_slope), teacher: None, student: Some(cfg.clone()), iterations, seed }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
