//! The `primlight` command line: teacher training, student distillation,
//! rendering, feature maps, timing and the websocket render service.

pub mod commands;
pub mod config;
pub mod exit;
pub mod scene;
pub mod serve;

use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};

use primlight::appearance::Scale;

use crate::commands::*;
use crate::config::{ModelDir, RunConfig};
use crate::exit::ConfigError;
use crate::scene::Orbit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Parser, Debug)]
#[command(name = "primlight", version, about = "Relightable articulated-hand renderer")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Size preset fixing primitive count, voxel resolution and envmap size.
    #[arg(long, value_enum, default_value = "desk", global = true)]
    pub scale: ScaleArg,
    /// Required to run anything at paper scale.
    #[arg(long, global = true)]
    pub i_have_a_gpu_week: bool,
    #[arg(long, env = "PRIMLIGHT_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Worker threads; all cores when unset.
    #[arg(long, env = "PRIMLIGHT_THREADS", global = true)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "model", global = true)]
    pub model_dir: PathBuf,
    /// Exposure in stops for 8-bit outputs.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true, global = true)]
    pub ev: f64,
    /// Override primitives per UV side.
    #[arg(long, global = true)]
    pub w: Option<usize>,
    /// Override voxels per primitive side.
    #[arg(long, global = true)]
    pub s: Option<usize>,
    #[arg(long, global = true)]
    pub hand_seed: Option<u64>,
    #[arg(long, global = true)]
    pub memory_ceiling_gib: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ViewArgs {
    /// rest, finger-over-palm, random[:seed] or a pose-stream file[:index].
    #[arg(long, default_value = "rest")]
    pub pose: String,
    /// Camera azimuth around the hand in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub azimuth: f64,
    #[arg(long, default_value_t = 8.5, allow_hyphen_values = true)]
    pub elevation: f64,
    #[arg(long, default_value_t = 0.4)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.6)]
    pub fov: f64,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub px: usize,
}

impl ViewArgs {
    pub fn orbit(&self) -> Orbit {
        Orbit { azimuth: self.azimuth, elevation: self.elevation, radius: self.radius, fov_y: self.fov, width: self.px, height: self.px }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Olat,
    Point,
    Directional,
    Envmap,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a light-stage capture and train the OLAT teacher.
    TrainTeacher {
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 3)]
        cameras: usize,
        #[arg(long, default_value_t = 32)]
        px: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Checkpoint interval in steps; 0 writes only the final one.
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[arg(long)]
        resume: bool,
        /// Also write the simulated capture under the model directory.
        #[arg(long)]
        write_capture: bool,
    },
    /// Distill the envmap student from the teacher.
    DistillStudent {
        #[arg(long, default_value_t = 36)]
        poses: usize,
        #[arg(long, default_value_t = 64)]
        train_envs: usize,
        #[arg(long, default_value_t = 8)]
        test_envs: usize,
        #[arg(long, default_value_t = 4)]
        envs_per_view: usize,
        /// Summed radiance of each synthetic envmap.
        #[arg(long, default_value_t = 5.0)]
        env_total: f64,
        #[arg(long, default_value_t = 3)]
        cameras: usize,
        #[arg(long, default_value_t = 32)]
        px: usize,
        #[arg(long, default_value_t = 1500)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[arg(long)]
        resume: bool,
        /// Also write the distillation set under the model directory.
        #[arg(long)]
        write_set: bool,
    },
    /// Render one image (PNG + PFM).
    Render {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Rig light index for olat mode.
        #[arg(long, default_value_t = 0)]
        light: usize,
        /// Light position for point mode.
        #[arg(long, value_parser = scene::parse_vec3, allow_hyphen_values = true)]
        position: Option<[f64; 3]>,
        /// Direction toward the light for directional mode.
        #[arg(long, value_parser = scene::parse_vec3, allow_hyphen_values = true)]
        direction: Option<[f64; 3]>,
        /// .hdr/.pfm file or sky[:seed] for envmap mode.
        #[arg(long, default_value = "sky")]
        envmap: String,
        #[arg(long, default_value_t = 5.0)]
        env_total: f64,
        #[arg(long, default_value_t = 1.0)]
        intensity: f64,
        /// Render the envmap through the teacher and check it against the
        /// sum of one-light renders.
        #[arg(long)]
        verify_linearity: bool,
        #[command(flatten)]
        view: ViewArgs,
        /// Output path without extension.
        #[arg(long, short, default_value = "render")]
        out: PathBuf,
    },
    /// Texel-space illumination feature maps with and without visibility.
    Features {
        #[arg(long, default_value = "sky")]
        envmap: String,
        #[arg(long, default_value_t = 5.0)]
        env_total: f64,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        shininess: Vec<f64>,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long, short, default_value = "features")]
        out: PathBuf,
    },
    /// Per-stage timing of the student render path.
    Bench {
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value = "bench.csv")]
        csv: PathBuf,
        #[arg(long, default_value = "sky")]
        envmap: String,
        #[arg(long, default_value_t = 5.0)]
        env_total: f64,
        /// Time untrained weights instead of the distilled student.
        #[arg(long)]
        random_weights: bool,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Websocket render service for the interactive viewer.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value_t = 5.0)]
        env_total: f64,
        #[command(flatten)]
        view: ViewArgs,
    },
}

impl Global {
    /// Preset for `--scale` with command-line overrides.
    pub fn run_config(&self) -> anyhow::Result<RunConfig> {
        let scale = match self.scale {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        };
        let mut run = RunConfig::preset(scale);
        run.w = self.w.unwrap_or(run.w);
        run.s = self.s.unwrap_or(run.s);
        run.hand_seed = self.hand_seed.unwrap_or(run.hand_seed);
        if let Some(g) = self.memory_ceiling_gib {
            if !(g > 0.0) {
                bail!(ConfigError(format!("memory ceiling {g} GiB must be positive")));
            }
            run.memory_ceiling = (g * (1u64 << 30) as f64) as u64;
        }
        run.validate()?;
        Ok(run)
    }
}

/// Parses nothing; runs an already-parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            bail!(ConfigError("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    if g.scale == ScaleArg::Paper {
        println!("paper scale: {}", RunConfig::preset(Scale::Paper).summary());
        if !g.i_have_a_gpu_week {
            bail!(ConfigError("paper scale needs days of GPU time; pass --i-have-a-gpu-week to run it anyway".into()));
        }
    }
    let run = g.run_config()?;
    let dir = ModelDir(g.model_dir.clone());
    match &cli.command {
        Command::TrainTeacher { frames, cameras, px, steps, lr, checkpoint_every, resume, write_capture } => train_teacher_cmd(
            &run,
            &dir,
            g.seed,
            &TeacherArgs {
                frames: *frames,
                cameras: *cameras,
                px: *px,
                steps: *steps,
                lr: *lr,
                checkpoint_every: *checkpoint_every,
                resume: *resume,
                write_capture: *write_capture,
            },
        ),
        Command::DistillStudent {
            poses,
            train_envs,
            test_envs,
            envs_per_view,
            env_total,
            cameras,
            px,
            steps,
            lr,
            checkpoint_every,
            resume,
            write_set,
        } => distill_student_cmd(
            &dir,
            g.seed,
            &StudentArgs {
                poses: *poses,
                train_envs: *train_envs,
                test_envs: *test_envs,
                envs_per_view: *envs_per_view,
                env_total: *env_total,
                cameras: *cameras,
                px: *px,
                steps: *steps,
                lr: *lr,
                checkpoint_every: *checkpoint_every,
                resume: *resume,
                write_set: *write_set,
            },
        ),
        Command::Render { mode, light, position, direction, envmap, env_total, intensity, verify_linearity, view, out } => {
            let mode = match mode {
                Mode::Olat => RenderMode::Olat { index: *light },
                Mode::Point => RenderMode::Point { position: position.ok_or_else(|| ConfigError("point mode needs --position x,y,z".into()))? },
                Mode::Directional => {
                    RenderMode::Directional { direction: direction.ok_or_else(|| ConfigError("directional mode needs --direction x,y,z".into()))? }
                }
                Mode::Envmap => RenderMode::Envmap { spec: envmap.clone() },
            };
            if *verify_linearity && !matches!(mode, RenderMode::Envmap { .. }) {
                bail!(ConfigError("--verify-linearity applies to envmap mode".into()));
            }
            if !(intensity.is_finite() && *intensity >= 0.0) {
                bail!(ConfigError(format!("intensity {intensity} must be finite and non-negative")));
            }
            let args = RenderArgs {
                mode,
                intensity: *intensity,
                verify_linearity: *verify_linearity,
                pose: view.pose.clone(),
                orbit: view.orbit(),
                out: out.clone(),
                env_total: *env_total,
            };
            render_cmd(&dir, g.ev, &args)
        }
        Command::Features { envmap, env_total, shininess, view, out } => features_cmd(
            &run,
            g.ev,
            &FeatureArgs {
                envmap: envmap.clone(),
                env_total: *env_total,
                pose: view.pose.clone(),
                orbit: view.orbit(),
                shininess: shininess.clone(),
                out: out.clone(),
            },
        ),
        Command::Bench { runs, warmup, csv, envmap, env_total, random_weights, view } => bench_cmd(
            &dir,
            &run,
            g.seed,
            &BenchArgs {
                runs: *runs,
                warmup: *warmup,
                csv: csv.clone(),
                pose: view.pose.clone(),
                orbit: view.orbit(),
                envmap: envmap.clone(),
                env_total: *env_total,
                random_weights: *random_weights,
            },
        ),
        Command::Serve { host, port, env_total, view } => {
            let models = Arc::new(Models::load(&dir)?);
            if models.student.is_none() {
                log::warn!("no student checkpoint; only point and directional lights are available");
            }
            let orbit = view.orbit();
            serve::Session::new(models.clone(), g.ev, *env_total, orbit.clone())?;
            let listener = TcpListener::bind((host.as_str(), *port)).map_err(|e| ConfigError(format!("cannot listen on {host}:{port}: {e}")))?;
            println!("listening on ws://{}", listener.local_addr()?);
            serve::serve(listener, models, g.ev, *env_total, orbit)
        }
    }
}
