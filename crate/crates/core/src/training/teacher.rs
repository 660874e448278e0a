use rayon::prelude::*;

use super::losses::{loss_total, masked_mse};
use super::stage::{loss_mask, render_image, render_map, teacher_payload, LightInput, Stage, ViewInput};
use super::train::{run, LogRow, Output, TrainConfig, TrainState};
use crate::appearance::{ModelManifest, TeacherConfig};
use crate::error::{Error, Result};
use crate::rig::Pose;
use crate::synth::CaptureDataset;
use crate::tensor::{ParamStore, Tape, Tensor};

/// One captured frame with its per-light and per-camera inputs.
pub struct TeacherFrame {
    pub frame: usize,
    pub pose: Pose,
    pub lights: Vec<LightInput>,
    pub views: Vec<ViewInput>,
}

/// One supervised image.
pub struct TeacherSample {
    pub frame: usize,
    pub view: usize,
    pub gt: Tensor<f32>,
    pub mask: Vec<bool>,
}

/// Prepared inputs for a set of captured frames.
pub struct TeacherData {
    pub frames: Vec<TeacherFrame>,
    pub samples: Vec<TeacherSample>,
}

impl TeacherData {
    /// Skins, places primitives, computes deep shadows and color operators
    /// for `frames` of `capture`, over the listed cameras (all when empty).
    pub fn prepare(stage: &Stage, capture: &CaptureDataset, frames: &[usize], cameras: &[usize]) -> Result<Self> {
        let cams: Vec<usize> = if cameras.is_empty() { (0..capture.cameras.len()).collect() } else { cameras.to_vec() };
        let mut out = TeacherData { frames: Vec::new(), samples: Vec::new() };
        for &f in frames {
            if f >= capture.frames.len() {
                return Err(Error::invalid(format!("frame {f} not in the capture")));
            }
            let pose = capture.poses[f].clone();
            let geom = stage.frame(&pose)?;
            let lights = stage.light_inputs(&geom, &capture.lights_of(f))?;
            let views: Vec<ViewInput> = cams
                .par_iter()
                .map(|&c| stage.view_input(&geom, &capture.cameras[c]))
                .collect::<Result<_>>()?;
            let fi = out.frames.len();
            for (vi, &c) in cams.iter().enumerate() {
                let Some(img) = &capture.images[f][c] else { continue };
                let (_, h, w) = img.chw()?;
                let plane = h * w;
                let gt = Tensor::new(&[3, h, w], img.data()[..3 * plane].to_vec())?;
                let mask = loss_mask(img.channel(3), &views[vi].op);
                out.samples.push(TeacherSample { frame: fi, view: vi, gt, mask });
            }
            out.frames.push(TeacherFrame { frame: f, pose, lights, views });
        }
        Ok(out)
    }

    /// Rendered teacher image for a sample.
    pub fn render(&self, cfg: &TeacherConfig, params: &ParamStore<f32>, sample: usize) -> Result<Tensor<f32>> {
        let s = &self.samples[sample];
        let fr = &self.frames[s.frame];
        let view = &fr.views[s.view];
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let c = teacher_payload(&mut tape, cfg, &bound, &fr.pose, &view.dirs, &fr.lights)?;
        render_image(&view.op, tape.value(c))
    }

    /// Mean masked MSE over all samples.
    pub fn mse(&self, cfg: &TeacherConfig, params: &ParamStore<f32>) -> Result<f64> {
        let errs: Vec<f64> = (0..self.samples.len())
            .map(|i| masked_mse(&self.render(cfg, params, i)?, &self.samples[i].gt, &self.samples[i].mask))
            .collect::<Result<_>>()?;
        Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
    }

    fn describe(&self, i: usize) -> String {
        let s = &self.samples[i];
        let fr = &self.frames[s.frame];
        let lights: Vec<[f64; 3]> = fr.lights.iter().map(|l| l.light.position).collect();
        format!("frame {} view {} theta {:?} lights {:?}", fr.frame, s.view, fr.pose.theta, lights)
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRow>,
}

/// Trains (or resumes) the teacher on partially lit frames: per light the
/// U-Net payload, aggregation by intensity, fixed-opacity render and
/// `loss_total` against the capture.
pub fn train_teacher(
    cfg: &TeacherConfig,
    data: &TeacherData,
    train: &TrainConfig,
    resume: Option<TrainState>,
    out: Option<&Output>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let state = match resume {
        Some(s) => s,
        None => TrainState::fresh(cfg.init(train.seed)?),
    };
    if let Some(o) = out {
        std::fs::create_dir_all(&o.dir)?;
        ModelManifest::for_teacher(cfg, train.steps, train.seed).save(&o.dir.join(format!("{}.json", o.stem)))?;
    }
    let (state, log) = run(
        state,
        data.samples.len(),
        train,
        out,
        |i| data.describe(i),
        |tape, bound, i, t| {
            let s = &data.samples[i];
            let fr = &data.frames[s.frame];
            let view = &fr.views[s.view];
            let c = teacher_payload(tape, cfg, bound, &fr.pose, &view.dirs, &fr.lights)?;
            let img = render_map(tape, &view.op, c)?;
            let gt = tape.constant(s.gt.clone());
            loss_total(tape, img, gt, &s.mask, c, t, &train.weights)
        },
    )?;
    Ok(TrainOutcome { state, log })
}
