use std::sync::Arc;

use rayon::prelude::*;

use crate::appearance::{joint_encode, teacher_forward, teacher_input, TeacherConfig};
use crate::error::{Error, Result};
use crate::illum::{rgb_channel_weights, PointLight};
use crate::primitives::{stack_uv, VolumeTexture};
use crate::raymarch::{deep_shadow, march_recorded, Camera, ColorOperator};
use crate::rig::{Pose, UvAtlas};
use crate::synth::{FrameGeometry, OpacityConfig, ProceduralHand};
use crate::tensor::{BoundParams, Scalar, Tape, Tensor, Var};

/// Hand, atlas and primitive layout shared by every frame.
#[derive(Clone, Debug)]
pub struct Stage {
    pub hand: ProceduralHand,
    pub atlas: UvAtlas,
    pub w: usize,
    pub s: usize,
    pub opacity: OpacityConfig,
}

/// Per-light teacher inputs: stacked light directions `[3S,R,R]` and deep
/// shadow transmittance `[S,R,R]`.
#[derive(Clone, Debug)]
pub struct LightInput {
    pub light: PointLight,
    pub dirs: Tensor<f32>,
    pub vis: Tensor<f32>,
}

/// One camera of one frame: stacked view directions and the fixed-opacity
/// color operator.
#[derive(Clone)]
pub struct ViewInput {
    pub camera: Camera,
    pub dirs: Tensor<f32>,
    pub op: Arc<ColorOperator>,
}

impl Stage {
    pub fn new(hand: ProceduralHand, w: usize, s: usize) -> Result<Self> {
        let atlas = UvAtlas::build(&hand.rest, w * s)?;
        Ok(Stage { hand, atlas, w, s, opacity: OpacityConfig::default() })
    }

    pub fn resolution(&self) -> usize {
        self.w * self.s
    }

    pub fn frame(&self, pose: &Pose) -> Result<FrameGeometry> {
        FrameGeometry::build(&self.hand, &self.atlas, pose, self.w, self.s, &self.opacity)
    }

    pub fn light_input(&self, geom: &FrameGeometry, light: &PointLight) -> Result<LightInput> {
        let (dirs, _) = geom.set.direction_volume(light.pos());
        let vis = deep_shadow(&geom.set, geom.opacity.data(), light.pos(), &geom.march)?;
        Ok(LightInput { light: *light, dirs: stack_uv(&dirs)?, vis: stack_uv(&vis)? })
    }

    pub fn light_inputs(&self, geom: &FrameGeometry, lights: &[PointLight]) -> Result<Vec<LightInput>> {
        lights.par_iter().map(|l| self.light_input(geom, l)).collect()
    }

    pub fn view_input(&self, geom: &FrameGeometry, camera: &Camera) -> Result<ViewInput> {
        let (dirs, _) = geom.set.direction_volume(camera.position());
        let color = Tensor::zeros(&[geom.set.len(), 3, self.s, self.s, self.s]);
        let payload = VolumeTexture::new(color, geom.opacity.clone())?;
        let (_, rec) = march_recorded(&geom.set, &payload, camera, &geom.march)?;
        Ok(ViewInput { camera: camera.clone(), dirs: stack_uv(&dirs)?, op: Arc::new(rec.color_operator()) })
    }
}

/// Renders a stacked color map `[3S,wS,wS]` to a `[3,H,W]` image through a
/// fixed-opacity march.
pub fn render_map<T: Scalar>(tape: &mut Tape<T>, op: &Arc<ColorOperator>, map: Var) -> Result<Var> {
    if tape.value(map).shape() != op.map_shape {
        return Err(Error::shape("render map", tape.value(map).shape(), &op.map_shape));
    }
    let value = Tensor::new(&[3, op.height, op.width], op.apply(tape.value(map).data()))?;
    let op = Arc::clone(op);
    Ok(tape.custom(
        &[map],
        value,
        Box::new(move |ins, _, g| vec![Some(Tensor::new(ins[0].shape(), op.apply_transpose(g.data())).expect("operator shape"))]),
    ))
}

/// Renders a stacked color map without recording.
pub fn render_image<T: Scalar>(op: &ColorOperator, map: &Tensor<T>) -> Result<Tensor<T>> {
    if map.shape() != op.map_shape {
        return Err(Error::shape("render map", map.shape(), &op.map_shape));
    }
    Tensor::new(&[3, op.height, op.width], op.apply(map.data()))
}

/// Per-light teacher payloads `C^i` for one view, before intensity weighting.
pub fn teacher_olat<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &TeacherConfig,
    params: &BoundParams,
    pose: &Pose,
    view: &Tensor<f32>,
    lights: &[LightInput],
) -> Result<Vec<Var>> {
    let joint = joint_encode(tape, params, "teacher.joint", &cfg.joint, &pose.theta, cfg.bottleneck(), cfg.leaky_slope)?;
    let fv = tape.constant(view.cast());
    lights
        .iter()
        .map(|l| {
            let fl = tape.constant(l.dirs.cast());
            let vis = tape.constant(l.vis.cast());
            let input = teacher_input(tape, cfg, fv, fl, vis)?;
            teacher_forward(tape, cfg, params, input, joint)
        })
        .collect()
}

/// `Σ_i b_i ⊙ C^i` on the tape.
pub fn aggregate<T: Scalar>(tape: &mut Tape<T>, s: usize, payloads: &[Var], intensities: &[[f64; 3]]) -> Result<Var> {
    if payloads.len() != intensities.len() || payloads.is_empty() {
        return Err(Error::shape("aggregate", &[payloads.len()], &[intensities.len()]));
    }
    let terms: Vec<(Var, Vec<T>)> = payloads.iter().zip(intensities).map(|(&c, &b)| (c, rgb_channel_weights(b, s))).collect();
    tape.weighted_sum(&terms)
}

/// Teacher color map for a set of lights.
pub fn teacher_payload<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &TeacherConfig,
    params: &BoundParams,
    pose: &Pose,
    view: &Tensor<f32>,
    lights: &[LightInput],
) -> Result<Var> {
    let olat = teacher_olat(tape, cfg, params, pose, view, lights)?;
    let b: Vec<[f64; 3]> = lights.iter().map(|l| l.light.intensity).collect();
    aggregate(tape, cfg.s, &olat, &b)
}

/// Loss mask: covered in the ground truth and nearly opaque in the march.
pub fn loss_mask(gt_alpha: &[f32], op: &ColorOperator) -> Vec<bool> {
    gt_alpha.iter().zip(&op.alpha).map(|(&g, &a)| g > 0.5 && a >= 0.9).collect()
}
