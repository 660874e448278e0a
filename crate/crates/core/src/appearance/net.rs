use super::config::{JointConfig, StudentConfig, TeacherConfig};
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Pointwise, Scalar, Tape, Tensor, Var};

fn conv<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    tape.conv2d(x, w, Some(b), 1, 1)
}

fn conv_act<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, name: &str, x: Var, slope: f64) -> Result<Var> {
    let y = conv(tape, p, name, x)?;
    Ok(tape.pointwise(y, Pointwise::LeakyRelu(slope)))
}

/// Tiles `theta` to `[P,res,res]` and applies conv, act, conv (linear output).
pub fn joint_encode<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    prefix: &str,
    cfg: &JointConfig,
    theta: &[f64],
    res: usize,
    slope: f64,
) -> Result<Var> {
    if theta.len() != cfg.pose_dim {
        return Err(Error::invalid(format!("pose has {} components, encoder expects {}", theta.len(), cfg.pose_dim)));
    }
    let plane = res * res;
    let tiled = Tensor::from_fn(&[cfg.pose_dim, res, res], |i| T::lit(theta[i / plane]));
    let mut x = tape.constant(tiled);
    let last = cfg.channels.len() - 1;
    for i in 0..cfg.channels.len() {
        let name = format!("{prefix}{i}");
        x = if i == last { conv(tape, params, &name, x)? } else { conv_act(tape, params, &name, x, slope)? };
    }
    Ok(x)
}

/// Stacks `[F_v; F_l; V]` into the `7S`-channel teacher input.
pub fn teacher_input<T: Scalar>(tape: &mut Tape<T>, cfg: &TeacherConfig, fv: Var, fl: Var, vis: Var) -> Result<Var> {
    let r = cfg.resolution();
    for (v, c, what) in [(fv, 3 * cfg.s, "F_v"), (fl, 3 * cfg.s, "F_l"), (vis, cfg.s, "V")] {
        if tape.value(v).shape() != [c, r, r] {
            return Err(Error::shape(what, &[c, r, r], tape.value(v).shape()));
        }
    }
    let vis = if cfg.visibility { vis } else { tape.constant(Tensor::zeros(&[cfg.s, r, r])) };
    tape.concat(&[fv, fl, vis])
}

/// `sigmoid(Sh) ⊙ (relu(λ_s T) + λ_b)` with the `S` shadow channels broadcast over RGB.
pub fn teacher_head<T: Scalar>(tape: &mut Tape<T>, cfg: &TeacherConfig, raw: Var) -> Result<Var> {
    let s = cfg.s;
    let t = tape.slice_channels(raw, 0, 3 * s)?;
    let sh = tape.slice_channels(raw, 3 * s, s)?;
    let base = tape.pointwise(t, Pointwise::ScaleAdd { scale: cfg.lambda_s, bias: cfg.lambda_b });
    let sig = tape.sigmoid(sh);
    let sig3 = tape.concat(&[sig, sig, sig])?;
    tape.mul(sig3, base)
}

/// `relu(λ_s T) + λ_b`.
pub fn student_head<T: Scalar>(tape: &mut Tape<T>, cfg: &StudentConfig, raw: Var) -> Var {
    tape.pointwise(raw, Pointwise::ScaleAdd { scale: cfg.lambda_s, bias: cfg.lambda_b })
}

/// OLAT U-Net: `[7S,wS,wS]` input and `J_t` at the bottleneck to the `[3S,wS,wS]` color map.
pub fn teacher_forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &TeacherConfig,
    params: &BoundParams,
    input: Var,
    joint: Var,
) -> Result<Var> {
    let r = cfg.resolution();
    let shape = tape.value(input).shape().to_vec();
    if shape != [cfg.input_channels(), r, r] {
        return Err(Error::shape("teacher input", &[cfg.input_channels(), r, r], &shape));
    }
    let slope = cfg.leaky_slope;
    let mut skips = Vec::with_capacity(cfg.encoder.len());
    let mut x = input;
    for i in 0..cfg.encoder.len() {
        let y = conv_act(tape, params, &format!("teacher.enc{i}"), x, slope)?;
        let (h, w) = dims(tape, y);
        skips.push(y);
        x = tape.resize_bilinear(y, (h / 2).max(1), (w / 2).max(1))?;
    }
    let (bh, bw) = dims(tape, x);
    let (jh, jw) = dims(tape, joint);
    if (jh, jw) != (bh, bw) {
        return Err(Error::shape("joint code", &[bh, bw], &[jh, jw]));
    }
    x = tape.concat(&[x, joint])?;
    let last = cfg.decoder.len() - 1;
    for i in 0..cfg.decoder.len() {
        let skip = skips[skips.len() - 1 - i];
        let (h, w) = dims(tape, skip);
        let up = tape.resize_bilinear(x, h, w)?;
        let cat = tape.concat(&[up, skip])?;
        let name = format!("teacher.dec{i}");
        x = if i == last { conv(tape, params, &name, cat)? } else { conv_act(tape, params, &name, cat, slope)? };
    }
    teacher_head(tape, cfg, x)
}

/// Envmap student: `[3+3|α|,F,F]` features and `J_s` to the `[3S,wS,wS]` color map.
pub fn student_forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &StudentConfig,
    params: &BoundParams,
    features: Var,
    joint: Var,
) -> Result<Var> {
    let f = cfg.feature_res;
    let fc = cfg.feature_channels();
    if tape.value(features).shape() != [fc, f, f] {
        return Err(Error::shape("student features", &[fc, f, f], tape.value(features).shape()));
    }
    let mut x = tape.concat(&[features, joint])?;
    let layers = cfg.plan.len() - 1;
    let first_up = layers - cfg.upsamples();
    for i in 0..layers {
        if i >= first_up {
            let (h, w) = dims(tape, x);
            x = tape.resize_bilinear(x, 2 * h, 2 * w)?;
        }
        let name = format!("student.conv{i}");
        x = if i + 1 == layers { conv(tape, params, &name, x)? } else { conv_act(tape, params, &name, x, cfg.leaky_slope)? };
    }
    Ok(student_head(tape, cfg, x))
}

fn dims<T: Scalar>(tape: &Tape<T>, v: Var) -> (usize, usize) {
    let s = tape.value(v).shape();
    (s[1], s[2])
}
