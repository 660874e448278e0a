use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Pointwise, Scalar, Tape, Tensor, Var};

/// Loss term weights and the negative-texel schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mse: f64,
    /// Weight of the perceptual proxy.
    pub proxy: f64,
    pub neg: f64,
    pub eta_neg: f64,
    /// Iteration after which the negative-texel weight decays.
    pub t_s: f64,
}

impl LossWeights {
    /// `(1, 1, 0.01)` with `η = 5` and `t_s` at 20% of `steps`.
    pub fn for_steps(steps: usize) -> Self {
        LossWeights { mse: 1.0, proxy: 1.0, neg: 0.01, eta_neg: 5.0, t_s: (0.2 * steps as f64).max(1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.mse, self.proxy, self.neg, self.eta_neg].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid(format!("loss weights must be non-negative: {self:?}")));
        }
        if !(self.t_s > 0.0) {
            return Err(Error::invalid(format!("t_s = {} must be positive", self.t_s)));
        }
        Ok(())
    }
}

/// `γ = exp(−η·max((t − t_s)/t_s, 0))`.
pub fn neg_schedule(t: usize, eta: f64, t_s: f64) -> Result<f64> {
    if !(t_s > 0.0) {
        return Err(Error::invalid(format!("t_s = {t_s} must be positive")));
    }
    Ok((-eta * ((t as f64 - t_s) / t_s).max(0.0)).exp())
}

/// `γ/(N·S³) · Σ_k ‖max(−C_k, 0)‖²` for a payload of `3·N·S³` values.
pub fn loss_neg<T: Scalar>(payload: &Tensor<T>, t: usize, eta: f64, t_s: f64) -> Result<f64> {
    let gamma = neg_schedule(t, eta, t_s)?;
    let texels = payload.len() / 3;
    let sum: f64 = payload.data().iter().map(|&c| c.as_f64().min(0.0).powi(2)).sum();
    Ok(gamma * sum / texels.max(1) as f64)
}

/// `|x| = relu(x) + max(−x, 0)`.
fn abs<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let p = tape.relu(x);
    let n = tape.pointwise(x, Pointwise::MaxZeroNeg);
    tape.add(p, n)
}

fn mean_abs<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let n = tape.value(x).len().max(1);
    let a = abs(tape, x)?;
    let s = tape.sum(a);
    tape.scale(s, 1.0 / n as f64)
}

/// Forward differences along x and y for every channel: `[C,H,W] → [2C,H,W]`.
fn gradient_kernel<T: Scalar>(c: usize) -> Tensor<T> {
    let mut k = Tensor::zeros(&[2 * c, c, 3, 3]);
    let d = k.data_mut();
    for ch in 0..c {
        let base = |o: usize| (o * c + ch) * 9;
        d[base(2 * ch) + 4] = -T::one();
        d[base(2 * ch) + 5] = T::one();
        d[base(2 * ch + 1) + 4] = -T::one();
        d[base(2 * ch + 1) + 7] = T::one();
    }
    k
}

pub const PROXY_LEVELS: [f64; 3] = [1.0, 0.5, 0.25];

/// Multi-scale L1 on a difference image and on its finite-difference
/// gradients. Pyramid levels halve by bilinear resizing.
pub fn proxy_of_difference<T: Scalar>(tape: &mut Tape<T>, diff: Var) -> Result<Var> {
    let (c, _, _) = tape.value(diff).chw()?;
    let kernel = tape.constant(gradient_kernel(c));
    let mut level = diff;
    let mut terms = Vec::new();
    for (i, &w) in PROXY_LEVELS.iter().enumerate() {
        if i > 0 {
            let (_, h, wd) = tape.value(level).chw()?;
            level = tape.resize_bilinear(level, (h / 2).max(1), (wd / 2).max(1))?;
        }
        let grads = tape.conv2d(level, kernel, None, 1, 1)?;
        let a = mean_abs(tape, level)?;
        let g = mean_abs(tape, grads)?;
        terms.push((a, vec![T::lit(w)]));
        terms.push((g, vec![T::lit(w)]));
    }
    tape.weighted_sum(&terms)
}

fn difference<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::shape("image difference", tape.value(a).shape(), tape.value(b).shape()));
    }
    tape.weighted_sum(&[(a, vec![T::one()]), (b, vec![-T::one()])])
}

/// Perceptual proxy between two `[C,H,W]` images.
pub fn perceptual_proxy<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let d = difference(&mut tape, va, vb)?;
    let p = proxy_of_difference(&mut tape, d)?;
    Ok(tape.value(p).data()[0].as_f64())
}

/// Per-term handles of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub mse: Var,
    pub proxy: Var,
    pub neg: Var,
    pub gamma: f64,
}

/// Scalar values of a [`LossVars`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub mse: f64,
    pub proxy: f64,
    pub neg: f64,
    pub gamma: f64,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossValues {
        let v = |x: Var| tape.value(x).data()[0].as_f64();
        LossValues { total: v(self.total), mse: v(self.mse), proxy: v(self.proxy), neg: v(self.neg), gamma: self.gamma }
    }
}

/// Pixel mask broadcast over the channels of a `[C,H,W]` image.
pub fn mask_tensor<T: Scalar>(mask: &[bool], channels: usize) -> Tensor<T> {
    let plane = mask.len();
    Tensor::from_fn(&[channels, 1, plane], |i| if mask[i % plane] { T::one() } else { T::zero() })
}

/// `λ_MSE·MSE + λ_proxy·proxy + λ_neg·L_neg` over the masked pixels of
/// `[3,H,W]` images; `gt` is usually a constant.
pub fn loss_total<T: Scalar>(
    tape: &mut Tape<T>,
    rendered: Var,
    gt: Var,
    mask: &[bool],
    payload: Var,
    t: usize,
    weights: &LossWeights,
) -> Result<LossVars> {
    weights.validate()?;
    let shape = tape.value(rendered).shape().to_vec();
    let (c, h, w) = tape.value(rendered).chw()?;
    if mask.len() != h * w {
        return Err(Error::shape("loss mask", &[mask.len()], &[h, w]));
    }
    let m = tape.constant(mask_tensor::<T>(mask, c).reshape(&shape)?);
    let d = difference(tape, rendered, gt)?;
    let d = tape.mul(d, m)?;
    let sq = tape.mul(d, d)?;
    let sq = tape.sum(sq);
    let count = (c * mask.iter().filter(|&&b| b).count()).max(1);
    let mse = tape.scale(sq, 1.0 / count as f64)?;
    let proxy = proxy_of_difference(tape, d)?;
    let gamma = neg_schedule(t, weights.eta_neg, weights.t_s)?;
    let texels = (tape.value(payload).len() / 3).max(1);
    let negp = tape.pointwise(payload, Pointwise::MaxZeroNeg);
    let neg2 = tape.mul(negp, negp)?;
    let neg2 = tape.sum(neg2);
    let neg = tape.scale(neg2, gamma / texels as f64)?;
    let total = tape.weighted_sum(&[
        (mse, vec![T::lit(weights.mse)]),
        (proxy, vec![T::lit(weights.proxy)]),
        (neg, vec![T::lit(weights.neg)]),
    ])?;
    Ok(LossVars { total, mse, proxy, neg, gamma })
}

/// Masked mean squared error between two `[3,H,W]` images.
pub fn masked_mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mask: &[bool]) -> Result<f64> {
    let (c, h, w) = a.chw()?;
    if a.shape() != b.shape() || mask.len() != h * w {
        return Err(Error::shape("masked_mse", a.shape(), b.shape()));
    }
    let plane = h * w;
    let mut sum = 0.0;
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask[i % plane] {
            sum += (x.as_f64() - y.as_f64()).powi(2);
        }
    }
    Ok(sum / (c * mask.iter().filter(|&&b| b).count()).max(1) as f64)
}
