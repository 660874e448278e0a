use std::ops::Range;

use rayon::prelude::*;

use super::field::{walk_segments, Field, MarchConfig, Taps};
use super::Camera;
use crate::error::{Error, Result};
use crate::primitives::{PrimitiveSet, VolumeTexture};
use crate::tensor::{Scalar, Tensor};

struct Contrib {
    taps: Taps,
    /// Clipped segment length inside this primitive.
    len: f64,
    /// Optical depth contributed over `len`.
    tau: f64,
    color: [f64; 3],
}

struct Sample {
    transmittance: f64,
    alpha: f64,
    tau: f64,
    color: [f64; 3],
    contribs: Range<usize>,
}

#[derive(Default)]
struct PixelRecord {
    samples: Vec<Sample>,
    contribs: Vec<Contrib>,
    final_t: f64,
}

/// Forward samples kept for the adjoint pass.
pub struct MarchRecord {
    width: usize,
    height: usize,
    s: usize,
    n: usize,
    density: f64,
    pixels: Vec<PixelRecord>,
}

fn march_pixel(field: &Field, camera: &Camera, cfg: &MarchConfig, x: usize, y: usize, keep: bool) -> ([f64; 4], PixelRecord) {
    let (o, d) = camera.ray(x, y);
    let iv = field.intervals(o, d, f64::INFINITY);
    let t_end = iv.iter().map(|v| v.1).fold(0.0, f64::max);
    let mut rec = PixelRecord::default();
    let mut t_acc = 1.0;
    let mut rgb = [0.0; 3];
    let mut local: Vec<Contrib> = Vec::new();
    walk_segments(&iv, cfg.step, t_end, |pieces| {
        local.clear();
        let mut tau = 0.0;
        let mut weighted = [0.0; 3];
        for pc in pieces {
            if let Some(taps) = field.taps_clamped(pc.k as usize, o + d * pc.mid()) {
                let tk = cfg.density * field.opacity_at(&taps) * pc.len();
                let ck = field.color_at(&taps);
                tau += tk;
                for c in 0..3 {
                    weighted[c] += tk * ck[c];
                }
                local.push(Contrib { taps, len: pc.len(), tau: tk, color: ck });
            }
        }
        if tau <= 0.0 {
            return true;
        }
        let alpha = 1.0 - (-tau).exp();
        let mean = weighted.map(|w| w / tau);
        for c in 0..3 {
            rgb[c] += t_acc * alpha * mean[c];
        }
        if keep {
            let start = rec.contribs.len();
            rec.contribs.append(&mut local);
            rec.samples.push(Sample { transmittance: t_acc, alpha, tau, color: mean, contribs: start..rec.contribs.len() });
        }
        t_acc *= 1.0 - alpha;
        t_acc >= cfg.cutoff
    });
    rec.final_t = t_acc;
    ([rgb[0], rgb[1], rgb[2], 1.0 - t_acc], rec)
}

fn run(set: &PrimitiveSet, payload: &VolumeTexture, camera: &Camera, cfg: &MarchConfig, keep: bool) -> Result<(Tensor<f32>, Vec<PixelRecord>)> {
    cfg.validate()?;
    camera.validate()?;
    if payload.count() != set.len() || payload.resolution() != set.s {
        return Err(Error::shape("march payload", payload.color.shape(), &[set.len(), 3, set.s, set.s, set.s]));
    }
    let field = Field::new(set, payload.opacity.data(), Some(payload.color.data()))?;
    let (w, h) = (camera.width, camera.height);
    let results: Vec<([f64; 4], PixelRecord)> =
        (0..w * h).into_par_iter().map(|i| march_pixel(&field, camera, cfg, i % w, i / w, keep)).collect();
    let mut img = vec![0.0f32; 4 * w * h];
    let mut recs = Vec::with_capacity(if keep { w * h } else { 0 });
    for (i, (px, rec)) in results.into_iter().enumerate() {
        for c in 0..4 {
            img[c * w * h + i] = px[c] as f32;
        }
        if keep {
            recs.push(rec);
        }
    }
    Ok((Tensor::new(&[4, h, w], img)?, recs))
}

/// Front-to-back emission-absorption march; returns `[4, H, W]` (RGB, alpha).
pub fn march(set: &PrimitiveSet, payload: &VolumeTexture, camera: &Camera, cfg: &MarchConfig) -> Result<Tensor<f32>> {
    Ok(run(set, payload, camera, cfg, false)?.0)
}

/// [`march`] that also keeps every sample for [`march_backward`].
pub fn march_recorded(set: &PrimitiveSet, payload: &VolumeTexture, camera: &Camera, cfg: &MarchConfig) -> Result<(Tensor<f32>, MarchRecord)> {
    let (img, pixels) = run(set, payload, camera, cfg, true)?;
    let rec = MarchRecord { width: camera.width, height: camera.height, s: set.s, n: set.len(), density: cfg.density, pixels };
    Ok((img, rec))
}

/// Adjoint of the recorded march: image gradient `[4, H, W]` (or `[3, H, W]`
/// without alpha) to payload gradients `([N,3,S,S,S], [N,1,S,S,S])`.
pub fn march_backward(record: Option<&MarchRecord>, grad: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let rec = record.ok_or(Error::MissingRecord("march_backward needs march_recorded output"))?;
    let (c, h, w) = grad.chw()?;
    if (c != 3 && c != 4) || h != rec.height || w != rec.width {
        return Err(Error::shape("march_backward", grad.shape(), &[4, rec.height, rec.width]));
    }
    let v = rec.s * rec.s * rec.s;
    let mut gc = vec![0.0; rec.n * 3 * v];
    let mut go = vec![0.0; rec.n * v];
    let plane = h * w;
    for (p, px) in rec.pixels.iter().enumerate() {
        let g = [grad.data()[p], grad.data()[plane + p], grad.data()[2 * plane + p]];
        let ga = if c == 4 { grad.data()[3 * plane + p] } else { 0.0 };
        let mut suffix = [0.0; 3];
        for s in px.samples.iter().rev() {
            let wgt = s.transmittance * s.alpha;
            let t_next = s.transmittance * (1.0 - s.alpha);
            // d pixel / d tau_k splits into a part shared by all primitives
            // of the sample and a color-mixing part.
            let mut d_tau_shared = ga * px.final_t;
            for ch in 0..3 {
                d_tau_shared += g[ch] * (t_next * s.color[ch] - suffix[ch]);
            }
            for con in &px.contribs[s.contribs.clone()] {
                let k = con.taps.k as usize;
                let share = con.tau / s.tau;
                let mut d_tau = d_tau_shared;
                for ch in 0..3 {
                    d_tau += g[ch] * wgt * (con.color[ch] - s.color[ch]) / s.tau;
                    let gcol = g[ch] * wgt * share;
                    for i in 0..8 {
                        gc[(k * 3 + ch) * v + con.taps.voxel[i] as usize] += gcol * con.taps.weight[i];
                    }
                }
                let d_op = d_tau * rec.density * con.len;
                for i in 0..8 {
                    go[k * v + con.taps.voxel[i] as usize] += d_op * con.taps.weight[i];
                }
            }
            for ch in 0..3 {
                suffix[ch] += wgt * s.color[ch];
            }
        }
    }
    let s = rec.s;
    Ok((Tensor::new(&[rec.n, 3, s, s, s], gc)?, Tensor::new(&[rec.n, 1, s, s, s], go)?))
}

/// The march as a linear map from a UV-stacked color map `[3S, wS, wS]` to an
/// RGB image, valid for the opacity it was recorded with.
pub struct ColorOperator {
    pub width: usize,
    pub height: usize,
    /// Stacked-map size of one color channel (`S·(wS)²`).
    pub channel_stride: usize,
    pub map_shape: [usize; 3],
    /// Per pixel: `(channel-0 stacked index, weight)`.
    pub entries: Vec<Vec<(u32, f32)>>,
    /// Alpha (`1 − T`) per pixel.
    pub alpha: Vec<f32>,
}

impl MarchRecord {
    pub fn color_operator(&self) -> ColorOperator {
        let (s, w) = (self.s, (self.n as f64).sqrt().round() as usize);
        let side = w * s;
        let entries = self
            .pixels
            .par_iter()
            .map(|px| {
                let mut out: Vec<(u32, f32)> = Vec::new();
                for smp in &px.samples {
                    let wgt = smp.transmittance * smp.alpha / smp.tau;
                    for con in &px.contribs[smp.contribs.clone()] {
                        let k = con.taps.k as usize;
                        let (r, q) = (k / w, k % w);
                        for i in 0..8 {
                            let j = con.taps.voxel[i] as usize;
                            let (x, y, z) = (j % s, j / s % s, j / (s * s));
                            let idx = (z * side + r * s + y) * side + q * s + x;
                            out.push((idx as u32, (wgt * con.tau * con.taps.weight[i]) as f32));
                        }
                    }
                }
                out.sort_by_key(|e| e.0);
                out.dedup_by(|a, b| {
                    if a.0 == b.0 {
                        b.1 += a.1;
                        true
                    } else {
                        false
                    }
                });
                out.retain(|e| e.1 != 0.0);
                out
            })
            .collect();
        ColorOperator {
            width: self.width,
            height: self.height,
            channel_stride: s * side * side,
            map_shape: [3 * s, side, side],
            entries,
            alpha: self.pixels.iter().map(|p| (1.0 - p.final_t) as f32).collect(),
        }
    }
}

impl ColorOperator {
    pub fn apply<T: Scalar>(&self, map: &[T]) -> Vec<T> {
        let plane = self.width * self.height;
        let mut out = vec![T::zero(); 3 * plane];
        for (p, e) in self.entries.iter().enumerate() {
            for ch in 0..3 {
                let off = ch * self.channel_stride;
                out[ch * plane + p] = e.iter().map(|&(i, w)| T::lit(w as f64) * map[off + i as usize]).sum();
            }
        }
        out
    }

    /// Transpose: image gradient `[3, H, W]` to stacked-map gradient.
    pub fn apply_transpose<T: Scalar>(&self, grad: &[T]) -> Vec<T> {
        let plane = self.width * self.height;
        let mut out = vec![T::zero(); self.map_shape.iter().product()];
        for (p, e) in self.entries.iter().enumerate() {
            for ch in 0..3 {
                let g = grad[ch * plane + p];
                if g == T::zero() {
                    continue;
                }
                let off = ch * self.channel_stride;
                for &(i, w) in e {
                    out[off + i as usize] += g * T::lit(w as f64);
                }
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }
}
