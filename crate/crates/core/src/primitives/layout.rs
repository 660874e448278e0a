use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-primitive color (3 channels) and opacity (1 channel) voxel payloads,
/// each shaped `[N, c, S, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeTexture {
    pub color: Tensor<f32>,
    pub opacity: Tensor<f32>,
}

impl VolumeTexture {
    pub fn new(color: Tensor<f32>, opacity: Tensor<f32>) -> Result<Self> {
        let cs = color.shape();
        let os = opacity.shape();
        if cs.len() != 5 || cs[1] != 3 || os.len() != 5 || os[1] != 1 || cs[0] != os[0] || cs[2..] != os[2..] {
            return Err(Error::shape("volume texture", cs, os));
        }
        if opacity.data().iter().any(|&o| !(0.0..=1.0).contains(&o)) {
            return Err(Error::invalid("opacity outside [0, 1]"));
        }
        Ok(VolumeTexture { color, opacity })
    }

    pub fn count(&self) -> usize {
        self.color.shape()[0]
    }

    pub fn resolution(&self) -> usize {
        self.color.shape()[2]
    }
}

fn grid_width(n: usize) -> Result<usize> {
    let w = (n as f64).sqrt().round() as usize;
    if w * w != n {
        return Err(Error::invalid(format!("primitive count {n} is not a square")));
    }
    Ok(w)
}

/// `[N, c, S, S, S]` → `[c·S, w·S, w·S]`: primitive `(r, q)` fills the tile at
/// `(r·S, q·S)` and depth `z` of channel `ch` lands in map channel `ch·S + z`.
pub fn stack_uv<T: Scalar>(volume: &Tensor<T>) -> Result<Tensor<T>> {
    let sh = volume.shape();
    if sh.len() != 5 || sh[2] != sh[3] || sh[3] != sh[4] {
        return Err(Error::shape("stack_uv", sh, &[0, 0, 0, 0, 0]));
    }
    let (n, c, s) = (sh[0], sh[1], sh[2]);
    let w = grid_width(n)?;
    let side = w * s;
    let mut out = vec![T::zero(); c * s * side * side];
    let src = volume.data();
    for k in 0..n {
        let (r, q) = (k / w, k % w);
        for ch in 0..c {
            for z in 0..s {
                for y in 0..s {
                    let from = (((k * c + ch) * s + z) * s + y) * s;
                    let to = ((ch * s + z) * side + r * s + y) * side + q * s;
                    out[to..to + s].copy_from_slice(&src[from..from + s]);
                }
            }
        }
    }
    Tensor::new(&[c * s, side, side], out)
}

/// Inverse of [`stack_uv`].
pub fn unstack_uv<T: Scalar>(map: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (cs, h, wd) = map.chw()?;
    if s == 0 || cs % s != 0 || h != wd || h % s != 0 {
        return Err(Error::shape("unstack_uv", map.shape(), &[s]));
    }
    let (c, w, side) = (cs / s, h / s, h);
    let n = w * w;
    let mut out = vec![T::zero(); n * c * s * s * s];
    let src = map.data();
    for k in 0..n {
        let (r, q) = (k / w, k % w);
        for ch in 0..c {
            for z in 0..s {
                for y in 0..s {
                    let to = (((k * c + ch) * s + z) * s + y) * s;
                    let from = ((ch * s + z) * side + r * s + y) * side + q * s;
                    out[to..to + s].copy_from_slice(&src[from..from + s]);
                }
            }
        }
    }
    Tensor::new(&[n, c, s, s, s], out)
}
