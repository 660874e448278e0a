use std::path::Path;

use crate::error::{Error, Result};
use crate::math::DVec3;
use crate::tensor::Tensor;

/// Equirectangular linear-RGB radiance map.
///
/// Row 0 is the +y pole; azimuth is measured from +z towards +x. Texel
/// `(row, col)` looks along polar angle `π(row+½)/rows` and azimuth
/// `2π(col+½)/cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major radiance.
    pub texels: Vec<[f64; 3]>,
}

impl EnvMap {
    pub fn new(rows: usize, cols: usize, texels: Vec<[f64; 3]>) -> Result<Self> {
        if rows == 0 || cols == 0 || texels.len() != rows * cols {
            return Err(Error::shape("envmap", &[texels.len()], &[rows, cols]));
        }
        if texels.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("envmap radiance must be finite and non-negative"));
        }
        Ok(EnvMap { rows, cols, texels })
    }

    pub fn constant(rows: usize, cols: usize, value: [f64; 3]) -> Self {
        EnvMap { rows, cols, texels: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(DVec3) -> [f64; 3]) -> Self {
        let mut e = EnvMap::constant(rows, cols, [0.0; 3]);
        for i in 0..rows * cols {
            e.texels[i] = f(e.dir(i / cols, i % cols));
        }
        e
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.texels.is_empty()
    }

    pub fn dir(&self, row: usize, col: usize) -> DVec3 {
        let theta = std::f64::consts::PI * (row as f64 + 0.5) / self.rows as f64;
        let phi = std::f64::consts::TAU * (col as f64 + 0.5) / self.cols as f64;
        DVec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos())
    }

    /// All texel directions, row-major.
    pub fn dirs(&self) -> Vec<DVec3> {
        (0..self.len()).map(|i| self.dir(i / self.cols, i % self.cols)).collect()
    }

    /// Solid angle of each texel, row-major.
    pub fn solid_angles(&self) -> Vec<f64> {
        let dphi = std::f64::consts::TAU / self.cols as f64;
        (0..self.len())
            .map(|i| {
                let r = (i / self.cols) as f64;
                let t0 = std::f64::consts::PI * r / self.rows as f64;
                let t1 = std::f64::consts::PI * (r + 1.0) / self.rows as f64;
                dphi * (t0.cos() - t1.cos())
            })
            .collect()
    }

    pub fn scaled(&self, s: f64) -> EnvMap {
        EnvMap { texels: self.texels.iter().map(|t| t.map(|v| v * s)).collect(), ..*self }
    }

    /// Shifts columns by `n` (azimuthal rotation by `n` texels).
    pub fn rotate_columns(&self, n: usize) -> EnvMap {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.texels[r * self.cols + (c + n) % self.cols] = self.texels[r * self.cols + c];
            }
        }
        out
    }

    /// Area-weighted box filter to `rows × cols` (radiance averaged in linear space).
    pub fn downsample(&self, rows: usize, cols: usize) -> Result<EnvMap> {
        if rows == 0 || cols == 0 || rows > self.rows || cols > self.cols {
            return Err(Error::invalid(format!("cannot box-filter {}x{} to {rows}x{cols}", self.rows, self.cols)));
        }
        let wr = overlap_weights(self.rows, rows);
        let wc = overlap_weights(self.cols, cols);
        let mut texels = vec![[0.0; 3]; rows * cols];
        for (r, row_w) in wr.iter().enumerate() {
            for (c, col_w) in wc.iter().enumerate() {
                let mut acc = [0.0; 3];
                let mut total = 0.0;
                for &(sr, a) in row_w {
                    for &(sc, b) in col_w {
                        let t = self.texels[sr * self.cols + sc];
                        for ch in 0..3 {
                            acc[ch] += a * b * t[ch];
                        }
                        total += a * b;
                    }
                }
                texels[r * cols + c] = acc.map(|v| v / total);
            }
        }
        EnvMap::new(rows, cols, texels)
    }

    /// Reads a Radiance `.hdr` file.
    pub fn load_hdr(path: &Path) -> Result<EnvMap> {
        let img = image::open(path)?.to_rgb32f();
        let (w, h) = img.dimensions();
        let texels = img.pixels().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64].map(|v| v.max(0.0))).collect();
        EnvMap::new(h as usize, w as usize, texels)
    }

    /// Loads `.hdr` or `.pfm` by extension.
    pub fn load(path: &Path) -> Result<EnvMap> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("hdr") => Self::load_hdr(path),
            Some("pfm") => Self::from_tensor(&crate::raymarch::load_pfm(path)?),
            _ => Err(Error::format(path, "envmaps must be .hdr or .pfm")),
        }
    }

    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        crate::raymarch::save_pfm(path, &self.to_tensor())
    }

    /// `[3, rows, cols]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let n = self.len();
        Tensor::from_fn(&[3, self.rows, self.cols], |i| self.texels[i % n][i / n] as f32)
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<EnvMap> {
        let (c, h, w) = t.chw()?;
        let plane = h * w;
        let texels = (0..plane)
            .map(|p| {
                let g = |ch: usize| t.data()[ch.min(c - 1) * plane + p] as f64;
                [g(0), g(1), g(2)]
            })
            .collect();
        EnvMap::new(h, w, texels)
    }

    /// Luminance-weighted mean radiance.
    pub fn mean_luminance(&self) -> f64 {
        self.texels.iter().map(|t| 0.2126 * t[0] + 0.7152 * t[1] + 0.0722 * t[2]).sum::<f64>() / self.len() as f64
    }
}

/// For each of `dst` bins over `[0, src)`, the overlapping source cells and
/// their overlap lengths.
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let (a, b) = (d as f64 * ratio, (d + 1) as f64 * ratio);
            (a.floor() as usize..(b.ceil() as usize).min(src))
                .filter_map(|s| {
                    let w = (b.min(s as f64 + 1.0) - a.max(s as f64)).max(0.0);
                    (w > 0.0).then_some((s, w))
                })
                .collect()
        })
        .collect()
}
