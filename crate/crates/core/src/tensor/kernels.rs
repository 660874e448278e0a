//! Forward and backward kernels shared by the tape and tape-free inference.

use rayon::prelude::*;

use super::scalar::{gemm, MatView};
use super::{Pointwise, Scalar, Tensor};
use crate::error::{Error, Result};

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

fn conv_geom<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<ConvGeom> {
    let (cin, h, w) = input.chw()?;
    let [cout, kcin, k, k2] = kernel.shape()[..] else {
        return Err(Error::invalid(format!("kernel must be [Cout,Cin,k,k], got {:?}", kernel.shape())));
    };
    if kcin != cin {
        return Err(Error::shape("conv2d input/kernel channels", input.shape(), kernel.shape()));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::invalid(format!("kernel must be square with odd size, got {:?}", kernel.shape())));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be >= 1"));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape("conv2d padded input smaller than kernel", input.shape(), kernel.shape()));
    }
    Ok(ConvGeom {
        cin,
        h,
        w,
        cout,
        k,
        ho: (h + 2 * padding - k) / stride + 1,
        wo: (w + 2 * padding - k) / stride + 1,
        stride,
        padding,
    })
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    /// Rows are `(c, ky, kx)`, columns are output pixels.
    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let cols = self.ho * self.wo;
        let mut col = vec![T::zero(); self.cin * self.k * self.k * cols];
        col.par_chunks_mut(cols).enumerate().for_each(|(row, dst)| {
            let c = row / (self.k * self.k);
            let ky = (row / self.k) % self.k;
            let kx = row % self.k;
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for oy in 0..self.ho {
                let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                if iy < 0 || iy >= self.h as isize {
                    continue;
                }
                let src_row = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                let dst_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                for (ox, d) in dst_row.iter_mut().enumerate() {
                    let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                    if ix >= 0 && ix < self.w as isize {
                        *d = src_row[ix as usize];
                    }
                }
            }
        });
        col
    }

    fn col2im<T: Scalar>(&self, col: &[T]) -> Vec<T> {
        let cols = self.ho * self.wo;
        let kk = self.k * self.k;
        let mut x = vec![T::zero(); self.cin * self.h * self.w];
        x.par_chunks_mut(self.h * self.w).enumerate().for_each(|(c, plane)| {
            for kidx in 0..kk {
                let ky = kidx / self.k;
                let kx = kidx % self.k;
                let src = &col[(c * kk + kidx) * cols..(c * kk + kidx + 1) * cols];
                for oy in 0..self.ho {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for ox in 0..self.wo {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix >= 0 && ix < self.w as isize {
                            plane[iy as usize * self.w + ix as usize] += src[oy * self.wo + ox];
                        }
                    }
                }
            }
        });
        x
    }
}

/// Cross-correlation (no kernel flip) of `[Cin,H,W]` with `[Cout,Cin,k,k]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, kernel, stride, padding)?;
    let cols = g.ho * g.wo;
    let kdim = g.cin * g.k * g.k;
    let mut out = vec![T::zero(); g.cout * cols];
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::shape("conv2d bias", b.shape(), &[g.cout]));
        }
        for (c, chunk) in out.chunks_mut(cols).enumerate() {
            chunk.fill(b.data()[c]);
        }
    }
    let beta = T::one();
    if g.is_pointwise() {
        gemm(kernel.data(), MatView::plain(g.cout, kdim), input.data(), MatView::plain(kdim, cols), beta, &mut out);
    } else {
        let col = g.im2col(input.data());
        gemm(kernel.data(), MatView::plain(g.cout, kdim), &col, MatView::plain(kdim, cols), beta, &mut out);
    }
    Tensor::new(&[g.cout, g.ho, g.wo], out)
}

/// Returns `(d input, d kernel, d bias)`; the input gradient is skipped when not needed.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = conv_geom(input, kernel, stride, padding)?;
    let cols = g.ho * g.wo;
    let kdim = g.cin * g.k * g.k;
    let col_owned;
    let col: &[T] = if g.is_pointwise() {
        input.data()
    } else {
        col_owned = g.im2col(input.data());
        &col_owned
    };
    let mut gk = vec![T::zero(); g.cout * kdim];
    gemm(grad_out.data(), MatView::plain(g.cout, cols), col, MatView::t(kdim, cols), T::zero(), &mut gk);
    let gb: Vec<T> = grad_out.data().chunks(cols).map(|c| c.iter().copied().sum()).collect();
    let gi = if need_input {
        let mut gcol = vec![T::zero(); kdim * cols];
        gemm(kernel.data(), MatView::t(g.cout, kdim), grad_out.data(), MatView::plain(g.cout, cols), T::zero(), &mut gcol);
        let data = if g.is_pointwise() { gcol } else { g.col2im(&gcol) };
        Some(Tensor::new(input.shape(), data)?)
    } else {
        None
    };
    Ok((gi, Tensor::new(kernel.shape(), gk)?, Tensor::new(&[g.cout], gb)?))
}

/// Source sampling table for one axis: `(i0, i1, w1)` per output index.
///
/// Corner-aligned mapping: the first and last samples coincide, so affine
/// signals are reproduced exactly and no sample needs clamping.
/// Half-pixel-center sampling: output `o` reads input coordinate
/// `(o + ½)·in/out − ½`, clamped to the valid range.
fn axis_table(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("resize to {out_h}x{out_w} from {h}x{w}")));
    }
    let ty = axis_table(h, out_h);
    let tx = axis_table(w, out_w);
    let mut out = vec![T::zero(); c * out_h * out_w];
    out.par_chunks_mut(out_h * out_w).enumerate().for_each(|(ch, dst)| {
        let src = input.channel(ch);
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::lit(wx);
                let (a, b) = (src[y0 * w + x0], src[y0 * w + x1]);
                let top = a + (b - a) * wx;
                let (a, b) = (src[y1 * w + x0], src[y1 * w + x1]);
                let bot = a + (b - a) * wx;
                dst[oy * out_w + ox] = top + (bot - top) * wy;
            }
        }
    });
    Tensor::new(&[c, out_h, out_w], out)
}

pub fn resize_backward<T: Scalar>(grad_out: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, out_h, out_w) = grad_out.chw()?;
    let ty = axis_table(h, out_h);
    let tx = axis_table(w, out_w);
    let mut gi = vec![T::zero(); c * h * w];
    gi.par_chunks_mut(h * w).enumerate().for_each(|(ch, dst)| {
        let g = grad_out.channel(ch);
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let wx = T::lit(wx);
                let v = g[oy * out_w + ox];
                dst[y0 * w + x0] += v * (T::one() - wy) * (T::one() - wx);
                dst[y0 * w + x1] += v * (T::one() - wy) * wx;
                dst[y1 * w + x0] += v * wy * (T::one() - wx);
                dst[y1 * w + x1] += v * wy * wx;
            }
        }
    });
    Tensor::new(&[c, h, w], gi)
}

pub fn pointwise_value<T: Scalar>(x: T, kind: Pointwise) -> T {
    let zero = T::zero();
    match kind {
        Pointwise::Relu => x.max(zero),
        Pointwise::LeakyRelu(slope) => {
            if x > zero {
                x
            } else {
                x * T::lit(slope)
            }
        }
        Pointwise::Sigmoid => T::one() / (T::one() + (-x).exp()),
        Pointwise::ScaleAdd { scale, bias } => (x * T::lit(scale)).max(zero) + T::lit(bias),
        Pointwise::MaxZeroNeg => (-x).max(zero),
    }
}

pub fn pointwise<T: Scalar>(input: &Tensor<T>, kind: Pointwise) -> Tensor<T> {
    input.map(|x| pointwise_value(x, kind))
}

pub fn pointwise_backward<T: Scalar>(input: &Tensor<T>, output: &Tensor<T>, g: &Tensor<T>, kind: Pointwise) -> Tensor<T> {
    let zero = T::zero();
    let one = T::one();
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(g.data())
        .map(|((&x, &y), &gy)| {
            let d = match kind {
                Pointwise::Relu => {
                    if x > zero {
                        one
                    } else {
                        zero
                    }
                }
                Pointwise::LeakyRelu(slope) => {
                    if x > zero {
                        one
                    } else {
                        T::lit(slope)
                    }
                }
                Pointwise::Sigmoid => y * (one - y),
                Pointwise::ScaleAdd { scale, .. } => {
                    let s = T::lit(scale);
                    if x * s > zero {
                        s
                    } else {
                        zero
                    }
                }
                Pointwise::MaxZeroNeg => {
                    if x < zero {
                        -one
                    } else {
                        zero
                    }
                }
            };
            d * gy
        })
        .collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

/// Multiplies each leading-axis slice by its weight (`weights.len()` is 1 or `shape[0]`).
pub fn scale_leading<T: Scalar>(x: &Tensor<T>, weights: &[T]) -> Tensor<T> {
    if weights.len() == 1 {
        let w = weights[0];
        return x.map(|v| v * w);
    }
    let plane: usize = x.shape()[1..].iter().product();
    let data = x
        .data()
        .chunks(plane.max(1))
        .zip(weights)
        .flat_map(|(chunk, &w)| chunk.iter().map(move |&v| v * w))
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}
