use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear value to 8-bit with gamma 2.2 after multiplying by `scale`.
pub fn to_srgb8(v: f32, scale: f32) -> u8 {
    let x = (v * scale).max(0.0);
    (x.powf(1.0 / 2.2).min(1.0) * 255.0).round() as u8
}

/// Writes a `[3|4, H, W]` linear image as 8-bit PNG; alpha is stored linearly.
pub fn save_png(path: &Path, img: &Tensor<f32>, scale: f32) -> Result<()> {
    let (c, h, w) = img.chw()?;
    if c != 3 && c != 4 {
        return Err(Error::shape("save_png", img.shape(), &[4, h, w]));
    }
    let plane = h * w;
    let mut buf = Vec::with_capacity(c * plane);
    for p in 0..plane {
        for ch in 0..3 {
            buf.push(to_srgb8(img.data()[ch * plane + p], scale));
        }
        if c == 4 {
            buf.push((img.data()[3 * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let color = if c == 4 { image::ExtendedColorType::Rgba8 } else { image::ExtendedColorType::Rgb8 };
    image::save_buffer(path, &buf, w as u32, h as u32, color)?;
    Ok(())
}

/// Writes a `[1, H, W]` image, or the RGB channels of a `[C>=3, H, W]` one, as
/// little-endian PFM.
pub fn save_pfm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = img.chw()?;
    if c == 2 {
        return Err(Error::shape("save_pfm", img.shape(), &[3, h, w]));
    }
    let (tag, out_c) = if c == 1 { ("Pf", 1) } else { ("PF", 3) };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "{tag}\n{w} {h}\n-1.0\n")?;
    let plane = h * w;
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..out_c {
                out.write_all(&img.data()[ch * plane + y * w + x].to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a 1- or 3-channel PFM into `[C, H, W]`.
pub fn load_pfm(path: &Path) -> Result<Tensor<f32>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut token = || -> Result<String> {
        let mut s = String::new();
        loop {
            let buf = r.fill_buf()?;
            if buf.is_empty() {
                break;
            }
            let b = buf[0];
            r.consume(1);
            if b.is_ascii_whitespace() {
                if !s.is_empty() {
                    break;
                }
            } else {
                s.push(b as char);
            }
        }
        Ok(s)
    };
    let c = match token()?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format(path, format!("unknown PFM tag {other:?}"))),
    };
    let parse = |s: String| s.parse::<f64>().map_err(|_| Error::format(path, format!("bad header field {s:?}")));
    let w = parse(token()?)? as usize;
    let h = parse(token()?)? as usize;
    let scale = parse(token()?)?;
    let mut raw = vec![0u8; w * h * c * 4];
    r.read_exact(&mut raw).map_err(|_| Error::format(path, "truncated PFM data"))?;
    let vals: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if scale < 0.0 {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let plane = w * h;
    let mut data = vec![0.0f32; c * plane];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[ch * plane + (h - 1 - y) * w + x] = vals[(y * w + x) * c + ch];
            }
        }
    }
    Tensor::new(&[c, h, w], data)
}
