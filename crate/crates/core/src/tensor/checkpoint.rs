//! Flat parameter container: `PLT1` magic, version, record count, then
//! `(name, shape, f32 LE data)` records. All integers are u32 little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PLT1";
pub const VERSION: u32 = 1;

pub fn write_container<T: Scalar, W: Write>(out: &mut W, params: &ParamStore<T>) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_container<T: Scalar, R: Read>(input: &mut R, origin: &Path) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(origin, format!("bad magic {magic:?}")));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let count = read_u32(input)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::format(origin, e.to_string()))?;
        let ndim = read_u32(input)? as usize;
        let shape = (0..ndim).map(|_| read_u32(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 4];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}

pub fn save<T: Scalar>(path: &Path, params: &ParamStore<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_container(&mut f, params)?;
    f.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_container(&mut f, path)
}
