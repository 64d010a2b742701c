//! On-disk formats: the `SLSH` tensor container, per-head CSV and PGM images.
//!
//! `SLSH` layout, all little-endian:
//!
//! ```text
//! "SLSH"  u32 version=1  u32 L  u32 H  u32 n  u32 span_start  u32 span_end
//! L*H*n*n f64, layer-major, head-major within a layer, each map row-major
//! ```

use std::io::{Read, Write};

use crate::attnops::{AttentionTensor, AttnMap, TensorMeta};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SLSH";
pub const VERSION: u32 = 1;
/// Bytes before the first payload value.
pub const HEADER_LEN: usize = 4 + 6 * 4;

pub fn write_tensor<W: Write>(t: &AttentionTensor, mut w: W) -> Result<()> {
    let dims = [
        VERSION,
        to_u32(t.layers)?,
        to_u32(t.heads)?,
        to_u32(t.n)?,
        to_u32(t.meta.span_start)?,
        to_u32(t.meta.span_end)?,
    ];
    w.write_all(MAGIC)?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.n * t.n * 8);
    for m in &t.maps {
        buf.clear();
        for (k, &v) in m.as_slice().iter().enumerate() {
            // upper triangle is stored as exact zeros
            let v = if k % t.n > k / t.n { 0.0 } else { v };
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn to_u32(x: usize) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{x} does not fit in u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<AttentionTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let layers = read_u32(&mut r)? as usize;
    let heads = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let span_start = read_u32(&mut r)? as usize;
    let span_end = read_u32(&mut r)? as usize;

    let expected = layers
        .checked_mul(heads)
        .and_then(|m| m.checked_mul(n))
        .and_then(|m| m.checked_mul(n))
        .and_then(|m| m.checked_mul(8))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let mut maps = Vec::with_capacity(layers * heads);
    for chunk in payload.chunks_exact((n * n * 8).max(1)).take(layers * heads) {
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        maps.push(AttnMap::from_vec(n, data)?);
    }
    AttentionTensor::new(
        layers,
        heads,
        maps,
        TensorMeta {
            span_start,
            span_end,
            label: String::new(),
        },
    )
}

/// One map as `n` comma-separated lines.
pub fn write_csv<W: Write>(map: &AttnMap, mut w: W) -> Result<()> {
    for row in map.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Binary 8-bit greymap, values scaled so the image maximum maps to 255.
pub fn write_pgm<W: Write>(values: &[f64], width: usize, height: usize, mut w: W) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Dimension(format!(
            "{} values for a {width}x{height} image",
            values.len()
        )));
    }
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v.max(0.0) / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&pixels)?;
    Ok(())
}

pub fn write_mask_pgm<W: Write>(mask: &[bool], width: usize, height: usize, w: W) -> Result<()> {
    let v: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_pgm(&v, width, height, w)
}
