//! `DESC1` descriptor cache: magic, then `width`, `height`, `dim`, `count`
//! as little-endian `u32`, then per descriptor its area `x y w h` (four
//! little-endian `u32`) followed by `dim` little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::descriptors::{Area, DescriptorSet, LocalDescriptor};
use crate::error::{Error, Result};
use crate::imaging::ByteReader;

pub const DESCRIPTOR_MAGIC: &[u8; 5] = b"DESC1";

pub fn encode_descriptors(ds: &DescriptorSet) -> Vec<u8> {
    let dim = ds.dim();
    let mut out = Vec::with_capacity(21 + ds.len() * (16 + 8 * dim));
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    for v in [ds.width, ds.height, dim, ds.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for d in &ds.descriptors {
        for v in [d.area.x, d.area.y, d.area.w, d.area.h] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &d.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<DescriptorSet> {
    let mut r = ByteReader::new(bytes);
    if r.take(5)? != DESCRIPTOR_MAGIC {
        return Err(Error::Parse("missing DESC1 header".into()));
    }
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut descriptors = Vec::with_capacity(count);
    for _ in 0..count {
        let area = Area { x: r.u32()? as usize, y: r.u32()? as usize, w: r.u32()? as usize, h: r.u32()? as usize };
        if area.x + area.w > width || area.y + area.h > height {
            return Err(Error::Parse(format!("descriptor area {area:?} outside {width}x{height}")));
        }
        let vector = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        descriptors.push(LocalDescriptor { vector, area });
    }
    r.finish()?;
    Ok(DescriptorSet { width, height, descriptors })
}

pub fn write_descriptor_cache(ds: &DescriptorSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_descriptors(ds))?;
    Ok(())
}

pub fn read_descriptor_cache(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    decode_descriptors(&fs::read(path)?)
}
