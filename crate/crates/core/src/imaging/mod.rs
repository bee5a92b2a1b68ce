//! Image, annotation and heatmap I/O plus model-file serialization.

mod annotations;
mod heatmap;
mod image;
mod model_file;

pub use annotations::{format_annotations, load_annotations, parse_annotations, save_annotations, BoundingBox};
pub use heatmap::{load_heatmap, save_heatmap, Heatmap, HeatmapFormat, HEATMAP_MAGIC};
pub use image::{decode_pnm, encode_pnm, load_image, save_image, BitDepth, Image};
pub use model_file::{
    deserialize_model, load_model, save_model, serialize_model, ModelArtifact, MODEL_SCHEMA, MODEL_VERSION,
};

use crate::error::{Error, Result};

/// Little-endian cursor shared by the binary cache formats.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}
