//! Per-pixel relevance maps: raw binary dumps and diverging-colour rendering.
//!
//! Raw layout (`HMAP1`): the 5 magic bytes, `width` and `height` as
//! little-endian `u32`, then `width * height` little-endian `f64` values in
//! row-major order.
//!
//! Rendering maps `v = R / max|R|` to RGB: `v >= 0` ramps white to red as
//! `(255, 255(1-v), 255(1-v))`, `v < 0` ramps white to blue as
//! `(255(1+v), 255(1+v), 255)`. A map that is zero everywhere renders white.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::image::{encode_pnm, BitDepth, Image};

pub const HEATMAP_MAGIC: &[u8; 5] = b"HMAP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dim(format!(
                "heatmap {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("heatmap contains non-finite values".into()));
        }
        Ok(Heatmap { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Heatmap { width, height, values: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sum of relevance over a rectangle, clipped to the map.
    pub fn region_sum(&self, x: usize, y: usize, w: usize, h: usize, positive_only: bool) -> f64 {
        let mut total = 0.0;
        for yy in y..(y + h).min(self.height) {
            for xx in x..(x + w).min(self.width) {
                let v = self.get(xx, yy);
                total += if positive_only { v.max(0.0) } else { v };
            }
        }
        total
    }

    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 8 * self.values.len());
        out.extend_from_slice(HEATMAP_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..5] != HEATMAP_MAGIC {
            return Err(Error::Parse("missing HMAP1 header".into()));
        }
        let width = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let body = &bytes[13..];
        if body.len() != width * height * 8 {
            return Err(Error::Parse(format!(
                "heatmap body has {} bytes, expected {}",
                body.len(),
                width * height * 8
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Heatmap::new(width, height, values)
    }

    /// RGB triples of the diverging colormap, row-major.
    pub fn render(&self) -> Vec<[u8; 3]> {
        let scale = self.max_abs();
        let q = |t: f64| (255.0 * t).round().clamp(0.0, 255.0) as u8;
        self.values
            .iter()
            .map(|&r| {
                if scale == 0.0 {
                    return [255, 255, 255];
                }
                let v = r / scale;
                if v >= 0.0 {
                    [255, q(1.0 - v), q(1.0 - v)]
                } else {
                    [q(1.0 + v), q(1.0 + v), 255]
                }
            })
            .collect()
    }

    pub fn render_image(&self) -> Image {
        let pixels = self
            .render()
            .iter()
            .flat_map(|rgb| rgb.iter().map(|&c| f64::from(c) / 255.0))
            .collect();
        Image::new(self.width, self.height, 3, pixels).expect("rendered colours are in range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Raw,
    Rendered,
}

pub fn save_heatmap(h: &Heatmap, path: impl AsRef<Path>, format: HeatmapFormat) -> Result<()> {
    let bytes = match format {
        HeatmapFormat::Raw => h.to_raw_bytes(),
        HeatmapFormat::Rendered => encode_pnm(&h.render_image(), BitDepth::Eight),
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_heatmap(path: impl AsRef<Path>) -> Result<Heatmap> {
    Heatmap::from_raw_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_map_is_white() {
        let h = Heatmap::zeros(3, 2);
        assert!(h.render().iter().all(|c| *c == [255, 255, 255]));
    }

    #[test]
    fn symmetric_extremes() {
        let h = Heatmap::new(2, 1, vec![0.7, -0.7]).unwrap();
        assert_eq!(h.render(), vec![[255, 0, 0], [0, 0, 255]]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Heatmap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Heatmap::new(2, 1, vec![0.0]).is_err());
    }

    #[test]
    fn raw_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.hmap");
        let h = Heatmap::new(2, 2, vec![1.5, -0.0, 1e-300, -7.25]).unwrap();
        save_heatmap(&h, &path, HeatmapFormat::Raw).unwrap();
        let back = load_heatmap(&path).unwrap();
        let bits = |h: &Heatmap| h.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&h));
    }

    #[test]
    fn unwritable_path() {
        let h = Heatmap::zeros(1, 1);
        let err = save_heatmap(&h, "/nonexistent-dir/x/h.ppm", HeatmapFormat::Rendered);
        assert!(matches!(err, Err(Error::Io(_))));
    }

    proptest! {
        #[test]
        fn raw_roundtrip_is_bit_exact(values in prop::collection::vec(-1e6f64..1e6, 12)) {
            let h = Heatmap::new(4, 3, values).unwrap();
            let back = Heatmap::from_raw_bytes(&h.to_raw_bytes()).unwrap();
            prop_assert_eq!(back, h);
        }

        #[test]
        fn rendering_is_scale_invariant(values in prop::collection::vec(-10f64..10.0, 9), c in 1e-3f64..1e3) {
            let h = Heatmap::new(3, 3, values.clone()).unwrap();
            let scaled = Heatmap::new(3, 3, values.iter().map(|v| v * c).collect()).unwrap();
            prop_assert_eq!(h.render(), scaled.render());
        }
    }
}
