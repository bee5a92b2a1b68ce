use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::Image;

const CELLS: usize = 4;
const BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = CELLS * CELLS * BINS;
const CLAMP: f64 = 0.2;

/// Pixel rectangle a descriptor was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Area {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Area {
    pub fn pixel_count(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    /// The part of the rectangle inside a `width`×`height` image.
    pub fn clipped(&self, width: usize, height: usize) -> Area {
        let x = self.x.min(width);
        let y = self.y.min(height);
        Area { x, y, w: (self.x + self.w).min(width) - x, h: (self.y + self.h).min(height) - y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor {
    pub vector: Vec<f64>,
    pub area: Area,
}

impl AsRef<[f64]> for LocalDescriptor {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

/// Descriptors of one image in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub width: usize,
    pub height: usize,
    pub descriptors: Vec<LocalDescriptor>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.descriptors.first().map_or(0, |d| d.vector.len())
    }

    pub fn vectors(&self) -> Vec<&[f64]> {
        self.descriptors.iter().map(|d| d.vector.as_slice()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DenseParams {
    pub patch: usize,
    pub stride: usize,
}

impl Default for DenseParams {
    fn default() -> Self {
        DenseParams { patch: 16, stride: 4 }
    }
}

struct GradientField {
    width: usize,
    magnitude: Vec<f64>,
    /// Orientation in units of histogram bins, in `[0, BINS)`.
    bin_pos: Vec<f64>,
}

impl GradientField {
    fn new(img: &Image) -> Self {
        let (w, h) = (img.width(), img.height());
        let lum = img.luminance();
        let at = |x: usize, y: usize| lum[y * w + x];
        let mut magnitude = vec![0.0; w * h];
        let mut bin_pos = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                // central differences, replicate border
                let gx = 0.5 * (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y));
                let gy = 0.5 * (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1)));
                let m = gx.hypot(gy);
                magnitude[y * w + x] = m;
                if m > 0.0 {
                    let theta = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                    let pos = theta / std::f64::consts::TAU * BINS as f64;
                    bin_pos[y * w + x] = if pos >= BINS as f64 { 0.0 } else { pos };
                }
            }
        }
        GradientField { width: w, magnitude, bin_pos }
    }

    fn descriptor(&self, x0: usize, y0: usize, patch: usize) -> Vec<f64> {
        let cell = patch / CELLS;
        let mut hist = vec![0.0; DESCRIPTOR_LEN];
        for dy in 0..patch {
            let row = (y0 + dy) * self.width;
            for dx in 0..patch {
                let m = self.magnitude[row + x0 + dx];
                if m == 0.0 {
                    continue;
                }
                let pos = self.bin_pos[row + x0 + dx];
                let lower = pos.floor() as usize % BINS;
                let frac = pos - pos.floor();
                let base = ((dy / cell) * CELLS + dx / cell) * BINS;
                hist[base + lower] += (1.0 - frac) * m;
                hist[base + (lower + 1) % BINS] += frac * m;
            }
        }
        normalize_clamped(&mut hist);
        hist
    }
}

/// ℓ2-normalise, clamp entries at 0.2, re-normalise. Zero stays zero.
fn normalize_clamped(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    v.iter_mut().for_each(|x| *x = (*x / norm).min(CLAMP));
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Dense gradient-orientation histograms on a regular grid.
///
/// Each `patch`×`patch` window at grid positions that are multiples of
/// `stride` gives one 128-dimensional descriptor: 4×4 spatial cells with 8
/// orientation bins each, magnitude-weighted with linear interpolation
/// between neighbouring orientation bins.
pub fn extract_dense(img: &Image, params: &DenseParams) -> Result<DescriptorSet> {
    let DenseParams { patch, stride } = *params;
    if stride == 0 {
        return Err(Error::Extract("stride must be at least 1".into()));
    }
    if patch < CELLS || patch % CELLS != 0 {
        return Err(Error::Extract(format!("patch {patch} must be a positive multiple of {CELLS}")));
    }
    if patch > img.width().min(img.height()) {
        return Err(Error::Extract(format!(
            "patch {patch} larger than {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let field = GradientField::new(img);
    let positions: Vec<(usize, usize)> = (0..=img.height() - patch)
        .step_by(stride)
        .flat_map(|y| (0..=img.width() - patch).step_by(stride).map(move |x| (x, y)))
        .collect();
    let descriptors = positions
        .par_iter()
        .map(|&(x, y)| LocalDescriptor {
            vector: field.descriptor(x, y, patch),
            area: Area { x, y, w: patch, h: patch },
        })
        .collect();
    Ok(DescriptorSet { width: img.width(), height: img.height(), descriptors })
}
