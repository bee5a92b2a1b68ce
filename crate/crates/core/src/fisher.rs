//! Fisher Vector embedding: per-descriptor raw embeddings, mean aggregation,
//! power + ℓ2 normalisation and the Hellinger-kernel identity.
//!
//! Layout of a `(1+2D)K` vector: the `K` weight terms, then the `K` mean
//! blocks of length `D`, then the `K` sigma blocks of length `D`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{ensure_dims, Error, Result};
use crate::gmm::GmmModel;
use crate::imaging::ByteReader;

pub const FV_MAGIC: &[u8; 5] = b"FVEC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Moment {
    Weight,
    Mean,
    Sigma,
}

/// Bijection between FV dimensions and `(moment, component, coordinate)`.
/// Everything is zero-based; the coordinate of a weight entry is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FvLayout {
    pub components: usize,
    pub dim: usize,
}

impl FvLayout {
    pub fn of(gmm: &GmmModel) -> Self {
        FvLayout { components: gmm.components(), dim: gmm.dim() }
    }

    pub fn len(&self) -> usize {
        (1 + 2 * self.dim) * self.components
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, moment: Moment, k: usize, r: usize) -> usize {
        let (kk, d) = (self.components, self.dim);
        match moment {
            Moment::Weight => k,
            Moment::Mean => kk + d * k + r,
            Moment::Sigma => (1 + d) * kk + d * k + r,
        }
    }

    pub fn locate(&self, index: usize) -> (Moment, usize, usize) {
        let (kk, d) = (self.components, self.dim);
        if index < kk {
            (Moment::Weight, index, 0)
        } else if index < (1 + d) * kk {
            let o = index - kk;
            (Moment::Mean, o / d, o % d)
        } else {
            let o = index - (1 + d) * kk;
            (Moment::Sigma, o / d, o % d)
        }
    }
}

/// Ψ_λ(l) written into `out` (length `(1+2D)K`); `gamma` is scratch of length K.
pub(crate) fn embed_into(gmm: &GmmModel, l: &[f64], gamma: &mut [f64], out: &mut [f64]) {
    let layout = FvLayout::of(gmm);
    gmm.responsibilities_into(l, gamma);
    let d = layout.dim;
    for k in 0..layout.components {
        let pi = gmm.weight(k);
        let sqrt_pi = pi.sqrt();
        let g = gamma[k];
        out[k] = (g - pi) / sqrt_pi;
        let mu = gmm.mean(k);
        let sd = gmm.sigma(k);
        let mean_block = layout.index(Moment::Mean, k, 0);
        let sigma_block = layout.index(Moment::Sigma, k, 0);
        for r in 0..d {
            let t = (l[r] - mu[r]) / sd[r];
            out[mean_block + r] = g * t / sqrt_pi;
            out[sigma_block + r] = g * (t * t - 1.0) * FRAC_1_SQRT_2 / sqrt_pi;
        }
    }
}

/// Raw Fisher embedding Ψ_λ(l) of one descriptor.
pub fn embed_descriptor(gmm: &GmmModel, l: &[f64]) -> Result<Vec<f64>> {
    ensure_dims!(l.len() == gmm.dim(), "descriptor has {} dims, GMM has {}", l.len(), gmm.dim());
    let mut gamma = vec![0.0; gmm.components()];
    let mut out = vec![0.0; FvLayout::of(gmm).len()];
    embed_into(gmm, l, &mut gamma, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFisherVector {
    pub layout: FvLayout,
    pub values: Vec<f64>,
}

impl RawFisherVector {
    pub fn new(layout: FvLayout, values: Vec<f64>) -> Result<Self> {
        ensure_dims!(values.len() == layout.len(), "FV has {} values, layout needs {}", values.len(), layout.len());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite Fisher vector".into()));
        }
        Ok(RawFisherVector { layout, values })
    }
}

/// Power- and ℓ2-normalised Fisher vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovedFisherVector {
    pub values: Vec<f64>,
    /// False only when the raw vector was all zeros and no scaling happened.
    pub normalized: bool,
}

/// x = (1/|L|) Σ_l Ψ_λ(l), summed in descriptor order.
pub fn aggregate<V: AsRef<[f64]> + Sync>(gmm: &GmmModel, descriptors: &[V]) -> Result<RawFisherVector> {
    if descriptors.is_empty() {
        return Err(Error::EmptyInput("cannot aggregate an empty descriptor set".into()));
    }
    for l in descriptors {
        ensure_dims!(l.as_ref().len() == gmm.dim(), "descriptor has {} dims, GMM has {}", l.as_ref().len(), gmm.dim());
    }
    let layout = FvLayout::of(gmm);
    let embeddings: Vec<Vec<f64>> = descriptors
        .par_iter()
        .map_init(
            || vec![0.0; gmm.components()],
            |gamma, l| {
                let mut e = vec![0.0; layout.len()];
                embed_into(gmm, l.as_ref(), gamma, &mut e);
                e
            },
        )
        .collect();
    let mut sum = vec![0.0; layout.len()];
    for e in &embeddings {
        for (s, v) in sum.iter_mut().zip(e) {
            *s += v;
        }
    }
    let n = descriptors.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    RawFisherVector::new(layout, sum)
}

/// sign(x)|x|^½ followed by x/‖x‖₂; the zero vector maps to itself.
pub fn improve(x: &[f64]) -> ImprovedFisherVector {
    let mut v: Vec<f64> = x.iter().map(|&a| a.signum() * a.abs().sqrt()).collect();
    // signum(±0) is ±1 but |0|^½ = 0, so zeros stay zeros
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return ImprovedFisherVector { values: vec![0.0; x.len()], normalized: false };
    }
    v.iter_mut().for_each(|a| *a /= norm);
    ImprovedFisherVector { values: v, normalized: true }
}

/// Both sides of `Φ(x)·Φ(y) = Σ_d sign(x_d y_d) √(|x_d|/‖x‖₁ · |y_d|/‖y‖₁)`.
pub fn hellinger_check(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    ensure_dims!(x.len() == y.len(), "vectors differ in length: {} vs {}", x.len(), y.len());
    let l1x: f64 = x.iter().map(|v| v.abs()).sum();
    let l1y: f64 = y.iter().map(|v| v.abs()).sum();
    if l1x == 0.0 || l1y == 0.0 {
        return Err(Error::DegenerateInput("Hellinger kernel of a zero vector".into()));
    }
    let (px, py) = (improve(x), improve(y));
    let lhs = px.values.iter().zip(&py.values).map(|(a, b)| a * b).sum();
    let rhs = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let prod = a * b;
            if prod == 0.0 {
                0.0
            } else {
                prod.signum() * ((a.abs() / l1x) * (b.abs() / l1y)).sqrt()
            }
        })
        .sum();
    Ok((lhs, rhs))
}

/// `FVEC1` cache: magic, `K` and `D` as little-endian `u32`, then the
/// `(1+2D)K` values as little-endian `f64`.
pub fn encode_fisher_vector(fv: &RawFisherVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 8 * fv.values.len());
    out.extend_from_slice(FV_MAGIC);
    out.extend_from_slice(&(fv.layout.components as u32).to_le_bytes());
    out.extend_from_slice(&(fv.layout.dim as u32).to_le_bytes());
    for v in &fv.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fisher_vector(bytes: &[u8]) -> Result<RawFisherVector> {
    let mut r = ByteReader::new(bytes);
    if r.take(5)? != FV_MAGIC {
        return Err(Error::Parse("missing FVEC1 header".into()));
    }
    let layout = FvLayout { components: r.u32()? as usize, dim: r.u32()? as usize };
    let values = (0..layout.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    RawFisherVector::new(layout, values)
}

pub fn write_fisher_vector(fv: &RawFisherVector, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_fisher_vector(fv))?;
    Ok(())
}

pub fn read_fisher_vector(path: impl AsRef<Path>) -> Result<RawFisherVector> {
    decode_fisher_vector(&fs::read(path)?)
}
