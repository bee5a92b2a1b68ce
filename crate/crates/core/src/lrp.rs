//! Relevance propagation through the Fisher Vector pipeline: classifier
//! score to FV dimensions (R³), to local descriptors (R²), to pixels (R¹).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{extract_dense, DenseParams, DescriptorSet, PcaModel};
use crate::error::{ensure_dims, Error, Result};
use crate::fisher::{aggregate, embed_into, improve, FvLayout};
use crate::gmm::GmmModel;
use crate::imaging::{Heatmap, Image};
use crate::svm::SvmModel;

const CHUNK: usize = 256;

/// Relevance per FV dimension for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct R3Map {
    pub class: usize,
    /// f(x), computed as `w·φ(x) + b`.
    pub score: f64,
    pub values: Vec<f64>,
}

/// `R³_d = w_d φ(x)_d + b/D` with `D` the FV length.
pub fn relevance_r3(model: &SvmModel, phi: &[f64], class: usize) -> Result<R3Map> {
    let cm = model.classes.get(class).ok_or_else(|| Error::Key(format!("class index {class} out of range")))?;
    let score = cm.score(phi)?;
    let share = cm.bias / phi.len() as f64;
    let values = cm.weights.iter().zip(phi).map(|(w, x)| w * x + share).collect();
    Ok(R3Map { class, score, values })
}

/// Same relevances from the support-vector expansion:
/// `R³_d = Σ_i α_i y_i φ(x_i)_d φ(x)_d + b/D`.
pub fn relevance_r3_dual(model: &SvmModel, phi: &[f64], class: usize) -> Result<R3Map> {
    let score = model.score_dual(phi, class)?;
    let dual = model.dual.as_ref().expect("score_dual checked the dual view");
    let share = model.classes[class].bias / phi.len() as f64;
    let values = (0..phi.len())
        .map(|d| {
            let mut w = 0.0;
            for (coef, sv) in dual.coefficients[class].iter().zip(&dual.support) {
                w += coef * sv[d];
            }
            w * phi[d] + share
        })
        .collect();
    Ok(R3Map { class, score, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum R2Variant {
    /// Column-sum denominator; a zero column sum is an error.
    Plain,
    /// Denominator `Σ_l m + ε·sgn(Σ_l m)` with `sgn(0) = +1`.
    Epsilon { epsilon: f64 },
    /// `|m|` in numerator and denominator; conserves relevance exactly.
    Absolute,
}

impl Default for R2Variant {
    fn default() -> Self {
        R2Variant::Epsilon { epsilon: 100.0 }
    }
}

impl R2Variant {
    pub fn name(&self) -> &'static str {
        match self {
            R2Variant::Plain => "plain",
            R2Variant::Epsilon { .. } => "eps",
            R2Variant::Absolute => "abs",
        }
    }

    fn validate(&self) -> Result<()> {
        if let R2Variant::Epsilon { epsilon } = self {
            if epsilon.is_nan() || *epsilon <= 0.0 || !epsilon.is_finite() {
                return Err(Error::Validation(format!("epsilon must be positive and finite, got {epsilon}")));
            }
        }
        Ok(())
    }
}

/// Relevance per local descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct R2Map {
    pub variant: R2Variant,
    pub values: Vec<f64>,
    /// FV dimensions whose mapping is zero for every descriptor.
    pub zero_dims: Vec<usize>,
    /// Uniform per-descriptor share of the relevance on `zero_dims`.
    pub xi: f64,
}

impl R2Map {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Row access to the mapping matrix `m_d(l)`, one row per descriptor.
pub trait MappingSource: Sync {
    fn descriptors(&self) -> usize;

    fn fv_len(&self) -> usize;

    /// The full row `(m_d(l))_d`.
    fn row(&self, l: usize) -> Vec<f64>;

    fn entry(&self, d: usize, l: usize) -> f64 {
        self.row(l)[d]
    }

    /// Visits rows in descriptor order; rows are computed in parallel chunks.
    fn for_each_row(&self, mut f: impl FnMut(usize, &[f64]))
    where
        Self: Sized,
    {
        let n = self.descriptors();
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let rows: Vec<Vec<f64>> = (start..end).into_par_iter().map(|l| self.row(l)).collect();
            for (off, row) in rows.iter().enumerate() {
                f(start + off, row);
            }
        }
    }
}

/// On-demand access to `m_d(l) = Ψ_λ(l)_d` for a descriptor list. Rows are
/// recomputed as needed, never stored all at once.
pub struct MappingView<'a, V> {
    gmm: &'a GmmModel,
    descriptors: &'a [V],
}

impl<'a, V: AsRef<[f64]> + Sync> MappingView<'a, V> {
    pub fn new(gmm: &'a GmmModel, descriptors: &'a [V]) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::EmptyInput("no descriptors to map".into()));
        }
        for l in descriptors {
            ensure_dims!(l.as_ref().len() == gmm.dim(), "descriptor has {} dims, GMM has {}", l.as_ref().len(), gmm.dim());
        }
        Ok(MappingView { gmm, descriptors })
    }
}

impl<V: AsRef<[f64]> + Sync> MappingSource for MappingView<'_, V> {
    fn descriptors(&self) -> usize {
        self.descriptors.len()
    }

    fn fv_len(&self) -> usize {
        FvLayout::of(self.gmm).len()
    }

    fn row(&self, l: usize) -> Vec<f64> {
        let mut gamma = vec![0.0; self.gmm.components()];
        let mut out = vec![0.0; self.fv_len()];
        embed_into(self.gmm, self.descriptors[l].as_ref(), &mut gamma, &mut out);
        out
    }
}

/// A mapping matrix held explicitly, for hand-built instances.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    rows: Vec<Vec<f64>>,
}

impl MappingMatrix {
    /// `rows[l][d] = m_d(l)`.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::EmptyInput("no descriptors to map".into()))?.len();
        for r in &rows {
            ensure_dims!(r.len() == first, "mapping rows differ in length: {} vs {first}", r.len());
        }
        Ok(MappingMatrix { rows })
    }
}

impl MappingSource for MappingMatrix {
    fn descriptors(&self) -> usize {
        self.rows.len()
    }

    fn fv_len(&self) -> usize {
        self.rows[0].len()
    }

    fn row(&self, l: usize) -> Vec<f64> {
        self.rows[l].clone()
    }
}

/// Distributes R³ onto descriptors:
/// `R²_l = Σ_{d∉Z} R³_d · n_d(l) / den_d + ξ`, where `n_d(l)` is `m_d(l)`
/// (or `|m_d(l)|` for the absolute variant) and `den_d` follows the variant.
pub fn relevance_r2<M: MappingSource>(r3: &R3Map, view: &M, variant: R2Variant) -> Result<R2Map> {
    variant.validate()?;
    let fv_len = view.fv_len();
    ensure_dims!(r3.values.len() == fv_len, "R3 has {} dims, FV has {fv_len}", r3.values.len());
    let n = view.descriptors();
    let mut col_sum = vec![0.0; fv_len];
    let mut abs_sum = vec![0.0; fv_len];
    let mut nonzero = vec![false; fv_len];
    view.for_each_row(|_, row| {
        for d in 0..fv_len {
            let m = row[d];
            col_sum[d] += m;
            abs_sum[d] += m.abs();
            nonzero[d] |= m != 0.0;
        }
    });
    let mut coef = vec![0.0; fv_len];
    let mut zero_dims = Vec::new();
    let mut z_rel = 0.0;
    for d in 0..fv_len {
        if !nonzero[d] {
            zero_dims.push(d);
            z_rel += r3.values[d];
            continue;
        }
        let den = match variant {
            R2Variant::Plain => {
                if col_sum[d] == 0.0 {
                    return Err(Error::ZeroDenominator(format!("column sum of FV dimension {d} is zero")));
                }
                col_sum[d]
            }
            R2Variant::Epsilon { epsilon } => col_sum[d] + epsilon * if col_sum[d] >= 0.0 { 1.0 } else { -1.0 },
            R2Variant::Absolute => abs_sum[d],
        };
        coef[d] = r3.values[d] / den;
    }
    let xi = z_rel / n as f64;
    let absolute = variant == R2Variant::Absolute;
    let values = (0..n)
        .into_par_iter()
        .map(|l| {
            let row = view.row(l);
            let mut r = 0.0;
            for d in 0..fv_len {
                if nonzero[d] {
                    r += coef[d] * if absolute { row[d].abs() } else { row[d] };
                }
            }
            r + xi
        })
        .collect();
    Ok(R2Map { variant, values, zero_dims, xi })
}

/// Spreads each `R²_l` evenly over its receptive field (clipped to the
/// image) and sums the shares per pixel.
pub fn relevance_r1(r2: &R2Map, ds: &DescriptorSet) -> Result<Heatmap> {
    ensure_dims!(r2.values.len() == ds.len(), "R2 has {} entries, descriptor set has {}", r2.values.len(), ds.len());
    let (w, h) = (ds.width, ds.height);
    let mut heat = Heatmap::zeros(w, h);
    let vals = heat.values_mut();
    for (rel, desc) in r2.values.iter().zip(&ds.descriptors) {
        let area = desc.area.clipped(w, h);
        let count = area.pixel_count();
        if count == 0 {
            continue;
        }
        let share = rel / count as f64;
        for y in area.y..area.y + area.h {
            for v in &mut vals[y * w + area.x..y * w + area.x + area.w] {
                *v += share;
            }
        }
    }
    Ok(heat)
}

/// FV feature extractor and classifier, bundled for end-to-end use.
#[derive(Debug, Clone, Copy)]
pub struct FvPipeline<'a> {
    pub dense: DenseParams,
    pub pca: &'a PcaModel,
    pub gmm: &'a GmmModel,
    pub svm: &'a SvmModel,
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub heatmap: Heatmap,
    pub r2: R2Map,
    pub r3: R3Map,
    pub score: f64,
}

impl<'a> FvPipeline<'a> {
    /// PCA-projected descriptors of `img`.
    pub fn descriptors(&self, img: &Image) -> Result<DescriptorSet> {
        self.pca.apply(&extract_dense(img, &self.dense)?)
    }

    /// Improved FV of already projected descriptors.
    pub fn features(&self, ds: &DescriptorSet) -> Result<Vec<f64>> {
        Ok(improve(&aggregate(self.gmm, &ds.descriptors)?.values).values)
    }

    pub fn explain_descriptors(&self, ds: &DescriptorSet, class: usize, variant: R2Variant) -> Result<Explanation> {
        let phi = self.features(ds)?;
        let r3 = relevance_r3(self.svm, &phi, class)?;
        let view = MappingView::new(self.gmm, &ds.descriptors)?;
        let r2 = relevance_r2(&r3, &view, variant)?;
        let heatmap = relevance_r1(&r2, ds)?;
        Ok(Explanation { heatmap, score: r3.score, r2, r3 })
    }

    /// Extract, project, embed, score, then propagate back to pixels.
    pub fn explain(&self, img: &Image, class: usize, variant: R2Variant) -> Result<Explanation> {
        self.explain_descriptors(&self.descriptors(img)?, class, variant)
    }
}
