use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorSet;
use crate::error::{ensure_dims, Error, Result};
use crate::fisher::{aggregate, embed_descriptor, improve};
use crate::gmm::GmmModel;
use crate::lrp::{relevance_r2, relevance_r3, MappingView, R2Map, R2Variant};
use crate::svm::ClassModel;

/// Source of replacement descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replacement {
    /// Draw from the GMM.
    Gmm,
    /// Put the original descriptor back (a no-op perturbation for testing).
    Identity,
}

/// Classifier scores while the first `batch·i` descriptors of an ordering
/// are replaced, for `i = 1..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MorfTrace {
    pub ordering: String,
    pub original: f64,
    pub batch: usize,
    pub scores: Vec<f64>,
    /// Whether the perturbed image is still predicted positive at each step.
    pub positive: Vec<bool>,
    /// Replaced descriptor indices and their new vectors, in order.
    pub replacements: Vec<(usize, Vec<f64>)>,
    /// Raw FV after the last step, maintained incrementally.
    pub final_fv: Vec<f64>,
}

/// Descriptor indices by descending relevance; ties keep ascending index.
pub fn morf_order(r2: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r2.len()).collect();
    idx.sort_by(|&a, &b| r2[b].total_cmp(&r2[a]).then(a.cmp(&b)));
    idx
}

/// Replaces descriptors in order `order`, `batch` at a time, updating the
/// raw FV by `x += Ψ(new)/|L| − Ψ(old)/|L|` and scoring `Φ(x)` after each
/// batch.
#[allow(clippy::too_many_arguments)]
pub fn morf_replace_ordered(
    ds: &DescriptorSet,
    gmm: &GmmModel,
    classifier: &ClassModel,
    order: &[usize],
    ordering: &str,
    batch: usize,
    steps: usize,
    replacement: Replacement,
    rng: &mut ChaCha8Rng,
) -> Result<MorfTrace> {
    let n = ds.len();
    if batch == 0 || steps == 0 {
        return Err(Error::Range("batch and step count must be at least 1".into()));
    }
    if batch * steps > n {
        return Err(Error::Range(format!("{batch} x {steps} replacements exceed {n} descriptors")));
    }
    ensure_dims!(order.len() == n, "ordering has {} entries for {n} descriptors", order.len());
    let raw = aggregate(gmm, &ds.descriptors)?;
    ensure_dims!(raw.values.len() == classifier.weights.len(), "FV has {} dims, classifier has {}", raw.values.len(), classifier.weights.len());
    let mut x = raw.values;
    let original = classifier.score_unchecked(&improve(&x).values);
    let inv = 1.0 / n as f64;
    let mut scores = Vec::with_capacity(steps);
    let mut positive = Vec::with_capacity(steps);
    let mut replacements = Vec::with_capacity(batch * steps);
    for step in 0..steps {
        for &l in &order[step * batch..(step + 1) * batch] {
            let old = &ds.descriptors[l].vector;
            let new = match replacement {
                Replacement::Gmm => gmm.sample(rng),
                Replacement::Identity => old.clone(),
            };
            let e_new = embed_descriptor(gmm, &new)?;
            let e_old = embed_descriptor(gmm, old)?;
            for d in 0..x.len() {
                x[d] += e_new[d] * inv - e_old[d] * inv;
            }
            replacements.push((l, new));
        }
        let f = classifier.score_unchecked(&improve(&x).values);
        scores.push(f);
        positive.push(f > 0.0);
    }
    Ok(MorfTrace { ordering: ordering.to_string(), original, batch, scores, positive, replacements, final_fv: x })
}

/// MoRF trace for the ordering induced by `r2`.
#[allow(clippy::too_many_arguments)]
pub fn morf_replace(
    ds: &DescriptorSet,
    gmm: &GmmModel,
    classifier: &ClassModel,
    r2: &R2Map,
    batch: usize,
    steps: usize,
    replacement: Replacement,
    rng: &mut ChaCha8Rng,
) -> Result<MorfTrace> {
    ensure_dims!(r2.values.len() == ds.len(), "R2 has {} entries, descriptor set has {}", r2.values.len(), ds.len());
    let order = morf_order(&r2.values);
    let id = format!("lrp-{}", r2.variant.name());
    morf_replace_ordered(ds, gmm, classifier, &order, &id, batch, steps, replacement, rng)
}

/// `A = (1/I) Σ_i (f(x) − f(x^(i)))`.
pub fn area_above(trace: &MorfTrace) -> Result<f64> {
    if trace.scores.is_empty() {
        return Err(Error::EmptyInput("empty MoRF trace".into()));
    }
    Ok(trace.scores.iter().map(|s| trace.original - s).sum::<f64>() / trace.scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    /// Fraction of traces whose score drops below zero at some step.
    pub v: f64,
    /// `histogram[i]` counts traces that first go negative at step `i + 1`.
    pub histogram: Vec<usize>,
}

pub fn sign_switch_fraction(traces: &[MorfTrace]) -> Result<QualityStats> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces".into()));
    }
    let steps = traces.iter().map(|t| t.scores.len()).max().unwrap_or(0);
    let mut histogram = vec![0; steps];
    let mut switched = 0;
    for t in traces {
        if t.original.is_nan() || t.original <= 0.0 {
            return Err(Error::Validation(format!("trace starts at f(x) = {} which is not positive", t.original)));
        }
        if let Some(i) = t.scores.iter().position(|s| *s < 0.0) {
            histogram[i] += 1;
            switched += 1;
        }
    }
    Ok(QualityStats { v: switched as f64 / traces.len() as f64, histogram })
}

/// One score per line: `step<TAB>f`, starting with step 0 = f(x).
pub fn format_curve(trace: &MorfTrace) -> String {
    let mut out = format!("0\t{:e}\n", trace.original);
    for (i, s) in trace.scores.iter().enumerate() {
        out.push_str(&format!("{}\t{:e}\n", i + 1, s));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorfParams {
    pub batch: usize,
    pub steps: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for MorfParams {
    fn default() -> Self {
        MorfParams { batch: 5, steps: 20, repetitions: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingStats {
    pub ordering: String,
    /// Mean of A over images and repetitions.
    pub mean_a: f64,
    /// Standard error of that mean over all traces.
    pub std_err_a: f64,
    pub quality: QualityStats,
    /// A per trace, image-major then repetition.
    pub a_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorfReport {
    pub images: usize,
    pub params: MorfParams,
    pub orderings: Vec<OrderingStats>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn summarise(ordering: String, traces: &[MorfTrace]) -> Result<OrderingStats> {
    let a_values = traces.iter().map(area_above).collect::<Result<Vec<_>>>()?;
    let n = a_values.len() as f64;
    let mean_a = a_values.iter().sum::<f64>() / n;
    let var = if a_values.len() > 1 { a_values.iter().map(|a| (a - mean_a).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(OrderingStats { ordering, mean_a, std_err_a: (var / n).sqrt(), quality: sign_switch_fraction(traces)?, a_values })
}

/// Ordering for (positive index, descriptors, improved FV, repetition).
type OrderFn<'a> = dyn Fn(usize, &DescriptorSet, &[f64], usize) -> Result<Vec<usize>> + Sync + 'a;

/// Runs MoRF for every relevance variant and for random orderings over the
/// images that `classifier` scores positive. Each (image, repetition) pair
/// uses the same replacement seed for every ordering.
pub fn compare_orderings(
    images: &[DescriptorSet],
    gmm: &GmmModel,
    classifier: &ClassModel,
    variants: &[R2Variant],
    params: &MorfParams,
) -> Result<MorfReport> {
    if params.repetitions == 0 {
        return Err(Error::Range("repetitions must be at least 1".into()));
    }
    let scored = images
        .par_iter()
        .map(|ds| -> Result<Option<(&DescriptorSet, Vec<f64>)>> {
            let phi = improve(&aggregate(gmm, &ds.descriptors)?.values).values;
            let f = classifier.score(&phi)?;
            Ok((f > 0.0).then_some((ds, phi)))
        })
        .collect::<Result<Vec<_>>>()?;
    let positives: Vec<(usize, &DescriptorSet, Vec<f64>)> =
        scored.into_iter().enumerate().filter_map(|(i, s)| s.map(|(ds, phi)| (i, ds, phi))).collect();
    if positives.is_empty() {
        return Err(Error::EmptyInput("no positively predicted images".into()));
    }
    let model = crate::svm::SvmModel { classes: vec![classifier.clone()], params: Default::default(), dual: None };
    let reps = params.repetitions;
    let run = |label: String, order_of: &OrderFn<'_>| {
        let jobs: Vec<(usize, usize)> = (0..positives.len()).flat_map(|p| (0..reps).map(move |r| (p, r))).collect();
        let traces = jobs
            .par_iter()
            .map(|&(p, r)| {
                let (img, ds, phi) = &positives[p];
                let order = order_of(*img, ds, phi, r)?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, *img as u64, r as u64));
                morf_replace_ordered(ds, gmm, classifier, &order, &label, params.batch, params.steps, Replacement::Gmm, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        summarise(label, &traces)
    };
    let mut orderings = Vec::with_capacity(variants.len() + 1);
    for &variant in variants {
        let label = format!("lrp-{}", variant.name());
        orderings.push(run(label, &|_, ds, phi, _| {
            let r3 = relevance_r3(&model, phi, 0)?;
            let r2 = relevance_r2(&r3, &MappingView::new(gmm, &ds.descriptors)?, variant)?;
            Ok(morf_order(&r2.values))
        })?);
    }
    orderings.push(run(format!("random({})", params.seed), &|img, ds, _, r| {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(params.seed ^ 0x5EED, img as u64, r as u64)));
        Ok(order)
    })?);
    Ok(MorfReport { images: positives.len(), params: *params, orderings })
}
