//! End-to-end training of the FV and NN pipelines on a labelled corpus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{extract_dense, pca_fit, DenseParams, DescriptorSet, PcaModel};
use crate::error::{Error, Result};
use crate::gmm::{em_fit, EmParams, GmmModel};
use crate::lrp::FvPipeline;
use crate::nn::{preprocess, train_multilabel, NeuralNet, NnTrainParams, NnTrainReport};
use crate::svm::{self, SvmModel, SvmParams};
use crate::synth::LabeledImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvConfig {
    pub dense: DenseParams,
    pub pca_dim: usize,
    pub components: usize,
    pub em_iterations: usize,
    pub em_tol: f64,
    /// Every `fit_stride`-th descriptor of the training set feeds PCA and EM.
    pub fit_stride: usize,
    pub svm: SvmParams,
    pub seed: u64,
}

impl Default for FvConfig {
    fn default() -> Self {
        FvConfig {
            dense: DenseParams::default(),
            pca_dim: 16,
            components: 8,
            em_iterations: 100,
            em_tol: 1e-6,
            fit_stride: 4,
            svm: SvmParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvModels {
    pub dense: DenseParams,
    pub pca: PcaModel,
    pub gmm: GmmModel,
    pub svm: SvmModel,
}

impl FvModels {
    pub fn pipeline(&self) -> FvPipeline<'_> {
        FvPipeline { dense: self.dense, pca: &self.pca, gmm: &self.gmm, svm: &self.svm }
    }
}

/// `labels[c][i] = +1` when image `i` carries class `c`, else −1.
pub fn label_matrix(items: &[LabeledImage], classes: &[String]) -> Vec<Vec<f64>> {
    classes
        .iter()
        .map(|c| items.iter().map(|it| if it.labels.contains(c) { 1.0 } else { -1.0 }).collect())
        .collect()
}

pub fn extract_all(items: &[LabeledImage], dense: &DenseParams) -> Result<Vec<DescriptorSet>> {
    items.par_iter().map(|it| extract_dense(&it.image, dense)).collect()
}

pub fn fit_pca(raw: &[DescriptorSet], cfg: &FvConfig) -> Result<PcaModel> {
    let sample: Vec<&[f64]> = raw.iter().flat_map(|ds| ds.vectors()).step_by(cfg.fit_stride.max(1)).collect();
    pca_fit(&sample, cfg.pca_dim)
}

pub fn fit_gmm(projected: &[DescriptorSet], cfg: &FvConfig) -> Result<GmmModel> {
    let sample: Vec<&[f64]> = projected.iter().flat_map(|ds| ds.vectors()).step_by(cfg.fit_stride.max(1)).collect();
    let params = EmParams { components: cfg.components, seed: cfg.seed, max_iter: cfg.em_iterations, tol: cfg.em_tol };
    Ok(em_fit(&sample, &params)?.model)
}

pub fn fv_features(projected: &[DescriptorSet], gmm: &GmmModel) -> Result<Vec<Vec<f64>>> {
    projected
        .iter()
        .map(|ds| Ok(crate::fisher::improve(&crate::fisher::aggregate(gmm, &ds.descriptors)?.values).values))
        .collect()
}

/// Dense extraction, PCA, GMM, embedding and one-vs-rest SVMs.
pub fn fit_fv(train: &[LabeledImage], classes: &[String], cfg: &FvConfig) -> Result<FvModels> {
    if train.is_empty() {
        return Err(Error::EmptyInput("no training images".into()));
    }
    let raw = extract_all(train, &cfg.dense)?;
    let pca = fit_pca(&raw, cfg)?;
    let projected = raw.iter().map(|ds| pca.apply(ds)).collect::<Result<Vec<_>>>()?;
    let gmm = fit_gmm(&projected, cfg)?;
    let features = fv_features(&projected, &gmm)?;
    let svm = svm::train(&features, classes, &label_matrix(train, classes), &cfg.svm)?.model;
    Ok(FvModels { dense: cfg.dense, pca, gmm, svm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnConfig {
    pub side: usize,
    pub hidden: Vec<usize>,
    pub train: NnTrainParams,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig { side: 32, hidden: vec![64, 32], train: NnTrainParams::default() }
    }
}

pub fn nn_inputs(items: &[LabeledImage], side: usize) -> Result<Vec<Vec<f64>>> {
    items.par_iter().map(|it| preprocess(&it.image, side)).collect()
}

/// He-initialised ReLU network trained with the multi-label hinge loss.
pub fn fit_nn(train: &[LabeledImage], classes: &[String], cfg: &NnConfig) -> Result<NnTrainReport> {
    let net = NeuralNet::initialize(cfg.side, &cfg.hidden, classes.to_vec(), cfg.train.seed)?;
    let inputs = nn_inputs(train, cfg.side)?;
    let labels = label_matrix(train, classes);
    let targets: Vec<Vec<f64>> = (0..train.len()).map(|i| labels.iter().map(|row| row[i]).collect()).collect();
    train_multilabel(net, &inputs, &targets, &cfg.train)
}
