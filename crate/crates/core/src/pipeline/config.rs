use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{ContextMode, MorfParams};
use crate::experiment::{FvConfig, NnConfig};
use crate::gmm::EmParams;
use crate::lrp::R2Variant;
use crate::nn::NnTrainParams;
use crate::svm::SvmParams;
use crate::synth::{generate_corpus, inject_artefact, Corpus, CorpusSpec, TagPatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub classes: usize,
    pub rho: f64,
    pub train: usize,
    pub test: usize,
    pub object_min: usize,
    pub object_max: usize,
    /// Stamp the corner tag on every image of this class.
    pub artefact_class: Option<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { classes: 2, rho: 1.0, train: 200, test: 40, object_min: 20, object_max: 28, artefact_class: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorSection {
    pub patch: usize,
    pub stride: usize,
    pub pca_dim: usize,
    pub fit_stride: usize,
}

impl Default for DescriptorSection {
    fn default() -> Self {
        DescriptorSection { patch: 16, stride: 4, pca_dim: 16, fit_stride: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub components: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmSection {
    fn default() -> Self {
        let d = EmParams::default();
        GmmSection { components: d.components, max_iter: d.max_iter, tol: d.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmSection {
    fn default() -> Self {
        let d = SvmParams::default();
        SvmSection { c: d.c, epochs: d.epochs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NnRule {
    Epsilon,
    AlphaBeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSection {
    pub side: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub rule: NnRule,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for NnSection {
    fn default() -> Self {
        let d = NnTrainParams::default();
        NnSection {
            side: 32,
            hidden: vec![64, 32],
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch: d.batch,
            rule: NnRule::Epsilon,
            epsilon: 1.0,
            alpha: 2.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Plain,
    Eps,
    Abs,
}

impl std::str::FromStr for VariantName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(VariantName::Plain),
            "eps" => Ok(VariantName::Eps),
            "abs" => Ok(VariantName::Abs),
            other => Err(Error::Usage(format!("unknown variant {other:?} (expected plain, eps or abs)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrpSection {
    pub variant: VariantName,
    pub epsilon: f64,
    /// Class to explain; defaults to the first class.
    pub class: Option<String>,
}

impl Default for LrpSection {
    fn default() -> Self {
        LrpSection { variant: VariantName::Eps, epsilon: 100.0, class: None }
    }
}

impl LrpSection {
    pub fn variant(&self) -> R2Variant {
        match self.variant {
            VariantName::Plain => R2Variant::Plain,
            VariantName::Eps => R2Variant::Epsilon { epsilon: self.epsilon },
            VariantName::Abs => R2Variant::Absolute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorfSection {
    pub batch: usize,
    pub steps: usize,
    pub repetitions: usize,
}

impl Default for MorfSection {
    fn default() -> Self {
        let d = MorfParams::default();
        MorfSection { batch: d.batch, steps: d.steps, repetitions: d.repetitions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    pub mode: ContextMode,
}

impl Default for ContextSection {
    fn default() -> Self {
        ContextSection { mode: ContextMode::Positive }
    }
}

/// All pipeline settings. Loaded from TOML; command-line flags override
/// file values, which override the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub descriptors: DescriptorSection,
    pub gmm: GmmSection,
    pub svm: SvmSection,
    pub nn: NnSection,
    pub lrp: LrpSection,
    pub morf: MorfSection,
    pub context: ContextSection,
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<VariantName>,
    pub epsilon: Option<f64>,
    pub class: Option<String>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(v) = overrides.variant {
            cfg.lrp.variant = v;
        }
        if let Some(e) = overrides.epsilon {
            cfg.lrp.epsilon = e;
        }
        if let Some(c) = &overrides.class {
            cfg.lrp.class = Some(c.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.descriptors.stride == 0 || self.descriptors.pca_dim == 0 || self.descriptors.fit_stride == 0 {
            return bad("descriptor stride, pca_dim and fit_stride must be at least 1");
        }
        if self.gmm.components == 0 {
            return bad("gmm.components must be at least 1");
        }
        if self.lrp.epsilon.is_nan() || self.lrp.epsilon <= 0.0 {
            return bad("lrp.epsilon must be positive");
        }
        if self.morf.batch == 0 || self.morf.steps == 0 || self.morf.repetitions == 0 {
            return bad("morf batch, steps and repetitions must be at least 1");
        }
        if self.nn.side == 0 || self.nn.batch == 0 || self.nn.epsilon < 0.0 {
            return bad("nn side and batch must be at least 1 and epsilon non-negative");
        }
        let spec = self.corpus_spec()?;
        if let Some(c) = &self.corpus.artefact_class {
            if !spec.class_names().contains(c) {
                return Err(Error::Validation(format!("artefact class {c:?} is not in the corpus")));
            }
        }
        Ok(())
    }

    /// The synthetic corpus, with the tag stamped on every train and test
    /// image of `corpus.artefact_class` when set.
    pub fn corpus(&self) -> Result<Corpus> {
        let mut corpus = generate_corpus(&self.corpus_spec()?)?;
        if let Some(class) = &self.corpus.artefact_class {
            let tag = self.tag();
            for item in corpus.train.iter_mut().chain(corpus.test.iter_mut()) {
                *item = inject_artefact(item, class, &tag)?;
            }
        }
        Ok(corpus)
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec> {
        let mut spec = CorpusSpec::standard(self.corpus.classes, self.corpus.rho, self.seed)?;
        spec.train = self.corpus.train;
        spec.test = self.corpus.test;
        spec.object_min = self.corpus.object_min;
        spec.object_max = self.corpus.object_max;
        spec.validate()?;
        Ok(spec)
    }

    pub fn tag(&self) -> TagPatch {
        TagPatch::default()
    }

    pub fn fv_config(&self) -> FvConfig {
        FvConfig {
            dense: crate::descriptors::DenseParams { patch: self.descriptors.patch, stride: self.descriptors.stride },
            pca_dim: self.descriptors.pca_dim,
            components: self.gmm.components,
            em_iterations: self.gmm.max_iter,
            em_tol: self.gmm.tol,
            fit_stride: self.descriptors.fit_stride,
            svm: SvmParams { c: self.svm.c, epochs: self.svm.epochs, seed: self.seed },
            seed: self.seed,
        }
    }

    pub fn nn_config(&self) -> NnConfig {
        NnConfig {
            side: self.nn.side,
            hidden: self.nn.hidden.clone(),
            train: NnTrainParams {
                epochs: self.nn.epochs,
                learning_rate: self.nn.learning_rate,
                batch: self.nn.batch,
                seed: self.seed,
            },
        }
    }

    pub fn morf_params(&self) -> MorfParams {
        MorfParams { batch: self.morf.batch, steps: self.morf.steps, repetitions: self.morf.repetitions, seed: self.seed }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// SHA-256 over the canonical JSON form of the whole configuration.
    pub fn hash(&self) -> String {
        digest(self)
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values always serialize");
    hex::encode(Sha256::digest(&json))
}

pub fn default_out_dir() -> PathBuf {
    PathBuf::from("fvlrp-out")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 5\n[lrp]\nepsilon = 3.0\n[gmm]\ncomponents = 4\n").unwrap();
        let cfg = PipelineConfig::resolve(Some(&path), &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lrp.epsilon, 3.0);
        assert_eq!(cfg.gmm.components, 4);
        assert_eq!(cfg.svm.c, 1.0);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(Error::Usage(_))));
    }

    #[test]
    fn toml_round_trip_and_stable_hash() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
    }
}
