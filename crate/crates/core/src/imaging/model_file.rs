//! Versioned JSON model files.
//!
//! Every file is an object `{"format": "fvlrp-model", "version": "1",
//! "kind": ..., "body": ...}`. Reals are written in shortest round-trip
//! decimal form so a load after save reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::descriptors::PcaModel;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::nn::{Activation, DenseLayer, NeuralNet};
use crate::svm::{ClassModel, DualView, SvmModel, SvmParams};

pub const MODEL_SCHEMA: &str = "fvlrp-model";
pub const MODEL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub enum ModelArtifact {
    Gmm(GmmModel),
    Pca(PcaModel),
    Svm(SvmModel),
    NeuralNet(NeuralNet),
}

impl ModelArtifact {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelArtifact::Gmm(_) => "gmm",
            ModelArtifact::Pca(_) => "pca",
            ModelArtifact::Svm(_) => "svm",
            ModelArtifact::NeuralNet(_) => "nn",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GmmBlock {
    weight: f64,
    mean: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmmBody {
    components: usize,
    dim: usize,
    blocks: Vec<GmmBlock>,
}

#[derive(Serialize, Deserialize)]
struct PcaBody {
    input_dim: usize,
    output_dim: usize,
    whiten: bool,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ClassBody {
    name: String,
    weights: Vec<f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct DualBody {
    support: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SvmBody {
    params: SvmParams,
    classes: Vec<ClassBody>,
    dual: Option<DualBody>,
}

#[derive(Serialize, Deserialize)]
struct LayerBody {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetBody {
    input_side: usize,
    classes: Vec<String>,
    layers: Vec<LayerBody>,
}

fn to_value<T: Serialize>(body: &T) -> Value {
    serde_json::to_value(body).expect("model bodies always serialize")
}

fn from_value<T: for<'de> Deserialize<'de>>(body: Value) -> Result<T> {
    serde_json::from_value(body).map_err(|e| Error::Parse(format!("model body: {e}")))
}

fn body_of(artifact: &ModelArtifact) -> Value {
    match artifact {
        ModelArtifact::Gmm(g) => to_value(&GmmBody {
            components: g.components(),
            dim: g.dim(),
            blocks: (0..g.components())
                .map(|k| GmmBlock { weight: g.weight(k), mean: g.mean(k).to_vec(), sigma: g.sigma(k).to_vec() })
                .collect(),
        }),
        ModelArtifact::Pca(p) => to_value(&PcaBody {
            input_dim: p.input_dim(),
            output_dim: p.output_dim(),
            whiten: p.whiten(),
            mean: p.mean().to_vec(),
            eigenvalues: p.eigenvalues().to_vec(),
            basis: (0..p.output_dim()).map(|i| p.basis_row(i).to_vec()).collect(),
        }),
        ModelArtifact::Svm(s) => to_value(&SvmBody {
            params: s.params,
            classes: s
                .classes
                .iter()
                .map(|c| ClassBody { name: c.name.clone(), weights: c.weights.clone(), bias: c.bias })
                .collect(),
            dual: s.dual.as_ref().map(|d| DualBody { support: d.support.clone(), coefficients: d.coefficients.clone() }),
        }),
        ModelArtifact::NeuralNet(n) => to_value(&NetBody {
            input_side: n.input_side,
            classes: n.classes.clone(),
            layers: n
                .layers
                .iter()
                .map(|l| LayerBody {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    activation: l.activation,
                    weights: l.weights.chunks(l.inputs.max(1)).map(<[f64]>::to_vec).collect(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }),
    }
}

pub fn serialize_model(artifact: &ModelArtifact) -> Vec<u8> {
    let doc = serde_json::json!({
        "format": MODEL_SCHEMA,
        "version": MODEL_VERSION,
        "kind": artifact.kind(),
        "body": body_of(artifact),
    });
    let mut out = serde_json::to_vec_pretty(&doc).expect("model documents always serialize");
    out.push(b'\n');
    out
}

fn field<'a>(doc: &'a Value, name: &str) -> Result<&'a Value> {
    doc.get(name).ok_or_else(|| Error::Parse(format!("missing field {name:?}")))
}

fn string_field<'a>(doc: &'a Value, name: &str) -> Result<&'a str> {
    field(doc, name)?.as_str().ok_or_else(|| Error::Parse(format!("field {name:?} must be a string")))
}

fn invalid(e: Error) -> Error {
    match e {
        Error::Parse(_) => e,
        other => Error::Parse(format!("inconsistent model: {other}")),
    }
}

pub fn deserialize_model(bytes: &[u8]) -> Result<ModelArtifact> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("model file: {e}")))?;
    let format = string_field(&doc, "format")?;
    if format != MODEL_SCHEMA {
        return Err(Error::Parse(format!("not a model file (format {format:?})")));
    }
    let version = string_field(&doc, "version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version { found: version.to_string(), expected: MODEL_VERSION.to_string() });
    }
    let kind = string_field(&doc, "kind")?;
    let body = field(&doc, "body")?.clone();
    match kind {
        "gmm" => {
            let b: GmmBody = from_value(body)?;
            if b.blocks.len() != b.components {
                return Err(Error::Parse(format!("{} components declared, {} blocks present", b.components, b.blocks.len())));
            }
            let mut weights = Vec::with_capacity(b.components);
            let (mut means, mut sigmas) = (Vec::new(), Vec::new());
            for (k, blk) in b.blocks.into_iter().enumerate() {
                if blk.mean.len() != b.dim || blk.sigma.len() != b.dim {
                    return Err(Error::Parse(format!("component {k} does not have dimension {}", b.dim)));
                }
                weights.push(blk.weight);
                means.extend(blk.mean);
                sigmas.extend(blk.sigma);
            }
            GmmModel::new(b.dim, weights, means, sigmas).map(ModelArtifact::Gmm).map_err(invalid)
        }
        "pca" => {
            let b: PcaBody = from_value(body)?;
            if b.basis.len() != b.output_dim || b.mean.len() != b.input_dim || b.basis.iter().any(|r| r.len() != b.input_dim) {
                return Err(Error::Parse("pca basis does not match declared dimensions".into()));
            }
            let basis = b.basis.into_iter().flatten().collect();
            PcaModel::new(b.mean, basis, b.eigenvalues, b.whiten).map(ModelArtifact::Pca).map_err(invalid)
        }
        "svm" => {
            let b: SvmBody = from_value(body)?;
            let dim = b.classes.first().map(|c| c.weights.len()).unwrap_or(0);
            if b.classes.is_empty() || b.classes.iter().any(|c| c.weights.len() != dim) {
                return Err(Error::Parse("svm classes must be non-empty and share one dimension".into()));
            }
            let dual = match b.dual {
                Some(d) => {
                    if d.coefficients.len() != b.classes.len()
                        || d.coefficients.iter().any(|c| c.len() != d.support.len())
                        || d.support.iter().any(|s| s.len() != dim)
                    {
                        return Err(Error::Parse("svm dual view does not match the classes".into()));
                    }
                    Some(DualView { support: d.support, coefficients: d.coefficients })
                }
                None => None,
            };
            let classes = b.classes.into_iter().map(|c| ClassModel { name: c.name, weights: c.weights, bias: c.bias }).collect();
            Ok(ModelArtifact::Svm(SvmModel { classes, params: b.params, dual }))
        }
        "nn" => {
            let b: NetBody = from_value(body)?;
            let layers = b
                .layers
                .into_iter()
                .map(|l| {
                    if l.weights.len() != l.outputs || l.weights.iter().any(|r| r.len() != l.inputs) {
                        return Err(Error::Parse("layer weights do not match declared shape".into()));
                    }
                    DenseLayer::new(l.inputs, l.outputs, l.weights.into_iter().flatten().collect(), l.bias, l.activation)
                        .map_err(invalid)
                })
                .collect::<Result<Vec<_>>>()?;
            NeuralNet::new(b.input_side, layers, b.classes).map(ModelArtifact::NeuralNet).map_err(invalid)
        }
        other => Err(Error::Parse(format!("unknown model kind {other:?}"))),
    }
}

pub fn save_model(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serialize_model(artifact))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    deserialize_model(&std::fs::read(path)?)
}
