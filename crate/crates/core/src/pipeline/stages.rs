use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{digest, NnRule, PipelineConfig};
use crate::descriptors::{read_descriptor_cache, write_descriptor_cache, DescriptorSet};
use crate::error::{Error, Result};
use crate::evaluation::{compare_orderings, context_table, format_curve, morf_order, morf_replace_ordered, ContextRow, ContextSample, Replacement};
use crate::experiment::{extract_all, fit_gmm, fit_pca, label_matrix, nn_inputs, FvConfig};
use crate::fisher::{aggregate, improve, read_fisher_vector, write_fisher_vector};
use crate::imaging::{load_model, save_heatmap, save_model, HeatmapFormat, ModelArtifact};
use crate::lrp::{FvPipeline, R2Variant};
use crate::nn::{lrp_alphabeta, lrp_epsilon, nn_heatmap, preprocess, train_multilabel, LayerRelevance, NeuralNet};
use crate::svm::{self, SvmModel};
use crate::synth::{read_corpus, write_corpus, Corpus};
use crate::{descriptors::PcaModel, gmm::GmmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    SynthGen,
    Extract,
    PcaFit,
    GmmFit,
    Embed,
    SvmTrain,
    NnTrain,
    Predict,
    Explain,
    MorfEval,
    ContextReport,
    Verify,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::SynthGen,
        Stage::Extract,
        Stage::PcaFit,
        Stage::GmmFit,
        Stage::Embed,
        Stage::SvmTrain,
        Stage::NnTrain,
        Stage::Predict,
        Stage::Explain,
        Stage::MorfEval,
        Stage::ContextReport,
        Stage::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthGen => "synth-gen",
            Stage::Extract => "extract",
            Stage::PcaFit => "pca-fit",
            Stage::GmmFit => "gmm-fit",
            Stage::Embed => "embed",
            Stage::SvmTrain => "svm-train",
            Stage::NnTrain => "nn-train",
            Stage::Predict => "predict",
            Stage::Explain => "explain",
            Stage::MorfEval => "morf-eval",
            Stage::ContextReport => "context-report",
            Stage::Verify => "verify",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::SynthGen => &[],
            Stage::Extract | Stage::NnTrain => &[Stage::SynthGen],
            Stage::PcaFit => &[Stage::Extract],
            Stage::GmmFit => &[Stage::PcaFit],
            Stage::Embed => &[Stage::GmmFit],
            Stage::SvmTrain => &[Stage::Embed],
            Stage::Predict | Stage::Explain | Stage::MorfEval => &[Stage::SvmTrain],
            Stage::ContextReport | Stage::Verify => &[Stage::SvmTrain, Stage::NnTrain],
        }
    }

    /// Settings that influence this stage's own outputs.
    fn own_settings(self, cfg: &PipelineConfig) -> serde_json::Value {
        use serde_json::json;
        match self {
            Stage::SynthGen => json!({ "seed": cfg.seed, "corpus": cfg.corpus }),
            Stage::Extract => json!({ "patch": cfg.descriptors.patch, "stride": cfg.descriptors.stride }),
            Stage::PcaFit => json!({ "pca_dim": cfg.descriptors.pca_dim, "fit_stride": cfg.descriptors.fit_stride }),
            Stage::GmmFit => json!({ "seed": cfg.seed, "gmm": cfg.gmm }),
            Stage::Embed | Stage::Predict => json!(null),
            Stage::SvmTrain => json!({ "seed": cfg.seed, "svm": cfg.svm }),
            Stage::NnTrain => json!({
                "seed": cfg.seed, "side": cfg.nn.side, "hidden": cfg.nn.hidden, "epochs": cfg.nn.epochs,
                "learning_rate": cfg.nn.learning_rate, "batch": cfg.nn.batch
            }),
            Stage::Explain => json!({ "lrp": cfg.lrp }),
            Stage::MorfEval => json!({ "seed": cfg.seed, "lrp": cfg.lrp, "morf": cfg.morf }),
            Stage::ContextReport => json!({ "lrp": cfg.lrp, "context": cfg.context, "nn": cfg.nn }),
            Stage::Verify => json!({ "lrp": cfg.lrp, "nn": cfg.nn }),
        }
    }

    /// Hash of this stage's settings chained with its dependencies' hashes.
    pub fn key(self, cfg: &PipelineConfig) -> String {
        let deps: Vec<String> = self.dependencies().iter().map(|d| d.key(cfg)).collect();
        digest(&serde_json::json!({ "stage": self.name(), "settings": self.own_settings(cfg), "deps": deps }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

/// Written after every successful stage. Contains nothing that depends on
/// the output location, thread count or wall clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub stage_key: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<OutputRecord>,
}

/// Directory layout of one pipeline run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.root.join("manifests").join(format!("{}.json", stage.name()))
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<Manifest> {
        let text = fs::read_to_string(self.manifest_path(stage)).map_err(|_| Error::Dependency {
            stage: stage.name().into(),
            reason: format!("no {} output in {}", stage.name(), self.root.display()),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Dependency { stage: stage.name().into(), reason: format!("unreadable manifest: {e}") })
    }

    /// Refuses missing, stale or modified prerequisite outputs.
    pub fn require(&self, stage: Stage, cfg: &PipelineConfig) -> Result<Manifest> {
        let m = self.read_manifest(stage)?;
        if m.stage_key != stage.key(cfg) {
            return Err(Error::Dependency {
                stage: stage.name().into(),
                reason: format!("{} output was produced with a different configuration", stage.name()),
            });
        }
        for out in &m.outputs {
            let ok = fs::read(self.root.join(&out.path)).map(|b| sha256_hex(&b) == out.sha256).unwrap_or(false);
            if !ok {
                return Err(Error::Dependency { stage: stage.name().into(), reason: format!("cached file {} is missing or modified", out.path) });
            }
        }
        Ok(m)
    }

    fn write_manifest(&self, stage: Stage, cfg: &PipelineConfig, mut outputs: Vec<String>) -> Result<Manifest> {
        outputs.sort();
        outputs.dedup();
        let outputs = outputs
            .into_iter()
            .map(|p| Ok(OutputRecord { sha256: sha256_hex(&fs::read(self.root.join(&p))?), path: p }))
            .collect::<Result<Vec<_>>>()?;
        let inputs = stage.dependencies().iter().map(|d| (d.name().to_string(), d.key(cfg))).collect();
        let seeds = [("seed".to_string(), cfg.seed)].into_iter().collect();
        let m = Manifest { stage: stage.name().into(), stage_key: stage.key(cfg), config_hash: cfg.hash(), seeds, inputs, outputs };
        fs::create_dir_all(self.root.join("manifests"))?;
        write_text(&self.manifest_path(stage), &json_text(&m)?)?;
        Ok(m)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_text<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_kind<T>(ws: &Workspace, rel: &str, pick: impl FnOnce(ModelArtifact) -> Option<T>) -> Result<T> {
    pick(load_model(ws.path(rel))?).ok_or_else(|| Error::Parse(format!("{rel} holds the wrong model kind")))
}

/// Resolved models of the FV pipeline.
struct FvState {
    dense: crate::descriptors::DenseParams,
    pca: PcaModel,
    gmm: GmmModel,
    svm: SvmModel,
}

impl FvState {
    fn load(ws: &Workspace, cfg: &PipelineConfig) -> Result<Self> {
        ws.require(Stage::SvmTrain, cfg)?;
        Ok(FvState {
            dense: cfg.fv_config().dense,
            pca: load_kind(ws, "models/pca.json", |m| if let ModelArtifact::Pca(p) = m { Some(p) } else { None })?,
            gmm: load_kind(ws, "models/gmm.json", |m| if let ModelArtifact::Gmm(g) = m { Some(g) } else { None })?,
            svm: load_kind(ws, "models/svm.json", |m| if let ModelArtifact::Svm(s) = m { Some(s) } else { None })?,
        })
    }

    fn pipeline(&self) -> FvPipeline<'_> {
        FvPipeline { dense: self.dense, pca: &self.pca, gmm: &self.gmm, svm: &self.svm }
    }
}

fn load_net(ws: &Workspace, cfg: &PipelineConfig) -> Result<NeuralNet> {
    ws.require(Stage::NnTrain, cfg)?;
    load_kind(ws, "models/nn.json", |m| if let ModelArtifact::NeuralNet(n) = m { Some(n) } else { None })
}

fn corpus_of(ws: &Workspace) -> Result<Corpus> {
    read_corpus(ws.path("corpus"))
}

fn desc_rel(split: &str, i: usize) -> String {
    format!("cache/descriptors/{split}/{i:06}.desc")
}

fn fv_rel(split: &str, i: usize) -> String {
    format!("cache/fv/{split}/{i:06}.fv")
}

fn load_descriptors(ws: &Workspace, split: &str, count: usize) -> Result<Vec<DescriptorSet>> {
    (0..count).into_par_iter().map(|i| read_descriptor_cache(ws.path(&desc_rel(split, i)))).collect()
}

fn project_all(pca: &PcaModel, sets: &[DescriptorSet]) -> Result<Vec<DescriptorSet>> {
    sets.iter().map(|ds| pca.apply(ds)).collect()
}

fn class_index(cfg: &PipelineConfig, classes: &[String]) -> Result<usize> {
    match &cfg.lrp.class {
        None => Ok(0),
        Some(c) => classes.iter().position(|n| n == c).ok_or_else(|| Error::Usage(format!("unknown class {c:?} (classes: {})", classes.join(", ")))),
    }
}

fn nn_explain(net: &NeuralNet, cfg: &PipelineConfig, x: &[f64], class: usize) -> Result<LayerRelevance> {
    match cfg.nn.rule {
        NnRule::Epsilon => lrp_epsilon(net, x, class, cfg.nn.epsilon),
        NnRule::AlphaBeta => lrp_alphabeta(net, x, class, cfg.nn.alpha, cfg.nn.beta, true),
    }
}

fn format_indexed(values: &[f64]) -> String {
    values.iter().enumerate().map(|(i, v)| format!("{i}\t{v:e}\n")).collect()
}

/// Runs one stage, writes its manifest and returns the lines to print.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<String>> {
    let (outputs, lines) = match stage {
        Stage::SynthGen => synth_gen(cfg, ws)?,
        Stage::Extract => extract(cfg, ws)?,
        Stage::PcaFit => pca_stage(cfg, ws)?,
        Stage::GmmFit => gmm_stage(cfg, ws)?,
        Stage::Embed => embed(cfg, ws)?,
        Stage::SvmTrain => svm_stage(cfg, ws)?,
        Stage::NnTrain => nn_stage(cfg, ws)?,
        Stage::Predict => predict(cfg, ws)?,
        Stage::Explain => explain(cfg, ws)?,
        Stage::MorfEval => morf_eval(cfg, ws)?,
        Stage::ContextReport => context_report(cfg, ws)?,
        Stage::Verify => {
            let (outputs, lines, passed) = verify_stage(cfg, ws)?;
            ws.write_manifest(stage, cfg, outputs)?;
            if !passed {
                return Err(Error::Validation(format!("verification failed:\n{}", lines.join("\n"))));
            }
            return Ok(lines);
        }
    };
    ws.write_manifest(stage, cfg, outputs)?;
    Ok(lines)
}

type StageOutput = (Vec<String>, Vec<String>);

fn synth_gen(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    let corpus = cfg.corpus()?;
    let dir = ws.path("corpus");
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    let manifest = write_corpus(&corpus, &dir)?;
    let mut outputs = vec!["corpus/corpus.json".to_string()];
    for e in manifest.train.iter().chain(&manifest.test) {
        outputs.push(format!("corpus/{}", e.image));
        outputs.push(format!("corpus/{}", e.annotations));
    }
    let lines = vec![format!("generated {} train and {} test images", corpus.train.len(), corpus.test.len())];
    Ok((outputs, lines))
}

fn extract(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    ws.require(Stage::SynthGen, cfg)?;
    let corpus = corpus_of(ws)?;
    let dense = cfg.fv_config().dense;
    let mut outputs = Vec::new();
    for (split, items) in [("train", &corpus.train), ("test", &corpus.test)] {
        let sets = extract_all(items, &dense)?;
        fs::create_dir_all(ws.path(&format!("cache/descriptors/{split}")))?;
        for (i, ds) in sets.iter().enumerate() {
            let rel = desc_rel(split, i);
            write_descriptor_cache(ds, ws.path(&rel))?;
            outputs.push(rel);
        }
    }
    let per = extract_all(&corpus.train[..1], &dense)?[0].len();
    Ok((outputs, vec![format!("extracted {per} descriptors per image")]))
}

fn pca_stage(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    ws.require(Stage::Extract, cfg)?;
    let corpus = corpus_of(ws)?;
    let raw = load_descriptors(ws, "train", corpus.train.len())?;
    let pca = fit_pca(&raw, &cfg.fv_config())?;
    fs::create_dir_all(ws.path("models"))?;
    save_model(&ModelArtifact::Pca(pca.clone()), ws.path("models/pca.json"))?;
    let kept: f64 = pca.eigenvalues().iter().sum();
    Ok((vec!["models/pca.json".into()], vec![format!("pca {} -> {} (kept variance {kept:.4})", pca.input_dim(), pca.output_dim())]))
}

fn gmm_stage(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    ws.require(Stage::PcaFit, cfg)?;
    let corpus = corpus_of(ws)?;
    let pca = load_kind(ws, "models/pca.json", |m| if let ModelArtifact::Pca(p) = m { Some(p) } else { None })?;
    let projected = project_all(&pca, &load_descriptors(ws, "train", corpus.train.len())?)?;
    let fv: FvConfig = cfg.fv_config();
    let gmm = fit_gmm(&projected, &fv)?;
    save_model(&ModelArtifact::Gmm(gmm.clone()), ws.path("models/gmm.json"))?;
    Ok((vec!["models/gmm.json".into()], vec![format!("gmm K={} D={}", gmm.components(), gmm.dim())]))
}

fn embed(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    ws.require(Stage::GmmFit, cfg)?;
    let corpus = corpus_of(ws)?;
    let pca = load_kind(ws, "models/pca.json", |m| if let ModelArtifact::Pca(p) = m { Some(p) } else { None })?;
    let gmm = load_kind(ws, "models/gmm.json", |m| if let ModelArtifact::Gmm(g) = m { Some(g) } else { None })?;
    let mut outputs = Vec::new();
    for (split, n) in [("train", corpus.train.len()), ("test", corpus.test.len())] {
        let projected = project_all(&pca, &load_descriptors(ws, split, n)?)?;
        fs::create_dir_all(ws.path(&format!("cache/fv/{split}")))?;
        for (i, ds) in projected.iter().enumerate() {
            let rel = fv_rel(split, i);
            write_fisher_vector(&aggregate(&gmm, &ds.descriptors)?, ws.path(&rel))?;
            outputs.push(rel);
        }
    }
    Ok((outputs, vec![format!("embedded {} images", corpus.train.len() + corpus.test.len())]))
}

fn improved_split(ws: &Workspace, split: &str, n: usize) -> Result<Vec<Vec<f64>>> {
    (0..n).map(|i| Ok(improve(&read_fisher_vector(ws.path(&fv_rel(split, i)))?.values).values)).collect()
}

fn svm_stage(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    ws.require(Stage::Embed, cfg)?;
    let corpus = corpus_of(ws)?;
    let classes = corpus.spec.class_names();
    let features = improved_split(ws, "train", corpus.train.len())?;
    let report = svm::train(&features, &classes, &label_matrix(&corpus.train, &classes), &cfg.fv_config().svm)?;
    save_model(&ModelArtifact::Svm(report.model), ws.path("models/svm.json"))?;
    let lines = classes
        .iter()
        .zip(&report.objective_traces)
        .map(|(c, t)| format!("svm {c}: objective {:.6} -> {:.6}", t[0], t[t.len() - 1]))
        .collect();
    Ok((vec!["models/svm.json".into()], lines))
}

fn nn_stage(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    ws.require(Stage::SynthGen, cfg)?;
    let corpus = corpus_of(ws)?;
    let classes = corpus.spec.class_names();
    let nc = cfg.nn_config();
    let net = NeuralNet::initialize(nc.side, &nc.hidden, classes.clone(), nc.train.seed)?;
    let inputs = nn_inputs(&corpus.train, nc.side)?;
    let labels = label_matrix(&corpus.train, &classes);
    let targets: Vec<Vec<f64>> = (0..corpus.train.len()).map(|i| labels.iter().map(|r| r[i]).collect()).collect();
    let report = train_multilabel(net, &inputs, &targets, &nc.train)?;
    fs::create_dir_all(ws.path("models"))?;
    save_model(&ModelArtifact::NeuralNet(report.net), ws.path("models/nn.json"))?;
    let t = &report.loss_trace;
    Ok((vec!["models/nn.json".into()], vec![format!("nn loss {:.6} -> {:.6}", t[0], t[t.len() - 1])]))
}

#[derive(Serialize)]
struct PredictionRow {
    image: usize,
    labels: Vec<String>,
    scores: BTreeMap<String, f64>,
    predicted: Vec<String>,
}

fn predict(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    let fv = FvState::load(ws, cfg)?;
    let corpus = corpus_of(ws)?;
    let features = improved_split(ws, "test", corpus.test.len())?;
    let mut rows = Vec::with_capacity(features.len());
    let mut correct = 0usize;
    let mut decisions = 0usize;
    for (i, (phi, item)) in features.iter().zip(&corpus.test).enumerate() {
        let preds = svm::predict_multilabel(&fv.svm, phi, &[])?;
        for p in &preds {
            decisions += 1;
            if p.present == item.labels.contains(&p.class) {
                correct += 1;
            }
        }
        rows.push(PredictionRow {
            image: i,
            labels: item.labels.clone(),
            scores: preds.iter().map(|p| (p.class.clone(), p.score)).collect(),
            predicted: preds.iter().filter(|p| p.present).map(|p| p.class.clone()).collect(),
        });
    }
    write_text(&ws.path("reports/predictions.json"), &json_text(&rows)?)?;
    Ok((vec!["reports/predictions.json".into()], vec![format!("per-class decisions correct: {correct}/{decisions}")]))
}

fn explain(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    let fv = FvState::load(ws, cfg)?;
    let corpus = corpus_of(ws)?;
    let classes = corpus.spec.class_names();
    let class = class_index(cfg, &classes)?;
    let name = &classes[class];
    let projected = project_all(&fv.pca, &load_descriptors(ws, "test", corpus.test.len())?)?;
    let pipeline = fv.pipeline();
    let variant = cfg.lrp.variant();
    let picked: Vec<usize> = (0..corpus.test.len()).filter(|&i| corpus.test[i].labels.contains(name)).collect();
    let explanations = picked
        .par_iter()
        .map(|&i| pipeline.explain_descriptors(&projected[i], class, variant))
        .collect::<Result<Vec<_>>>()?;
    let mut outputs = Vec::new();
    let mut summary = String::from("image\tscore\theatmap_sum\n");
    for (&i, e) in picked.iter().zip(&explanations) {
        let base = format!("heatmaps/{name}/{i:06}");
        fs::create_dir_all(ws.path(&format!("heatmaps/{name}")))?;
        save_heatmap(&e.heatmap, ws.path(&format!("{base}.hmap")), HeatmapFormat::Raw)?;
        save_heatmap(&e.heatmap, ws.path(&format!("{base}.ppm")), HeatmapFormat::Rendered)?;
        write_text(&ws.path(&format!("{base}.r2.txt")), &format_indexed(&e.r2.values))?;
        write_text(&ws.path(&format!("{base}.r3.txt")), &format_indexed(&e.r3.values))?;
        for ext in ["hmap", "ppm", "r2.txt", "r3.txt"] {
            outputs.push(format!("{base}.{ext}"));
        }
        summary.push_str(&format!("{i}\t{:e}\t{:e}\n", e.score, e.heatmap.sum()));
    }
    let rel = format!("reports/explain-{name}.tsv");
    write_text(&ws.path(&rel), &summary)?;
    outputs.push(rel);
    Ok((outputs, vec![format!("explained {} test images of class {name} with variant {}", picked.len(), variant.name())]))
}

fn morf_eval(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    let fv = FvState::load(ws, cfg)?;
    let corpus = corpus_of(ws)?;
    let classes = corpus.spec.class_names();
    let class = class_index(cfg, &classes)?;
    let name = &classes[class];
    let projected = project_all(&fv.pca, &load_descriptors(ws, "test", corpus.test.len())?)?;
    let images: Vec<DescriptorSet> =
        projected.into_iter().zip(&corpus.test).filter(|(_, it)| it.labels.contains(name)).map(|(ds, _)| ds).collect();
    let mut variants = vec![cfg.lrp.variant()];
    if cfg.lrp.variant() != R2Variant::Absolute {
        variants.push(R2Variant::Absolute);
    }
    let params = cfg.morf_params();
    let classifier = &fv.svm.classes[class];
    let report = compare_orderings(&images, &fv.gmm, classifier, &variants, &params)?;
    let report_rel = format!("reports/morf-{name}.json");
    write_text(&ws.path(&report_rel), &json_text(&report)?)?;
    // one curve per image for the configured ordering, first replacement seed
    let mut curves = String::new();
    let pipeline = fv.pipeline();
    for (i, ds) in images.iter().enumerate() {
        let e = pipeline.explain_descriptors(ds, class, cfg.lrp.variant())?;
        if e.score <= 0.0 {
            continue;
        }
        let order = morf_order(&e.r2.values);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let t = morf_replace_ordered(ds, &fv.gmm, classifier, &order, "lrp", params.batch, params.steps, Replacement::Gmm, &mut rng)?;
        curves.push_str(&format!("# image {i}\n{}", format_curve(&t)));
    }
    let curves_rel = format!("reports/morf-{name}-curves.txt");
    write_text(&ws.path(&curves_rel), &curves)?;
    let lines = report
        .orderings
        .iter()
        .map(|o| format!("{}: A = {:.6} (se {:.6}), V = {:.3}", o.ordering, o.mean_a, o.std_err_a, o.quality.v))
        .collect();
    Ok((vec![report_rel, curves_rel], lines))
}

fn format_table(rows: &[ContextRow]) -> String {
    let cell = |m: Option<f64>| m.map_or("missing".to_string(), |v| format!("{v:.6}"));
    let mut out = String::from("class\tfv_mu\tfv_n\tfv_undefined\tnn_mu\tnn_n\tnn_undefined\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.class,
            cell(r.fv_mean),
            r.fv_images,
            r.fv_undefined,
            cell(r.nn_mean),
            r.nn_images,
            r.nn_undefined
        ));
    }
    out
}

/// FV and NN heatmaps for every true-positive test image.
pub fn context_samples(
    corpus: &Corpus,
    fv: &FvPipeline<'_>,
    projected: &[DescriptorSet],
    net: &NeuralNet,
    cfg: &PipelineConfig,
) -> Result<(Vec<ContextSample>, Vec<ContextSample>)> {
    let classes = corpus.spec.class_names();
    let variant = cfg.lrp.variant();
    let per_image = corpus
        .test
        .par_iter()
        .zip(projected)
        .map(|(item, ds)| -> Result<(Vec<ContextSample>, Vec<ContextSample>)> {
            let (mut f, mut n) = (Vec::new(), Vec::new());
            let x = preprocess(&item.image, net.input_side)?;
            let nn_scores = net.scores(&x)?;
            for (c, name) in classes.iter().enumerate() {
                if !item.labels.contains(name) {
                    continue;
                }
                let boxes: Vec<_> = item.boxes.iter().filter(|b| b.label == *name).cloned().collect();
                let e = fv.explain_descriptors(ds, c, variant)?;
                if e.score > 0.0 {
                    f.push(ContextSample { class: name.clone(), heatmap: e.heatmap, boxes: boxes.clone() });
                }
                if nn_scores[c] > 0.0 {
                    let rel = nn_explain(net, cfg, &x, c)?;
                    let heatmap = nn_heatmap(&rel, net.input_side, item.image.width(), item.image.height())?;
                    n.push(ContextSample { class: name.clone(), heatmap, boxes });
                }
            }
            Ok((f, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut fv_samples, mut nn_samples) = (Vec::new(), Vec::new());
    for (f, n) in per_image {
        fv_samples.extend(f);
        nn_samples.extend(n);
    }
    Ok((fv_samples, nn_samples))
}

fn context_report(cfg: &PipelineConfig, ws: &Workspace) -> Result<StageOutput> {
    let fv = FvState::load(ws, cfg)?;
    let net = load_net(ws, cfg)?;
    let corpus = corpus_of(ws)?;
    let projected = project_all(&fv.pca, &load_descriptors(ws, "test", corpus.test.len())?)?;
    let (fv_samples, nn_samples) = context_samples(&corpus, &fv.pipeline(), &projected, &net, cfg)?;
    let rows = context_table(&corpus.spec.class_names(), &fv_samples, &nn_samples, cfg.context.mode)?;
    let table = format_table(&rows);
    write_text(&ws.path("reports/context.tsv"), &table)?;
    write_text(&ws.path("reports/context.json"), &json_text(&rows)?)?;
    Ok((vec!["reports/context.tsv".into(), "reports/context.json".into()], table.lines().map(str::to_string).collect()))
}

fn verify_stage(cfg: &PipelineConfig, ws: &Workspace) -> Result<(Vec<String>, Vec<String>, bool)> {
    let fv = FvState::load(ws, cfg)?;
    let net = load_net(ws, cfg)?;
    let corpus = corpus_of(ws)?;
    let classes = corpus.spec.class_names();
    let class = class_index(cfg, &classes)?;
    let projected = project_all(&fv.pca, &load_descriptors(ws, "test", corpus.test.len())?)?;
    let nn_inputs = corpus.test.iter().map(|it| preprocess(&it.image, net.input_side)).collect::<Result<Vec<_>>>()?;
    let checks = super::verify::run_checks(&fv.pipeline(), &projected, &net, &nn_inputs, class, cfg)?;
    let passed = checks.iter().all(|c| c.passed);
    write_text(&ws.path("reports/verify.json"), &json_text(&checks)?)?;
    let lines = checks.iter().map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)).collect();
    Ok((vec!["reports/verify.json".into()], lines, passed))
}
