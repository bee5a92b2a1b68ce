//! Stage-per-subcommand orchestration with on-disk caches and manifests.

mod config;
mod stages;
mod verify;

pub use config::{
    default_out_dir, digest, ContextSection, CorpusSection, DescriptorSection, GmmSection, LrpSection, MorfSection, NnRule,
    NnSection, Overrides, PipelineConfig, SvmSection, VariantName,
};
pub use stages::{context_samples, run_stage, Manifest, OutputRecord, Stage, Workspace};
pub use verify::{run_checks, CheckResult};
