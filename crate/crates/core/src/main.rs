use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fvlrp::pipeline::{default_out_dir, run_stage, Overrides, PipelineConfig, Stage, VariantName, Workspace};
use fvlrp::Error;

#[derive(Parser, Debug)]
#[command(name = "fvlrp", version, about = "Fisher Vector classification with layer-wise relevance propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker cap; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = ["plain", "eps", "abs"])]
    variant: Option<String>,
    #[arg(long, global = true, value_name = "F")]
    epsilon: Option<f64>,
    #[arg(long, global = true, value_name = "NAME")]
    class: Option<String>,
    /// Output directory holding caches, models and reports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic corpus.
    SynthGen,
    /// Extract dense descriptors.
    Extract,
    /// Fit the descriptor PCA.
    PcaFit,
    /// Fit the GMM on projected descriptors.
    GmmFit,
    /// Compute raw Fisher vectors.
    Embed,
    /// Train one linear SVM per class.
    SvmTrain,
    /// Train the toy network.
    NnTrain,
    /// Score the test split.
    Predict,
    /// Write FV heatmaps for the selected class.
    Explain,
    /// Compare MoRF orderings.
    MorfEval,
    /// Tabulate in-box versus out-of-box relevance.
    ContextReport,
    /// Run the invariant checks.
    Verify,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::SynthGen => Stage::SynthGen,
            Command::Extract => Stage::Extract,
            Command::PcaFit => Stage::PcaFit,
            Command::GmmFit => Stage::GmmFit,
            Command::Embed => Stage::Embed,
            Command::SvmTrain => Stage::SvmTrain,
            Command::NnTrain => Stage::NnTrain,
            Command::Predict => Stage::Predict,
            Command::Explain => Stage::Explain,
            Command::MorfEval => Stage::MorfEval,
            Command::ContextReport => Stage::ContextReport,
            Command::Verify => Stage::Verify,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 1,
        Error::Dependency { .. } => 2,
        _ => 3,
    }
}

fn run(cli: &Cli) -> Result<Vec<String>, Error> {
    let variant = cli.variant.as_deref().map(str::parse::<VariantName>).transpose()?;
    let overrides = Overrides { seed: cli.seed, variant, epsilon: cli.epsilon, class: cli.class.clone() };
    let cfg = PipelineConfig::resolve(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot size thread pool: {e}")))?;
    }
    let ws = Workspace::new(cli.out.clone().unwrap_or_else(default_out_dir));
    run_stage(cli.command.stage(), &cfg, &ws)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
