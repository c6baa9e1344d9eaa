use std::path::PathBuf;
use std::process::ExitCode;

use amtnet::dataset::AuxFactor;
use amtnet::signal::FeatureKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod data;
mod plot;

use config::Overrides;

/// A configuration or usage problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "amtnet", version, about = "Adversarial multi-task ship-noise recognition")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random stream; replaces the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    feature: Option<Feature>,

    /// Influential factor learned by the auxiliary branch.
    #[arg(long, global = true, value_enum)]
    factor: Option<Factor>,

    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Train the plain multi-task network.
    #[arg(long, global = true)]
    no_adversarial: bool,

    /// Use generated recordings instead of a corpus.
    #[arg(long, global = true)]
    synthetic: bool,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut WAV files into segments and cache their features.
    Extract {
        /// Directory searched recursively for WAV files (defaults to the corpus root).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Overwrite existing cache files.
        #[arg(long)]
        force: bool,
    },
    /// Write a synthetic corpus: WAV files, metadata and a split manifest.
    Synth,
    /// Train one model per seed and evaluate it on the test split.
    Train,
    /// Evaluate checkpoints on the test split and aggregate over seeds.
    Eval {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Classify every segment of a WAV file or one feature cache.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Export head embeddings and shared-layer outputs of the test split.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Remove the auxiliary branch from a checkpoint.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render a spectrogram or a 2-D embedding scatter as PNG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// WAV file or feature cache (spectrogram), or an export directory (embedding).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Wind class of the generated sample when no input is given.
        #[arg(long, default_value_t = 2)]
        wind_class: usize,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f32,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Feature {
    Spec,
    Mel,
    Cqt,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Factor {
    Range,
    Depth,
    Wind,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Spectrogram,
    Embedding,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            feature: self.feature.map(|f| match f {
                Feature::Spec => FeatureKind::Spec,
                Feature::Mel => FeatureKind::Mel,
                Feature::Cqt => FeatureKind::Cqt,
            }),
            factor: self.factor.map(|f| match f {
                Factor::Range => AuxFactor::Range,
                Factor::Depth => AuxFactor::Depth,
                Factor::Wind => AuxFactor::Wind,
            }),
            epochs: self.epochs,
            no_adversarial: self.no_adversarial,
            synthetic: self.synthetic,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::RunConfig::resolve(cli.global.config.as_deref(), &cli.global.overrides())?;
    let out = cli.global.out.clone();
    match cli.command {
        Command::Extract { input, force } => commands::extract(&cfg, input, out, force),
        Command::Synth => commands::synth(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Eval { checkpoint } => commands::eval(&cfg, &checkpoint, out),
        Command::Predict { checkpoint, input } => commands::predict(&cfg, &checkpoint, &input, out),
        Command::Embed { checkpoint } => commands::embed(&cfg, &checkpoint, out),
        Command::Prune { checkpoint } => commands::prune(&cfg, &checkpoint, out),
        Command::Plot { kind, input, wind_class, perplexity } => plot::plot(&cfg, kind, input, wind_class, perplexity, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
