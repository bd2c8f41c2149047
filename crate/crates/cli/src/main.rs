use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use error::CliError;

/// Coin classification by eigenspace projection and Bhattacharyya-distance
/// nearest neighbour.
#[derive(Debug, Parser)]
#[command(name = "eigencoin", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Overrides the dataset split seed (and the synthetic seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat per-item failures as fatal.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Output directory for reports and generated files.
    #[arg(long, global = true, default_value = "eigencoin-out")]
    pub out: PathBuf,
    /// Override one configuration value, e.g. `--set classifier.k=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment and normalize every image of a directory.
    Preprocess { input: PathBuf },
    /// Fit a classifier on the training split of a dataset.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Model file; defaults to `<out>/model.ecm`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Classify images with a trained model; one JSON line per image.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score a trained model on the test split of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score the eigenspace classifier for several eigenvector counts.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated eigenvector counts.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
    },
    /// Train and score several methods on the same split.
    Compare {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',', default_value = "eigencoin,bdpca,wavelet,harris")]
        methods: Vec<String>,
    },
    /// Render a synthetic dataset to PNG files plus a manifest.
    Synth {
        /// Bundled preset name.
        #[arg(long, conflicts_with = "synth_config")]
        preset: Option<String>,
        /// Synthetic dataset description (JSON).
        #[arg(long)]
        synth_config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Synth { preset, synth_config } => commands::synth(g, preset.as_deref(), synth_config.as_deref()),
        command => {
            let resolved = config::resolve(g.config.as_deref(), &g.sets, g.seed)?;
            let ctx = commands::Context::new(g, resolved)?;
            match command {
                Command::Preprocess { input } => commands::preprocess(&ctx, &input),
                Command::Train { manifest, model } => commands::train(&ctx, &manifest, model),
                Command::Classify { model, images } => commands::classify(&ctx, &model, &images),
                Command::Eval { model, manifest } => commands::eval(&ctx, &model, &manifest),
                Command::Sweep { manifest, ks } => commands::sweep(&ctx, &manifest, &ks),
                Command::Compare { manifest, methods } => commands::compare(&ctx, &manifest, &methods),
                Command::Synth { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
