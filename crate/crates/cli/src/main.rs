mod commands;
mod config;
mod inputs;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spine_enhance::training::Study;

#[derive(Parser)]
#[command(name = "spine-enhance", version, about = "Unsupervised chest X-ray enhancement toolkit")]
struct Cli {
    /// Emit log lines as JSON.
    #[arg(long, global = true)]
    log_json: bool,
    /// Worker threads for per-image work (default: number of processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long = "out")]
    pub out: PathBuf,
    /// Replace the outputs of an earlier run.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Detail-boost radiographs with the edge-preserving decomposition.
    Preprocess {
        #[arg(long = "in")]
        input: String,
        #[command(flatten)]
        out: OutputArgs,
        /// Run configuration supplying preprocessing parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write 32-bit float PFM instead of 8-bit PNG.
        #[arg(long)]
        lossless: bool,
    },
    /// Train one network per enhancement iteration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue after the last checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Apply trained networks to radiographs.
    Enhance {
        #[arg(long = "in")]
        input: String,
        #[command(flatten)]
        out: OutputArgs,
        /// Run directory holding `checkpoints/iter{t}.ckpt`.
        #[arg(long)]
        run: PathBuf,
        /// Number of enhancement iterations (default: every checkpoint).
        #[arg(long)]
        iterations: Option<usize>,
        /// Configuration used for training; decides whether inputs are preprocessed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lossless: bool,
    },
    /// Score images with Entropy, BRISQUE and LPC-SI.
    Evaluate {
        #[arg(long = "in")]
        input: String,
        #[command(flatten)]
        out: OutputArgs,
        /// Second image set paired with the first by sorted order; adds Wilcoxon p-values.
        #[arg(long)]
        compare: Option<String>,
        /// BRISQUE regressor file (default: cached or bundled model).
        #[arg(long)]
        regressor: Option<PathBuf>,
        /// Method name used in the report.
        #[arg(long, default_value = "images")]
        method: String,
        /// Apply the evaluation crop before scoring.
        #[arg(long)]
        crop: bool,
        /// Configuration supplying the crop geometry.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and score the ablation grids.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, value_enum, default_value = "all")]
        study: StudyArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        regressor: Option<PathBuf>,
    },
    /// Merge report JSON files into one method-by-metric table.
    Report {
        #[arg(long = "in")]
        input: String,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Fit the BRISQUE quality regressor.
    FitBrisque {
        /// CSV of `path,score` rows; the synthetic distortion corpus is used when absent.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Destination file (default: the cache directory).
        #[arg(long = "out")]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
        #[arg(long, default_value_t = 48)]
        sources: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    All,
    Guidance,
    LossVariants,
    Iterations,
    Preprocessing,
}

impl StudyArg {
    fn studies(self) -> Vec<Study> {
        match self {
            StudyArg::All => Study::ALL.to_vec(),
            StudyArg::Guidance => vec![Study::Guidance],
            StudyArg::LossVariants => vec![Study::LossVariants],
            StudyArg::Iterations => vec![Study::Iterations],
            StudyArg::Preprocessing => vec![Study::Preprocessing],
        }
    }
}

fn init_logging(json: bool) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.init();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_json);
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            tracing::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Preprocess {
            input,
            out,
            config,
            lossless,
        } => commands::preprocess(&input, &out, config.as_deref(), lossless),
        Command::Train {
            config,
            out,
            seed,
            resume,
        } => commands::train(&config, &out, seed, resume),
        Command::Enhance {
            input,
            out,
            run,
            iterations,
            config,
            lossless,
        } => commands::enhance(&input, &out, &run, iterations, config.as_deref(), lossless),
        Command::Evaluate {
            input,
            out,
            compare,
            regressor,
            method,
            crop,
            config,
        } => commands::evaluate(commands::EvaluateArgs {
            input: &input,
            out: &out,
            compare: compare.as_deref(),
            regressor: regressor.as_deref(),
            method: &method,
            crop,
            config: config.as_deref(),
        }),
        Command::Ablate {
            config,
            out,
            study,
            seed,
            regressor,
        } => commands::ablate(&config, &out, &study.studies(), seed, regressor.as_deref()),
        Command::Report { input, out } => commands::report(&input, &out),
        Command::FitBrisque {
            labels,
            out,
            overwrite,
            sources,
            size,
            seed,
        } => commands::fit_brisque(labels.as_deref(), out.as_deref(), overwrite, sources, size, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
