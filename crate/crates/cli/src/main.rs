mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Convolutional networks on grid data.
#[derive(Parser)]
#[command(name = "convgrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply an operator to a grid file.
    Convolve(ConvolveArgs),
    /// Generate a synthetic dataset.
    Synth {
        /// `<generator>[:key=value,...]`, e.g. `edges2d:n=200,seed=1`.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a dataset by a seeded shuffle.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        /// Colon-separated part proportions.
        #[arg(long, default_value = "3:1:2")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One output file per ratio.
        #[arg(long = "out", required = true)]
        outs: Vec<PathBuf>,
    },
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Report RMSE or accuracy and confusion matrix.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Compare backpropagation with central differences.
    Gradcheck(GradcheckArgs),
    /// Input attribution for one sample.
    Saliency(SaliencyArgs),
}

#[derive(Args)]
pub struct ConvolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Named operator or an operator-bank file.
    #[arg(long)]
    pub op: String,
    /// Per-axis zero padding, comma separated; one value applies to all axes.
    #[arg(long, default_value = "0")]
    pub pad: String,
    #[arg(long, default_value = "1")]
    pub stride: String,
    /// True convolution (rotated kernels) instead of cross-correlation.
    #[arg(long)]
    pub mirror: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Network spec; omit to draw a random one of `--rank`.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long, default_value_t = convgrid::check::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Target values (comma separated) or class index. Classification
    /// heads default to the predicted class.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    /// Integrated gradients instead of the plain gradient.
    #[arg(long)]
    pub ig: bool,
    #[arg(long, default_value_t = convgrid::saliency::DEFAULT_IG_STEPS)]
    pub steps: usize,
    /// Baseline grid file; zeros by default.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Channel-max mask as PGM (rank-2 inputs).
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Print the time-averaged ranking of variable rows (rank-2 inputs).
    #[arg(long)]
    pub rank_variables: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CONVGRID_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Convolve(a) => commands::convolve(&a),
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Split {
            dataset,
            ratios,
            seed,
            outs,
        } => commands::split(&dataset, &ratios, seed, &outs),
        Command::Train { config } => commands::train(&config),
        Command::Eval { checkpoint, dataset } => commands::eval(&checkpoint, &dataset),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Saliency(a) => commands::saliency(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
