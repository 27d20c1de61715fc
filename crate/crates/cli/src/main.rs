mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Rigid stabilization of facial expression meshes: synthetic data, a learned
/// predictor, baselines and evaluation.
#[derive(Parser)]
#[command(name = "facestab", version)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the procedural head model.
    ModelSynth(ModelSynthArgs),
    /// Generate a dataset of synthetic training pairs.
    DataGen(DataGenArgs),
    /// Train the predictor.
    Train(TrainArgs),
    /// Fit the confidence-map baseline.
    Baseline(BaselineArgs),
    /// Stabilize OBJ mesh pairs.
    Stabilize(StabilizeArgs),
    /// Score methods on a synthetic test set.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct ModelSynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum vertex count; the mesh is the smallest subdivision reaching it.
    #[arg(long)]
    pub vertices: Option<usize>,
    #[arg(long)]
    pub identity: Option<usize>,
    #[arg(long)]
    pub expression: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also export the neutral template as OBJ.
    #[arg(long)]
    pub obj: Option<PathBuf>,
}

#[derive(Args)]
pub struct DataGenArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Master seed of the per-sample seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the validation count and seed from the configuration.
    #[arg(long)]
    pub validation: bool,
    #[arg(long, value_parser = ["standard", "jaw_heavy"])]
    pub library: Option<String>,
    /// Expression noise std; defaults to 5% of the library spread.
    #[arg(long)]
    pub eps_expr: Option<f64>,
    /// Rotation noise std in degrees.
    #[arg(long)]
    pub eps_r_deg: Option<f64>,
    /// Translation noise std in mm.
    #[arg(long)]
    pub eps_t: Option<f64>,
    #[arg(long)]
    pub mask: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Final predictor file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// JSON-lines training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Use only the first N training pairs.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["original", "contrast", "contrast_consistent"])]
    pub variant: Option<String>,
    #[arg(long)]
    pub alpha_data: Option<f64>,
    #[arg(long)]
    pub alpha_reg: Option<f64>,
    #[arg(long)]
    pub alpha_sigma: Option<f64>,
    #[arg(long)]
    pub alpha_n: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Fixed step size; without it the configured grid is searched.
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training pairs taken from the start of the dataset.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Args)]
pub struct StabilizeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// ours, cmap, identity or proc_<region>.
    #[arg(long, default_value = "ours")]
    pub method: String,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long)]
    pub cmap: Option<PathBuf>,
    #[arg(long, requires_all = ["target", "out_mesh", "out_transform"], conflicts_with = "manifest")]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub out_mesh: Option<PathBuf>,
    #[arg(long)]
    pub out_transform: Option<PathBuf>,
    /// JSON list of {source, target, out_mesh, out_transform} entries.
    #[arg(long, required_unless_present = "source")]
    pub manifest: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long)]
    pub cmap: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["standard", "jaw_heavy"])]
    pub library: Option<String>,
    #[arg(long)]
    pub head_pose_deg: Option<f64>,
    #[arg(long)]
    pub unpose_noise: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::ModelSynth(a) => commands::model_synth(cfg, a),
        Command::DataGen(a) => commands::data_gen(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Baseline(a) => commands::baseline(cfg, a),
        Command::Stabilize(a) => commands::stabilize(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
