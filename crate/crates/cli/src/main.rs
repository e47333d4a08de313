//! `exprmap`: rig generation, adapter fitting, training, translation,
//! evaluation and export from the command line.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "exprmap", version, about = "Human-to-anime facial expression retargeting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic human/anime rig pair and its ground-truth map.
    GenRig(GenRigArgs),
    /// Fit the pose adapter between two rigs.
    FitAdapter(FitAdapterArgs),
    /// Draw expression parameters (and optional oracle labels).
    GenSamples(GenSamplesArgs),
    /// Train the translator.
    Train(TrainArgs),
    /// Map human parameters to anime coefficients.
    Translate(TranslateArgs),
    /// Landmarks of a rig posed by each row of a parameter table.
    Keypoints(KeypointsArgs),
    /// Keypoint Distance Ratio between driving and predicted landmark clips.
    EvalKdr(EvalKdrArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Write a posed rig mesh as Wavefront OBJ.
    ExportObj(ExportObjArgs),
}

#[derive(Args, Debug)]
pub struct GenRigArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = exprmap_core::synth::DEFAULT_VERTEX_COUNT)]
    pub vertices: usize,
    #[arg(long, default_value_t = exprmap_core::synth::DEFAULT_DELTA_SCALE)]
    pub delta_scale: f64,
    #[arg(long)]
    pub out_human: PathBuf,
    #[arg(long)]
    pub out_anime: PathBuf,
    /// 17 rows `b* = clamp01(G p + 0.5)`: one row of `G` per anime dimension.
    #[arg(long)]
    pub out_ground_truth: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FitTargetArg {
    Keypoints,
    Vertices,
}

#[derive(Args, Debug)]
pub struct FitAdapterArgs {
    #[arg(long)]
    pub human_rig: PathBuf,
    #[arg(long)]
    pub anime_rig: PathBuf,
    #[arg(long, default_value_t = exprmap_core::adapter::DEFAULT_LAMBDA_REG)]
    pub lambda_reg: f64,
    #[arg(long, value_enum, default_value_t = FitTargetArg::Keypoints)]
    pub target: FitTargetArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenSamplesArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = exprmap_core::rig::DEFAULT_PARAM_RANGE)]
    pub range: f64,
    /// Emit `n` neutral rows instead of random ones.
    #[arg(long)]
    pub zeros: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth CSV from `gen-rig`; required with `--out-labels`.
    #[arg(long, requires = "out_labels")]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, requires = "ground_truth")]
    pub out_labels: Option<PathBuf>,
}

/// Flags that override fields of the JSON training config.
#[derive(Args, Debug, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda_ver: Option<f64>,
    #[arg(long)]
    pub landmark_weight: Option<f64>,
    #[arg(long)]
    pub closure_weight: Option<f64>,
    /// Seeds weight initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated hidden widths, e.g. `256,256`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub leak: Option<f64>,
    #[arg(long, value_enum)]
    pub output_init: Option<OutputInitArg>,
    #[arg(long)]
    pub param_range: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OutputInitArg {
    Zero,
    Uniform,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub human_rig: PathBuf,
    #[arg(long)]
    pub anime_rig: PathBuf,
    #[arg(long)]
    pub adapter: PathBuf,
    /// Training parameters CSV.
    #[arg(long, conflicts_with = "gen_samples")]
    pub samples: Option<PathBuf>,
    /// Draw this many training samples instead of reading `--samples`.
    #[arg(long)]
    pub gen_samples: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub sample_seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub out_history: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub adapter: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct KeypointsArgs {
    #[arg(long)]
    pub rig: PathBuf,
    /// Human parameter columns for a rig with a jaw basis, `b_*` columns otherwise.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalKdrArgs {
    #[arg(long)]
    pub driving: PathBuf,
    #[arg(long)]
    pub predicted: PathBuf,
    #[arg(long)]
    pub neutral_driving: PathBuf,
    #[arg(long)]
    pub neutral_predicted: PathBuf,
    /// JSON `{"left_eye": [[i, j], ...], "right_eye": [...]}`.
    #[arg(long, required_unless_present = "rig", conflicts_with = "rig")]
    pub pairs: Option<PathBuf>,
    /// Take the eye pairs from a rig file instead.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Model to probe; a freshly initialized one when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub human_rig: PathBuf,
    #[arg(long)]
    pub anime_rig: PathBuf,
    #[arg(long)]
    pub adapter: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of expression samples the probes draw from.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long, default_value_t = exprmap_core::translator::check::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = exprmap_core::translator::check::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = exprmap_core::translator::DEFAULT_LAMBDA_VER)]
    pub lambda_ver: f64,
}

#[derive(Args, Debug)]
pub struct ExportObjArgs {
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Zero-based data row of `--params`.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
