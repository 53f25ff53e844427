use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "face4d", version, about = "Multi-view RGB-D 4D face reconstruction")]
pub struct Cli {
    /// Flat `key = value` file of default flag values; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic morphable face model container.
    SynthModel(SynthModelArgs),
    /// Render a synthetic multi-camera RGB-D capture with ground truth.
    SynthScene(SynthSceneArgs),
    /// Refine camera extrinsics with landmarks and point-to-plane ICP.
    Calibrate(CalibrateArgs),
    /// Fit the face model to every frame of one or more scenes.
    Reconstruct(ReconstructArgs),
    /// Region errors between a predicted and a ground-truth sequence.
    Metrics(MetricsArgs),
    /// Lip velocity, durations and region correlation over sequences.
    Stats(StatsArgs),
    /// Finite-difference checks of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthModelArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 642)]
    pub vertices: usize,
    #[arg(long, default_value_t = 80)]
    pub k_id: usize,
    #[arg(long, default_value_t = 64)]
    pub k_exp: usize,
    #[arg(long, default_value_t = 80)]
    pub k_tex: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthSceneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 3)]
    pub cameras: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of additive depth noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_mm: f64,
    #[arg(long, default_value_t = 96)]
    pub image_size: u32,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Rotate non-master extrinsics in scene.json by this many degrees.
    #[arg(long, requires = "perturb_m")]
    pub perturb_deg: Option<f64>,
    /// Translate non-master extrinsics in scene.json by this many meters.
    #[arg(long, requires = "perturb_deg")]
    pub perturb_m: Option<f64>,
    /// Amplitude of a fixed smooth deformation outside the model space.
    #[arg(long, default_value_t = 0.0)]
    pub detail: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Refine on every frame, warm-started from the previous one.
    #[arg(long)]
    pub every_frame: bool,
    /// Pixel stride of the depth point clouds.
    #[arg(long, default_value_t = 1)]
    pub stride: u32,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Scene directory; repeat to reconstruct several scenes.
    #[arg(long, required = true)]
    pub scene: Vec<PathBuf>,
    /// Output directory; with several scenes each gets a subdirectory named
    /// after its scene directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `calibration.json` from `calibrate`, overriding the scene extrinsics.
    #[arg(long)]
    pub extrinsics: Option<PathBuf>,
    /// Scenes reconstructed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub lambda_lm: Option<f64>,
    #[arg(long)]
    pub lambda_p: Option<f64>,
    #[arg(long)]
    pub lambda_e: Option<f64>,
    #[arg(long)]
    pub lambda_lap: Option<f64>,
    #[arg(long)]
    pub lambda_op: Option<f64>,
    #[arg(long)]
    pub lr_first: Option<f64>,
    #[arg(long)]
    pub lr_seq: Option<f64>,
    #[arg(long)]
    pub lr_offset_scale: Option<f64>,
    /// Iterations for landmark, 3DMM, vertex and per-frame stages.
    #[arg(long, value_name = "A,B,C,D")]
    pub iters: Option<String>,
    #[arg(long)]
    pub depth_trunc_m: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    /// Model whose regions define the metrics.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sequence container directories.
    #[arg(long, required = true, num_args = 1..)]
    pub sequences: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SVG with the scatter, histogram and graph panels.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Comma-separated regions for the correlation graph (default: all
    /// model regions except `face`).
    #[arg(long, value_delimiter = ',')]
    pub regions: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Restrict to these suites (repeatable).
    #[arg(long)]
    pub suite: Vec<String>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value = "gradcheck-report")]
    pub out: PathBuf,
}
