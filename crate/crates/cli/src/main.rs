mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Invalid invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "sympaint",
    version,
    about = "Symmetry-constrained inpainting for grayscale brain slices"
)]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill the hole of an image: coarse fill, feature patch swap, feature inversion.
    Inpaint(InpaintArgs),
    /// Compare a result against a reference and print or append the metric row.
    Metrics(MetricsArgs),
    /// Generate a random irregular hole mask or a mask from a label map.
    Maskgen(MaskgenArgs),
    /// Deformable registration to an atlas, optionally comparing direct and inpainted paths.
    Register(RegisterArgs),
    /// Time the patch-swap kernels and optionally every pipeline stage.
    Bench(BenchArgs),
    /// Write a seeded synthetic brain slice, optionally with a lesion.
    Phantom(PhantomArgs),
    /// Inspect or create SFW1 weight files.
    #[command(subcommand)]
    Weights(WeightsCommand),
}

#[derive(Args)]
pub struct InpaintArgs {
    /// key = value file; any flag given on the command line wins.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input image (PNG or SFT1).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Hole mask (PNG or SFT1; nonzero = hole).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// SFW1 feature network; required unless --skip-refine.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Externally computed coarse prediction replacing the diffusion fill.
    #[arg(long)]
    pub coarse: Option<PathBuf>,
    /// Stop after the coarse fill.
    #[arg(long)]
    pub skip_refine: bool,
    /// Also write the coarse and swapped feature tensors.
    #[arg(long)]
    pub dump_features: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_perceptual: Option<f64>,
    #[arg(long)]
    pub lambda_sym: Option<f64>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_reconstruction: Option<f64>,
    #[arg(long)]
    pub lambda_coarse_adv: Option<f64>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    /// Patch side length in feature cells: 1, 3 or 5.
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub coarse_max_iters: Option<usize>,
    #[arg(long)]
    pub coarse_tolerance: Option<f64>,
}

#[derive(Args)]
pub struct MetricsArgs {
    /// Image under evaluation.
    #[arg(long)]
    pub result: PathBuf,
    /// Ground truth.
    #[arg(long)]
    pub reference: PathBuf,
    /// Restrict L1 to this hole.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// SFW1 network for the perceptual column.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Append the row to this CSV (header written when new).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "image")]
    pub image_name: String,
    #[arg(long, default_value = "method")]
    pub method: String,
    #[arg(long, default_value_t = sympaint::metrics::DEFAULT_MI_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
}

#[derive(Args)]
pub struct MaskgenArgs {
    /// Output path; `.png` writes 8-bit PNG, anything else SFT1.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "labels")]
    pub height: Option<usize>,
    #[arg(long, conflicts_with = "labels")]
    pub width: Option<usize>,
    /// Take height and width from this image.
    #[arg(long, conflicts_with_all = ["height", "width", "labels"])]
    pub like: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub coverage: f64,
    #[arg(long, default_value_t = 4)]
    pub walkers: usize,
    #[arg(long, default_value_t = 2)]
    pub brush_min: usize,
    #[arg(long, default_value_t = 6)]
    pub brush_max: usize,
    /// Integer label map (SFT1); the hole is where the label is in --hole-labels.
    #[arg(long, requires = "hole_labels")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub hole_labels: Vec<i64>,
}

#[derive(Args)]
pub struct RegisterArgs {
    /// Atlas image.
    #[arg(long)]
    pub fixed: PathBuf,
    /// Patient image.
    #[arg(long)]
    pub moving: PathBuf,
    /// Lesion mask, excluded from MI.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Inpainted patient; enables the direct-versus-inpainted comparison.
    #[arg(long, requires = "mask")]
    pub inpainted: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 2.0)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = sympaint::metrics::DEFAULT_MI_BINS)]
    pub bins: usize,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Per-stage wall-time CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub channels: usize,
    #[arg(long, default_value_t = 60)]
    pub height: usize,
    #[arg(long, default_value_t = 60)]
    pub width: usize,
    #[arg(long, default_value_t = 0.3)]
    pub coverage: f64,
    #[arg(long, default_value_t = 1)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also time a full pipeline run on a phantom of this side length.
    #[arg(long)]
    pub pipeline_size: Option<usize>,
    /// Network for the pipeline run; seeded random VGG layout when absent.
    #[arg(long, requires = "pipeline_size")]
    pub weights: Option<PathBuf>,
}

#[derive(Args)]
pub struct PhantomArgs {
    /// Output image; `.png` writes 16-bit PNG, anything else SFT1.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Paint a lesion with this seed and write its mask to --lesion-mask.
    #[arg(long, requires = "lesion_mask")]
    pub lesion_seed: Option<u64>,
    #[arg(long)]
    pub lesion_mask: Option<PathBuf>,
    #[arg(long, default_value_t = 7.0)]
    pub lesion_radius: f64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Layout {
    /// 64/128/256 channels, as in the pretrained feature extractor.
    Vgg,
    /// 8/16/32 channels.
    Compact,
}

#[derive(Subcommand)]
pub enum WeightsCommand {
    /// Print the layer table and the feature shape for a given input size.
    Inspect {
        path: PathBuf,
        #[arg(long, default_value_t = 240)]
        input_size: usize,
    },
    /// Write seeded random weights.
    Random {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Layout::Vgg)]
        layout: Layout,
        #[arg(long, default_value_t = 3)]
        in_channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<sympaint::Error>(),
                Some(sympaint::Error::InvalidParam(_))
            )
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Inpaint(a) => commands::inpaint(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Maskgen(a) => commands::maskgen(a),
        Command::Register(a) => commands::register(a),
        Command::Bench(a) => commands::bench(a),
        Command::Phantom(a) => commands::phantom(a),
        Command::Weights(c) => commands::weights(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
