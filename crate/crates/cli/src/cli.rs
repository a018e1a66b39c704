use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "guidekit",
    version,
    about = "Segment retrieval and guidance compositing for semantic image synthesis"
)]
pub struct Cli {
    /// Seed for every random draw [default: 0, or the config's seed for `run`].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Pipeline config JSON; command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Train,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExcludeArg {
    Image,
    Segment,
}

/// Retrieval knobs shared by several commands.
#[derive(Args, Debug, Clone)]
pub struct RetrievalArgs {
    /// Largest accepted geometric score.
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Accept the best candidate whatever its score.
    #[arg(long, conflicts_with = "threshold")]
    pub no_threshold: bool,

    /// Weight of the shape term in the total score.
    #[arg(long)]
    pub shape_weight: Option<f64>,
}

/// One query map: label raster plus optional instance raster.
#[derive(Args, Debug, Clone)]
pub struct MapArgs {
    /// Single-channel label PNG.
    #[arg(long)]
    pub labels: PathBuf,

    /// 8- or 16-bit instance-id PNG.
    #[arg(long)]
    pub instances: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decompose a dataset into a segment database.
    BuildDb {
        /// Dataset root with images/, labels/ and optionally instances/.
        #[arg(long, env = "GUIDEKIT_ROOT")]
        root: PathBuf,
        /// Explicit entry list instead of scanning the root.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Dataset config (defaults to <root>/dataset.json).
        #[arg(long)]
        dataset_config: Option<PathBuf>,
        /// Drop segments smaller than this many pixels.
        #[arg(long, default_value_t = guidekit_core::segdb::DEFAULT_MIN_AREA)]
        min_area: u64,
        #[arg(long, env = "GUIDEKIT_DB")]
        out: PathBuf,
    },
    /// Retrieve the best segment for every region of a label map (JSONL).
    Retrieve {
        #[arg(long, env = "GUIDEKIT_DB")]
        db: PathBuf,
        #[command(flatten)]
        map: MapArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Skip every segment cut from this image.
        #[arg(long)]
        exclude_image: Option<String>,
        /// Write JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Composite a guidance image for one label map.
    Compose {
        #[arg(long, env = "GUIDEKIT_DB")]
        db: PathBuf,
        #[command(flatten)]
        map: MapArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::Test)]
        mode: ModeArg,
        /// The query's own image id; required in train mode.
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long, value_enum, default_value_t = ExcludeArg::Image)]
        exclude: ExcludeArg,
        #[arg(long)]
        out_rgb: PathBuf,
        #[arg(long)]
        out_valid: PathBuf,
        /// Per-region JSONL trace.
        #[arg(long, alias = "trace")]
        out_trace: Option<PathBuf>,
    },
    /// Distort a ground-truth image segment by segment.
    Distort {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        map: MapArgs,
        #[arg(long, env = "GUIDEKIT_DB")]
        db: PathBuf,
        #[arg(long)]
        no_color: bool,
        #[arg(long)]
        no_shape: bool,
        #[arg(long)]
        no_res: bool,
        #[arg(long)]
        out_rgb: PathBuf,
        #[arg(long)]
        out_valid: PathBuf,
        /// Per-segment JSONL report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Full pipeline over a dataset; exits non-zero if any image fails.
    Run {
        #[arg(long, env = "GUIDEKIT_ROOT")]
        root: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, env = "GUIDEKIT_DB")]
        db: Option<PathBuf>,
        #[arg(long, env = "GUIDEKIT_OUT")]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        exclude: Option<ExcludeArg>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long)]
        no_color: bool,
        #[arg(long)]
        no_shape: bool,
        #[arg(long)]
        no_res: bool,
    },
    /// Compare indexed retrieval against the brute-force oracle.
    Bench {
        /// Database to query; mutually exclusive with --synthetic.
        #[arg(long, env = "GUIDEKIT_DB", conflicts_with = "synthetic")]
        db: Option<PathBuf>,
        /// Generate a synthetic database with this many records.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check the modulation and loss formulas; exits non-zero on failure.
    VerifyModnorm {
        /// Write a sample block, parameter maps and modulated output as tensor files.
        #[arg(long)]
        fixture_dir: Option<PathBuf>,
    },
    /// Run the self-check of every module; exits non-zero on failure.
    VerifyAll,
    /// Write a small procedurally generated dataset.
    ToyDataset {
        #[arg(long, env = "GUIDEKIT_ROOT")]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        width: u32,
        #[arg(long, default_value_t = 96)]
        height: u32,
    },
}
