//! `panrestore` — command-line driver for the panchromatic restoration
//! pipeline: corpus construction, sensor simulation, training, restoration,
//! evaluation, physical image-quality measurement, quantization, and
//! throughput benchmarking.
//!
//! Every subcommand reads an optional JSON config (`--config`), validates it
//! exhaustively (reporting every violation, not only the first), validates
//! every referenced path before doing any work, writes its artifacts under
//! `--out`, and prints a JSON report to stdout. Failures print a
//! machine-readable JSON object to stderr and exit nonzero. Given identical
//! inputs, configs, and seeds, every command rewrites byte-identical
//! artifacts regardless of `--workers`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

const SCALE_KEYS: &str = "\
  scale          object — DN encoding of the TIFF rasters:
    .dn_max                highest digital number, ≥ 1 (4095)
    .radiance_at_dn_max    radiance mapped to dn_max, > 0 (163.84)";

fn dataset_build_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
  degraded       object — ranged degradation recipe, resampled per source:
    .mtf_range     [lo, hi] target MTF at Nyquist ([0.03, 0.07])
    .snr0_range    [lo, hi] SNR at radiance l0 ([8, 16])
    .snr1_range    [lo, hi] SNR at radiance l1 ([33, 46])
    .oversampling  integer GSD ratio ≥ 1 (1)
    .l0, .l1       SNR anchor radiances (25, 100)
    .seed          recipe-sampling / noise seed stream (1)
  reference      object — recipe for the training targets; same keys
                 (degenerate ranges: mtf 0.25, snr0 80, snr1 170, seed 2)
  patch          patch side in pixels, ≥ 8 (128)
  stride         patch grid step in pixels, ≥ 1 (128)
  fractions      object {{train, val, test}}, each in [0, 1], sum 1
                 (0.8 / 0.1 / 0.1); applied to whole source images
  seed           split-assignment seed; --seed overrides (0)
{SCALE_KEYS}"
    )
}

fn simulate_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
  mtf_nyq        target system MTF at Nyquist, in (0, 2/π) (0.05)
  l0, snr0       first noise anchor: radiance and SNR there (25, 50)
  l1, snr1       second noise anchor: radiance and SNR there (100, 110)
  oversampling   integer GSD ratio ≥ 1 (1)
  seed           noise seed; --seed overrides (0)
{SCALE_KEYS}"
    )
}

fn train_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
  epochs         training epochs, ≥ 1 (30)
  batch          minibatch size, ≥ 1 (16)
  lr             Adam learning rate, finite and ≥ 0 (1e-4)
  lambda_l1      weight of the L1 term, finite and ≥ 0 (1.0)
  lambda_p       weight of the perceptual term, finite and ≥ 0 (0.5)
  lambda_fft     weight of the frequency-domain term, finite and ≥ 0 (0.1)
  patch          expected training patch side, ≥ 3 (128)
  seed           shuffling / init seed; --seed overrides (0)
  init           path to a checkpoint to start from (null = fresh init)
{SCALE_KEYS}"
    )
}

fn restore_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
  tile           tile side for tiled inference, ≥ 64, or null for a
                 single full-frame pass (256)
  overlap        tile overlap, ≥ 16 and < tile/2 (32)
{SCALE_KEYS}"
    )
}

fn evaluate_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
{SCALE_KEYS}"
    )
}

fn mtf_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
{SCALE_KEYS}

The --rois file is a JSON array of edge regions:
  [{{\"x\": 10, \"y\": 10, \"w\": 64, \"h\": 64, \"kind\": \"edge\"}}, …]"
    )
}

fn snr_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
  l0             lower radiance anchor to report SNR at, > 0 (25)
  l1             upper radiance anchor to report SNR at, > 0 (100)
{SCALE_KEYS}

The --rois file is a JSON array of at least three flat regions:
  [{{\"x\": 10, \"y\": 10, \"w\": 32, \"h\": 32, \"kind\": \"flat\"}}, …]"
    )
}

fn quantize_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
  bits           quantized weight/activation width, 2–8 (8)
{SCALE_KEYS}"
    )
}

fn bench_help() -> String {
    format!(
        "\
Config keys (JSON object; every key optional, defaults in parentheses):
  width          synthetic frame width in pixels, ≥ 32 (1360)
  height         synthetic frame height in pixels, ≥ 32 (900)
  tile           tile side for tiled inference, ≥ 64 (256)
  overlap        tile overlap, ≥ 16 and < tile/2 (32)
  seed           frame-synthesis seed; --seed overrides (0)
{SCALE_KEYS}"
    )
}

#[derive(Parser)]
#[command(
    name = "panrestore",
    version,
    about = "Panchromatic restoration pipeline: simulate degradation, build \
             paired corpora, train, restore, evaluate, measure, quantize",
    after_help = "Global flags apply to every subcommand; each subcommand's \
                  --help lists the JSON config keys it accepts."
)]
pub struct Cli {
    /// JSON config file; omitted keys take defaults, unknown keys are
    /// rejected.
    #[arg(long, global = true, value_name = "path.json")]
    pub config: Option<PathBuf>,

    /// Overrides the top-level `seed` key of the subcommand's config.
    #[arg(long, global = true, value_name = "u64")]
    pub seed: Option<u64>,

    /// Worker threads for tiled inference; 0 keeps the default pool.
    /// Outputs are byte-identical for every value.
    #[arg(long, global = true, value_name = "n", default_value_t = 0)]
    pub workers: usize,

    /// Directory the command writes its artifacts into (created if absent).
    #[arg(long, global = true, value_name = "dir")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build a paired training corpus from a directory of source TIFFs
    #[command(name = "dataset-build", after_help = dataset_build_help())]
    DatasetBuild {
        /// Directory of source TIFF images (non-recursive)
        #[arg(long, value_name = "dir")]
        src: PathBuf,
    },

    /// Degrade one image through the sensor model (blur → sampling → noise)
    #[command(after_help = simulate_help())]
    Simulate {
        /// Input TIFF image
        #[arg(long, value_name = "file.tif")]
        input: PathBuf,
    },

    /// Train the restoration network on a built corpus
    #[command(after_help = train_help())]
    Train {
        /// Corpus directory holding train.json (and optionally val.json)
        #[arg(long, value_name = "dir")]
        data: PathBuf,
    },

    /// Restore an image with a trained checkpoint
    #[command(after_help = restore_help())]
    Restore {
        /// Trained model checkpoint
        #[arg(long, value_name = "file.cbrs")]
        model: PathBuf,
        /// Input TIFF image
        #[arg(long, value_name = "file.tif")]
        input: PathBuf,
    },

    /// Full-reference quality metrics between an image and its reference
    #[command(after_help = evaluate_help())]
    Evaluate {
        /// Image under test
        #[arg(long, value_name = "file.tif")]
        image: PathBuf,
        /// Reference image
        #[arg(long, value_name = "file.tif")]
        reference: PathBuf,
    },

    /// Slanted-edge MTF measurement on annotated edge regions
    #[command(after_help = mtf_help())]
    Mtf {
        /// Input TIFF image
        #[arg(long, value_name = "file.tif")]
        input: PathBuf,
        /// JSON file with the edge regions to measure
        #[arg(long, value_name = "file.json")]
        rois: PathBuf,
    },

    /// Variance-based SNR estimation on annotated flat regions
    #[command(after_help = snr_help())]
    Snr {
        /// Input TIFF image
        #[arg(long, value_name = "file.tif")]
        input: PathBuf,
        /// JSON file with the flat regions to measure
        #[arg(long, value_name = "file.json")]
        rois: PathBuf,
    },

    /// Quantize a checkpoint to low-bit integers and report output drift
    #[command(after_help = quantize_help())]
    Quantize {
        /// Trained model checkpoint
        #[arg(long, value_name = "file.cbrs")]
        model: PathBuf,
        /// Manifest whose degraded patches calibrate activation scales
        #[arg(long, value_name = "manifest.json")]
        calib: PathBuf,
        /// Optional manifest of degraded/reference pairs for drift metrics
        #[arg(long, value_name = "manifest.json")]
        pairs: Option<PathBuf>,
    },

    /// Measure tiled-inference throughput on a synthetic frame
    #[command(after_help = bench_help())]
    Bench {
        /// Checkpoint to benchmark (default: freshly initialized weights)
        #[arg(long, value_name = "file.cbrs")]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // Ignore the error: the global pool can only be set once, and a
        // pre-initialized pool only means the flag arrived too late to
        // matter — results do not depend on pool size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    }
    match commands::run(&cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::FAILURE
        }
    }
}
