use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing or malformed argument)
  3  invalid-argument: a value is out of range or inconsistent
  4  missing-file: an input file does not exist
  5  bad-magic: an input file has the wrong magic bytes
  6  format: an input file or config is malformed
  7  shape: tensor, mask or image extents do not match
  8  non-finite: a NaN or infinity appeared
  9  io: any other filesystem error

Failures print one line to stderr: error: category=<name> message=<text>";

#[derive(Parser)]
#[command(name = "kvnet", version, about = "Dual-domain MRI reconstruction toolkit", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic ellipse phantoms and write their k-space
    #[command(after_help = EXIT_CODES)]
    Phantom {
        /// Number of slices
        #[arg(long)]
        n: usize,
        /// Image height and width (even)
        #[arg(long)]
        size: usize,
        /// Generator seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output KSP1 file
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a random Cartesian column mask
    #[command(after_help = EXIT_CODES)]
    Mask {
        /// Number of phase-encode columns (even)
        #[arg(long)]
        p: usize,
        /// Acceleration factor
        #[arg(long, default_value_t = 4.0)]
        accel: f64,
        /// Fraction of central columns always sampled
        #[arg(long, default_value_t = 0.08)]
        center_frac: f64,
        /// Mask seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output MSK1 file
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-filled reconstruction of masked k-space, exported as PGM slices
    #[command(after_help = EXIT_CODES)]
    Zerofill {
        /// Fully sampled KSP1 input
        #[arg(long)]
        ksp: PathBuf,
        /// MSK1 mask applied to every slice
        #[arg(long)]
        mask: PathBuf,
        /// Directory for slice_NNNN.pgm files
        #[arg(long)]
        out_pgm: PathBuf,
        /// Optional metrics CSV against the fully sampled reference
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a KV-Net from a JSON config {"model": {...}, "train": {...}}
    #[command(after_help = EXIT_CODES)]
    Train {
        /// Training KSP1 file
        #[arg(long)]
        train: PathBuf,
        /// Validation KSP1 file
        #[arg(long)]
        val: PathBuf,
        /// JSON run configuration
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics.csv, best.ckpt and last.ckpt
        #[arg(long)]
        out: PathBuf,
        /// Continue from <out>/last.ckpt when it exists
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint against fully sampled k-space
    #[command(after_help = EXIT_CODES)]
    Eval {
        /// CKPT checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// Fully sampled KSP1 data
        #[arg(long)]
        data: PathBuf,
        /// MSK1 mask applied to every slice
        #[arg(long)]
        mask: PathBuf,
        /// Metrics CSV output (model and zero-fill rows)
        #[arg(long)]
        csv: PathBuf,
        /// Optional directory for reconstructed slice PGMs
        #[arg(long)]
        out_pgm: Option<PathBuf>,
    },
    /// Print closed-form and instantiated parameter counts
    #[command(after_help = EXIT_CODES)]
    Params {
        /// vnet, unet, knet or kvnet
        #[arg(long)]
        arch: String,
        /// Entry channel width (V-Net width for kvnet)
        #[arg(long)]
        c: usize,
        /// Encoder/decoder levels
        #[arg(long = "L")]
        levels: usize,
        /// Cascade length for kvnet
        #[arg(long = "T", default_value_t = 12)]
        blocks: usize,
        /// K-Net entry width for kvnet
        #[arg(long, default_value_t = 8)]
        ck: usize,
    },
}

fn exit_code(category: &str) -> u8 {
    match category {
        "invalid-argument" => 3,
        "missing-file" => 4,
        "bad-magic" => 5,
        "format" => 6,
        "shape" => 7,
        "non-finite" => 8,
        _ => 9,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: category={} message={message}", e.category());
            ExitCode::from(exit_code(e.category()))
        }
    }
}
