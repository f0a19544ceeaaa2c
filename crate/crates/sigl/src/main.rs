use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};

use sigl::commands::{self, TrainArgs};

/// Text-conditional image synthesis lab: data generation, training,
/// sampling, and evaluation for captioned shapes.
#[derive(Parser)]
#[command(name = "sigl", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a captioned-shapes dataset (train and test splits).
    GenData {
        /// Output directory; splits land in train/ and test/.
        #[arg(long)]
        out: PathBuf,
        /// Training images to generate.
        #[arg(long, default_value_t = 5000)]
        count: usize,
        /// Held-out test images to generate.
        #[arg(long, default_value_t = 500)]
        test_count: usize,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 32)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the generator/discriminator pair on a dataset.
    Train {
        /// Dataset directory (a split written by gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Run directory for logs and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// key=value overrides, one per line.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train through this absolute step count.
        #[arg(long)]
        steps: Option<u64>,
        /// Save a checkpoint every N steps (0 = only at the end).
        #[arg(long)]
        ckpt_every: Option<u64>,
        /// Condition on single captions instead of interpolated pairs.
        #[arg(long)]
        no_si: bool,
        /// Record this image's conditioning embedding each step to trace.tsv.
        #[arg(long)]
        trace_image: Option<usize>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Log zero wall-clock seconds (for reproducible logs).
        #[arg(long)]
        null_clock: bool,
    },
    /// Fit the surrogate classifier used by the metrics command.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate images for one caption.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        caption: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rebuild standing statistics from this dataset if the
        /// checkpoint's are not ready.
        #[arg(long)]
        recompute_standing: Option<PathBuf>,
    },
    /// Render each prefix of a caption arithmetic expression.
    Arith {
        #[arg(long)]
        ckpt: PathBuf,
        /// Expression like '"a red circle" - "red" + "blue"'.
        #[arg(long)]
        expr: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        recompute_standing: Option<PathBuf>,
    },
    /// Interpolate between four corner captions on a grid sheet.
    Grid {
        #[arg(long)]
        ckpt: PathBuf,
        /// Top-left caption.
        #[arg(long)]
        tl: String,
        /// Top-right caption.
        #[arg(long)]
        tr: String,
        /// Bottom-left caption.
        #[arg(long)]
        bl: String,
        /// Bottom-right caption.
        #[arg(long)]
        br: String,
        #[arg(long, default_value_t = 5)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        recompute_standing: Option<PathBuf>,
    },
    /// Score a model (or the real data) against the dataset.
    Metrics {
        /// Model checkpoint; omit with --real.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Dataset root holding train/ (reference) and test/ (captions).
        #[arg(long)]
        data: PathBuf,
        /// Surrogate classifier checkpoint.
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_samples: usize,
        /// Splits for the score's mean/std.
        #[arg(long, default_value_t = 5)]
        splits: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Score the real test images instead of generated ones.
        #[arg(long)]
        real: bool,
        #[arg(long)]
        recompute_standing: Option<PathBuf>,
    },
    /// Embed a conditioning trace into 2D and measure its spread.
    Manifold {
        /// trace.tsv written by train --trace-image.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        perplexity: Option<f64>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData {
            out,
            count,
            test_count,
            res,
            seed,
        } => commands::cmd_gen_data(&out, count, test_count, res, seed),
        Cmd::Train {
            data,
            out,
            config,
            seed,
            steps,
            ckpt_every,
            no_si,
            trace_image,
            resume,
            null_clock,
        } => commands::cmd_train(&TrainArgs {
            data,
            out,
            config,
            seed,
            steps,
            ckpt_every,
            no_si,
            trace_image,
            resume,
            null_clock,
        }),
        Cmd::TrainClassifier {
            data,
            out,
            seed,
            epochs,
        } => commands::cmd_train_classifier(&data, &out, seed, epochs),
        Cmd::Sample {
            ckpt,
            caption,
            count,
            out,
            seed,
            recompute_standing,
        } => commands::cmd_sample(
            &ckpt,
            &caption,
            count,
            &out,
            seed,
            recompute_standing.as_deref(),
        ),
        Cmd::Arith {
            ckpt,
            expr,
            out,
            seed,
            recompute_standing,
        } => commands::cmd_arith(&ckpt, &expr, &out, seed, recompute_standing.as_deref()),
        Cmd::Grid {
            ckpt,
            tl,
            tr,
            bl,
            br,
            rows,
            cols,
            out,
            seed,
            recompute_standing,
        } => commands::cmd_grid(
            &ckpt,
            &[tl, tr, bl, br],
            rows,
            cols,
            &out,
            seed,
            recompute_standing.as_deref(),
        ),
        Cmd::Metrics {
            ckpt,
            data,
            classifier,
            n_samples,
            splits,
            out,
            seed,
            real,
            recompute_standing,
        } => commands::cmd_metrics(
            ckpt.as_deref(),
            &data,
            &classifier,
            n_samples,
            splits,
            &out,
            seed,
            real,
            recompute_standing.as_deref(),
        ),
        Cmd::Manifold {
            trace,
            out,
            seed,
            perplexity,
        } => commands::cmd_manifold(&trace, &out, seed, perplexity),
    };
    if let Err(e) = result {
        eprintln!("sigl: {e}");
        process::exit(e.exit_code());
    }
}
