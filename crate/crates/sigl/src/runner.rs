//! The training loop driver: epoch scheduling, logging, checkpoint cadence,
//! and the conditioning trace. Everything here is a pure function of
//! (dataset, config, step index) — batch order comes from a per-epoch keyed
//! permutation and each step draws from its own keyed stream — so a resumed
//! run continues the uninterrupted one bit for bit, and the log is the one
//! place wall time is allowed to leak in (through an injectable clock).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sigl_core::cond::{sample_interpolation, Phase};
use sigl_core::rng::{Domain, StreamRng};
use sigl_core::tensor::Tensor;
use sigl_core::text::TextEncoder;
use sigl_core::train::{recompute_standing_stats, train_step};

use crate::dataset::{DataError, Dataset};
use crate::state::TrainState;

/// Progress clock for log lines. The wall clock is the default; the null
/// clock writes zeros so two runs of the same seed produce byte-identical
/// logs.
pub trait Clock {
    fn seconds(&mut self) -> f64;
}

pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn seconds(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&mut self) -> f64 {
        0.0
    }
}

/// One training log line; field order here is the column order in the file.
#[derive(Debug, Serialize)]
pub struct LogLine {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub real_logit_mean: f64,
    pub fake_logit_mean: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub enum RunError {
    Data(DataError),
    State(crate::state::StateError),
    Core(sigl_core::error::Error),
    Io(std::io::Error),
    Setup(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Data(e) => write!(f, "{e}"),
            RunError::State(e) => write!(f, "{e}"),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "run io: {e}"),
            RunError::Setup(s) => write!(f, "run setup: {s}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<DataError> for RunError {
    fn from(e: DataError) -> Self {
        RunError::Data(e)
    }
}

impl From<crate::state::StateError> for RunError {
    fn from(e: crate::state::StateError) -> Self {
        RunError::State(e)
    }
}

impl From<sigl_core::error::Error> for RunError {
    fn from(e: sigl_core::error::Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// The dataset lifted into tensors: images in [−1,1] and one [10, embed_dim]
/// caption-embedding matrix per image, plus the flattened caption pool the
/// standing-statistics passes draw from.
pub struct LoadedCorpus {
    pub images: Vec<Tensor<f32>>,
    pub caption_sets: Vec<Tensor<f32>>,
    pub caption_pool: Tensor<f32>,
    pub res: usize,
    /// Surrogate class (color × shape) per image.
    pub classes: Vec<usize>,
}

pub fn load_corpus(dir: &Path, encoder: &TextEncoder) -> Result<LoadedCorpus, RunError> {
    let ds = Dataset::load(dir)?;
    let ed = encoder.embed_dim;
    let n = ds.len();
    let mut images = Vec::with_capacity(n);
    let mut caption_sets = Vec::with_capacity(n);
    let mut pool = Vec::with_capacity(n * 10 * ed);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let img = ds.image(i)?;
        images.push(Tensor::from_vec(
            img.shape(),
            img.data().iter().map(|&v| v as f32).collect(),
        )?);
        let rec = &ds.manifest.records[i];
        let mut rows = Vec::with_capacity(10 * ed);
        for caption in &rec.captions {
            let e = encoder.encode(caption)?;
            rows.extend(e.iter().map(|&v| v as f32));
            pool.extend(e.iter().map(|&v| v as f32));
        }
        caption_sets.push(Tensor::from_vec(&[10, ed], rows)?);
        classes.push(rec.spec.class());
    }
    Ok(LoadedCorpus {
        images,
        caption_sets,
        caption_pool: Tensor::from_vec(&[n * 10, ed], pool)?,
        res: ds.manifest.res,
        classes,
    })
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Record the traced image's per-step conditioning vector to trace.tsv.
    pub trace_image: Option<usize>,
}

/// Batch row indices for one step: slice of the epoch's keyed permutation.
pub fn batch_indices(seed: u64, n: usize, batch: usize, step: u64) -> Vec<usize> {
    let spe = (n / batch) as u64;
    let epoch = step / spe;
    let pos = (step % spe) as usize;
    let perm = StreamRng::new(seed, Domain::Shuffle, epoch).permutation(n);
    perm[pos * batch..(pos + 1) * batch].to_vec()
}

pub fn train_log_path(out: &Path) -> PathBuf {
    out.join("train_log.jsonl")
}

pub fn final_ckpt_path(out: &Path) -> PathBuf {
    out.join("final.ckpt")
}

pub fn step_ckpt_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("step_{step:06}.ckpt"))
}

pub fn trace_path(out: &Path) -> PathBuf {
    out.join("trace.tsv")
}

/// Run (or continue) training until `state.train_cfg.steps` steps are done,
/// then refresh the averaged generator's standing statistics and write the
/// final checkpoint. Returns the number of steps executed by this call.
pub fn run_training(
    state: &mut TrainState<f32>,
    corpus: &LoadedCorpus,
    opts: &RunOptions,
    ckpt_every: u64,
    clock: &mut dyn Clock,
) -> Result<u64, RunError> {
    let cfg = state.train_cfg;
    let n = corpus.images.len();
    if n < cfg.batch {
        return Err(RunError::Setup(format!(
            "{n} training images cannot fill a batch of {}",
            cfg.batch
        )));
    }
    if corpus.res != state.net_cfg.target_res {
        return Err(RunError::Setup(format!(
            "dataset resolution {} vs network {}",
            corpus.res, state.net_cfg.target_res
        )));
    }
    if let Some(t) = opts.trace_image {
        if t >= n {
            return Err(RunError::Setup(format!(
                "trace image {t} outside the {n}-image corpus"
            )));
        }
    }
    fs::create_dir_all(&opts.out_dir)?;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(train_log_path(&opts.out_dir))?;
    let mut trace: Vec<(u64, Vec<f32>)> = Vec::new();

    let (res, ed) = (corpus.res, state.net_cfg.embed_dim);
    let done_before = state.step;
    let mut last = clock.seconds();
    for step in state.step..cfg.steps {
        let idx = batch_indices(cfg.seed, n, cfg.batch, step);
        let mut batch = Tensor::zeros(&[cfg.batch, 3, res, res]);
        let stride = 3 * res * res;
        for (row, &i) in idx.iter().enumerate() {
            batch.data_mut()[row * stride..(row + 1) * stride]
                .copy_from_slice(corpus.images[i].data());
        }
        let sets: Vec<Tensor<f32>> = idx.iter().map(|&i| corpus.caption_sets[i].clone()).collect();

        let rec = train_step(
            &mut state.g,
            &mut state.d,
            &mut state.g_ema,
            &mut state.adam_g,
            &mut state.adam_d,
            &cfg,
            &batch,
            &sets,
            step,
        )?;
        state.step = step + 1;

        // the trace draws from its own stream so tracing never perturbs
        // the training draws
        if let Some(t) = opts.trace_image {
            let mut trng = StreamRng::new(cfg.seed, Domain::Trace, step);
            let set = &corpus.caption_sets[t];
            let row = if cfg.interpolate {
                sample_interpolation(set, &mut trng, Phase::Train)?
            } else {
                let pick = trng.below(10);
                set.data()[pick * ed..(pick + 1) * ed].to_vec()
            };
            trace.push((step, row));
        }

        let now = clock.seconds();
        let line = LogLine {
            step,
            d_loss: rec.d_loss,
            g_loss: rec.g_loss,
            real_logit_mean: rec.real_logit_mean,
            fake_logit_mean: rec.fake_logit_mean,
            seconds: now - last,
        };
        last = now;
        serde_json::to_writer(&mut log, &line).map_err(std::io::Error::from)?;
        log.write_all(b"\n")?;

        if ckpt_every > 0 && state.step % ckpt_every == 0 && state.step < cfg.steps {
            refresh_standing(state, corpus)?;
            state.save(&step_ckpt_path(&opts.out_dir, state.step))?;
        }
    }
    log.flush()?;

    refresh_standing(state, corpus)?;
    state.save(&final_ckpt_path(&opts.out_dir))?;

    if opts.trace_image.is_some() {
        let mut out = String::new();
        for (step, row) in &trace {
            out.push_str(&format!("{step}"));
            for v in row {
                out.push_str(&format!("\t{:.8e}", v));
            }
            out.push('\n');
        }
        // append on resume, for the same reason the log appends
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(trace_path(&opts.out_dir))?;
        f.write_all(out.as_bytes())?;
    }
    Ok(state.step - done_before)
}

/// Re-accumulate the averaged generator's batch-norm statistics from keyed
/// noise and captions drawn out of the corpus pool.
pub fn refresh_standing(
    state: &mut TrainState<f32>,
    corpus: &LoadedCorpus,
) -> Result<(), RunError> {
    let cfg = state.train_cfg;
    let mut rng = StreamRng::new(cfg.seed, Domain::Standing, state.step);
    recompute_standing_stats(
        &mut state.g_ema,
        &corpus.caption_pool,
        cfg.standing_passes,
        cfg.standing_batch,
        &mut rng,
    )?;
    Ok(())
}
