//! Subcommand implementations. Each returns a `CommandError` that knows its
//! process exit code: 2 for usage problems, 3 for broken or missing data,
//! 4 for numeric failures inside the math.

use std::fs;
use std::path::{Path, PathBuf};

use sigl_core::error::Error as CoreError;
use sigl_core::metrics::{
    color_match_accuracy, color_of_class, frechet_distance, gaussian_stats, inception_score,
    train_classifier, Classifier, ClassifierConfig,
};
use sigl_core::ops::norm::BnMode;
use sigl_core::rng::{Domain, StreamRng};
use sigl_core::tensor::Tensor;
use sigl_core::text::{eval_arith, parse_arith, ArithExpr, TextEncoder};
use sigl_core::tsne::{convex_hull_area, tsne_2d, TsneConfig};

use crate::config::{Config, ConfigError};
use crate::dataset::{synth_generate, DataError, Dataset, SHAPES};
use crate::ppm::{tensor_to_image, tile_batch};
use crate::runner::{
    self, load_corpus, run_training, Clock, NullClock, RunError, RunOptions, WallClock,
};
use crate::state::{load_classifier, save_classifier, StateError, TrainState};

#[derive(Debug)]
pub enum CommandError {
    /// Bad flags or arguments: exit 2.
    Usage(String),
    /// Missing or corrupt files, mismatched models: exit 3.
    Data(String),
    /// The math broke down: exit 4.
    Numeric(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 2,
            CommandError::Data(_) => 3,
            CommandError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Usage(s) => write!(f, "usage: {s}"),
            CommandError::Data(s) => write!(f, "data: {s}"),
            CommandError::Numeric(s) => write!(f, "numeric: {s}"),
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Usage(e.to_string())
    }
}

impl From<DataError> for CommandError {
    fn from(e: DataError) -> Self {
        CommandError::Data(e.to_string())
    }
}

impl From<StateError> for CommandError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::Core(c) => c.into(),
            other => CommandError::Data(other.to_string()),
        }
    }
}

impl From<CoreError> for CommandError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } | CoreError::Numeric { .. } => {
                CommandError::Numeric(e.to_string())
            }
            CoreError::Parse { .. } | CoreError::EmptyTerm { .. } => {
                CommandError::Usage(e.to_string())
            }
            other => CommandError::Data(other.to_string()),
        }
    }
}

impl From<RunError> for CommandError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Core(c) => c.into(),
            RunError::State(s) => s.into(),
            RunError::Data(d) => d.into(),
            RunError::Io(io) => CommandError::Data(io.to_string()),
            RunError::Setup(s) => CommandError::Data(s),
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Data(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

pub fn cmd_gen_data(
    out: &Path,
    count: usize,
    test_count: usize,
    res: usize,
    seed: u64,
) -> Result<(), CommandError> {
    let train = synth_generate(count, res, seed, 0, "train", &out.join("train"))?;
    // test ids continue the counter so the two splits never share a stream
    let test = synth_generate(
        test_count,
        res,
        seed,
        count as u64,
        "test",
        &out.join("test"),
    )?;
    println!(
        "wrote {} train and {} test images at {res}x{res} under {}",
        train.records.len(),
        test.records.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub ckpt_every: Option<u64>,
    pub no_si: bool,
    pub trace_image: Option<usize>,
    pub resume: Option<PathBuf>,
    pub null_clock: bool,
}

pub fn assemble_config(
    file: Option<&Path>,
    seed: Option<u64>,
    steps: Option<u64>,
) -> Result<Config, CommandError> {
    let mut cfg = Config::desk(seed.unwrap_or(0));
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| CommandError::Usage(format!("--config {}: {e}", path.display())))?;
        cfg.apply_file(&text)?;
    }
    // flags win over the file
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CommandError> {
    let mut cfg = assemble_config(args.config.as_deref(), args.seed, args.steps)?;
    if let Some(every) = args.ckpt_every {
        cfg.ckpt_every = every;
    }
    if args.no_si {
        cfg.train.interpolate = false;
    }

    let mut state = match &args.resume {
        Some(path) => {
            let mut st = TrainState::<f32>::load(path)?;
            // the checkpoint carries its own configuration; only the horizon
            // and the conditioning rule may be overridden on resume
            if let Some(s) = args.steps {
                st.train_cfg.steps = s;
            }
            if args.no_si {
                st.train_cfg.interpolate = false;
            }
            st
        }
        None => TrainState::init(cfg.net, cfg.train, cfg.encoder_seed)?,
    };

    let encoder = TextEncoder::new(300, state.net_cfg.embed_dim, state.encoder_seed);
    let corpus = load_corpus(&args.data, &encoder)?;
    let opts = RunOptions {
        out_dir: args.out.clone(),
        trace_image: args.trace_image,
    };
    let mut wall = WallClock::new();
    let mut null = NullClock;
    let clock: &mut dyn Clock = if args.null_clock { &mut null } else { &mut wall };
    let target = state.train_cfg.steps;
    let ran = run_training(&mut state, &corpus, &opts, cfg.ckpt_every, clock)?;
    println!(
        "ran {ran} steps (through step {target}); final checkpoint at {}",
        runner::final_ckpt_path(&args.out).display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-classifier
// ---------------------------------------------------------------------------

pub fn cmd_train_classifier(
    data: &Path,
    out_path: &Path,
    seed: u64,
    epochs: Option<usize>,
) -> Result<(), CommandError> {
    let ds = Dataset::load(data)?;
    let n = ds.len();
    let res = ds.manifest.res;
    let px = 3 * res * res;
    let mut images = Tensor::<f64>::zeros(&[n, 3, res, res]);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let img = ds.image(i)?;
        images.data_mut()[i * px..(i + 1) * px].copy_from_slice(img.data());
        labels.push(ds.manifest.records[i].spec.class());
    }
    let mut cfg = ClassifierConfig::default();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let mut clf = train_classifier(&images, &labels, cfg, seed)?;
    let acc = training_accuracy(&clf, &images, &labels)?;
    save_classifier(out_path, &mut clf, seed)?;
    println!(
        "classifier trained on {n} images, training accuracy {acc:.3}, saved to {}",
        out_path.display()
    );
    Ok(())
}

fn training_accuracy(
    clf: &Classifier<f64>,
    images: &Tensor<f64>,
    labels: &[usize],
) -> Result<f64, CommandError> {
    let (n, c, h, w) = images.dims4("accuracy")?;
    let px = c * h * w;
    let mut hits = 0usize;
    for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
        let mut batch = Tensor::zeros(&[chunk.len(), c, h, w]);
        for (bi, &si) in chunk.iter().enumerate() {
            batch.data_mut()[bi * px..(bi + 1) * px]
                .copy_from_slice(&images.data()[si * px..(si + 1) * px]);
        }
        let pred = clf.predict(&batch)?;
        hits += pred
            .iter()
            .zip(chunk.iter().map(|&si| labels[si]))
            .filter(|(p, l)| **p == *l)
            .count();
    }
    Ok(hits as f64 / n as f64)
}

// ---------------------------------------------------------------------------
// shared sampling plumbing
// ---------------------------------------------------------------------------

/// A checkpoint opened for generation: the averaged generator plus the
/// encoder it was trained against.
pub struct Sampler {
    pub state: TrainState<f32>,
    pub encoder: TextEncoder,
}

impl Sampler {
    /// `standing_data`: corpus directory to rebuild standing statistics
    /// from, for checkpoints whose statistics are not ready.
    pub fn open(ckpt: &Path, standing_data: Option<&Path>) -> Result<Self, CommandError> {
        let mut state = TrainState::<f32>::load(ckpt)?;
        let encoder = TextEncoder::new(300, state.net_cfg.embed_dim, state.encoder_seed);
        let ready = state.g_ema.norm_sites().iter().all(|(_, s)| s.ready);
        if !ready {
            match standing_data {
                Some(dir) => {
                    let corpus = load_corpus(dir, &encoder)?;
                    runner::refresh_standing(&mut state, &corpus)?;
                }
                None => {
                    return Err(CommandError::Data(format!(
                        "{}: standing statistics are not ready; \
                         pass --recompute-standing <data dir>",
                        ckpt.display()
                    )))
                }
            }
        }
        Ok(Sampler { state, encoder })
    }

    pub fn embed(&self, caption: &str) -> Result<Vec<f32>, CommandError> {
        let e = self
            .encoder
            .encode(caption)
            .map_err(|_| CommandError::Usage(format!("caption {caption:?} has no tokens")))?;
        Ok(e.iter().map(|&v| v as f32).collect())
    }

    /// Latent row i of the evaluation stream: the i-th sample of a run is
    /// the same no matter how many are requested.
    pub fn z_row(&self, seed: u64, i: u64) -> Vec<f32> {
        let mut rng = StreamRng::new(seed, Domain::EvalZ, i);
        (0..self.state.net_cfg.nz)
            .map(|_| rng.normal() as f32)
            .collect()
    }

    /// Generate images for (z, s) rows, chunked to bound memory.
    pub fn generate(
        &mut self,
        z_rows: &[Vec<f32>],
        s_rows: &[Vec<f32>],
    ) -> Result<Tensor<f32>, CommandError> {
        assert_eq!(z_rows.len(), s_rows.len());
        let nz = self.state.net_cfg.nz;
        let ed = self.state.net_cfg.embed_dim;
        let res = self.state.net_cfg.target_res;
        let n = z_rows.len();
        let mut out = Tensor::zeros(&[n, 3, res, res]);
        let px = 3 * res * res;
        for start in (0..n).step_by(32) {
            let end = (start + 32).min(n);
            let m = end - start;
            let mut z = Tensor::zeros(&[m, nz]);
            let mut s = Tensor::zeros(&[m, ed]);
            for (row, i) in (start..end).enumerate() {
                z.data_mut()[row * nz..(row + 1) * nz].copy_from_slice(&z_rows[i]);
                s.data_mut()[row * ed..(row + 1) * ed].copy_from_slice(&s_rows[i]);
            }
            let (y, _) = self
                .state
                .g_ema
                .forward(&z, &s, BnMode::Eval)
                .map_err(CommandError::from)?;
            out.data_mut()[start * px..end * px].copy_from_slice(y.data());
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_sample(
    ckpt: &Path,
    caption: &str,
    count: usize,
    out: &Path,
    seed: u64,
    standing_data: Option<&Path>,
) -> Result<(), CommandError> {
    if count == 0 {
        return Err(CommandError::Usage("--count must be at least 1".into()));
    }
    let mut sampler = Sampler::open(ckpt, standing_data)?;
    let s = sampler.embed(caption)?;
    let z_rows: Vec<Vec<f32>> = (0..count as u64).map(|i| sampler.z_row(seed, i)).collect();
    let s_rows = vec![s; count];
    let images = sampler.generate(&z_rows, &s_rows)?;
    fs::create_dir_all(out)?;
    let res = sampler.state.net_cfg.target_res;
    let px = 3 * res * res;
    for i in 0..count {
        let chw: Vec<f64> = images.data()[i * px..(i + 1) * px]
            .iter()
            .map(|&v| v as f64)
            .collect();
        tensor_to_image(&chw, res, res)
            .write_file(&out.join(format!("sample_{i:03}.ppm")))
            .map_err(|e| CommandError::Data(e.to_string()))?;
    }
    println!("wrote {count} samples for {caption:?} under {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// arith
// ---------------------------------------------------------------------------

pub fn cmd_arith(
    ckpt: &Path,
    expr_text: &str,
    out: &Path,
    seed: u64,
    standing_data: Option<&Path>,
) -> Result<(), CommandError> {
    let expr = parse_arith(expr_text).map_err(CommandError::from)?;
    let mut sampler = Sampler::open(ckpt, standing_data)?;
    let z = sampler.z_row(seed, 0); // one latent, held fixed across prefixes
    fs::create_dir_all(out)?;
    let res = sampler.state.net_cfg.target_res;
    for k in 1..=expr.terms.len() {
        let prefix = ArithExpr {
            terms: expr.terms[..k].to_vec(),
        };
        let e = eval_arith(&prefix, &sampler.encoder).map_err(CommandError::from)?;
        let s: Vec<f32> = e.iter().map(|&v| v as f32).collect();
        let images = sampler.generate(&[z.clone()], &[s])?;
        let chw: Vec<f64> = images.data().iter().map(|&v| v as f64).collect();
        let path = out.join(format!("arith_{k:02}.ppm"));
        tensor_to_image(&chw, res, res)
            .write_file(&path)
            .map_err(|e| CommandError::Data(e.to_string()))?;
        println!("{k} terms -> {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_grid(
    ckpt: &Path,
    corners: &[String; 4],
    rows: usize,
    cols: usize,
    out: &Path,
    seed: u64,
    standing_data: Option<&Path>,
) -> Result<(), CommandError> {
    if rows < 2 || cols < 2 {
        return Err(CommandError::Usage(format!(
            "a {rows}x{cols} grid cannot interpolate; need at least 2x2"
        )));
    }
    let mut sampler = Sampler::open(ckpt, standing_data)?;
    let e: Vec<Vec<f32>> = corners
        .iter()
        .map(|c| sampler.embed(c))
        .collect::<Result<_, _>>()?;
    let z = sampler.z_row(seed, 0);
    let ed = sampler.state.net_cfg.embed_dim;

    let mut z_rows = Vec::with_capacity(rows * cols);
    let mut s_rows = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let v = i as f32 / (rows - 1) as f32;
        for j in 0..cols {
            let u = j as f32 / (cols - 1) as f32;
            // bilinear blend of (top-left, top-right, bottom-left, bottom-right)
            let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v];
            let mut s = vec![0.0f32; ed];
            for (corner, &wk) in e.iter().zip(&w) {
                for (acc, &val) in s.iter_mut().zip(corner) {
                    *acc += wk * val;
                }
            }
            z_rows.push(z.clone());
            s_rows.push(s);
        }
    }
    let images = sampler.generate(&z_rows, &s_rows)?;
    let wide = Tensor::from_vec(
        images.shape(),
        images.data().iter().map(|&v| v as f64).collect(),
    )
    .map_err(CommandError::from)?;
    let sheet = tile_batch(&wide, rows, cols).map_err(CommandError::Data)?;
    fs::create_dir_all(out)?;
    let path = out.join("grid.ppm");
    sheet
        .write_file(&path)
        .map_err(|e| CommandError::Data(e.to_string()))?;
    println!("wrote {rows}x{cols} grid to {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub fid: f64,
    pub is_mean: f64,
    pub is_std: f64,
    pub color_match: f64,
    pub color_evaluated: usize,
    pub color_excluded: usize,
    pub n_samples: usize,
    pub splits: usize,
    pub real: bool,
}

/// Classifier features for a large stack, in bounded-memory chunks.
fn features_chunked(
    clf: &Classifier<f64>,
    images: &Tensor<f64>,
) -> Result<Tensor<f64>, CommandError> {
    let (n, c, h, w) = images.dims4("features").map_err(CommandError::from)?;
    let px = c * h * w;
    let fd = clf.cfg.features;
    let mut out = Tensor::zeros(&[n, fd]);
    for start in (0..n).step_by(128) {
        let end = (start + 128).min(n);
        let chunk = Tensor::from_vec(
            &[end - start, c, h, w],
            images.data()[start * px..end * px].to_vec(),
        )
        .map_err(CommandError::from)?;
        let (f, _) = clf.features(&chunk).map_err(CommandError::from)?;
        out.data_mut()[start * fd..end * fd].copy_from_slice(f.data());
    }
    Ok(out)
}

/// Class probabilities for a large stack, in bounded-memory chunks.
fn probs_chunked(
    clf: &Classifier<f64>,
    images: &Tensor<f64>,
) -> Result<Tensor<f64>, CommandError> {
    let (n, c, h, w) = images.dims4("probs").map_err(CommandError::from)?;
    let px = c * h * w;
    let k = clf.cfg.classes;
    let mut out = Tensor::zeros(&[n, k]);
    for start in (0..n).step_by(128) {
        let end = (start + 128).min(n);
        let chunk = Tensor::from_vec(
            &[end - start, c, h, w],
            images.data()[start * px..end * px].to_vec(),
        )
        .map_err(CommandError::from)?;
        let p = clf.probs(&chunk).map_err(CommandError::from)?;
        out.data_mut()[start * k..end * k].copy_from_slice(p.data());
    }
    Ok(out)
}

/// Load every image of a split into one [n, 3, res, res] stack.
fn load_split_images(ds: &Dataset) -> Result<Tensor<f64>, CommandError> {
    let n = ds.len();
    let res = ds.manifest.res;
    let px = 3 * res * res;
    let mut stack = Tensor::<f64>::zeros(&[n, 3, res, res]);
    for i in 0..n {
        let img = ds.image(i)?;
        stack.data_mut()[i * px..(i + 1) * px].copy_from_slice(img.data());
    }
    Ok(stack)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_metrics(
    ckpt: Option<&Path>,
    data_root: &Path,
    classifier: &Path,
    n_samples: usize,
    splits: usize,
    out: &Path,
    seed: u64,
    real: bool,
    standing_data: Option<&Path>,
) -> Result<(), CommandError> {
    if splits == 0 || n_samples < 2 * splits {
        return Err(CommandError::Usage(format!(
            "{n_samples} samples cannot fill {splits} splits of at least 2"
        )));
    }
    let clf = load_classifier::<f64>(classifier)?;
    // reference distribution comes from the training split; the evaluated
    // set is conditioned on (or drawn from) the held-out one
    let train_ds = Dataset::load(&data_root.join("train"))?;
    let test_ds = Dataset::load(&data_root.join("test"))?;
    let n_test = test_ds.len();
    let res = train_ds.manifest.res;
    if test_ds.manifest.res != res {
        return Err(CommandError::Data(format!(
            "train split is {res}px but test split is {}px",
            test_ds.manifest.res
        )));
    }

    let reference = load_split_images(&train_ds)?;
    let ref_feats = features_chunked(&clf, &reference)?;
    let (mu_r, cov_r) = gaussian_stats(&ref_feats).map_err(CommandError::from)?;
    drop(reference);

    // the evaluated set: generated from test captions, or the test reals
    let (samples, expected): (Tensor<f64>, Vec<Option<usize>>) = if real {
        if n_samples > n_test {
            return Err(CommandError::Usage(format!(
                "--real can evaluate at most the {n_test} test images, asked for {n_samples}"
            )));
        }
        let all = load_split_images(&test_ds)?;
        let px = 3 * res * res;
        let mut subset = Tensor::<f64>::zeros(&[n_samples, 3, res, res]);
        subset
            .data_mut()
            .copy_from_slice(&all.data()[..n_samples * px]);
        let expected = (0..n_samples)
            .map(|i| Some(test_ds.manifest.records[i].spec.color))
            .collect();
        (subset, expected)
    } else {
        let ckpt = ckpt.ok_or_else(|| {
            CommandError::Usage("--ckpt is required unless --real is given".into())
        })?;
        let mut sampler = Sampler::open(ckpt, standing_data)?;
        if sampler.state.net_cfg.target_res != res {
            return Err(CommandError::Data(format!(
                "model resolution {} vs dataset {res}",
                sampler.state.net_cfg.target_res
            )));
        }
        let mut z_rows = Vec::with_capacity(n_samples);
        let mut s_rows = Vec::with_capacity(n_samples);
        let mut expected = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            let rec = &test_ds.manifest.records[i % n_test];
            let mut crng = StreamRng::new(seed, Domain::Metrics, i as u64);
            let caption = &rec.captions[crng.below(rec.captions.len())];
            s_rows.push(sampler.embed(caption)?);
            z_rows.push(sampler.z_row(seed, i as u64));
            expected.push(Some(rec.spec.color));
        }
        let gen = sampler.generate(&z_rows, &s_rows)?;
        let as_f64 = Tensor::from_vec(
            gen.shape(),
            gen.data().iter().map(|&v| v as f64).collect(),
        )
        .map_err(CommandError::from)?;
        (as_f64, expected)
    };

    let feats = features_chunked(&clf, &samples)?;
    let (mu_s, cov_s) = gaussian_stats(&feats).map_err(CommandError::from)?;
    let fid = frechet_distance(&mu_s, &cov_s, &mu_r, &cov_r).map_err(CommandError::from)?;
    let probs = probs_chunked(&clf, &samples)?;
    let (is_mean, is_std) = inception_score(&probs, splits).map_err(CommandError::from)?;
    // argmax of a softmax row is the argmax of its logits, so predictions
    // can reuse the chunked probabilities
    let k = clf.cfg.classes;
    let predicted: Vec<usize> = probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            color_of_class(best, SHAPES.len())
        })
        .collect();
    let cm = color_match_accuracy(&predicted, &expected).map_err(CommandError::from)?;

    let report = MetricsReport {
        fid,
        is_mean,
        is_std,
        color_match: cm.accuracy,
        color_evaluated: cm.evaluated,
        color_excluded: cm.excluded,
        n_samples,
        splits,
        real,
    };
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(out.join("metrics.json"), json.clone() + "\n")?;
    println!("{json}");
    Ok(())
}

// ---------------------------------------------------------------------------
// manifold
// ---------------------------------------------------------------------------

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct ManifoldReport {
    pub points: usize,
    pub hull_area: f64,
    pub kl_final: f64,
    pub degenerate: bool,
}

pub fn cmd_manifold(
    trace: &Path,
    out: &Path,
    seed: u64,
    perplexity: Option<f64>,
) -> Result<(), CommandError> {
    let text = fs::read_to_string(trace)
        .map_err(|e| CommandError::Data(format!("{}: {e}", trace.display())))?;
    let mut steps = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut width = None;
    for (ln, line) in text.lines().enumerate() {
        let mut cols = line.split('\t');
        let step: u64 = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad_trace(trace, ln, "a step number"))?;
        let vals: Vec<f64> = cols
            .map(|c| c.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad_trace(trace, ln, "float columns"))?;
        if vals.is_empty() {
            return Err(bad_trace(trace, ln, "at least one embedding column"));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(bad_trace(trace, ln, "a consistent column count"))
            }
            _ => {}
        }
        steps.push(step);
        rows.extend(vals);
    }
    let n = steps.len();
    let d = width.unwrap_or(0);
    if n < 5 {
        return Err(CommandError::Data(format!(
            "{}: {n} trace points are too few to embed (need 5)",
            trace.display()
        )));
    }
    let mut cfg = TsneConfig::default();
    if let Some(p) = perplexity {
        cfg.perplexity = p;
    } else if cfg.perplexity * 3.0 >= n as f64 {
        // shrink the default for short traces instead of refusing them
        cfg.perplexity = (n as f64 / 3.0 - 1.0).max(2.0);
    }
    if cfg.perplexity * 3.0 >= n as f64 {
        return Err(CommandError::Usage(format!(
            "perplexity {} too large for {n} points",
            cfg.perplexity
        )));
    }
    let mut rng = StreamRng::new(seed, Domain::Tsne, 0);
    let result = tsne_2d(&rows, n, d, &cfg, &mut rng).map_err(CommandError::from)?;

    fs::create_dir_all(out)?;
    let mut tsv = String::new();
    for (i, step) in steps.iter().enumerate() {
        tsv.push_str(&format!(
            "{step}\t{:.8e}\t{:.8e}\n",
            result.coords[2 * i],
            result.coords[2 * i + 1]
        ));
    }
    fs::write(out.join("manifold.tsv"), tsv)?;
    let report = ManifoldReport {
        points: n,
        hull_area: convex_hull_area(&result.coords),
        kl_final: *result.kl_trace.last().unwrap_or(&f64::NAN),
        degenerate: result.degenerate,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(out.join("manifold.json"), json.clone() + "\n")?;
    println!("{json}");
    Ok(())
}

fn bad_trace(path: &Path, line: usize, expected: &str) -> CommandError {
    CommandError::Data(format!(
        "{} line {}: expected {expected}",
        path.display(),
        line + 1
    ))
}
