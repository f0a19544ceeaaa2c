//! Sample-quality measurement: a small convolutional classifier standing in
//! for the usual Inception network, the Inception Score computed from its
//! class posteriors, the Fréchet distance computed from its penultimate
//! features, and a color-match probe that checks generated images against
//! the color word of their conditioning caption.
//!
//! All distribution math runs in f64 regardless of what precision the
//! networks train in; covariance square roots are far too brittle at f32.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::act::{leaky_relu, leaky_relu_backward};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::ops::dense::{dense_backward, dense_forward};
use crate::ops::resample::{downsample2x, downsample2x_backward};
use crate::params::Slot;
use crate::rng::{Domain, StreamRng};
use crate::scalar::Real;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// symmetric eigendecomposition and the PSD square root
// ---------------------------------------------------------------------------

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, V) with eigenvector k in column k of the row-major V, so
/// A = V diag(λ) Vᵀ.
pub fn sym_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if libm::fabs(apq) < 1e-18 {
                    continue;
                }
                let theta = 0.5 * libm::atan2(2.0 * apq, m[p * n + p] - m[q * n + q]);
                let (s, c) = (libm::sin(theta), libm::cos(theta));
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp + s * mkq;
                    m[k * n + q] = -s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk + s * mqk;
                    m[q * n + k] = -s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp + s * vkq;
                    v[k * n + q] = -s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    (eig, v)
}

/// Symmetric PSD square root via eigendecomposition. Rejects matrices that
/// are meaningfully asymmetric or indefinite; eigenvalues in [-1e-8, 0) are
/// treated as roundoff and clamped to zero.
pub fn matrix_sqrt_psd(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::Dim {
            op: "matrix_sqrt_psd",
            detail: alloc::format!("{} values for {n}x{n}", a.len()),
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if libm::fabs(a[i * n + j] - a[j * n + i]) > 1e-6 {
                return Err(Error::Numeric {
                    what: String::from("matrix_sqrt_psd: input not symmetric within 1e-6"),
                });
            }
        }
    }
    let (eig, v) = sym_eigen(a, n);
    let mut roots = vec![0.0; n];
    for (r, &l) in roots.iter_mut().zip(&eig) {
        if l < -1e-8 {
            return Err(Error::Numeric {
                what: alloc::format!("matrix_sqrt_psd: negative eigenvalue {l}"),
            });
        }
        *r = libm::sqrt(l.max(0.0));
    }
    // B = V diag(√λ) Vᵀ
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += v[i * n + k] * roots[k] * v[j * n + k];
            }
            b[i * n + j] = acc;
        }
    }
    // exact symmetry despite accumulated roundoff
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (b[i * n + j] + b[j * n + i]);
            b[i * n + j] = m;
            b[j * n + i] = m;
        }
    }
    Ok(b)
}

// ---------------------------------------------------------------------------
// feature statistics and the Fréchet distance
// ---------------------------------------------------------------------------

/// Mean and unbiased covariance of row features [n, d]; needs n ≥ 2.
pub fn gaussian_stats(features: &Tensor<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = features.dims2("gaussian_stats")?;
    if n < 2 {
        return Err(Error::Dim {
            op: "gaussian_stats",
            detail: alloc::format!("need at least 2 rows, got {n}"),
        });
    }
    let mut mean = vec![0.0; d];
    for row in features.data().chunks(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in features.data().chunks(d) {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mean, cov))
}

/// Fréchet distance between two Gaussians:
/// ‖μ₁−μ₂‖² + tr(C₁ + C₂ − 2·(C₁^{1/2} C₂ C₁^{1/2})^{1/2}).
/// The symmetrized product keeps the inner matrix PSD so the eigensolver
/// route stays valid. Small negative totals (≥ −1e-6) are roundoff and clamp
/// to zero; anything more negative is a numerical failure.
pub fn frechet_distance(mu1: &[f64], cov1: &[f64], mu2: &[f64], cov2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.len() != d * d || cov2.len() != d * d {
        return Err(Error::Dim {
            op: "frechet_distance",
            detail: String::from("mismatched moment shapes"),
        });
    }
    let mut dist = 0.0;
    for i in 0..d {
        let t = mu1[i] - mu2[i];
        dist += t * t;
    }
    for i in 0..d {
        dist += cov1[i * d + i] + cov2[i * d + i];
    }
    let r1 = matrix_sqrt_psd(cov1, d)?;
    // m = r1 · cov2 · r1
    let mut tmp = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += r1[i * d + k] * cov2[k * d + j];
            }
            tmp[i * d + j] = acc;
        }
    }
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += tmp[i * d + k] * r1[k * d + j];
            }
            m[i * d + j] = acc;
        }
    }
    // enforce exact symmetry before the second root
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = v;
            m[j * d + i] = v;
        }
    }
    let root = matrix_sqrt_psd(&m, d)?;
    for i in 0..d {
        dist -= 2.0 * root[i * d + i];
    }
    if dist < 0.0 {
        if dist >= -1e-6 {
            return Ok(0.0);
        }
        return Err(Error::Numeric {
            what: alloc::format!("frechet_distance: negative result {dist}"),
        });
    }
    Ok(dist)
}

// ---------------------------------------------------------------------------
// inception score
// ---------------------------------------------------------------------------

const PROB_CLAMP: f64 = 1e-12;

/// Split-wise Inception Score over a row-stochastic [n, k] matrix of class
/// posteriors: exp(E[KL(p(y|x) ‖ p(y))]) per split, natural log, with both
/// distributions clamped at 1e-12. Returns (mean, population std).
pub fn inception_score(probs: &Tensor<f64>, splits: usize) -> Result<(f64, f64)> {
    let (n, k) = probs.dims2("inception_score")?;
    if splits == 0 || n < 2 * splits {
        return Err(Error::Dim {
            op: "inception_score",
            detail: alloc::format!("{n} rows cannot fill {splits} splits (need 2 per split)"),
        });
    }
    for (idx, row) in probs.data().chunks(k).enumerate() {
        let mut sum = 0.0;
        for &p in row {
            if !(0.0..=1.0 + 1e-9).contains(&p) {
                return Err(Error::Numeric {
                    what: alloc::format!("inception_score: row {idx} has entry {p} outside [0,1]"),
                });
            }
            sum += p;
        }
        if libm::fabs(sum - 1.0) > 1e-6 {
            return Err(Error::Numeric {
                what: alloc::format!("inception_score: row {idx} sums to {sum}"),
            });
        }
    }
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let lo = s * n / splits;
        let hi = (s + 1) * n / splits;
        let rows = &probs.data()[lo * k..hi * k];
        let count = hi - lo;
        let mut marginal = vec![0.0; k];
        for row in rows.chunks(k) {
            for (m, &p) in marginal.iter_mut().zip(row) {
                *m += p;
            }
        }
        for m in &mut marginal {
            *m /= count as f64;
        }
        let mut kl_sum = 0.0;
        for row in rows.chunks(k) {
            for (&p, &q) in row.iter().zip(&marginal) {
                let p = p.max(PROB_CLAMP);
                let q = q.max(PROB_CLAMP);
                kl_sum += p * libm::log(p / q);
            }
        }
        scores.push(libm::exp(kl_sum / count as f64));
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / splits as f64;
    Ok((mean, libm::sqrt(var)))
}

// ---------------------------------------------------------------------------
// color-match probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMatch {
    pub accuracy: f64,
    pub evaluated: usize,
    /// Captions without exactly one recognizable color word.
    pub excluded: usize,
}

/// Fraction of samples whose predicted color equals the caption's color.
/// `expected[i] = None` marks a caption that had zero or several color words;
/// those are excluded from the denominator and counted separately.
pub fn color_match_accuracy(
    predicted_color: &[usize],
    expected_color: &[Option<usize>],
) -> Result<ColorMatch> {
    if predicted_color.len() != expected_color.len() {
        return Err(Error::Dim {
            op: "color_match_accuracy",
            detail: alloc::format!(
                "{} predictions vs {} captions",
                predicted_color.len(),
                expected_color.len()
            ),
        });
    }
    let mut hits = 0usize;
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for (&p, e) in predicted_color.iter().zip(expected_color) {
        match e {
            Some(c) => {
                evaluated += 1;
                if p == *c {
                    hits += 1;
                }
            }
            None => excluded += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::Empty {
            what: "color-match evaluation set (all captions excluded)",
        });
    }
    Ok(ColorMatch {
        accuracy: hits as f64 / evaluated as f64,
        evaluated,
        excluded,
    })
}

// ---------------------------------------------------------------------------
// surrogate classifier
// ---------------------------------------------------------------------------

/// Class index layout shared with the dataset: colors × shapes.
pub fn class_id(color: usize, shape: usize, n_shapes: usize) -> usize {
    color * n_shapes + shape
}

pub fn color_of_class(class: usize, n_shapes: usize) -> usize {
    class / n_shapes
}

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub classes: usize,
    /// Feature width of the penultimate layer (the FID embedding dimension).
    pub features: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub leaky_slope: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            classes: 32,
            features: 64,
            lr: 1e-3,
            epochs: 4,
            batch: 64,
            leaky_slope: 0.2,
        }
    }
}

struct ConvStage<R: Real> {
    w: Tensor<R>,
    b: Vec<R>,
    gw: Tensor<R>,
    gb: Vec<R>,
}

impl<R: Real> ConvStage<R> {
    fn new(out_c: usize, in_c: usize, rng: &mut StreamRng) -> Self {
        let fan_in = in_c * 9;
        let std = libm::sqrt(2.0 / fan_in as f64);
        let data = (0..out_c * in_c * 9)
            .map(|_| R::from_f64(rng.normal() * std))
            .collect();
        ConvStage {
            w: Tensor::from_vec(&[out_c, in_c, 3, 3], data).expect("conv shape"),
            b: vec![R::ZERO; out_c],
            gw: Tensor::zeros(&[out_c, in_c, 3, 3]),
            gb: vec![R::ZERO; out_c],
        }
    }
}

/// Three stride-1 conv stages, each followed by leaky ReLU and 2x mean
/// pooling, then global mean pooling to `features` and a linear head.
pub struct Classifier<R: Real> {
    stages: Vec<ConvStage<R>>,
    head_w: Tensor<R>,
    head_b: Vec<R>,
    g_head_w: Tensor<R>,
    g_head_b: Vec<R>,
    pub cfg: ClassifierConfig,
}

/// Activations saved by a features pass for the corresponding backward.
pub struct ClassifierTape<R: Real> {
    inputs: Vec<Tensor<R>>,  // input to each conv
    pre_act: Vec<Tensor<R>>, // conv output before leaky
    pooled_shape: [usize; 4],
}

impl<R: Real> Classifier<R> {
    pub fn init(cfg: ClassifierConfig, seed: u64) -> Self {
        let mut rng = StreamRng::new(seed, Domain::Classifier, 0);
        let f = cfg.features;
        let widths = [f / 4, f / 2, f];
        let mut stages = Vec::new();
        let mut in_c = 3;
        for &w in &widths {
            stages.push(ConvStage::new(w, in_c, &mut rng));
            in_c = w;
        }
        let std = libm::sqrt(2.0 / f as f64);
        let head_w = Tensor::from_vec(
            &[f, cfg.classes],
            (0..f * cfg.classes)
                .map(|_| R::from_f64(rng.normal() * std))
                .collect(),
        )
        .expect("head shape");
        Classifier {
            stages,
            head_b: vec![R::ZERO; cfg.classes],
            g_head_w: Tensor::zeros(&[f, cfg.classes]),
            g_head_b: vec![R::ZERO; cfg.classes],
            head_w,
            cfg,
        }
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = Vec::new();
        for (i, st) in self.stages.iter_mut().enumerate() {
            out.push(Slot::param(
                alloc::format!("clf.conv{i}.w"),
                st.w.shape().to_vec(),
                st.w.data_mut(),
                st.gw.data_mut(),
            ));
            out.push(Slot::param(
                alloc::format!("clf.conv{i}.b"),
                vec![st.b.len()],
                &mut st.b,
                &mut st.gb,
            ));
        }
        out.push(Slot::param(
            String::from("clf.head.w"),
            self.head_w.shape().to_vec(),
            self.head_w.data_mut(),
            self.g_head_w.data_mut(),
        ));
        out.push(Slot::param(
            String::from("clf.head.b"),
            vec![self.head_b.len()],
            &mut self.head_b,
            &mut self.g_head_b,
        ));
        out
    }

    fn zero_grad(&mut self) {
        for st in &mut self.stages {
            st.gw.fill(R::ZERO);
            for g in &mut st.gb {
                *g = R::ZERO;
            }
        }
        self.g_head_w.fill(R::ZERO);
        for g in &mut self.g_head_b {
            *g = R::ZERO;
        }
    }

    /// Penultimate features [N, f]; the same embedding FID consumes.
    pub fn features(&self, x: &Tensor<R>) -> Result<(Tensor<R>, ClassifierTape<R>)> {
        let geom = ConvGeometry { stride: 1, pad: 1 };
        let slope = R::from_f64(self.cfg.leaky_slope);
        let mut cur = x.clone();
        let mut tape = ClassifierTape {
            inputs: Vec::new(),
            pre_act: Vec::new(),
            pooled_shape: [0; 4],
        };
        for st in &self.stages {
            tape.inputs.push(cur.clone());
            let pre = conv2d_forward(&cur, &st.w, Some(&st.b), geom)?;
            tape.pre_act.push(pre.clone());
            cur = downsample2x(&leaky_relu(&pre, slope))?;
        }
        let (n, c, h, w) = cur.dims4("classifier")?;
        tape.pooled_shape = [n, c, h, w];
        let inv = R::from_usize(h * w);
        let mut feats = Tensor::zeros(&[n, c]);
        for s in 0..n {
            for ch in 0..c {
                let plane = &cur.data()[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                let mut acc = R::ZERO;
                for &v in plane {
                    acc += v;
                }
                feats.data_mut()[s * c + ch] = acc / inv;
            }
        }
        Ok((feats, tape))
    }

    pub fn logits(&self, x: &Tensor<R>) -> Result<(Tensor<R>, Tensor<R>, ClassifierTape<R>)> {
        let (feats, tape) = self.features(x)?;
        let logits = dense_forward(&feats, &self.head_w, Some(&self.head_b))?;
        Ok((logits, feats, tape))
    }

    /// Row-stochastic class posteriors, f64 for the metric pipeline.
    pub fn probs(&self, x: &Tensor<R>) -> Result<Tensor<f64>> {
        let (logits, _, _) = self.logits(x)?;
        let (n, k) = logits.dims2("classifier probs")?;
        let mut out = Tensor::zeros(&[n, k]);
        for (orow, lrow) in out
            .data_mut()
            .chunks_mut(k)
            .zip(logits.data().chunks(k))
        {
            let row64: Vec<f64> = lrow.iter().map(|v| v.to_f64()).collect();
            let soft = crate::cond::softmax(&row64);
            orow.copy_from_slice(&soft);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Tensor<R>) -> Result<Vec<usize>> {
        let (logits, _, _) = self.logits(x)?;
        let (n, k) = logits.dims2("classifier predict")?;
        let mut out = Vec::with_capacity(n);
        for row in logits.data().chunks(k) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    /// Cross-entropy on a batch: returns mean loss and accumulates grads.
    fn backprop_batch(&mut self, x: &Tensor<R>, labels: &[usize]) -> Result<f64> {
        let geom = ConvGeometry { stride: 1, pad: 1 };
        let slope = R::from_f64(self.cfg.leaky_slope);
        let (logits, feats, tape) = self.logits(x)?;
        let (n, k) = logits.dims2("classifier loss")?;
        let mut dlogits = Tensor::zeros(&[n, k]);
        let mut loss = 0.0;
        for (i, (lrow, drow)) in logits
            .data()
            .chunks(k)
            .zip(dlogits.data_mut().chunks_mut(k))
            .enumerate()
        {
            let row64: Vec<f64> = lrow.iter().map(|v| v.to_f64()).collect();
            let soft = crate::cond::softmax(&row64);
            loss -= libm::log(soft[labels[i]].max(PROB_CLAMP));
            for (j, d) in drow.iter_mut().enumerate() {
                let delta = if j == labels[i] { 1.0 } else { 0.0 };
                *d = R::from_f64((soft[j] - delta) / n as f64);
            }
        }
        loss /= n as f64;

        let (dfeats, dw, db) = dense_backward(&feats, &self.head_w, &dlogits)?;
        for (g, v) in self.g_head_w.data_mut().iter_mut().zip(dw.data()) {
            *g += *v;
        }
        for (g, v) in self.g_head_b.iter_mut().zip(&db) {
            *g += *v;
        }

        // un-pool the global mean back onto the last stage's output
        let [n4, c4, h4, w4] = tape.pooled_shape;
        let inv = R::ONE / R::from_usize(h4 * w4);
        let mut dcur = Tensor::zeros(&[n4, c4, h4, w4]);
        for s in 0..n4 {
            for ch in 0..c4 {
                let g = dfeats.data()[s * c4 + ch] * inv;
                for v in
                    &mut dcur.data_mut()[(s * c4 + ch) * h4 * w4..(s * c4 + ch + 1) * h4 * w4]
                {
                    *v = g;
                }
            }
        }
        for idx in (0..self.stages.len()).rev() {
            let dpost = downsample2x_backward(&dcur)?;
            let dpre = leaky_relu_backward(&tape.pre_act[idx], &dpost, slope);
            let st = &mut self.stages[idx];
            let (dx, dw, db) = conv2d_backward(&tape.inputs[idx], &st.w, &dpre, geom)?;
            for (g, v) in st.gw.data_mut().iter_mut().zip(dw.data()) {
                *g += *v;
            }
            for (g, v) in st.gb.iter_mut().zip(&db) {
                *g += *v;
            }
            dcur = dx;
        }
        Ok(loss)
    }
}

/// Train on labeled images with Adam. Deterministic in (seed, data order).
pub fn train_classifier<R: Real>(
    images: &Tensor<R>,
    labels: &[usize],
    cfg: ClassifierConfig,
    seed: u64,
) -> Result<Classifier<R>> {
    let (n, _, _, _) = images.dims4("train_classifier")?;
    if n != labels.len() {
        return Err(Error::Dim {
            op: "train_classifier",
            detail: alloc::format!("{n} images vs {} labels", labels.len()),
        });
    }
    if n == 0 {
        return Err(Error::Empty {
            what: "classifier training set",
        });
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= cfg.classes {
            return Err(Error::Dim {
                op: "train_classifier",
                detail: alloc::format!("label {l} at row {i} exceeds {} classes", cfg.classes),
            });
        }
    }
    let mut clf = Classifier::init(cfg.clone(), seed);
    let mut adam = crate::train::Adam::new(crate::train::AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    });
    let (_, c, h, w) = images.dims4("train_classifier")?;
    let px = c * h * w;
    for epoch in 0..cfg.epochs {
        let mut order_rng = StreamRng::new(seed, Domain::Classifier, 1 + epoch as u64);
        let order = order_rng.permutation(n);
        for chunk in order.chunks(cfg.batch) {
            let mut batch = Tensor::zeros(&[chunk.len(), c, h, w]);
            let mut blabels = Vec::with_capacity(chunk.len());
            for (bi, &si) in chunk.iter().enumerate() {
                batch.data_mut()[bi * px..(bi + 1) * px]
                    .copy_from_slice(&images.data()[si * px..(si + 1) * px]);
                blabels.push(labels[si]);
            }
            clf.zero_grad();
            let loss = clf.backprop_batch(&batch, &blabels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "classifier loss",
                });
            }
            adam.step(&mut clf.slots())?;
        }
    }
    Ok(clf)
}
