//! Batch normalization over NCHW with three modes:
//!
//! * `Train` — normalize by batch statistics, fold them into running
//!   estimates with the usual momentum update.
//! * `Eval` — normalize by the stored estimates only; an error until some
//!   statistics exist (a freshly initialized network has none).
//! * `Accumulate` — normalize by batch statistics (like train) while adding
//!   them into plain running *sums*; `finalize_accumulation` divides by the
//!   pass count. Averaging over many fresh batches ("standing statistics")
//!   makes eval outputs independent of evaluation batch size.
//!
//! Gains and biases come in two flavours: per-channel vectors (the final
//! generator norm) and per-sample [N,C] matrices (conditional batch norm,
//! where gains are projected from the latent-and-sentence vector upstream).
//! Variance is the biased 1/M moment everywhere — normalization and stored
//! estimates must agree on the convention or eval drifts from train.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
    Accumulate,
}

#[derive(Debug, Clone, Copy)]
pub enum GainBias<'a, R> {
    PerChannel(&'a [R], &'a [R]),
    /// Row-major [N, C], one gain/bias pair per sample and channel.
    PerSample(&'a [R], &'a [R]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<R> {
    pub mean: Vec<R>,
    pub var: Vec<R>,
    pub momentum: R,
    pub eps: R,
    /// Eval is legal once true (set by the first train step or by
    /// finalizing an accumulation).
    pub ready: bool,
    pub accum_passes: u64,
}

impl<R: Real> NormStats<R> {
    pub fn new(channels: usize, momentum: R, eps: R) -> Self {
        NormStats {
            mean: vec![R::ZERO; channels],
            var: vec![R::ONE; channels],
            momentum,
            eps,
            ready: false,
            accum_passes: 0,
        }
    }

    /// Clear estimates ahead of a standing-statistics recomputation.
    pub fn reset_accumulation(&mut self) {
        for m in &mut self.mean {
            *m = R::ZERO;
        }
        for v in &mut self.var {
            *v = R::ZERO;
        }
        self.accum_passes = 0;
        self.ready = false;
    }

    pub fn finalize_accumulation(&mut self) -> Result<()> {
        if self.accum_passes == 0 {
            return Err(Error::NotReady {
                what: "standing statistics (no accumulation passes)",
            });
        }
        let inv = R::ONE / R::from_usize(self.accum_passes as usize);
        for m in &mut self.mean {
            *m *= inv;
        }
        for v in &mut self.var {
            *v *= inv;
        }
        self.accum_passes = 0;
        self.ready = true;
        Ok(())
    }
}

/// Everything backward needs, captured at forward time.
#[derive(Debug, Clone)]
pub struct BnCache<R> {
    pub xhat: Tensor<R>,
    pub inv_std: Vec<R>,
    /// Batch statistics were used (train mode); eval treats μ,σ as constants.
    pub batch_stats: bool,
}

fn batch_moments<R: Real>(x: &Tensor<R>, n: usize, c: usize, hw: usize) -> (Vec<R>, Vec<R>) {
    let m = R::from_usize(n * hw);
    let mut mean = vec![R::ZERO; c];
    let mut var = vec![R::ZERO; c];
    for s in 0..n {
        for ch in 0..c {
            let plane = &x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            let mut acc = R::ZERO;
            for &v in plane {
                acc += v;
            }
            mean[ch] += acc;
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for s in 0..n {
        for ch in 0..c {
            let plane = &x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            let mu = mean[ch];
            let mut acc = R::ZERO;
            for &v in plane {
                let d = v - mu;
                acc += d * d;
            }
            var[ch] += acc;
        }
    }
    for v in &mut var {
        *v /= m;
    }
    (mean, var)
}

pub fn batchnorm_forward<R: Real>(
    x: &Tensor<R>,
    gb: GainBias<'_, R>,
    stats: &mut NormStats<R>,
    mode: BnMode,
) -> Result<(Tensor<R>, BnCache<R>)> {
    let (n, c, h, w) = x.dims4("batchnorm")?;
    if stats.mean.len() != c {
        return Err(Error::Dim {
            op: "batchnorm",
            detail: alloc::format!("{c} channels vs {} stat entries", stats.mean.len()),
        });
    }
    let hw = h * w;

    let (mean, var, batch_stats) = match mode {
        BnMode::Train | BnMode::Accumulate => {
            let (bm, bv) = batch_moments(x, n, c, hw);
            match mode {
                BnMode::Train => {
                    let mom = stats.momentum;
                    let keep = R::ONE - mom;
                    for ch in 0..c {
                        stats.mean[ch] = keep * stats.mean[ch] + mom * bm[ch];
                        stats.var[ch] = keep * stats.var[ch] + mom * bv[ch];
                    }
                    stats.ready = true;
                }
                BnMode::Accumulate => {
                    for ch in 0..c {
                        stats.mean[ch] += bm[ch];
                        stats.var[ch] += bv[ch];
                    }
                    stats.accum_passes += 1;
                }
                BnMode::Eval => unreachable!(),
            }
            (bm, bv, true)
        }
        BnMode::Eval => {
            if !stats.ready {
                return Err(Error::NotReady {
                    what: "batchnorm statistics (eval before any train/accumulate)",
                });
            }
            (stats.mean.clone(), stats.var.clone(), false)
        }
    };

    let inv_std: Vec<R> = var.iter().map(|&v| R::ONE / (v + stats.eps).sqrt()).collect();
    let mut xhat = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let mu = mean[ch];
            let is = inv_std[ch];
            let plane = &mut xhat.data_mut()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            for v in plane {
                *v = (*v - mu) * is;
            }
        }
    }

    let mut y = xhat.clone();
    for s in 0..n {
        for ch in 0..c {
            let (g, b) = match gb {
                GainBias::PerChannel(gs, bs) => (gs[ch], bs[ch]),
                GainBias::PerSample(gs, bs) => (gs[s * c + ch], bs[s * c + ch]),
            };
            let plane = &mut y.data_mut()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            for v in plane {
                *v = *v * g + b;
            }
        }
    }

    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            batch_stats,
        },
    ))
}

/// Gradients of the gain/bias in the same layout they were supplied.
#[derive(Debug, Clone)]
pub struct BnGrads<R> {
    pub dgain: Vec<R>,
    pub dbias: Vec<R>,
}

/// Backward through normalization and the affine transform.
///
/// In train mode μ and σ are functions of the batch, so the familiar coupled
/// form applies per channel: with m = N·H·W,
///     dx = inv_std · (dx̂ − mean(dx̂) − x̂ · mean(dx̂ ⊙ x̂))
/// In eval mode the statistics are constants and dx = dx̂ · inv_std.
pub fn batchnorm_backward<R: Real>(
    dy: &Tensor<R>,
    gb: GainBias<'_, R>,
    cache: &BnCache<R>,
    grads: &mut BnGrads<R>,
) -> Result<Tensor<R>> {
    let (n, c, h, w) = dy.dims4("batchnorm_backward")?;
    let hw = h * w;
    let m = R::from_usize(n * hw);

    // dgain/dbias and dx̂.
    let mut dxhat = dy.clone();
    for s in 0..n {
        for ch in 0..c {
            let idx = s * c + ch;
            let (g, gi) = match gb {
                GainBias::PerChannel(gs, _) => (gs[ch], ch),
                GainBias::PerSample(gs, _) => (gs[idx], idx),
            };
            let dyp = &dy.data()[idx * hw..(idx + 1) * hw];
            let xhp = &cache.xhat.data()[idx * hw..(idx + 1) * hw];
            let mut dg = R::ZERO;
            let mut db = R::ZERO;
            for (&gy, &xh) in dyp.iter().zip(xhp) {
                dg += gy * xh;
                db += gy;
            }
            grads.dgain[gi] += dg;
            grads.dbias[gi] += db;
            let plane = &mut dxhat.data_mut()[idx * hw..(idx + 1) * hw];
            for v in plane {
                *v *= g;
            }
        }
    }

    let mut dx = dxhat.clone();
    if cache.batch_stats {
        for ch in 0..c {
            let mut sum_dxhat = R::ZERO;
            let mut sum_dxhat_xhat = R::ZERO;
            for s in 0..n {
                let idx = s * c + ch;
                let dxp = &dxhat.data()[idx * hw..(idx + 1) * hw];
                let xhp = &cache.xhat.data()[idx * hw..(idx + 1) * hw];
                for (&d, &xh) in dxp.iter().zip(xhp) {
                    sum_dxhat += d;
                    sum_dxhat_xhat += d * xh;
                }
            }
            let mean_dxhat = sum_dxhat / m;
            let mean_dxhat_xhat = sum_dxhat_xhat / m;
            let is = cache.inv_std[ch];
            for s in 0..n {
                let idx = s * c + ch;
                let xhp = &cache.xhat.data()[idx * hw..(idx + 1) * hw];
                let plane = &mut dx.data_mut()[idx * hw..(idx + 1) * hw];
                for (v, &xh) in plane.iter_mut().zip(xhp) {
                    *v = is * (*v - mean_dxhat - xh * mean_dxhat_xhat);
                }
            }
        }
    } else {
        for s in 0..n {
            for ch in 0..c {
                let idx = s * c + ch;
                let is = cache.inv_std[ch];
                let plane = &mut dx.data_mut()[idx * hw..(idx + 1) * hw];
                for v in plane {
                    *v *= is;
                }
            }
        }
    }
    Ok(dx)
}
