//! Training mathematics: hinge losses, Adam, exponential moving averages,
//! standing statistics, and the two-phase train step (discriminator first,
//! then generator).

use alloc::vec;
use alloc::vec::Vec;

use crate::cond::{sample_interpolation, Phase};
use crate::error::{Error, Result};
use crate::net::{Discriminator, Generator};
use crate::ops::norm::BnMode;
use crate::params::{Slot, SlotKind};
use crate::rng::{Domain, StreamRng};
use crate::scalar::Real;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// hinge losses
// ---------------------------------------------------------------------------

/// Discriminator hinge loss
///   L_D = mean(max(0, 1 − r)) + mean(max(0, 1 + f))
/// returned with dL/dr and dL/df. Real samples only contribute gradient
/// while their logit is below the margin (+1), fakes while above −1.
pub fn d_hinge_loss<R: Real>(real: &[R], fake: &[R]) -> Result<(R, Vec<R>, Vec<R>)> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Empty {
            what: "hinge loss logits",
        });
    }
    if real.iter().chain(fake).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "hinge loss logit",
        });
    }
    let nr = R::from_usize(real.len());
    let nf = R::from_usize(fake.len());
    let mut loss = R::ZERO;
    let mut dreal = vec![R::ZERO; real.len()];
    for (&r, d) in real.iter().zip(&mut dreal) {
        let margin = R::ONE - r;
        if margin > R::ZERO {
            loss += margin / nr;
            *d = -(R::ONE / nr);
        }
    }
    let mut dfake = vec![R::ZERO; fake.len()];
    for (&f, d) in fake.iter().zip(&mut dfake) {
        let margin = R::ONE + f;
        if margin > R::ZERO {
            loss += margin / nf;
            *d = R::ONE / nf;
        }
    }
    Ok((loss, dreal, dfake))
}

/// Generator hinge loss L_G = −mean(f) with its gradient.
pub fn g_hinge_loss<R: Real>(fake: &[R]) -> Result<(R, Vec<R>)> {
    if fake.is_empty() {
        return Err(Error::Empty {
            what: "hinge loss logits",
        });
    }
    if fake.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "hinge loss logit",
        });
    }
    let n = R::from_usize(fake.len());
    let mut loss = R::ZERO;
    for &f in fake {
        loss -= f / n;
    }
    let g = -(R::ONE / n);
    Ok((loss, vec![g; fake.len()]))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction. Moment buffers are matched to parameter slots
/// by position, so the slot order must not change between steps (it cannot:
/// layer lists are fixed at construction).
pub struct Adam<R> {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Moment buffers in slot order, for checkpointing.
    pub fn moments(&self) -> (&[Vec<R>], &[Vec<R>]) {
        (&self.m, &self.v)
    }

    pub fn restore(cfg: AdamConfig, t: u64, m: Vec<Vec<R>>, v: Vec<Vec<R>>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Dim {
                op: "adam restore",
                detail: alloc::string::String::from("first/second moment layouts disagree"),
            });
        }
        Ok(Adam { cfg, t, m, v })
    }

    pub fn step(&mut self, slots: &mut [Slot<'_, R>]) -> Result<()> {
        let params: Vec<&mut Slot<'_, R>> = slots
            .iter_mut()
            .filter(|s| s.kind == SlotKind::Param)
            .collect();
        if self.m.is_empty() {
            for p in &params {
                self.m.push(vec![R::ZERO; p.data.len()]);
                self.v.push(vec![R::ZERO; p.data.len()]);
            }
        } else if self.m.len() != params.len() {
            return Err(Error::Dim {
                op: "adam",
                detail: alloc::format!(
                    "{} moment buffers vs {} parameter slots",
                    self.m.len(),
                    params.len()
                ),
            });
        }
        // validate every gradient before touching any weight or moment so a
        // bad step leaves no partial update behind
        for p in &params {
            let grad = p.grad.as_deref().ok_or(Error::NotReady {
                what: "parameter gradient for adam",
            })?;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "adam gradient",
                });
            }
        }
        self.t += 1;
        let b1 = R::from_f64(self.cfg.beta1);
        let b2 = R::from_f64(self.cfg.beta2);
        let one_m_b1 = R::ONE - b1;
        let one_m_b2 = R::ONE - b2;
        // bias corrections in f64: β^t underflows gracefully there
        let c1 = 1.0 - libm::pow(self.cfg.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.cfg.beta2, self.t as f64);
        let lr = R::from_f64(self.cfg.lr);
        let inv_c1 = R::from_f64(1.0 / c1);
        let inv_c2 = R::from_f64(1.0 / c2);
        let eps = R::from_f64(self.cfg.eps);

        for (idx, p) in params.into_iter().enumerate() {
            let grad = p.grad.as_deref().ok_or(Error::NotReady {
                what: "parameter gradient for adam",
            })?;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            if m.len() != p.data.len() {
                return Err(Error::Dim {
                    op: "adam",
                    detail: alloc::format!("slot {} changed size", p.name),
                });
            }
            for ((w, &g), (mi, vi)) in p
                .data
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + one_m_b1 * g;
                *vi = b2 * *vi + one_m_b2 * g * g;
                let mhat = *mi * inv_c1;
                let vhat = *vi * inv_c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// EMA
// ---------------------------------------------------------------------------

/// w_ema ← decay·w_ema + (1−decay)·w over parameter slots (state tensors are
/// left alone; the averaged model recomputes its own statistics).
pub fn ema_update<R: Real>(
    ema_slots: &mut [Slot<'_, R>],
    live_slots: &[Slot<'_, R>],
    decay: R,
) -> Result<()> {
    let keep = decay;
    let blend = R::ONE - decay;
    let mut lit = live_slots.iter().filter(|s| s.kind == SlotKind::Param);
    for e in ema_slots.iter_mut().filter(|s| s.kind == SlotKind::Param) {
        let l = lit.next().ok_or(Error::Dim {
            op: "ema_update",
            detail: alloc::string::String::from("live model has fewer parameter slots"),
        })?;
        if e.data.len() != l.data.len() || e.name != l.name {
            return Err(Error::Dim {
                op: "ema_update",
                detail: alloc::format!("slot mismatch: {} vs {}", e.name, l.name),
            });
        }
        for (ev, &lv) in e.data.iter_mut().zip(l.data.iter()) {
            *ev = keep * *ev + blend * lv;
        }
    }
    if lit.next().is_some() {
        return Err(Error::Dim {
            op: "ema_update",
            detail: alloc::string::String::from("live model has more parameter slots"),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train step
// ---------------------------------------------------------------------------

/// Two-timescale training hyperparameters. `standard` carries the published
/// settings: D learns at 4e-4, G at 1e-4, β₁ = 0, β₂ = 0.999, batch 24,
/// weight averaging at 0.999, and 100 standing-statistics passes of batch 8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr_d: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub ema_decay: f64,
    pub standing_passes: usize,
    pub standing_batch: usize,
    pub steps: u64,
    pub seed: u64,
    /// Mix each image's caption embeddings through a random softmax during
    /// training (the conditioning this laboratory exists to study). Turned
    /// off, each image conditions on one uniformly drawn caption instead —
    /// the ablation baseline.
    pub interpolate: bool,
}

impl TrainConfig {
    pub fn standard(steps: u64, seed: u64) -> Self {
        TrainConfig {
            lr_d: 4e-4,
            lr_g: 1e-4,
            beta1: 0.0,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch: 24,
            ema_decay: 0.999,
            standing_passes: 100,
            standing_batch: 8,
            steps,
            seed,
            interpolate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_d > 0.0 && self.lr_g > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Numeric {
                what: alloc::string::String::from("learning rates and adam_eps must be positive"),
            });
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Numeric {
                what: alloc::string::String::from("adam betas must lie in [0, 1)"),
            });
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Numeric {
                what: alloc::string::String::from("ema decay must lie in [0, 1]"),
            });
        }
        if self.batch == 0 || self.standing_batch == 0 {
            return Err(Error::Empty {
                what: "train or standing batch",
            });
        }
        Ok(())
    }

    pub fn adam_d(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_d,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn adam_g(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_g,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// The numeric half of a training log line; the loop driver adds wall time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub d_loss: f64,
    pub g_loss: f64,
    pub real_logit_mean: f64,
    pub fake_logit_mean: f64,
}

fn mean_f64<R: Real>(v: &[R]) -> f64 {
    let mut acc = 0.0;
    for &x in v {
        acc += x.to_f64();
    }
    acc / v.len() as f64
}

/// One discriminator step followed by one generator step on a single batch.
///
/// Every random draw comes from the keyed stream (seed, Step, step), in this
/// order — the resume contract depends on it:
///   1. conditioning, one image at a time in batch order: with interpolation
///      on, one uniform per caption of that image; off, one bounded draw
///      picking a single caption;
///   2. the discriminator phase's latents, batch × nz normals, row-major;
///   3. the generator phase's latents, likewise.
///
/// Phases: spectral-norm power iteration once on every weight of both nets,
/// whose estimates then stay fixed for the whole step; D phase scores real
/// images and frozen-G fakes under the same mixed conditioning and takes a
/// hinge-loss Adam step; G phase re-generates from fresh latents and climbs
/// the discriminator's score; the averaged generator then absorbs the new
/// weights. Returns the losses and mean logits of the D phase.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Real>(
    g: &mut Generator<R>,
    d: &mut Discriminator<R>,
    g_ema: &mut Generator<R>,
    adam_g: &mut Adam<R>,
    adam_d: &mut Adam<R>,
    cfg: &TrainConfig,
    images: &Tensor<R>,
    caption_sets: &[Tensor<R>],
    step: u64,
) -> Result<StepRecord> {
    cfg.validate()?;
    let (n, _, _, _) = images.dims4("train_step")?;
    if n == 0 || caption_sets.is_empty() {
        return Err(Error::Empty {
            what: "training batch",
        });
    }
    if caption_sets.len() != n {
        return Err(Error::Dim {
            op: "train_step",
            detail: alloc::format!("{n} images vs {} caption sets", caption_sets.len()),
        });
    }
    let ed = g.cfg.embed_dim;
    let nz = g.cfg.nz;
    let mut rng = StreamRng::new(cfg.seed, Domain::Step, step);

    // (1) conditioning
    let mut s = Tensor::zeros(&[n, ed]);
    for (i, set) in caption_sets.iter().enumerate() {
        let (rows, d_set) = set.dims2("train_step captions")?;
        if d_set != ed {
            return Err(Error::Dim {
                op: "train_step",
                detail: alloc::format!("caption embedding width {d_set} vs {ed}"),
            });
        }
        let row: Vec<R> = if cfg.interpolate {
            sample_interpolation(set, &mut rng, Phase::Train)?
        } else {
            let pick = rng.below(rows);
            set.data()[pick * ed..(pick + 1) * ed].to_vec()
        };
        s.data_mut()[i * ed..(i + 1) * ed].copy_from_slice(&row);
    }

    // (2) + (3) latents
    let draw_z = |rng: &mut StreamRng| {
        let data: Vec<R> = (0..n * nz).map(|_| R::from_f64(rng.normal())).collect();
        Tensor::from_vec(&[n, nz], data)
    };
    let z_d = draw_z(&mut rng)?;
    let z_g = draw_z(&mut rng)?;

    g.power_iterate_all(1);
    d.power_iterate_all(1);

    // D phase: real and frozen-G fake under the same conditioning
    let (fake_d, _) = g.forward(&z_d, &s, BnMode::Train)?;
    let (real_logits, real_cache) = d.forward(images, &s)?;
    let (fake_logits, fake_cache) = d.forward(&fake_d, &s)?;
    let (d_loss, dreal, dfake) = d_hinge_loss(&real_logits, &fake_logits)?;
    d.zero_grad();
    d.backward(real_cache, &dreal)?;
    d.backward(fake_cache, &dfake)?;
    adam_d.step(&mut d.slots())?;

    // G phase: fresh latents, D frozen (its gradients are discarded)
    let (fake_g, g_cache) = g.forward(&z_g, &s, BnMode::Train)?;
    let (g_logits, g_dcache) = d.forward(&fake_g, &s)?;
    let (g_loss, dlogits) = g_hinge_loss(&g_logits)?;
    d.zero_grad();
    let (dimg, _) = d.backward(g_dcache, &dlogits)?;
    g.zero_grad();
    g.backward(g_cache, &dimg)?;
    adam_g.step(&mut g.slots())?;
    d.zero_grad();

    ema_update(
        &mut g_ema.slots(),
        &g.slots(),
        R::from_f64(cfg.ema_decay),
    )?;

    Ok(StepRecord {
        d_loss: d_loss.to_f64(),
        g_loss: g_loss.to_f64(),
        real_logit_mean: mean_f64(&real_logits),
        fake_logit_mean: mean_f64(&fake_logits),
    })
}

// ---------------------------------------------------------------------------
// standing statistics
// ---------------------------------------------------------------------------

/// Re-estimate every normalization site's statistics on the averaged
/// generator by running `passes` accumulation forwards, each on a fresh
/// batch of latents paired with captions drawn uniformly from the dataset
/// pool. After finalizing, eval normalizes with the aggregated moments only,
/// so a sample's output no longer depends on what shares its batch.
///
/// Per pass the rng yields standing_batch × nz normals (row-major), then
/// standing_batch caption indices.
pub fn recompute_standing_stats<R: Real>(
    g: &mut Generator<R>,
    embeddings: &Tensor<R>,
    passes: usize,
    standing_batch: usize,
    rng: &mut StreamRng,
) -> Result<()> {
    if passes == 0 {
        return Err(Error::Empty {
            what: "standing statistics passes",
        });
    }
    if standing_batch == 0 {
        return Err(Error::Empty {
            what: "standing batch",
        });
    }
    let (pool, ed) = embeddings.dims2("recompute_standing_stats")?;
    if pool == 0 {
        return Err(Error::Empty {
            what: "caption embedding pool",
        });
    }
    if ed != g.cfg.embed_dim {
        return Err(Error::Dim {
            op: "recompute_standing_stats",
            detail: alloc::format!("embedding width {ed} vs configured {}", g.cfg.embed_dim),
        });
    }
    let nz = g.cfg.nz;
    for (_, stats) in g.norm_sites() {
        stats.reset_accumulation();
    }
    for _ in 0..passes {
        let z = {
            let data: Vec<R> = (0..standing_batch * nz)
                .map(|_| R::from_f64(rng.normal()))
                .collect();
            Tensor::from_vec(&[standing_batch, nz], data)?
        };
        let mut s = Tensor::zeros(&[standing_batch, ed]);
        for i in 0..standing_batch {
            let pick = rng.below(pool);
            s.data_mut()[i * ed..(i + 1) * ed]
                .copy_from_slice(&embeddings.data()[pick * ed..(pick + 1) * ed]);
        }
        g.forward(&z, &s, BnMode::Accumulate)?;
    }
    for (_, stats) in g.norm_sites() {
        stats.finalize_accumulation()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn d_hinge_matches_hand_computed_cases() {
        // all logits inside the margins: L = (1-r) + (1+f)
        let (l, dr, df) = d_hinge_loss(&[0.5f64], &[-0.25]).unwrap();
        assert!((l - (0.5 + 0.75)).abs() < 1e-15);
        assert_eq!(dr, vec![-1.0]);
        assert_eq!(df, vec![1.0]);

        // saturated real (r>1) contributes nothing
        let (l, dr, df) = d_hinge_loss(&[2.0f64], &[-3.0]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(dr, vec![0.0]);
        assert_eq!(df, vec![0.0]);

        // means over uneven batch sizes
        let (l, dr, _) = d_hinge_loss(&[0.0f64, 2.0], &[0.0]).unwrap();
        assert!((l - (0.5 + 1.0)).abs() < 1e-15);
        assert_eq!(dr, vec![-0.5, 0.0]);

        // one saturated real, one inside: (0 + 2)/2 + 1.5
        let (l, _, _) = d_hinge_loss(&[2.0f64, -1.0], &[0.5]).unwrap();
        assert!((l - 2.5).abs() < 1e-15);
    }

    #[test]
    fn hinge_losses_reject_non_finite_logits() {
        assert!(d_hinge_loss(&[f64::NAN], &[0.0]).is_err());
        assert!(d_hinge_loss(&[0.0], &[f64::INFINITY]).is_err());
        assert!(g_hinge_loss(&[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn adam_leaves_weights_untouched_on_non_finite_gradients() {
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        });
        let mut w = Tensor::from_vec(&[2], vec![1.0f64, 2.0]).unwrap();
        let mut g = Tensor::from_vec(&[2], vec![0.5f64, f64::NAN]).unwrap();
        let mut slots = vec![Slot::param(
            alloc::string::String::from("w"),
            vec![2],
            w.data_mut(),
            g.data_mut(),
        )];
        assert!(adam.step(&mut slots).is_err());
        drop(slots);
        assert_eq!(w.data(), &[1.0, 2.0]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn d_hinge_gradients_match_central_differences_off_the_kink() {
        // pick logits a safe distance from |1−r|=0 so the subgradient is flat
        let real = [0.3f64, 1.7, -0.8];
        let fake = [0.6f64, -1.9, 0.1];
        let (_, dr, df) = d_hinge_loss(&real, &fake).unwrap();
        let eps = 1e-6;
        for i in 0..real.len() {
            let mut rp = real;
            rp[i] += eps;
            let mut rm = real;
            rm[i] -= eps;
            let lp = d_hinge_loss(&rp, &fake).unwrap().0;
            let lm = d_hinge_loss(&rm, &fake).unwrap().0;
            assert!(((lp - lm) / (2.0 * eps) - dr[i]).abs() < 1e-9);
        }
        for i in 0..fake.len() {
            let mut fp = fake;
            fp[i] += eps;
            let mut fm = fake;
            fm[i] -= eps;
            let lp = d_hinge_loss(&real, &fp).unwrap().0;
            let lm = d_hinge_loss(&real, &fm).unwrap().0;
            assert!(((lp - lm) / (2.0 * eps) - df[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn g_hinge_is_negative_mean_with_constant_gradient() {
        let (l, d) = g_hinge_loss(&[1.0f64, -3.0, 2.0]).unwrap();
        assert!((l - 0.0).abs() < 1e-15);
        assert_eq!(d, vec![-1.0 / 3.0; 3]);
    }

    #[test]
    fn adam_follows_a_hand_computed_trajectory() {
        // Single parameter w₀=1, constant gradient 0.5, lr=0.1, β₁=0.9,
        // β₂=0.999. Three steps, worked out by hand. With a constant
        // gradient, mhat = g and vhat = g² at every step, so each step is
        // exactly −lr·g/(|g|+eps) — but verify through the recurrences.
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut adam = Adam::new(cfg);
        let mut w = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let mut g = Tensor::from_vec(&[1], vec![0.5f64]).unwrap();

        let mut expect_w = 1.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for t in 1..=3 {
            {
                let mut slots = vec![Slot::param(
                    alloc::string::String::from("w"),
                    vec![1],
                    w.data_mut(),
                    g.data_mut(),
                )];
                adam.step(&mut slots).unwrap();
            }
            m = 0.9 * m + 0.1 * 0.5;
            v = 0.999 * v + 0.001 * 0.25;
            let mhat = m / (1.0 - libm::pow(0.9, t as f64));
            let vhat = v / (1.0 - libm::pow(0.999, t as f64));
            expect_w -= 0.1 * mhat / (libm::sqrt(vhat) + 1e-8);
            assert!(
                (w.data()[0] - expect_w).abs() < 1e-12,
                "step {t}: {} vs {expect_w}",
                w.data()[0]
            );
        }
    }

    #[test]
    fn adam_with_zero_beta1_uses_raw_gradients() {
        // β₁=0 (the GAN setting): m = g exactly, no momentum, and the first
        // step moves by lr·g/(√(g²/(1−β₂ᵗ)) ... ) — just check two steps
        // against the closed recurrence.
        let cfg = AdamConfig {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut adam = Adam::new(cfg);
        let mut w = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut expect = 0.0f64;
        let mut v = 0.0f64;
        for t in 1..=2 {
            let grad = 0.3 * t as f64;
            let mut g = Tensor::from_vec(&[1], vec![grad]).unwrap();
            let mut slots = vec![Slot::param(
                alloc::string::String::from("w"),
                vec![1],
                w.data_mut(),
                g.data_mut(),
            )];
            adam.step(&mut slots).unwrap();
            drop(slots);
            v = 0.999 * v + 0.001 * grad * grad;
            let vhat = v / (1.0 - libm::pow(0.999, t as f64));
            expect -= 2e-4 * grad / (libm::sqrt(vhat) + 1e-8);
            assert!((w.data()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn ema_matches_the_closed_form_after_a_hundred_steps() {
        // With constant live weights θ*, e_k = θ* + d^k (e₀ − θ*). After
        // k=100 steps at decay 0.999 the recurrence must match the closed
        // form to 1e-10.
        let decay = 0.999f64;
        let theta_star = 2.5f64;
        let e0 = -1.0f64;
        let mut ema_w = Tensor::from_vec(&[1], vec![e0]).unwrap();
        let mut ema_g = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut live_w = Tensor::from_vec(&[1], vec![theta_star]).unwrap();
        let mut live_g = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        for _ in 0..100 {
            let mut es = vec![Slot::param(
                alloc::string::String::from("w"),
                vec![1],
                ema_w.data_mut(),
                ema_g.data_mut(),
            )];
            let ls = vec![Slot::param(
                alloc::string::String::from("w"),
                vec![1],
                live_w.data_mut(),
                live_g.data_mut(),
            )];
            ema_update(&mut es, &ls, decay).unwrap();
        }
        let closed = theta_star + libm::pow(decay, 100.0) * (e0 - theta_star);
        assert!(
            (ema_w.data()[0] - closed).abs() < 1e-10,
            "{} vs {closed}",
            ema_w.data()[0]
        );
    }

    #[test]
    fn ema_rejects_mismatched_slot_lists() {
        let mut e_w = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut e_g = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut es = vec![Slot::param(
            alloc::string::String::from("a"),
            vec![1],
            e_w.data_mut(),
            e_g.data_mut(),
        )];
        let ls: Vec<Slot<'_, f64>> = Vec::new();
        assert!(ema_update(&mut es, &ls, 0.999).is_err());
    }

    // -- full-step wiring on the miniature configuration ---------------------

    use crate::net::{Discriminator, Generator, NetworkConfig};

    fn mini_cfg() -> NetworkConfig {
        NetworkConfig {
            nz: 6,
            embed_dim: 10,
            ..NetworkConfig::miniature()
        }
    }

    fn mini_nets(seed: u64) -> (Generator<f64>, Discriminator<f64>, Generator<f64>) {
        let cfg = mini_cfg();
        let mut rng = StreamRng::new(seed, Domain::ParamInit, 0);
        let g = Generator::new(cfg, &mut rng).unwrap();
        let d = Discriminator::new(cfg, &mut rng).unwrap();
        // the averaged twin starts as an exact copy: same stream, same draws
        let mut rng2 = StreamRng::new(seed, Domain::ParamInit, 0);
        let g_ema = Generator::new(cfg, &mut rng2).unwrap();
        (g, d, g_ema)
    }

    fn mini_batch(seed: u64) -> (Tensor<f64>, Vec<Tensor<f64>>) {
        let mut rng = StreamRng::new(seed, Domain::DataGen, 7);
        let n = 3;
        let images = Tensor::from_vec(
            &[n, 3, 8, 8],
            (0..n * 3 * 64).map(|_| rng.uniform() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let caption_sets = (0..n)
            .map(|i| {
                let rows = 2 + i % 2;
                Tensor::from_vec(
                    &[rows, 10],
                    (0..rows * 10).map(|_| rng.normal()).collect(),
                )
                .unwrap()
            })
            .collect();
        (images, caption_sets)
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig {
            batch: 3,
            ..TrainConfig::standard(1, 99)
        }
    }

    #[test]
    fn one_step_moves_parameters_in_both_networks() {
        let (mut g, mut d, mut g_ema) = mini_nets(11);
        let (images, caps) = mini_batch(11);
        let cfg = train_cfg();
        let mut adam_g = Adam::new(cfg.adam_g());
        let mut adam_d = Adam::new(cfg.adam_d());

        let g_before = g.input.w.clone();
        let d_before = d.input.w.clone();
        let rec = train_step(
            &mut g, &mut d, &mut g_ema, &mut adam_g, &mut adam_d, &cfg, &images, &caps, 0,
        )
        .unwrap();
        assert!(rec.d_loss.is_finite() && rec.g_loss.is_finite());
        assert!(g.input.w.data() != g_before.data(), "generator never moved");
        assert!(d.input.w.data() != d_before.data(), "discriminator never moved");
    }

    #[test]
    fn averaged_generator_blends_old_and_new_weights_exactly() {
        let (mut g, mut d, mut g_ema) = mini_nets(12);
        let (images, caps) = mini_batch(12);
        let cfg = train_cfg();
        let mut adam_g = Adam::new(cfg.adam_g());
        let mut adam_d = Adam::new(cfg.adam_d());

        let theta0 = g.input.w.clone();
        train_step(
            &mut g, &mut d, &mut g_ema, &mut adam_g, &mut adam_d, &cfg, &images, &caps, 0,
        )
        .unwrap();
        let decay = cfg.ema_decay;
        for ((e, &t0), &t1) in g_ema
            .input
            .w
            .data()
            .iter()
            .zip(theta0.data())
            .zip(g.input.w.data())
        {
            let expect = decay * t0 + (1.0 - decay) * t1;
            assert!((e - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_seeds_produce_identical_steps_and_weights() {
        let run = || {
            let (mut g, mut d, mut g_ema) = mini_nets(13);
            let (images, caps) = mini_batch(13);
            let cfg = train_cfg();
            let mut adam_g = Adam::new(cfg.adam_g());
            let mut adam_d = Adam::new(cfg.adam_d());
            let mut recs = Vec::new();
            for step in 0..2 {
                recs.push(
                    train_step(
                        &mut g, &mut d, &mut g_ema, &mut adam_g, &mut adam_d, &cfg, &images,
                        &caps, step,
                    )
                    .unwrap(),
                );
            }
            (recs, g.input.w.clone(), d.input.w.clone(), g_ema.input.w.clone())
        };
        let (ra, gwa, dwa, ewa) = run();
        let (rb, gwb, dwb, ewb) = run();
        assert_eq!(ra, rb);
        assert_eq!(gwa.data(), gwb.data());
        assert_eq!(dwa.data(), dwb.data());
        assert_eq!(ewa.data(), ewb.data());
    }

    #[test]
    fn interpolation_toggle_changes_the_conditioning_draws() {
        let run = |interpolate: bool| {
            let (mut g, mut d, mut g_ema) = mini_nets(14);
            let (images, caps) = mini_batch(14);
            let cfg = TrainConfig {
                interpolate,
                ..train_cfg()
            };
            let mut adam_g = Adam::new(cfg.adam_g());
            let mut adam_d = Adam::new(cfg.adam_d());
            train_step(
                &mut g, &mut d, &mut g_ema, &mut adam_g, &mut adam_d, &cfg, &images, &caps, 0,
            )
            .unwrap()
        };
        assert_ne!(run(true), run(false));
    }

    #[test]
    fn standing_stats_are_deterministic_and_unlock_eval() {
        let (_, _, mut g_ema) = mini_nets(15);
        let mut rng = StreamRng::new(15, Domain::DataGen, 1);
        let pool =
            Tensor::from_vec(&[5, 10], (0..50).map(|_| rng.normal()).collect()).unwrap();

        assert!(recompute_standing_stats(
            &mut g_ema,
            &pool,
            0,
            4,
            &mut StreamRng::new(15, Domain::Standing, 0)
        )
        .is_err());

        let mut r1 = StreamRng::new(15, Domain::Standing, 0);
        recompute_standing_stats(&mut g_ema, &pool, 3, 4, &mut r1).unwrap();
        let snap1: Vec<(String, Vec<f64>, Vec<f64>)> = g_ema
            .norm_sites()
            .into_iter()
            .map(|(n, s)| (n, s.mean.clone(), s.var.clone()))
            .collect();

        let mut r2 = StreamRng::new(15, Domain::Standing, 0);
        recompute_standing_stats(&mut g_ema, &pool, 3, 4, &mut r2).unwrap();
        let snap2: Vec<(String, Vec<f64>, Vec<f64>)> = g_ema
            .norm_sites()
            .into_iter()
            .map(|(n, s)| (n, s.mean.clone(), s.var.clone()))
            .collect();
        assert_eq!(snap1, snap2);

        // eval now runs (bit-deterministically) on the averaged model
        let z = Tensor::from_vec(&[2, 6], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect())
            .unwrap();
        let s = Tensor::from_vec(&[2, 10], (0..20).map(|i| i as f64 * 0.05).collect()).unwrap();
        let (y1, _) = g_ema.forward(&z, &s, BnMode::Eval).unwrap();
        let (y2, _) = g_ema.forward(&z, &s, BnMode::Eval).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    #[ignore = "timing probe, run explicitly"]
    fn bench_step_cost() {
        let cfg = NetworkConfig::desk();
        let mut rng = StreamRng::new(1, Domain::ParamInit, 0);
        let mut g: Generator<f32> = Generator::new(cfg, &mut rng).unwrap();
        let mut d: Discriminator<f32> = Discriminator::new(cfg, &mut rng).unwrap();
        let mut g_ema: Generator<f32> =
            Generator::new(cfg, &mut StreamRng::new(1, Domain::ParamInit, 0)).unwrap();
        let tc = TrainConfig::standard(1, 1);
        let mut adam_g = Adam::new(tc.adam_g());
        let mut adam_d = Adam::new(tc.adam_d());
        let mut drng = StreamRng::new(1, Domain::DataGen, 0);
        let n = tc.batch;
        let images = Tensor::from_vec(
            &[n, 3, 32, 32],
            (0..n * 3 * 1024)
                .map(|_| drng.uniform() as f32 * 2.0 - 1.0)
                .collect(),
        )
        .unwrap();
        let caps: Vec<Tensor<f32>> = (0..n)
            .map(|_| {
                Tensor::from_vec(&[10, 256], (0..2560).map(|_| drng.normal() as f32).collect())
                    .unwrap()
            })
            .collect();
        let t0 = std::time::Instant::now();
        for step in 0..3 {
            train_step(
                &mut g, &mut d, &mut g_ema, &mut adam_g, &mut adam_d, &tc, &images, &caps, step,
            )
            .unwrap();
        }
        let dt = t0.elapsed().as_secs_f64() / 3.0;
        std::println!("desk step (batch {n}, f32): {:.3} s", dt);
    }

    #[test]
    fn accumulated_mean_is_the_average_of_per_pass_batch_means() {
        // streaming-moment oracle at the normalization level: accumulate
        // three known batches, finalize, and compare against by-hand means
        use crate::ops::norm::{batchnorm_forward, GainBias, NormStats};
        let mut stats = NormStats::new(2, 0.1, 1e-5);
        let gain = [1.0f64, 1.0];
        let bias = [0.0f64, 0.0];
        let mut rng = StreamRng::new(77, Domain::DataGen, 2);
        let mut expected_mean = vec![0.0f64; 2];
        let batches: Vec<Tensor<f64>> = (0..3)
            .map(|_| {
                Tensor::from_vec(&[2, 2, 2, 2], (0..16).map(|_| rng.normal()).collect()).unwrap()
            })
            .collect();
        for b in &batches {
            // independent per-batch channel means: average over N, H, W
            for ch in 0..2 {
                let mut acc = 0.0;
                for s in 0..2 {
                    for i in 0..4 {
                        acc += b.data()[(s * 2 + ch) * 4 + i];
                    }
                }
                expected_mean[ch] += acc / 8.0;
            }
            batchnorm_forward(
                b,
                GainBias::PerChannel(&gain, &bias),
                &mut stats,
                BnMode::Accumulate,
            )
            .unwrap();
        }
        stats.finalize_accumulation().unwrap();
        for ch in 0..2 {
            assert!((stats.mean[ch] - expected_mean[ch] / 3.0).abs() < 1e-12);
        }
    }
}
