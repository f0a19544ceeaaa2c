//! Parameter-owning layer wrappers over the raw ops.
//!
//! Each layer owns its weights, gradient buffers and any persistent state
//! (spectral-norm `u`, batch-norm statistics), and exposes
//! `forward → (output, cache)` plus `backward(cache, dy) → dx` which
//! accumulates into the gradient buffers. Power iteration is a separate
//! explicit step so forward passes stay pure: during training it runs once
//! per step, at eval time the stored `u` is used as-is and equal inputs give
//! bit-equal outputs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::ops::dense::{dense_backward, dense_forward};
use crate::ops::norm::{batchnorm_backward, batchnorm_forward, BnCache, BnGrads, BnMode, GainBias, NormStats};
use crate::ops::spectral::{spectral_backward, spectral_normalize, SnApplied, SnShape, SpectralState};
use crate::params::Slot;
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// The non-weight half of an `SnApplied`, kept in caches next to the
/// normalized weight tensor (which layers need in `Tensor` form anyway).
#[derive(Debug, Clone)]
pub struct SnParts<R> {
    pub sigma: R,
    pub u: Vec<R>,
    pub v: Vec<R>,
    pub passthrough: bool,
}

fn split_applied<R: Real>(shape: &[usize], app: SnApplied<R>) -> Result<(Tensor<R>, SnParts<R>)> {
    let w = Tensor::from_vec(shape, app.w_sn)?;
    Ok((
        w,
        SnParts {
            sigma: app.sigma,
            u: app.u,
            v: app.v,
            passthrough: app.passthrough,
        },
    ))
}

fn rejoin<R: Real>(w_sn: Tensor<R>, parts: SnParts<R>) -> SnApplied<R> {
    SnApplied {
        w_sn: w_sn.into_data(),
        sigma: parts.sigma,
        u: parts.u,
        v: parts.v,
        passthrough: parts.passthrough,
    }
}

fn he_tensor<R: Real>(shape: &[usize], fan_in: usize, rng: &mut StreamRng) -> Tensor<R> {
    let n: usize = shape.iter().product();
    let std = libm::sqrt(2.0 / fan_in as f64);
    let data = (0..n).map(|_| R::from_f64(rng.normal() * std)).collect();
    Tensor::from_vec(shape, data).expect("shape/count agree by construction")
}

fn accumulate<R: Real>(acc: &mut [R], add: &[R]) {
    for (a, &g) in acc.iter_mut().zip(add) {
        *a += g;
    }
}

// ---------------------------------------------------------------------------
// spectral-normalized convolution
// ---------------------------------------------------------------------------

pub struct SnConv<R> {
    pub name: String,
    pub w: Tensor<R>,
    pub dw: Tensor<R>,
    pub b: Option<Vec<R>>,
    pub db: Option<Vec<R>>,
    pub state: SpectralState<R>,
    pub geom: ConvGeometry,
}

pub struct SnConvCache<R> {
    pub x: Tensor<R>,
    pub w_sn: Tensor<R>,
    pub parts: SnParts<R>,
}

impl<R: Real> SnConv<R> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        pad: usize,
        bias: bool,
        rng: &mut StreamRng,
    ) -> Self {
        let w = he_tensor(&[c_out, c_in, k, k], c_in * k * k, rng);
        let state = SpectralState::init(c_out, rng);
        SnConv {
            name: String::from(name),
            dw: Tensor::zeros(w.shape()),
            w,
            b: bias.then(|| vec![R::ZERO; c_out]),
            db: bias.then(|| vec![R::ZERO; c_out]),
            state,
            geom: ConvGeometry { stride: 1, pad },
        }
    }

    pub fn sn_shape(&self) -> SnShape {
        let s = self.w.shape();
        SnShape {
            out: s[0],
            rest: s[1] * s[2] * s[3],
            transposed: false,
        }
    }

    pub fn power_iterate(&mut self, iters: usize) {
        let shape = self.sn_shape();
        self.state.power_iterate(self.w.data(), shape, iters);
    }

    pub fn forward(&self, x: &Tensor<R>) -> Result<(Tensor<R>, SnConvCache<R>)> {
        let app = spectral_normalize(self.w.data(), self.sn_shape(), &self.state);
        let (w_sn, parts) = split_applied(self.w.shape(), app)?;
        let y = conv2d_forward(x, &w_sn, self.b.as_deref(), self.geom)?;
        Ok((
            y,
            SnConvCache {
                x: x.clone(),
                w_sn,
                parts,
            },
        ))
    }

    pub fn backward(&mut self, cache: SnConvCache<R>, dy: &Tensor<R>) -> Result<Tensor<R>> {
        let (dx, dw_sn, db) = conv2d_backward(&cache.x, &cache.w_sn, dy, self.geom)?;
        let app = rejoin(cache.w_sn, cache.parts);
        let dw = spectral_backward(dw_sn.data(), &app, self.sn_shape());
        accumulate(self.dw.data_mut(), &dw);
        if let Some(dbv) = &mut self.db {
            accumulate(dbv, &db);
        }
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.dw.fill(R::ZERO);
        if let Some(db) = &mut self.db {
            db.fill(R::ZERO);
        }
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = Vec::new();
        let shape = self.w.shape().to_vec();
        out.push(Slot::param(
            format!("{}.w", self.name),
            shape,
            self.w.data_mut(),
            self.dw.data_mut(),
        ));
        if let (Some(b), Some(db)) = (&mut self.b, &mut self.db) {
            let n = b.len();
            out.push(Slot::param(format!("{}.b", self.name), vec![n], b, db));
        }
        let un = self.state.u.len();
        out.push(Slot::state(
            format!("{}.u", self.name),
            vec![un],
            &mut self.state.u,
        ));
        out
    }
}

// ---------------------------------------------------------------------------
// spectral-normalized dense
// ---------------------------------------------------------------------------

pub struct SnDense<R> {
    pub name: String,
    /// Stored [in, out]; spectral norm sees the transpose so `u` has one
    /// entry per output unit.
    pub w: Tensor<R>,
    pub dw: Tensor<R>,
    pub b: Option<Vec<R>>,
    pub db: Option<Vec<R>>,
    pub state: SpectralState<R>,
}

pub struct SnDenseCache<R> {
    pub x: Tensor<R>,
    pub w_sn: Tensor<R>,
    pub parts: SnParts<R>,
}

impl<R: Real> SnDense<R> {
    pub fn new(name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut StreamRng) -> Self {
        let w = he_tensor(&[d_in, d_out], d_in, rng);
        let state = SpectralState::init(d_out, rng);
        SnDense {
            name: String::from(name),
            dw: Tensor::zeros(w.shape()),
            w,
            b: bias.then(|| vec![R::ZERO; d_out]),
            db: bias.then(|| vec![R::ZERO; d_out]),
            state,
        }
    }

    pub fn sn_shape(&self) -> SnShape {
        let s = self.w.shape();
        SnShape {
            out: s[1],
            rest: s[0],
            transposed: true,
        }
    }

    pub fn power_iterate(&mut self, iters: usize) {
        let shape = self.sn_shape();
        self.state.power_iterate(self.w.data(), shape, iters);
    }

    pub fn forward(&self, x: &Tensor<R>) -> Result<(Tensor<R>, SnDenseCache<R>)> {
        let app = spectral_normalize(self.w.data(), self.sn_shape(), &self.state);
        let (w_sn, parts) = split_applied(self.w.shape(), app)?;
        let y = dense_forward(x, &w_sn, self.b.as_deref())?;
        Ok((
            y,
            SnDenseCache {
                x: x.clone(),
                w_sn,
                parts,
            },
        ))
    }

    pub fn backward(&mut self, cache: SnDenseCache<R>, dy: &Tensor<R>) -> Result<Tensor<R>> {
        let (dx, dw_sn, db) = dense_backward(&cache.x, &cache.w_sn, dy)?;
        let app = rejoin(cache.w_sn, cache.parts);
        let dw = spectral_backward(dw_sn.data(), &app, self.sn_shape());
        accumulate(self.dw.data_mut(), &dw);
        if let Some(dbv) = &mut self.db {
            accumulate(dbv, &db);
        }
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.dw.fill(R::ZERO);
        if let Some(db) = &mut self.db {
            db.fill(R::ZERO);
        }
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = Vec::new();
        let shape = self.w.shape().to_vec();
        out.push(Slot::param(
            format!("{}.w", self.name),
            shape,
            self.w.data_mut(),
            self.dw.data_mut(),
        ));
        if let (Some(b), Some(db)) = (&mut self.b, &mut self.db) {
            let n = b.len();
            out.push(Slot::param(format!("{}.b", self.name), vec![n], b, db));
        }
        let un = self.state.u.len();
        out.push(Slot::state(
            format!("{}.u", self.name),
            vec![un],
            &mut self.state.u,
        ));
        out
    }
}

// ---------------------------------------------------------------------------
// conditional batch norm
// ---------------------------------------------------------------------------

/// Batch norm whose gain and bias come from a linear map of the conditioning
/// vector: gain = 1 + zs·A_g, bias = zs·A_b, one pair per sample and channel.
/// Both projection matrices are spectral-normalized like every other weight.
pub struct CondBn<R> {
    pub name: String,
    pub a_gain: Tensor<R>,
    pub da_gain: Tensor<R>,
    pub a_bias: Tensor<R>,
    pub da_bias: Tensor<R>,
    pub sn_gain: SpectralState<R>,
    pub sn_bias: SpectralState<R>,
    pub stats: NormStats<R>,
}

pub struct CondBnCache<R> {
    pub zs: Tensor<R>,
    pub ga_t: Tensor<R>,
    pub ga_parts: SnParts<R>,
    pub ba_t: Tensor<R>,
    pub ba_parts: SnParts<R>,
    pub gain: Tensor<R>,
    pub bias: Tensor<R>,
    pub bn: BnCache<R>,
}

impl<R: Real> CondBn<R> {
    pub fn new(name: &str, zs_dim: usize, channels: usize, rng: &mut StreamRng) -> Self {
        let a_gain = he_tensor(&[zs_dim, channels], zs_dim, rng);
        let sn_gain = SpectralState::init(channels, rng);
        let a_bias = he_tensor(&[zs_dim, channels], zs_dim, rng);
        let sn_bias = SpectralState::init(channels, rng);
        CondBn {
            name: String::from(name),
            da_gain: Tensor::zeros(a_gain.shape()),
            a_gain,
            da_bias: Tensor::zeros(a_bias.shape()),
            a_bias,
            sn_gain,
            sn_bias,
            stats: NormStats::new(channels, R::from_f64(0.1), R::from_f64(1e-5)),
        }
    }

    fn sn_shape(&self) -> SnShape {
        let s = self.a_gain.shape();
        SnShape {
            out: s[1],
            rest: s[0],
            transposed: true,
        }
    }

    pub fn power_iterate(&mut self, iters: usize) {
        let shape = self.sn_shape();
        self.sn_gain.power_iterate(self.a_gain.data(), shape, iters);
        self.sn_bias.power_iterate(self.a_bias.data(), shape, iters);
    }

    pub fn forward(
        &mut self,
        x: &Tensor<R>,
        zs: &Tensor<R>,
        mode: BnMode,
    ) -> Result<(Tensor<R>, CondBnCache<R>)> {
        let shape = self.sn_shape();
        let (ga_t, ga_parts) = split_applied(
            self.a_gain.shape(),
            spectral_normalize(self.a_gain.data(), shape, &self.sn_gain),
        )?;
        let (ba_t, ba_parts) = split_applied(
            self.a_bias.shape(),
            spectral_normalize(self.a_bias.data(), shape, &self.sn_bias),
        )?;
        let (gain, bias) = crate::cond::cbn_params(zs, &ga_t, &ba_t)?;
        let (y, bn) = batchnorm_forward(
            x,
            GainBias::PerSample(gain.data(), bias.data()),
            &mut self.stats,
            mode,
        )?;
        Ok((
            y,
            CondBnCache {
                zs: zs.clone(),
                ga_t,
                ga_parts,
                ba_t,
                ba_parts,
                gain,
                bias,
                bn,
            },
        ))
    }

    /// Returns (dx, dzs).
    pub fn backward(&mut self, cache: CondBnCache<R>, dy: &Tensor<R>) -> Result<(Tensor<R>, Tensor<R>)> {
        let (n, c) = cache.gain.dims2("cond_bn backward")?;
        let mut grads = BnGrads {
            dgain: vec![R::ZERO; n * c],
            dbias: vec![R::ZERO; n * c],
        };
        let dx = batchnorm_backward(
            dy,
            GainBias::PerSample(cache.gain.data(), cache.bias.data()),
            &cache.bn,
            &mut grads,
        )?;
        let dgain_t = Tensor::from_vec(&[n, c], grads.dgain)?;
        let dbias_t = Tensor::from_vec(&[n, c], grads.dbias)?;
        // gain = 1 + zs·A_g: the constant shift has no gradient
        let (dzs_gain, dga_sn, _) = dense_backward(&cache.zs, &cache.ga_t, &dgain_t)?;
        let (dzs_bias, dba_sn, _) = dense_backward(&cache.zs, &cache.ba_t, &dbias_t)?;
        let shape = self.sn_shape();
        let dga = spectral_backward(dga_sn.data(), &rejoin(cache.ga_t, cache.ga_parts), shape);
        accumulate(self.da_gain.data_mut(), &dga);
        let dba = spectral_backward(dba_sn.data(), &rejoin(cache.ba_t, cache.ba_parts), shape);
        accumulate(self.da_bias.data_mut(), &dba);
        let mut dzs = dzs_gain;
        accumulate(dzs.data_mut(), dzs_bias.data());
        Ok((dx, dzs))
    }

    pub fn zero_grad(&mut self) {
        self.da_gain.fill(R::ZERO);
        self.da_bias.fill(R::ZERO);
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let shape = self.a_gain.shape().to_vec();
        let ug = self.sn_gain.u.len();
        let ub = self.sn_bias.u.len();
        vec![
            Slot::param(
                format!("{}.a_gain", self.name),
                shape.clone(),
                self.a_gain.data_mut(),
                self.da_gain.data_mut(),
            ),
            Slot::param(
                format!("{}.a_bias", self.name),
                shape,
                self.a_bias.data_mut(),
                self.da_bias.data_mut(),
            ),
            Slot::state(format!("{}.u_gain", self.name), vec![ug], &mut self.sn_gain.u),
            Slot::state(format!("{}.u_bias", self.name), vec![ub], &mut self.sn_bias.u),
        ]
    }
}

// ---------------------------------------------------------------------------
// plain batch norm (learned per-channel affine)
// ---------------------------------------------------------------------------

pub struct PlainBn<R> {
    pub name: String,
    pub gain: Vec<R>,
    pub dgain: Vec<R>,
    pub bias: Vec<R>,
    pub dbias: Vec<R>,
    pub stats: NormStats<R>,
}

pub struct PlainBnCache<R> {
    pub bn: BnCache<R>,
}

impl<R: Real> PlainBn<R> {
    pub fn new(name: &str, channels: usize) -> Self {
        PlainBn {
            name: String::from(name),
            gain: vec![R::ONE; channels],
            dgain: vec![R::ZERO; channels],
            bias: vec![R::ZERO; channels],
            dbias: vec![R::ZERO; channels],
            stats: NormStats::new(channels, R::from_f64(0.1), R::from_f64(1e-5)),
        }
    }

    pub fn forward(&mut self, x: &Tensor<R>, mode: BnMode) -> Result<(Tensor<R>, PlainBnCache<R>)> {
        let (y, bn) = batchnorm_forward(
            x,
            GainBias::PerChannel(&self.gain, &self.bias),
            &mut self.stats,
            mode,
        )?;
        Ok((y, PlainBnCache { bn }))
    }

    pub fn backward(&mut self, cache: PlainBnCache<R>, dy: &Tensor<R>) -> Result<Tensor<R>> {
        let mut grads = BnGrads {
            dgain: vec![R::ZERO; self.gain.len()],
            dbias: vec![R::ZERO; self.bias.len()],
        };
        let dx = batchnorm_backward(
            dy,
            GainBias::PerChannel(&self.gain, &self.bias),
            &cache.bn,
            &mut grads,
        )?;
        accumulate(&mut self.dgain, &grads.dgain);
        accumulate(&mut self.dbias, &grads.dbias);
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.dgain.fill(R::ZERO);
        self.dbias.fill(R::ZERO);
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let c = self.gain.len();
        vec![
            Slot::param(
                format!("{}.gain", self.name),
                vec![c],
                &mut self.gain,
                &mut self.dgain,
            ),
            Slot::param(
                format!("{}.bias", self.name),
                vec![c],
                &mut self.bias,
                &mut self.dbias,
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{grad_check, grad_check_subset};
    use crate::rng::Domain;

    fn rng(ix: u64) -> StreamRng {
        StreamRng::new(7, Domain::ParamInit, ix)
    }

    fn randn(r: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.normal()).collect()).unwrap()
    }

    /// Loss = Σ cᵢyᵢ with fixed pseudo-random coefficients, so every output
    /// element participates with a distinct weight.
    fn weighted_sum(y: &Tensor<f64>, coeff_seed: u64) -> (f64, Tensor<f64>) {
        let mut r = StreamRng::new(coeff_seed, Domain::Trace, 0);
        let c: Vec<f64> = (0..y.numel()).map(|_| r.normal()).collect();
        let loss = y.data().iter().zip(&c).map(|(&a, &b)| a * b).sum();
        (loss, Tensor::from_vec(y.shape(), c).unwrap())
    }

    #[test]
    fn sn_conv_weight_gradient_matches_central_differences() {
        let mut r = rng(0);
        let mut conv: SnConv<f64> = SnConv::new("c", 3, 4, 3, 1, true, &mut r);
        conv.power_iterate(300); // converge u so the stop-gradient form is exact
        let x = randn(&mut r, &[2, 3, 5, 5]);

        conv.zero_grad();
        let (y, cache) = conv.forward(&x).unwrap();
        let (_, dy) = weighted_sum(&y, 11);
        conv.backward(cache, &dy).unwrap();
        let analytic = conv.dw.data().to_vec();

        let theta = conv.w.clone();
        // probe a fixed spread of weights rather than all 108
        let picks: Vec<usize> = (0..theta.numel()).step_by(11).collect();
        let f = |t: &Tensor<f64>| {
            let mut c2 = SnConv::<f64> {
                name: conv.name.clone(),
                w: t.clone(),
                dw: Tensor::zeros(conv.w.shape()),
                b: conv.b.clone(),
                db: conv.db.clone(),
                state: conv.state.clone(),
                geom: conv.geom,
            };
            // refresh the estimate at the perturbed weight so σ tracks it
            c2.power_iterate(300);
            let (y, _) = c2.forward(&x)?;
            Ok(weighted_sum(&y, 11).0)
        };
        let worst = grad_check_subset(f, &theta, &analytic, &picks, 1e-5).unwrap();
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn sn_dense_input_gradient_matches_central_differences() {
        let mut r = rng(1);
        let mut dense: SnDense<f64> = SnDense::new("d", 6, 4, true, &mut r);
        dense.power_iterate(300);
        let x0 = randn(&mut r, &[3, 6]);

        dense.zero_grad();
        let (y, cache) = dense.forward(&x0).unwrap();
        let (_, dy) = weighted_sum(&y, 5);
        let dx = dense.backward(cache, &dy).unwrap();

        let f = |t: &Tensor<f64>| {
            let (y, _) = dense.forward(t)?;
            Ok(weighted_sum(&y, 5).0)
        };
        let worst = grad_check(f, &x0, dx.data(), 1e-6).unwrap();
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn cond_bn_projection_gradients_match_central_differences() {
        let mut r = rng(2);
        let mut bn: CondBn<f64> = CondBn::new("bn", 5, 3, &mut r);
        bn.power_iterate(400);
        let x = randn(&mut r, &[4, 3, 2, 2]);
        let zs = randn(&mut r, &[4, 5]);

        bn.zero_grad();
        let (y, cache) = bn.forward(&x, &zs, BnMode::Train).unwrap();
        let (_, dy) = weighted_sum(&y, 23);
        bn.backward(cache, &dy).unwrap();
        let analytic = bn.da_gain.data().to_vec();

        let theta0 = bn.a_gain.clone();
        let f = |t: &Tensor<f64>| {
            let mut b2 = CondBn::<f64> {
                name: bn.name.clone(),
                a_gain: t.clone(),
                da_gain: Tensor::zeros(bn.a_gain.shape()),
                a_bias: bn.a_bias.clone(),
                da_bias: Tensor::zeros(bn.a_bias.shape()),
                sn_gain: bn.sn_gain.clone(),
                sn_bias: bn.sn_bias.clone(),
                stats: NormStats::new(3, 0.1, 1e-5),
            };
            b2.power_iterate(400);
            let (y, _) = b2.forward(&x, &zs, BnMode::Train)?;
            Ok(weighted_sum(&y, 23).0)
        };
        let worst = grad_check(f, &theta0, &analytic, 1e-5).unwrap();
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn cond_bn_zs_gradient_matches_central_differences() {
        let mut r = rng(3);
        let mut bn: CondBn<f64> = CondBn::new("bn", 4, 2, &mut r);
        bn.power_iterate(400);
        let x = randn(&mut r, &[3, 2, 2, 2]);
        let zs0 = randn(&mut r, &[3, 4]);

        let (y, cache) = bn.forward(&x, &zs0, BnMode::Train).unwrap();
        let (_, dy) = weighted_sum(&y, 31);
        let (_, dzs) = bn.backward(cache, &dy).unwrap();

        let f = |t: &Tensor<f64>| {
            let mut b2 = CondBn::<f64> {
                name: bn.name.clone(),
                a_gain: bn.a_gain.clone(),
                da_gain: Tensor::zeros(bn.a_gain.shape()),
                a_bias: bn.a_bias.clone(),
                da_bias: Tensor::zeros(bn.a_bias.shape()),
                sn_gain: bn.sn_gain.clone(),
                sn_bias: bn.sn_bias.clone(),
                stats: NormStats::new(2, 0.1, 1e-5),
            };
            let (y, _) = b2.forward(&x, t, BnMode::Train)?;
            Ok(weighted_sum(&y, 31).0)
        };
        let worst = grad_check(f, &zs0, dzs.data(), 1e-6).unwrap();
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn plain_bn_affine_gradients_match_central_differences() {
        let mut r = rng(4);
        let mut bn: PlainBn<f64> = PlainBn::new("fb", 3);
        // move the affine away from the identity so gradients are generic
        for (i, g) in bn.gain.iter_mut().enumerate() {
            *g = 1.0 + 0.3 * i as f64;
        }
        let x = randn(&mut r, &[2, 3, 3, 3]);
        let (y, cache) = bn.forward(&x, BnMode::Train).unwrap();
        let (_, dy) = weighted_sum(&y, 41);
        bn.backward(cache, &dy).unwrap();

        let gain0 = Tensor::from_vec(&[3], bn.gain.clone()).unwrap();
        let analytic = bn.dgain.clone();
        let f = |t: &Tensor<f64>| {
            let mut b2 = PlainBn::<f64> {
                name: bn.name.clone(),
                gain: t.data().to_vec(),
                dgain: vec![0.0; 3],
                bias: bn.bias.clone(),
                dbias: vec![0.0; 3],
                stats: NormStats::new(3, 0.1, 1e-5),
            };
            let (y, _) = b2.forward(&x, BnMode::Train)?;
            Ok(weighted_sum(&y, 41).0)
        };
        let worst = grad_check(f, &gain0, &analytic, 1e-6).unwrap();
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn slots_expose_params_and_state_with_stable_names() {
        let mut r = rng(5);
        let mut conv: SnConv<f64> = SnConv::new("g.b0.conv1", 2, 3, 1, 0, true, &mut r);
        let slots = conv.slots();
        let names: Vec<&str> = slots.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["g.b0.conv1.w", "g.b0.conv1.b", "g.b0.conv1.u"]);
        assert_eq!(slots[0].shape, vec![3, 2, 1, 1]);
        assert!(slots[0].grad.is_some());
        assert!(slots[2].grad.is_none());
    }
}
