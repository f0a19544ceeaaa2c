//! Residual bottleneck blocks. The generator block conditions every norm
//! site on [z;s] and optionally doubles the spatial extent; the
//! discriminator block is its norm-free mirror with mean-pool downsampling.
//!
//! Skip paths never learn: they resample, then match channels by truncating
//! or zero-extending, which keeps the residual branch responsible for all
//! feature mixing.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::net::layers::{CondBn, CondBnCache, SnConv, SnConvCache};
use crate::ops::act::{leaky_relu, leaky_relu_backward};
use crate::ops::norm::BnMode;
use crate::ops::resample::{downsample2x, downsample2x_backward, upsample2x, upsample2x_backward};
use crate::params::Slot;
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Copy the first min(C_in, C_out) channels, zero-fill any extras.
pub fn channel_resize<R: Real>(x: &Tensor<R>, c_out: usize) -> Result<Tensor<R>> {
    let (n, c, h, w) = x.dims4("channel_resize")?;
    if c == c_out {
        return Ok(x.clone());
    }
    let hw = h * w;
    let keep = c.min(c_out);
    let mut y = Tensor::zeros(&[n, c_out, h, w]);
    for s in 0..n {
        for ch in 0..keep {
            let src = &x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            y.data_mut()[(s * c_out + ch) * hw..(s * c_out + ch + 1) * hw].copy_from_slice(src);
        }
    }
    Ok(y)
}

/// Adjoint of `channel_resize`: route gradient back to the surviving
/// channels, dropping what fed the zero-fill.
pub fn channel_resize_backward<R: Real>(dy: &Tensor<R>, c_in: usize) -> Result<Tensor<R>> {
    let (n, c_out, h, w) = dy.dims4("channel_resize_backward")?;
    if c_out == c_in {
        return Ok(dy.clone());
    }
    let hw = h * w;
    let keep = c_in.min(c_out);
    let mut dx = Tensor::zeros(&[n, c_in, h, w]);
    for s in 0..n {
        for ch in 0..keep {
            let src = &dy.data()[(s * c_out + ch) * hw..(s * c_out + ch + 1) * hw];
            dx.data_mut()[(s * c_in + ch) * hw..(s * c_in + ch + 1) * hw].copy_from_slice(src);
        }
    }
    Ok(dx)
}

fn add_into<R: Real>(acc: &mut Tensor<R>, other: &Tensor<R>) -> Result<()> {
    if acc.shape() != other.shape() {
        return Err(Error::Dim {
            op: "residual add",
            detail: format!("{:?} vs {:?}", acc.shape(), other.shape()),
        });
    }
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generator block
// ---------------------------------------------------------------------------

/// Main path: [CBN → leaky → 1×1 reduce] → [CBN → leaky → (up) → 3×3] →
/// [CBN → leaky → 3×3] → [CBN → leaky → 1×1 expand]; residual is added to
/// the (up)sampled, channel-matched input. Bottleneck width is C_in/4.
pub struct GBlock<R> {
    pub c_in: usize,
    pub c_out: usize,
    pub up: bool,
    pub slope: R,
    pub bn1: CondBn<R>,
    pub conv1: SnConv<R>,
    pub bn2: CondBn<R>,
    pub conv2: SnConv<R>,
    pub bn3: CondBn<R>,
    pub conv3: SnConv<R>,
    pub bn4: CondBn<R>,
    pub conv4: SnConv<R>,
}

pub struct GBlockCache<R> {
    a1: Tensor<R>,
    a2: Tensor<R>,
    a3: Tensor<R>,
    a4: Tensor<R>,
    b1: CondBnCache<R>,
    b2: CondBnCache<R>,
    b3: CondBnCache<R>,
    b4: CondBnCache<R>,
    c1: SnConvCache<R>,
    c2: SnConvCache<R>,
    c3: SnConvCache<R>,
    c4: SnConvCache<R>,
}

impl<R: Real> GBlock<R> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        zs_dim: usize,
        up: bool,
        slope: R,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let c_h = c_in / 4;
        if c_h == 0 {
            return Err(Error::Dim {
                op: "g_block",
                detail: format!("input channels {c_in} too narrow for the /4 bottleneck"),
            });
        }
        Ok(GBlock {
            c_in,
            c_out,
            up,
            slope,
            bn1: CondBn::new(&format!("{name}.bn1"), zs_dim, c_in, rng),
            conv1: SnConv::new(&format!("{name}.conv1"), c_in, c_h, 1, 0, true, rng),
            bn2: CondBn::new(&format!("{name}.bn2"), zs_dim, c_h, rng),
            conv2: SnConv::new(&format!("{name}.conv2"), c_h, c_h, 3, 1, true, rng),
            bn3: CondBn::new(&format!("{name}.bn3"), zs_dim, c_h, rng),
            conv3: SnConv::new(&format!("{name}.conv3"), c_h, c_h, 3, 1, true, rng),
            bn4: CondBn::new(&format!("{name}.bn4"), zs_dim, c_h, rng),
            conv4: SnConv::new(&format!("{name}.conv4"), c_h, c_out, 1, 0, true, rng),
        })
    }

    pub fn power_iterate(&mut self, iters: usize) {
        self.bn1.power_iterate(iters);
        self.conv1.power_iterate(iters);
        self.bn2.power_iterate(iters);
        self.conv2.power_iterate(iters);
        self.bn3.power_iterate(iters);
        self.conv3.power_iterate(iters);
        self.bn4.power_iterate(iters);
        self.conv4.power_iterate(iters);
    }

    pub fn forward(
        &mut self,
        x: &Tensor<R>,
        zs: &Tensor<R>,
        mode: BnMode,
    ) -> Result<(Tensor<R>, GBlockCache<R>)> {
        let (a1, b1) = self.bn1.forward(x, zs, mode)?;
        let l1 = leaky_relu(&a1, self.slope);
        let (y1, c1) = self.conv1.forward(&l1)?;

        let (a2, b2) = self.bn2.forward(&y1, zs, mode)?;
        let mut l2 = leaky_relu(&a2, self.slope);
        if self.up {
            l2 = upsample2x(&l2)?;
        }
        let (y2, c2) = self.conv2.forward(&l2)?;

        let (a3, b3) = self.bn3.forward(&y2, zs, mode)?;
        let l3 = leaky_relu(&a3, self.slope);
        let (y3, c3) = self.conv3.forward(&l3)?;

        let (a4, b4) = self.bn4.forward(&y3, zs, mode)?;
        let l4 = leaky_relu(&a4, self.slope);
        let (y4, c4) = self.conv4.forward(&l4)?;

        let resized = if self.up {
            channel_resize(&upsample2x(x)?, self.c_out)?
        } else {
            channel_resize(x, self.c_out)?
        };
        let mut y = y4;
        add_into(&mut y, &resized)?;
        Ok((
            y,
            GBlockCache {
                a1,
                a2,
                a3,
                a4,
                b1,
                b2,
                b3,
                b4,
                c1,
                c2,
                c3,
                c4,
            },
        ))
    }

    /// Returns (dx, dzs).
    pub fn backward(&mut self, cache: GBlockCache<R>, dy: &Tensor<R>) -> Result<(Tensor<R>, Tensor<R>)> {
        // skip path
        let dskip = channel_resize_backward(dy, self.c_in)?;
        let dx_skip = if self.up {
            upsample2x_backward(&dskip)?
        } else {
            dskip
        };

        // main path, last stage first
        let dl4 = self.conv4.backward(cache.c4, dy)?;
        let da4 = leaky_relu_backward(&cache.a4, &dl4, self.slope);
        let (dy3, mut dzs) = self.bn4.backward(cache.b4, &da4)?;

        let dl3 = self.conv3.backward(cache.c3, &dy3)?;
        let da3 = leaky_relu_backward(&cache.a3, &dl3, self.slope);
        let (dy2, dzs3) = self.bn3.backward(cache.b3, &da3)?;
        add_into(&mut dzs, &dzs3)?;

        let dl2u = self.conv2.backward(cache.c2, &dy2)?;
        let dl2 = if self.up {
            upsample2x_backward(&dl2u)?
        } else {
            dl2u
        };
        let da2 = leaky_relu_backward(&cache.a2, &dl2, self.slope);
        let (dy1, dzs2) = self.bn2.backward(cache.b2, &da2)?;
        add_into(&mut dzs, &dzs2)?;

        let dl1 = self.conv1.backward(cache.c1, &dy1)?;
        let da1 = leaky_relu_backward(&cache.a1, &dl1, self.slope);
        let (mut dx, dzs1) = self.bn1.backward(cache.b1, &da1)?;
        add_into(&mut dzs, &dzs1)?;

        add_into(&mut dx, &dx_skip)?;
        Ok((dx, dzs))
    }

    pub fn zero_grad(&mut self) {
        self.bn1.zero_grad();
        self.conv1.zero_grad();
        self.bn2.zero_grad();
        self.conv2.zero_grad();
        self.bn3.zero_grad();
        self.conv3.zero_grad();
        self.bn4.zero_grad();
        self.conv4.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = Vec::new();
        out.extend(self.bn1.slots());
        out.extend(self.conv1.slots());
        out.extend(self.bn2.slots());
        out.extend(self.conv2.slots());
        out.extend(self.bn3.slots());
        out.extend(self.conv3.slots());
        out.extend(self.bn4.slots());
        out.extend(self.conv4.slots());
        out
    }

    pub fn norm_sites(&mut self) -> Vec<(String, &mut crate::ops::norm::NormStats<R>)> {
        alloc::vec![
            (self.bn1.name.clone(), &mut self.bn1.stats),
            (self.bn2.name.clone(), &mut self.bn2.stats),
            (self.bn3.name.clone(), &mut self.bn3.stats),
            (self.bn4.name.clone(), &mut self.bn4.stats),
        ]
    }
}

// ---------------------------------------------------------------------------
// discriminator block
// ---------------------------------------------------------------------------

/// Norm-free mirror of the generator block: [leaky → 1×1 reduce] →
/// [leaky → 3×3] → [leaky → (mean-pool down) → 3×3] → [leaky → 1×1 expand],
/// the pooling sitting where the generator upsamples (mirrored stage order).
pub struct DBlock<R> {
    pub c_in: usize,
    pub c_out: usize,
    pub down: bool,
    pub slope: R,
    pub conv1: SnConv<R>,
    pub conv2: SnConv<R>,
    pub conv3: SnConv<R>,
    pub conv4: SnConv<R>,
}

pub struct DBlockCache<R> {
    x: Tensor<R>,
    y1: Tensor<R>,
    y2: Tensor<R>,
    y3: Tensor<R>,
    c1: SnConvCache<R>,
    c2: SnConvCache<R>,
    c3: SnConvCache<R>,
    c4: SnConvCache<R>,
}

impl<R: Real> DBlock<R> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        down: bool,
        slope: R,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let c_h = c_in / 4;
        if c_h == 0 {
            return Err(Error::Dim {
                op: "d_block",
                detail: format!("input channels {c_in} too narrow for the /4 bottleneck"),
            });
        }
        Ok(DBlock {
            c_in,
            c_out,
            down,
            slope,
            conv1: SnConv::new(&format!("{name}.conv1"), c_in, c_h, 1, 0, true, rng),
            conv2: SnConv::new(&format!("{name}.conv2"), c_h, c_h, 3, 1, true, rng),
            conv3: SnConv::new(&format!("{name}.conv3"), c_h, c_h, 3, 1, true, rng),
            conv4: SnConv::new(&format!("{name}.conv4"), c_h, c_out, 1, 0, true, rng),
        })
    }

    pub fn power_iterate(&mut self, iters: usize) {
        self.conv1.power_iterate(iters);
        self.conv2.power_iterate(iters);
        self.conv3.power_iterate(iters);
        self.conv4.power_iterate(iters);
    }

    pub fn forward(&self, x: &Tensor<R>) -> Result<(Tensor<R>, DBlockCache<R>)> {
        let l1 = leaky_relu(x, self.slope);
        let (y1, c1) = self.conv1.forward(&l1)?;

        let l2 = leaky_relu(&y1, self.slope);
        let (y2, c2) = self.conv2.forward(&l2)?;

        let mut l3 = leaky_relu(&y2, self.slope);
        if self.down {
            l3 = downsample2x(&l3)?;
        }
        let (y3, c3) = self.conv3.forward(&l3)?;

        let l4 = leaky_relu(&y3, self.slope);
        let (y4, c4) = self.conv4.forward(&l4)?;

        let resized = if self.down {
            channel_resize(&downsample2x(x)?, self.c_out)?
        } else {
            channel_resize(x, self.c_out)?
        };
        let mut y = y4;
        add_into(&mut y, &resized)?;
        Ok((
            y,
            DBlockCache {
                x: x.clone(),
                y1,
                y2,
                y3,
                c1,
                c2,
                c3,
                c4,
            },
        ))
    }

    pub fn backward(&mut self, cache: DBlockCache<R>, dy: &Tensor<R>) -> Result<Tensor<R>> {
        let dskip = channel_resize_backward(dy, self.c_in)?;
        let dx_skip = if self.down {
            downsample2x_backward(&dskip)?
        } else {
            dskip
        };

        let dl4 = self.conv4.backward(cache.c4, dy)?;
        let dy3 = leaky_relu_backward(&cache.y3, &dl4, self.slope);

        let dl3d = self.conv3.backward(cache.c3, &dy3)?;
        let dl3 = if self.down {
            downsample2x_backward(&dl3d)?
        } else {
            dl3d
        };
        let dy2 = leaky_relu_backward(&cache.y2, &dl3, self.slope);

        let dl2 = self.conv2.backward(cache.c2, &dy2)?;
        let dy1 = leaky_relu_backward(&cache.y1, &dl2, self.slope);

        let dl1 = self.conv1.backward(cache.c1, &dy1)?;
        let mut dx = leaky_relu_backward(&cache.x, &dl1, self.slope);

        add_into(&mut dx, &dx_skip)?;
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.conv1.zero_grad();
        self.conv2.zero_grad();
        self.conv3.zero_grad();
        self.conv4.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = Vec::new();
        out.extend(self.conv1.slots());
        out.extend(self.conv2.slots());
        out.extend(self.conv3.slots());
        out.extend(self.conv4.slots());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::grad_check_subset;
    use crate::params::SlotKind;
    use crate::rng::Domain;

    fn rng(ix: u64) -> StreamRng {
        StreamRng::new(404, Domain::ParamInit, ix)
    }

    fn randn(r: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.normal()).collect()).unwrap()
    }

    fn weighted_sum(y: &Tensor<f64>, coeff_seed: u64) -> (f64, Tensor<f64>) {
        let mut r = StreamRng::new(coeff_seed, Domain::Trace, 0);
        let c: Vec<f64> = (0..y.numel()).map(|_| r.normal()).collect();
        let loss = y.data().iter().zip(&c).map(|(&a, &b)| a * b).sum();
        (loss, Tensor::from_vec(y.shape(), c).unwrap())
    }

    fn zero_params<R: Real>(slots: &mut [Slot<'_, R>]) {
        for s in slots.iter_mut().filter(|s| s.kind == SlotKind::Param) {
            for v in s.data.iter_mut() {
                *v = R::ZERO;
            }
        }
    }

    #[test]
    fn channel_resize_truncates_and_extends() {
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![3.0f64, 5.0]).unwrap();
        let wider = channel_resize(&x, 4).unwrap();
        assert_eq!(wider.data(), &[3.0, 5.0, 0.0, 0.0]);
        let narrower = channel_resize(&x, 1).unwrap();
        assert_eq!(narrower.data(), &[3.0]);
    }

    #[test]
    fn channel_resize_backward_is_the_adjoint() {
        // ⟨resize(x), y⟩ = ⟨x, resize_backward(y)⟩ for both directions
        let mut r = rng(0);
        for &(c_in, c_out) in &[(2usize, 5usize), (5, 2)] {
            let x = randn(&mut r, &[2, c_in, 2, 2]);
            let y = randn(&mut r, &[2, c_out, 2, 2]);
            let fx = channel_resize(&x, c_out).unwrap();
            let by = channel_resize_backward(&y, c_in).unwrap();
            let lhs: f64 = fx.data().iter().zip(y.data()).map(|(&a, &b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(by.data()).map(|(&a, &b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_g_block_reduces_to_its_skip_path() {
        let mut r = rng(1);
        let mut blk: GBlock<f64> = GBlock::new("b", 8, 4, 6, true, 0.2, &mut r).unwrap();
        let mut slots = blk.slots();
        zero_params(&mut slots);
        drop(slots);
        let x = randn(&mut r, &[2, 8, 3, 3]);
        let zs = randn(&mut r, &[2, 6]);
        let (y, _) = blk.forward(&x, &zs, BnMode::Train).unwrap();
        let skip = channel_resize(&upsample2x(&x).unwrap(), 4).unwrap();
        assert_eq!(y, skip);
    }

    #[test]
    fn zeroed_d_block_reduces_to_its_skip_path() {
        let mut r = rng(2);
        let mut blk: DBlock<f64> = DBlock::new("b", 4, 8, true, 0.2, &mut r).unwrap();
        let mut slots = blk.slots();
        zero_params(&mut slots);
        drop(slots);
        let x = randn(&mut r, &[2, 4, 4, 4]);
        let (y, _) = blk.forward(&x).unwrap();
        let skip = channel_resize(&downsample2x(&x).unwrap(), 8).unwrap();
        assert_eq!(y, skip);
    }

    #[test]
    fn g_block_upsampling_doubles_spatial_extent() {
        let mut r = rng(3);
        let mut blk: GBlock<f64> = GBlock::new("b", 8, 8, 6, true, 0.2, &mut r).unwrap();
        let x = randn(&mut r, &[2, 8, 3, 3]);
        let zs = randn(&mut r, &[2, 6]);
        let (y, _) = blk.forward(&x, &zs, BnMode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 8, 6, 6]);
    }

    #[test]
    fn d_block_downsampling_halves_spatial_extent() {
        let mut r = rng(4);
        let blk: DBlock<f64> = DBlock::new("b", 8, 8, true, 0.2, &mut r).unwrap();
        let x = randn(&mut r, &[2, 8, 6, 6]);
        let (y, _) = blk.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 8, 3, 3]);
    }

    #[test]
    fn g_block_conv_gradient_matches_central_differences() {
        let mut r = rng(5);
        let mut blk: GBlock<f64> = GBlock::new("b", 8, 4, 5, true, 0.2, &mut r).unwrap();
        blk.power_iterate(300);
        let x = randn(&mut r, &[3, 8, 2, 2]);
        let zs = randn(&mut r, &[3, 5]);

        blk.zero_grad();
        let (y, cache) = blk.forward(&x, &zs, BnMode::Train).unwrap();
        let (_, dy) = weighted_sum(&y, 61);
        blk.backward(cache, &dy).unwrap();
        let analytic = blk.conv2.dw.data().to_vec();

        let theta = blk.conv2.w.clone();
        let picks: Vec<usize> = (0..theta.numel()).step_by(13).collect();
        let f = |t: &Tensor<f64>| {
            let mut r2 = rng(5);
            let mut b2: GBlock<f64> = GBlock::new("b", 8, 4, 5, true, 0.2, &mut r2).unwrap();
            b2.conv2.w = t.clone();
            b2.power_iterate(300);
            let (y, _) = b2.forward(&x, &zs, BnMode::Train)?;
            Ok(weighted_sum(&y, 61).0)
        };
        let worst = grad_check_subset(f, &theta, &analytic, &picks, 1e-5).unwrap();
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn d_block_parameter_gradients_match_central_differences() {
        let mut r = rng(6);
        let mut blk: DBlock<f64> = DBlock::new("b", 8, 12, true, 0.2, &mut r).unwrap();
        blk.power_iterate(300);
        let x = randn(&mut r, &[2, 8, 4, 4]);

        blk.zero_grad();
        let (y, cache) = blk.forward(&x).unwrap();
        let (_, dy) = weighted_sum(&y, 71);
        blk.backward(cache, &dy).unwrap();
        let analytic = blk.conv3.dw.data().to_vec();

        let theta = blk.conv3.w.clone();
        let picks: Vec<usize> = (0..theta.numel()).step_by(5).collect();
        let f = |t: &Tensor<f64>| {
            let mut r2 = rng(6);
            let mut b2: DBlock<f64> = DBlock::new("b", 8, 12, true, 0.2, &mut r2).unwrap();
            b2.conv3.w = t.clone();
            b2.power_iterate(300);
            let (y, _) = b2.forward(&x)?;
            Ok(weighted_sum(&y, 71).0)
        };
        let worst = grad_check_subset(f, &theta, &analytic, &picks, 1e-5).unwrap();
        assert!(worst < 1e-4, "worst rel err {worst}");
    }

    #[test]
    fn d_block_input_gradient_matches_central_differences() {
        let mut r = rng(7);
        let mut blk: DBlock<f64> = DBlock::new("b", 8, 8, false, 0.2, &mut r).unwrap();
        blk.power_iterate(300);
        let x0 = randn(&mut r, &[1, 8, 3, 3]);

        let (y, cache) = blk.forward(&x0).unwrap();
        let (_, dy) = weighted_sum(&y, 83);
        let dx = blk.backward(cache, &dy).unwrap();

        let picks: Vec<usize> = (0..x0.numel()).step_by(7).collect();
        let f = |t: &Tensor<f64>| {
            let (y, _) = blk.forward(t)?;
            Ok(weighted_sum(&y, 83).0)
        };
        let worst = grad_check_subset(f, &x0, dx.data(), &picks, 1e-6).unwrap();
        assert!(worst < 1e-5, "worst rel err {worst}");
    }
}
