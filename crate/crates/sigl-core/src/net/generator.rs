//! The generator: a linear map of [z;s] reshaped to a 4×4 feature map,
//! bottleneck up-blocks to the target resolution with one self-attention
//! site, then plain batch norm → leaky → 3-channel conv → tanh, so outputs
//! always land in [−1,1].
//!
//! The same [z;s] vector conditions every batch-norm site in every block;
//! nothing about the sentence embedding is learned here, which is what lets
//! caption arithmetic done in embedding space carry over to images.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::net::attn::{NonLocal, NonLocalCache};
use crate::net::blocks::{GBlock, GBlockCache};
use crate::net::layers::{PlainBn, PlainBnCache, SnConv, SnConvCache, SnDense, SnDenseCache};
use crate::net::NetworkConfig;
use crate::ops::act::{leaky_relu, leaky_relu_backward, tanh, tanh_backward};
use crate::ops::norm::{BnMode, NormStats};
use crate::params::Slot;
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub(crate) fn concat_cols<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
    let (n, wa) = a.dims2("concat")?;
    let (nb, wb) = b.dims2("concat")?;
    if n != nb {
        return Err(Error::Dim {
            op: "concat",
            detail: format!("batch {n} vs {nb}"),
        });
    }
    let mut out = Tensor::zeros(&[n, wa + wb]);
    for i in 0..n {
        out.data_mut()[i * (wa + wb)..i * (wa + wb) + wa]
            .copy_from_slice(&a.data()[i * wa..(i + 1) * wa]);
        out.data_mut()[i * (wa + wb) + wa..(i + 1) * (wa + wb)]
            .copy_from_slice(&b.data()[i * wb..(i + 1) * wb]);
    }
    Ok(out)
}

pub(crate) fn split_cols<R: Real>(x: &Tensor<R>, wa: usize) -> Result<(Tensor<R>, Tensor<R>)> {
    let (n, w) = x.dims2("split")?;
    if wa > w {
        return Err(Error::Dim {
            op: "split",
            detail: format!("first width {wa} exceeds total {w}"),
        });
    }
    let wb = w - wa;
    let mut a = Tensor::zeros(&[n, wa]);
    let mut b = Tensor::zeros(&[n, wb]);
    for i in 0..n {
        a.data_mut()[i * wa..(i + 1) * wa].copy_from_slice(&x.data()[i * w..i * w + wa]);
        b.data_mut()[i * wb..(i + 1) * wb].copy_from_slice(&x.data()[i * w + wa..(i + 1) * w]);
    }
    Ok((a, b))
}

pub struct Generator<R> {
    pub cfg: NetworkConfig,
    pub input: SnDense<R>,
    pub blocks: Vec<GBlock<R>>,
    pub attn: Option<NonLocal<R>>,
    /// Block index before which the attention block runs.
    pub attn_pos: usize,
    pub final_bn: PlainBn<R>,
    pub final_conv: SnConv<R>,
    slope: R,
}

pub struct GeneratorCache<R> {
    zs: Tensor<R>,
    cin: SnDenseCache<R>,
    blocks: Vec<GBlockCache<R>>,
    attnc: Option<NonLocalCache<R>>,
    fb: PlainBnCache<R>,
    /// Final norm output: pre-activation of the last leaky.
    an: Tensor<R>,
    cc: SnConvCache<R>,
    /// The emitted images, kept for the tanh backward.
    y: Tensor<R>,
}

impl<R: Real> Generator<R> {
    pub fn new(cfg: NetworkConfig, rng: &mut StreamRng) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.widths();
        let k = cfg.n_ups();
        let zs_dim = cfg.nz + cfg.embed_dim;
        let slope = R::from_f64(cfg.leaky_slope);

        let input = SnDense::new(
            "g.in",
            zs_dim,
            cfg.base_res * cfg.base_res * widths[0],
            true,
            rng,
        );
        let mut blocks = Vec::new();
        for j in 0..k {
            blocks.push(GBlock::new(
                &format!("g.s{j}b0"),
                widths[j],
                widths[j + 1],
                zs_dim,
                true,
                slope,
                rng,
            )?);
            for extra in 1..cfg.blocks_per_stage {
                blocks.push(GBlock::new(
                    &format!("g.s{j}b{extra}"),
                    widths[j + 1],
                    widths[j + 1],
                    zs_dim,
                    false,
                    slope,
                    rng,
                )?);
            }
        }
        let (attn, attn_pos) = match cfg.attn_stage() {
            Some(stage) => (
                Some(NonLocal::new("g.attn", widths[stage], rng)?),
                stage * cfg.blocks_per_stage,
            ),
            None => (None, 0),
        };
        let final_bn = PlainBn::new("g.out_bn", widths[k]);
        let final_conv = SnConv::new("g.out_conv", widths[k], 3, 3, 1, true, rng);
        Ok(Generator {
            cfg,
            input,
            blocks,
            attn,
            attn_pos,
            final_bn,
            final_conv,
            slope,
        })
    }

    pub fn forward(
        &mut self,
        z: &Tensor<R>,
        s: &Tensor<R>,
        mode: BnMode,
    ) -> Result<(Tensor<R>, GeneratorCache<R>)> {
        let (n, nz) = z.dims2("generator")?;
        let (_, d) = s.dims2("generator")?;
        if nz != self.cfg.nz || d != self.cfg.embed_dim {
            return Err(Error::Dim {
                op: "generator",
                detail: format!(
                    "z width {nz} / s width {d} vs configured {} / {}",
                    self.cfg.nz, self.cfg.embed_dim
                ),
            });
        }
        let zs = concat_cols(z, s)?;
        let (flat, cin) = self.input.forward(&zs)?;
        let c0 = self.cfg.widths()[0];
        let b = self.cfg.base_res;
        let mut h = flat.reshaped(&[n, c0, b, b])?;

        let mut bcaches = Vec::with_capacity(self.blocks.len());
        let mut attnc = None;
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            if i == self.attn_pos {
                if let Some(a) = &self.attn {
                    let (ha, ca) = a.forward(&h)?;
                    h = ha;
                    attnc = Some(ca);
                }
            }
            let (hn, bc) = blk.forward(&h, &zs, mode)?;
            h = hn;
            bcaches.push(bc);
        }
        if self.attn_pos == self.blocks.len() {
            if let Some(a) = &self.attn {
                let (ha, ca) = a.forward(&h)?;
                h = ha;
                attnc = Some(ca);
            }
        }

        let (an, fb) = self.final_bn.forward(&h, mode)?;
        let l = leaky_relu(&an, self.slope);
        let (c, cc) = self.final_conv.forward(&l)?;
        let y = tanh(&c);
        Ok((
            y.clone(),
            GeneratorCache {
                zs,
                cin,
                blocks: bcaches,
                attnc,
                fb,
                an,
                cc,
                y,
            },
        ))
    }

    /// Returns (dz, ds).
    pub fn backward(
        &mut self,
        cache: GeneratorCache<R>,
        dimg: &Tensor<R>,
    ) -> Result<(Tensor<R>, Tensor<R>)> {
        let dc = tanh_backward(&cache.y, dimg);
        let dl = self.final_conv.backward(cache.cc, &dc)?;
        let dan = leaky_relu_backward(&cache.an, &dl, self.slope);
        let mut dh = self.final_bn.backward(cache.fb, &dan)?;

        let mut dzs = Tensor::zeros(cache.zs.shape());
        let mut attnc = cache.attnc;
        if self.attn_pos == self.blocks.len() {
            if let (Some(a), Some(ca)) = (&mut self.attn, attnc.take()) {
                dh = a.backward(ca, &dh)?;
            }
        }
        let mut bcaches = cache.blocks;
        for i in (0..self.blocks.len()).rev() {
            let bc = bcaches.pop().expect("one cache per block");
            let (dhn, dzs_b) = self.blocks[i].backward(bc, &dh)?;
            dh = dhn;
            for (acc, &g) in dzs.data_mut().iter_mut().zip(dzs_b.data()) {
                *acc += g;
            }
            if i == self.attn_pos {
                if let (Some(a), Some(ca)) = (&mut self.attn, attnc.take()) {
                    dh = a.backward(ca, &dh)?;
                }
            }
        }

        let n = dh.shape()[0];
        let flat = dh.reshaped(&[n, self.cfg.widths()[0] * self.cfg.base_res * self.cfg.base_res])?;
        let dzs_in = self.input.backward(cache.cin, &flat)?;
        for (acc, &g) in dzs.data_mut().iter_mut().zip(dzs_in.data()) {
            *acc += g;
        }
        split_cols(&dzs, self.cfg.nz)
    }

    pub fn power_iterate_all(&mut self, iters: usize) {
        self.input.power_iterate(iters);
        for b in &mut self.blocks {
            b.power_iterate(iters);
        }
        if let Some(a) = &mut self.attn {
            a.power_iterate(iters);
        }
        self.final_conv.power_iterate(iters);
    }

    pub fn zero_grad(&mut self) {
        self.input.zero_grad();
        for b in &mut self.blocks {
            b.zero_grad();
        }
        if let Some(a) = &mut self.attn {
            a.zero_grad();
        }
        self.final_bn.zero_grad();
        self.final_conv.zero_grad();
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = self.input.slots();
        for b in &mut self.blocks {
            out.extend(b.slots());
        }
        if let Some(a) = &mut self.attn {
            out.extend(a.slots());
        }
        out.extend(self.final_bn.slots());
        out.extend(self.final_conv.slots());
        out
    }

    pub fn norm_sites(&mut self) -> Vec<(String, &mut NormStats<R>)> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.norm_sites());
        }
        out.push((self.final_bn.name.clone(), &mut self.final_bn.stats));
        out
    }

    /// Total trainable parameter elements.
    pub fn param_count(&mut self) -> usize {
        self.slots()
            .iter()
            .filter(|s| s.kind == crate::params::SlotKind::Param)
            .map(|s| s.data.len())
            .sum()
    }
}
