//! The discriminator: input conv, bottleneck down-blocks to 4×4 with one
//! self-attention site, then leaky → global sum pool → a projection head
//! that scores image features against the sentence embedding:
//!     logit = ψ(h) + ⟨W_p s, h⟩
//! so the unconditional realness term and the text-match term share one
//! scalar output.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::net::attn::{NonLocal, NonLocalCache};
use crate::net::blocks::{DBlock, DBlockCache};
use crate::net::layers::{SnConv, SnConvCache, SnParts};
use crate::net::NetworkConfig;
use crate::ops::act::{leaky_relu, leaky_relu_backward};
use crate::ops::dense::{dense_backward, dense_forward};
use crate::ops::spectral::{spectral_backward, spectral_normalize, SnApplied, SnShape, SpectralState};
use crate::params::Slot;
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub struct Discriminator<R> {
    pub cfg: NetworkConfig,
    pub input: SnConv<R>,
    pub blocks: Vec<DBlock<R>>,
    pub attn: Option<NonLocal<R>>,
    /// Block index before which the attention block runs.
    pub attn_pos: usize,
    /// Sentence projection [d, f].
    pub w_p: Tensor<R>,
    pub dw_p: Tensor<R>,
    pub sn_wp: SpectralState<R>,
    /// Unconditional head ψ: a single spectral-normalized row [f] plus bias.
    pub psi_w: Vec<R>,
    pub dpsi_w: Vec<R>,
    pub sn_psi: SpectralState<R>,
    pub psi_b: Vec<R>,
    pub dpsi_b: Vec<R>,
    slope: R,
}

pub struct DiscriminatorCache<R> {
    cin: SnConvCache<R>,
    blocks: Vec<DBlockCache<R>>,
    attnc: Option<NonLocalCache<R>>,
    /// Features entering the final activation, [N, f, base, base].
    h_pre: Tensor<R>,
    pooled: Tensor<R>,
    s: Tensor<R>,
    wp_t: Tensor<R>,
    wp_parts: SnParts<R>,
    psi_sn: Vec<R>,
    psi_parts: SnParts<R>,
    /// s·W_p, [N, f].
    proj: Tensor<R>,
}

impl<R: Real> Discriminator<R> {
    pub fn new(cfg: NetworkConfig, rng: &mut StreamRng) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.widths();
        let k = cfg.n_ups();
        let slope = R::from_f64(cfg.leaky_slope);
        let f = widths[0];

        let input = SnConv::new("d.in", 3, widths[k], 3, 1, true, rng);
        let mut blocks = Vec::new();
        for i in 0..k {
            let c_in = widths[k - i];
            let c_out = widths[k - i - 1];
            for extra in 1..cfg.blocks_per_stage {
                blocks.push(DBlock::new(
                    &format!("d.s{i}x{}", extra - 1),
                    c_in,
                    c_in,
                    false,
                    slope,
                    rng,
                )?);
            }
            blocks.push(DBlock::new(
                &format!("d.s{i}d"),
                c_in,
                c_out,
                true,
                slope,
                rng,
            )?);
        }
        let (attn, attn_pos) = match cfg.attn_stage() {
            Some(stage) => (
                Some(NonLocal::new("d.attn", widths[stage], rng)?),
                (k - stage) * cfg.blocks_per_stage,
            ),
            None => (None, 0),
        };
        let w_p = {
            let n = cfg.embed_dim * f;
            let std = libm::sqrt(2.0 / cfg.embed_dim as f64);
            let data = (0..n).map(|_| R::from_f64(rng.normal() * std)).collect();
            Tensor::from_vec(&[cfg.embed_dim, f], data)?
        };
        let sn_wp = SpectralState::init(f, rng);
        let std_psi = libm::sqrt(2.0 / f as f64);
        let psi_w = (0..f).map(|_| R::from_f64(rng.normal() * std_psi)).collect();
        let sn_psi = SpectralState::init(1, rng);
        Ok(Discriminator {
            cfg,
            input,
            blocks,
            attn,
            attn_pos,
            dw_p: Tensor::zeros(w_p.shape()),
            w_p,
            sn_wp,
            psi_w,
            dpsi_w: vec![R::ZERO; f],
            sn_psi,
            psi_b: vec![R::ZERO],
            dpsi_b: vec![R::ZERO],
            slope,
        })
    }

    fn wp_shape(&self) -> SnShape {
        SnShape {
            out: self.w_p.shape()[1],
            rest: self.w_p.shape()[0],
            transposed: true,
        }
    }

    fn psi_shape(&self) -> SnShape {
        SnShape {
            out: 1,
            rest: self.psi_w.len(),
            transposed: false,
        }
    }

    pub fn forward(&self, x: &Tensor<R>, s: &Tensor<R>) -> Result<(Vec<R>, DiscriminatorCache<R>)> {
        let (n, c, h, w) = x.dims4("discriminator")?;
        if c != 3 || h != self.cfg.target_res || w != self.cfg.target_res {
            return Err(Error::Dim {
                op: "discriminator",
                detail: format!(
                    "input {:?} vs expected [N, 3, {res}, {res}]",
                    x.shape(),
                    res = self.cfg.target_res
                ),
            });
        }
        let (_, d) = s.dims2("discriminator")?;
        if d != self.cfg.embed_dim {
            return Err(Error::Dim {
                op: "discriminator",
                detail: format!("embedding width {d} vs configured {}", self.cfg.embed_dim),
            });
        }

        let (mut hmap, cin) = self.input.forward(x)?;
        let mut bcaches = Vec::with_capacity(self.blocks.len());
        let mut attnc = None;
        for (i, blk) in self.blocks.iter().enumerate() {
            if i == self.attn_pos {
                if let Some(a) = &self.attn {
                    let (ha, ca) = a.forward(&hmap)?;
                    hmap = ha;
                    attnc = Some(ca);
                }
            }
            let (hn, bc) = blk.forward(&hmap)?;
            hmap = hn;
            bcaches.push(bc);
        }
        if self.attn_pos == self.blocks.len() {
            if let Some(a) = &self.attn {
                let (ha, ca) = a.forward(&hmap)?;
                hmap = ha;
                attnc = Some(ca);
            }
        }

        let f = self.cfg.widths()[0];
        let base = self.cfg.base_res;
        let l = leaky_relu(&hmap, self.slope);
        let mut pooled = Tensor::zeros(&[n, f]);
        for i in 0..n {
            for ch in 0..f {
                let plane = &l.data()[(i * f + ch) * base * base..(i * f + ch + 1) * base * base];
                let mut acc = R::ZERO;
                for &v in plane {
                    acc += v;
                }
                pooled.data_mut()[i * f + ch] = acc;
            }
        }

        let wp_app = spectral_normalize(self.w_p.data(), self.wp_shape(), &self.sn_wp);
        let wp_parts = SnParts {
            sigma: wp_app.sigma,
            u: wp_app.u,
            v: wp_app.v,
            passthrough: wp_app.passthrough,
        };
        let wp_t = Tensor::from_vec(self.w_p.shape(), wp_app.w_sn)?;
        let psi_app = spectral_normalize(&self.psi_w, self.psi_shape(), &self.sn_psi);
        let psi_parts = SnParts {
            sigma: psi_app.sigma,
            u: psi_app.u,
            v: psi_app.v,
            passthrough: psi_app.passthrough,
        };
        let psi_sn = psi_app.w_sn;

        let proj = dense_forward(s, &wp_t, None)?;
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = self.psi_b[0];
            for ff in 0..f {
                acc += pooled.data()[i * f + ff] * (psi_sn[ff] + proj.data()[i * f + ff]);
            }
            logits.push(acc);
        }

        Ok((
            logits,
            DiscriminatorCache {
                cin,
                blocks: bcaches,
                attnc,
                h_pre: hmap,
                pooled,
                s: s.clone(),
                wp_t,
                wp_parts,
                psi_sn,
                psi_parts,
                proj,
            },
        ))
    }

    /// Returns (dx, ds).
    pub fn backward(
        &mut self,
        cache: DiscriminatorCache<R>,
        dlogits: &[R],
    ) -> Result<(Tensor<R>, Tensor<R>)> {
        let (n, f) = cache.pooled.dims2("discriminator backward")?;
        if dlogits.len() != n {
            return Err(Error::Dim {
                op: "discriminator backward",
                detail: format!("{} logit grads vs batch {n}", dlogits.len()),
            });
        }

        let mut dpooled = Tensor::zeros(&[n, f]);
        let mut dproj = Tensor::zeros(&[n, f]);
        let mut dpsi_sn = vec![R::ZERO; f];
        for i in 0..n {
            let dl = dlogits[i];
            self.dpsi_b[0] += dl;
            for ff in 0..f {
                let h = cache.pooled.data()[i * f + ff];
                dpooled.data_mut()[i * f + ff] =
                    dl * (cache.psi_sn[ff] + cache.proj.data()[i * f + ff]);
                let dh = dl * h;
                dproj.data_mut()[i * f + ff] = dh;
                dpsi_sn[ff] += dh;
            }
        }

        let psi_app = SnApplied {
            w_sn: cache.psi_sn,
            sigma: cache.psi_parts.sigma,
            u: cache.psi_parts.u,
            v: cache.psi_parts.v,
            passthrough: cache.psi_parts.passthrough,
        };
        let dpsi = spectral_backward(&dpsi_sn, &psi_app, self.psi_shape());
        for (a, &g) in self.dpsi_w.iter_mut().zip(&dpsi) {
            *a += g;
        }

        let (ds, dwp_sn, _) = dense_backward(&cache.s, &cache.wp_t, &dproj)?;
        let wp_app = SnApplied {
            w_sn: cache.wp_t.into_data(),
            sigma: cache.wp_parts.sigma,
            u: cache.wp_parts.u,
            v: cache.wp_parts.v,
            passthrough: cache.wp_parts.passthrough,
        };
        let dwp = spectral_backward(dwp_sn.data(), &wp_app, self.wp_shape());
        for (a, &g) in self.dw_p.data_mut().iter_mut().zip(&dwp) {
            *a += g;
        }

        // sum pool: every position inherits the pooled gradient
        let base = self.cfg.base_res;
        let mut dl = Tensor::zeros(&[n, f, base, base]);
        for i in 0..n {
            for ch in 0..f {
                let g = dpooled.data()[i * f + ch];
                for v in
                    &mut dl.data_mut()[(i * f + ch) * base * base..(i * f + ch + 1) * base * base]
                {
                    *v = g;
                }
            }
        }
        let mut dh = leaky_relu_backward(&cache.h_pre, &dl, self.slope);

        let mut attnc = cache.attnc;
        if self.attn_pos == self.blocks.len() {
            if let (Some(a), Some(ca)) = (&mut self.attn, attnc.take()) {
                dh = a.backward(ca, &dh)?;
            }
        }
        let mut bcaches = cache.blocks;
        for i in (0..self.blocks.len()).rev() {
            let bc = bcaches.pop().expect("one cache per block");
            dh = self.blocks[i].backward(bc, &dh)?;
            if i == self.attn_pos {
                if let (Some(a), Some(ca)) = (&mut self.attn, attnc.take()) {
                    dh = a.backward(ca, &dh)?;
                }
            }
        }

        let dx = self.input.backward(cache.cin, &dh)?;
        Ok((dx, ds))
    }

    pub fn power_iterate_all(&mut self, iters: usize) {
        self.input.power_iterate(iters);
        for b in &mut self.blocks {
            b.power_iterate(iters);
        }
        if let Some(a) = &mut self.attn {
            a.power_iterate(iters);
        }
        let wp_shape = self.wp_shape();
        self.sn_wp.power_iterate(self.w_p.data(), wp_shape, iters);
        let psi_shape = self.psi_shape();
        self.sn_psi.power_iterate(&self.psi_w, psi_shape, iters);
    }

    pub fn zero_grad(&mut self) {
        self.input.zero_grad();
        for b in &mut self.blocks {
            b.zero_grad();
        }
        if let Some(a) = &mut self.attn {
            a.zero_grad();
        }
        self.dw_p.fill(R::ZERO);
        for v in &mut self.dpsi_w {
            *v = R::ZERO;
        }
        self.dpsi_b[0] = R::ZERO;
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = self.input.slots();
        for b in &mut self.blocks {
            out.extend(b.slots());
        }
        if let Some(a) = &mut self.attn {
            out.extend(a.slots());
        }
        let wp_shape = self.w_p.shape().to_vec();
        out.push(Slot::param(
            alloc::string::String::from("d.wp"),
            wp_shape,
            self.w_p.data_mut(),
            self.dw_p.data_mut(),
        ));
        let f = self.psi_w.len();
        out.push(Slot::param(
            alloc::string::String::from("d.psi_w"),
            vec![f],
            &mut self.psi_w,
            &mut self.dpsi_w,
        ));
        out.push(Slot::param(
            alloc::string::String::from("d.psi_b"),
            vec![1],
            &mut self.psi_b,
            &mut self.dpsi_b,
        ));
        out.push(Slot::state(
            alloc::string::String::from("d.u_wp"),
            vec![self.sn_wp.u.len()],
            &mut self.sn_wp.u,
        ));
        out.push(Slot::state(
            alloc::string::String::from("d.u_psi"),
            vec![self.sn_psi.u.len()],
            &mut self.sn_psi.u,
        ));
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.slots()
            .iter()
            .filter(|s| s.kind == crate::params::SlotKind::Param)
            .map(|s| s.data.len())
            .sum()
    }
}
