//! Self-attention over all spatial positions with a zero-initialized
//! residual scale, so the block starts as an exact identity and eases into
//! long-range mixing as `gamma` is learned.
//!
//! Query/key run at C/8 channels, value at C/2, all via spectral-normalized
//! 1×1 convolutions; attention weights are a softmax over the H·W key
//! positions for each query position.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cond::softmax;
use crate::error::{Error, Result};
use crate::net::layers::{SnConv, SnConvCache};
use crate::ops::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::params::Slot;
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub struct NonLocal<R> {
    pub name: String,
    pub theta: SnConv<R>,
    pub phi: SnConv<R>,
    pub g: SnConv<R>,
    pub o: SnConv<R>,
    pub gamma: Vec<R>,
    pub dgamma: Vec<R>,
}

pub struct NonLocalCache<R> {
    pub ct: SnConvCache<R>,
    pub cp: SnConvCache<R>,
    pub cg: SnConvCache<R>,
    pub co: SnConvCache<R>,
    pub t: Tensor<R>,
    pub p: Tensor<R>,
    pub gv: Tensor<R>,
    /// Row-major [N, P, P]: row i holds the softmax weights query i puts on
    /// every key position.
    pub attn: Tensor<R>,
    pub ov: Tensor<R>,
}

impl<R: Real> NonLocal<R> {
    pub fn new(name: &str, channels: usize, rng: &mut StreamRng) -> Result<Self> {
        if channels % 8 != 0 {
            return Err(Error::Dim {
                op: "nonlocal",
                detail: format!("channels {channels} not divisible by the C/8 bottleneck"),
            });
        }
        let c8 = channels / 8;
        let c2 = channels / 2;
        Ok(NonLocal {
            name: String::from(name),
            theta: SnConv::new(&format!("{name}.theta"), channels, c8, 1, 0, false, rng),
            phi: SnConv::new(&format!("{name}.phi"), channels, c8, 1, 0, false, rng),
            g: SnConv::new(&format!("{name}.g"), channels, c2, 1, 0, false, rng),
            o: SnConv::new(&format!("{name}.o"), c2, channels, 1, 0, false, rng),
            gamma: vec![R::ZERO],
            dgamma: vec![R::ZERO],
        })
    }

    pub fn power_iterate(&mut self, iters: usize) {
        self.theta.power_iterate(iters);
        self.phi.power_iterate(iters);
        self.g.power_iterate(iters);
        self.o.power_iterate(iters);
    }

    pub fn forward(&self, x: &Tensor<R>) -> Result<(Tensor<R>, NonLocalCache<R>)> {
        let (n, c, h, w) = x.dims4("nonlocal")?;
        let p = h * w;
        let c8 = c / 8;
        let c2 = c / 2;
        let (t, ct) = self.theta.forward(x)?;
        let (ph, cp) = self.phi.forward(x)?;
        let (gv, cg) = self.g.forward(x)?;

        let mut attn = Tensor::zeros(&[n, p, p]);
        let mut att_out = Tensor::zeros(&[n, c2, h, w]);
        let mut scores = vec![R::ZERO; p * p];
        for s in 0..n {
            let ts = &t.data()[s * c8 * p..(s + 1) * c8 * p];
            let ps = &ph.data()[s * c8 * p..(s + 1) * c8 * p];
            let gs = &gv.data()[s * c2 * p..(s + 1) * c2 * p];
            // scores[i,j] = ⟨θ(·,i), φ(·,j)⟩
            for v in &mut scores {
                *v = R::ZERO;
            }
            gemm_tn(p, c8, p, ts, ps, &mut scores);
            let arows = &mut attn.data_mut()[s * p * p..(s + 1) * p * p];
            for (row, srow) in arows.chunks_mut(p).zip(scores.chunks(p)) {
                row.copy_from_slice(&softmax(srow));
            }
            // out[c,i] = Σ_j attn[i,j]·g[c,j]
            gemm_nt(
                c2,
                p,
                p,
                gs,
                arows,
                &mut att_out.data_mut()[s * c2 * p..(s + 1) * c2 * p],
            );
        }

        let (ov, co) = self.o.forward(&att_out)?;
        let mut y = x.clone();
        let gamma = self.gamma[0];
        for (yv, &o) in y.data_mut().iter_mut().zip(ov.data()) {
            *yv += gamma * o;
        }
        Ok((
            y,
            NonLocalCache {
                ct,
                cp,
                cg,
                co,
                t,
                p: ph,
                gv,
                attn,
                ov,
            },
        ))
    }

    pub fn backward(&mut self, cache: NonLocalCache<R>, dy: &Tensor<R>) -> Result<Tensor<R>> {
        let (n, c, h, w) = dy.dims4("nonlocal backward")?;
        let p = h * w;
        let c8 = c / 8;
        let c2 = c / 2;
        let gamma = self.gamma[0];

        let mut dg_acc = R::ZERO;
        for (&d, &o) in dy.data().iter().zip(cache.ov.data()) {
            dg_acc += d * o;
        }
        self.dgamma[0] += dg_acc;

        let mut dov = dy.clone();
        for v in dov.data_mut() {
            *v *= gamma;
        }
        let datt_out = self.o.backward(cache.co, &dov)?;

        let mut dt = Tensor::zeros(&[n, c8, h, w]);
        let mut dp = Tensor::zeros(&[n, c8, h, w]);
        let mut dgv = Tensor::zeros(&[n, c2, h, w]);
        let mut da = vec![R::ZERO; p * p];
        let mut ds = vec![R::ZERO; p * p];
        for s in 0..n {
            let dout = &datt_out.data()[s * c2 * p..(s + 1) * c2 * p];
            let arows = &cache.attn.data()[s * p * p..(s + 1) * p * p];
            let gs = &cache.gv.data()[s * c2 * p..(s + 1) * c2 * p];
            let ts = &cache.t.data()[s * c8 * p..(s + 1) * c8 * p];
            let ps = &cache.p.data()[s * c8 * p..(s + 1) * c8 * p];

            // dg[c,j] = Σ_i dout[c,i]·attn[i,j]
            gemm_nn(
                c2,
                p,
                p,
                dout,
                arows,
                &mut dgv.data_mut()[s * c2 * p..(s + 1) * c2 * p],
            );
            // da[i,j] = Σ_c dout[c,i]·g[c,j]
            for v in &mut da {
                *v = R::ZERO;
            }
            gemm_tn(p, c2, p, dout, gs, &mut da);
            // softmax rows: ds = a ⊙ (da − ⟨da, a⟩)
            for ((dsr, dar), ar) in ds.chunks_mut(p).zip(da.chunks(p)).zip(arows.chunks(p)) {
                let mut dot = R::ZERO;
                for (&dv, &av) in dar.iter().zip(ar) {
                    dot += dv * av;
                }
                for ((o, &dv), &av) in dsr.iter_mut().zip(dar).zip(ar) {
                    *o = av * (dv - dot);
                }
            }
            // dθ[c,i] = Σ_j ds[i,j]·φ[c,j] ; dφ[c,j] = Σ_i ds[i,j]·θ[c,i]
            gemm_nt(
                c8,
                p,
                p,
                ps,
                &ds,
                &mut dt.data_mut()[s * c8 * p..(s + 1) * c8 * p],
            );
            gemm_nn(
                c8,
                p,
                p,
                ts,
                &ds,
                &mut dp.data_mut()[s * c8 * p..(s + 1) * c8 * p],
            );
        }

        let mut dx = dy.clone();
        let dxt = self.theta.backward(cache.ct, &dt)?;
        let dxp = self.phi.backward(cache.cp, &dp)?;
        let dxg = self.g.backward(cache.cg, &dgv)?;
        for (((v, &a), &b), &cc) in dx
            .data_mut()
            .iter_mut()
            .zip(dxt.data())
            .zip(dxp.data())
            .zip(dxg.data())
        {
            *v += a + b + cc;
        }
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.theta.zero_grad();
        self.phi.zero_grad();
        self.g.zero_grad();
        self.o.zero_grad();
        self.dgamma[0] = R::ZERO;
    }

    pub fn slots(&mut self) -> Vec<Slot<'_, R>> {
        let mut out = Vec::new();
        out.extend(self.theta.slots());
        out.extend(self.phi.slots());
        out.extend(self.g.slots());
        out.extend(self.o.slots());
        out.push(Slot::param(
            format!("{}.gamma", self.name),
            vec![1],
            &mut self.gamma,
            &mut self.dgamma,
        ));
        out
    }
}
