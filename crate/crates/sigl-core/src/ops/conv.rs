//! 2-D cross-correlation (the deep-learning "convolution": no kernel flip)
//! over NCHW tensors, lowered to GEMM through im2col.
//!
//! The im2col column index runs over (channel, kernel row, kernel col) in that
//! order, which makes the GEMM reduction visit taps in exactly the order the
//! naive sliding-window loop does — the oracle tests rely on bit equality.
//! Backward re-derives the columns instead of caching them; recomputing is
//! cheap next to the GEMMs and keeps activation memory bounded.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

fn out_extent(input: usize, kernel: usize, g: ConvGeometry, op: &'static str) -> Result<usize> {
    let padded = input + 2 * g.pad;
    if padded < kernel {
        return Err(Error::Dim {
            op,
            detail: format!("kernel {kernel} exceeds padded extent {padded}"),
        });
    }
    let span = padded - kernel;
    if span % g.stride != 0 {
        return Err(Error::Dim {
            op,
            detail: format!("stride {} does not divide span {span}", g.stride),
        });
    }
    Ok(span / g.stride + 1)
}

/// Scatter one sample's [C,H,W] slab into columns [C*kh*kw, Ho*Wo].
#[allow(clippy::too_many_arguments)]
fn im2col<R: Real>(
    x: &[R],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    cols: &mut [R],
) {
    let spatial = ho * wo;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut cols[((ch * kh + ki) * kw + kj) * spatial..][..spatial];
                let mut idx = 0;
                for oi in 0..ho {
                    let si = (oi * g.stride + ki) as isize - g.pad as isize;
                    for oj in 0..wo {
                        let sj = (oj * g.stride + kj) as isize - g.pad as isize;
                        row[idx] = if si >= 0 && si < h as isize && sj >= 0 && sj < w as isize {
                            plane[si as usize * w + sj as usize]
                        } else {
                            R::ZERO
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: accumulate column gradients back onto the input slab.
#[allow(clippy::too_many_arguments)]
fn col2im<R: Real>(
    cols: &[R],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    g: ConvGeometry,
    ho: usize,
    wo: usize,
    dx: &mut [R],
) {
    let spatial = ho * wo;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &cols[((ch * kh + ki) * kw + kj) * spatial..][..spatial];
                let mut idx = 0;
                for oi in 0..ho {
                    let si = (oi * g.stride + ki) as isize - g.pad as isize;
                    for oj in 0..wo {
                        let sj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if si >= 0 && si < h as isize && sj >= 0 && sj < w as isize {
                            plane[si as usize * w + sj as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    bias: Option<&[R]>,
    g: ConvGeometry,
) -> Result<Tensor<R>> {
    let (n, c, h, wd) = x.dims4("conv2d")?;
    let (o, wc, kh, kw) = w.dims4("conv2d")?;
    if c != wc {
        return Err(Error::Dim {
            op: "conv2d",
            detail: format!("input channels {c} vs kernel channels {wc}"),
        });
    }
    let ho = out_extent(h, kh, g, "conv2d")?;
    let wo = out_extent(wd, kw, g, "conv2d")?;
    let ckk = c * kh * kw;
    let spatial = ho * wo;

    let mut y = Tensor::zeros(&[n, o, ho, wo]);
    let mut cols = vec![R::ZERO; ckk * spatial];
    for s in 0..n {
        im2col(
            &x.data()[s * c * h * wd..],
            c,
            h,
            wd,
            kh,
            kw,
            g,
            ho,
            wo,
            &mut cols,
        );
        let out = &mut y.data_mut()[s * o * spatial..(s + 1) * o * spatial];
        gemm_nn(o, ckk, spatial, w.data(), &cols, out);
        if let Some(b) = bias {
            for (oc, plane) in out.chunks_mut(spatial).enumerate() {
                let bv = b[oc];
                for v in plane {
                    *v += bv;
                }
            }
        }
    }
    Ok(y)
}

/// Returns (dx, dw, db).
pub fn conv2d_backward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    dy: &Tensor<R>,
    g: ConvGeometry,
) -> Result<(Tensor<R>, Tensor<R>, Vec<R>)> {
    let (n, c, h, wd) = x.dims4("conv2d_backward")?;
    let (o, _, kh, kw) = w.dims4("conv2d_backward")?;
    let (dn, dout, ho, wo) = dy.dims4("conv2d_backward")?;
    if dn != n || dout != o {
        return Err(Error::Dim {
            op: "conv2d_backward",
            detail: format!("grad shape {:?} vs n={n} o={o}", dy.shape()),
        });
    }
    let ckk = c * kh * kw;
    let spatial = ho * wo;

    let mut dx = Tensor::zeros(&[n, c, h, wd]);
    let mut dw = Tensor::zeros(&[o, c, kh, kw]);
    let mut db = vec![R::ZERO; o];
    let mut cols = vec![R::ZERO; ckk * spatial];
    let mut col_grad = vec![R::ZERO; ckk * spatial];
    for s in 0..n {
        let gy = &dy.data()[s * o * spatial..(s + 1) * o * spatial];
        im2col(
            &x.data()[s * c * h * wd..],
            c,
            h,
            wd,
            kh,
            kw,
            g,
            ho,
            wo,
            &mut cols,
        );
        // dW += dy · colsᵀ, with cols in the [n_cols, k] layout gemm_nt reads.
        gemm_nt(o, spatial, ckk, gy, &cols, dw.data_mut());
        // column gradients = Wᵀ · dy, then scatter back to input space.
        for v in &mut col_grad {
            *v = R::ZERO;
        }
        gemm_tn(ckk, o, spatial, w.data(), gy, &mut col_grad);
        col2im(
            &col_grad,
            c,
            h,
            wd,
            kh,
            kw,
            g,
            ho,
            wo,
            &mut dx.data_mut()[s * c * h * wd..],
        );
        for (oc, plane) in gy.chunks(spatial).enumerate() {
            for &v in plane {
                db[oc] += v;
            }
        }
    }
    Ok((dx, dw, db))
}
