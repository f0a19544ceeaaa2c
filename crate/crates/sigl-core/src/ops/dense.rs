//! Fully-connected primitive: y = x·W + b with W stored [in, out].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn dense_forward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    bias: Option<&[R]>,
) -> Result<Tensor<R>> {
    let (n, d_in) = x.dims2("dense")?;
    let (w_in, d_out) = w.dims2("dense")?;
    if d_in != w_in {
        return Err(Error::Dim {
            op: "dense",
            detail: alloc::format!("input width {d_in} vs weight rows {w_in}"),
        });
    }
    let mut y = Tensor::zeros(&[n, d_out]);
    gemm_nn(n, d_in, d_out, x.data(), w.data(), y.data_mut());
    if let Some(b) = bias {
        debug_assert_eq!(b.len(), d_out);
        for row in y.data_mut().chunks_mut(d_out) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    Ok(y)
}

/// Returns (dx, dw, db). `db` is always computed; callers without a bias
/// simply drop it.
pub fn dense_backward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    dy: &Tensor<R>,
) -> Result<(Tensor<R>, Tensor<R>, Vec<R>)> {
    let (n, d_in) = x.dims2("dense_backward")?;
    let (_, d_out) = w.dims2("dense_backward")?;
    let mut dx = Tensor::zeros(&[n, d_in]);
    let mut dw = Tensor::zeros(&[d_in, d_out]);
    let mut db = vec![R::ZERO; d_out];
    // dx = dy · Wᵀ ; W is [in, out] which is exactly the [n_cols, k] layout gemm_nt wants.
    gemm_nt(n, d_out, d_in, dy.data(), w.data(), dx.data_mut());
    // dW = xᵀ · dy
    gemm_tn(d_in, n, d_out, x.data(), dy.data(), dw.data_mut());
    for row in dy.data().chunks(d_out) {
        for (s, &g) in db.iter_mut().zip(row) {
            *s += g;
        }
    }
    Ok((dx, dw, db))
}
