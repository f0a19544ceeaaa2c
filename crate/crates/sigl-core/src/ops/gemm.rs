//! Matrix-multiply kernels underneath the dense and convolution layers.
//!
//! Three variants cover every use in forward and backward passes without ever
//! materializing a transpose: `nn` (A·B), `nt` (A·Bᵀ) and `tn` (Aᵀ·B). All
//! accumulate into C so callers can fuse bias or gradient accumulation.
//!
//! Summation order is part of the contract: for every output element the
//! reduction runs over ascending k, exactly like the naive triple loop, so
//! results are bit-identical to the reference oracle and independent of the
//! thread count when the `parallel` feature partitions rows.

use crate::scalar::Real;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// C[m,n] += A[m,k] · B[k,n]
pub fn gemm_nn<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], c: &mut [R]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);

    let row = |ci: &mut [R], ai: &[R]| {
        for (kk, &aik) in ai.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for (cv, &bv) in ci.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(ci, ai)| row(ci, ai));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (ci, ai) in c.chunks_mut(n).zip(a.chunks(k)) {
            row(ci, ai);
        }
    }
}

/// C[m,n] += A[m,k] · B[n,k]ᵀ  — both operands are read along contiguous rows.
pub fn gemm_nt<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], c: &mut [R]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);

    let row = |ci: &mut [R], ai: &[R]| {
        for (cv, bj) in ci.iter_mut().zip(b.chunks(k)) {
            let mut acc = R::ZERO;
            for (&av, &bv) in ai.iter().zip(bj) {
                acc += av * bv;
            }
            *cv += acc;
        }
    };

    #[cfg(feature = "parallel")]
    {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(ci, ai)| row(ci, ai));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (ci, ai) in c.chunks_mut(n).zip(a.chunks(k)) {
            row(ci, ai);
        }
    }
}

/// C[m,n] += A[k,m]ᵀ · B[k,n]  — A is read down a column per output row.
pub fn gemm_tn<R: Real>(m: usize, k: usize, n: usize, a: &[R], b: &[R], c: &mut [R]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);

    let row = |i: usize, ci: &mut [R]| {
        for kk in 0..k {
            let aik = a[kk * m + i];
            let brow = &b[kk * n..kk * n + n];
            for (cv, &bv) in ci.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, ci)| row(i, ci));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(i, ci);
        }
    }
}
