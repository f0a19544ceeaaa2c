//! Spectral normalization: divide a weight by its leading singular value,
//! estimated by power iteration on a persistent left-singular vector `u`.
//!
//! Weights flatten to a matrix whose first axis is the *output* dimension:
//! conv kernels [O,C,kh,kw] become O×(C·kh·kw) directly, while dense weights
//! stored [in, out] are treated as the transpose. `SnShape` hides that
//! distinction behind logical mat-vec products.
//!
//! The gradient treats u and v as constants (the usual stop-gradient
//! convention): with σ = uᵀWv,
//!     dL/dW = (G − ⟨G, W_sn⟩_F · uvᵀ) / σ
//! where G is the upstream gradient w.r.t. W_sn = W/σ.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::StreamRng;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct SnShape {
    pub out: usize,
    pub rest: usize,
    /// Physical storage is [rest, out] (dense layers) rather than [out, rest].
    pub transposed: bool,
}

impl SnShape {
    /// Logical M·v, length `out`.
    fn mv<R: Real>(&self, w: &[R], v: &[R], out: &mut [R]) {
        debug_assert_eq!(v.len(), self.rest);
        debug_assert_eq!(out.len(), self.out);
        if self.transposed {
            // physical w[rest, out]: (Mv)[o] = Σ_r w[r,o]·v[r]
            for x in out.iter_mut() {
                *x = R::ZERO;
            }
            for (r, &vr) in v.iter().enumerate() {
                let row = &w[r * self.out..(r + 1) * self.out];
                for (x, &wv) in out.iter_mut().zip(row) {
                    *x += wv * vr;
                }
            }
        } else {
            for (o, x) in out.iter_mut().enumerate() {
                let row = &w[o * self.rest..(o + 1) * self.rest];
                let mut acc = R::ZERO;
                for (&wv, &vv) in row.iter().zip(v) {
                    acc += wv * vv;
                }
                *x = acc;
            }
        }
    }

    /// Logical Mᵀ·u, length `rest`.
    fn mvt<R: Real>(&self, w: &[R], u: &[R], out: &mut [R]) {
        debug_assert_eq!(u.len(), self.out);
        debug_assert_eq!(out.len(), self.rest);
        if self.transposed {
            for (r, x) in out.iter_mut().enumerate() {
                let row = &w[r * self.out..(r + 1) * self.out];
                let mut acc = R::ZERO;
                for (&wv, &uv) in row.iter().zip(u) {
                    acc += wv * uv;
                }
                *x = acc;
            }
        } else {
            for x in out.iter_mut() {
                *x = R::ZERO;
            }
            for (o, &uo) in u.iter().enumerate() {
                let row = &w[o * self.rest..(o + 1) * self.rest];
                for (x, &wv) in out.iter_mut().zip(row) {
                    *x += wv * uo;
                }
            }
        }
    }
}

fn norm<R: Real>(v: &[R]) -> R {
    let mut acc = R::ZERO;
    for &x in v {
        acc += x * x;
    }
    acc.sqrt()
}

fn normalize_into<R: Real>(v: &mut [R]) -> bool {
    let n = norm(v);
    if n.to_f64() == 0.0 {
        return false;
    }
    let inv = R::ONE / n;
    for x in v {
        *x *= inv;
    }
    true
}

/// Persistent power-iteration state, one per normalized weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState<R> {
    pub u: Vec<R>,
}

impl<R: Real> SpectralState<R> {
    /// Start from a random unit vector so the iteration has (almost surely) a
    /// component along the leading singular direction.
    pub fn init(out: usize, rng: &mut StreamRng) -> Self {
        let mut u: Vec<R> = (0..out).map(|_| R::from_f64(rng.normal())).collect();
        if !normalize_into(&mut u) {
            u[0] = R::ONE;
        }
        SpectralState { u }
    }

    /// Run `iters` rounds of power iteration. A zero weight leaves `u`
    /// untouched so the state survives until the weight becomes non-zero.
    pub fn power_iterate(&mut self, w: &[R], shape: SnShape, iters: usize) {
        let mut v = vec![R::ZERO; shape.rest];
        let mut u_next = vec![R::ZERO; shape.out];
        for _ in 0..iters {
            shape.mvt(w, &self.u, &mut v);
            if !normalize_into(&mut v) {
                return;
            }
            shape.mv(w, &v, &mut u_next);
            if !normalize_into(&mut u_next) {
                return;
            }
            self.u.copy_from_slice(&u_next);
        }
    }
}

/// A weight after normalization, with everything backward needs.
#[derive(Debug, Clone)]
pub struct SnApplied<R> {
    pub w_sn: Vec<R>,
    pub sigma: R,
    pub u: Vec<R>,
    pub v: Vec<R>,
    /// σ was zero; the weight passed through unnormalized.
    pub passthrough: bool,
}

/// Normalize `w` by the σ estimate implied by the current `u` (no state
/// mutation — power iteration is an explicit, separate step so that forward
/// passes are pure).
pub fn spectral_normalize<R: Real>(w: &[R], shape: SnShape, state: &SpectralState<R>) -> SnApplied<R> {
    let mut v = vec![R::ZERO; shape.rest];
    shape.mvt(w, &state.u, &mut v);
    if !normalize_into(&mut v) {
        return SnApplied {
            w_sn: w.to_vec(),
            sigma: R::ZERO,
            u: state.u.clone(),
            v,
            passthrough: true,
        };
    }
    let mut wv = vec![R::ZERO; shape.out];
    shape.mv(w, &v, &mut wv);
    let mut sigma = R::ZERO;
    for (&a, &b) in state.u.iter().zip(&wv) {
        sigma += a * b;
    }
    if sigma.to_f64() == 0.0 {
        return SnApplied {
            w_sn: w.to_vec(),
            sigma: R::ZERO,
            u: state.u.clone(),
            v,
            passthrough: true,
        };
    }
    let inv = R::ONE / sigma;
    let w_sn = w.iter().map(|&x| x * inv).collect();
    SnApplied {
        w_sn,
        sigma,
        u: state.u.clone(),
        v,
    passthrough: false,
    }
}

/// Map a gradient w.r.t. W_sn back to a gradient w.r.t. W.
pub fn spectral_backward<R: Real>(grad_wsn: &[R], applied: &SnApplied<R>, shape: SnShape) -> Vec<R> {
    if applied.passthrough {
        return grad_wsn.to_vec();
    }
    let mut dot = R::ZERO;
    for (&g, &w) in grad_wsn.iter().zip(&applied.w_sn) {
        dot += g * w;
    }
    let inv = R::ONE / applied.sigma;
    let mut out = Vec::with_capacity(grad_wsn.len());
    if shape.transposed {
        // physical [rest, out]: correction term is v uᵀ
        for r in 0..shape.rest {
            let vr = applied.v[r];
            let grow = &grad_wsn[r * shape.out..(r + 1) * shape.out];
            for (o, &g) in grow.iter().enumerate() {
                out.push((g - dot * vr * applied.u[o]) * inv);
            }
        }
    } else {
        for o in 0..shape.out {
            let uo = applied.u[o];
            let grow = &grad_wsn[o * shape.rest..(o + 1) * shape.rest];
            for (r, &g) in grow.iter().enumerate() {
                out.push((g - dot * uo * applied.v[r]) * inv);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;

    /// Independent σ oracle: largest eigenvalue of WᵀW via cyclic Jacobi.
    fn sigma_oracle(w: &[f64], rows: usize, cols: usize) -> f64 {
        let n = cols;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for r in 0..rows {
                    acc += w[r * cols + i] * w[r * cols + j];
                }
                a[i * n + j] = acc;
            }
        }
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[p * n + q].abs();
                    if a[p * n + q].abs() < 1e-14 {
                        continue;
                    }
                    let theta = 0.5 * libm::atan2(2.0 * a[p * n + q], a[p * n + p] - a[q * n + q]);
                    let (s, c) = (libm::sin(theta), libm::cos(theta));
                    for k in 0..n {
                        let (akp, akq) = (a[k * n + p], a[k * n + q]);
                        a[k * n + p] = c * akp + s * akq;
                        a[k * n + q] = -s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                        a[p * n + k] = c * apk + s * aqk;
                        a[q * n + k] = -s * apk + c * aqk;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut lmax: f64 = 0.0;
        for i in 0..n {
            lmax = lmax.max(a[i * n + i]);
        }
        libm::sqrt(lmax)
    }

    #[test]
    fn diagonal_matrix_sigma_is_exact_after_fifty_iterations() {
        let w = [3.0f64, 0.0, 0.0, 1.0];
        let shape = SnShape { out: 2, rest: 2, transposed: false };
        let mut rng = StreamRng::new(5, Domain::ParamInit, 0);
        let mut st = SpectralState::init(2, &mut rng);
        st.power_iterate(&w, shape, 50);
        let applied = spectral_normalize(&w, shape, &st);
        assert!((applied.sigma - 3.0).abs() < 1e-12, "sigma {}", applied.sigma);
    }

    #[test]
    fn sigma_matches_jacobi_oracle_within_tolerance() {
        let mut rng = StreamRng::new(6, Domain::ParamInit, 0);
        let (rows, cols) = (6, 4);
        let w: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
        let shape = SnShape { out: rows, rest: cols, transposed: false };
        let mut st = SpectralState::init(rows, &mut rng);
        st.power_iterate(&w, shape, 50);
        let applied = spectral_normalize(&w, shape, &st);
        let truth = sigma_oracle(&w, rows, cols);
        assert!(
            (applied.sigma - truth).abs() / truth < 1e-3,
            "sigma {} vs oracle {truth}",
            applied.sigma
        );
        // And the normalized weight has unit spectral norm.
        let s1 = sigma_oracle(&applied.w_sn, rows, cols);
        assert!((s1 - 1.0).abs() < 1e-3, "post-normalization sigma {s1}");
    }

    #[test]
    fn transposed_layout_agrees_with_explicit_transpose() {
        let mut rng = StreamRng::new(7, Domain::ParamInit, 0);
        let (d_in, d_out) = (5, 3);
        let w: Vec<f64> = (0..d_in * d_out).map(|_| rng.normal()).collect(); // [in, out]
        let mut wt = vec![0.0; d_out * d_in];
        for i in 0..d_in {
            for o in 0..d_out {
                wt[o * d_in + i] = w[i * d_out + o];
            }
        }
        let sh_t = SnShape { out: d_out, rest: d_in, transposed: true };
        let sh_n = SnShape { out: d_out, rest: d_in, transposed: false };
        let mut st1 = SpectralState::init(d_out, &mut rng);
        let mut st2 = st1.clone();
        st1.power_iterate(&w, sh_t, 50);
        st2.power_iterate(&wt, sh_n, 50);
        let a1 = spectral_normalize(&w, sh_t, &st1);
        let a2 = spectral_normalize(&wt, sh_n, &st2);
        assert!((a1.sigma - a2.sigma).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_passes_through_with_flag_and_stable_u() {
        let w = [0.0f64; 6];
        let shape = SnShape { out: 2, rest: 3, transposed: false };
        let mut rng = StreamRng::new(8, Domain::ParamInit, 0);
        let mut st = SpectralState::init(2, &mut rng);
        let before = st.u.clone();
        st.power_iterate(&w, shape, 5);
        assert_eq!(st.u, before);
        let applied = spectral_normalize(&w, shape, &st);
        assert!(applied.passthrough);
        assert_eq!(applied.sigma, 0.0);
        assert_eq!(applied.w_sn, w.to_vec());
        let g = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(spectral_backward(&g, &applied, shape), g.to_vec());
    }

    #[test]
    fn backward_matches_central_differences_at_convergence() {
        // With u,v fully converged, the stop-gradient formula equals the true
        // gradient of W/σ(W) (envelope theorem: dσ/dW = uvᵀ exactly).
        let mut rng = StreamRng::new(9, Domain::ParamInit, 0);
        let (rows, cols) = (4, 3);
        let w: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
        let shape = SnShape { out: rows, rest: cols, transposed: false };

        let f = |w: &[f64]| -> f64 {
            let mut rng = StreamRng::new(99, Domain::ParamInit, 0);
            let mut st = SpectralState::init(rows, &mut rng);
            st.power_iterate(w, shape, 500);
            let a = spectral_normalize(w, shape, &st);
            a.w_sn.iter().zip(&g).map(|(x, gg)| x * gg).sum()
        };

        let mut st = SpectralState::init(rows, &mut StreamRng::new(99, Domain::ParamInit, 0));
        st.power_iterate(&w, shape, 500);
        let applied = spectral_normalize(&w, shape, &st);
        let analytic = spectral_backward(&g, &applied, shape);

        let eps = 1e-5;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            let num = (f(&wp) - f(&wm)) / (2.0 * eps);
            assert!(
                (num - analytic[i]).abs() < 1e-6,
                "coord {i}: numeric {num} analytic {}",
                analytic[i]
            );
        }
    }
}
