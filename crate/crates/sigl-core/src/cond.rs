//! Sentence-space conditioning.
//!
//! The heart of the method: instead of feeding the generator one caption
//! embedding, training draws a random convex combination of all n captions
//! of an image,
//!
//! ```text
//! ṡ = Σⱼ Sⱼ · softmax(m)ⱼ,   m ~ U(0,1)ⁿ  (fresh every step)
//! ```
//!
//! which both augments the data (every step sees a new point of the simplex
//! spanned by the captions) and smooths the conditional space the generator
//! has to cover. Interpolation is strictly a training-time device — at test
//! time a caption is encoded and used as-is, and [`sample_interpolation`]
//! refuses to run in the eval phase so the distinction cannot erode.
//!
//! The same embedding conditions both networks: the generator through
//! per-block conditional batch-norm gains/biases projected from [z; ṡ], the
//! discriminator through a projection head that adds ⟨W_p ṡ, h⟩ to its
//! unconditional logit.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Whether interpolation is currently allowed. Threaded explicitly so the
/// training-only contract is enforced by the callee, not by caller
/// discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Numerically safe softmax (max-subtracted).
pub fn softmax<R: Real>(m: &[R]) -> Vec<R> {
    let mut mx = m[0];
    for &v in &m[1..] {
        mx = mx.max2(v);
    }
    let mut out: Vec<R> = m.iter().map(|&v| (v - mx).exp()).collect();
    let mut sum = R::ZERO;
    for &v in &out {
        sum += v;
    }
    let inv = R::ONE / sum;
    for v in &mut out {
        *v *= inv;
    }
    out
}

/// ṡ from explicit mixing logits; `embeddings` is [n, d] with one caption
/// embedding per row.
pub fn interpolate_sentences<R: Real>(embeddings: &Tensor<R>, logits: &[R]) -> Result<Vec<R>> {
    let (n, d) = embeddings.dims2("interpolate_sentences")?;
    if n == 0 {
        return Err(Error::Empty {
            what: "caption embedding matrix",
        });
    }
    if logits.len() != n {
        return Err(Error::Dim {
            op: "interpolate_sentences",
            detail: alloc::format!("{n} embeddings vs {} logits", logits.len()),
        });
    }
    let w = softmax(logits);
    let mut out = vec![R::ZERO; d];
    for (j, row) in embeddings.data().chunks(d).enumerate() {
        let wj = w[j];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += wj * v;
        }
    }
    Ok(out)
}

/// Draw m ~ U(0,1)ⁿ and interpolate. Refuses to run outside training.
pub fn sample_interpolation<R: Real>(
    embeddings: &Tensor<R>,
    rng: &mut StreamRng,
    phase: Phase,
) -> Result<Vec<R>> {
    if phase != Phase::Train {
        return Err(Error::InterpolationAtEval);
    }
    let (n, _) = embeddings.dims2("sample_interpolation")?;
    if n == 0 {
        return Err(Error::Empty {
            what: "caption embedding matrix",
        });
    }
    let logits: Vec<R> = (0..n).map(|_| R::from_f64(rng.uniform())).collect();
    interpolate_sentences(embeddings, &logits)
}

/// Conditional batch-norm parameters for a batch: gain = 1 + zs·A_gain,
/// bias = zs·A_bias, each [N, C] from zs [N, zs_dim] and A [zs_dim, C].
pub fn cbn_params<R: Real>(
    zs: &Tensor<R>,
    a_gain: &Tensor<R>,
    a_bias: &Tensor<R>,
) -> Result<(Tensor<R>, Tensor<R>)> {
    use crate::ops::dense::dense_forward;
    let mut gain = dense_forward(zs, a_gain, None)?;
    for v in gain.data_mut() {
        *v += R::ONE;
    }
    let bias = dense_forward(zs, a_bias, None)?;
    Ok((gain, bias))
}

/// Projection-discriminator output: logit_i = ψ(h_i) + ⟨W_p s_i, h_i⟩ with
/// ψ(h) = psi_w·h + psi_b. `h` is [N, f], `s` is [N, d], `w_p` is [d, f].
pub fn projection_logit<R: Real>(
    h: &Tensor<R>,
    s: &Tensor<R>,
    w_p: &Tensor<R>,
    psi_w: &[R],
    psi_b: R,
) -> Result<Vec<R>> {
    use crate::ops::dense::dense_forward;
    let (n, f) = h.dims2("projection_logit")?;
    let proj = dense_forward(s, w_p, None)?; // [N, f]
    if proj.shape()[1] != f {
        return Err(Error::Dim {
            op: "projection_logit",
            detail: alloc::format!("projected width {} vs feature width {f}", proj.shape()[1]),
        });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let hrow = &h.data()[i * f..(i + 1) * f];
        let prow = &proj.data()[i * f..(i + 1) * f];
        let mut acc = psi_b;
        for ((&hv, &pv), &wv) in hrow.iter().zip(prow).zip(psi_w) {
            acc += hv * (wv + pv);
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;

    #[test]
    fn softmax_of_ln3_and_zero_is_three_quarters() {
        let w = softmax(&[libm::log(3.0), 0.0]);
        assert!((w[0] - 0.75).abs() < 1e-12);
        assert!((w[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let w1 = softmax(&[1.0f64, 2.0, -0.5]);
        let w2 = softmax(&[101.0f64, 102.0, 99.5]);
        for (a, b) in w1.iter().zip(&w2) {
            assert!((a - b).abs() < 1e-12);
        }
        let s: f64 = w1.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_matches_hand_computed_mixture() {
        let embs = Tensor::from_vec(&[2, 3], vec![1.0f64, 0.0, 2.0, 0.0, 4.0, -2.0]).unwrap();
        let s = interpolate_sentences(&embs, &[libm::log(3.0), 0.0]).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-12);
        assert!((s[2] - (0.75 * 2.0 - 0.25 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn single_caption_interpolation_is_identity() {
        let embs = Tensor::from_vec(&[1, 4], vec![0.1f64, -0.2, 0.3, 0.4]).unwrap();
        let mut rng = StreamRng::new(1, Domain::Step, 0);
        let s = sample_interpolation(&embs, &mut rng, Phase::Train).unwrap();
        assert_eq!(s, embs.data().to_vec());
    }

    #[test]
    fn interpolation_stays_inside_the_caption_hull() {
        let mut rng = StreamRng::new(2, Domain::Step, 0);
        let n = 6;
        let d = 5;
        let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let embs = Tensor::from_vec(&[n, d], data).unwrap();
        for _ in 0..200 {
            let s = sample_interpolation(&embs, &mut rng, Phase::Train).unwrap();
            for j in 0..d {
                let col: Vec<f64> = (0..n).map(|i| embs.data()[i * d + j]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(s[j] >= lo - 1e-12 && s[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn mean_mixture_weight_is_half_for_two_captions() {
        // With m ~ U(0,1)², E[softmax(m)₁] = 0.5 by symmetry. Monte Carlo
        // over 10k draws should sit within ±0.02.
        let mut rng = StreamRng::new(3, Domain::Step, 0);
        let embs = Tensor::from_vec(&[2, 1], vec![1.0f64, 0.0]).unwrap();
        let mut acc = 0.0;
        let k = 10_000;
        for _ in 0..k {
            // first coordinate of ṡ equals the first softmax weight here
            acc += sample_interpolation(&embs, &mut rng, Phase::Train).unwrap()[0];
        }
        let mean = acc / k as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean weight {mean}");
    }

    #[test]
    fn interpolation_is_refused_at_eval_time() {
        let embs = Tensor::from_vec(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let mut rng = StreamRng::new(4, Domain::Step, 0);
        assert!(matches!(
            sample_interpolation(&embs, &mut rng, Phase::Eval),
            Err(Error::InterpolationAtEval)
        ));
    }

    #[test]
    fn empty_caption_matrix_is_an_error() {
        let embs = Tensor::<f64>::zeros(&[0, 4]);
        let mut rng = StreamRng::new(5, Domain::Step, 0);
        assert!(matches!(
            sample_interpolation(&embs, &mut rng, Phase::Train),
            Err(Error::Empty { .. })
        ));
    }

    #[test]
    fn cbn_params_center_on_unit_gain() {
        // zs = 0 must give gain exactly 1 and bias exactly 0: the projections
        // perturb around identity rather than replace it.
        let zs = Tensor::<f64>::zeros(&[2, 3]);
        let a_gain = Tensor::from_vec(&[3, 2], vec![0.5; 6]).unwrap();
        let a_bias = Tensor::from_vec(&[3, 2], vec![-0.25; 6]).unwrap();
        let (g, b) = cbn_params(&zs, &a_gain, &a_bias).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
        assert!(b.data().iter().all(|&v| v == 0.0));

        let zs = Tensor::from_vec(&[1, 3], vec![1.0f64, 2.0, -1.0]).unwrap();
        let (g, b) = cbn_params(&zs, &a_gain, &a_bias).unwrap();
        // each column of A is constant 0.5 / -0.25, so the projection is
        // 0.5·(1+2-1) = 1.0 and -0.25·2 = -0.5
        assert!((g.data()[0] - 2.0).abs() < 1e-12);
        assert!((b.data()[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_logit_matches_hand_expansion() {
        let h = Tensor::from_vec(&[1, 2], vec![2.0f64, -1.0]).unwrap();
        let s = Tensor::from_vec(&[1, 2], vec![1.0f64, 0.5]).unwrap();
        let w_p = Tensor::from_vec(&[2, 2], vec![0.1f64, 0.2, 0.3, 0.4]).unwrap();
        let psi_w = [0.5, -0.5];
        let psi_b = 0.25;
        // W_pᵀs = (0.1+0.15, 0.2+0.2) = (0.25, 0.4)
        // logit = 0.25 + 2·(0.5+0.25) + (-1)·(-0.5+0.4) = 0.25 + 1.5 + 0.1
        let l = projection_logit(&h, &s, &w_p, &psi_w, psi_b).unwrap();
        assert!((l[0] - 1.85).abs() < 1e-12);
    }
}
