//! Factor-2 spatial resampling for the residual blocks: nearest-neighbour
//! upsampling in the generator, 2x2 mean pooling in the discriminator.
//! Upsampling followed by mean pooling is the exact identity (the mean of
//! four equal values is that value, bit for bit), which the tests pin down.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn upsample2x<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let (n, c, h, w) = x.dims4("upsample2x")?;
    let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let xs = x.data();
    let ys = y.data_mut();
    for nc in 0..n * c {
        let src = &xs[nc * h * w..(nc + 1) * h * w];
        let dst = &mut ys[nc * 4 * h * w..(nc + 1) * 4 * h * w];
        for i in 0..h {
            for j in 0..w {
                let v = src[i * w + j];
                let base = (2 * i) * (2 * w) + 2 * j;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * w] = v;
                dst[base + 2 * w + 1] = v;
            }
        }
    }
    Ok(y)
}

pub fn upsample2x_backward<R: Real>(dy: &Tensor<R>) -> Result<Tensor<R>> {
    let (n, c, h2, w2) = dy.dims4("upsample2x_backward")?;
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let gs = dy.data();
    let ds = dx.data_mut();
    for nc in 0..n * c {
        let src = &gs[nc * h2 * w2..(nc + 1) * h2 * w2];
        let dst = &mut ds[nc * h * w..(nc + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let base = (2 * i) * w2 + 2 * j;
                dst[i * w + j] = src[base] + src[base + 1] + src[base + w2] + src[base + w2 + 1];
            }
        }
    }
    Ok(dx)
}

pub fn downsample2x<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let (n, c, h, w) = x.dims4("downsample2x")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dim {
            op: "downsample2x",
            detail: alloc::format!("odd spatial size {h}x{w}"),
        });
    }
    let quarter = R::from_f64(0.25);
    let mut y = Tensor::zeros(&[n, c, h / 2, w / 2]);
    let xs = x.data();
    let ys = y.data_mut();
    let (ho, wo) = (h / 2, w / 2);
    for nc in 0..n * c {
        let src = &xs[nc * h * w..(nc + 1) * h * w];
        let dst = &mut ys[nc * ho * wo..(nc + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let base = (2 * i) * w + 2 * j;
                dst[i * wo + j] =
                    (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * quarter;
            }
        }
    }
    Ok(y)
}

pub fn downsample2x_backward<R: Real>(dy: &Tensor<R>) -> Result<Tensor<R>> {
    let (n, c, ho, wo) = dy.dims4("downsample2x_backward")?;
    let (h, w) = (2 * ho, 2 * wo);
    let quarter = R::from_f64(0.25);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let gs = dy.data();
    let ds = dx.data_mut();
    for nc in 0..n * c {
        let src = &gs[nc * ho * wo..(nc + 1) * ho * wo];
        let dst = &mut ds[nc * h * w..(nc + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                let g = src[i * wo + j] * quarter;
                let base = (2 * i) * w + 2 * j;
                dst[base] = g;
                dst[base + 1] = g;
                dst[base + w] = g;
                dst[base + w + 1] = g;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamRng};

    fn randn(r: &mut StreamRng, shape: &[usize]) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.normal() as f32).collect()).unwrap()
    }

    #[test]
    fn upsample_replicates_each_pixel_four_times() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], alloc::vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn up_then_down_is_exact_identity() {
        let mut r = StreamRng::new(31, Domain::Metrics, 0);
        let x = randn(&mut r, &[2, 3, 4, 4]);
        let y = downsample2x(&upsample2x(&x).unwrap()).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn downsample_rejects_odd_sizes() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(downsample2x(&x).is_err());
    }

    #[test]
    fn resample_backwards_are_true_adjoints() {
        // ⟨A x, y⟩ must equal ⟨x, Aᵀ y⟩ for the linear maps and their
        // backward passes; this is the complete correctness condition.
        let mut r = StreamRng::new(32, Domain::Metrics, 0);
        let x = randn(&mut r, &[1, 2, 4, 4]);
        let y8 = randn(&mut r, &[1, 2, 8, 8]);
        let up = upsample2x(&x).unwrap();
        let lhs: f64 = up.data().iter().zip(y8.data()).map(|(a, b)| (a * b) as f64).sum();
        let back = upsample2x_backward(&y8).unwrap();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4);

        let y2 = randn(&mut r, &[1, 2, 2, 2]);
        let x4 = randn(&mut r, &[1, 2, 4, 4]);
        let down = downsample2x(&x4).unwrap();
        let lhs: f64 = down.data().iter().zip(y2.data()).map(|(a, b)| (a * b) as f64).sum();
        let back = downsample2x_backward(&y2).unwrap();
        let rhs: f64 = x4.data().iter().zip(back.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
