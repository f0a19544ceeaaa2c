//! Pointwise activations. Backward passes take the *pre-activation* input so
//! no layer has to keep both sides of the nonlinearity alive.

use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn leaky_relu<R: Real>(x: &Tensor<R>, slope: R) -> Tensor<R> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < R::ZERO {
            *v *= slope;
        }
    }
    y
}

pub fn leaky_relu_backward<R: Real>(x_pre: &Tensor<R>, dy: &Tensor<R>, slope: R) -> Tensor<R> {
    debug_assert_eq!(x_pre.shape(), dy.shape());
    let mut dx = dy.clone();
    for (g, &x) in dx.data_mut().iter_mut().zip(x_pre.data()) {
        if x < R::ZERO {
            *g *= slope;
        }
    }
    dx
}

pub fn tanh<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.tanh();
    }
    y
}

/// Takes the tanh *output* since d/dx tanh(x) = 1 - tanh(x)².
pub fn tanh_backward<R: Real>(y: &Tensor<R>, dy: &Tensor<R>) -> Tensor<R> {
    debug_assert_eq!(y.shape(), dy.shape());
    let mut dx = dy.clone();
    for (g, &t) in dx.data_mut().iter_mut().zip(y.data()) {
        *g *= R::ONE - t * t;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn leaky_relu_applies_slope_below_zero_only() {
        let x = Tensor::from_vec(&[4], vec![-2.0f64, -0.5, 0.0, 3.0]).unwrap();
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y.data(), &[-0.4, -0.1, 0.0, 3.0]);
    }

    #[test]
    fn leaky_relu_gradient_matches_central_differences() {
        let x = Tensor::from_vec(&[3], vec![-1.5f64, 0.7, 2.0]).unwrap();
        let dy = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let dx = leaky_relu_backward(&x, &dy, 0.2);
        let eps = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let f = |t: &Tensor<f64>| -> f64 {
                leaky_relu(t, 0.2)
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(a, g)| a * g)
                    .sum()
            };
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((num - dx.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn tanh_saturates_to_unit_interval() {
        let x = Tensor::from_vec(&[3], vec![-30.0f32, 0.0, 30.0]).unwrap();
        let y = tanh(&x);
        assert_eq!(y.data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn tanh_gradient_matches_central_differences() {
        let x = Tensor::from_vec(&[3], vec![-0.9f64, 0.1, 1.3]).unwrap();
        let dy = Tensor::from_vec(&[3], vec![0.7f64, -1.1, 0.4]).unwrap();
        let y = tanh(&x);
        let dx = tanh_backward(&y, &dy);
        let eps = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let f = |t: &Tensor<f64>| -> f64 {
                tanh(t).data().iter().zip(dy.data()).map(|(a, g)| a * g).sum()
            };
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((num - dx.data()[i]).abs() < 1e-9);
        }
    }
}
