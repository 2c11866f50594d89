use crate::error::Result;
use crate::tensor::Tensor;

/// Elementwise `max(x, 0)`.
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Passes `upstream` through where `input > 0`. The derivative at exactly
/// zero is taken as 0.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    upstream.expect_shape("relu_backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub(crate) fn relu_inplace(data: &mut [f64]) {
    for x in data {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
}

pub(crate) fn relu_mask_inplace(activation: &[f64], grad: &mut [f64]) {
    for (g, &x) in grad.iter_mut().zip(activation) {
        if !(x > 0.0) {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn forward_clamps_negatives() {
        assert_eq!(relu_forward(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&t(&[0.5, 3.0])).data(), &[0.5, 3.0]);
        assert_eq!(relu_forward(&t(&[-0.5, -3.0])).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_masks_upstream() {
        let g = relu_backward(&t(&[-1.0, 2.0]), &t(&[5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0]);
        let g = relu_backward(&t(&[1.0, 2.0, 0.1]), &t(&[3.0, -4.0, 7.0])).unwrap();
        assert_eq!(g.data(), &[3.0, -4.0, 7.0]);
        // kink
        let g = relu_backward(&t(&[0.0]), &t(&[1.0])).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_mismatch() {
        assert!(relu_backward(&t(&[1.0, 2.0]), &t(&[1.0])).is_err());
    }
}
