use crate::error::Result;
use crate::tensor::Tensor;

/// Fully connected layer `y = W·x + b` with `W: [out_dim, in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        weights.expect_rank("DenseLayer::new", 2)?;
        bias.expect_shape("DenseLayer::new", &[weights.shape()[0]])?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradients {
    pub weights: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

const LANES: usize = 32;

/// Dot product with a fixed 32-lane accumulation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    reduce_lanes(&mut acc) + tail
}

fn reduce_lanes(acc: &mut [f64; LANES]) -> f64 {
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            acc[l] += acc[l + width];
        }
    }
    acc[0]
}

pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    input.expect_shape("dense_forward", &[layer.in_dim()])?;
    let x = input.data();
    let out = layer
        .weights
        .data()
        .chunks_exact(layer.in_dim())
        .zip(layer.bias.data())
        .map(|(row, &b)| dot(row, x) + b)
        .collect();
    Tensor::new(vec![layer.out_dim()], out)
}

/// `grad_W = upstream ⊗ input`, `grad_b = upstream`, `grad_x = Wᵀ·upstream`.
pub fn dense_backward(input: &Tensor, layer: &DenseLayer, upstream: &Tensor) -> Result<DenseGradients> {
    let mut weights = Tensor::zeros(layer.weights.shape());
    let mut bias = Tensor::zeros(layer.bias.shape());
    let mut grad_input = Tensor::zeros(input.shape());
    dense_backward_into(
        input,
        layer,
        upstream,
        weights.data_mut(),
        bias.data_mut(),
        Some(grad_input.data_mut()),
    )?;
    Ok(DenseGradients {
        weights,
        bias,
        input: grad_input,
    })
}

/// Overwrites `grad_w`, `grad_b` and (if given) `grad_input`.
pub(crate) fn dense_backward_into(
    input: &Tensor,
    layer: &DenseLayer,
    upstream: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_input: Option<&mut [f64]>,
) -> Result<()> {
    input.expect_shape("dense_backward", &[layer.in_dim()])?;
    upstream.expect_shape("dense_backward", &[layer.out_dim()])?;
    let x = input.data();
    let up = upstream.data();
    grad_b.copy_from_slice(up);
    for (row, &g) in grad_w.chunks_exact_mut(layer.in_dim()).zip(up) {
        for (dst, &xi) in row.iter_mut().zip(x) {
            *dst = g * xi;
        }
    }
    if let Some(gx) = grad_input {
        gx.fill(0.0);
        for (row, &g) in layer.weights.data().chunks_exact(layer.in_dim()).zip(up) {
            for (dst, &w) in gx.iter_mut().zip(row) {
                *dst += w * g;
            }
        }
    }
    Ok(())
}

// The batched gradient kernels walk the feature axis in L1-sized blocks so
// the weight matrix streams from memory once per call. Accumulation order per
// element matches the single-sample functions exactly.
const BLOCK: usize = 512;

/// Batched `Y = X·Wᵀ + b` for `X: [B, in_dim]` row-major. Each output is
/// bitwise equal to [`dense_forward`] on its row.
pub fn forward_rows(x: &[f64], layer: &DenseLayer, out: &mut [f64]) {
    let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
    let b = x.len() / in_dim;
    assert_eq!(x.len(), b * in_dim);
    assert_eq!(out.len(), b * out_dim);
    for (o, (w, &bias)) in layer.weights.data().chunks_exact(in_dim).zip(layer.bias.data()).enumerate() {
        for (s, xs) in x.chunks_exact(in_dim).enumerate() {
            out[s * out_dim + o] = dot(w, xs) + bias;
        }
    }
}

/// `grad_W = Σ_s upstream_s ⊗ x_s` and `grad_b = Σ_s upstream_s`, summed in
/// row order; overwrites both.
pub fn param_grads_rows(x: &[f64], upstream: &[f64], layer: &DenseLayer, grad_w: &mut [f64], grad_b: &mut [f64]) {
    let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
    let b = x.len() / in_dim;
    assert!(b >= 1);
    assert_eq!(upstream.len(), b * out_dim);
    for (o, row) in grad_w.chunks_exact_mut(in_dim).enumerate() {
        for start in (0..in_dim).step_by(BLOCK) {
            let end = (start + BLOCK).min(in_dim);
            let dst = &mut row[start..end];
            for (s, xs) in x.chunks_exact(in_dim).enumerate() {
                let g = upstream[s * out_dim + o];
                let xb = &xs[start..end];
                if s == 0 {
                    for (d, &xi) in dst.iter_mut().zip(xb) {
                        *d = g * xi;
                    }
                } else {
                    for (d, &xi) in dst.iter_mut().zip(xb) {
                        *d += g * xi;
                    }
                }
            }
        }
    }
    grad_b.copy_from_slice(&upstream[..out_dim]);
    for s in 1..b {
        for (acc, &g) in grad_b.iter_mut().zip(&upstream[s * out_dim..(s + 1) * out_dim]) {
            *acc += g;
        }
    }
}

/// `dX_s = Wᵀ·upstream_s` for every row; overwrites `grad_x`.
pub fn input_grads_rows(upstream: &[f64], layer: &DenseLayer, grad_x: &mut [f64]) {
    let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
    let b = upstream.len() / out_dim;
    assert_eq!(grad_x.len(), b * in_dim);
    grad_x.fill(0.0);
    let weights = layer.weights.data();
    for start in (0..in_dim).step_by(BLOCK) {
        let end = (start + BLOCK).min(in_dim);
        for (o, w) in weights.chunks_exact(in_dim).enumerate() {
            let wb = &w[start..end];
            for (s, dst) in grad_x.chunks_exact_mut(in_dim).enumerate() {
                let g = upstream[s * out_dim + o];
                for (d, &wi) in dst[start..end].iter_mut().zip(wb) {
                    *d += wi * g;
                }
            }
        }
    }
}
