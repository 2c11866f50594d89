//! Max and average pooling over `[C, H, W]` feature maps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    /// `(M, N)` window extents.
    pub window: (usize, usize),
    /// `(sy, sx)`; equal to `window` unless set explicitly.
    pub stride: (usize, usize),
    pub mode: PoolMode,
}

impl PoolSpec {
    /// Non-overlapping pooling: stride equals the window.
    pub fn new(window: (usize, usize), mode: PoolMode) -> Self {
        Self {
            window,
            stride: window,
            mode,
        }
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    /// `[C, (H − M)/sy + 1, (W − N)/sx + 1]`; windows may not run off the
    /// edge.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let (m, n) = self.window;
        let (sy, sx) = self.stride;
        if m == 0 || n == 0 || sy == 0 || sx == 0 {
            return Err(Error::invalid(
                "pool",
                format!("window {:?} and stride {:?} must be positive", self.window, self.stride),
            ));
        }
        if input_shape.len() != 3 {
            return Err(Error::invalid(
                "pool",
                format!("expected a [C, H, W] input, got {input_shape:?}"),
            ));
        }
        let (h, w) = (input_shape[1], input_shape[2]);
        if h < m || w < n || (h - m) % sy != 0 || (w - n) % sx != 0 {
            return Err(Error::invalid(
                "pool",
                format!(
                    "input {input_shape:?} is not tiled exactly by window {:?} with stride {:?}",
                    self.window, self.stride
                ),
            ));
        }
        Ok(vec![input_shape[0], (h - m) / sy + 1, (w - n) / sx + 1])
    }
}

pub fn pool_forward(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let out_shape = spec.output_shape(input.shape())?;
    if spec.window == (2, 2) && spec.stride == (2, 2) && spec.mode == PoolMode::Max {
        return Tensor::new(out_shape, max2x2_forward(input));
    }
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (m, n) = spec.window;
    let (sy, sx) = spec.stride;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let norm = (m * n) as f64;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let window = (0..m).flat_map(|a| (0..n).map(move |b| (i * sy + a) * w + j * sx + b));
                out.push(match spec.mode {
                    PoolMode::Max => window.map(|idx| plane[idx]).fold(f64::NEG_INFINITY, f64::max),
                    PoolMode::Average => window.map(|idx| plane[idx]).sum::<f64>() / norm,
                });
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Max mode sends each upstream value to the window's argmax, ties going to
/// the first cell in row-major order. Average mode spreads `upstream / (M·N)`
/// over the window.
pub fn pool_backward(input: &Tensor, spec: &PoolSpec, upstream: &Tensor) -> Result<Tensor> {
    let out_shape = spec.output_shape(input.shape())?;
    upstream.expect_shape("pool_backward", &out_shape)?;
    if spec.window == (2, 2) && spec.stride == (2, 2) && spec.mode == PoolMode::Max {
        return Tensor::new(input.shape().to_vec(), max2x2_backward(input, upstream));
    }
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (m, n) = spec.window;
    let (sy, sx) = spec.stride;
    let x = input.data();
    let up = upstream.data();
    let mut grad = vec![0.0; input.len()];
    let norm = (m * n) as f64;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let gplane = &mut grad[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let g = up[(ch * oh + i) * ow + j];
                let origin = i * sy * w + j * sx;
                match spec.mode {
                    PoolMode::Max => {
                        let mut best = origin;
                        for a in 0..m {
                            for b in 0..n {
                                let idx = origin + a * w + b;
                                if plane[idx] > plane[best] {
                                    best = idx;
                                }
                            }
                        }
                        gplane[best] += g;
                    }
                    PoolMode::Average => {
                        let share = g / norm;
                        for a in 0..m {
                            for b in 0..n {
                                gplane[origin + a * w + b] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), grad)
}

// Fast paths for the 2×2/2 max pooling used by the network. Same results
// (and tie-breaking) as the general loops.

fn max2x2_forward(input: &Tensor) -> Vec<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for rows in input.data().chunks_exact(2 * w) {
        let (top, bottom) = rows.split_at(w);
        for j in 0..ow {
            let m = top[2 * j].max(top[2 * j + 1]).max(bottom[2 * j]).max(bottom[2 * j + 1]);
            out.push(m);
        }
    }
    debug_assert_eq!(out.len(), c * oh * ow);
    out
}

fn max2x2_backward(input: &Tensor, upstream: &Tensor) -> Vec<f64> {
    let w = input.shape()[2];
    let ow = w / 2;
    let mut grad = vec![0.0; input.len()];
    for ((rows, grows), up) in input
        .data()
        .chunks_exact(2 * w)
        .zip(grad.chunks_exact_mut(2 * w))
        .zip(upstream.data().chunks_exact(ow))
    {
        for (j, &g) in up.iter().enumerate() {
            let cells = [2 * j, 2 * j + 1, w + 2 * j, w + 2 * j + 1];
            let mut best = cells[0];
            for &idx in &cells[1..] {
                if rows[idx] > rows[best] {
                    best = idx;
                }
            }
            grows[best] += g;
        }
    }
    grad
}
