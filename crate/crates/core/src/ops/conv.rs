//! Unit-stride 2-D convolution (cross-correlation) with zero padding.
//!
//! `O(c,i,j) = b(c) + Σ_cin Σ_m Σ_n I(cin, i+m, j+n) · K(c, cin, m, n)` over
//! the zero-padded input. Internally the input is unfolded into a column
//! matrix so both passes reduce to dense matrix products.

use super::gemm::{gemm, Strides};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights `[out_channels, in_channels, M, N]` plus one bias per output
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        weights.expect_rank("ConvKernel::new", 4)?;
        bias.expect_shape("ConvKernel::new", &[weights.shape()[0]])?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, height: usize, width: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[out_channels, in_channels, height, width]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Kernel `(M, N)`.
    pub fn size(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }
}

/// Gradients of `Σ upstream ⊙ conv2d_forward(..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    pub weights: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    py: usize,
    px: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output shape `[C_out, H + 2py − M + 1, W + 2px − N + 1]`.
pub fn conv_output_shape(
    input_shape: &[usize],
    kernel: &ConvKernel,
    padding: (usize, usize),
) -> Result<Vec<usize>> {
    let g = geometry(input_shape, kernel, padding)?;
    Ok(vec![kernel.out_channels(), g.out_h, g.out_w])
}

fn geometry(input_shape: &[usize], kernel: &ConvKernel, padding: (usize, usize)) -> Result<Geometry> {
    let mismatch = || Error::ShapeMismatch {
        op: "conv2d",
        expected: {
            let (m, n) = kernel.size();
            vec![kernel.in_channels(), m.max(1), n.max(1)]
        },
        got: input_shape.to_vec(),
    };
    if input_shape.len() != 3 || input_shape[0] != kernel.in_channels() {
        return Err(mismatch());
    }
    let (kh, kw) = kernel.size();
    let (py, px) = padding;
    let (height, width) = (input_shape[1], input_shape[2]);
    if height + 2 * py < kh || width + 2 * px < kw {
        return Err(Error::invalid(
            "conv2d",
            format!(
                "kernel {kh}x{kw} (weights {:?}) does not fit input {input_shape:?} padded by {padding:?}",
                kernel.weights.shape()
            ),
        ));
    }
    Ok(Geometry {
        channels: input_shape[0],
        height,
        width,
        kh,
        kw,
        py,
        px,
        out_h: height + 2 * py - kh + 1,
        out_w: width + 2 * px - kw + 1,
    })
}

/// Range of output columns `j` whose source column `j + n − px` lies inside
/// the input.
fn valid_cols(g: Geometry, n: usize) -> (usize, usize) {
    let lo = g.px.saturating_sub(n).min(g.out_w);
    let hi = (g.width + g.px).saturating_sub(n).min(g.out_w);
    (lo, hi.max(lo))
}

/// Unfolds the padded input into a `[C·M·N, H'·W']` column matrix.
fn im2col(input: &[f64], g: Geometry, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for m in 0..g.kh {
            for n in 0..g.kw {
                let row = (c * g.kh + m) * g.kw + n;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, n);
                for i in 0..g.out_h {
                    let out_row = &mut dst[i * g.out_w..(i + 1) * g.out_w];
                    let y = (i + m) as isize - g.py as isize;
                    if y < 0 || y >= g.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let x0 = lo + n - g.px;
                    out_row[lo..hi].copy_from_slice(&src[x0..x0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Scatters a column matrix back onto an (unpadded) input gradient.
fn col2im(cols: &[f64], g: Geometry, grad: &mut [f64]) {
    grad.fill(0.0);
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for m in 0..g.kh {
            for n in 0..g.kw {
                let row = (c * g.kh + m) * g.kw + n;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, n);
                for i in 0..g.out_h {
                    let y = (i + m) as isize - g.py as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    let x0 = lo + n - g.px;
                    for (d, &s) in dst[x0..x0 + (hi - lo)]
                        .iter_mut()
                        .zip(&src[i * g.out_w + lo..i * g.out_w + hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor, kernel: &ConvKernel, padding: (usize, usize)) -> Result<Tensor> {
    let g = geometry(input.shape(), kernel, padding)?;
    let (k, p, cout) = (g.rows(), g.positions(), kernel.out_channels());
    let mut cols = vec![0.0; k * p];
    im2col(input.data(), g, &mut cols);
    let mut out = vec![0.0; cout * p];
    gemm(
        cout,
        k,
        p,
        kernel.weights.data(),
        Strides::row_major(k),
        &cols,
        Strides::row_major(p),
        &mut out,
    );
    for (row, &b) in out.chunks_exact_mut(p).zip(kernel.bias.data()) {
        for v in row {
            *v += b;
        }
    }
    Tensor::new(vec![cout, g.out_h, g.out_w], out)
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    padding: (usize, usize),
    upstream: &Tensor,
) -> Result<ConvGradients> {
    let mut weights = Tensor::zeros(kernel.weights.shape());
    let mut bias = Tensor::zeros(kernel.bias.shape());
    let mut grad_input = Tensor::zeros(input.shape());
    conv2d_backward_into(
        input,
        kernel,
        padding,
        upstream,
        weights.data_mut(),
        bias.data_mut(),
        Some(grad_input.data_mut()),
    )?;
    Ok(ConvGradients {
        weights,
        bias,
        input: grad_input,
    })
}

/// Buffer-reusing backward pass. Overwrites `grad_w`, `grad_b` and, when
/// given, `grad_input`.
pub(crate) fn conv2d_backward_into(
    input: &Tensor,
    kernel: &ConvKernel,
    padding: (usize, usize),
    upstream: &Tensor,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_input: Option<&mut [f64]>,
) -> Result<()> {
    let g = geometry(input.shape(), kernel, padding)?;
    let (k, p, cout) = (g.rows(), g.positions(), kernel.out_channels());
    upstream.expect_shape("conv2d_backward", &[cout, g.out_h, g.out_w])?;
    assert_eq!(grad_w.len(), kernel.weights.len());
    assert_eq!(grad_b.len(), cout);

    let up = upstream.data();
    for (b, row) in grad_b.iter_mut().zip(up.chunks_exact(p)) {
        *b = row.iter().sum();
    }

    let mut cols = vec![0.0; k * p];
    im2col(input.data(), g, &mut cols);
    // dW = dY · colsᵀ
    gemm(
        cout,
        p,
        k,
        up,
        Strides::row_major(p),
        &cols,
        Strides::transposed(p),
        grad_w,
    );

    if let Some(grad_input) = grad_input {
        assert_eq!(grad_input.len(), input.len());
        // dcols = Wᵀ · dY, reusing the column buffer
        gemm(
            k,
            cout,
            p,
            kernel.weights.data(),
            Strides::transposed(k),
            up,
            Strides::row_major(p),
            &mut cols,
        );
        col2im(&cols, g, grad_input);
    }
    Ok(())
}
