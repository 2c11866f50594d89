//! Reference implementations and finite-difference checks shared by the
//! integration tests and the acceptance harness.

#![allow(dead_code)]

use coilscope_core::model::{CoilNet, Gradients, IMAGE_SIDE};
use coilscope_core::ops::{
    concat, concat_backward, conv2d_backward, conv2d_forward, dense_backward, dense_forward, pool_backward,
    pool_forward, relu_backward, relu_forward, ConvKernel, DenseLayer, PoolMode, PoolSpec,
};
use coilscope_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor so gradients that are zero up to rounding are compared
/// absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_kernel(rng: &mut impl Rng, cout: usize, cin: usize, m: usize, n: usize) -> ConvKernel {
    ConvKernel::new(random_tensor(rng, &[cout, cin, m, n]), random_tensor(rng, &[cout])).unwrap()
}

pub fn random_dense(rng: &mut impl Rng, out_dim: usize, in_dim: usize) -> DenseLayer {
    DenseLayer::new(random_tensor(rng, &[out_dim, in_dim]), random_tensor(rng, &[out_dim])).unwrap()
}

fn at3(t: &Tensor, c: usize, i: usize, j: usize) -> f64 {
    let s = t.shape();
    t.data()[(c * s[1] + i) * s[2] + j]
}

/// Nested-loop cross-correlation over the zero-padded input.
pub fn conv_reference(input: &Tensor, kernel: &ConvKernel, padding: (usize, usize)) -> Tensor {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ks = kernel.weights.shape();
    let (cout, m, n) = (ks[0], ks[2], ks[3]);
    let (py, px) = padding;
    let (oh, ow) = (h + 2 * py - m + 1, w + 2 * px - n + 1);
    let mut out = Vec::with_capacity(cout * oh * ow);
    for c in 0..cout {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = kernel.bias.data()[c];
                for ci in 0..cin {
                    for a in 0..m {
                        for b in 0..n {
                            let (y, x) = (i + a, j + b);
                            if y < py || x < px || y - py >= h || x - px >= w {
                                continue;
                            }
                            let wv = kernel.weights.data()[((c * cin + ci) * m + a) * n + b];
                            acc += at3(input, ci, y - py, x - px) * wv;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(vec![cout, oh, ow], out).unwrap()
}

pub fn pool_reference(input: &Tensor, spec: &PoolSpec) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (m, n) = spec.window;
    let (sy, sx) = spec.stride;
    let (oh, ow) = ((h - m) / sy + 1, (w - n) / sx + 1);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut vals = Vec::new();
                for a in 0..m {
                    for b in 0..n {
                        vals.push(at3(input, ch, i * sy + a, j * sx + b));
                    }
                }
                out.push(match spec.mode {
                    PoolMode::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    PoolMode::Average => vals.iter().sum::<f64>() / vals.len() as f64,
                });
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest absolute deviation of the convolution from the reference over
/// `cases` random shapes up to `2×8×8` input and `3×3` kernel. Draws where
/// the kernel does not fit are redrawn.
pub fn conv_oracle_worst(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < cases {
        let cin = r.gen_range(1..=2);
        let cout = r.gen_range(1..=2);
        let h = r.gen_range(1..=8);
        let w = r.gen_range(1..=8);
        let m = r.gen_range(1..=3);
        let n = r.gen_range(1..=3);
        let padding = (r.gen_range(0..=1), r.gen_range(0..=1));
        if h + 2 * padding.0 < m || w + 2 * padding.1 < n {
            continue;
        }
        let input = random_tensor(&mut r, &[cin, h, w]);
        let kernel = random_kernel(&mut r, cout, cin, m, n);
        let got = conv2d_forward(&input, &kernel, padding).unwrap();
        worst = worst.max(max_abs_diff(&got, &conv_reference(&input, &kernel, padding)));
        done += 1;
    }
    worst
}

/// As [`conv_oracle_worst`] for max and average pooling, with input sizes
/// chosen so the windows tile exactly.
pub fn pool_oracle_worst(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < cases {
        let c = r.gen_range(1..=2);
        let m = r.gen_range(1..=3);
        let n = r.gen_range(1..=3);
        let sy = r.gen_range(1..=m);
        let sx = r.gen_range(1..=n);
        let oh = r.gen_range(1..=(8 - m) / sy + 1);
        let ow = r.gen_range(1..=(8 - n) / sx + 1);
        let (h, w) = ((oh - 1) * sy + m, (ow - 1) * sx + n);
        let mode = if r.gen_bool(0.5) { PoolMode::Max } else { PoolMode::Average };
        let spec = PoolSpec::new((m, n), mode).with_stride((sy, sx));
        let input = random_tensor(&mut r, &[c, h, w]);
        let got = pool_forward(&input, &spec).unwrap();
        worst = worst.max(max_abs_diff(&got, &pool_reference(&input, &spec)));
        done += 1;
    }
    worst
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub probes: usize,
    pub worst_rel: f64,
}

impl FdReport {
    pub fn record(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.worst_rel = self.worst_rel.max((analytic - numeric).abs() / denom);
        self.probes += 1;
    }

    pub fn merge(&mut self, other: FdReport) {
        self.probes += other.probes;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }

    pub fn passes(&self, min_probes: usize) -> bool {
        self.probes >= min_probes && self.worst_rel < FD_TOLERANCE
    }
}

/// Central difference of `f` with respect to `x[i]`.
fn central(x: &mut Tensor, i: usize, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let orig = x.data()[i];
    x.data_mut()[i] = orig + FD_STEP;
    let plus = f(x);
    x.data_mut()[i] = orig - FD_STEP;
    let minus = f(x);
    x.data_mut()[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// `Σ upstream ⊙ y`, the scalar every op check differentiates.
fn contract(y: &Tensor, upstream: &Tensor) -> f64 {
    y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

/// Random cases of shape up to `4×8×8`, one probe per input, weight and bias
/// coordinate drawn per case.
pub fn conv_gradients(cases: usize, seed: u64) -> FdReport {
    let mut r = rng(seed);
    let mut rep = FdReport::default();
    for _ in 0..cases {
        let cin = r.gen_range(1..=4);
        let cout = r.gen_range(1..=3);
        let (h, w) = (r.gen_range(3..=8), r.gen_range(3..=8));
        let (m, n) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let padding = (r.gen_range(0..=1), r.gen_range(0..=1));
        let mut input = random_tensor(&mut r, &[cin, h, w]);
        let mut kernel = random_kernel(&mut r, cout, cin, m, n);
        let out_shape = conv2d_forward(&input, &kernel, padding).unwrap().shape().to_vec();
        let upstream = random_tensor(&mut r, &out_shape);
        let g = conv2d_backward(&input, &kernel, padding, &upstream).unwrap();

        let i = r.gen_range(0..input.len());
        let k = kernel.clone();
        let num = central(&mut input, i, |x| contract(&conv2d_forward(x, &k, padding).unwrap(), &upstream));
        rep.record(g.input.data()[i], num);

        let i = r.gen_range(0..kernel.weights.len());
        let (inp, bias) = (input.clone(), kernel.bias.clone());
        let num = central(&mut kernel.weights, i, |wt| {
            let k = ConvKernel::new(wt.clone(), bias.clone()).unwrap();
            contract(&conv2d_forward(&inp, &k, padding).unwrap(), &upstream)
        });
        rep.record(g.weights.data()[i], num);

        let i = r.gen_range(0..kernel.bias.len());
        let wt = kernel.weights.clone();
        let num = central(&mut kernel.bias, i, |b| {
            let k = ConvKernel::new(wt.clone(), b.clone()).unwrap();
            contract(&conv2d_forward(&inp, &k, padding).unwrap(), &upstream)
        });
        rep.record(g.bias.data()[i], num);
    }
    rep
}

pub fn dense_gradients(cases: usize, seed: u64) -> FdReport {
    let mut r = rng(seed);
    let mut rep = FdReport::default();
    for _ in 0..cases {
        let (out_dim, in_dim) = (r.gen_range(1..=8), r.gen_range(1..=16));
        let mut input = random_tensor(&mut r, &[in_dim]);
        let mut layer = random_dense(&mut r, out_dim, in_dim);
        let upstream = random_tensor(&mut r, &[out_dim]);
        let g = dense_backward(&input, &layer, &upstream).unwrap();

        let i = r.gen_range(0..in_dim);
        let l = layer.clone();
        let num = central(&mut input, i, |x| contract(&dense_forward(x, &l).unwrap(), &upstream));
        rep.record(g.input.data()[i], num);

        let i = r.gen_range(0..layer.weights.len());
        let (inp, bias) = (input.clone(), layer.bias.clone());
        let num = central(&mut layer.weights, i, |wt| {
            let l = DenseLayer::new(wt.clone(), bias.clone()).unwrap();
            contract(&dense_forward(&inp, &l).unwrap(), &upstream)
        });
        rep.record(g.weights.data()[i], num);

        let i = r.gen_range(0..out_dim);
        let wt = layer.weights.clone();
        let num = central(&mut layer.bias, i, |b| {
            let l = DenseLayer::new(wt.clone(), b.clone()).unwrap();
            contract(&dense_forward(&inp, &l).unwrap(), &upstream)
        });
        rep.record(g.bias.data()[i], num);
    }
    rep
}

/// Inputs whose values are pairwise at least `gap` apart, so neither ReLU
/// nor max pooling sits on a kink within one finite-difference step. No
/// value is zero.
fn separated_tensor(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|k| (k as f64 + 0.25 - n as f64 / 2.0) * gap).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub fn pool_gradients(cases: usize, seed: u64) -> FdReport {
    let mut r = rng(seed);
    let mut rep = FdReport::default();
    for case in 0..cases {
        let c = r.gen_range(1..=4);
        let (oh, ow) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let mode = if case % 2 == 0 { PoolMode::Max } else { PoolMode::Average };
        let spec = PoolSpec::new((2, 2), mode);
        let mut input = separated_tensor(&mut r, &[c, 2 * oh, 2 * ow], 1e-2);
        let upstream = random_tensor(&mut r, &[c, oh, ow]);
        let g = pool_backward(&input, &spec, &upstream).unwrap();
        let i = r.gen_range(0..input.len());
        let num = central(&mut input, i, |x| contract(&pool_forward(x, &spec).unwrap(), &upstream));
        rep.record(g.data()[i], num);
    }
    rep
}

pub fn relu_gradients(cases: usize, seed: u64) -> FdReport {
    let mut r = rng(seed);
    let mut rep = FdReport::default();
    for _ in 0..cases {
        let n = r.gen_range(1..=32);
        let mut input = separated_tensor(&mut r, &[n], 1e-2);
        let upstream = random_tensor(&mut r, &[n]);
        let g = relu_backward(&input, &upstream).unwrap();
        let i = r.gen_range(0..n);
        let num = central(&mut input, i, |x| contract(&relu_forward(x), &upstream));
        rep.record(g.data()[i], num);
    }
    rep
}

pub fn concat_gradients(cases: usize, seed: u64) -> FdReport {
    let mut r = rng(seed);
    let mut rep = FdReport::default();
    for _ in 0..cases {
        let (na, nb) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let mut a = random_tensor(&mut r, &[na]);
        let b = random_tensor(&mut r, &[nb]);
        let upstream = random_tensor(&mut r, &[na + nb]);
        let (ga, _) = concat_backward(&upstream, na).unwrap();
        let i = r.gen_range(0..na);
        let num = central(&mut a, i, |x| contract(&concat(x, &b).unwrap(), &upstream));
        rep.record(ga.data()[i], num);
    }
    rep
}

/// A 64×64 image with structure in every region.
pub fn test_image(seed: u64) -> Tensor {
    let mut r = rng(seed);
    random_tensor(&mut r, &[1, IMAGE_SIDE, IMAGE_SIDE]).map(|v| 0.5 + 0.5 * v)
}

/// `½‖f(x) − y‖²` for the composed network, checked against
/// [`CoilNet::backward_batch`] at `probes` random parameter coordinates
/// spread over all parameter tensors.
pub fn coilnet_gradients(net: &CoilNet, probes: usize, seed: u64) -> FdReport {
    let mut r = rng(seed);
    let image = test_image(seed ^ 0x5eed);
    let freq = 1e6;
    let target = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
    let loss = |n: &CoilNet| {
        let out = n.forward(&image, freq).unwrap();
        let d = [out.data()[0] - target[0], out.data()[1] - target[1]];
        0.5 * (d[0] * d[0] + d[1] * d[1])
    };
    let trace = net.forward_batch(&[(&image, freq)], 1).unwrap();
    let out = trace.outputs()[0];
    let upstream = [out[0] - target[0], out[1] - target[1]];
    let mut grads = Gradients::zeros_like(net);
    net.backward_batch(&trace, &[upstream], &mut grads, 1).unwrap();

    let n_tensors = grads.tensors.len();
    let mut rep = FdReport::default();
    let mut probe_net = net.clone();
    for p in 0..probes {
        let t = p % n_tensors;
        let len = grads.tensors[t].len();
        let i = r.gen_range(0..len);
        let orig = probe_net.params()[t].data()[i];
        let mut central = |h: f64| {
            probe_net.params_mut()[t].data_mut()[i] = orig + h;
            let plus = loss(&probe_net);
            probe_net.params_mut()[t].data_mut()[i] = orig - h;
            let minus = loss(&probe_net);
            probe_net.params_mut()[t].data_mut()[i] = orig;
            (plus - minus) / (2.0 * h)
        };
        // A step that straddles a ReLU kink or a pooling tie somewhere in the
        // network disagrees with the next smaller one; shrink until it doesn't.
        let mut h = FD_STEP;
        let mut numeric = central(h);
        while h > FD_STEP * 1e-2 {
            let finer = central(h / 10.0);
            let agree = (finer - numeric).abs() <= 0.1 * FD_TOLERANCE * finer.abs().max(numeric.abs()).max(REL_FLOOR);
            if agree {
                break;
            }
            numeric = finer;
            h /= 10.0;
        }
        rep.record(grads.tensors[t].data()[i], numeric);
    }
    rep
}
