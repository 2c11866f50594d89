//! The fused image + frequency regression network.
//!
//! ```text
//! image [1,64,64] ─ 3 × (conv 3×3 pad 1 → ReLU → maxpool 2×2) ─ flatten 8192 ─┐
//!                                                                          concat 8256 → fc 128 → ReLU → fc 2
//! log10 f (standardized) ─ fc 1→64 → ReLU ────────────────────────────────────┘
//! ```
//!
//! The two outputs are `[L, Q]` in standardized log10 space; see
//! [`NormStats`].

mod checkpoint;
mod norm;

pub use checkpoint::{from_bytes, load, save, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use norm::NormStats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{
    self, conv2d_backward_into, conv2d_forward, dense, pool_backward, pool_forward, ConvKernel, DenseLayer,
    PoolMode, PoolSpec,
};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 64;
pub const FREQ_EMBED_WIDTH: usize = 64;
pub const HIDDEN_WIDTH: usize = 128;
pub const OUTPUT_WIDTH: usize = 2;
pub const KERNEL_SIZE: usize = 3;
pub const CONV_PADDING: (usize, usize) = (1, 1);
/// Side length of the feature maps after three 2×2 poolings of a 64×64 image.
pub const FEATURE_SIDE: usize = IMAGE_SIDE / 8;

/// Output channel counts of the three convolution blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub channels: [usize; 3],
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128],
        }
    }
}

impl Architecture {
    /// Flattened width of the convolution stack on a 64×64 image.
    pub fn feature_width(&self) -> usize {
        self.channels[2] * FEATURE_SIDE * FEATURE_SIDE
    }

    pub fn fused_width(&self) -> usize {
        self.feature_width() + FREQ_EMBED_WIDTH
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernel: ConvKernel,
    pub pool: PoolSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoilNet {
    pub conv_blocks: [ConvBlock; 3],
    pub freq_embed: DenseLayer,
    pub decoder_fc1: DenseLayer,
    pub decoder_fc2: DenseLayer,
    pub norm_stats: NormStats,
}

/// Identified coil parameters in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub inductance_h: f64,
    pub quality: f64,
}

/// One gradient tensor per parameter tensor, in [`CoilNet::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(net: &CoilNet) -> Self {
        Self {
            tensors: net.params().into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }
}

/// Per-sample activations of the convolution stack.
#[derive(Debug, Clone)]
struct ConvTrace {
    /// Input to each block: the image, then the two pooled maps.
    block_inputs: Vec<Tensor>,
    /// Post-ReLU conv outputs (the pooling inputs).
    activations: Vec<Tensor>,
    /// Shape of the last pooled map.
    pooled_shape: Vec<usize>,
}

impl ConvTrace {
    fn features(&self) -> &[f64] {
        self.block_inputs[3].data()
    }
}

/// Activations of a mini-batch, kept for backpropagation. Row `s` of each
/// matrix belongs to sample `s`.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    conv: Vec<ConvTrace>,
    freq_inputs: Vec<f64>,
    /// `[B, FREQ_EMBED_WIDTH]`, post-ReLU.
    embedding: Vec<f64>,
    /// `[B, feature + embed width]`.
    fused: Vec<f64>,
    /// `[B, HIDDEN_WIDTH]`, post-ReLU.
    hidden: Vec<f64>,
    /// `[B, 2]` normalized `[L, Q]`.
    outputs: Vec<[f64; 2]>,
}

impl BatchTrace {
    pub fn outputs(&self) -> &[[f64; 2]] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Runs `f` over `items`, split into at most `threads` contiguous chunks,
/// returning results in input order.
fn map_chunks<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    t
}

impl CoilNet {
    /// Default architecture, see [`Architecture::default`].
    pub fn init(seed: u64) -> Self {
        Self::init_with(Architecture::default(), seed)
    }

    /// Weights uniform in `±1/√fan_in`, biases zero, identity
    /// normalization.
    pub fn init_with(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 1;
        let conv_blocks = arch.channels.map(|out_ch| {
            let fan_in = in_ch * KERNEL_SIZE * KERNEL_SIZE;
            let weights = uniform_tensor(&mut rng, &[out_ch, in_ch, KERNEL_SIZE, KERNEL_SIZE], fan_in);
            in_ch = out_ch;
            ConvBlock {
                kernel: ConvKernel {
                    weights,
                    bias: Tensor::zeros(&[out_ch]),
                },
                pool: PoolSpec::new((2, 2), PoolMode::Max),
            }
        });
        let mut dense = |out_dim: usize, in_dim: usize| DenseLayer {
            weights: uniform_tensor(&mut rng, &[out_dim, in_dim], in_dim),
            bias: Tensor::zeros(&[out_dim]),
        };
        let freq_embed = dense(FREQ_EMBED_WIDTH, 1);
        let decoder_fc1 = dense(HIDDEN_WIDTH, arch.fused_width());
        let decoder_fc2 = dense(OUTPUT_WIDTH, HIDDEN_WIDTH);
        Self {
            conv_blocks,
            freq_embed,
            decoder_fc1,
            decoder_fc2,
            norm_stats: NormStats::default(),
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            channels: [0, 1, 2].map(|i| self.conv_blocks[i].kernel.out_channels()),
        }
    }

    /// Parameter tensors in a fixed order: for each conv block weights then
    /// bias, then frequency embedding, fc1 and fc2 (weights, bias each).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(12);
        for b in &self.conv_blocks {
            out.push(&b.kernel.weights);
            out.push(&b.kernel.bias);
        }
        for l in [&self.freq_embed, &self.decoder_fc1, &self.decoder_fc2] {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(12);
        for b in &mut self.conv_blocks {
            out.push(&mut b.kernel.weights);
            out.push(&mut b.kernel.bias);
        }
        for l in [&mut self.freq_embed, &mut self.decoder_fc1, &mut self.decoder_fc2] {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Checks internal shape consistency; used after loading.
    pub(crate) fn validate(&self) -> Result<()> {
        let mut in_ch = 1;
        for b in &self.conv_blocks {
            let k = &b.kernel;
            if k.in_channels() != in_ch || k.size() != (KERNEL_SIZE, KERNEL_SIZE) {
                return Err(Error::invalid(
                    "CoilNet",
                    format!("conv weights {:?} do not follow {in_ch} input channels", k.weights.shape()),
                ));
            }
            k.bias.expect_shape("CoilNet", &[k.out_channels()])?;
            in_ch = k.out_channels();
        }
        let arch = self.architecture();
        let expect = [
            (&self.freq_embed, FREQ_EMBED_WIDTH, 1),
            (&self.decoder_fc1, HIDDEN_WIDTH, arch.fused_width()),
            (&self.decoder_fc2, OUTPUT_WIDTH, HIDDEN_WIDTH),
        ];
        for (layer, out_dim, in_dim) in expect {
            layer.weights.expect_shape("CoilNet", &[out_dim, in_dim])?;
            layer.bias.expect_shape("CoilNet", &[out_dim])?;
        }
        Ok(())
    }

    /// Flattened output of the convolution stack.
    pub fn image_features(&self, image: &Tensor) -> Result<Tensor> {
        check_image(image)?;
        let mut x = image.clone();
        for b in &self.conv_blocks {
            x = conv_block_forward(b, &x)?.1;
        }
        let n = x.len();
        x.reshape(vec![n])
    }

    /// Network output `[L_norm, Q_norm]`.
    pub fn forward(&self, image: &Tensor, freq_hz: f64) -> Result<Tensor> {
        let trace = self.forward_batch(&[(image, freq_hz)], 1)?;
        Tensor::from_vec(trace.outputs[0].to_vec())
    }

    /// Forward pass over a mini-batch. The convolution stacks of different
    /// samples may run on up to `threads` threads; results do not depend on
    /// the thread count.
    pub fn forward_batch(&self, batch: &[(&Tensor, f64)], threads: usize) -> Result<BatchTrace> {
        if batch.is_empty() {
            return Err(Error::invalid("CoilNet::forward", "empty batch"));
        }
        for &(image, freq_hz) in batch {
            check_image(image)?;
            check_frequency(freq_hz)?;
        }
        let conv = map_chunks(batch, threads, |&(image, _)| self.conv_forward(image))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let b = batch.len();
        let feature_width = self.decoder_fc1.in_dim() - FREQ_EMBED_WIDTH;
        let fused_width = self.decoder_fc1.in_dim();
        let mut fused = vec![0.0; b * fused_width];
        let mut embedding = vec![0.0; b * FREQ_EMBED_WIDTH];
        let mut freq_inputs = Vec::with_capacity(b);
        for (s, (trace, &(_, freq_hz))) in conv.iter().zip(batch).enumerate() {
            let row = &mut fused[s * fused_width..(s + 1) * fused_width];
            let features = trace.features();
            if features.len() != feature_width {
                return Err(Error::ShapeMismatch {
                    op: "CoilNet::forward",
                    expected: vec![feature_width],
                    got: vec![features.len()],
                });
            }
            row[..feature_width].copy_from_slice(features);
            let f = self.norm_stats.normalize_frequency(freq_hz);
            freq_inputs.push(f);
            let emb = &mut embedding[s * FREQ_EMBED_WIDTH..(s + 1) * FREQ_EMBED_WIDTH];
            for ((e, &w), &bias) in emb
                .iter_mut()
                .zip(self.freq_embed.weights.data())
                .zip(self.freq_embed.bias.data())
            {
                *e = w * f + bias;
            }
            ops::activation::relu_inplace(emb);
            row[feature_width..].copy_from_slice(emb);
        }

        let mut hidden = vec![0.0; b * HIDDEN_WIDTH];
        dense::forward_rows(&fused, &self.decoder_fc1, &mut hidden);
        ops::activation::relu_inplace(&mut hidden);
        let mut out = vec![0.0; b * OUTPUT_WIDTH];
        dense::forward_rows(&hidden, &self.decoder_fc2, &mut out);
        let outputs = out.chunks_exact(OUTPUT_WIDTH).map(|o| [o[0], o[1]]).collect();
        Ok(BatchTrace {
            conv,
            freq_inputs,
            embedding,
            fused,
            hidden,
            outputs,
        })
    }

    fn conv_forward(&self, image: &Tensor) -> Result<ConvTrace> {
        let mut block_inputs = Vec::with_capacity(3);
        let mut activations = Vec::with_capacity(3);
        let mut x = image.clone();
        for b in &self.conv_blocks {
            let (act, pooled) = conv_block_forward(b, &x)?;
            block_inputs.push(x);
            activations.push(act);
            x = pooled;
        }
        let pooled_shape = x.shape().to_vec();
        block_inputs.push(x);
        Ok(ConvTrace {
            block_inputs,
            activations,
            pooled_shape,
        })
    }

    /// Writes `∂(Σ_s upstream_s · output_s)/∂θ` into `grads`, overwriting
    /// it. Per-sample contributions are summed in batch order.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        upstream: &[[f64; 2]],
        grads: &mut Gradients,
        threads: usize,
    ) -> Result<()> {
        let b = trace.len();
        if upstream.len() != b {
            return Err(Error::ShapeMismatch {
                op: "CoilNet::backward",
                expected: vec![b, OUTPUT_WIDTH],
                got: vec![upstream.len(), OUTPUT_WIDTH],
            });
        }
        let g = &mut grads.tensors;
        assert_eq!(g.len(), 12, "gradient set does not match the parameter list");
        let fused_width = self.decoder_fc1.in_dim();
        let feature_width = fused_width - FREQ_EMBED_WIDTH;
        let up: Vec<f64> = upstream.iter().flatten().copied().collect();

        {
            let (gw, gb) = pair(g, 10);
            dense::param_grads_rows(&trace.hidden, &up, &self.decoder_fc2, gw, gb);
        }
        let mut d_hidden = vec![0.0; b * HIDDEN_WIDTH];
        dense::input_grads_rows(&up, &self.decoder_fc2, &mut d_hidden);
        ops::activation::relu_mask_inplace(&trace.hidden, &mut d_hidden);

        {
            let (gw, gb) = pair(g, 8);
            dense::param_grads_rows(&trace.fused, &d_hidden, &self.decoder_fc1, gw, gb);
        }
        let mut d_fused = vec![0.0; b * fused_width];
        dense::input_grads_rows(&d_hidden, &self.decoder_fc1, &mut d_fused);

        // frequency embedding
        {
            let (gw, gb) = pair(g, 6);
            gw.fill(0.0);
            gb.fill(0.0);
            for s in 0..b {
                let d_emb = &d_fused[s * fused_width + feature_width..(s + 1) * fused_width];
                let emb = &trace.embedding[s * FREQ_EMBED_WIDTH..(s + 1) * FREQ_EMBED_WIDTH];
                let f = trace.freq_inputs[s];
                for k in 0..FREQ_EMBED_WIDTH {
                    if emb[k] > 0.0 {
                        gw[k] += d_emb[k] * f;
                        gb[k] += d_emb[k];
                    }
                }
            }
        }

        // convolution stacks, one per sample
        let jobs: Vec<(&ConvTrace, &[f64])> = trace
            .conv
            .iter()
            .enumerate()
            .map(|(s, t)| (t, &d_fused[s * fused_width..s * fused_width + feature_width]))
            .collect();
        let per_sample = map_chunks(&jobs, threads, |&(t, d)| self.conv_backward(t, d));
        for t in &mut g[..6] {
            t.data_mut().fill(0.0);
        }
        for sample_grads in per_sample {
            for (acc, part) in g[..6].iter_mut().zip(sample_grads?) {
                for (a, p) in acc.data_mut().iter_mut().zip(part.data()) {
                    *a += p;
                }
            }
        }
        Ok(())
    }

    /// Gradients of the six conv parameter tensors for one sample.
    fn conv_backward(&self, trace: &ConvTrace, d_features: &[f64]) -> Result<Vec<Tensor>> {
        let mut grads: Vec<Tensor> = self.params()[..6].iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut d_pooled = Tensor::new(trace.pooled_shape.clone(), d_features.to_vec())?;
        for i in (0..3).rev() {
            let block = &self.conv_blocks[i];
            let act = &trace.activations[i];
            let mut d_act = pool_backward(act, &block.pool, &d_pooled)?;
            ops::activation::relu_mask_inplace(act.data(), d_act.data_mut());
            let input = &trace.block_inputs[i];
            let mut d_input = (i > 0).then(|| Tensor::zeros(input.shape()));
            let (gw, gb) = pair(&mut grads, 2 * i);
            conv2d_backward_into(
                input,
                &block.kernel,
                CONV_PADDING,
                &d_act,
                gw,
                gb,
                d_input.as_mut().map(|t| t.data_mut()),
            )?;
            if let Some(d) = d_input {
                d_pooled = d;
            }
        }
        Ok(grads)
    }

    /// Physical `(L, Q)`. Fails only if the output is so extreme that
    /// `10^x` leaves the positive finite range.
    pub fn predict(&self, image: &Tensor, freq_hz: f64) -> Result<Prediction> {
        let out = self.forward(image, freq_hz)?;
        let (inductance_h, quality) = self.norm_stats.denormalize([out.data()[0], out.data()[1]]);
        let representable = |v: f64| v.is_finite() && v > 0.0;
        if !(representable(inductance_h) && representable(quality)) {
            return Err(Error::NonFinite(format!(
                "prediction out of range: L = {inductance_h}, Q = {quality}"
            )));
        }
        Ok(Prediction { inductance_h, quality })
    }
}

fn pair(g: &mut [Tensor], at: usize) -> (&mut [f64], &mut [f64]) {
    let (w, b) = g[at..at + 2].split_at_mut(1);
    (w[0].data_mut(), b[0].data_mut())
}

/// Returns the post-ReLU activation and the pooled map.
fn conv_block_forward(block: &ConvBlock, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut act = conv2d_forward(x, &block.kernel, CONV_PADDING)?;
    ops::activation::relu_inplace(act.data_mut());
    let pooled = pool_forward(&act, &block.pool)?;
    Ok((act, pooled))
}

fn check_image(image: &Tensor) -> Result<()> {
    image.expect_shape("CoilNet::forward", &[1, IMAGE_SIDE, IMAGE_SIDE])
}

fn check_frequency(freq_hz: f64) -> Result<()> {
    if !(freq_hz > 0.0) || !freq_hz.is_finite() {
        return Err(Error::invalid(
            "CoilNet::forward",
            format!("frequency must be positive and finite, got {freq_hz}"),
        ));
    }
    Ok(())
}
