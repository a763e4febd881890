//! Forward-only temporal cross-attention on small feature grids.
//!
//! Queries come from the current frame's features, keys and values from the
//! previous frame's. The fused result goes through a feed-forward block
//! `MLP(GELU(DWConv3x3(MLP(x)))) + x`. There is no training code here; the
//! weights are either supplied or drawn from a seeded generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seed used by [`AttentionParams::seeded`] callers that need a fixed default.
pub const DEFAULT_SEED: u64 = 42;

/// `height x width x channels` array, cell-major (`(row * width + col) * channels + ch`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg("feature grid dimensions must be at least 1"));
        }
        if data.len() != height * width * channels {
            return Err(Error::arg(format!(
                "feature data has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("feature grid contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn random(height: usize, width: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let data = (0..height * width * channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Dense affine map `y = W x + b`, `W` row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::arg(format!(
                "linear {inputs}->{outputs} needs {} weights and {outputs} biases",
                inputs * outputs
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            l.weight[i * n + i] = 1.0;
        }
        l
    }

    fn seeded(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: (0..outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *y = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs];
        self.apply_into(x, &mut out);
        out
    }

    /// Applies the map to every cell of a grid.
    pub fn apply_grid(&self, x: &FeatureGrid) -> Result<FeatureGrid> {
        if x.channels != self.inputs {
            return Err(Error::arg(format!(
                "linear expects {} channels, grid has {}",
                self.inputs, x.channels
            )));
        }
        let mut out = FeatureGrid::zeros(x.height, x.width, self.outputs);
        for i in 0..x.cells() {
            self.apply_into(x.cell(i), out.cell_mut(i));
        }
        Ok(out)
    }
}

/// Depthwise 3x3 convolution with zero padding of 1. Kernel taps are
/// row-major, `kernels[ch][(dr + 1) * 3 + (dc + 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv3x3 {
    pub kernels: Vec<[f64; 9]>,
    pub bias: Vec<f64>,
}

impl DepthwiseConv3x3 {
    pub fn zeros(channels: usize) -> Self {
        Self {
            kernels: vec![[0.0; 9]; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.kernels.len()
    }

    pub fn apply(&self, x: &FeatureGrid) -> Result<FeatureGrid> {
        if x.channels != self.channels() || self.bias.len() != self.channels() {
            return Err(Error::arg("convolution channel count mismatch"));
        }
        let (h, w, d) = (x.height as isize, x.width as isize, x.channels);
        let mut out = FeatureGrid::zeros(x.height, x.width, d);
        for r in 0..h {
            for c in 0..w {
                let o = out.cell_mut((r * w + c) as usize);
                o.copy_from_slice(&self.bias);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || rr >= h || cc < 0 || cc >= w {
                            continue;
                        }
                        let tap = ((dr + 1) * 3 + (dc + 1)) as usize;
                        let src = x.cell((rr * w + cc) as usize);
                        for ch in 0..d {
                            o[ch] += self.kernels[ch][tap] * src[ch];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Exact GELU, `x * Phi(x)` with the Gaussian CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub expand: Linear,
    pub conv: DepthwiseConv3x3,
    pub contract: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Attention heads; channels must divide evenly. Default 1.
    pub heads: usize,
    pub ffn: FeedForwardParams,
}

impl AttentionParams {
    pub fn channels(&self) -> usize {
        self.query.inputs
    }

    /// All-zero weights with `hidden` feed-forward channels.
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            query: Linear::zeros(channels, channels),
            key: Linear::zeros(channels, channels),
            value: Linear::zeros(channels, channels),
            heads: 1,
            ffn: FeedForwardParams {
                expand: Linear::zeros(channels, hidden),
                conv: DepthwiseConv3x3::zeros(hidden),
                contract: Linear::zeros(hidden, channels),
            },
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` weights from a ChaCha8 stream seeded with `seed`.
    /// `hidden = None` uses `4 * channels`.
    pub fn seeded(channels: usize, hidden: Option<usize>, seed: u64) -> Self {
        let hidden = hidden.unwrap_or(4 * channels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = Linear::seeded(channels, channels, &mut rng);
        let key = Linear::seeded(channels, channels, &mut rng);
        let value = Linear::seeded(channels, channels, &mut rng);
        let expand = Linear::seeded(channels, hidden, &mut rng);
        let conv = DepthwiseConv3x3 {
            kernels: (0..hidden)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0 / 3.0..1.0 / 3.0)))
                .collect(),
            bias: (0..hidden).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        };
        let contract = Linear::seeded(hidden, channels, &mut rng);
        Self {
            query,
            key,
            value,
            heads: 1,
            ffn: FeedForwardParams { expand, conv, contract },
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.channels();
        for (name, l) in [("query", &self.query), ("key", &self.key), ("value", &self.value)] {
            if l.inputs != d || l.outputs != d {
                return Err(Error::arg(format!("{name} projection must be {d}x{d}")));
            }
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::arg(format!("{} heads do not divide {d} channels", self.heads)));
        }
        Ok(())
    }
}

/// Attended features plus the softmax weights, `weights[head][q * n_k + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: FeatureGrid,
    pub weights: Vec<Vec<f64>>,
    pub keys: usize,
}

/// `Softmax(Q K^T / sqrt(d)) V` with `Q` from `current` and `K`, `V` from
/// `previous`; the result has `current`'s grid shape.
pub fn cross_attention(current: &FeatureGrid, previous: &FeatureGrid, params: &AttentionParams) -> Result<FeatureGrid> {
    Ok(cross_attention_detailed(current, previous, params)?.output)
}

pub fn cross_attention_detailed(
    current: &FeatureGrid,
    previous: &FeatureGrid,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let head_dim = params.channels() / params.heads.max(1);
    cross_attention_scaled(current, previous, params, (head_dim as f64).sqrt())
}

/// Same as [`cross_attention_detailed`] with an explicit logit divisor.
pub fn cross_attention_scaled(
    current: &FeatureGrid,
    previous: &FeatureGrid,
    params: &AttentionParams,
    scale: f64,
) -> Result<AttentionOutput> {
    params.validate()?;
    let d = params.channels();
    if current.channels != d || previous.channels != d {
        return Err(Error::arg(format!(
            "feature dimension mismatch: current {}, previous {}, params {d}",
            current.channels, previous.channels
        )));
    }
    let q = params.query.apply_grid(current)?;
    let k = params.key.apply_grid(previous)?;
    let v = params.value.apply_grid(previous)?;
    let (n_q, n_k) = (current.cells(), previous.cells());
    let head_dim = d / params.heads;

    let mut output = FeatureGrid::zeros(current.height, current.width, d);
    let mut weights = vec![vec![0.0; n_q * n_k]; params.heads];
    for (h, head_weights) in weights.iter_mut().enumerate() {
        let span = h * head_dim..(h + 1) * head_dim;
        for i in 0..n_q {
            let qi = &q.cell(i)[span.clone()];
            let row = &mut head_weights[i * n_k..(i + 1) * n_k];
            for (j, w) in row.iter_mut().enumerate() {
                let kj = &k.cell(j)[span.clone()];
                *w = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale;
            }
            softmax_in_place(row);
            let out = &mut output.cell_mut(i)[span.clone()];
            for (j, &w) in row.iter().enumerate() {
                for (o, vv) in out.iter_mut().zip(&v.cell(j)[span.clone()]) {
                    *o += w * vv;
                }
            }
        }
    }
    Ok(AttentionOutput {
        output,
        weights,
        keys: n_k,
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// The residual branch alone: `MLP(GELU(DWConv3x3(MLP(x))))`.
pub fn feed_forward_branch(x: &FeatureGrid, params: &FeedForwardParams) -> Result<FeatureGrid> {
    if params.contract.outputs != x.channels {
        return Err(Error::arg("feed-forward output width must equal input channels"));
    }
    if params.expand.outputs != params.conv.channels() || params.contract.inputs != params.conv.channels() {
        return Err(Error::arg("feed-forward hidden widths disagree"));
    }
    let hidden = params.expand.apply_grid(x)?;
    let mut conv = params.conv.apply(&hidden)?;
    conv.data.iter_mut().for_each(|v| *v = gelu(*v));
    params.contract.apply_grid(&conv)
}

/// `MLP(GELU(DWConv3x3(MLP(x)))) + x`.
pub fn feed_forward(x: &FeatureGrid, params: &FeedForwardParams) -> Result<FeatureGrid> {
    let mut out = feed_forward_branch(x, params)?;
    for (o, xi) in out.data.iter_mut().zip(&x.data) {
        *o += xi;
    }
    Ok(out)
}

/// Full fusion layer: cross-attention followed by the feed-forward block.
pub fn temporal_fusion(current: &FeatureGrid, previous: &FeatureGrid, params: &AttentionParams) -> Result<FeatureGrid> {
    let attended = cross_attention(current, previous, params)?;
    feed_forward(&attended, &params.ffn)
}
