use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Architecture of the embedding network and its two heads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input images are `side × side`, one channel.
    pub side: usize,
    /// Output channels of each conv block; each block halves the resolution.
    pub channels: Vec<usize>,
    /// Gate hidden width is `max(1, channels / reduction)`.
    pub reduction: usize,
    /// Embedding dimension M.
    pub embed_dim: usize,
    pub n_source: usize,
    pub n_original: usize,
    /// Copies of the modality bit appended inside every gate; 0 gives plain SE.
    pub domain_code_width: usize,
    /// The last feature map is average-pooled onto a `pool_grid × pool_grid`
    /// grid before the projection; 1 is a global pool.
    pub pool_grid: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            side: 32,
            channels: vec![16, 32, 32],
            reduction: 4,
            embed_dim: 64,
            n_source: 10,
            n_original: 20,
            domain_code_width: 1,
            pool_grid: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::contract("model config", d));
        if self.channels.is_empty() || self.channels.len() > 3 {
            return bad(format!("need 1-3 conv blocks, got {}", self.channels.len()));
        }
        if self.channels.contains(&0) || self.reduction == 0 || self.embed_dim == 0 {
            return bad("channel widths, reduction and embed_dim must be positive".into());
        }
        if self.n_source == 0 || self.n_original == 0 {
            return bad("both heads need at least one class".into());
        }
        if self.side == 0 || self.pool_grid == 0 || !self.final_side().is_multiple_of(self.pool_grid) {
            return bad(format!(
                "side {} gives a {}x{} final map, not divisible into a {}x{} pool grid",
                self.side,
                self.final_side(),
                self.final_side(),
                self.pool_grid,
                self.pool_grid
            ));
        }
        Ok(())
    }

    pub fn gate_hidden(&self, channels: usize) -> usize {
        (channels / self.reduction).max(1)
    }

    pub fn last_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    /// Spatial side of the last block's output (each block maps `s` to `ceil(s / 2)`).
    pub fn final_side(&self) -> usize {
        self.channels.iter().fold(self.side, |s, _| s.div_ceil(2))
    }

    /// Width of the pooled features fed to the projection.
    pub fn pooled_width(&self) -> usize {
        self.last_channels() * self.pool_grid * self.pool_grid
    }
}

/// Weights of one conditional squeeze-and-excitation gate.
#[derive(Clone, Debug, PartialEq)]
pub struct CseBlockParams<T> {
    /// `[channels, hidden]`
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    /// `[hidden + domain_code_width, channels]`
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlockParams<T> {
    /// `[out, in, 3, 3]`
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub gate: CseBlockParams<T>,
}

/// All learnable weights: backbone, gates, projection, and both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub blocks: Vec<ConvBlockParams<T>>,
    /// `[last_channels, M]`
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    /// Benchmark head α: `[M, n_source]`.
    pub bench_w: Tensor<T>,
    /// Benchmark head β.
    pub bench_b: Tensor<T>,
    /// Original-domain head ζ: `[M, n_original]`.
    pub orig_w: Tensor<T>,
    /// Original-domain head η.
    pub orig_b: Tensor<T>,
}

/// Which part of the network a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    BenchmarkHead,
    OriginalHead,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub is_bias: bool,
    pub group: ParamGroup,
}

/// Shapes of every parameter tensor, in checkpoint order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamInfo> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, is_bias: bool, group| {
        out.push(ParamInfo {
            name,
            shape,
            is_bias,
            group,
        })
    };
    let mut in_ch = 1;
    for (i, &c) in cfg.channels.iter().enumerate() {
        let h = cfg.gate_hidden(c);
        let bb = ParamGroup::Backbone;
        push(format!("block{i}.kernel"), vec![c, in_ch, 3, 3], false, bb);
        push(format!("block{i}.bias"), vec![c], true, bb);
        push(format!("block{i}.gate.fc1_w"), vec![c, h], false, bb);
        push(format!("block{i}.gate.fc1_b"), vec![h], true, bb);
        push(format!("block{i}.gate.fc2_w"), vec![h + cfg.domain_code_width, c], false, bb);
        push(format!("block{i}.gate.fc2_b"), vec![c], true, bb);
        in_ch = c;
    }
    let m = cfg.embed_dim;
    push("proj_w".into(), vec![in_ch * cfg.pool_grid * cfg.pool_grid, m], false, ParamGroup::Backbone);
    push("proj_b".into(), vec![m], true, ParamGroup::Backbone);
    push("bench_w".into(), vec![m, cfg.n_source], false, ParamGroup::BenchmarkHead);
    push("bench_b".into(), vec![cfg.n_source], true, ParamGroup::BenchmarkHead);
    push("orig_w".into(), vec![m, cfg.n_original], false, ParamGroup::OriginalHead);
    push("orig_b".into(), vec![cfg.n_original], true, ParamGroup::OriginalHead);
    out
}

fn normal_tensor<T: Real, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches")
}

impl<T: Real> ModelParams<T> {
    /// All-zero weights.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = param_layout(&config)
            .iter()
            .map(|p| Tensor::zeros(&p.shape))
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Fan-in scaled Gaussian weights and zero biases. Layers followed by a
    /// relu use `sqrt(2 / fan_in)`, the rest `sqrt(1 / fan_in)`.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let tensors = param_layout(&config)
            .iter()
            .map(|p| {
                if p.is_bias {
                    return Tensor::zeros(&p.shape);
                }
                let fan_in: usize = if p.shape.len() == 4 {
                    p.shape[1..].iter().product()
                } else {
                    p.shape[0]
                };
                let gain = if p.shape.len() == 4 || p.name.ends_with("fc1_w") { 2.0 } else { 1.0 };
                let mut t = normal_tensor(&p.shape, (gain / fan_in as f64).sqrt(), rng);
                if p.name.ends_with("fc2_w") {
                    // Domain-code rows start at zero so the gate ignores the
                    // modality until training gives it a reason not to.
                    let c = p.shape[1];
                    let first = (p.shape[0] - config.domain_code_width) * c;
                    t.data_mut()[first..].iter_mut().for_each(|v| *v = T::zero());
                }
                t
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Rebuilds parameters from tensors in [`param_layout`] order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if tensors.len() != layout.len() {
            return Err(Error::contract(
                "model params",
                format!("expected {} tensors, got {}", layout.len(), tensors.len()),
            ));
        }
        for (t, info) in tensors.iter().zip(&layout) {
            if t.shape() != info.shape.as_slice() {
                return Err(Error::contract(
                    "model params",
                    format!("{}: expected {:?}, got {:?}", info.name, info.shape, t.shape()),
                ));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let blocks = (0..config.channels.len())
            .map(|_| ConvBlockParams {
                kernel: next(),
                bias: next(),
                gate: CseBlockParams {
                    fc1_w: next(),
                    fc1_b: next(),
                    fc2_w: next(),
                    fc2_b: next(),
                },
            })
            .collect();
        Ok(ModelParams {
            blocks,
            proj_w: next(),
            proj_b: next(),
            bench_w: next(),
            bench_b: next(),
            orig_w: next(),
            orig_b: next(),
            config,
        })
    }

    /// References to every tensor in [`param_layout`] order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([
                &b.kernel,
                &b.bias,
                &b.gate.fc1_w,
                &b.gate.fc1_b,
                &b.gate.fc2_w,
                &b.gate.fc2_b,
            ]);
        }
        out.extend([
            &self.proj_w,
            &self.proj_b,
            &self.bench_w,
            &self.bench_b,
            &self.orig_w,
            &self.orig_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.kernel);
            out.push(&mut b.bias);
            out.push(&mut b.gate.fc1_w);
            out.push(&mut b.gate.fc1_b);
            out.push(&mut b.gate.fc2_w);
            out.push(&mut b.gate.fc2_b);
        }
        out.push(&mut self.proj_w);
        out.push(&mut self.proj_b);
        out.push(&mut self.bench_w);
        out.push(&mut self.bench_b);
        out.push(&mut self.orig_w);
        out.push(&mut self.orig_b);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let tensors = self.tensors().into_iter().map(|t| t.cast()).collect();
        ModelParams::from_tensors(self.config.clone(), tensors).expect("same layout")
    }

    /// Replaces the benchmark head with a freshly initialized one of width
    /// `n_source`.
    pub fn with_fresh_benchmark_head<R: Rng>(mut self, n_source: usize, rng: &mut R) -> Result<Self> {
        if n_source == 0 {
            return Err(Error::contract("benchmark head", "needs at least one class"));
        }
        let m = self.config.embed_dim;
        self.config.n_source = n_source;
        self.bench_w = normal_tensor(&[m, n_source], (1.0 / m as f64).sqrt(), rng);
        self.bench_b = Tensor::zeros(&[n_source]);
        Ok(self)
    }
}
