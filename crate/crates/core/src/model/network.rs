use super::params::{CseBlockParams, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Real, Tape, Tensor, Var};

/// Input modality. The network sees it as one bit: photo 0, sketch 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Photo,
    Sketch,
}

impl Modality {
    pub fn bit(self) -> u8 {
        match self {
            Modality::Photo => 0,
            Modality::Sketch => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Modality::Photo),
            1 => Some(Modality::Sketch),
            _ => None,
        }
    }
}

/// Tape handles for one gate.
#[derive(Clone, Copy, Debug)]
pub struct CseVars {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Tape handles for every parameter, mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub blocks: Vec<(Var, Var, CseVars)>,
    pub proj_w: Var,
    pub proj_b: Var,
    pub bench_w: Var,
    pub bench_b: Var,
    pub orig_w: Var,
    pub orig_b: Var,
}

impl ParamVars {
    /// Handles in [`super::param_layout`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (k, b, g) in &self.blocks {
            out.extend([*k, *b, g.fc1_w, g.fc1_b, g.fc2_w, g.fc2_b]);
        }
        out.extend([
            self.proj_w,
            self.proj_b,
            self.bench_w,
            self.bench_b,
            self.orig_w,
            self.orig_b,
        ]);
        out
    }

    pub fn from_slice(vars: &[Var], n_blocks: usize) -> Self {
        assert_eq!(vars.len(), n_blocks * 6 + 6);
        let blocks = (0..n_blocks)
            .map(|i| {
                let v = &vars[i * 6..i * 6 + 6];
                (
                    v[0],
                    v[1],
                    CseVars {
                        fc1_w: v[2],
                        fc1_b: v[3],
                        fc2_w: v[4],
                        fc2_b: v[5],
                    },
                )
            })
            .collect();
        let t = &vars[n_blocks * 6..];
        ParamVars {
            blocks,
            proj_w: t[0],
            proj_b: t[1],
            bench_w: t[2],
            bench_b: t[3],
            orig_w: t[4],
            orig_b: t[5],
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// Puts every tensor on `tape`, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        ParamVars::from_slice(&vars, self.blocks.len())
    }
}

/// `[n, width]` tensor holding each sample's modality bit repeated `width` times.
pub fn domain_code<T: Real>(domains: &[Modality], width: usize) -> Result<Tensor<T>> {
    let data = domains
        .iter()
        .flat_map(|d| std::iter::repeat_n(T::of(d.bit() as f64), width))
        .collect();
    Tensor::new(&[domains.len(), width], data)
}

/// Conditional SE gate on the tape: squeeze by global average pooling,
/// `relu(fc1)`, append the domain code, `sigmoid(fc2)`, rescale channels.
pub fn cse_gate<T: Real>(tape: &mut Tape<T>, x: Var, gate: &CseVars, domain: Option<Var>) -> Result<Var> {
    let squeezed = tape.global_avg_pool(x)?;
    let h = tape.linear(squeezed, gate.fc1_w, gate.fc1_b)?;
    let h = tape.relu(h)?;
    let h = match domain {
        Some(code) => tape.concat_cols(h, code)?,
        None => h,
    };
    let logits = tape.linear(h, gate.fc2_w, gate.fc2_b)?;
    let g = tape.sigmoid(logits)?;
    tape.channel_scale(x, g)
}

/// Runs the unified network on a batch `images: [n, 1, side, side]` and
/// returns the embeddings `[n, M]`.
pub fn forward_embed<T: Real>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    vars: &ParamVars,
    images: Var,
    domains: &[Modality],
) -> Result<Var> {
    let cfg = &params.config;
    let shape = tape.shape(images).to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.side || shape[3] != cfg.side {
        return Err(Error::contract(
            "embed",
            format!("expected [n, 1, {s}, {s}] images, got {shape:?}", s = cfg.side),
        ));
    }
    if shape[0] != domains.len() {
        return Err(Error::contract(
            "embed",
            format!("{} images but {} domain bits", shape[0], domains.len()),
        ));
    }
    let code = if cfg.domain_code_width > 0 {
        Some(tape.constant(domain_code(domains, cfg.domain_code_width)?))
    } else {
        None
    };
    let mut h = images;
    for (kernel, bias, gate) in &vars.blocks {
        h = tape.conv2d(h, *kernel, *bias, 2, 1)?;
        h = tape.relu(h)?;
        h = cse_gate(tape, h, gate, code)?;
    }
    let pooled = tape.grid_avg_pool(h, cfg.pool_grid)?;
    tape.linear(pooled, vars.proj_w, vars.proj_b)
}

pub fn benchmark_logits<T: Real>(tape: &mut Tape<T>, vars: &ParamVars, x: Var) -> Result<Var> {
    tape.linear(x, vars.bench_w, vars.bench_b)
}

pub fn original_logits<T: Real>(tape: &mut Tape<T>, vars: &ParamVars, x: Var) -> Result<Var> {
    tape.linear(x, vars.orig_w, vars.orig_b)
}

/// Forward-only evaluation.
impl<T: Real> ModelParams<T> {
    /// Embeddings `[n, M]` for a batch of images `[n, 1, side, side]`.
    pub fn embed_batch(&self, images: &Tensor<T>, domains: &[Modality]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let img = tape.constant(images.clone());
        let x = forward_embed(&mut tape, self, &vars, img, domains)?;
        Ok(tape.value(x).clone())
    }

    /// Embedding of a single `side × side` image (any shape with that many pixels).
    pub fn embed(&self, image: &Tensor<T>, domain: Modality) -> Result<Tensor<T>> {
        let s = self.config.side;
        if image.len() != s * s {
            return Err(Error::contract(
                "embed",
                format!("expected {} pixels, got {}", s * s, image.len()),
            ));
        }
        let batch = image.clone().reshape(&[1, 1, s, s])?;
        let out = self.embed_batch(&batch, &[domain])?;
        out.reshape(&[self.config.embed_dim])
    }

    /// Logits of both heads `([n, n_source], [n, n_original])` for embeddings `[n, M]`.
    pub fn head_logits(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let b = benchmark_logits(&mut tape, &vars, xv)?;
        let o = original_logits(&mut tape, &vars, xv)?;
        Ok((tape.value(b).clone(), tape.value(o).clone()))
    }

    /// ŷ = softmax(αᵀx + β) for one embedding.
    pub fn classify_benchmark(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let row = x.clone().reshape(&[1, x.len()])?;
        let (b, _) = self.head_logits(&row)?;
        Ok(softmax(b.data()))
    }

    /// ỹ = softmax(ζᵀx + η) for one embedding.
    pub fn classify_original(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let row = x.clone().reshape(&[1, x.len()])?;
        let (_, o) = self.head_logits(&row)?;
        Ok(softmax(o.data()))
    }
}

/// Applies one gate to a single `[C, H, W]` block input.
pub fn cse_forward<T: Real>(input: &Tensor<T>, domain: Modality, gate: &CseBlockParams<T>) -> Result<Tensor<T>> {
    let shape = input.shape().to_vec();
    if shape.len() != 3 || gate.fc1_w.shape()[0] != shape[0] {
        return Err(Error::contract(
            "cse_forward",
            format!("input {shape:?} vs gate for {} channels", gate.fc1_w.shape()[0]),
        ));
    }
    let hidden = gate.fc1_w.shape()[1];
    let width = gate.fc2_w.shape()[0] - hidden;
    let mut tape = Tape::new();
    let x = tape.constant(input.clone().reshape(&[1, shape[0], shape[1], shape[2]])?);
    let vars = CseVars {
        fc1_w: tape.constant(gate.fc1_w.clone()),
        fc1_b: tape.constant(gate.fc1_b.clone()),
        fc2_w: tape.constant(gate.fc2_w.clone()),
        fc2_b: tape.constant(gate.fc2_b.clone()),
    };
    let code = if width > 0 {
        Some(tape.constant(domain_code(&[domain], width)?))
    } else {
        None
    };
    let out = cse_gate(&mut tape, x, &vars, code)?;
    tape.value(out).clone().reshape(&shape)
}
