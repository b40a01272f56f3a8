use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::trainer::make_batch;
use crate::datagen::{is_held_out, Sample};
use crate::error::{Error, Result};
use crate::model::{Modality, ModelParams};
use crate::numerics::{argmax, AdamConfig, OptimizerState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 10,
            batch_size: 40,
            adam: AdamConfig::paper().with_lr(3e-2, 3e-3),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub train_count: usize,
    pub eval_count: usize,
    pub train_accuracy: f64,
    /// Top-1 accuracy on the held-out fifth.
    pub accuracy: f64,
}

/// Frozen embeddings `[n, M]` of `samples`, each with its own modality bit.
pub fn extract_features(params: &ModelParams<f32>, samples: &[&Sample]) -> Result<Tensor<f32>> {
    let side = params.config.side;
    let m = params.config.embed_dim;
    if samples.is_empty() {
        return Err(Error::contract("extract_features", "no samples"));
    }
    let mut data = Vec::with_capacity(samples.len() * m);
    for chunk in samples.chunks(128) {
        let b = make_batch::<ChaCha8Rng>(chunk, vec![0; chunk.len()], side, None)?;
        data.extend_from_slice(params.embed_batch(&b.images, &b.domains)?.data());
    }
    Tensor::new(&[samples.len(), m], data)
}

type Labelled<'a> = Vec<(&'a Sample, usize)>;

fn split_original<'a>(samples: &'a [Sample], classes: &[u32]) -> Result<(Labelled<'a>, Labelled<'a>)> {
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for s in samples {
        if s.modality != Modality::Photo {
            continue;
        }
        let label = classes.iter().position(|&c| c == s.class_id).ok_or_else(|| {
            Error::contract("probe", format!("class {} is not an original class", s.class_id))
        })?;
        if is_held_out(s.sample_id) {
            eval.push((s, label));
        } else {
            train.push((s, label));
        }
    }
    if train.is_empty() || eval.is_empty() {
        return Err(Error::contract("probe", "original split needs both training and held-out photos"));
    }
    Ok((train, eval))
}

fn top1(features: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(b.clone());
    let logits = tape.linear(x, wv, bv)?;
    let l = tape.value(logits);
    let hits = labels.iter().enumerate().filter(|(i, &y)| argmax(l.row(*i)) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Trains a fresh linear classifier on frozen photo embeddings of the
/// original classes (four fifths by sample id) and reports top-1 accuracy on
/// the remaining fifth. Sketches are ignored.
pub fn linear_probe(params: &ModelParams<f32>, samples: &[Sample], classes: &[u32], cfg: &ProbeConfig) -> Result<ProbeReport> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::contract("probe", "epochs and batch size must be positive"));
    }
    let (train, eval) = split_original(samples, classes)?;
    let m = params.config.embed_dim;
    let k = classes.len();
    let train_x = extract_features(params, &train.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let eval_x = extract_features(params, &eval.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let train_y: Vec<usize> = train.iter().map(|p| p.1).collect();
    let eval_y: Vec<usize> = eval.iter().map(|p| p.1).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, (1.0 / m as f64).sqrt()).expect("positive std");
    let mut w = Tensor::new(&[m, k], (0..m * k).map(|_| init.sample(&mut rng) as f32).collect())?;
    let mut b = Tensor::<f32>::zeros(&[k]);
    let steps = train.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut opt = OptimizerState::new(cfg.adam.clone(), &[&[m, k], &[k]], steps)?;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<f32> = chunk.iter().flat_map(|&i| train_x.row(i).to_vec()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(&[chunk.len(), m], rows)?);
            let wv = tape.param(w.clone());
            let bv = tape.param(b.clone());
            let logits = tape.linear(x, wv, bv)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            tape.backward(loss)?;
            let gw = tape.grad(wv).expect("param").clone();
            let gb = tape.grad(bv).expect("param").clone();
            opt.step(&mut [&mut w, &mut b], &[&gw, &gb], &[true, cfg.adam.decay_biases])?;
        }
    }

    Ok(ProbeReport {
        train_count: train.len(),
        eval_count: eval.len(),
        train_accuracy: top1(&train_x, &w, &b, &train_y)?,
        accuracy: top1(&eval_x, &w, &b, &eval_y)?,
    })
}

/// Top-1 accuracy of the model's own original head on the held-out fifth of
/// the original photos.
pub fn evaluate_original_head(params: &ModelParams<f32>, samples: &[Sample], classes: &[u32]) -> Result<f64> {
    let (_, eval) = split_original(samples, classes)?;
    let x = extract_features(params, &eval.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let (_, logits) = params.head_logits(&x)?;
    let hits = eval.iter().enumerate().filter(|(i, p)| argmax(logits.row(*i)) == p.1).count();
    Ok(hits as f64 / eval.len() as f64)
}
