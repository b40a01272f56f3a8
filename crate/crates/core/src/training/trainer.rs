use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{augment, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::losses::{total_loss, Batch, LossBreakdown, LossConfig, Objective};
use crate::model::{forward_embed, original_logits, param_layout, ModelConfig, ModelParams};
use crate::numerics::{argmax, AdamConfig, OptimizerState, Tape, Tensor};
use crate::semantics::SimilarityMatrix;

/// A teacher below this training accuracy after its full budget is reported
/// as diverged.
pub const PRETRAIN_MIN_ACCURACY: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// Teacher pretraining at desk scale.
    pub fn pretrain() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 40,
            adam: AdamConfig::paper().with_lr(3e-3, 3e-3),
            loss: LossConfig::default(),
            augment: AugmentConfig::none(),
            seed: 0,
        }
    }

    /// Fine-tuning on the source set at desk scale.
    pub fn finetune() -> Self {
        TrainConfig {
            adam: AdamConfig::paper().with_lr(2e-2, 2e-2),
            augment: AugmentConfig::default(),
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("train config", "epochs and batch size must be positive"));
        }
        self.adam.validate()?;
        self.loss.validate()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::finetune()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Mean losses over one epoch's steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub final_lr: f64,
}

/// Everything about a run that is a function of its inputs. Wall-clock time
/// lives in [`TrainOutcome`] so reports stay byte-for-byte reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub objective: Objective,
    pub seed: u64,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub steps: usize,
    /// Loss of the very first batch, before any update.
    pub initial_loss: LossBreakdown,
    pub epochs: Vec<EpochRecord>,
    /// Top-1 accuracy of the trained head on the (unaugmented) training samples.
    pub final_train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub report: TrainReport,
    pub wall_clock_seconds: f64,
}

/// Stacks samples into a batch, optionally augmenting each image.
pub fn make_batch<R: Rng>(
    samples: &[&Sample],
    labels: Vec<usize>,
    side: usize,
    aug: Option<(&AugmentConfig, &mut R)>,
) -> Result<Batch<f32>> {
    let mut data = Vec::with_capacity(samples.len() * side * side);
    match aug {
        Some((cfg, rng)) => {
            for s in samples {
                data.extend(augment(&s.pixels, side, cfg, rng));
            }
        }
        None => {
            for s in samples {
                data.extend_from_slice(&s.pixels);
            }
        }
    }
    Ok(Batch {
        images: Tensor::new(&[samples.len(), 1, side, side], data)?,
        domains: samples.iter().map(|s| s.modality).collect(),
        labels,
    })
}

fn label_index(classes: &[u32]) -> BTreeMap<u32, usize> {
    classes.iter().enumerate().map(|(i, &c)| (c, i)).collect()
}

fn labels_of(samples: &[&Sample], index: &BTreeMap<u32, usize>) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            index.get(&s.class_id).copied().ok_or_else(|| {
                Error::contract("training", format!("sample of class {} is outside the label set", s.class_id))
            })
        })
        .collect()
}

fn divergence(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            epoch,
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

fn side_of(samples: &[Sample]) -> Result<usize> {
    let n = samples
        .first()
        .ok_or_else(|| Error::contract("training", "empty training split"))?
        .pixels
        .len();
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || samples.iter().any(|s| s.pixels.len() != n) {
        return Err(Error::contract("training", "images are not all the same square size"));
    }
    Ok(side)
}

/// Optimizer plus per-parameter decay flags for a model.
struct Optimizer {
    state: OptimizerState<f32>,
    decays: Vec<bool>,
}

impl Optimizer {
    fn new(params: &ModelParams<f32>, cfg: &AdamConfig, total_steps: usize) -> Result<Self> {
        let layout = param_layout(&params.config);
        let shapes: Vec<&[usize]> = layout.iter().map(|p| p.shape.as_slice()).collect();
        Ok(Optimizer {
            state: OptimizerState::new(cfg.clone(), &shapes, total_steps)?,
            decays: layout.iter().map(|p| !p.is_bias || cfg.decay_biases).collect(),
        })
    }

    fn step(&mut self, params: &mut ModelParams<f32>, grads: &[Tensor<f32>]) -> Result<()> {
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        let mut tensors = params.tensors_mut();
        self.state.step(&mut tensors, &grad_refs, &self.decays)
    }
}

#[derive(Default)]
struct EpochSums {
    total: f64,
    benchmark: f64,
    sake: f64,
    steps: usize,
}

impl EpochSums {
    fn add(&mut self, b: &LossBreakdown) {
        self.total += b.total;
        self.benchmark += b.benchmark;
        self.sake += b.sake;
        self.steps += 1;
    }

    fn mean(&self) -> LossBreakdown {
        let n = self.steps.max(1) as f64;
        LossBreakdown {
            total: self.total / n,
            benchmark: self.benchmark / n,
            sake: self.sake / n,
        }
    }
}

/// Predicted class index of each sample under one of the heads.
fn predict(params: &ModelParams<f32>, samples: &[&Sample], side: usize, original_head: bool) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(128) {
        let b = make_batch::<ChaCha8Rng>(chunk, vec![0; chunk.len()], side, None)?;
        let x = params.embed_batch(&b.images, &b.domains)?;
        let (bench, orig) = params.head_logits(&x)?;
        let logits = if original_head { orig } else { bench };
        out.extend((0..chunk.len()).map(|i| argmax(logits.row(i))));
    }
    Ok(out)
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Trains a teacher from scratch on original-domain photos with cross-entropy
/// on the original head. `classes` fixes the label order of that head.
pub fn pretrain_teacher(
    samples: &[Sample],
    classes: &[u32],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let side = side_of(samples)?;
    if model.n_original != classes.len() || model.side != side {
        return Err(Error::contract(
            "pretrain",
            format!(
                "model expects {} classes at side {}, data has {} at side {side}",
                model.n_original,
                model.side,
                classes.len()
            ),
        ));
    }
    let index = label_index(classes);
    let refs: Vec<&Sample> = samples.iter().collect();
    let labels = labels_of(&refs, &index)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::<f32>::init(model.clone(), &mut rng)?;
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = Optimizer::new(&params, &cfg.adam, total_steps)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = EpochSums::default();
        for (k, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + k;
            let batch_samples: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = make_batch(&batch_samples, batch_labels, side, Some((&cfg.augment, &mut rng)))?;

            let run = || -> Result<(LossBreakdown, Vec<Tensor<f32>>)> {
                let mut tape = Tape::new();
                let vars = params.register(&mut tape, true);
                let images = tape.constant(batch.images.clone());
                let x = forward_embed(&mut tape, &params, &vars, images, &batch.domains)?;
                let logits = original_logits(&mut tape, &vars, x)?;
                let loss = tape.cross_entropy(logits, &batch.labels)?;
                tape.backward(loss)?;
                let v = tape.value(loss).item() as f64;
                let grads = vars.all().iter().map(|&p| tape.grad(p).expect("trainable").clone()).collect();
                Ok((
                    LossBreakdown {
                        total: v,
                        benchmark: v,
                        sake: 0.0,
                    },
                    grads,
                ))
            };
            let (breakdown, grads) = run().map_err(|e| divergence(epoch, step, e))?;
            initial_loss.get_or_insert(breakdown);
            sums.add(&breakdown);
            opt.step(&mut params, &grads)?;
            if !params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: "parameters became non-finite".into(),
                });
            }
        }
        epochs.push(EpochRecord {
            epoch,
            loss: sums.mean(),
            final_lr: opt.state.current_lr(),
        });
    }

    let pred = predict(&params, &refs, side, true)?;
    let final_train_accuracy = accuracy(&pred, &labels);
    if final_train_accuracy < PRETRAIN_MIN_ACCURACY {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            step: total_steps,
            detail: format!(
                "teacher reached only {:.1}% training accuracy (< {:.0}%)",
                100.0 * final_train_accuracy,
                100.0 * PRETRAIN_MIN_ACCURACY
            ),
        });
    }
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            stage: Stage::Pretrain,
            objective: Objective::Benchmark,
            seed: cfg.seed,
            config: cfg.clone(),
            model: model.clone(),
            steps: total_steps,
            initial_loss: initial_loss.unwrap_or_default(),
            epochs,
            final_train_accuracy,
        },
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Fine-tunes a copy of `teacher` on the source set. The student keeps the
/// teacher's backbone and original head and gets a fresh benchmark head with
/// one output per row of `similarity`. The teacher is only read.
pub fn finetune_sake(
    samples: &[Sample],
    teacher: &ModelParams<f32>,
    similarity: &SimilarityMatrix,
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let side = side_of(samples)?;
    if teacher.config.side != side || teacher.config.n_original != similarity.cols() {
        return Err(Error::contract(
            "finetune",
            format!(
                "teacher (side {}, {} original classes) does not match data side {side} / similarity {}x{}",
                teacher.config.side,
                teacher.config.n_original,
                similarity.rows(),
                similarity.cols()
            ),
        ));
    }
    let classes = similarity.source_classes();
    let index = label_index(classes);
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); classes.len()];
    for s in samples {
        let i = *index.get(&s.class_id).ok_or_else(|| {
            Error::contract("finetune", format!("class {} has no similarity row", s.class_id))
        })?;
        by_class[i].push(s);
    }
    if let Some(i) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::contract("finetune", format!("source class {} has no samples", classes[i])));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = teacher.clone().with_fresh_benchmark_head(classes.len(), &mut rng)?;
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = Optimizer::new(&params, &cfg.adam, total_steps)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;

    for epoch in 0..cfg.epochs {
        let mut sums = EpochSums::default();
        for k in 0..steps_per_epoch {
            let step = epoch * steps_per_epoch + k;
            let mut picked = Vec::with_capacity(cfg.batch_size);
            let mut labels = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let c = rng.random_range(0..classes.len());
                let pool = &by_class[c];
                picked.push(pool[rng.random_range(0..pool.len())]);
                labels.push(c);
            }
            let batch = make_batch(&picked, labels, side, Some((&cfg.augment, &mut rng)))?;

            let run = || -> Result<(LossBreakdown, Vec<Tensor<f32>>)> {
                let mut tape = Tape::new();
                let vars = params.register(&mut tape, true);
                let loss = total_loss(&mut tape, &params, &vars, Some(teacher), similarity, &batch, objective, &cfg.loss)?;
                tape.backward(loss.total)?;
                let grads = vars.all().iter().map(|&p| tape.grad(p).expect("trainable").clone()).collect();
                Ok((loss.breakdown(&tape), grads))
            };
            let (breakdown, grads) = run().map_err(|e| divergence(epoch, step, e))?;
            initial_loss.get_or_insert(breakdown);
            sums.add(&breakdown);
            opt.step(&mut params, &grads)?;
            if !params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: "parameters became non-finite".into(),
                });
            }
        }
        epochs.push(EpochRecord {
            epoch,
            loss: sums.mean(),
            final_lr: opt.state.current_lr(),
        });
    }

    let final_train_accuracy = source_accuracy(&params, samples, classes)?;
    let model = params.config.clone();
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            stage: Stage::Finetune,
            objective,
            seed: cfg.seed,
            config: cfg.clone(),
            model,
            steps: total_steps,
            initial_loss: initial_loss.unwrap_or_default(),
            epochs,
            final_train_accuracy,
        },
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Benchmark-head top-1 accuracy over source samples.
pub fn source_accuracy(params: &ModelParams<f32>, samples: &[Sample], classes: &[u32]) -> Result<f64> {
    let side = side_of(samples)?;
    let index = label_index(classes);
    let refs: Vec<&Sample> = samples.iter().collect();
    let labels = labels_of(&refs, &index)?;
    Ok(accuracy(&predict(params, &refs, side, false)?, &labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, SampleCounts, SplitSpec};
    use crate::semantics::{ClassMap, Taxonomy};

    fn tiny_model(n_original: usize, n_source: usize) -> ModelConfig {
        ModelConfig {
            side: 16,
            channels: vec![4, 8],
            reduction: 2,
            embed_dim: 8,
            n_source,
            n_original,
            domain_code_width: 1,
            pool_grid: 2,
        }
    }

    fn tiny_data() -> crate::datagen::Dataset {
        let tax = Taxonomy::toy();
        let classes = ClassMap::toy(&tax);
        let spec = SplitSpec {
            original: vec![0, 10, 15],
            source: vec![3, 14],
            target: vec![4],
            counts: SampleCounts {
                original_photos: 12,
                source_photos: 8,
                source_sketches: 4,
                gallery_photos: 2,
                query_sketches: 2,
            },
            side: 16,
            seed: 2,
        };
        generate_dataset(&spec, &tax, &classes).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            ..TrainConfig::pretrain()
        }
    }

    #[test]
    fn single_class_teacher_is_trivially_perfect() {
        let d = tiny_data();
        let one: Vec<Sample> = d.original_train.iter().filter(|s| s.class_id == 0).cloned().collect();
        let out = pretrain_teacher(&one, &[0], &tiny_model(1, 2), &quick(1)).unwrap();
        assert_eq!(out.report.final_train_accuracy, 1.0);
    }

    #[test]
    fn rejects_mismatched_model() {
        let d = tiny_data();
        assert!(pretrain_teacher(&d.original_train, &[0, 10, 15], &tiny_model(4, 2), &quick(1)).is_err());
        assert!(pretrain_teacher(&[], &[0], &tiny_model(1, 2), &quick(1)).is_err());
    }

    #[test]
    fn hopeless_teacher_is_reported_as_divergence() {
        let d = tiny_data();
        let mut cfg = quick(1);
        cfg.adam = AdamConfig::paper().with_lr(1e-9, 1e-9);
        let err = pretrain_teacher(&d.original_train, &[0, 10, 15], &tiny_model(3, 2), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn finetune_is_deterministic_and_leaves_teacher_alone() {
        let d = tiny_data();
        let tax = Taxonomy::toy();
        let classes = ClassMap::toy(&tax);
        let sim = SimilarityMatrix::build(&tax, &classes, &[3, 14], &[0, 10, 15]).unwrap();
        let teacher = ModelParams::<f32>::init(tiny_model(3, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let before = teacher.clone();
        let a = finetune_sake(&d.source_train, &teacher, &sim, Objective::Sake, &quick(2)).unwrap();
        let b = finetune_sake(&d.source_train, &teacher, &sim, Objective::Sake, &quick(2)).unwrap();
        assert_eq!(teacher, before);
        assert_eq!(a.params, b.params);
        assert_eq!(a.report, b.report);
        // The student starts from the teacher, apart from the benchmark head.
        assert_eq!(a.report.epochs.len(), 2);
        assert!(a.report.initial_loss.sake > 0.0);
    }

    #[test]
    fn zero_lambda_sake_matches_plain_finetune() {
        let d = tiny_data();
        let tax = Taxonomy::toy();
        let classes = ClassMap::toy(&tax);
        let sim = SimilarityMatrix::build(&tax, &classes, &[3, 14], &[0, 10, 15]).unwrap();
        let teacher = ModelParams::<f32>::init(tiny_model(3, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let plain = finetune_sake(&d.source_train, &teacher, &sim, Objective::Benchmark, &quick(2)).unwrap();
        let mut cfg = quick(2);
        cfg.loss.lambda_sake = 0.0;
        let zero = finetune_sake(&d.source_train, &teacher, &sim, Objective::Sake, &cfg).unwrap();
        assert_eq!(plain.params, zero.params);
        assert_eq!(plain.report.initial_loss.benchmark, zero.report.initial_loss.benchmark);
        for (p, z) in plain.report.epochs.iter().zip(&zero.report.epochs) {
            assert_eq!(p.loss.benchmark, z.loss.benchmark);
        }
    }

    #[test]
    fn sake_without_similarity_equals_teacher_distillation() {
        let d = tiny_data();
        let tax = Taxonomy::toy();
        let classes = ClassMap::toy(&tax);
        let sim = SimilarityMatrix::build(&tax, &classes, &[3, 14], &[0, 10, 15]).unwrap();
        let teacher = ModelParams::<f32>::init(tiny_model(3, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut cfg = quick(2);
        cfg.loss.lambda2 = 0.0;
        let sake = finetune_sake(&d.source_train, &teacher, &sim, Objective::Sake, &cfg).unwrap();
        let distill = finetune_sake(&d.source_train, &teacher, &sim, Objective::Teacher, &cfg).unwrap();
        assert_eq!(sake.params, distill.params);
        assert_eq!(sake.report.epochs, distill.report.epochs);
    }
}
