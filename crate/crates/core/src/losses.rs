//! Benchmark cross-entropy, teacher distillation, and the semantic-aware
//! teacher blend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{benchmark_logits, forward_embed, original_logits, Modality, ModelParams, ParamVars};
use crate::numerics::{softmax, Real, Tape, Tensor, Var};
use crate::semantics::SimilarityMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_sake: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Distill on sketches as well as photos.
    pub apply_sake_to_sketches: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_sake: 1.0,
            lambda1: 1.0,
            lambda2: 0.3,
            apply_sake_to_sketches: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.lambda_sake, self.lambda1, self.lambda2];
        if vals.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::contract("loss config", format!("lambdas must be finite and >= 0: {vals:?}")))
        }
    }
}

/// Which distillation target the second head is trained towards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Benchmark cross-entropy only; the teacher is never consulted.
    Benchmark,
    /// Soft cross-entropy against `softmax(t)`.
    Teacher,
    /// Soft cross-entropy against `softmax(λ₁ t + λ₂ a_y)`.
    Sake,
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<T> {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(&[1, logits.len()], logits.to_vec())?);
    let loss = tape.cross_entropy(l, &[label])?;
    Ok(tape.value(loss).item())
}

/// `−Σ_m q_m log softmax(logits)_m`.
pub fn soft_cross_entropy<T: Real>(logits: &[T], target: &[T]) -> Result<T> {
    let sum: T = target.iter().copied().sum();
    if target.iter().any(|&q| q < T::zero()) || (sum - T::one()).abs() > T::of(1e-9) {
        return Err(Error::contract(
            "soft_cross_entropy",
            format!("target is not a probability vector (sum {sum})"),
        ));
    }
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(&[1, logits.len()], logits.to_vec())?);
    let q = Tensor::new(&[1, target.len()], target.to_vec())?;
    let loss = tape.soft_cross_entropy(l, &q, &[T::one()])?;
    Ok(tape.value(loss).item())
}

/// `q = softmax(λ₁ t + λ₂ a_row)`.
pub fn blend_teacher_signal<T: Real>(teacher_logits: &[T], a_row: &[f64], lambda1: f64, lambda2: f64) -> Result<Vec<T>> {
    if teacher_logits.len() != a_row.len() {
        return Err(Error::contract(
            "blend_teacher_signal",
            format!("{} teacher logits vs {} similarities", teacher_logits.len(), a_row.len()),
        ));
    }
    let (l1, l2) = (T::of(lambda1), T::of(lambda2));
    let z: Vec<T> = teacher_logits
        .iter()
        .zip(a_row)
        .map(|(&t, &a)| l1 * t + l2 * T::of(a))
        .collect();
    Ok(softmax(&z))
}

/// Teacher logits for one sample with the two distributions derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSignal<T> {
    pub logits: Vec<T>,
    /// `softmax(t)`
    pub plain: Vec<T>,
    /// The blended target.
    pub blended: Vec<T>,
}

impl<T: Real> TeacherSignal<T> {
    pub fn new(logits: Vec<T>, a_row: &[f64], lambda1: f64, lambda2: f64) -> Result<Self> {
        let blended = blend_teacher_signal(&logits, a_row, lambda1, lambda2)?;
        Ok(TeacherSignal {
            plain: softmax(&logits),
            logits,
            blended,
        })
    }
}

/// A training batch. `labels` index the benchmark head (position in the
/// source class list).
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[n, 1, side, side]`
    pub images: Tensor<T>,
    pub domains: Vec<Modality>,
    pub labels: Vec<usize>,
}

/// Scalar loss values of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub benchmark: f64,
    /// Distillation term before weighting by λ_SAKE; zero for the benchmark objective.
    pub sake: f64,
}

/// Tape nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub benchmark: Var,
    pub sake: Option<Var>,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, tape: &Tape<T>) -> LossBreakdown {
        LossBreakdown {
            total: tape.value(self.total).item().as_f64(),
            benchmark: tape.value(self.benchmark).item().as_f64(),
            sake: self.sake.map_or(0.0, |v| tape.value(v).item().as_f64()),
        }
    }
}

/// Distillation targets `[n, n_original]` for a batch, from the frozen
/// teacher's online predictions on the same inputs.
pub fn teacher_targets<T: Real>(
    teacher: &ModelParams<T>,
    batch: &Batch<T>,
    similarity: &SimilarityMatrix,
    objective: Objective,
    cfg: &LossConfig,
) -> Result<Tensor<T>> {
    let x = teacher.embed_batch(&batch.images, &batch.domains)?;
    let (_, t) = teacher.head_logits(&x)?;
    let n_orig = t.shape()[1];
    if similarity.cols() != n_orig {
        return Err(Error::contract(
            "teacher_targets",
            format!("similarity has {} columns, teacher has {n_orig} classes", similarity.cols()),
        ));
    }
    let mut data = Vec::with_capacity(t.len());
    for (i, &y) in batch.labels.iter().enumerate() {
        let row = t.row(i);
        match objective {
            Objective::Teacher => data.extend(softmax(row)),
            Objective::Sake => {
                if y >= similarity.rows() {
                    return Err(Error::contract("teacher_targets", format!("label {y} has no similarity row")));
                }
                data.extend(blend_teacher_signal(row, similarity.row_at(y), cfg.lambda1, cfg.lambda2)?)
            }
            Objective::Benchmark => {
                return Err(Error::contract("teacher_targets", "benchmark objective has no teacher"));
            }
        }
    }
    Tensor::new(t.shape(), data)
}

/// Records `L_benchmark + λ_SAKE · L_distill` for `batch` on `tape`.
///
/// The student's parameters must already be registered as `vars`. For the
/// benchmark objective `teacher` is ignored and the loss is `L_benchmark`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    student: &ModelParams<T>,
    vars: &ParamVars,
    teacher: Option<&ModelParams<T>>,
    similarity: &SimilarityMatrix,
    batch: &Batch<T>,
    objective: Objective,
    cfg: &LossConfig,
) -> Result<LossVars> {
    cfg.validate()?;
    let n = batch.labels.len();
    if batch.domains.len() != n || batch.images.shape().first() != Some(&n) {
        return Err(Error::contract("total_loss", "batch fields disagree in length"));
    }
    let images = tape.constant(batch.images.clone());
    let x = forward_embed(tape, student, vars, images, &batch.domains)?;
    let logits = benchmark_logits(tape, vars, x)?;
    let benchmark = tape.cross_entropy(logits, &batch.labels)?;
    if objective == Objective::Benchmark {
        return Ok(LossVars {
            total: benchmark,
            benchmark,
            sake: None,
        });
    }
    let teacher = teacher.ok_or_else(|| Error::contract("total_loss", "distillation needs a teacher"))?;
    let targets = teacher_targets(teacher, batch, similarity, objective, cfg)?;
    let weights: Vec<T> = batch
        .domains
        .iter()
        .map(|d| {
            if *d == Modality::Photo || cfg.apply_sake_to_sketches {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    let orig = original_logits(tape, vars, x)?;
    let sake = tape.soft_cross_entropy(orig, &targets, &weights)?;
    let weighted = tape.scale(sake, T::of(cfg.lambda_sake))?;
    let total = tape.add(benchmark, weighted)?;
    Ok(LossVars {
        total,
        benchmark,
        sake: Some(sake),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_fixtures() {
        assert!((cross_entropy(&[0.0f64, 0.0], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let tiny = cross_entropy(&[10.0f64, -10.0], 0).unwrap();
        assert!((tiny - 2.061153620314381e-9).abs() < 1e-20, "{tiny}");
        let v = cross_entropy(&[2.0f64, 0.0], 1).unwrap();
        assert!((v - 2.1269280110429727).abs() < 1e-14, "{v}");
        assert!(cross_entropy(&[0.0f64, 0.0], 2).is_err());
    }

    #[test]
    fn soft_cross_entropy_fixtures() {
        let v = soft_cross_entropy(&[0.0f64, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let v = soft_cross_entropy(&[3.0f64.ln(), 0.0], &[0.5, 0.5]).unwrap();
        let expect = -0.5 * 0.75f64.ln() - 0.5 * 0.25f64.ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.8369882167858358).abs() < 1e-12, "{v}");
        assert!(soft_cross_entropy(&[0.0f64, 0.0], &[0.7, 0.7]).is_err());
        assert!(soft_cross_entropy(&[0.0f64, 0.0], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn one_hot_soft_target_reduces_to_hard_label() {
        let logits = [0.3f64, -1.7, 2.2, 0.0];
        for y in 0..4 {
            let mut q = [0.0; 4];
            q[y] = 1.0;
            assert_eq!(
                soft_cross_entropy(&logits, &q).unwrap(),
                cross_entropy(&logits, y).unwrap()
            );
        }
    }

    #[test]
    fn blend_fixtures() {
        let t = [1.5f64, -0.2, 0.7];
        let a = [1.0, 1.0 / 3.0, 1.0 / 3.0];
        assert_eq!(blend_teacher_signal(&t, &a, 1.0, 0.0).unwrap(), softmax(&t));
        let uniform = blend_teacher_signal(&t, &a, 0.0, 0.0).unwrap();
        assert!(uniform.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let q = blend_teacher_signal(&t, &a, 0.0, 1.0).unwrap();
        // e^(2/3) / (e^(2/3) + 2)
        let e = (2.0f64 / 3.0).exp();
        assert!((q[0] - e / (e + 2.0)).abs() < 1e-15);
        assert!((q[0] - 0.49338).abs() < 5e-6 && (q[1] - 0.25331).abs() < 5e-6);
        assert_eq!(q[1], q[2]);
        assert!(blend_teacher_signal(&t, &a[..2], 1.0, 0.3).is_err());
    }

    #[test]
    fn teacher_signal_bundles_both_targets() {
        let s = TeacherSignal::new(vec![0.2f64, 1.0], &[1.0, 0.5], 1.0, 0.3).unwrap();
        assert_eq!(s.plain, softmax(&[0.2, 1.0]));
        assert!((s.blended.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(s.plain, s.blended);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let cfg = LossConfig {
            lambda2: -0.1,
            ..LossConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
