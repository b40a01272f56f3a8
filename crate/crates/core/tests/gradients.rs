//! Finite-difference checks of every differentiable layer and of the full
//! model, in double precision.
//!
//! Every fixture is drawn with random nonzero biases so no relu sits exactly
//! on its kink. A draw is redrawn when some nonzero analytic gradient entry is
//! smaller than `MIN_GRADIENT`: at h = 1e-5 the difference quotient carries
//! about 1e-11 of absolute roundoff, so a relative comparison on such an entry
//! measures noise. The decision uses the analytic gradient only; entries that
//! are exactly zero stay in and must match a numeric zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sake_core::losses::{total_loss, Batch, LossConfig, Objective};
use sake_core::model::{cse_gate, CseVars, Modality, ModelConfig, ModelParams, ParamVars};
use sake_core::numerics::{gradient_check, GradCheck, Tensor};
use sake_core::semantics::{ClassMap, SimilarityMatrix, Taxonomy};

const LAYER_TOL: f64 = 1e-7;
const MODEL_TOL: f64 = 1e-6;
const MIN_GRADIENT: f64 = 1e-4;
const SEEDS: usize = 20;
const MAX_DRAWS: u64 = 200;

fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let d = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| d.sample(rng)).collect()).unwrap()
}

/// Runs `check` on fresh draws until `SEEDS` well-scaled fixtures have been
/// compared, asserting each one against `tol`.
fn over_seeds(base: u64, tol: f64, mut check: impl FnMut(&mut ChaCha8Rng) -> GradCheck) {
    let mut accepted = 0;
    for draw in 0..MAX_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(base + draw);
        let r = check(&mut rng);
        if r.min_nonzero_analytic < MIN_GRADIENT {
            continue;
        }
        assert!(r.max_rel_error < tol, "draw {draw}: {r:?}");
        accepted += 1;
        if accepted == SEEDS {
            return;
        }
    }
    panic!("only {accepted} of {MAX_DRAWS} draws were well scaled");
}

fn model_config() -> ModelConfig {
    ModelConfig {
        side: 6,
        channels: vec![2, 3],
        reduction: 1,
        embed_dim: 3,
        n_source: 3,
        n_original: 4,
        domain_code_width: 1,
        pool_grid: 2,
    }
}

fn similarity() -> SimilarityMatrix {
    let tax = Taxonomy::toy();
    let classes = ClassMap::toy(&tax);
    SimilarityMatrix::build(&tax, &classes, &[3, 14, 30], &[0, 1, 10, 20]).unwrap()
}

fn batch(side: usize, rng: &mut ChaCha8Rng) -> Batch<f64> {
    let u = Uniform::new(0.0, 1.0).unwrap();
    let n = 4 * side * side;
    let images = Tensor::new(&[4, 1, side, side], (0..n).map(|_| u.sample(rng)).collect()).unwrap();
    Batch {
        images,
        domains: vec![Modality::Photo, Modality::Sketch, Modality::Photo, Modality::Sketch],
        labels: vec![0, 2, 1, 2],
    }
}

#[test]
fn linear_layer() {
    over_seeds(0, LAYER_TOL, |rng| {
        let x = normal(&[3, 4], 1.0, rng);
        let w = normal(&[4, 2], 1.0, rng);
        let b = normal(&[2], 1.0, rng);
        let probe = normal(&[3, 2], 1.0, rng);
        gradient_check(&[x, w, b], |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            let p = t.constant(probe.clone());
            let yp = t.mul(y, p)?;
            t.sum(yp)
        })
        .unwrap()
    });
}

#[test]
fn sigmoid_gate() {
    over_seeds(1000, LAYER_TOL, |rng| {
        let x = normal(&[2, 5], 2.0, rng);
        let probe = normal(&[2, 5], 1.0, rng);
        gradient_check(&[x], |t, v| {
            let s = t.sigmoid(v[0])?;
            let p = t.constant(probe.clone());
            let sp = t.mul(s, p)?;
            t.sum(sp)
        })
        .unwrap()
    });
}

#[test]
fn convolution_and_pooling() {
    over_seeds(2000, MODEL_TOL, |rng| {
        let x = normal(&[2, 2, 6, 5], 1.0, rng);
        let w = normal(&[3, 2, 3, 3], 0.5, rng);
        let b = normal(&[3], 0.5, rng);
        let probe = normal(&[2, 3], 1.0, rng);
        gradient_check(&[x, w, b], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
            let y = t.relu(y)?;
            let pooled = t.global_avg_pool(y)?;
            let p = t.constant(probe.clone());
            let yp = t.mul(pooled, p)?;
            t.sum(yp)
        })
        .unwrap()
    });
}

#[test]
fn grid_pooling() {
    over_seeds(2500, LAYER_TOL, |rng| {
        let x = normal(&[2, 3, 4, 6], 1.0, rng);
        let probe = normal(&[2, 12], 1.0, rng);
        gradient_check(&[x], |t, v| {
            let pooled = t.grid_avg_pool(v[0], 2)?;
            let p = t.constant(probe.clone());
            let yp = t.mul(pooled, p)?;
            t.sum(yp)
        })
        .unwrap()
    });
}

#[test]
fn cross_entropy_heads() {
    over_seeds(3000, LAYER_TOL, |rng| {
        let logits = normal(&[3, 4], 1.5, rng);
        gradient_check(&[logits], |t, v| t.cross_entropy(v[0], &[1, 3, 0])).unwrap()
    });
    over_seeds(3500, LAYER_TOL, |rng| {
        let logits = normal(&[3, 4], 1.5, rng);
        let mut q = normal(&[3, 4], 1.0, rng);
        for row in q.data_mut().chunks_mut(4) {
            let p = sake_core::numerics::softmax(row);
            row.copy_from_slice(&p);
        }
        gradient_check(&[logits], |t, v| t.soft_cross_entropy(v[0], &q, &[1.0, 0.0, 1.0])).unwrap()
    });
}

#[test]
fn full_cse_block() {
    over_seeds(4000, MODEL_TOL, |rng| {
        let x = normal(&[2, 4, 3, 3], 1.0, rng);
        let fc1_w = normal(&[4, 2], 1.0, rng);
        let fc1_b = normal(&[2], 0.5, rng);
        let fc2_w = normal(&[3, 4], 1.0, rng);
        let fc2_b = normal(&[4], 0.5, rng);
        let probe = normal(&[2, 4, 3, 3], 1.0, rng);
        gradient_check(&[x, fc1_w, fc1_b, fc2_w, fc2_b], |t, v| {
            let code = t.constant(Tensor::new(&[2, 1], vec![0.0, 1.0])?);
            let gate = CseVars {
                fc1_w: v[1],
                fc1_b: v[2],
                fc2_w: v[3],
                fc2_b: v[4],
            };
            let y = cse_gate(t, v[0], &gate, Some(code))?;
            let p = t.constant(probe.clone());
            let yp = t.mul(y, p)?;
            t.sum(yp)
        })
        .unwrap()
    });
}

#[test]
fn full_model_through_both_heads() {
    let sim = similarity();
    let cfg = LossConfig::default();
    over_seeds(5000, MODEL_TOL, |rng| {
        let mut student = ModelParams::<f64>::init(model_config(), rng).unwrap();
        let jitter = Normal::new(0.0, 0.5).unwrap();
        for t in student.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += jitter.sample(rng));
        }
        let teacher = ModelParams::<f64>::init(model_config(), rng).unwrap();
        let b = batch(model_config().side, rng);
        let tensors: Vec<Tensor<f64>> = student.tensors().into_iter().cloned().collect();
        gradient_check(&tensors, |t, v| {
            let vars = ParamVars::from_slice(v, student.blocks.len());
            let loss = total_loss(t, &student, &vars, Some(&teacher), &sim, &b, Objective::Sake, &cfg)?;
            Ok(loss.total)
        })
        .unwrap()
    });
}

#[test]
fn full_model_benchmark_objective() {
    let sim = similarity();
    let cfg = LossConfig::default();
    over_seeds(6000, MODEL_TOL, |rng| {
        let mut student = ModelParams::<f64>::init(model_config(), rng).unwrap();
        let jitter = Normal::new(0.0, 0.5).unwrap();
        for t in student.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += jitter.sample(rng));
        }
        let b = batch(model_config().side, rng);
        let tensors: Vec<Tensor<f64>> = student.tensors().into_iter().cloned().collect();
        gradient_check(&tensors, |t, v| {
            let vars = ParamVars::from_slice(v, student.blocks.len());
            let loss = total_loss(t, &student, &vars, None, &sim, &b, Objective::Benchmark, &cfg)?;
            Ok(loss.total)
        })
        .unwrap()
    });
}
