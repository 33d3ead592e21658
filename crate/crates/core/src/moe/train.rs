//! Toy multi-task training with full-batch gradient descent.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{forward_with_cache, moe_backward, InputGrads};
use super::heads::{
    heads_backward, heads_forward, multitask_loss, HeadLogits, LossBreakdown, TaskTargets,
    OOS_CLASSES, REGION_OUTPUTS, SHAPE_CLASSES, SPREAD_CLASSES, VOLUME_CLASSES,
};
use super::{default_modality_names, Model, ModalityTokens, MoeConfig};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: ModalityTokens,
    pub prompt: Array1<f64>,
    pub targets: TaskTargets,
}

fn pooled(fused: &Array2<f64>) -> Array1<f64> {
    fused.mean_axis(Axis(0)).expect("at least one fused token")
}

/// Logits for one sample.
pub fn predict(model: &Model, sample: &Sample) -> Result<HeadLogits> {
    let (fused, _, _) = forward_with_cache(&sample.tokens, &sample.prompt, &model.moe)?;
    Ok(heads_forward(pooled(&fused).view(), &model.heads))
}

/// Loss of one sample, forward pass only.
pub fn sample_loss(model: &Model, sample: &Sample) -> Result<LossBreakdown> {
    Ok(multitask_loss(&predict(model, sample)?, &sample.targets).0)
}

/// Loss of one sample with gradients for every parameter and input.
pub fn model_loss(model: &Model, sample: &Sample) -> Result<(LossBreakdown, Model, InputGrads)> {
    let mut grads = model.zeros_like();
    let (loss, dinput) = accumulate_loss(model, sample, &mut grads)?;
    Ok((loss, grads, dinput))
}

/// As `model_loss`, adding parameter gradients into `grads`.
fn accumulate_loss(model: &Model, sample: &Sample, grads: &mut Model) -> Result<(LossBreakdown, InputGrads)> {
    let (fused, _, cache) = forward_with_cache(&sample.tokens, &sample.prompt, &model.moe)?;
    let h = pooled(&fused);
    let logits = heads_forward(h.view(), &model.heads);
    let (loss, dlogits) = multitask_loss(&logits, &sample.targets);
    let dh = heads_backward(h.view(), &dlogits, &model.heads, &mut grads.heads);
    let n_i = fused.nrows();
    let dfused = Array2::from_shape_fn(fused.dim(), |(_, d)| dh[d] / n_i as f64);
    let dinput = moe_backward(&dfused, &cache, &model.moe, &mut grads.moe);
    Ok((loss, dinput))
}

/// Samples per parallel work unit. Fixed so the summation order, and hence
/// the result, does not depend on the thread count.
const CHUNK: usize = 16;

/// Mean loss and mean gradient over a batch.
pub fn batch_loss(model: &Model, samples: &[Sample]) -> Result<(LossBreakdown, Model)> {
    if samples.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let partial: Vec<(LossBreakdown, Model)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = model.zeros_like();
            let mut loss = LossBreakdown::default();
            for s in chunk {
                let (l, _) = accumulate_loss(model, s, &mut grad)?;
                loss.add(&l, 1.0);
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / samples.len() as f64;
    let mut iter = partial.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss.add(&l, 1.0);
        grad.axpy(1.0, &g);
    }
    let mut mean = LossBreakdown::default();
    mean.add(&loss, scale);
    for x in grad.tensors_mut() {
        x.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((mean, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Step budget.
    pub steps: usize,
    pub lr: f64,
    /// Stop early once the mean total loss drops below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 0.5,
            target_loss: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    /// Mean total loss before each step, plus the loss after the last one.
    pub loss_curve: Vec<f64>,
    /// Gradient steps actually taken.
    pub steps: usize,
    pub final_loss: LossBreakdown,
}

/// Plain gradient descent on the full batch.
pub fn train_toy(samples: &[Sample], mut model: Model, config: &TrainConfig) -> Result<TrainReport> {
    if !(config.lr.is_finite() && config.lr >= 0.0) {
        return Err(Error::Config(format!("learning rate {} is not a finite non-negative number", config.lr)));
    }
    let mut curve = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let (loss, grad) = batch_loss(&model, samples)?;
        if !loss.total.is_finite() || !grad.squared_norm().is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at step {step} (lr {}): {loss:?}",
                config.lr
            )));
        }
        curve.push(loss.total);
        let converged = config.target_loss.is_some_and(|target| loss.total < target);
        if step == config.steps || converged {
            return Ok(TrainReport {
                model,
                loss_curve: curve,
                steps: step,
                final_loss: loss,
            });
        }
        if config.lr > 0.0 {
            model.axpy(-config.lr, &grad);
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Trailing moving average with the given window.
pub fn smooth(curve: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    if curve.len() < w {
        return Vec::new();
    }
    curve.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect()
}

/// Accuracy per head, in percent. Region is per-label bit accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub next_token: f64,
    pub volume: f64,
    pub region: f64,
    pub shape: f64,
    pub spread: f64,
    pub oos: f64,
}

impl Accuracy {
    /// The five answer tasks, without the next-token proxy.
    pub fn tasks(&self) -> [(&'static str, f64); 5] {
        [
            ("volume", self.volume),
            ("region", self.region),
            ("shape", self.shape),
            ("spread", self.spread),
            ("oos", self.oos),
        ]
    }
}

fn argmax(z: &Array1<f64>) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
        .0
}

pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Accuracy> {
    let logits: Vec<HeadLogits> = samples.par_iter().map(|s| predict(model, s)).collect::<Result<_>>()?;
    let rate = |hits: usize, total: usize| {
        if total == 0 {
            f64::NAN
        } else {
            100.0 * hits as f64 / total as f64
        }
    };
    let categorical = |get: fn(&HeadLogits) -> &Array1<f64>, target: fn(&TaskTargets) -> Option<usize>| {
        let mut hits = 0;
        let mut total = 0;
        for (l, s) in logits.iter().zip(samples) {
            if let Some(y) = target(&s.targets) {
                total += 1;
                hits += usize::from(argmax(get(l)) == y);
            }
        }
        rate(hits, total)
    };
    let mut bits = 0;
    let mut bit_total = 0;
    for (l, s) in logits.iter().zip(samples) {
        if let Some(y) = &s.targets.region {
            for k in 0..REGION_OUTPUTS {
                bit_total += 1;
                bits += usize::from((l.region[k] > 0.0) == y[k]);
            }
        }
    }
    Ok(Accuracy {
        next_token: categorical(|l| &l.next_token, |t| t.next_token),
        volume: categorical(|l| &l.volume, |t| t.volume),
        region: rate(bits, bit_total),
        shape: categorical(|l| &l.shape, |t| t.shape),
        spread: categorical(|l| &l.spread, |t| t.spread),
        oos: categorical(|l| &l.oos, |t| t.oos),
    })
}

/// Synthetic multi-task data that a linear read-out can separate.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub config: MoeConfig,
    pub vocab: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub const TOY_VOCAB: usize = 8;
pub const TOY_NOISE: f64 = 0.05;
pub const TOY_PROMPTS: usize = 15;
pub const TOY_TRAIN: usize = 384;
pub const TOY_TEST: usize = 128;

impl ToyFixture {
    /// The bundled fixture: 384 training and 128 held-out samples.
    pub fn standard(seed: u64) -> Self {
        separable_fixture(TOY_TRAIN, TOY_TEST, seed)
    }
}

impl TrainConfig {
    /// Budget and stopping rule used for the bundled fixture.
    pub fn toy() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 0.5,
            target_loss: Some(0.05),
        }
    }
}

/// Every sample draws an independent class per head. Its image tokens carry
/// the concatenated one-hot codes of those classes plus uniform noise at
/// every position and modality. Prompts are drawn from a fixed set of
/// random embeddings, one per multi-task template.
pub fn separable_fixture(n_train: usize, n_test: usize, seed: u64) -> ToyFixture {
    let code_len = VOLUME_CLASSES + REGION_OUTPUTS + SHAPE_CLASSES + SPREAD_CLASSES + OOS_CLASSES + TOY_VOCAB;
    let config = MoeConfig {
        n_experts: 4,
        n_modalities: 2,
        d_i: code_len + 3,
        d_t: code_len + 3,
        hidden: Some(8),
        granularity: None,
    };
    let mut stream = rng::stream(seed, &["moe", "toy-fixture"]);
    let prompts: Vec<Array1<f64>> = (0..TOY_PROMPTS)
        .map(|_| Array1::from_shape_fn(config.d_t, |_| stream.gen_range(-1.0..1.0)))
        .collect();
    let mut draw = |n: usize| -> Vec<Sample> {
        (0..n).map(|_| toy_sample(&config, &prompts, &mut stream)).collect()
    };
    let train = draw(n_train);
    let test = draw(n_test);
    ToyFixture {
        config,
        vocab: TOY_VOCAB,
        train,
        test,
    }
}

fn toy_sample(config: &MoeConfig, prompts: &[Array1<f64>], rng: &mut impl Rng) -> Sample {
    let targets = TaskTargets {
        next_token: Some(rng.gen_range(0..TOY_VOCAB)),
        volume: Some(rng.gen_range(0..VOLUME_CLASSES)),
        region: Some(std::array::from_fn(|_| rng.gen_bool(0.3))),
        shape: Some(rng.gen_range(0..SHAPE_CLASSES)),
        spread: Some(rng.gen_range(0..SPREAD_CLASSES)),
        oos: Some(rng.gen_range(0..OOS_CLASSES)),
    };
    let mut code = vec![0.0; config.d_i];
    let mut offset = 0;
    let mut one_hot = |class: usize, width: usize| {
        code[offset + class] = 1.0;
        offset += width;
    };
    one_hot(targets.volume.unwrap(), VOLUME_CLASSES);
    one_hot(targets.shape.unwrap(), SHAPE_CLASSES);
    one_hot(targets.spread.unwrap(), SPREAD_CLASSES);
    one_hot(targets.oos.unwrap(), OOS_CLASSES);
    one_hot(targets.next_token.unwrap(), TOY_VOCAB);
    for (k, &bit) in targets.region.unwrap().iter().enumerate() {
        code[offset + k] = if bit { 1.0 } else { 0.0 };
    }
    let n_i = 1;
    let n_m = config.n_modalities;
    let tokens = Array3::from_shape_fn((n_i, n_m, config.d_i), |(_, _, k)| {
        code[k] + rng.gen_range(-TOY_NOISE..TOY_NOISE)
    });
    let cls = tokens.mean_axis(Axis(0)).expect("positions");
    let prompt = prompts[rng.gen_range(0..prompts.len())].clone();
    Sample {
        tokens: ModalityTokens {
            tokens,
            cls,
            modality_names: default_modality_names(n_m),
        },
        prompt,
        targets,
    }
}
