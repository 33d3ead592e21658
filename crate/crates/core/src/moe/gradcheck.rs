//! Central finite-difference check of the analytic gradients.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::forward::{expert_output, high_route};
use super::heads::{heads_forward, multitask_loss};
use super::train::{model_loss, sample_loss, Sample};
use super::{slice, Model};
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Norms below this are treated as this value in the relative-error
/// denominator, so an all-zero group compares on an absolute scale.
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub analytic_norm: f64,
    /// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor)
    pub rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub groups: Vec<GroupError>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.rel_error < tol)
    }

    /// Fixed-width text table, one row per group.
    pub fn table(&self) -> String {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>7}  {:>12}  {:>12}\n", "group", "entries", "rel_error", "max_abs");
        for g in &self.groups {
            out += &format!(
                "{:<width$}  {:>7}  {:>12.3e}  {:>12.3e}\n",
                g.name, g.checked, g.rel_error, g.max_abs_error
            );
        }
        out
    }
}

fn group_error(name: String, analytic: &[f64], numeric: &[f64]) -> GroupError {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let a = norm(&mut analytic.iter().copied());
    let n = norm(&mut numeric.iter().copied());
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(x, y)| x - y));
    let max_abs = analytic
        .iter()
        .zip(numeric)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    GroupError {
        name,
        checked: analytic.len(),
        analytic_norm: a,
        rel_error: diff / a.max(n).max(NORM_FLOOR),
        max_abs_error: max_abs,
    }
}

/// Indices checked in a tensor of length `len`: all of them, or an even
/// stride of at most `limit`.
fn probe_indices(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(l) if l < len => (0..l).map(|k| k * len / l).collect(),
        _ => (0..len).collect(),
    }
}

/// Which part of the model a parameter tensor belongs to.
enum Owner {
    HighRouter,
    Expert(usize),
    Heads,
}

/// Per-expert outputs and routing weights of the unperturbed model. A
/// perturbation inside one expert only changes that expert's output, so
/// probes recompute one expert rather than all of them.
struct Baseline {
    pi_high: Array1<f64>,
    outs: Vec<Array2<f64>>,
    pooled: Array1<f64>,
}

impl Baseline {
    fn new(model: &Model, sample: &Sample) -> Self {
        let pi_high = high_route(&sample.prompt, &model.moe);
        let outs: Vec<Array2<f64>> = model.moe.experts.iter().map(|e| expert_output(e, &sample.tokens)).collect();
        let pooled = pool(&fuse(&pi_high, &outs, None));
        Baseline { pi_high, outs, pooled }
    }

    fn loss(&self, probe: &Model, sample: &Sample, owner: &Owner) -> f64 {
        let pooled = match owner {
            Owner::HighRouter => pool(&fuse(&high_route(&sample.prompt, &probe.moe), &self.outs, None)),
            Owner::Expert(n) => {
                let out = expert_output(&probe.moe.experts[*n], &sample.tokens);
                pool(&fuse(&self.pi_high, &self.outs, Some((*n, &out))))
            }
            Owner::Heads => self.pooled.clone(),
        };
        multitask_loss(&heads_forward(pooled.view(), &probe.heads), &sample.targets).0.total
    }
}

/// Σ_n π_n e_n in expert order, optionally with one expert output replaced.
fn fuse(pi: &Array1<f64>, outs: &[Array2<f64>], replace: Option<(usize, &Array2<f64>)>) -> Array2<f64> {
    let mut fused = Array2::zeros(outs[0].dim());
    for (n, out) in outs.iter().enumerate() {
        let out = match replace {
            Some((r, o)) if r == n => o,
            _ => out,
        };
        fused.scaled_add(pi[n], out);
    }
    fused
}

fn pool(fused: &Array2<f64>) -> Array1<f64> {
    fused.mean_axis(Axis(0)).expect("at least one fused token")
}

/// Owner of each tensor, in `Model::tensors` order.
fn owners(model: &Model) -> Vec<Owner> {
    let mut out: Vec<Owner> = model.moe.high_router.tensors().iter().map(|_| Owner::HighRouter).collect();
    for (n, e) in model.moe.experts.iter().enumerate() {
        out.extend((0..e.router.tensors().len() + 4).map(|_| Owner::Expert(n)));
    }
    out.extend(model.heads.tensors().iter().map(|_| Owner::Heads));
    out
}

/// Compares analytic gradients of the full six-term loss on `sample` with
/// central differences, for every parameter tensor and every input tensor.
pub fn gradcheck(model: &Model, sample: &Sample, per_group: Option<usize>) -> Result<GradReport> {
    let (_, grads, input) = model_loss(model, sample)?;
    let loss_of = |m: &Model, s: &Sample| sample_loss(m, s).map(|l| l.total);
    let baseline = Baseline::new(model, sample);
    let owners = owners(model);

    let mut analytic_groups: Vec<(String, Vec<f64>)> = Vec::new();
    grads.visit(&mut |name, x| analytic_groups.push((name.to_string(), x.to_vec())));
    assert_eq!(owners.len(), analytic_groups.len(), "tensor order and visit order disagree");

    let mut groups = Vec::new();
    let mut probe = model.clone();
    for (g, (name, analytic)) in analytic_groups.iter().enumerate() {
        let idx = probe_indices(analytic.len(), per_group);
        let mut numeric = Vec::with_capacity(idx.len());
        for &k in &idx {
            let base = entry(model, g, k);
            set_entry(&mut probe, g, k, base + FD_STEP);
            let plus = baseline.loss(&probe, sample, &owners[g]);
            set_entry(&mut probe, g, k, base - FD_STEP);
            let minus = baseline.loss(&probe, sample, &owners[g]);
            set_entry(&mut probe, g, k, base);
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        let picked: Vec<f64> = idx.iter().map(|&k| analytic[k]).collect();
        groups.push(group_error(name.clone(), &picked, &numeric));
    }

    // Inputs: image tokens, [CLS] tokens and the prompt.
    let mut s = sample.clone();
    let inputs: [(&str, &[f64], fn(&mut Sample) -> &mut [f64]); 3] = [
        ("input.tokens", slice(&input.tokens), |s| {
            s.tokens.tokens.as_slice_mut().expect("standard layout")
        }),
        ("input.cls", slice(&input.cls), |s| s.tokens.cls.as_slice_mut().expect("standard layout")),
        ("input.prompt", slice(&input.t), |s| s.prompt.as_slice_mut().expect("standard layout")),
    ];
    for (name, analytic, field) in inputs {
        let idx = probe_indices(analytic.len(), per_group);
        let mut numeric = Vec::with_capacity(idx.len());
        for &k in &idx {
            let orig = field(&mut s)[k];
            field(&mut s)[k] = orig + FD_STEP;
            let plus = loss_of(model, &s)?;
            field(&mut s)[k] = orig - FD_STEP;
            let minus = loss_of(model, &s)?;
            field(&mut s)[k] = orig;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        let picked: Vec<f64> = idx.iter().map(|&k| analytic[k]).collect();
        groups.push(group_error(name.to_string(), &picked, &numeric));
    }
    Ok(GradReport { groups })
}

fn entry(model: &Model, group: usize, k: usize) -> f64 {
    model.tensors()[group][k]
}

fn set_entry(model: &mut Model, group: usize, k: usize, value: f64) {
    model.tensors_mut()[group][k] = value;
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::moe::{Granularity, ModalityTokens, MoeConfig, TaskTargets};

    #[test]
    fn partial_recomputation_matches_full_forward() {
        let mut r = ChaCha8Rng::seed_from_u64(31);
        for granularity in [Granularity::ModalityLevel, Granularity::TokenLevel] {
            let cfg = MoeConfig {
                n_experts: 3,
                n_modalities: 2,
                d_i: 3,
                d_t: 4,
                hidden: None,
                granularity: Some(vec![granularity; 3]),
            };
            let model = Model::init(&cfg, 5, &mut r).unwrap();
            let sample = Sample {
                tokens: ModalityTokens::random(2, 2, 3, &mut r),
                prompt: Array1::from_shape_fn(4, |k| 0.3 * k as f64 - 0.4),
                targets: TaskTargets {
                    next_token: Some(1),
                    volume: Some(0),
                    region: None,
                    shape: Some(2),
                    spread: None,
                    oos: Some(0),
                },
            };
            let baseline = Baseline::new(&model, &sample);
            let owners = owners(&model);
            let mut probe = model.clone();
            for g in 0..owners.len() {
                set_entry(&mut probe, g, 0, entry(&model, g, 0) + 0.1);
                let full = sample_loss(&probe, &sample).unwrap().total;
                let fast = baseline.loss(&probe, &sample, &owners[g]);
                assert!((full - fast).abs() <= 1e-12 * full.abs().max(1.0), "tensor {g}: {full} vs {fast}");
                set_entry(&mut probe, g, 0, entry(&model, g, 0));
            }
        }
    }
}
