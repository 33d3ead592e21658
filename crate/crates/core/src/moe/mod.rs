//! Prompt-conditioned hierarchical mixture of experts.
//!
//! For image tokens `v` (positions × modalities × d_I) and a prompt
//! embedding `t`, the fused tokens are
//!
//! ```text
//! e = Σ_n π^h_n(t) Σ_m [ π^{l,n}_m(v) W_{m,n}(v_m) + (1 − π^{l,n}_m(v)) W_{shared,n}(v_m) ]
//! ```
//!
//! with a softmax high-level router over experts and a sigmoid low-level
//! router per expert. Modality-level experts route on the concatenated
//! per-modality [CLS] tokens; token-level experts route each position on the
//! concatenation of that position's tokens, with one router shared by all
//! positions.

mod checkpoint;
mod forward;
mod gradcheck;
mod heads;
pub mod oracle;
mod train;

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Manifest, TensorEntry,
};
pub use forward::{
    forward_with_cache, gelu, gelu_grad, high_route, low_route, moe_backward, moe_forward,
    sigmoid, softmax, ForwardCache, InputGrads, LowRouting, RoutingTrace,
};
pub use gradcheck::{gradcheck, GradReport, GroupError, FD_STEP, NORM_FLOOR};
pub use heads::{
    heads_backward, heads_forward, multitask_loss, HeadLogits, Heads, Linear, LossBreakdown,
    TaskTargets, OOS_CLASSES, REGION_OUTPUTS, SHAPE_CLASSES, SPREAD_CLASSES, VOLUME_CLASSES,
};
pub use train::{
    batch_loss, evaluate, model_loss, predict, sample_loss, separable_fixture, smooth, train_toy, Accuracy,
    Sample, ToyFixture, TrainConfig, TrainReport, TOY_NOISE, TOY_PROMPTS, TOY_TEST, TOY_TRAIN,
    TOY_VOCAB,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    ModalityLevel,
    TokenLevel,
}

/// Image side of one sample: per-position tokens and per-modality [CLS].
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTokens {
    /// positions × modalities × d_I
    pub tokens: Array3<f64>,
    /// modalities × d_I
    pub cls: Array2<f64>,
    pub modality_names: Vec<String>,
}

impl ModalityTokens {
    pub fn new(tokens: Array3<f64>, cls: Array2<f64>, modality_names: Vec<String>) -> Result<Self> {
        let (n_i, n_m, d_i) = tokens.dim();
        if n_i == 0 || n_m == 0 || d_i == 0 {
            return Err(Error::Shape(format!("empty token tensor {n_i}×{n_m}×{d_i}")));
        }
        if cls.dim() != (n_m, d_i) {
            return Err(Error::Shape(format!(
                "cls shape {:?} does not match {n_m}×{d_i}",
                cls.dim()
            )));
        }
        if modality_names.len() != n_m {
            return Err(Error::Shape(format!(
                "{} modality names for {n_m} modalities",
                modality_names.len()
            )));
        }
        if tokens.iter().chain(cls.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Shape("non-finite token entry".into()));
        }
        Ok(ModalityTokens {
            tokens,
            cls,
            modality_names,
        })
    }

    /// Random tokens with entries uniform in [-1, 1].
    pub fn random(n_i: usize, n_m: usize, d_i: usize, rng: &mut impl Rng) -> Self {
        ModalityTokens {
            tokens: Array3::from_shape_fn((n_i, n_m, d_i), |_| rng.gen_range(-1.0..1.0)),
            cls: Array2::from_shape_fn((n_m, d_i), |_| rng.gen_range(-1.0..1.0)),
            modality_names: default_modality_names(n_m),
        }
    }

    pub fn n_positions(&self) -> usize {
        self.tokens.dim().0
    }

    pub fn n_modalities(&self) -> usize {
        self.tokens.dim().1
    }
}

pub fn default_modality_names(n_m: usize) -> Vec<String> {
    const NAMES: [&str; 4] = ["T1", "T1Gd", "T2", "FLAIR"];
    (0..n_m)
        .map(|m| NAMES.get(m).map_or_else(|| format!("M{m}"), |s| s.to_string()))
        .collect()
}

/// Mean over non-overlapping groups of `factor` consecutive positions.
pub fn spatial_pool(raw: &Array3<f64>, factor: usize) -> Result<Array3<f64>> {
    let (n_raw, n_m, d_i) = raw.dim();
    if factor == 0 || n_raw % factor != 0 {
        return Err(Error::Shape(format!(
            "pooling factor {factor} does not divide {n_raw} tokens"
        )));
    }
    let n_out = n_raw / factor;
    let mut out = Array3::zeros((n_out, n_m, d_i));
    for ((i, m, k), x) in raw.indexed_iter() {
        out[[i / factor, m, k]] += x / factor as f64;
    }
    Ok(out)
}

/// Two-layer perceptron `W2 · gelu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((output, hidden)),
            b2: Array1::zeros(output),
        }
    }

    fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            w1: uniform((hidden, input), input, rng),
            b1: Array1::zeros(hidden),
            w2: uniform((output, hidden), hidden, rng),
            b2: Array1::zeros(output),
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice(&self.w1), slice(&self.b1), slice(&self.w2), slice(&self.b2)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice_mut(&mut self.w1),
            slice_mut(&mut self.b1),
            slice_mut(&mut self.w2),
            slice_mut(&mut self.b2),
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }
}

fn uniform(shape: (usize, usize), fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// One high-level expert.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub granularity: Granularity,
    pub router: Mlp,
    /// modalities × d_T × d_I
    pub w_mod: Array3<f64>,
    /// modalities × d_T
    pub b_mod: Array2<f64>,
    /// d_T × d_I
    pub w_shared: Array2<f64>,
    pub b_shared: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub n_experts: usize,
    pub n_modalities: usize,
    pub d_i: usize,
    pub d_t: usize,
    /// Router hidden width; `None` means `max(d_T / 4, 1)`.
    pub hidden: Option<usize>,
    /// Per-expert granularity; `None` alternates modality-level and
    /// token-level starting with modality-level.
    pub granularity: Option<Vec<Granularity>>,
}

impl Default for MoeConfig {
    fn default() -> Self {
        MoeConfig {
            n_experts: 16,
            n_modalities: 4,
            d_i: 32,
            d_t: 32,
            hidden: None,
            granularity: None,
        }
    }
}

impl MoeConfig {
    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or((self.d_t / 4).max(1))
    }

    pub fn granularities(&self) -> Result<Vec<Granularity>> {
        match &self.granularity {
            Some(g) if g.len() == self.n_experts => Ok(g.clone()),
            Some(g) => Err(Error::Config(format!(
                "{} granularity tags for {} experts",
                g.len(),
                self.n_experts
            ))),
            None => Ok((0..self.n_experts)
                .map(|n| {
                    if n % 2 == 0 {
                        Granularity::ModalityLevel
                    } else {
                        Granularity::TokenLevel
                    }
                })
                .collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.n_modalities == 0 || self.d_i == 0 || self.d_t == 0 {
            return Err(Error::Config(format!("degenerate MoE configuration {self:?}")));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("router hidden width must be positive".into()));
        }
        self.granularities().map(|_| ())
    }
}

/// All parameters of the fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeParams {
    pub high_router: Mlp,
    pub experts: Vec<Expert>,
}

impl MoeParams {
    /// Uniform(±1/√fan_in) weights, zero biases.
    pub fn init(config: &MoeConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_width();
        let (n_m, d_i, d_t) = (config.n_modalities, config.d_i, config.d_t);
        let high_router = Mlp::init(d_t, h, config.n_experts, rng);
        let experts = config
            .granularities()?
            .into_iter()
            .map(|granularity| {
                let bound = 1.0 / (d_i as f64).sqrt();
                Expert {
                    granularity,
                    router: Mlp::init(n_m * d_i, h, n_m, rng),
                    w_mod: Array3::from_shape_fn((n_m, d_t, d_i), |_| rng.gen_range(-bound..bound)),
                    b_mod: Array2::zeros((n_m, d_t)),
                    w_shared: uniform((d_t, d_i), d_i, rng),
                    b_shared: Array1::zeros(d_t),
                }
            })
            .collect();
        Ok(MoeParams {
            high_router,
            experts,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, x| x.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.experts[0].w_mod.dim().0
    }

    pub fn d_i(&self) -> usize {
        self.experts[0].w_shared.ncols()
    }

    pub fn d_t(&self) -> usize {
        self.high_router.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.high_router.w1.nrows()
    }

    pub fn config(&self) -> MoeConfig {
        MoeConfig {
            n_experts: self.n_experts(),
            n_modalities: self.n_modalities(),
            d_i: self.d_i(),
            d_t: self.d_t(),
            hidden: Some(self.hidden()),
            granularity: Some(self.experts.iter().map(|e| e.granularity).collect()),
        }
    }

    /// Visit every tensor as a flat slice, with a stable name.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        let mut g = |name: &str, x: &[f64]| f(name, x);
        visit_mlp("high_router", &self.high_router, &mut g);
        for (n, e) in self.experts.iter().enumerate() {
            visit_mlp(&format!("expert{n}.router"), &e.router, &mut g);
            g(&format!("expert{n}.w_mod"), slice(&e.w_mod));
            g(&format!("expert{n}.b_mod"), slice(&e.b_mod));
            g(&format!("expert{n}.w_shared"), slice(&e.w_shared));
            g(&format!("expert{n}.b_shared"), slice(&e.b_shared));
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_mlp_mut("high_router", &mut self.high_router, f);
        for (n, e) in self.experts.iter_mut().enumerate() {
            visit_mlp_mut(&format!("expert{n}.router"), &mut e.router, f);
            f(&format!("expert{n}.w_mod"), slice_mut(&mut e.w_mod));
            f(&format!("expert{n}.b_mod"), slice_mut(&mut e.b_mod));
            f(&format!("expert{n}.w_shared"), slice_mut(&mut e.w_shared));
            f(&format!("expert{n}.b_shared"), slice_mut(&mut e.b_shared));
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, x| n += x.len());
        n
    }
}

pub(crate) fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn visit_mlp(prefix: &str, m: &Mlp, f: &mut dyn FnMut(&str, &[f64])) {
    f(&format!("{prefix}.w1"), slice(&m.w1));
    f(&format!("{prefix}.b1"), slice(&m.b1));
    f(&format!("{prefix}.w2"), slice(&m.w2));
    f(&format!("{prefix}.b2"), slice(&m.b2));
}

fn visit_mlp_mut(prefix: &str, m: &mut Mlp, f: &mut dyn FnMut(&str, &mut [f64])) {
    f(&format!("{prefix}.w1"), slice_mut(&mut m.w1));
    f(&format!("{prefix}.b1"), slice_mut(&mut m.b1));
    f(&format!("{prefix}.w2"), slice_mut(&mut m.w2));
    f(&format!("{prefix}.b2"), slice_mut(&mut m.b2));
}

/// Fusion block plus task heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub moe: MoeParams,
    pub heads: Heads,
}

impl Model {
    pub fn init(config: &MoeConfig, vocab: usize, rng: &mut impl Rng) -> Result<Self> {
        let moe = MoeParams::init(config, rng)?;
        let heads = Heads::init(config.d_t, vocab, rng);
        Ok(Model { moe, heads })
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            moe: self.moe.zeros_like(),
            heads: self.heads.zeros_like(),
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.moe.visit(f);
        self.heads.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.moe.visit_mut(f);
        self.heads.visit_mut(f);
    }

    pub fn parameter_count(&self) -> usize {
        self.moe.parameter_count() + self.heads.parameter_count()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn axpy(&mut self, scale: f64, other: &Model) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// Every tensor in `visit` order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.moe.high_router.tensors();
        for e in &self.moe.experts {
            out.extend(e.router.tensors());
            out.extend([slice(&e.w_mod), slice(&e.b_mod), slice(&e.w_shared), slice(&e.b_shared)]);
        }
        out.extend(self.heads.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.moe.high_router.tensors_mut();
        for e in &mut self.moe.experts {
            out.extend(e.router.tensors_mut());
            out.push(slice_mut(&mut e.w_mod));
            out.push(slice_mut(&mut e.b_mod));
            out.push(slice_mut(&mut e.w_shared));
            out.push(slice_mut(&mut e.b_shared));
        }
        out.extend(self.heads.tensors_mut());
        out
    }

    pub fn squared_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, x| s += x.iter().map(|v| v * v).sum::<f64>());
        s
    }
}
