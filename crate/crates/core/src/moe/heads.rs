//! Single-layer task heads over the pooled fused representation, and the
//! six-term multi-task loss.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::{outer, sigmoid, softmax};
use super::{slice, slice_mut, uniform};
use crate::morphology::SpreadCategory;
use crate::qagen::{Gold, GoldValue, OosKind};
use crate::regions::{Region, VolumeBin};
use crate::shape::ShapeCategory;

/// Categorical heads carry one extra class for N/A, placed last.
pub const VOLUME_CLASSES: usize = VolumeBin::ALL.len() + 1;
pub const SHAPE_CLASSES: usize = ShapeCategory::ALL.len() + 1;
pub const SPREAD_CLASSES: usize = SpreadCategory::ALL.len() + 1;
pub const OOS_CLASSES: usize = OosKind::ALL.len();
pub const REGION_OUTPUTS: usize = Region::ALL.len();

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// outputs × d_T
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn init(outputs: usize, inputs: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: uniform((outputs, inputs), inputs, rng),
            b: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.w.dot(&x) + &self.b
    }

    fn backward(&self, x: ArrayView1<f64>, dz: ArrayView1<f64>, grad: &mut Linear) -> Array1<f64> {
        grad.w += &outer(dz, x);
        grad.b += &dz;
        self.w.t().dot(&dz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub next_token: Linear,
    pub volume: Linear,
    pub region: Linear,
    pub shape: Linear,
    pub spread: Linear,
    pub oos: Linear,
}

impl Heads {
    pub fn init(d_t: usize, vocab: usize, rng: &mut impl Rng) -> Self {
        Heads {
            next_token: Linear::init(vocab, d_t, rng),
            volume: Linear::init(VOLUME_CLASSES, d_t, rng),
            region: Linear::init(REGION_OUTPUTS, d_t, rng),
            shape: Linear::init(SHAPE_CLASSES, d_t, rng),
            spread: Linear::init(SPREAD_CLASSES, d_t, rng),
            oos: Linear::init(OOS_CLASSES, d_t, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, x| x.fill(0.0));
        z
    }

    pub fn vocab(&self) -> usize {
        self.next_token.w.nrows()
    }

    fn layers(&self) -> [(&'static str, &Linear); 6] {
        [
            ("next_token", &self.next_token),
            ("volume", &self.volume),
            ("region", &self.region),
            ("shape", &self.shape),
            ("spread", &self.spread),
            ("oos", &self.oos),
        ]
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (name, l) in self.layers() {
            f(&format!("head.{name}.w"), slice(&l.w));
            f(&format!("head.{name}.b"), slice(&l.b));
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        let layers = [
            ("next_token", &mut self.next_token),
            ("volume", &mut self.volume),
            ("region", &mut self.region),
            ("shape", &mut self.shape),
            ("spread", &mut self.spread),
            ("oos", &mut self.oos),
        ];
        for (name, l) in layers {
            f(&format!("head.{name}.w"), slice_mut(&mut l.w));
            f(&format!("head.{name}.b"), slice_mut(&mut l.b));
        }
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        self.layers().into_iter().flat_map(|(_, l)| [slice(&l.w), slice(&l.b)]).collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(12);
        for l in [
            &mut self.next_token,
            &mut self.volume,
            &mut self.region,
            &mut self.shape,
            &mut self.spread,
            &mut self.oos,
        ] {
            out.push(slice_mut(&mut l.w));
            out.push(slice_mut(&mut l.b));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.w.len() + l.b.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits {
    pub next_token: Array1<f64>,
    pub volume: Array1<f64>,
    pub region: Array1<f64>,
    pub shape: Array1<f64>,
    pub spread: Array1<f64>,
    pub oos: Array1<f64>,
}

pub fn heads_forward(pooled: ArrayView1<f64>, heads: &Heads) -> HeadLogits {
    HeadLogits {
        next_token: heads.next_token.forward(pooled),
        volume: heads.volume.forward(pooled),
        region: heads.region.forward(pooled),
        shape: heads.shape.forward(pooled),
        spread: heads.spread.forward(pooled),
        oos: heads.oos.forward(pooled),
    }
}

/// Backward through the heads; returns d/d pooled.
pub fn heads_backward(
    pooled: ArrayView1<f64>,
    dlogits: &HeadLogits,
    heads: &Heads,
    grads: &mut Heads,
) -> Array1<f64> {
    heads.next_token.backward(pooled, dlogits.next_token.view(), &mut grads.next_token)
        + heads.volume.backward(pooled, dlogits.volume.view(), &mut grads.volume)
        + heads.region.backward(pooled, dlogits.region.view(), &mut grads.region)
        + heads.shape.backward(pooled, dlogits.shape.view(), &mut grads.shape)
        + heads.spread.backward(pooled, dlogits.spread.view(), &mut grads.spread)
        + heads.oos.backward(pooled, dlogits.oos.view(), &mut grads.oos)
}

/// Class targets; `None` masks a term out of the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTargets {
    pub next_token: Option<usize>,
    pub volume: Option<usize>,
    /// Membership per region, in `Region::ALL` order.
    pub region: Option<[bool; REGION_OUTPUTS]>,
    pub shape: Option<usize>,
    pub spread: Option<usize>,
    pub oos: Option<usize>,
}

fn class_of<T: PartialEq>(g: &GoldValue<T>, vocab: &[T]) -> Option<usize> {
    match g {
        GoldValue::Unspecified => None,
        GoldValue::NotApplicable => Some(vocab.len()),
        GoldValue::Value(v) => vocab.iter().position(|x| x == v),
    }
}

impl TaskTargets {
    /// Targets from a record's gold values. An N/A region answer becomes
    /// the empty membership vector.
    pub fn from_gold(gold: &Gold, oos: OosKind, next_token: Option<usize>) -> Self {
        let region = match &gold.regions {
            GoldValue::Unspecified => None,
            GoldValue::NotApplicable => Some([false; REGION_OUTPUTS]),
            GoldValue::Value(rs) => Some(Region::ALL.map(|r| rs.contains(&r))),
        };
        TaskTargets {
            next_token,
            volume: class_of(&gold.volume, &VolumeBin::ALL),
            region,
            shape: class_of(&gold.shape, &ShapeCategory::ALL),
            spread: class_of(&gold.spread, &SpreadCategory::ALL),
            oos: OosKind::ALL.iter().position(|k| *k == oos),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub next_token: f64,
    pub volume: f64,
    pub region: f64,
    pub shape: f64,
    pub spread: f64,
    pub oos: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown, scale: f64) {
        self.next_token += scale * other.next_token;
        self.volume += scale * other.volume;
        self.region += scale * other.region;
        self.shape += scale * other.shape;
        self.spread += scale * other.spread;
        self.oos += scale * other.oos;
        self.total += scale * other.total;
    }
}

/// Cross-entropy and its logit gradient. Out-of-range targets panic.
fn cross_entropy(z: &Array1<f64>, target: Option<usize>) -> (f64, Array1<f64>) {
    let Some(y) = target else {
        return (0.0, Array1::zeros(z.len()));
    };
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + z.mapv(|v| (v - max).exp()).sum().ln();
    let mut grad = softmax(z.view());
    grad[y] -= 1.0;
    (lse - z[y], grad)
}

fn binary_cross_entropy(z: &Array1<f64>, target: Option<&[bool; REGION_OUTPUTS]>) -> (f64, Array1<f64>) {
    let Some(y) = target else {
        return (0.0, Array1::zeros(z.len()));
    };
    let mut loss = 0.0;
    let mut grad = Array1::zeros(z.len());
    for k in 0..z.len() {
        let t = if y[k] { 1.0 } else { 0.0 };
        loss += z[k].max(0.0) - z[k] * t + (-z[k].abs()).exp().ln_1p();
        grad[k] = sigmoid(z[k]) - t;
    }
    (loss, grad)
}

/// Sum of four categorical cross-entropies, the region BCE and the
/// next-token proxy, with the gradient with respect to every logit.
pub fn multitask_loss(logits: &HeadLogits, targets: &TaskTargets) -> (LossBreakdown, HeadLogits) {
    let (next_token, g_next) = cross_entropy(&logits.next_token, targets.next_token);
    let (volume, g_volume) = cross_entropy(&logits.volume, targets.volume);
    let (region, g_region) = binary_cross_entropy(&logits.region, targets.region.as_ref());
    let (shape, g_shape) = cross_entropy(&logits.shape, targets.shape);
    let (spread, g_spread) = cross_entropy(&logits.spread, targets.spread);
    let (oos, g_oos) = cross_entropy(&logits.oos, targets.oos);
    let breakdown = LossBreakdown {
        next_token,
        volume,
        region,
        shape,
        spread,
        oos,
        total: next_token + volume + region + shape + spread + oos,
    };
    let grads = HeadLogits {
        next_token: g_next,
        volume: g_volume,
        region: g_region,
        shape: g_shape,
        spread: g_spread,
        oos: g_oos,
    };
    (breakdown, grads)
}
