//! Scoring predictions against gold records.
//!
//! Every metric here is a mean of per-record outcomes over the records where
//! the task was asked. A record's outcome is 1 or 0 for categorical tasks and
//! a fraction for the region task, which makes bootstrap resampling a matter
//! of resampling outcome vectors.
//!
//! Region accuracy (definition version `mean-per-label-v1`): a region answer
//! is encoded as nine membership bits plus an N/A bit. A record scores 0 when
//! the N/A bits differ, otherwise the fraction of the nine membership bits
//! that agree; the metric averages record scores.

mod heatmap;
mod kappa;
mod normalize;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::SpreadCategory;
use crate::qagen::{DatasetRecord, Gold, GoldValue, OosKind};
use crate::regions::{Region, VolumeBin};
use crate::rng::stream;
use crate::shape::ShapeCategory;

pub use heatmap::{hashed_prompt_embedding, pearson, routing_heatmap, template_prompts, Heatmap};
pub use kappa::{cohen_kappa, Kappa};
pub use normalize::normalize_answer;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REGION_METRIC: &str = "mean-per-label-v1";
pub const DEFAULT_RESAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Volume,
    Region,
    Shape,
    Spread,
    OutOfScope,
}

impl EvalTask {
    pub const ALL: [EvalTask; 5] = [
        EvalTask::Volume,
        EvalTask::Region,
        EvalTask::Shape,
        EvalTask::Spread,
        EvalTask::OutOfScope,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalTask::Volume => "volume",
            EvalTask::Region => "region",
            EvalTask::Shape => "shape",
            EvalTask::Spread => "spread",
            EvalTask::OutOfScope => "out_of_scope",
        }
    }
}

/// A model's answer for one record: structured values, or free text that is
/// normalised against the gold record's task set. Missing values count as
/// wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<GoldValue<VolumeBin>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<GoldValue<Vec<Region>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<GoldValue<ShapeCategory>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<GoldValue<SpreadCategory>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oos: Option<OosKind>,
    /// The model declined to answer; read as a fully out-of-scope reply when
    /// `oos` is not given.
    #[serde(default)]
    pub abstain: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl PredictionRecord {
    /// A prediction that repeats the gold record exactly.
    pub fn from_gold(record: &DatasetRecord) -> Self {
        PredictionRecord {
            record_id: record.record_id.clone(),
            volume: Some(record.gold.volume.clone()),
            regions: Some(record.gold.regions.clone()),
            shape: Some(record.gold.shape.clone()),
            spread: Some(record.gold.spread.clone()),
            oos: Some(record.oos),
            abstain: false,
            answer: None,
        }
    }

    fn is_structured(&self) -> bool {
        self.volume.is_some()
            || self.regions.is_some()
            || self.shape.is_some()
            || self.spread.is_some()
            || self.oos.is_some()
    }

    /// Values in the gold vocabulary; `Unspecified` means "no answer".
    pub fn resolve(&self, gold: &DatasetRecord) -> (Gold, OosKind) {
        if !self.is_structured() {
            if let Some(text) = &self.answer {
                let (g, oos) = normalize_answer(text, gold.task_set);
                return (g, if self.abstain { OosKind::Full } else { oos });
            }
        }
        let gold_out = Gold {
            volume: pick(&self.volume),
            regions: pick(&self.regions),
            shape: pick(&self.shape),
            spread: pick(&self.spread),
        };
        let oos = self
            .oos
            .unwrap_or(if self.abstain { OosKind::Full } else { OosKind::None });
        (gold_out, oos)
    }
}

fn pick<T: Clone>(v: &Option<GoldValue<T>>) -> GoldValue<T> {
    v.clone().unwrap_or(GoldValue::Unspecified)
}

/// Gold and predicted answers for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub record_id: String,
    pub gold: Gold,
    pub gold_oos: OosKind,
    pub pred: Gold,
    pub pred_oos: OosKind,
}

/// Pair every gold record with its prediction by record id.
pub fn align(golds: &[DatasetRecord], preds: &[PredictionRecord]) -> Result<Vec<Scored>> {
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for p in preds {
        if by_id.insert(p.record_id.as_str(), p).is_some() {
            return Err(Error::Metric(format!("duplicate prediction for {}", p.record_id)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(golds.len());
    for g in golds {
        if !seen.insert(g.record_id.as_str()) {
            return Err(Error::Metric(format!("duplicate gold record {}", g.record_id)));
        }
        let p = by_id
            .get(g.record_id.as_str())
            .ok_or_else(|| Error::Metric(format!("no prediction for record {}", g.record_id)))?;
        let (pred, pred_oos) = p.resolve(g);
        out.push(Scored {
            record_id: g.record_id.clone(),
            gold: g.gold.clone(),
            gold_oos: g.oos,
            pred,
            pred_oos,
        });
    }
    if let Some(extra) = by_id.keys().find(|id| !seen.contains(*id)) {
        return Err(Error::Metric(format!("prediction {extra} has no gold record")));
    }
    Ok(out)
}

fn exact<T: PartialEq>(gold: &GoldValue<T>, pred: &GoldValue<T>) -> Option<f64> {
    match gold {
        GoldValue::Unspecified => None,
        _ => Some(if !pred.is_unspecified() && gold == pred { 1.0 } else { 0.0 }),
    }
}

fn as_set(v: &GoldValue<Vec<Region>>) -> GoldValue<BTreeSet<Region>> {
    match v {
        GoldValue::Unspecified => GoldValue::Unspecified,
        GoldValue::NotApplicable => GoldValue::NotApplicable,
        GoldValue::Value(rs) => GoldValue::Value(rs.iter().copied().collect()),
    }
}

/// Nine membership bits and the N/A bit; `None` when unanswered.
fn region_bits(v: &GoldValue<Vec<Region>>) -> Option<([bool; 9], bool)> {
    match v {
        GoldValue::Unspecified => None,
        GoldValue::NotApplicable => Some(([false; 9], true)),
        GoldValue::Value(rs) => Some((Region::ALL.map(|r| rs.contains(&r)), false)),
    }
}

fn region_score(gold: &GoldValue<Vec<Region>>, pred: &GoldValue<Vec<Region>>) -> Option<f64> {
    let (g, g_na) = region_bits(gold)?;
    let Some((p, p_na)) = region_bits(pred) else {
        return Some(0.0);
    };
    if g_na != p_na {
        return Some(0.0);
    }
    Some(g.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / 9.0)
}

/// Per-record outcome for `task`: `None` where the task was not asked.
/// The region task uses the per-label score.
pub fn outcomes(items: &[Scored], task: EvalTask) -> Vec<Option<f64>> {
    items
        .iter()
        .map(|s| match task {
            EvalTask::Volume => exact(&s.gold.volume, &s.pred.volume),
            EvalTask::Region => region_score(&s.gold.regions, &s.pred.regions),
            EvalTask::Shape => exact(&s.gold.shape, &s.pred.shape),
            EvalTask::Spread => exact(&s.gold.spread, &s.pred.spread),
            EvalTask::OutOfScope => Some(if s.gold_oos == s.pred_oos { 1.0 } else { 0.0 }),
        })
        .collect()
}

/// Percentage mean of the included outcomes; `None` if nothing is included.
pub fn mean_percent(outcomes: &[Option<f64>]) -> Option<f64> {
    let (sum, n) = outcomes
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| 100.0 * sum / n as f64)
}

/// Exact-match accuracy in percent. For the region task this compares whole
/// sets; see [`region_accuracy`] for the per-label metric.
pub fn task_accuracy(items: &[Scored], task: EvalTask) -> Option<f64> {
    if task == EvalTask::Region {
        let o: Vec<Option<f64>> = items
            .iter()
            .map(|s| exact(&as_set(&s.gold.regions), &as_set(&s.pred.regions)))
            .collect();
        return mean_percent(&o);
    }
    mean_percent(&outcomes(items, task))
}

pub fn region_accuracy(items: &[Scored]) -> Option<f64> {
    mean_percent(&outcomes(items, EvalTask::Region))
}

/// Accuracy of each region's membership bit, with N/A read as the empty set
/// and an unanswered prediction counted wrong.
pub fn region_label_accuracy(items: &[Scored]) -> [Option<f64>; 9] {
    std::array::from_fn(|k| {
        let o: Vec<Option<f64>> = items
            .iter()
            .map(|s| {
                let (g, _) = region_bits(&s.gold.regions)?;
                Some(match region_bits(&s.pred.regions) {
                    Some((p, _)) if p[k] == g[k] => 1.0,
                    _ => 0.0,
                })
            })
            .collect();
        mean_percent(&o)
    })
}

/// Population standard deviation of the metric over `resamples`
/// with-replacement resamples of the records. Resample `r` draws from its own
/// stream keyed by `(seed, "bootstrap", key, r)`, so the result is
/// independent of thread scheduling. Resamples with no included record are
/// skipped; `None` if every resample is empty.
pub fn bootstrap_std(outcomes: &[Option<f64>], resamples: usize, seed: u64, key: &str) -> Option<f64> {
    let n = outcomes.len();
    if n == 0 || resamples == 0 {
        return None;
    }
    let values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .filter_map(|r| {
            let mut rng = stream(seed, &["bootstrap", key, &r.to_string()]);
            let (mut sum, mut count) = (0.0, 0usize);
            for _ in 0..n {
                if let Some(x) = outcomes[rng.gen_range(0..n)] {
                    sum += x;
                    count += 1;
                }
            }
            (count > 0).then(|| 100.0 * sum / count as f64)
        })
        .collect();
    if values.is_empty() {
        return None;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub task: EvalTask,
    /// Records where the task was asked.
    pub included: usize,
    /// Percent; absent when no record is included.
    pub accuracy: Option<f64>,
    pub bootstrap_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetric {
    pub region: Region,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub region_metric: String,
    pub records: usize,
    pub seed: u64,
    pub resamples: usize,
    pub tasks: Vec<TaskMetric>,
    pub region_per_label: Vec<LabelMetric>,
    /// Mean of the volume, region, shape and spread accuracies.
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kappa: BTreeMap<String, Kappa>,
}

impl MetricsReport {
    pub fn accuracy(&self, task: EvalTask) -> Option<f64> {
        self.tasks.iter().find(|t| t.task == task).and_then(|t| t.accuracy)
    }
}

pub fn metrics_report(items: &[Scored], resamples: usize, seed: u64) -> MetricsReport {
    let tasks: Vec<TaskMetric> = EvalTask::ALL
        .iter()
        .map(|&task| {
            let o = outcomes(items, task);
            TaskMetric {
                task,
                included: o.iter().flatten().count(),
                accuracy: mean_percent(&o),
                bootstrap_std: bootstrap_std(&o, resamples, seed, task.as_str()),
            }
        })
        .collect();
    let four: Vec<Option<f64>> = tasks[..4].iter().map(|t| t.accuracy).collect();
    let mean = four
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        region_metric: REGION_METRIC.to_string(),
        records: items.len(),
        seed,
        resamples,
        tasks,
        region_per_label: Region::ALL
            .iter()
            .zip(region_label_accuracy(items))
            .map(|(&region, accuracy)| LabelMetric { region, accuracy })
            .collect(),
        mean,
        kappa: BTreeMap::new(),
    }
}

fn answer_key<T: Serialize>(v: &GoldValue<T>) -> Option<String> {
    (!v.is_unspecified()).then(|| serde_json::to_string(v).expect("vocabulary values serialise"))
}

/// κ between two annotators per task, over records both answered, plus a
/// pooled entry over all tasks. Tasks with no shared answers are omitted.
pub fn annotator_kappa(a: &[Scored], b: &[Scored]) -> Result<BTreeMap<String, Kappa>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.record_id != y.record_id) {
        return Err(Error::Metric("annotation sets are not aligned".into()));
    }
    let keys = |s: &Scored| -> [Option<String>; 5] {
        [
            answer_key(&s.pred.volume),
            answer_key(&as_set(&s.pred.regions)),
            answer_key(&s.pred.shape),
            answer_key(&s.pred.spread),
            Some(format!("{:?}", s.pred_oos)),
        ]
    };
    let mut out = BTreeMap::new();
    let mut pooled_a = Vec::new();
    let mut pooled_b = Vec::new();
    for (k, task) in EvalTask::ALL.iter().enumerate() {
        let mut xa = Vec::new();
        let mut xb = Vec::new();
        for (x, y) in a.iter().zip(b) {
            if let (Some(p), Some(q)) = (keys(x)[k].clone(), keys(y)[k].clone()) {
                xa.push(format!("{}:{p}", task.as_str()));
                xb.push(format!("{}:{q}", task.as_str()));
            }
        }
        if !xa.is_empty() {
            out.insert(task.as_str().to_string(), cohen_kappa(&xa, &xb)?);
            pooled_a.extend(xa);
            pooled_b.extend(xb);
        }
    }
    if !pooled_a.is_empty() {
        out.insert("pooled".to_string(), cohen_kappa(&pooled_a, &pooled_b)?);
    }
    Ok(out)
}
