//! Rendering, per-label sampling, dataset splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::bank::{placeholders, TaskSet, Template, TemplateBank, TemplateKind, LABEL};
use super::{Task, TaskDescriptors};
use crate::error::{Error, Result};
use crate::morphology::SpreadCategory;
use crate::na::NA;
use crate::regions::{Region, VolumeBin};
use crate::rng::stream;
use crate::shape::ShapeCategory;

/// Multitask, partial-OOS and full-OOS records per (study, label).
pub const RECORDS_PER_LABEL: usize = 6;
const MULTITASK_PER_LABEL: usize = 4;

pub const UNSPECIFIED: &str = "Unspecified";

/// A gold answer: not asked, asked but not applicable, or a value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GoldValue<T> {
    Unspecified,
    NotApplicable,
    Value(T),
}

impl<T> GoldValue<T> {
    pub fn is_unspecified(&self) -> bool {
        matches!(self, GoldValue::Unspecified)
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            GoldValue::Value(v) => Some(v),
            _ => None,
        }
    }

    fn asked(value: Option<T>) -> Self {
        value.map_or(GoldValue::NotApplicable, GoldValue::Value)
    }
}

impl<T: Serialize> Serialize for GoldValue<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GoldValue::Unspecified => s.serialize_str(UNSPECIFIED),
            GoldValue::NotApplicable => s.serialize_str(NA),
            GoldValue::Value(v) => v.serialize(s),
        }
    }
}

impl<'de, T: DeserializeOwned> Deserialize<'de> for GoldValue<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        match raw.as_str() {
            Some(UNSPECIFIED) => Ok(GoldValue::Unspecified),
            Some(NA) => Ok(GoldValue::NotApplicable),
            _ => T::deserialize(raw)
                .map(GoldValue::Value)
                .map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gold {
    pub volume: GoldValue<VolumeBin>,
    pub regions: GoldValue<Vec<Region>>,
    pub shape: GoldValue<ShapeCategory>,
    pub spread: GoldValue<SpreadCategory>,
}

impl Gold {
    pub fn unspecified() -> Self {
        Gold {
            volume: GoldValue::Unspecified,
            regions: GoldValue::Unspecified,
            shape: GoldValue::Unspecified,
            spread: GoldValue::Unspecified,
        }
    }

    pub fn is_unspecified(&self, task: Task) -> bool {
        match task {
            Task::Volume => self.volume.is_unspecified(),
            Task::Region => self.regions.is_unspecified(),
            Task::Shape => self.shape.is_unspecified(),
            Task::Spread => self.spread.is_unspecified(),
        }
    }

    fn for_tasks(tasks: TaskSet, desc: &TaskDescriptors) -> Self {
        let mut gold = Gold::unspecified();
        for task in tasks.tasks() {
            match task {
                Task::Volume => gold.volume = GoldValue::asked(desc.volume),
                Task::Region => gold.regions = GoldValue::asked(desc.regions.clone()),
                Task::Shape => gold.shape = GoldValue::asked(desc.shape),
                Task::Spread => gold.spread = GoldValue::asked(desc.spread),
            }
        }
        gold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OosKind {
    None,
    Partial,
    Full,
}

impl OosKind {
    pub const ALL: [OosKind; 3] = [OosKind::None, OosKind::Partial, OosKind::Full];

    pub fn of(kind: TemplateKind) -> Self {
        match kind {
            TemplateKind::Multitask => OosKind::None,
            TemplateKind::PartialOos => OosKind::Partial,
            TemplateKind::FullOos => OosKind::Full,
        }
    }

    pub fn is_out_of_scope(self) -> bool {
        self != OosKind::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// One line of the output dataset. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub record_id: String,
    pub study_id: String,
    pub label_name: String,
    pub template_id: String,
    pub kind: TemplateKind,
    pub task_set: TaskSet,
    pub question: String,
    pub answer: String,
    pub gold: Gold,
    pub oos: OosKind,
    pub split: Option<Split>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// `a`, `a and b`, `a, b and c`.
pub fn format_region_list(regions: &[Region]) -> String {
    let names: Vec<&str> = regions.iter().map(|r| r.as_str()).collect();
    match names.as_slice() {
        [] => "no mapped region".to_string(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn fill(text: &str, template: &Template, desc: &TaskDescriptors) -> Result<String> {
    let mut out = text.to_string();
    for name in placeholders(text)? {
        let value = match name.as_str() {
            LABEL => desc.label_name.clone(),
            "volume" => desc.volume.map_or(NA.into(), |v| v.as_str().into()),
            "regions" => desc.regions.as_deref().map_or(NA.into(), format_region_list),
            "shape" => desc.shape.map_or(NA.into(), |v| v.as_str().into()),
            "spread" => desc.spread.map_or(NA.into(), |v| v.as_str().into()),
            other => {
                return Err(Error::Template(format!(
                    "{}: unresolvable placeholder {{{other}}}",
                    template.id
                )))
            }
        };
        out = out.replace(&format!("{{{name}}}"), &value);
    }
    Ok(out)
}

/// Substitute descriptor values into a template.
pub fn render(template: &Template, desc: &TaskDescriptors) -> Result<QaPair> {
    Ok(QaPair {
        question: fill(&template.question, template, desc)?,
        answer: fill(&template.answer, template, desc)?,
    })
}

fn union_of(templates: &[&Template], skip: Option<usize>) -> TaskSet {
    templates
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .fold(TaskSet::EMPTY, |u, (_, t)| u.union(t.tasks))
}

/// Four distinct multitask templates covering all tasks. A uniform draw is
/// repaired, when needed, by swapping one slot for an unused template so
/// that the union becomes complete; the swap is uniform over all such
/// (slot, template) pairs.
fn draw_multitask<'b>(pool: &[&'b Template], rng: &mut impl Rng) -> Vec<&'b Template> {
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), MULTITASK_PER_LABEL).into_vec();
    let chosen: Vec<&Template> = picked.iter().map(|&i| pool[i]).collect();
    if union_of(&chosen, None) != TaskSet::FULL {
        let used: BTreeSet<usize> = picked.iter().copied().collect();
        let mut swaps = Vec::new();
        for slot in 0..MULTITASK_PER_LABEL {
            let rest = union_of(&chosen, Some(slot));
            for (j, t) in pool.iter().enumerate() {
                if !used.contains(&j) && rest.union(t.tasks) == TaskSet::FULL {
                    swaps.push((slot, j));
                }
            }
        }
        let &(slot, j) = swaps
            .choose(rng)
            .expect("a bank with every task subset always admits a one-slot repair");
        picked[slot] = j;
    }
    picked.into_iter().map(|i| pool[i]).collect()
}

fn record(desc: &TaskDescriptors, template: &Template, k: usize) -> Result<DatasetRecord> {
    let qa = render(template, desc)?;
    let gold = match template.kind {
        TemplateKind::FullOos => Gold::unspecified(),
        _ => Gold::for_tasks(template.tasks, desc),
    };
    let mut warnings = Vec::new();
    let clamped = desc.measurements.as_ref().is_some_and(|m| m.volume_clamped);
    if clamped && template.tasks.contains(Task::Volume) {
        warnings.push("volume_clamped".to_string());
    }
    Ok(DatasetRecord {
        record_id: format!("{}/{}/{k}", desc.study_id, desc.label_name),
        study_id: desc.study_id.clone(),
        label_name: desc.label_name.clone(),
        template_id: template.id.clone(),
        kind: template.kind,
        task_set: template.tasks,
        question: qa.question,
        answer: qa.answer,
        gold,
        oos: OosKind::of(template.kind),
        split: None,
        warnings,
    })
}

/// The six records for one (study, label): four multitask records covering
/// every task, one partially and one fully out-of-scope record.
pub fn sample_questions(
    desc: &TaskDescriptors,
    bank: &TemplateBank,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    let mut rng = stream(seed, &["qagen", &desc.study_id, &desc.label_name]);
    let multitask: Vec<&Template> = bank.of_kind(TemplateKind::Multitask).collect();
    let partial: Vec<&Template> = bank.of_kind(TemplateKind::PartialOos).collect();
    let full: Vec<&Template> = bank.of_kind(TemplateKind::FullOos).collect();
    if multitask.len() < MULTITASK_PER_LABEL || partial.is_empty() || full.is_empty() {
        return Err(Error::BankCapacity(format!(
            "{} multitask, {} partial, {} full templates",
            multitask.len(),
            partial.len(),
            full.len()
        )));
    }
    let mut chosen = draw_multitask(&multitask, &mut rng);
    chosen.push(partial[rng.gen_range(0..partial.len())]);
    chosen.push(full[rng.gen_range(0..full.len())]);
    chosen
        .into_iter()
        .enumerate()
        .map(|(k, t)| record(desc, t, k))
        .collect()
}

/// Records for all descriptors in input order, optionally stamped with a
/// study split. Parallel over descriptors; the output does not depend on the
/// thread count.
pub fn generate_records(
    descriptors: &[TaskDescriptors],
    bank: &TemplateBank,
    seed: u64,
    splits: Option<&BTreeMap<String, Split>>,
) -> Result<Vec<DatasetRecord>> {
    use rayon::prelude::*;
    let per_label: Vec<Vec<DatasetRecord>> = descriptors
        .par_iter()
        .map(|d| {
            let mut records = sample_questions(d, bank, seed)?;
            if let Some(map) = splits {
                let split = map.get(&d.study_id).copied();
                records.iter_mut().for_each(|r| r.split = split);
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(per_label.into_iter().flatten().collect())
}

/// Study-level split: ⌊0.8n⌋ train, ⌊0.1n⌋ validation, the rest test.
pub fn split_dataset(study_ids: &[String], seed: u64) -> BTreeMap<String, Split> {
    let mut ids: Vec<&String> = study_ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut stream(seed, &["split"]));
    let n = ids.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect()
}

/// Monte-Carlo estimate of the fraction of records leaving each task
/// unspecified under the sampling protocol with `bank`.
pub fn predicted_unspecified(bank: &TemplateBank, trials: usize, seed: u64) -> Result<[f64; 4]> {
    let mut counts = [0usize; 4];
    for trial in 0..trials {
        let desc = TaskDescriptors::absent("monte-carlo", &trial.to_string());
        for r in sample_questions(&desc, bank, seed)? {
            for (i, task) in Task::ALL.iter().enumerate() {
                counts[i] += r.gold.is_unspecified(*task) as usize;
            }
        }
    }
    let total = (trials * RECORDS_PER_LABEL) as f64;
    Ok(counts.map(|c| c as f64 / total))
}
