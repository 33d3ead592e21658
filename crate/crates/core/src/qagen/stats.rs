//! Label-frequency tables over generated records.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::sample::{DatasetRecord, GoldValue, UNSPECIFIED};
use crate::morphology::SpreadCategory;
use crate::na::NA;
use crate::regions::{Region, VolumeBin};
use crate::shape::ShapeCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub task: String,
    pub label: String,
    /// Percentage of records.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub rows: Vec<FrequencyRow>,
    pub questions: usize,
    pub studies: usize,
    pub unique_questions: usize,
    pub unique_answers: usize,
}

impl FrequencyTable {
    pub fn frequency(&self, task: &str, label: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.label == label)
            .map(|r| r.frequency)
    }

    /// CSV with header `task,label,frequency`, one decimal place.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task", "label", "frequency"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.task.as_str(), r.label.as_str(), &format!("{:.1}", r.frequency)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

fn tally<T>(
    rows: &mut Vec<FrequencyRow>,
    records: &[DatasetRecord],
    task: &str,
    get: impl Fn(&DatasetRecord) -> &GoldValue<T>,
    labels: &[&str],
    hit: impl Fn(&T, usize) -> bool,
) {
    let n = records.len().max(1) as f64;
    let mut push = |label: &str, count: usize| {
        rows.push(FrequencyRow {
            task: task.to_string(),
            label: label.to_string(),
            frequency: 100.0 * count as f64 / n,
        })
    };
    let count = |pred: &dyn Fn(&GoldValue<T>) -> bool| records.iter().filter(|r| pred(get(r))).count();
    push(UNSPECIFIED, count(&|g| g.is_unspecified()));
    push(NA, count(&|g| matches!(g, GoldValue::NotApplicable)));
    for (k, label) in labels.iter().enumerate() {
        push(label, count(&|g| g.value().is_some_and(|v| hit(v, k))));
    }
}

/// Per-task percentage of records carrying each gold value, the
/// out-of-scope split, and dataset totals. Region rows count membership, so
/// they can sum past 100.
pub fn stats(records: &[DatasetRecord]) -> FrequencyTable {
    let mut rows = Vec::new();
    tally(
        &mut rows,
        records,
        "Volume",
        |r| &r.gold.volume,
        &VolumeBin::ALL.map(VolumeBin::as_str),
        |v, k| *v == VolumeBin::ALL[k],
    );
    tally(
        &mut rows,
        records,
        "Region",
        |r| &r.gold.regions,
        &Region::ALL.map(Region::as_str),
        |v, k| v.contains(&Region::ALL[k]),
    );
    tally(
        &mut rows,
        records,
        "Shape",
        |r| &r.gold.shape,
        &ShapeCategory::ALL.map(ShapeCategory::as_str),
        |v, k| *v == ShapeCategory::ALL[k],
    );
    tally(
        &mut rows,
        records,
        "Spread",
        |r| &r.gold.spread,
        &SpreadCategory::ALL.map(SpreadCategory::as_str),
        |v, k| *v == SpreadCategory::ALL[k],
    );
    let n = records.len().max(1) as f64;
    let oos = records.iter().filter(|r| r.oos.is_out_of_scope()).count();
    for (label, count) in [("Not out-of-scope", records.len() - oos), ("Out-of-scope", oos)] {
        rows.push(FrequencyRow {
            task: "Out-of-scope".into(),
            label: label.into(),
            frequency: 100.0 * count as f64 / n,
        });
    }
    let distinct = |f: fn(&DatasetRecord) -> &str| records.iter().map(f).collect::<BTreeSet<_>>().len();
    FrequencyTable {
        rows,
        questions: records.len(),
        studies: distinct(|r| r.study_id.as_str()),
        unique_questions: distinct(|r| r.question.as_str()),
        unique_answers: distinct(|r| r.answer.as_str()),
    }
}
