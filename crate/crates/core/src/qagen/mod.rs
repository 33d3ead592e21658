//! From label masks to templated question/answer datasets.

mod bank;
mod sample;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{connected_components, spread_classify, SpreadCategory};
use crate::regions::{
    check_atlas_grid, region_overlap, relative_volume, volume_bin, Atlas, Region, VolumeBin,
};
use crate::shape::{describe_shape, ShapeCategory, ShapeMetrics};
use crate::volume::{LabelMask, Volume3D};

pub use bank::{Template, TemplateBank, TemplateKind, TaskSet};
pub use sample::{
    format_region_list, generate_records, predicted_unspecified, render, sample_questions,
    split_dataset, DatasetRecord, GoldValue, Gold, OosKind, QaPair, Split, RECORDS_PER_LABEL, UNSPECIFIED,
};
pub use stats::{stats, FrequencyRow, FrequencyTable};

/// The four answerable tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Volume,
    Region,
    Shape,
    Spread,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Volume, Task::Region, Task::Shape, Task::Spread];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Volume => "volume",
            Task::Region => "region",
            Task::Shape => "shape",
            Task::Spread => "spread",
        }
    }

    /// Placeholder carrying this task's answer.
    pub fn placeholder(self) -> &'static str {
        match self {
            Task::Region => "regions",
            other => other.as_str(),
        }
    }

    pub(crate) fn bit(self) -> u8 {
        1 << self as u8
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Template(format!("unknown task {s:?}")))
    }
}

/// Raw quantities behind a descriptor, kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub voxel_count: usize,
    pub relative_volume: f64,
    #[serde(default)]
    pub volume_clamped: bool,
    pub region_overlap_voxels: Vec<(Region, usize)>,
    pub n_components: usize,
    pub core_fraction: f64,
    pub shape_metrics: ShapeMetrics,
}

/// Per (study, label) answers to the four tasks. Either all four are N/A
/// (the label is absent) or none is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptors {
    pub study_id: String,
    pub label_name: String,
    #[serde(with = "crate::na")]
    pub volume: Option<VolumeBin>,
    /// Regions by descending overlap; empty when the label overlaps no atlas
    /// region by the minimum amount.
    #[serde(with = "crate::na")]
    pub regions: Option<Vec<Region>>,
    #[serde(with = "crate::na")]
    pub shape: Option<ShapeCategory>,
    #[serde(with = "crate::na")]
    pub spread: Option<SpreadCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<Measurements>,
}

impl TaskDescriptors {
    pub fn absent(study_id: &str, label_name: &str) -> Self {
        TaskDescriptors {
            study_id: study_id.into(),
            label_name: label_name.into(),
            volume: None,
            regions: None,
            shape: None,
            spread: None,
            measurements: None,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.volume.is_none()
    }
}

/// One study on the working grid.
#[derive(Debug, Clone)]
pub struct Study {
    pub study_id: String,
    /// Skull-stripped T1: nonzero voxels define the brain.
    pub brain: Volume3D,
    pub labels: LabelMask,
}

/// Which label values to describe and under what names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub labels: Vec<(u32, String)>,
    pub min_overlap_voxels: usize,
}

impl LabelConfig {
    pub fn new(labels: Vec<(u32, String)>) -> Self {
        LabelConfig {
            labels,
            min_overlap_voxels: crate::regions::DEFAULT_MIN_OVERLAP_VOXELS,
        }
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let map = crate::regions::parse_key_values(text)?;
        if map.is_empty() {
            return Err(Error::Config("label configuration lists no labels".into()));
        }
        Ok(Self::new(map.into_iter().collect()))
    }
}

/// Describe every configured label of one study.
pub fn compute_descriptors(
    study: &Study,
    atlas: &Atlas,
    config: &LabelConfig,
) -> Result<Vec<TaskDescriptors>> {
    if !study.brain.same_grid(study.labels.volume()) {
        return Err(Error::Geometry(format!(
            "{}: brain and label volumes are on different grids",
            study.study_id
        )));
    }
    check_atlas_grid(atlas, &study.brain)?;
    config
        .labels
        .iter()
        .map(|(value, name)| describe_label(study, atlas, *value, name, config.min_overlap_voxels))
        .collect()
}

fn describe_label(
    study: &Study,
    atlas: &Atlas,
    value: u32,
    name: &str,
    min_overlap: usize,
) -> Result<TaskDescriptors> {
    let mask = study.labels.binary(value);
    if mask.is_empty() {
        return Ok(TaskDescriptors::absent(&study.study_id, name));
    }
    let fraction = relative_volume(&mask, &study.brain)?;
    let vol = volume_bin(fraction);
    let assignment = region_overlap(&mask, atlas, min_overlap)?.expect("mask is nonempty");
    let labeling = connected_components(&mask);
    let spread = spread_classify(&labeling);
    let (shape, metrics) = describe_shape(&labeling)?.expect("mask is nonempty");
    Ok(TaskDescriptors {
        study_id: study.study_id.clone(),
        label_name: name.to_string(),
        volume: Some(vol.bin),
        regions: Some(assignment.regions.clone()),
        shape: Some(shape),
        spread: spread.category,
        measurements: Some(Measurements {
            voxel_count: mask.count(),
            relative_volume: fraction,
            volume_clamped: vol.clamped,
            region_overlap_voxels: assignment
                .regions
                .iter()
                .copied()
                .zip(assignment.overlap_counts.iter().copied())
                .collect(),
            n_components: spread.n_components,
            core_fraction: spread.core_fraction,
            shape_metrics: metrics,
        }),
    })
}

#[cfg(test)]
mod tests;
