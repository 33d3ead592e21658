//! Study discovery and loading onto the common RAS working grid.
//!
//! A data directory holds one subdirectory per study. Each study directory
//! contains a label volume whose file name ends in `seg.nii` or
//! `seg.nii.gz`, and a skull-stripped T1 whose stem ends in `t1` or `t1n`
//! (or contains `brain`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mpvqa::qagen::{LabelConfig, Study};
use mpvqa::regions::{load_region_map, Atlas};
use mpvqa::volume::{conform_to_ras, read_nifti, Interpolation, LabelMask};

use crate::exit::{data, require, usage};

#[derive(Debug, Clone)]
pub struct StudyFiles {
    pub study_id: String,
    pub seg: PathBuf,
    pub t1: PathBuf,
}

fn stem(name: &str) -> &str {
    name.strip_suffix(".gz")
        .unwrap_or(name)
        .strip_suffix(".nii")
        .unwrap_or(name)
}

fn is_nifti(name: &str) -> bool {
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn find_files(dir: &Path) -> Result<(Option<PathBuf>, Option<PathBuf>)> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| is_nifti(n))
        .collect();
    names.sort();
    let lower = |n: &String| stem(n).to_ascii_lowercase();
    let seg = names.iter().find(|n| lower(n).ends_with("seg"));
    let t1 = names.iter().find(|n| {
        let s = lower(n);
        s.ends_with("t1") || s.ends_with("t1n") || s.contains("brain")
    });
    Ok((seg.map(|n| dir.join(n)), t1.map(|n| dir.join(n))))
}

/// Study directories in name order. Directories without a label volume are
/// skipped; a label volume without a T1 is a data error for that study.
pub fn discover(data_dir: &Path) -> Result<Vec<Result<StudyFiles, (String, String)>>> {
    require(data_dir, "data directory")?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(data_dir)
        .with_context(|| format!("listing {}", data_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        let study_id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match find_files(&dir)? {
            (Some(seg), Some(t1)) => out.push(Ok(StudyFiles { study_id, seg, t1 })),
            (Some(_), None) => out.push(Err((study_id, "no T1 volume found".to_string()))),
            (None, _) => {}
        }
    }
    if out.is_empty() {
        return Err(data(format!("no study directories with a label volume in {}", data_dir.display())));
    }
    Ok(out)
}

pub fn load_labels_config(path: &Path, min_overlap: Option<usize>) -> Result<LabelConfig> {
    require(path, "labels config")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = LabelConfig::from_key_values(&text)?;
    if let Some(m) = min_overlap {
        config.min_overlap_voxels = m;
    }
    Ok(config)
}

pub fn load_atlas(atlas: &Path, region_map: &Path, spacing: [f64; 3]) -> Result<Atlas> {
    require(atlas, "atlas")?;
    require(region_map, "region map")?;
    let map = load_region_map(region_map)?;
    let labels = conform_to_ras(&read_nifti(atlas)?, spacing, Interpolation::Nearest)?;
    Ok(Atlas::new(labels, map, atlas.display().to_string())?)
}

/// Reads and conforms one study. Label values present in the volume but not
/// configured get placeholder names; they are never described.
pub fn load_study(files: &StudyFiles, config: &LabelConfig, spacing: [f64; 3]) -> Result<Study> {
    let seg = conform_to_ras(&read_nifti(&files.seg)?, spacing, Interpolation::Nearest)?;
    let brain = conform_to_ras(&read_nifti(&files.t1)?, spacing, Interpolation::Trilinear)?;
    let mut names: BTreeMap<u32, String> = config.labels.iter().cloned().collect();
    for &v in &seg.data {
        if v > 0.0 && v.fract() == 0.0 {
            names.entry(v as u32).or_insert_with(|| format!("unconfigured label {v}"));
        }
    }
    let labels = LabelMask::new(seg, names)?;
    Ok(Study {
        study_id: files.study_id.clone(),
        brain,
        labels,
    })
}

pub fn parse_spacing(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("spacing {text:?} is not a number list")))?;
    let spacing = match parts.as_slice() {
        [s] => [*s; 3],
        [a, b, c] => [*a, *b, *c],
        _ => return Err(usage(format!("spacing {text:?} needs one or three values"))),
    };
    if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(usage(format!("spacing {text:?} must be positive")));
    }
    Ok(spacing)
}
