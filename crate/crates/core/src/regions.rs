//! Relative lesion volume and atlas-based region assignment.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{same_grid, BinaryMask, Volume3D};

/// The nine anatomical region names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Frontal,
    Parietal,
    Occipital,
    Temporal,
    Limbic,
    Insula,
    Subcortical,
    Cerebellum,
    Brainstem,
}

impl Region {
    pub const ALL: [Region; 9] = [
        Region::Frontal,
        Region::Parietal,
        Region::Occipital,
        Region::Temporal,
        Region::Limbic,
        Region::Insula,
        Region::Subcortical,
        Region::Cerebellum,
        Region::Brainstem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Frontal => "frontal",
            Region::Parietal => "parietal",
            Region::Occipital => "occipital",
            Region::Temporal => "temporal",
            Region::Limbic => "limbic",
            Region::Insula => "insula",
            Region::Subcortical => "subcortical",
            Region::Cerebellum => "cerebellum",
            Region::Brainstem => "brainstem",
        }
    }

    /// Position in [`Region::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let needle = s.trim().to_ascii_lowercase();
        Region::ALL
            .into_iter()
            .find(|r| r.as_str() == needle)
            .ok_or_else(|| Error::Config(format!("unknown region name {s:?}")))
    }
}

/// A label volume on the working grid plus the label → region mapping.
#[derive(Debug, Clone)]
pub struct Atlas {
    pub labels: Volume3D,
    pub region_map: BTreeMap<u32, Region>,
    pub provenance: String,
}

impl Atlas {
    pub fn new(
        labels: Volume3D,
        region_map: BTreeMap<u32, Region>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        for &v in &labels.data {
            if v != 0.0 && !region_map.contains_key(&(v as u32)) {
                return Err(Error::Config(format!("atlas label {v} has no region mapping")));
            }
        }
        Ok(Atlas {
            labels,
            region_map,
            provenance: provenance.into(),
        })
    }
}

/// Parse `integer = name` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| Error::Config(format!("line {}: expected `label = name`", n + 1)))?;
        let key: u32 = key
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("line {}: {key:?} is not a label", n + 1)))?;
        let value = value.trim().trim_matches('"').to_string();
        if value.is_empty() {
            return Err(Error::Config(format!("line {}: empty name", n + 1)));
        }
        if map.insert(key, value).is_some() {
            return Err(Error::Config(format!("line {}: label {key} repeated", n + 1)));
        }
    }
    Ok(map)
}

pub fn parse_region_map(text: &str) -> Result<BTreeMap<u32, Region>> {
    parse_key_values(text)?
        .into_iter()
        .map(|(k, v)| Ok((k, v.parse()?)))
        .collect()
}

pub fn load_region_map(path: impl AsRef<Path>) -> Result<BTreeMap<u32, Region>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
    parse_region_map(&text)
}

pub fn format_region_map(map: &BTreeMap<u32, Region>) -> String {
    map.iter().map(|(k, r)| format!("{k} = {r}\n")).collect()
}

/// Fraction of brain voxels (nonzero in the skull-stripped T1) covered by the
/// mask.
pub fn relative_volume(mask: &BinaryMask, brain: &Volume3D) -> Result<f64> {
    if mask.dims != brain.header.dims {
        return Err(Error::Geometry(format!(
            "mask grid {:?} differs from brain grid {:?}",
            mask.dims, brain.header.dims
        )));
    }
    let brain_voxels = brain.data.iter().filter(|&&v| v != 0.0).count();
    if brain_voxels == 0 {
        return Err(Error::DivisionUndefined("brain volume has no nonzero voxels".into()));
    }
    Ok(mask.count() as f64 / brain_voxels as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VolumeBin {
    #[serde(rename = "<1%")]
    Under1,
    #[serde(rename = "1-5%")]
    From1To5,
    #[serde(rename = "5-10%")]
    From5To10,
    #[serde(rename = "10-25%")]
    From10To25,
    #[serde(rename = "25-50%")]
    From25To50,
    #[serde(rename = "50-75%")]
    From50To75,
}

impl VolumeBin {
    pub const ALL: [VolumeBin; 6] = [
        VolumeBin::Under1,
        VolumeBin::From1To5,
        VolumeBin::From5To10,
        VolumeBin::From10To25,
        VolumeBin::From25To50,
        VolumeBin::From50To75,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VolumeBin::Under1 => "<1%",
            VolumeBin::From1To5 => "1-5%",
            VolumeBin::From5To10 => "5-10%",
            VolumeBin::From10To25 => "10-25%",
            VolumeBin::From25To50 => "25-50%",
            VolumeBin::From50To75 => "50-75%",
        }
    }
}

impl std::fmt::Display for VolumeBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A binned relative volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeDescriptor {
    pub bin: VolumeBin,
    pub fraction: f64,
    /// Set when the fraction exceeded 75% and was clamped into the top bin.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

/// Half-open bins, each boundary belonging to the upper bin. Fractions above
/// 0.75 are clamped into "50-75%" with the `clamped` flag raised.
pub fn volume_bin(fraction: f64) -> VolumeDescriptor {
    const UPPER: [(f64, VolumeBin); 5] = [
        (0.01, VolumeBin::Under1),
        (0.05, VolumeBin::From1To5),
        (0.10, VolumeBin::From5To10),
        (0.25, VolumeBin::From10To25),
        (0.50, VolumeBin::From25To50),
    ];
    let bin = UPPER
        .iter()
        .find(|(edge, _)| fraction < *edge)
        .map(|&(_, b)| b)
        .unwrap_or(VolumeBin::From50To75);
    VolumeDescriptor {
        bin,
        fraction,
        clamped: fraction > 0.75,
    }
}

/// Regions touched by a mask, ordered by descending overlap then name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionAssignment {
    pub regions: Vec<Region>,
    pub overlap_counts: Vec<usize>,
}

/// Default overlap floor in voxels at 1 mm spacing (0.01 cm³).
pub const DEFAULT_MIN_OVERLAP_VOXELS: usize = 10;

/// Intersect `mask` with the atlas and keep every region covering at least
/// `min_overlap_voxels` mask voxels. `None` (N/A) for an empty mask.
pub fn region_overlap(
    mask: &BinaryMask,
    atlas: &Atlas,
    min_overlap_voxels: usize,
) -> Result<Option<RegionAssignment>> {
    if mask.dims != atlas.labels.header.dims {
        return Err(Error::Geometry(format!(
            "mask grid {:?} differs from atlas grid {:?}",
            mask.dims, atlas.labels.header.dims
        )));
    }
    if mask.is_empty() {
        return Ok(None);
    }
    let mut counts = [0usize; 9];
    for (inside, &label) in mask.data.iter().zip(&atlas.labels.data) {
        if *inside && label != 0.0 {
            if let Some(region) = atlas.region_map.get(&(label as u32)) {
                counts[region.index()] += 1;
            }
        }
    }
    let mut hits: Vec<(Region, usize)> = Region::ALL
        .iter()
        .map(|&r| (r, counts[r.index()]))
        .filter(|&(_, c)| c > 0 && c >= min_overlap_voxels)
        .collect();
    hits.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.as_str().cmp(b.0.as_str())));
    Ok(Some(RegionAssignment {
        regions: hits.iter().map(|h| h.0).collect(),
        overlap_counts: hits.iter().map(|h| h.1).collect(),
    }))
}

/// Check that an atlas shares the mask's grid exactly (dims and affine).
pub fn check_atlas_grid(atlas: &Atlas, reference: &Volume3D) -> Result<()> {
    if same_grid(&atlas.labels.header, &reference.header) {
        Ok(())
    } else {
        Err(Error::Geometry(
            "atlas and study volumes are not on the same grid; conform both first".into(),
        ))
    }
}
