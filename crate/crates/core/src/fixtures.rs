//! Synthetic masks, atlases and studies with known geometry.
//!
//! These back the unit tests, the acceptance suite and the `fixture` CLI
//! command, so they live in the library rather than in test code.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::qagen::{Study, TaskDescriptors};
use crate::regions::{Atlas, Region};
use crate::volume::{BinaryMask, Datatype, LabelMask, Volume3D, VolumeHeader};

/// Voxels whose centres lie within `radius` of `center` (inclusive).
pub fn sphere_voxels(center: [usize; 3], radius: f64) -> Vec<[usize; 3]> {
    ellipsoid_voxels(center, [radius; 3])
}

/// Voxels inside the axis-aligned ellipsoid with the given semi-axes.
pub fn ellipsoid_voxels(center: [usize; 3], semi_axes: [f64; 3]) -> Vec<[usize; 3]> {
    let reach = semi_axes.map(|s| s.floor() as usize);
    let mut out = Vec::new();
    for z in center[2] - reach[2]..=center[2] + reach[2] {
        for y in center[1] - reach[1]..=center[1] + reach[1] {
            for x in center[0] - reach[0]..=center[0] + reach[0] {
                let p = [x, y, z];
                let r: f64 = (0..3)
                    .map(|a| {
                        let d = (p[a] as f64 - center[a] as f64) / semi_axes[a];
                        d * d
                    })
                    .sum();
                if r <= 1.0 {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Axis-aligned box of voxels starting at `origin`.
pub fn box_voxels(origin: [usize; 3], size: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for z in origin[2]..origin[2] + size[2] {
        for y in origin[1]..origin[1] + size[1] {
            for x in origin[0]..origin[0] + size[0] {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// A 26-connected random blob grown from the centre of a `side³` grid.
pub fn random_blob(seed: u64, side: usize, target_voxels: usize) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = BinaryMask::empty([side; 3], [1.0; 3]);
    let c = side / 2;
    let mut members = vec![[c, c, c]];
    mask.set(c, c, c, true);
    let limit = target_voxels.min(side * side * side / 2);
    while members.len() < limit {
        let base = members[rng.gen_range(0..members.len())];
        let mut next = base;
        for a in 0..3 {
            let step: i64 = rng.gen_range(-1..=1);
            next[a] = (base[a] as i64 + step).clamp(1, side as i64 - 2) as usize;
        }
        if !mask.get(next[0], next[1], next[2]) {
            mask.set(next[0], next[1], next[2], true);
            members.push(next);
        }
    }
    mask
}

/// A 3×3 block atlas over the x/y plane: every block carries its own atlas
/// label, mapped to one of the nine region names. Block (i, j) covers
/// `x ∈ [i·nx/3, (i+1)·nx/3)` and `y ∈ [j·ny/3, (j+1)·ny/3)`; label = 3j + i + 1
/// → `Region::ALL[3j + i]`.
pub fn block_atlas(dims: [usize; 3], spacing: [f64; 3]) -> Atlas {
    let header = VolumeHeader::new(dims, spacing, Datatype::U8).expect("valid dims");
    let mut labels = Volume3D::zeros(header);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = (3 * x / dims[0]).min(2);
                let j = (3 * y / dims[1]).min(2);
                labels.set(x, y, z, (3 * j + i + 1) as f64);
            }
        }
    }
    let region_map: BTreeMap<u32, Region> = Region::ALL
        .iter()
        .enumerate()
        .map(|(k, &r)| (k as u32 + 1, r))
        .collect();
    Atlas::new(labels, region_map, "synthetic 3x3 block atlas").expect("consistent atlas")
}

/// Volume with `value` at each listed voxel.
pub fn paint(header: &VolumeHeader, voxels: &[[usize; 3]], value: f64) -> Volume3D {
    let mut vol = Volume3D::zeros(header.clone());
    for &[x, y, z] in voxels {
        vol.set(x, y, z, value);
    }
    vol
}

/// One synthetic study: a skull-stripped "T1" brain and a label volume.
#[derive(Debug, Clone)]
pub struct SyntheticStudy {
    pub study_id: String,
    pub brain: Volume3D,
    pub labels: Volume3D,
}

/// Standard synthetic study grid.
pub const STUDY_DIMS: [usize; 3] = [48, 48, 32];

/// Deterministic synthetic studies with a handful of lesion labels.
///
/// Label 1 is a sphere whose radius and position vary per study, label 2 a
/// satellite pattern of small spheres, label 3 an elongated ellipsoid, and
/// label 4 is present only in even-numbered studies.
pub fn synthetic_studies(n: usize, seed: u64) -> Vec<SyntheticStudy> {
    let header = VolumeHeader::new(STUDY_DIMS, [1.0; 3], Datatype::U8).expect("valid dims");
    let brain_voxels = ellipsoid_voxels([24, 24, 16], [22.0, 22.0, 14.0]);
    (0..n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9));
            let brain = paint(&header, &brain_voxels, 100.0);
            let mut labels = Volume3D::zeros(header.clone());
            let r = rng.gen_range(3.0..7.0);
            let cx = rng.gen_range(12..36);
            let cy = rng.gen_range(12..36);
            for v in sphere_voxels([cx, cy, 16], r) {
                labels.set(v[0], v[1], v[2], 1.0);
            }
            let sat_x = rng.gen_range(10..24);
            for (dx, rad) in [(0usize, 3.0), (8, 1.5), (16, 1.0)] {
                let x = sat_x + dx;
                for v in sphere_voxels([x, 8, 8], rad) {
                    labels.set(v[0], v[1], v[2], 2.0);
                }
            }
            let len = rng.gen_range(8.0..14.0);
            for v in ellipsoid_voxels([24, 38, 20], [len, 2.5, 2.5]) {
                labels.set(v[0], v[1], v[2], 3.0);
            }
            if k % 2 == 0 {
                for v in box_voxels([30, 20, 24], [3, 4, 2]) {
                    labels.set(v[0], v[1], v[2], 4.0);
                }
            }
            SyntheticStudy {
                study_id: format!("study-{k:04}"),
                brain,
                labels,
            }
        })
        .collect()
}

/// Metadata-only descriptors for `n_studies × labels` without any imaging:
/// each label is absent with probability 0.13, otherwise every task gets a
/// random vocabulary value.
pub fn stub_descriptors(n_studies: usize, labels: &[&str], seed: u64) -> Vec<TaskDescriptors> {
    use crate::morphology::SpreadCategory;
    use crate::regions::VolumeBin;
    use crate::shape::ShapeCategory;

    let mut out = Vec::with_capacity(n_studies * labels.len());
    for s in 0..n_studies {
        let study_id = format!("stub-{s:05}");
        for label in labels {
            let mut rng = crate::rng::stream(seed, &["stub", &study_id, label]);
            if rng.gen_bool(0.13) {
                out.push(TaskDescriptors::absent(&study_id, label));
                continue;
            }
            let n_regions = rng.gen_range(1..=3);
            let regions = rand::seq::index::sample(&mut rng, Region::ALL.len(), n_regions)
                .into_iter()
                .map(|i| Region::ALL[i])
                .collect();
            out.push(TaskDescriptors {
                study_id: study_id.clone(),
                label_name: label.to_string(),
                volume: Some(VolumeBin::ALL[rng.gen_range(0..4)]),
                regions: Some(regions),
                shape: Some(ShapeCategory::ALL[rng.gen_range(0..ShapeCategory::ALL.len())]),
                spread: Some(SpreadCategory::ALL[rng.gen_range(0..SpreadCategory::ALL.len())]),
                measurements: None,
            });
        }
    }
    out
}

/// A [`Study`] built from a synthetic study with the given label names.
pub fn study_from_synthetic(s: &SyntheticStudy, names: &BTreeMap<u32, String>) -> Study {
    Study {
        study_id: s.study_id.clone(),
        brain: s.brain.clone(),
        labels: LabelMask::new(s.labels.clone(), names.clone()).expect("synthetic labels are named"),
    }
}

/// Label names used with [`synthetic_studies`].
pub fn synthetic_label_names() -> BTreeMap<u32, String> {
    [
        (1, "Enhancing Tissue"),
        (2, "Non-Enhancing Tumor Core"),
        (3, "Surrounding Non-enhancing FLAIR Hyperintensity"),
        (4, "Resection Cavity"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect()
}
