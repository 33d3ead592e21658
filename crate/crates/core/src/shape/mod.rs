//! Per-component shape descriptors and the shape category rule.
//!
//! For a component of `n` voxels with spacing `s`:
//!
//! * volume `V = n·ΔV`, area `A` from the marching-cubes mesh,
//! * sphericity `Φ = π^{1/3}(6V)^{2/3}/A` and compactness `C = A/V`,
//! * elongation `E = √(λ1/λ2)` and flatness `F = √(λ3/λ2)` from the biased
//!   covariance of voxel-centre coordinates,
//! * solidity `S = V/V_hull`, where the hull is taken over voxel corners.

mod hull;
mod mesh;
mod tables;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::morphology::{ComponentLabeling, CORE_FRACTION_THRESHOLD};
use crate::volume::BinaryMask;

pub use hull::{convex_hull, convex_hull_volume, ConvexHull};
pub use mesh::{marching_cubes, mesh_area, single_voxel_mesh, SurfaceMesh, ISO_LEVEL};

/// Total volume below which a lesion is a "focus" (0.1 cm³).
pub const FOCUS_VOLUME_MM3: f64 = 100.0;
pub const ROUND_MIN_SPHERICITY: f64 = 0.85;
pub const ROUND_MAX_ELONGATION: f64 = 1.3;
pub const OVAL_MIN_SPHERICITY: f64 = 0.60;
pub const OVAL_MAX_ELONGATION: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    /// mm³
    pub volume: f64,
    /// mm²
    pub area: f64,
    pub sphericity: f64,
    /// mm⁻¹
    pub compactness: f64,
    /// Covariance eigenvalues in mm², descending.
    pub eigenvalues: [f64; 3],
    pub elongation: f64,
    pub flatness: f64,
    pub solidity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeCategory {
    Focus,
    Round,
    Oval,
    Elongated,
    Irregular,
}

impl ShapeCategory {
    pub const ALL: [ShapeCategory; 5] = [
        ShapeCategory::Focus,
        ShapeCategory::Round,
        ShapeCategory::Oval,
        ShapeCategory::Elongated,
        ShapeCategory::Irregular,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeCategory::Focus => "focus",
            ShapeCategory::Round => "round",
            ShapeCategory::Oval => "oval",
            ShapeCategory::Elongated => "elongated",
            ShapeCategory::Irregular => "irregular",
        }
    }
}

impl std::fmt::Display for ShapeCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Eigenvalues (descending, mm²) of the biased covariance of voxel centres.
pub fn pca_axes(voxels: &[[usize; 3]], spacing: [f64; 3]) -> [f64; 3] {
    eigenvalues(&covariance(voxels, spacing))
}

fn covariance(voxels: &[[usize; 3]], spacing: [f64; 3]) -> Matrix3<f64> {
    let n = voxels.len() as f64;
    let mut mean = [0.0; 3];
    for v in voxels {
        for a in 0..3 {
            mean[a] += v[a] as f64 * spacing[a] / n;
        }
    }
    let mut cov = Matrix3::zeros();
    for v in voxels {
        let d = [0, 1, 2].map(|a| v[a] as f64 * spacing[a] - mean[a]);
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c] / n;
            }
        }
    }
    cov
}

fn eigenvalues(cov: &Matrix3<f64>) -> [f64; 3] {
    let mut ev: Vec<f64> = SymmetricEigen::new(*cov)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// Eigenvalues used for the elongation and flatness ratios. Components with
/// fewer than three voxels or a vanishing minor axis get the covariance of a
/// uniform voxel, `diag(s²/12)`, added before decomposition.
pub fn regularized_axes(voxels: &[[usize; 3]], spacing: [f64; 3]) -> [f64; 3] {
    let mut cov = covariance(voxels, spacing);
    let raw = eigenvalues(&cov);
    let scale = spacing.iter().map(|s| s * s).fold(0.0, f64::max);
    if voxels.len() < 3 || raw[2] <= 1e-12 * scale {
        for a in 0..3 {
            cov[(a, a)] += spacing[a] * spacing[a] / 12.0;
        }
        return eigenvalues(&cov);
    }
    raw
}

/// Voxel corners that can lie on the hull: for every (y, z) row of voxels only
/// the corners of the first and last voxel in the row matter.
fn hull_candidates(voxels: &[[usize; 3]], spacing: [f64; 3]) -> Vec<[f64; 3]> {
    let mut rows: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for v in voxels {
        rows.entry((v[1], v[2]))
            .and_modify(|r| {
                r.0 = r.0.min(v[0]);
                r.1 = r.1.max(v[0]);
            })
            .or_insert((v[0], v[0]));
    }
    // Corner lattice: corner c along an axis sits at (c - ½)·s.
    let mut corners = std::collections::BTreeSet::new();
    for (&(y, z), &(x0, x1)) in &rows {
        for cy in [y, y + 1] {
            for cz in [z, z + 1] {
                corners.insert([x0, cy, cz]);
                corners.insert([x1 + 1, cy, cz]);
            }
        }
    }
    corners
        .into_iter()
        .map(|c| [0, 1, 2].map(|a| (c[a] as f64 - 0.5) * spacing[a]))
        .collect()
}

/// All metrics for one nonempty component given by its voxel coordinates.
pub fn metrics_from_voxels(voxels: &[[usize; 3]], spacing: [f64; 3]) -> Result<ShapeMetrics> {
    let dv: f64 = spacing.iter().product();
    let volume = voxels.len() as f64 * dv;
    let mesh = if voxels.len() == 1 {
        single_voxel_mesh(voxels[0], spacing)
    } else {
        marching_cubes(voxels, spacing)?
    };
    let area = mesh_area(&mesh);
    let sphericity = std::f64::consts::PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / area;
    let eigenvalues = regularized_axes(voxels, spacing);
    let hull_volume = convex_hull_volume(&hull_candidates(voxels, spacing))?;
    Ok(ShapeMetrics {
        volume,
        area,
        sphericity,
        compactness: area / volume,
        eigenvalues,
        elongation: (eigenvalues[0] / eigenvalues[1]).sqrt(),
        flatness: (eigenvalues[2] / eigenvalues[1]).sqrt(),
        solidity: volume / hull_volume,
    })
}

/// Metrics of a single-component binary mask.
pub fn shape_metrics(component: &BinaryMask) -> Result<ShapeMetrics> {
    metrics_from_voxels(&component.voxels(), component.spacing)
}

/// Metrics for every component of a labelling, in component order.
pub fn component_metrics(labeling: &ComponentLabeling) -> Result<Vec<ShapeMetrics>> {
    use rayon::prelude::*;
    labeling
        .component_voxel_lists()
        .par_iter()
        .map(|voxels| metrics_from_voxels(voxels, labeling.spacing))
        .collect()
}

/// The core component's metrics when there is one component or the core holds
/// at least 70% of the volume, otherwise the unweighted mean over components.
///
/// # Panics
///
/// If `per_component` is empty.
pub fn aggregate_metrics(
    per_component: &[ShapeMetrics],
    core_fraction: f64,
    n_components: usize,
) -> ShapeMetrics {
    assert!(!per_component.is_empty(), "aggregation needs at least one component");
    if n_components == 1 || core_fraction >= CORE_FRACTION_THRESHOLD {
        return per_component[0];
    }
    let n = per_component.len() as f64;
    let mean = |f: fn(&ShapeMetrics) -> f64| per_component.iter().map(f).sum::<f64>() / n;
    ShapeMetrics {
        volume: mean(|m| m.volume),
        area: mean(|m| m.area),
        sphericity: mean(|m| m.sphericity),
        compactness: mean(|m| m.compactness),
        eigenvalues: [
            mean(|m| m.eigenvalues[0]),
            mean(|m| m.eigenvalues[1]),
            mean(|m| m.eigenvalues[2]),
        ],
        elongation: mean(|m| m.elongation),
        flatness: mean(|m| m.flatness),
        solidity: mean(|m| m.solidity),
    }
}

/// First matching case wins: focus, round, oval, elongated, irregular.
pub fn shape_classify(agg: &ShapeMetrics, total_volume_mm3: f64) -> ShapeCategory {
    classify(agg.sphericity, agg.elongation, total_volume_mm3)
}

pub fn classify(sphericity: f64, elongation: f64, total_volume_mm3: f64) -> ShapeCategory {
    if total_volume_mm3 < FOCUS_VOLUME_MM3 {
        ShapeCategory::Focus
    } else if sphericity >= ROUND_MIN_SPHERICITY && elongation <= ROUND_MAX_ELONGATION {
        ShapeCategory::Round
    } else if (OVAL_MIN_SPHERICITY..ROUND_MIN_SPHERICITY).contains(&sphericity)
        && elongation > ROUND_MAX_ELONGATION
        && elongation <= OVAL_MAX_ELONGATION
    {
        ShapeCategory::Oval
    } else if elongation > OVAL_MAX_ELONGATION {
        ShapeCategory::Elongated
    } else {
        ShapeCategory::Irregular
    }
}

/// Classify the whole labelled mask; `None` when it is empty.
pub fn describe_shape(labeling: &ComponentLabeling) -> Result<Option<(ShapeCategory, ShapeMetrics)>> {
    let Some(core_fraction) = labeling.core_fraction() else {
        return Ok(None);
    };
    let per_component = component_metrics(labeling)?;
    let agg = aggregate_metrics(&per_component, core_fraction, labeling.n_components());
    Ok(Some((shape_classify(&agg, labeling.total_volume()), agg)))
}

#[cfg(test)]
mod tests;
