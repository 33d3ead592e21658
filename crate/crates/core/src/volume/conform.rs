//! Reorientation and resampling onto an axis-aligned RAS grid.

use nalgebra::Vector4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{linear_index, Volume3D, VolumeHeader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Required for label volumes: values are copied, never blended.
    Nearest,
    Trilinear,
}

/// Resample `vol` onto an RAS grid with the given spacing.
///
/// The output grid covers the world-space bounding box of the input field of
/// view (voxel edges, not centres), so an input that is already RAS with the
/// target spacing maps onto itself voxel for voxel. Samples falling outside the
/// input are zero.
pub fn conform_to_ras(
    vol: &Volume3D,
    target_spacing: [f64; 3],
    interpolation: Interpolation,
) -> Result<Volume3D> {
    if target_spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Geometry(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }
    let src = vol.header.matrix();
    let inverse = src
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Geometry("affine is not invertible".into()))?;

    let dims = vol.header.dims;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let idx = [0, 1, 2].map(|a| {
            if corner & (1 << a) == 0 {
                -0.5
            } else {
                dims[a] as f64 - 0.5
            }
        });
        let w = vol.header.world(idx);
        for a in 0..3 {
            lo[a] = lo[a].min(w[a]);
            hi[a] = hi[a].max(w[a]);
        }
    }
    let out_dims = [0, 1, 2].map(|a| {
        let n = ((hi[a] - lo[a]) / target_spacing[a] - 1e-6).ceil();
        (n as usize).max(1)
    });
    let mut affine = [[0.0; 4]; 4];
    for a in 0..3 {
        affine[a][a] = target_spacing[a];
        affine[a][3] = lo[a] + 0.5 * target_spacing[a];
    }
    affine[3][3] = 1.0;
    let header = VolumeHeader::with_affine(out_dims, target_spacing, affine, vol.header.datatype)?;

    // Output index → input continuous index.
    let map = inverse * header.matrix();
    let plane = out_dims[0] * out_dims[1];
    let mut data = vec![0.0; header.n_voxels()];
    data.par_chunks_mut(plane).enumerate().for_each(|(z, slab)| {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let p = map * Vector4::new(x as f64, y as f64, z as f64, 1.0);
                let q = [p[0], p[1], p[2]];
                slab[x + out_dims[0] * y] = match interpolation {
                    Interpolation::Nearest => sample_nearest(vol, q),
                    Interpolation::Trilinear => sample_trilinear(vol, q),
                };
            }
        }
    });
    Volume3D::new(header, data)
}

fn sample_nearest(vol: &Volume3D, q: [f64; 3]) -> f64 {
    let dims = vol.header.dims;
    let mut idx = [0usize; 3];
    for a in 0..3 {
        // Half-way ties go to the lower index; they only occur for spacings
        // that are odd multiples of half the input spacing.
        let r = (q[a] - 0.5).ceil();
        if r < 0.0 || r >= dims[a] as f64 {
            return 0.0;
        }
        idx[a] = r as usize;
    }
    vol.data[linear_index(dims, idx[0], idx[1], idx[2])]
}

fn sample_trilinear(vol: &Volume3D, q: [f64; 3]) -> f64 {
    let dims = vol.header.dims;
    let base = q.map(f64::floor);
    let frac = [q[0] - base[0], q[1] - base[1], q[2] - base[2]];
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut weight = 1.0;
        let mut idx = [0i64; 3];
        for a in 0..3 {
            let upper = corner & (1 << a) != 0;
            idx[a] = base[a] as i64 + upper as i64;
            weight *= if upper { frac[a] } else { 1.0 - frac[a] };
        }
        if weight == 0.0 {
            continue;
        }
        if (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < dims[a]) {
            acc += weight
                * vol.data[linear_index(dims, idx[0] as usize, idx[1] as usize, idx[2] as usize)];
        }
    }
    acc
}
