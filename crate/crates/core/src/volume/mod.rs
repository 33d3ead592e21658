//! Dense 3D volumes, NIfTI-1 I/O and RAS conformance.
//!
//! Voxel data is stored with the first axis varying fastest, exactly as it is
//! laid out on disk, so `index = x + nx * (y + ny * z)` everywhere.

mod conform;
mod nifti;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conform::{conform_to_ras, Interpolation};
pub use nifti::{parse_nifti, read_nifti, write_nifti, write_nifti_file};

/// Storage type codes from the NIfTI-1 datatype table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Datatype {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
            Datatype::I8 => 256,
            Datatype::U16 => 512,
            Datatype::U32 => 768,
            Datatype::I64 => 1024,
            Datatype::U64 => 1280,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            256 => Datatype::I8,
            512 => Datatype::U16,
            768 => Datatype::U32,
            1024 => Datatype::I64,
            1280 => Datatype::U64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn byte_size(self) -> usize {
        match self {
            Datatype::U8 | Datatype::I8 => 1,
            Datatype::I16 | Datatype::U16 => 2,
            Datatype::I32 | Datatype::U32 | Datatype::F32 => 4,
            Datatype::I64 | Datatype::U64 | Datatype::F64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, Datatype::F32 | Datatype::F64)
    }

    /// Whether `value` survives a cast to this type and back unchanged.
    pub fn represents(self, value: f64) -> bool {
        let in_range = |lo: f64, hi: f64| value.fract() == 0.0 && value >= lo && value <= hi;
        match self {
            Datatype::U8 => in_range(0.0, u8::MAX as f64),
            Datatype::I8 => in_range(i8::MIN as f64, i8::MAX as f64),
            Datatype::I16 => in_range(i16::MIN as f64, i16::MAX as f64),
            Datatype::U16 => in_range(0.0, u16::MAX as f64),
            Datatype::I32 => in_range(i32::MIN as f64, i32::MAX as f64),
            Datatype::U32 => in_range(0.0, u32::MAX as f64),
            // Beyond 2^53 the f64 round trip is lossy anyway.
            Datatype::I64 => in_range(-(2f64.powi(53)), 2f64.powi(53)),
            Datatype::U64 => in_range(0.0, 2f64.powi(53)),
            Datatype::F32 => value.is_finite() && (value as f32) as f64 == value,
            Datatype::F64 => value.is_finite(),
        }
    }
}

/// Geometry and storage metadata of a volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub datatype: Datatype,
    /// Millimetres per voxel along each voxel axis.
    pub pixdim: [f64; 3],
    /// Row-major voxel-index → world-millimetre transform.
    pub affine: [[f64; 4]; 4],
}

impl VolumeHeader {
    /// Header with a diagonal affine built from `pixdim` and a zero origin.
    pub fn new(dims: [usize; 3], pixdim: [f64; 3], datatype: Datatype) -> Result<Self> {
        let mut affine = [[0.0; 4]; 4];
        for axis in 0..3 {
            affine[axis][axis] = pixdim[axis];
        }
        affine[3][3] = 1.0;
        Self::with_affine(dims, pixdim, affine, datatype)
    }

    pub fn with_affine(
        dims: [usize; 3],
        pixdim: [f64; 3],
        affine: [[f64; 4]; 4],
        datatype: Datatype,
    ) -> Result<Self> {
        let header = VolumeHeader {
            dims,
            datatype,
            pixdim,
            affine,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Format(format!("dims must be positive, got {:?}", self.dims)));
        }
        if self.pixdim.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Format(format!(
                "pixdim must be positive and finite, got {:?}",
                self.pixdim
            )));
        }
        if self.affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("affine has non-finite entries".into()));
        }
        let det = self.rotation_block().determinant();
        if det.abs() < 1e-12 {
            return Err(Error::Geometry("affine 3x3 block is singular".into()));
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|r, c| self.affine[r][c])
    }

    pub(crate) fn rotation_block(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.affine[r][c])
    }

    /// World coordinate (mm) of a voxel centre given in continuous index space.
    pub fn world(&self, index: [f64; 3]) -> [f64; 3] {
        let p = self.matrix() * Vector4::new(index[0], index[1], index[2], 1.0);
        [p[0], p[1], p[2]]
    }

    /// Three-letter axis code, one letter per voxel axis (e.g. `"RAS"`).
    pub fn orientation(&self) -> String {
        const POS: [char; 3] = ['R', 'A', 'S'];
        const NEG: [char; 3] = ['L', 'P', 'I'];
        (0..3)
            .map(|col| {
                let mut world_axis = 0;
                for row in 1..3 {
                    if self.affine[row][col].abs() > self.affine[world_axis][col].abs() {
                        world_axis = row;
                    }
                }
                if self.affine[world_axis][col] >= 0.0 {
                    POS[world_axis]
                } else {
                    NEG[world_axis]
                }
            })
            .collect()
    }
}

/// Physical volume of one voxel in mm³.
pub fn voxel_volume(header: &VolumeHeader) -> f64 {
    header.pixdim.iter().product()
}

/// A dense scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub header: VolumeHeader,
    pub data: Vec<f64>,
}

impl Volume3D {
    pub fn new(header: VolumeHeader, data: Vec<f64>) -> Result<Self> {
        header.validate()?;
        let expected = header.n_voxels();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("volume contains NaN or infinite values".into()));
        }
        Ok(Volume3D { header, data })
    }

    pub fn zeros(header: VolumeHeader) -> Self {
        let n = header.n_voxels();
        Volume3D {
            header,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.header.dims
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        linear_index(self.header.dims, x, y, z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    /// True when both volumes share dims and (within 1e-6 mm) affine.
    pub fn same_grid(&self, other: &Volume3D) -> bool {
        same_grid(&self.header, &other.header)
    }
}

pub(crate) fn same_grid(a: &VolumeHeader, b: &VolumeHeader) -> bool {
    a.dims == b.dims
        && a
            .affine
            .iter()
            .flatten()
            .zip(b.affine.iter().flatten())
            .all(|(x, y)| (x - y).abs() <= 1e-6)
}

#[inline]
pub(crate) fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[inline]
pub(crate) fn unravel(dims: [usize; 3], index: usize) -> [usize; 3] {
    let x = index % dims[0];
    let rest = index / dims[0];
    [x, rest % dims[1], rest / dims[1]]
}

/// A label volume together with the clinical name of each label.
#[derive(Debug, Clone)]
pub struct LabelMask {
    volume: Volume3D,
    label_set: BTreeSet<u32>,
    label_names: BTreeMap<u32, String>,
}

impl LabelMask {
    pub fn new(volume: Volume3D, label_names: BTreeMap<u32, String>) -> Result<Self> {
        let mut label_set = BTreeSet::new();
        for &v in &volume.data {
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(Error::Format(format!(
                    "label volumes must hold non-negative integers, found {v}"
                )));
            }
            if v != 0.0 {
                label_set.insert(v as u32);
            }
        }
        if let Some(missing) = label_set.iter().find(|l| !label_names.contains_key(l)) {
            return Err(Error::Config(format!("label {missing} has no configured name")));
        }
        Ok(LabelMask {
            volume,
            label_set,
            label_names,
        })
    }

    pub fn volume(&self) -> &Volume3D {
        &self.volume
    }

    pub fn label_set(&self) -> &BTreeSet<u32> {
        &self.label_set
    }

    pub fn label_names(&self) -> &BTreeMap<u32, String> {
        &self.label_names
    }

    /// Binary mask of the voxels carrying `label`.
    pub fn binary(&self, label: u32) -> BinaryMask {
        let target = label as f64;
        BinaryMask {
            dims: self.volume.header.dims,
            spacing: self.volume.header.pixdim,
            data: self.volume.data.iter().map(|&v| v == target).collect(),
        }
    }
}

/// Foreground/background grid used by the geometry code.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        BinaryMask {
            dims,
            spacing,
            data: vec![false; dims.iter().product()],
        }
    }

    /// Nonzero voxels of `volume` are foreground.
    pub fn from_volume(volume: &Volume3D) -> Self {
        BinaryMask {
            dims: volume.header.dims,
            spacing: volume.header.pixdim,
            data: volume.data.iter().map(|&v| v != 0.0).collect(),
        }
    }

    pub fn from_voxels(dims: [usize; 3], spacing: [f64; 3], voxels: &[[usize; 3]]) -> Self {
        let mut mask = Self::empty(dims, spacing);
        for &[x, y, z] in voxels {
            mask.set(x, y, z, true);
        }
        mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        linear_index(self.dims, x, y, z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Coordinates of every foreground voxel in linear-index order.
    pub fn voxels(&self) -> Vec<[usize; 3]> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| unravel(self.dims, i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_volume_is_product_of_pixdim() {
        let h = |p| VolumeHeader::new([2, 2, 2], p, Datatype::U8).unwrap();
        assert_eq!(voxel_volume(&h([1.0, 1.0, 1.0])), 1.0);
        assert_eq!(voxel_volume(&h([1.0, 1.0, 2.0])), 2.0);
        assert_eq!(voxel_volume(&h([0.5, 0.5, 0.5])), 0.125);
    }

    #[test]
    fn orientation_codes() {
        let mut h = VolumeHeader::new([4, 4, 4], [1.0; 3], Datatype::U8).unwrap();
        assert_eq!(h.orientation(), "RAS");
        h.affine[0][0] = -1.0;
        h.affine[1][1] = -1.0;
        assert_eq!(h.orientation(), "LPS");
        // Swap the first two voxel axes.
        h.affine = [
            [0.0, 2.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        assert_eq!(h.orientation(), "PRS");
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(VolumeHeader::new([0, 1, 1], [1.0; 3], Datatype::U8).is_err());
        assert!(VolumeHeader::new([1, 1, 1], [1.0, -1.0, 1.0], Datatype::U8).is_err());
        let mut affine = [[0.0; 4]; 4];
        affine[3][3] = 1.0;
        assert!(matches!(
            VolumeHeader::with_affine([1, 1, 1], [1.0; 3], affine, Datatype::U8),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn volume_rejects_wrong_length_and_nan() {
        let h = VolumeHeader::new([2, 2, 2], [1.0; 3], Datatype::F32).unwrap();
        assert!(matches!(
            Volume3D::new(h.clone(), vec![0.0; 7]),
            Err(Error::LengthMismatch { expected: 8, actual: 7 })
        ));
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert!(Volume3D::new(h, data).is_err());
    }

    #[test]
    fn label_mask_requires_names() {
        let h = VolumeHeader::new([2, 1, 1], [1.0; 3], Datatype::U8).unwrap();
        let vol = Volume3D::new(h, vec![0.0, 3.0]).unwrap();
        assert!(LabelMask::new(vol.clone(), BTreeMap::new()).is_err());
        let names = BTreeMap::from([(3, "Enhancing Tissue".to_string())]);
        let mask = LabelMask::new(vol, names).unwrap();
        assert_eq!(mask.label_set().iter().copied().collect::<Vec<_>>(), vec![3]);
        assert_eq!(mask.binary(3).count(), 1);
    }

    #[test]
    fn unravel_inverts_linear_index() {
        let dims = [3, 4, 5];
        for i in 0..60 {
            let [x, y, z] = unravel(dims, i);
            assert_eq!(linear_index(dims, x, y, z), i);
        }
    }
}
