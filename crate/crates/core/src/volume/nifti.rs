//! NIfTI-1 single-file (`.nii` / `.nii.gz`) reading and writing.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Datatype, Volume3D, VolumeHeader};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => LittleEndian::read_i16(&self.bytes[at..]),
            Endian::Big => BigEndian::read_i16(&self.bytes[at..]),
        }
    }

    fn i32(&self, at: usize) -> i32 {
        match self.endian {
            Endian::Little => LittleEndian::read_i32(&self.bytes[at..]),
            Endian::Big => BigEndian::read_i32(&self.bytes[at..]),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => LittleEndian::read_f32(&self.bytes[at..]),
            Endian::Big => BigEndian::read_f32(&self.bytes[at..]),
        }
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Decode a NIfTI-1 file held in memory. Gzip framing is detected and removed.
///
/// Scaling (`scl_slope`, `scl_inter`) is applied when the slope is nonzero, and
/// the affine is taken from the sform, then the qform, then pixdim.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume3D> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Format(format!("corrupt gzip stream: {e}")))?;
        return parse_raw(&raw);
    }
    parse_raw(bytes)
}

fn parse_raw(bytes: &[u8]) -> Result<Volume3D> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::LengthMismatch {
            expected: HEADER_SIZE,
            actual: bytes.len(),
        });
    }
    let endian = detect_endian(bytes)?;
    let r = Reader { bytes, endian };

    let sizeof_hdr = r.i32(offsets::SIZEOF_HDR);
    if sizeof_hdr == 540 {
        return Err(Error::Format("NIfTI-2 files are not supported".into()));
    }
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::Format(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    match &bytes[offsets::MAGIC..offsets::MAGIC + 4] {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(Error::Format(
                "detached header/image pairs (magic \"ni1\") are not supported; use a single .nii file"
                    .into(),
            ))
        }
        other => return Err(Error::Format(format!("bad magic {other:?}"))),
    }

    let ndim = r.i16(offsets::DIM) as usize;
    let mut dims = [1usize; 3];
    for (axis, dim) in dims.iter_mut().enumerate().take(ndim.min(3)) {
        let d = r.i16(offsets::DIM + 2 * (axis + 1));
        if d < 1 {
            return Err(Error::Format(format!("dim[{}] = {d} is not positive", axis + 1)));
        }
        *dim = d as usize;
    }
    for axis in 4..=ndim {
        let d = r.i16(offsets::DIM + 2 * axis);
        if d > 1 {
            return Err(Error::Format(format!(
                "only 3D volumes are supported (dim[{axis}] = {d})"
            )));
        }
    }

    let datatype = Datatype::from_code(r.i16(offsets::DATATYPE))?;
    let bitpix = r.i16(offsets::BITPIX);
    if bitpix as usize != 8 * datatype.byte_size() {
        return Err(Error::Format(format!(
            "bitpix {bitpix} disagrees with datatype {:?}",
            datatype
        )));
    }

    let mut pixdim = [1.0f64; 3];
    for (axis, p) in pixdim.iter_mut().enumerate() {
        let v = r.f32(offsets::PIXDIM + 4 * (axis + 1)) as f64;
        if axis < ndim {
            *p = v;
        }
    }
    let qfac = match r.f32(offsets::PIXDIM) {
        v if v < 0.0 => -1.0,
        _ => 1.0,
    };

    let affine = read_affine(&r, pixdim, qfac);
    let header = VolumeHeader::with_affine(dims, pixdim, affine, datatype)?;

    let vox_offset = r.f32(offsets::VOX_OFFSET);
    let offset = if vox_offset < HEADER_SIZE as f32 {
        DEFAULT_VOX_OFFSET
    } else {
        vox_offset as usize
    };
    let n = header.n_voxels();
    let payload = n * datatype.byte_size();
    if bytes.len() < offset + payload {
        return Err(Error::LengthMismatch {
            expected: offset + payload,
            actual: bytes.len(),
        });
    }
    let mut data = decode_payload(&bytes[offset..offset + payload], datatype, endian, n);

    let slope = r.f32(offsets::SCL_SLOPE) as f64;
    let inter = r.f32(offsets::SCL_INTER) as f64;
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Volume3D::new(header, data)
}

fn detect_endian(bytes: &[u8]) -> Result<Endian> {
    let le = LittleEndian::read_i16(&bytes[offsets::DIM..]);
    if (1..=7).contains(&le) {
        return Ok(Endian::Little);
    }
    let be = BigEndian::read_i16(&bytes[offsets::DIM..]);
    if (1..=7).contains(&be) {
        return Ok(Endian::Big);
    }
    Err(Error::Format(format!("dim[0] = {le} is outside 1..=7 in either byte order")))
}

fn read_affine(r: &Reader<'_>, pixdim: [f64; 3], qfac: f64) -> [[f64; 4]; 4] {
    let mut affine = [[0.0; 4]; 4];
    affine[3][3] = 1.0;
    if r.i16(offsets::SFORM_CODE) > 0 {
        for (row, dst) in affine.iter_mut().take(3).enumerate() {
            for (col, v) in dst.iter_mut().enumerate() {
                *v = r.f32(offsets::SROW_X + 16 * row + 4 * col) as f64;
            }
        }
    } else if r.i16(offsets::QFORM_CODE) > 0 {
        let b = r.f32(offsets::QUATERN_B) as f64;
        let c = r.f32(offsets::QUATERN_B + 4) as f64;
        let d = r.f32(offsets::QUATERN_B + 8) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let scale = [pixdim[0], pixdim[1], pixdim[2] * qfac];
        for row in 0..3 {
            for col in 0..3 {
                affine[row][col] = rot[row][col] * scale[col];
            }
            affine[row][3] = r.f32(offsets::QOFFSET_X + 4 * row) as f64;
        }
    } else {
        for axis in 0..3 {
            affine[axis][axis] = pixdim[axis];
        }
    }
    affine
}

fn decode_payload(raw: &[u8], datatype: Datatype, endian: Endian, n: usize) -> Vec<f64> {
    macro_rules! decode {
        ($read:ident, $size:expr) => {{
            match endian {
                Endian::Little => raw
                    .chunks_exact($size)
                    .map(|c| LittleEndian::$read(c) as f64)
                    .collect(),
                Endian::Big => raw.chunks_exact($size).map(|c| BigEndian::$read(c) as f64).collect(),
            }
        }};
    }
    let out: Vec<f64> = match datatype {
        Datatype::U8 => raw.iter().map(|&b| b as f64).collect(),
        Datatype::I8 => raw.iter().map(|&b| b as i8 as f64).collect(),
        Datatype::I16 => decode!(read_i16, 2),
        Datatype::U16 => decode!(read_u16, 2),
        Datatype::I32 => decode!(read_i32, 4),
        Datatype::U32 => decode!(read_u32, 4),
        Datatype::I64 => decode!(read_i64, 8),
        Datatype::U64 => decode!(read_u64, 8),
        Datatype::F32 => decode!(read_f32, 4),
        Datatype::F64 => decode!(read_f64, 8),
    };
    debug_assert_eq!(out.len(), n);
    out
}

/// Encode a volume as an uncompressed little-endian NIfTI-1 file.
///
/// The affine is stored in the sform rows (`sform_code = 1`). Values that the
/// header's datatype cannot hold exactly are written as float64 instead.
pub fn write_nifti(vol: &Volume3D) -> Result<Vec<u8>> {
    let header = &vol.header;
    for (axis, &d) in header.dims.iter().enumerate() {
        if d > i16::MAX as usize {
            return Err(Error::Capacity(format!(
                "dim[{}] = {d} exceeds the 16-bit NIfTI-1 limit of {}",
                axis + 1,
                i16::MAX
            )));
        }
    }
    let datatype = if vol.data.iter().all(|&v| header.datatype.represents(v)) {
        header.datatype
    } else {
        Datatype::F64
    };

    let mut out = vec![0u8; DEFAULT_VOX_OFFSET + vol.data.len() * datatype.byte_size()];
    let h = &mut out[..HEADER_SIZE];
    LittleEndian::write_i32(&mut h[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let dim = [3i16, header.dims[0] as i16, header.dims[1] as i16, header.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[offsets::DIM + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut h[offsets::DATATYPE..], datatype.code());
    LittleEndian::write_i16(&mut h[offsets::BITPIX..], 8 * datatype.byte_size() as i16);
    let pixdim = [1.0f32, header.pixdim[0] as f32, header.pixdim[1] as f32, header.pixdim[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[offsets::PIXDIM + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut h[offsets::VOX_OFFSET..], DEFAULT_VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[offsets::SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut h[offsets::SCL_INTER..], 0.0);
    // millimetres, seconds
    h[offsets::XYZT_UNITS] = 2 | 8;
    LittleEndian::write_i16(&mut h[offsets::QFORM_CODE..], 0);
    LittleEndian::write_i16(&mut h[offsets::SFORM_CODE..], 1);
    for row in 0..3 {
        for col in 0..4 {
            LittleEndian::write_f32(
                &mut h[offsets::SROW_X + 16 * row + 4 * col..],
                header.affine[row][col] as f32,
            );
        }
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");

    let body = &mut out[DEFAULT_VOX_OFFSET..];
    let size = datatype.byte_size();
    for (chunk, &v) in body.chunks_exact_mut(size).zip(&vol.data) {
        match datatype {
            Datatype::U8 => chunk[0] = v as u8,
            Datatype::I8 => chunk[0] = v as i8 as u8,
            Datatype::I16 => LittleEndian::write_i16(chunk, v as i16),
            Datatype::U16 => LittleEndian::write_u16(chunk, v as u16),
            Datatype::I32 => LittleEndian::write_i32(chunk, v as i32),
            Datatype::U32 => LittleEndian::write_u32(chunk, v as u32),
            Datatype::I64 => LittleEndian::write_i64(chunk, v as i64),
            Datatype::U64 => LittleEndian::write_u64(chunk, v as u64),
            Datatype::F32 => LittleEndian::write_f32(chunk, v as f32),
            Datatype::F64 => LittleEndian::write_f64(chunk, v),
        }
    }
    Ok(out)
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::path(path, e))?;
    parse_nifti(&bytes)
}

/// Write `vol` to `path`, gzip-compressed when the name ends in `.gz`.
pub fn write_nifti_file(path: impl AsRef<Path>, vol: &Volume3D) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = write_nifti(vol)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)?;
        bytes = enc.finish()?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::path(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gzip(bytes: &[u8]) -> Vec<u8> {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(bytes).unwrap();
        enc.finish().unwrap()
    }

    fn zeros_4() -> Volume3D {
        Volume3D::zeros(VolumeHeader::new([4, 4, 4], [1.0; 3], Datatype::F32).unwrap())
    }

    /// Header assembled field by field from the NIfTI-1 byte layout.
    fn hand_built_float32(payload: &[f32], endian: Endian) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        let put_i16 = |b: &mut [u8], at: usize, v: i16| match endian {
            Endian::Little => LittleEndian::write_i16(&mut b[at..], v),
            Endian::Big => BigEndian::write_i16(&mut b[at..], v),
        };
        let put_f32 = |b: &mut [u8], at: usize, v: f32| match endian {
            Endian::Little => LittleEndian::write_f32(&mut b[at..], v),
            Endian::Big => BigEndian::write_f32(&mut b[at..], v),
        };
        match endian {
            Endian::Little => LittleEndian::write_i32(&mut b[0..], 348),
            Endian::Big => BigEndian::write_i32(&mut b[0..], 348),
        }
        for (i, d) in [3i16, 4, 4, 4, 1, 1, 1, 1].iter().enumerate() {
            put_i16(&mut b, 40 + 2 * i, *d);
        }
        put_i16(&mut b, 70, 16);
        put_i16(&mut b, 72, 32);
        for (i, p) in [1.0f32, 1.0, 1.0, 1.0].iter().enumerate() {
            put_f32(&mut b, 76 + 4 * i, *p);
        }
        put_f32(&mut b, 108, 352.0);
        b[344..348].copy_from_slice(b"n+1\0");
        for v in payload {
            let mut buf = [0u8; 4];
            match endian {
                Endian::Little => LittleEndian::write_f32(&mut buf, *v),
                Endian::Big => BigEndian::write_f32(&mut buf, *v),
            }
            b.extend_from_slice(&buf);
        }
        b
    }

    #[test]
    fn zeros_round_trip() {
        let vol = zeros_4();
        let parsed = parse_nifti(&write_nifti(&vol).unwrap()).unwrap();
        assert_eq!(parsed, vol);
    }

    #[test]
    fn hand_built_header_decodes_field_by_field() {
        let payload: Vec<f32> = (0..64).map(|i| i as f32 * 0.5).collect();
        for endian in [Endian::Little, Endian::Big] {
            let bytes = hand_built_float32(&payload, endian);
            assert_eq!(bytes.len(), 352 + 256);
            let vol = parse_nifti(&bytes).unwrap();
            assert_eq!(vol.dims(), [4, 4, 4]);
            assert_eq!(vol.header.datatype, Datatype::F32);
            assert_eq!(vol.header.pixdim, [1.0; 3]);
            assert_eq!(vol.header.orientation(), "RAS");
            assert_eq!(vol.data[5], 2.5);
            assert_eq!(vol.data[63], 31.5);
        }
    }

    #[test]
    fn gzip_is_transparent() {
        let bytes = write_nifti(&zeros_4()).unwrap();
        assert_eq!(parse_nifti(&gzip(&bytes)).unwrap(), parse_nifti(&bytes).unwrap());
    }

    #[test]
    fn error_paths() {
        let mut bytes = write_nifti(&zeros_4()).unwrap();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(parse_nifti(truncated), Err(Error::LengthMismatch { .. })));

        let mut bad_type = bytes.clone();
        LittleEndian::write_i16(&mut bad_type[70..], 32); // complex64
        assert!(matches!(parse_nifti(&bad_type), Err(Error::UnsupportedDatatype(32))));

        bytes[344..348].copy_from_slice(b"abc\0");
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn scaling_is_applied() {
        let vol = Volume3D::new(
            VolumeHeader::new([2, 1, 1], [1.0; 3], Datatype::I16).unwrap(),
            vec![1.0, 2.0],
        )
        .unwrap();
        let mut bytes = write_nifti(&vol).unwrap();
        LittleEndian::write_f32(&mut bytes[112..], 2.0);
        LittleEndian::write_f32(&mut bytes[116..], 0.5);
        assert_eq!(parse_nifti(&bytes).unwrap().data, vec![2.5, 4.5]);
    }

    #[test]
    fn qform_is_used_without_sform() {
        let mut bytes = write_nifti(&zeros_4()).unwrap();
        LittleEndian::write_i16(&mut bytes[254..], 0);
        LittleEndian::write_i16(&mut bytes[252..], 1);
        // 180 degrees about z: (b, c, d) = (0, 0, 1) flips x and y.
        LittleEndian::write_f32(&mut bytes[264..], 1.0);
        LittleEndian::write_f32(&mut bytes[268..], 10.0);
        let vol = parse_nifti(&bytes).unwrap();
        assert_eq!(vol.header.orientation(), "LPS");
        assert_eq!(vol.header.affine[0][3], 10.0);
    }

    #[test]
    fn oversized_dimension_is_a_capacity_error() {
        let header = VolumeHeader::new([70_000, 1, 1], [1.0; 3], Datatype::U8).unwrap();
        let vol = Volume3D::zeros(header);
        assert!(matches!(write_nifti(&vol), Err(Error::Capacity(_))));
    }

    #[test]
    fn unrepresentable_values_promote_to_float64() {
        let vol = Volume3D::new(
            VolumeHeader::new([2, 1, 1], [1.0; 3], Datatype::U8).unwrap(),
            vec![0.25, 300.0],
        )
        .unwrap();
        let parsed = parse_nifti(&write_nifti(&vol).unwrap()).unwrap();
        assert_eq!(parsed.data, vol.data);
        assert_eq!(parsed.header.datatype, Datatype::F64);
    }
}
