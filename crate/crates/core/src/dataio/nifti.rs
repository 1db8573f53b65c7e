//! Read-only import of uncompressed single-file NIfTI-1 (`n+1\0`).

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{Mask, VolumeGrid, VolumeSeries};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;

const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[at..at + N].try_into().unwrap();
        if self.big_endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.arr(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.arr(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.arr(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.arr(at))
    }
}

/// Load a NIfTI-1 file as a full-grid series. Integer data are scaled by
/// `scl_slope`/`scl_inter` when the slope is non-zero.
pub fn import_nifti(path: impl AsRef<Path>) -> Result<VolumeSeries> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("{} bytes, header needs {HEADER_SIZE}", bytes.len()),
        });
    }
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(Error::BadMagic(magic));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let big_endian = match le {
        348 => false,
        _ if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == 348 => true,
        other => {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                reason: format!("sizeof_hdr is {other}"),
            })
        }
    };
    let r = Reader {
        bytes: &bytes,
        big_endian,
    };
    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(3..=4).contains(&ndim) {
        return Err(Error::DimMismatch(format!("dim[0] = {ndim}, need 3 or 4")));
    }
    if dim[1..=ndim as usize].iter().any(|&d| d < 1) {
        return Err(Error::DimMismatch(format!("non-positive dims {dim:?}")));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let t = if ndim == 4 { dim[4] as usize } else { 1 };
    let datatype = r.i16(70);
    let width = match datatype {
        DT_INT16 => 2,
        DT_INT32 => 4,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let pixdim: Vec<f32> = (0..8).map(|i| r.f32(76 + 4 * i)).collect();
    let vox_offset = r.f32(108).max(HEADER_SIZE as f32) as usize;
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() {
        (1.0, 0.0)
    } else {
        (slope, inter)
    };
    let units = bytes[123];
    let time_scale = match units & 0x38 {
        16 => 1e-3,
        24 => 1e-6,
        _ => 1.0,
    };
    let tr = pixdim[4] as f64 * time_scale;

    let voxel_size = [
        pixdim[1].abs() as f64,
        pixdim[2].abs() as f64,
        pixdim[3].abs() as f64,
    ];
    let affine = read_affine(&r, &pixdim);
    let grid = VolumeGrid::new(dims, voxel_size, affine)?;

    let n = grid.n_voxels();
    let needed = vox_offset + n * t * width;
    if bytes.len() < needed {
        return Err(Error::DimMismatch(format!(
            "dims need {needed} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(n * t);
    for i in 0..n * t {
        let at = vox_offset + i * width;
        let raw = match datatype {
            DT_INT16 => r.i16(at) as f64,
            DT_INT32 => r.i32(at) as f64,
            DT_FLOAT32 => r.f32(at) as f64,
            _ => r.f64(at),
        };
        values.push(raw * slope + inter);
    }
    let data = DMatrix::from_row_slice(t, n, &values);
    let tr = if tr > 0.0 { tr } else { 1.0 };
    VolumeSeries::new(Arc::new(Mask::full(grid)), tr, data)
}

fn read_affine(r: &Reader<'_>, pixdim: &[f32]) -> [[f64; 4]; 4] {
    let qform = r.i16(252);
    let sform = r.i16(254);
    let mut a = [[0.0; 4]; 4];
    a[3][3] = 1.0;
    if sform > 0 {
        for (row, base) in [280usize, 296, 312].iter().enumerate() {
            for c in 0..4 {
                a[row][c] = r.f32(base + 4 * c) as f64;
            }
        }
    } else if qform > 0 {
        let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
        let aa = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = [
            [
                aa * aa + b * b - c * c - d * d,
                2.0 * (b * c - aa * d),
                2.0 * (b * d + aa * c),
            ],
            [
                2.0 * (b * c + aa * d),
                aa * aa + c * c - b * b - d * d,
                2.0 * (c * d - aa * b),
            ],
            [
                2.0 * (b * d - aa * c),
                2.0 * (c * d + aa * b),
                aa * aa + d * d - c * c - b * b,
            ],
        ];
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [pixdim[1] as f64, pixdim[2] as f64, qfac * pixdim[3] as f64];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = rot[i][j] * scale[j];
            }
        }
        a[0][3] = r.f32(268) as f64;
        a[1][3] = r.f32(272) as f64;
        a[2][3] = r.f32(276) as f64;
    } else {
        for i in 0..3 {
            a[i][i] = (pixdim[i + 1] as f64).abs().max(f64::MIN_POSITIVE);
        }
    }
    a
}
