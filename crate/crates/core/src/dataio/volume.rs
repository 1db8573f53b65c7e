use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_finite, Atlas, Mask, Parcel, VolumeGrid, VolumeSeries};
use crate::error::{Error, Result};

/// On-disk sample precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> u64 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VxtHeader {
    format: String,
    version: u32,
    dims: [usize; 3],
    voxel_size: [f64; 3],
    affine: [[f64; 4]; 4],
    tr: f64,
    t: usize,
    v: usize,
    dtype: Dtype,
    mask_digest: String,
    mask_rle: Vec<u64>,
}

pub(crate) fn raw_path(header: &Path) -> PathBuf {
    let mut s = header.as_os_str().to_owned();
    s.push(".raw");
    PathBuf::from(s)
}

/// Raw volume content with any `T >= 1`.
struct RawVolume {
    mask: Mask,
    tr: f64,
    data: DMatrix<f64>,
}

fn read_raw(path: &Path) -> Result<RawVolume> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let header: VxtHeader = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if header.format != "vxt" {
        return Err(malformed(format!("format `{}` is not vxt", header.format)));
    }
    let grid = VolumeGrid::new(header.dims, header.voxel_size, header.affine)
        .map_err(|e| malformed(e.to_string()))?;
    let mask = Mask::from_rle(grid, &header.mask_rle).map_err(|e| malformed(e.to_string()))?;
    if mask.count() != header.v {
        return Err(malformed(format!(
            "mask has {} voxels, header declares {}",
            mask.count(),
            header.v
        )));
    }
    if mask.digest() != header.mask_digest {
        return Err(malformed("mask digest does not match mask".into()));
    }
    if header.t == 0 {
        return Err(malformed("t must be >= 1".into()));
    }
    let body_path = raw_path(path);
    let bytes = fs::read(&body_path).map_err(|e| Error::io(&body_path, e))?;
    let expected = header.t as u64 * header.v as u64 * header.dtype.width();
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: body_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = match header.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let data = DMatrix::from_row_slice(header.t, header.v, &values);
    check_finite(&data)?;
    Ok(RawVolume {
        mask,
        tr: header.tr,
        data,
    })
}

fn write_raw(mask: &Mask, tr: f64, data: &DMatrix<f64>, path: &Path, dtype: Dtype) -> Result<()> {
    check_finite(data)?;
    let grid = mask.grid();
    let header = VxtHeader {
        format: "vxt".into(),
        version: 1,
        dims: grid.dims,
        voxel_size: grid.voxel_size,
        affine: grid.affine,
        tr,
        t: data.nrows(),
        v: data.ncols(),
        dtype,
        mask_digest: mask.digest(),
        mask_rle: mask.to_rle(),
    };
    let mut body = Vec::with_capacity(data.len() * dtype.width() as usize);
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            match dtype {
                Dtype::F32 => body.extend_from_slice(&(data[(i, j)] as f32).to_le_bytes()),
                Dtype::F64 => body.extend_from_slice(&data[(i, j)].to_le_bytes()),
            }
        }
    }
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::json(path, e))?;
    let body_path = raw_path(path);
    atomic_write(&body_path, &body)?;
    atomic_write(path, json.as_bytes())
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_volume_series(path: impl AsRef<Path>) -> Result<VolumeSeries> {
    let raw = read_raw(path.as_ref())?;
    VolumeSeries::new(Arc::new(raw.mask), raw.tr, raw.data)
}

/// Write a series in the default single-precision layout.
pub fn write_volume_series(series: &VolumeSeries, path: impl AsRef<Path>) -> Result<()> {
    write_volume_series_as(series, path, Dtype::F32)
}

pub fn write_volume_series_as(
    series: &VolumeSeries,
    path: impl AsRef<Path>,
    dtype: Dtype,
) -> Result<()> {
    write_raw(series.mask(), series.tr(), series.data(), path.as_ref(), dtype)
}

/// Single-volume file holding one value per grid voxel (zero outside its mask).
pub fn read_label_volume(path: impl AsRef<Path>) -> Result<(VolumeGrid, Vec<f64>)> {
    let raw = read_raw(path.as_ref())?;
    let grid = raw.mask.grid().clone();
    let mut values = vec![0.0; grid.n_voxels()];
    for (col, &idx) in raw.mask.indices().iter().enumerate() {
        values[idx] = raw.data[(0, col)];
    }
    Ok((grid, values))
}

pub fn write_label_volume(grid: &VolumeGrid, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    if values.len() != grid.n_voxels() {
        return Err(Error::DimMismatch(format!(
            "{} values for {} voxels",
            values.len(),
            grid.n_voxels()
        )));
    }
    let mask = Mask::full(grid.clone());
    let data = DMatrix::from_row_slice(1, values.len(), values);
    write_raw(&mask, 1.0, &data, path.as_ref(), Dtype::F32)
}

/// Binary mask stored as a label volume; any non-zero value is inside.
pub fn read_mask_volume(path: impl AsRef<Path>) -> Result<(VolumeGrid, Vec<bool>)> {
    let (grid, values) = read_label_volume(path)?;
    Ok((grid, values.iter().map(|&v| v != 0.0).collect()))
}

fn names_path(path: &Path) -> PathBuf {
    path.with_extension("names.json")
}

/// Atlas as an integer label volume plus a `label -> name` JSON map stored
/// next to it (`atlas.vxt` + `atlas.names.json`).
pub fn read_atlas(path: impl AsRef<Path>) -> Result<Atlas> {
    let path = path.as_ref();
    let (grid, labels) = read_label_volume(path)?;
    let npath = names_path(path);
    let text = fs::read_to_string(&npath).map_err(|e| Error::io(&npath, e))?;
    let names: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| Error::json(&npath, e))?;
    let mut entries: Vec<(i64, String)> = Vec::with_capacity(names.len());
    for (k, v) in names {
        let label: i64 = k.parse().map_err(|_| Error::MalformedHeader {
            path: npath.clone(),
            reason: format!("label key `{k}` is not an integer"),
        })?;
        entries.push((label, v));
    }
    entries.sort();
    let parcels = entries
        .into_iter()
        .map(|(label, name)| Parcel {
            name,
            voxels: labels.iter().map(|&l| l.round() as i64 == label).collect(),
        })
        .collect();
    Atlas::new(grid, parcels)
}

/// Parcels may overlap in memory but not in a label volume; later parcels
/// win on overlap.
pub fn write_atlas(atlas: &Atlas, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut labels = vec![0.0; atlas.grid.n_voxels()];
    let mut names = BTreeMap::new();
    for (i, p) in atlas.parcels.iter().enumerate() {
        let label = i + 1;
        for (v, &inside) in p.voxels.iter().enumerate() {
            if inside {
                labels[v] = label as f64;
            }
        }
        names.insert(label.to_string(), p.name.clone());
    }
    write_label_volume(&atlas.grid, &labels, path)?;
    let npath = names_path(path);
    let json = serde_json::to_string_pretty(&names).map_err(|e| Error::json(&npath, e))?;
    atomic_write(&npath, json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid222() -> VolumeGrid {
        VolumeGrid::isotropic([2, 2, 2], 2.0).unwrap()
    }

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.vxt");
        let s = VolumeSeries::new(Arc::new(Mask::full(grid222())), 2.0, DMatrix::zeros(4, 8))
            .unwrap();
        write_volume_series(&s, &p).unwrap();
        let back = read_volume_series(&p).unwrap();
        assert_eq!(back.data(), &DMatrix::<f64>::zeros(4, 8));
        assert_eq!(back.n_times(), 4);
    }

    #[test]
    fn truncated_body_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.vxt");
        let s = VolumeSeries::new(Arc::new(Mask::full(grid222())), 2.0, DMatrix::zeros(4, 8))
            .unwrap();
        write_volume_series(&s, &p).unwrap();
        let body = raw_path(&p);
        let bytes = fs::read(&body).unwrap();
        fs::write(&body, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            read_volume_series(&p),
            Err(Error::SizeMismatch { expected: 128, actual: 124, .. })
        ));
    }

    #[test]
    fn non_finite_is_refused_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let mask = Mask::full(grid222());
        let mut data = DMatrix::zeros(2, 8);
        data[(1, 3)] = f64::NAN;
        let p = dir.path().join("n.vxt");
        assert!(matches!(
            write_raw(&mask, 2.0, &data, &p, Dtype::F32),
            Err(Error::NonFiniteData { index: 11 })
        ));
        assert!(!p.exists());
    }

    #[test]
    fn atlas_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid222();
        let a = Atlas::new(
            g.clone(),
            vec![
                Parcel {
                    name: "AUD".into(),
                    voxels: vec![true, true, false, false, false, false, false, false],
                },
                Parcel {
                    name: "VIS".into(),
                    voxels: vec![false, false, false, false, false, false, true, true],
                },
            ],
        )
        .unwrap();
        let p = dir.path().join("atlas.vxt");
        write_atlas(&a, &p).unwrap();
        assert_eq!(read_atlas(&p).unwrap(), a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn f32_series_round_trip_is_bitwise(
            t in 2usize..6,
            bits in proptest::collection::vec(any::<bool>(), 8),
            seed in proptest::collection::vec(-1e6f32..1e6f32, 48),
        ) {
            let mut flags = bits.clone();
            flags[0] = true;
            let mask = Arc::new(Mask::new(grid222(), flags).unwrap());
            let v = mask.count();
            let data = DMatrix::from_fn(t, v, |i, j| seed[(i * v + j) % seed.len()] as f64);
            let s = VolumeSeries::new(mask, 1.5, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.vxt");
            write_volume_series(&s, &p).unwrap();
            let back = read_volume_series(&p).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
