//! On-disk artifacts and the in-memory types they load into.
//!
//! The native volume format is a pair of files: `name.vxt` holds a JSON
//! header and `name.vxt.raw` holds little-endian samples ordered
//! `[t][z][y][x]` over mask-included voxels only. Column `j` of a loaded
//! data matrix is always the `j`-th included voxel in x-fastest scan order.

mod matrix;
mod nifti;
mod tables;
mod volume;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use matrix::{read_matrix, read_matrix_tsv, write_matrix, write_matrix_tsv, MatrixHeader};
pub use nifti::import_nifti;
pub use tables::{
    read_confounds, read_embeddings, read_word_table, write_confounds, write_embeddings,
    write_word_table, EmbeddingTable, Word, WordTable,
};
pub use volume::{
    read_atlas, read_label_volume, read_mask_volume, read_volume_series, write_atlas,
    write_label_volume, write_volume_series, write_volume_series_as, Dtype,
};

/// Write a text file atomically, creating parent directories.
pub fn write_text(path: impl AsRef<std::path::Path>, text: &str) -> Result<()> {
    volume::atomic_write(path.as_ref(), text.as_bytes())
}

/// Voxel grid geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub dims: [usize; 3],
    /// Millimetres per axis.
    pub voxel_size: [f64; 3],
    /// Row-major voxel-to-world transform.
    pub affine: [[f64; 4]; 4],
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], affine: [[f64; 4]; 4]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGrid(format!("dims {dims:?} must all be >= 1")));
        }
        if voxel_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "voxel size {voxel_size:?} must be positive"
            )));
        }
        if affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidGrid("affine last row must be (0,0,0,1)".into()));
        }
        Ok(Self {
            dims,
            voxel_size,
            affine,
        })
    }

    /// Grid with a diagonal affine built from the voxel size.
    pub fn isotropic(dims: [usize; 3], size: f64) -> Result<Self> {
        let affine = [
            [size, 0.0, 0.0, 0.0],
            [0.0, size, 0.0, 0.0],
            [0.0, 0.0, size, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::new(dims, [size; 3], affine)
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Flat x-fastest index of a voxel.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let y = (index / self.dims[0]) % self.dims[1];
        let z = index / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Geometry equality (dims and voxel size); the affine is informational.
    pub fn same_geometry(&self, other: &VolumeGrid) -> bool {
        self.dims == other.dims && self.voxel_size == other.voxel_size
    }
}

/// Set of voxels that carry data.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: VolumeGrid,
    included: Vec<bool>,
    indices: Vec<usize>,
}

impl Mask {
    pub fn new(grid: VolumeGrid, included: Vec<bool>) -> Result<Self> {
        if included.len() != grid.n_voxels() {
            return Err(Error::InvalidMask(format!(
                "{} flags for a grid of {} voxels",
                included.len(),
                grid.n_voxels()
            )));
        }
        let indices: Vec<usize> = included
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        if indices.is_empty() {
            return Err(Error::InvalidMask("mask includes no voxels".into()));
        }
        Ok(Self {
            grid,
            included,
            indices,
        })
    }

    pub fn full(grid: VolumeGrid) -> Self {
        let n = grid.n_voxels();
        Self::new(grid, vec![true; n]).expect("grid has at least one voxel")
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    /// Flat grid indices of included voxels, in scan order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of included voxels.
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.included[index]
    }

    /// Position of each grid voxel among the included ones.
    pub fn column_lookup(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.included.len()];
        for (col, &idx) in self.indices.iter().enumerate() {
            out[idx] = Some(col);
        }
        out
    }

    /// Content digest over dims and membership bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in self.grid.dims {
            h.update((d as u64).to_le_bytes());
        }
        let mut byte = 0u8;
        for (i, &b) in self.included.iter().enumerate() {
            if b {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                h.update([byte]);
                byte = 0;
            }
        }
        h.update([byte]);
        hex::encode(h.finalize())
    }

    /// Run lengths alternating excluded/included, starting with excluded.
    pub(crate) fn to_rle(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for &b in &self.included {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub(crate) fn from_rle(grid: VolumeGrid, runs: &[u64]) -> Result<Self> {
        let mut included = Vec::with_capacity(grid.n_voxels());
        let mut current = false;
        for &len in runs {
            included.extend(std::iter::repeat_n(current, len as usize));
            current = !current;
        }
        Self::new(grid, included)
    }
}

/// A masked voxel time series: `T x V`, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSeries {
    mask: Arc<Mask>,
    tr: f64,
    data: DMatrix<f64>,
}

impl VolumeSeries {
    pub fn new(mask: Arc<Mask>, tr: f64, data: DMatrix<f64>) -> Result<Self> {
        if !(tr > 0.0 && tr.is_finite()) {
            return Err(Error::InvalidArgument(format!("tr must be positive, got {tr}")));
        }
        if data.ncols() != mask.count() {
            return Err(Error::DimMismatch(format!(
                "{} data columns for {} mask voxels",
                data.ncols(),
                mask.count()
            )));
        }
        if data.nrows() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: data.nrows(),
            });
        }
        check_finite(&data)?;
        Ok(Self { mask, tr, data })
    }

    /// Same geometry, new samples. The row count may differ (trimming).
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        Self::new(self.mask.clone(), self.tr, data)
    }

    pub fn grid(&self) -> &VolumeGrid {
        self.mask.grid()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn mask_arc(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn n_times(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.data.ncols()
    }
}

/// Named binary parcels on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    pub grid: VolumeGrid,
    pub parcels: Vec<Parcel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parcel {
    pub name: String,
    /// One flag per grid voxel.
    pub voxels: Vec<bool>,
}

impl Atlas {
    pub fn new(grid: VolumeGrid, parcels: Vec<Parcel>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &parcels {
            if p.voxels.len() != grid.n_voxels() {
                return Err(Error::DimMismatch(format!(
                    "parcel `{}` has {} flags for {} voxels",
                    p.name,
                    p.voxels.len(),
                    grid.n_voxels()
                )));
            }
            if !seen.insert(p.name.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parcel name `{}`",
                    p.name
                )));
            }
        }
        Ok(Self { grid, parcels })
    }

    pub fn parcel(&self, name: &str) -> Option<&Parcel> {
        self.parcels.iter().find(|p| p.name == name)
    }
}

pub(crate) fn check_finite(data: &DMatrix<f64>) -> Result<()> {
    // report the index in row-major (time-major) order, matching the body layout
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            if !data[(i, j)].is_finite() {
                return Err(Error::NonFiniteData {
                    index: i * data.ncols() + j,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(VolumeGrid::isotropic([0, 2, 2], 2.0).is_err());
        assert!(VolumeGrid::isotropic([2, 2, 2], 0.0).is_err());
        let mut a = VolumeGrid::isotropic([2, 2, 2], 1.0).unwrap().affine;
        a[3][0] = 1.0;
        assert!(VolumeGrid::new([2, 2, 2], [1.0; 3], a).is_err());
    }

    #[test]
    fn scan_order_is_x_fastest() {
        let g = VolumeGrid::isotropic([3, 4, 5], 1.0).unwrap();
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        assert_eq!(g.coords(g.index(2, 3, 4)), [2, 3, 4]);
    }

    #[test]
    fn empty_mask_is_invalid() {
        let g = VolumeGrid::isotropic([2, 1, 1], 1.0).unwrap();
        assert!(matches!(
            Mask::new(g, vec![false, false]),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn rle_round_trip() {
        let g = VolumeGrid::isotropic([5, 1, 1], 1.0).unwrap();
        let m = Mask::new(g.clone(), vec![true, true, false, true, false]).unwrap();
        let back = Mask::from_rle(g, &m.to_rle()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.to_rle(), vec![0, 2, 1, 1, 1]);
    }

    #[test]
    fn series_rejects_nan() {
        let g = VolumeGrid::isotropic([2, 1, 1], 1.0).unwrap();
        let m = Arc::new(Mask::full(g));
        let data = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, f64::NAN, 2.0]);
        assert!(matches!(
            VolumeSeries::new(m, 2.0, data),
            Err(Error::NonFiniteData { index: 2 })
        ));
    }
}
