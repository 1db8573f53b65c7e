use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataio::VolumeSeries;
use crate::error::{Error, Result};

/// Gaussian sigma in voxels for a FWHM in millimetres.
pub fn fwhm_to_sigma(fwhm_mm: f64, voxel_mm: f64) -> f64 {
    fwhm_mm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) / voxel_mm
}

/// Normalized sampled Gaussian truncated at `floor(4 sigma + 0.5)` voxels.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma + 0.5) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_axis(src: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return src.to_vec();
    }
    let r = (kernel.len() / 2) as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as i64;
    let mut out = vec![0.0; src.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = ((idx / stride) % dims[axis]) as i64;
        let mut acc = 0.0;
        for (ki, w) in kernel.iter().enumerate() {
            let q = pos + ki as i64 - r;
            if q >= 0 && q < n {
                let off = (q - pos) * stride as i64;
                acc += w * src[(idx as i64 + off) as usize];
            }
        }
        *o = acc;
    }
    out
}

fn convolve3(vol: &[f64], dims: [usize; 3], kernels: &[Vec<f64>; 3]) -> Vec<f64> {
    let a = convolve_axis(vol, dims, 0, &kernels[0]);
    let b = convolve_axis(&a, dims, 1, &kernels[1]);
    convolve_axis(&b, dims, 2, &kernels[2])
}

/// Separable Gaussian smoothing of every volume, restricted to the mask:
/// the smoothed data are divided by the smoothed mask so voxels near the
/// mask boundary are not dimmed.
pub fn smooth(series: &VolumeSeries, fwhm_mm: f64) -> Result<VolumeSeries> {
    if !(fwhm_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("fwhm must be positive, got {fwhm_mm}")));
    }
    let grid = series.grid();
    let dims = grid.dims;
    let kernels = [0, 1, 2].map(|a| gaussian_kernel(fwhm_to_sigma(fwhm_mm, grid.voxel_size[a])));
    let idx = series.mask().indices();
    let nvox = grid.n_voxels();

    let mut m = vec![0.0; nvox];
    for &i in idx {
        m[i] = 1.0;
    }
    let norm = convolve3(&m, dims, &kernels);

    let data = series.data();
    let rows: Vec<Vec<f64>> = (0..data.nrows())
        .into_par_iter()
        .map(|t| {
            let mut vol = vec![0.0; nvox];
            for (col, &i) in idx.iter().enumerate() {
                vol[i] = data[(t, col)];
            }
            let sm = convolve3(&vol, dims, &kernels);
            idx.iter().map(|&i| sm[i] / norm[i]).collect()
        })
        .collect();
    let out = DMatrix::from_fn(data.nrows(), data.ncols(), |t, j| rows[t][j]);
    series.with_data(out)
}
