//! Rule-based artifact labelling of components from four spatial and
//! temporal features. Labels annotate components; nothing is removed.

use nalgebra::DMatrix;
use rayon::prelude::*;
use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataio::Mask;
use crate::error::{Error, Result};
use crate::ica::{sign_align, IcaModel};
use crate::matching::threshold_map;
use crate::preprocess::ConfoundMatrix;
use crate::stats::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AromaConfig {
    /// Spectral cutoff in Hz for high-frequency content.
    pub hfc_cutoff: f64,
    /// Percentile used to threshold maps before the spatial fractions.
    pub map_percentile: f64,
    pub csf: f64,
    pub hfc: f64,
    pub edge: f64,
    pub motion: f64,
}

impl Default for AromaConfig {
    fn default() -> Self {
        Self {
            hfc_cutoff: 0.10,
            map_percentile: 95.0,
            csf: 0.10,
            hfc: 0.35,
            edge: 0.225,
            motion: 0.45,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AromaFeatures {
    pub hfc: f64,
    pub edge_frac: f64,
    pub csf_frac: f64,
    pub motion_corr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Signal,
    Noise,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Signal => "signal",
            Label::Noise => "noise",
        }
    }
}

/// Noise if any of: CSF fraction, high-frequency content, or edge fraction
/// together with motion correlation, exceeds its threshold.
pub fn classify(f: &AromaFeatures, cfg: &AromaConfig) -> Label {
    if f.csf_frac > cfg.csf || f.hfc > cfg.hfc || (f.edge_frac > cfg.edge && f.motion_corr > cfg.motion)
    {
        Label::Noise
    } else {
        Label::Signal
    }
}

/// Fraction of periodogram power strictly above `cutoff` Hz, mean removed.
pub fn high_frequency_content(x: &[f64], tr: f64, cutoff: f64) -> f64 {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut total, mut high) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let p = c.norm_sqr();
        total += p;
        if k as f64 / (n as f64 * tr) > cutoff {
            high += p;
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

/// Boundary voxels of the mask: those with a face neighbour outside it (or
/// on the grid border).
pub fn edge_mask(mask: &Mask) -> Vec<bool> {
    let g = mask.grid();
    let [nx, ny, nz] = g.dims;
    let mut out = vec![false; g.n_voxels()];
    for &i in mask.indices() {
        let [x, y, z] = g.coords(i);
        let inside = |dx: i64, dy: i64, dz: i64| {
            let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
            a >= 0
                && b >= 0
                && c >= 0
                && (a as usize) < nx
                && (b as usize) < ny
                && (c as usize) < nz
                && mask.contains(g.index(a as usize, b as usize, c as usize))
        };
        let interior = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            .iter()
            .all(|&(dx, dy, dz)| inside(dx, dy, dz));
        out[i] = !interior;
    }
    out
}

fn detrended(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        sxy += (t as f64 - tm) * (v - xm);
        sxx += (t as f64 - tm).powi(2);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .enumerate()
        .map(|(t, v)| v - xm - b * (t as f64 - tm))
        .collect()
}

/// Per-component features.
///
/// `series` is `T x K` on some run; `motion` must have `T` rows. The motion
/// correlation is the largest absolute correlation with any linearly
/// detrended motion parameter or its backward difference. Masks are
/// flags over the full grid; `edge` defaults to [`edge_mask`] and a missing
/// CSF mask gives zero CSF fraction.
pub fn aroma_features(
    model: &IcaModel,
    series: &DMatrix<f64>,
    tr: f64,
    edge: Option<&[bool]>,
    csf: Option<&[bool]>,
    motion: &ConfoundMatrix,
    cfg: &AromaConfig,
) -> Result<Vec<AromaFeatures>> {
    let n_grid = model.grid().n_voxels();
    for m in [edge, csf].into_iter().flatten() {
        if m.len() != n_grid {
            return Err(Error::GridMismatch(format!(
                "mask has {} voxels, model grid {n_grid}",
                m.len()
            )));
        }
    }
    if series.ncols() != model.k() {
        return Err(Error::DimMismatch(format!(
            "{} series columns for {} components",
            series.ncols(),
            model.k()
        )));
    }
    if motion.n_rows() != series.nrows() {
        return Err(Error::LengthMismatch(format!(
            "{} motion rows for {} time points",
            motion.n_rows(),
            series.nrows()
        )));
    }
    let default_edge;
    let edge = match edge {
        Some(e) => e,
        None => {
            default_edge = edge_mask(model.mask());
            &default_edge
        }
    };
    let aligned = sign_align(model);
    let idx = model.mask().indices();
    let motion_cols: Vec<Vec<f64>> = motion
        .motion_columns()
        .into_iter()
        .flat_map(|m| {
            let mut d = vec![0.0; m.len()];
            for t in 1..m.len() {
                d[t] = m[t] - m[t - 1];
            }
            [detrended(&m), d]
        })
        .collect();

    (0..model.k())
        .into_par_iter()
        .map(|c| {
            let tm = threshold_map(c, &aligned.source_row(c), cfg.map_percentile)?;
            let weights: Vec<f64> = tm.weighted().iter().map(|v| v.abs()).collect();
            let total: f64 = weights.iter().sum();
            let frac = |m: &[bool]| {
                weights
                    .iter()
                    .zip(idx)
                    .filter(|(_, &i)| m[i])
                    .map(|(w, _)| w)
                    .sum::<f64>()
                    / total
            };
            let col = series.column(c);
            let motion_corr = motion_cols
                .iter()
                .filter_map(|m| pearson(col.as_slice(), m).ok())
                .map(f64::abs)
                .fold(0.0, f64::max);
            Ok(AromaFeatures {
                hfc: high_frequency_content(col.as_slice(), tr, cfg.hfc_cutoff),
                edge_frac: frac(edge),
                csf_frac: csf.map(frac).unwrap_or(0.0),
                motion_corr,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataio::VolumeGrid;

    fn motion(t: usize) -> ConfoundMatrix {
        let names = ["trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z"];
        let data = DMatrix::from_fn(t, 6, |i, j| ((i * (j + 1)) as f64 * 0.37).sin() + 0.01 * i as f64);
        ConfoundMatrix::new(data, names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn classify_rules() {
        let cfg = AromaConfig::default();
        let zero = AromaFeatures {
            hfc: 0.0,
            edge_frac: 0.0,
            csf_frac: 0.0,
            motion_corr: 0.0,
        };
        assert_eq!(classify(&zero, &cfg), Label::Signal);
        assert_eq!(classify(&AromaFeatures { csf_frac: 1.0, ..zero }, &cfg), Label::Noise);
        let edgy = AromaFeatures {
            edge_frac: 0.9,
            motion_corr: 0.1,
            ..zero
        };
        assert_eq!(classify(&edgy, &cfg), Label::Signal);
        assert_eq!(
            classify(&AromaFeatures { motion_corr: 0.5, ..edgy }, &cfg),
            Label::Noise
        );
    }

    #[test]
    fn low_frequency_sinusoid_has_little_hfc() {
        let tr = 2.0;
        let x: Vec<f64> = (0..256)
            .map(|t| (2.0 * std::f64::consts::PI * 0.03 * t as f64 * tr).sin())
            .collect();
        assert!(high_frequency_content(&x, tr, 0.1) < 0.05);
        let fast: Vec<f64> = (0..256)
            .map(|t| (2.0 * std::f64::consts::PI * 0.2 * t as f64 * tr).sin())
            .collect();
        assert!(high_frequency_content(&fast, tr, 0.1) > 0.95);
    }

    #[test]
    fn hfc_matches_direct_dft() {
        let x: Vec<f64> = (0..50).map(|t| ((t * t) as f64 * 0.1).cos() + t as f64 * 0.02).collect();
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let (mut tot, mut hi) = (0.0, 0.0);
        for k in 1..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += (v - m) * a.cos();
                im += (v - m) * a.sin();
            }
            let p = re * re + im * im;
            tot += p;
            if k as f64 / (n as f64 * 2.0) > 0.1 {
                hi += p;
            }
        }
        assert!((high_frequency_content(&x, 2.0, 0.1) - hi / tot).abs() < 1e-10);
    }

    #[test]
    fn spatial_and_motion_features() {
        let g = VolumeGrid::isotropic([5, 5, 5], 2.0).unwrap();
        let mask = Arc::new(Mask::full(g.clone()));
        let v = 125;
        let centre = g.index(2, 2, 2);
        let mut s = DMatrix::zeros(2, v);
        s[(0, centre)] = 3.0;
        s[(1, g.index(0, 2, 2))] = 2.0;
        let model = IcaModel::from_sources(mask.clone(), s).unwrap();
        let t = 64;
        let conf = motion(t);
        let mut series = DMatrix::zeros(t, 2);
        // equal to a motion column up to the linear trend the series never carries
        let rot_y = detrended(&conf.column("rot_y").unwrap());
        series.set_column(0, &DMatrix::from_vec(t, 1, rot_y).column(0));
        series.set_column(1, &DMatrix::from_fn(t, 1, |i, _| (i as f64 * 0.05).sin()).column(0));
        let csf: Vec<bool> = (0..v).map(|i| i == centre).collect();
        let cfg = AromaConfig {
            map_percentile: 99.0,
            ..AromaConfig::default()
        };
        let f = aroma_features(&model, &series, 2.0, None, Some(&csf), &conf, &cfg).unwrap();
        assert!((f[0].motion_corr - 1.0).abs() < 1e-12);
        assert_eq!(f[0].csf_frac, 1.0);
        assert_eq!(f[0].edge_frac, 0.0);
        assert_eq!(f[1].edge_frac, 1.0);
        assert!(f.iter().all(|x| [x.hfc, x.edge_frac, x.csf_frac, x.motion_corr]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))));

        let short = motion(10);
        assert!(matches!(
            aroma_features(&model, &series, 2.0, None, None, &short, &cfg),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            aroma_features(&model, &series, 2.0, Some(&[true; 3]), None, &conf, &cfg),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn edge_of_full_cube_is_its_shell() {
        let g = VolumeGrid::isotropic([4, 4, 4], 2.0).unwrap();
        let e = edge_mask(&Mask::full(g));
        assert_eq!(e.iter().filter(|&&b| b).count(), 64 - 8);
    }
}
