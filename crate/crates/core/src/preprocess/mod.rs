//! Voxel time-series cleaning: detrending, band-pass filtering, confound
//! regression, spatial smoothing within the mask, standardization and
//! trimming.
//!
//! Every operation treats voxel columns (or, for smoothing, volumes)
//! independently and runs them in parallel; results do not depend on the
//! schedule.

mod filter;
mod smooth;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::VolumeSeries;
use crate::error::{Error, Result};
use crate::linalg::RCOND;

pub use filter::{butter_bandpass, Biquad, SosFilter};
pub use smooth::{fwhm_to_sigma, gaussian_kernel, smooth};

/// Butterworth order used by [`bandpass`].
pub const BANDPASS_ORDER: usize = 5;

/// Nuisance regressors, one row per volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundMatrix {
    data: DMatrix<f64>,
    names: Vec<String>,
}

/// Column names treated as single-volume spike indicators.
pub fn is_spike_column(name: &str) -> bool {
    name.starts_with("motion_outlier") || name.starts_with("spike")
}

impl ConfoundMatrix {
    pub fn new(data: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::DimMismatch(format!(
                "{} names for {} confound columns",
                names.len(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("confounds"));
        }
        for (j, name) in names.iter().enumerate() {
            if is_spike_column(name) {
                let col = data.column(j);
                let ones = col.iter().filter(|&&v| v == 1.0).count();
                let zeros = col.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != col.len() {
                    return Err(Error::InvalidArgument(format!(
                        "spike column `{name}` must be 0/1 with exactly one 1"
                    )));
                }
            }
        }
        Ok(Self { data, names })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.data.column(j).iter().copied().collect())
    }

    /// Columns whose names look like rigid-body motion parameters.
    pub fn motion_columns(&self) -> Vec<Vec<f64>> {
        const MOTION: [&str; 6] = ["trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z"];
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| MOTION.contains(&n.as_str()))
            .map(|(j, _)| self.data.column(j).iter().copied().collect())
            .collect()
    }

    /// Append one indicator column per volume whose framewise displacement
    /// exceeds `threshold`, skipping volumes that already have one.
    pub fn with_spikes(&self, threshold: f64) -> Result<Self> {
        let Some(fd) = self.column("framewise_displacement") else {
            return Ok(self.clone());
        };
        let t = self.n_rows();
        let mut flagged: Vec<bool> = vec![false; t];
        for (j, name) in self.names.iter().enumerate() {
            if is_spike_column(name) {
                for i in 0..t {
                    if self.data[(i, j)] == 1.0 {
                        flagged[i] = true;
                    }
                }
            }
        }
        let new: Vec<usize> = (0..t).filter(|&i| fd[i] > threshold && !flagged[i]).collect();
        if new.is_empty() {
            return Ok(self.clone());
        }
        let mut data = self.data.clone().resize_horizontally(self.data.ncols() + new.len(), 0.0);
        let mut names = self.names.clone();
        for (k, &i) in new.iter().enumerate() {
            data[(i, self.data.ncols() + k)] = 1.0;
            names.push(format!("spike_{i:04}"));
        }
        Self::new(data, names)
    }

    pub fn trimmed(&self, head: usize, tail: usize) -> Result<Self> {
        let t = self.n_rows();
        if head + tail >= t {
            return Err(Error::EmptyAfterTrim { head, tail, len: t });
        }
        let data = self.data.rows(head, t - head - tail).into_owned();
        // spike columns that fall outside the kept window are dropped
        let keep: Vec<usize> = (0..data.ncols())
            .filter(|&j| !is_spike_column(&self.names[j]) || data.column(j).iter().any(|&v| v == 1.0))
            .collect();
        let data = DMatrix::from_fn(data.nrows(), keep.len(), |i, k| data[(i, keep[k])]);
        let names = keep.iter().map(|&j| self.names[j].clone()).collect();
        Self::new(data, names)
    }
}

/// One preprocessing path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub detrend: bool,
    /// Pass band in Hz.
    pub band: Option<(f64, f64)>,
    /// Gaussian FWHM in millimetres.
    pub fwhm: Option<f64>,
    pub standardize: bool,
    /// Regress confounds when they are supplied.
    pub regress_confounds: bool,
    pub trim_head: usize,
    pub trim_tail: usize,
    pub fd_spike_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::encoding()
    }
}

impl PreprocessConfig {
    /// Component-estimation path: detrend, band-pass, confounds, smooth,
    /// standardize.
    pub fn ica_estimation() -> Self {
        Self {
            detrend: true,
            band: Some((0.01, 0.1)),
            fwhm: Some(4.0),
            standardize: true,
            regress_confounds: true,
            trim_head: 0,
            trim_tail: 0,
            fd_spike_threshold: 0.5,
        }
    }

    /// Encoding path: detrend, confounds, standardize; first and last 10
    /// volumes dropped.
    pub fn encoding() -> Self {
        Self {
            detrend: true,
            band: None,
            fwhm: None,
            standardize: true,
            regress_confounds: true,
            trim_head: 10,
            trim_tail: 10,
            fd_spike_threshold: 0.5,
        }
    }

    /// Component-labelling path: detrend and standardize only, so motion
    /// structure survives in the data.
    pub fn artifact_scoring() -> Self {
        Self {
            detrend: true,
            band: None,
            fwhm: None,
            standardize: true,
            regress_confounds: false,
            trim_head: 0,
            trim_tail: 0,
            fd_spike_threshold: 0.5,
        }
    }

    pub fn validate(&self, tr: f64) -> Result<()> {
        if let Some((low, high)) = self.band {
            let nyquist = 0.5 / tr;
            if !(low > 0.0 && low < high && high < nyquist) {
                return Err(Error::BandOutOfRange { low, high, nyquist });
            }
        }
        if let Some(f) = self.fwhm {
            if !(f > 0.0) {
                return Err(Error::config("fwhm", "must be positive"));
            }
        }
        Ok(())
    }

    /// Apply the configured chain. Trimming happens after confound
    /// regression and before standardization.
    pub fn run(&self, series: &VolumeSeries, confounds: Option<&ConfoundMatrix>) -> Result<VolumeSeries> {
        self.validate(series.tr())?;
        let mut s = series.clone();
        if self.detrend {
            s = detrend(&s)?;
        }
        if let Some(band) = self.band {
            s = bandpass(&s, band)?;
        }
        if let Some(c) = confounds.filter(|_| self.regress_confounds) {
            let c = c.with_spikes(self.fd_spike_threshold)?;
            s = regress_confounds(&s, &c)?;
        }
        if let Some(f) = self.fwhm {
            s = smooth(&s, f)?;
        }
        if self.trim_head + self.trim_tail > 0 {
            s = trim(&s, self.trim_head, self.trim_tail)?;
        }
        if self.standardize {
            s = standardize(&s)?;
        }
        Ok(s)
    }
}

fn map_columns<F>(series: &VolumeSeries, f: F) -> Result<VolumeSeries>
where
    F: Fn(&mut [f64]) + Sync,
{
    let mut data = series.data().clone();
    let t = data.nrows();
    data.as_mut_slice().par_chunks_mut(t).for_each(|col| f(col));
    series.with_data(data)
}

/// Remove each voxel's least-squares line (intercept and slope).
pub fn detrend(series: &VolumeSeries) -> Result<VolumeSeries> {
    let t = series.n_times();
    if t < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: t });
    }
    let tm = (t as f64 - 1.0) / 2.0;
    let centered: Vec<f64> = (0..t).map(|i| i as f64 - tm).collect();
    let sxx: f64 = centered.iter().map(|c| c * c).sum();
    map_columns(series, |col| detrend_column(col, &centered, sxx))
}

pub(crate) fn detrend_column(col: &mut [f64], centered: &[f64], sxx: f64) {
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    let slope = col.iter().zip(centered).map(|(y, c)| y * c).sum::<f64>() / sxx;
    for (y, c) in col.iter_mut().zip(centered) {
        *y -= mean + slope * c;
    }
}

/// Zero-phase Butterworth band-pass of every voxel column.
pub fn bandpass(series: &VolumeSeries, band: (f64, f64)) -> Result<VolumeSeries> {
    let filt = butter_bandpass(BANDPASS_ORDER, band.0, band.1, 1.0 / series.tr())?;
    map_columns(series, |col| {
        let y = filt.filtfilt(col);
        col.copy_from_slice(&y);
    })
}

/// Replace each voxel column by its least-squares residual against
/// `[1 | confounds]`. Near-singular designs fall back to the minimum-norm
/// solution with a warning.
pub fn regress_confounds(series: &VolumeSeries, confounds: &ConfoundMatrix) -> Result<VolumeSeries> {
    let t = series.n_times();
    if confounds.n_rows() != t {
        return Err(Error::LengthMismatch(format!(
            "{} confound rows for {t} volumes",
            confounds.n_rows()
        )));
    }
    if confounds.data.ncols() + 1 >= t {
        return Err(Error::TooManyConfounds {
            rows: t,
            columns: confounds.data.ncols(),
        });
    }
    let basis = residual_basis(confounds.data());
    let data = series.data();
    let coef = basis.transpose() * data;
    let resid = data - &basis * coef;
    series.with_data(resid)
}

/// Orthonormal basis of the column space of `[1 | x]`, truncated at the
/// relative singular-value cutoff.
pub(crate) fn residual_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.nrows();
    let mut design = DMatrix::from_element(t, x.ncols() + 1, 1.0);
    design.view_mut((0, 1), (t, x.ncols())).copy_from(x);
    let svd = design.clone().svd(true, false);
    let u = svd.u.expect("svd computed u");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > RCOND * smax)
        .map(|(i, _)| i)
        .collect();
    if keep.len() < design.ncols() {
        log::warn!(
            "confound design is rank deficient ({} of {} columns); using minimum-norm solution",
            keep.len(),
            design.ncols()
        );
    }
    DMatrix::from_fn(t, keep.len(), |i, k| u[(i, keep[k])])
}

/// Z-score every voxel column with the population standard deviation.
/// Constant columns become zero.
pub fn standardize(series: &VolumeSeries) -> Result<VolumeSeries> {
    let constant = std::sync::atomic::AtomicUsize::new(0);
    let out = map_columns(series, |col| {
        if !standardize_column(col) {
            constant.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
    })?;
    let n = constant.into_inner();
    if n > 0 {
        log::warn!("{n} constant voxel columns set to zero during standardization");
    }
    Ok(out)
}

/// Returns false when the column was constant (and has been zeroed).
pub(crate) fn standardize_column(col: &mut [f64]) -> bool {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        col.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    true
}

/// Keep rows `[head, T - tail)`.
pub fn trim(series: &VolumeSeries, head: usize, tail: usize) -> Result<VolumeSeries> {
    let t = series.n_times();
    if head + tail >= t {
        return Err(Error::EmptyAfterTrim { head, tail, len: t });
    }
    series.with_data(series.data().rows(head, t - head - tail).into_owned())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataio::{Mask, VolumeGrid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series_from_columns(cols: &[Vec<f64>], tr: f64) -> VolumeSeries {
        let t = cols[0].len();
        let g = VolumeGrid::isotropic([cols.len(), 1, 1], 2.0).unwrap();
        let data = DMatrix::from_fn(t, cols.len(), |i, j| cols[j][i]);
        VolumeSeries::new(Arc::new(Mask::full(g)), tr, data).unwrap()
    }

    fn column(s: &VolumeSeries, j: usize) -> Vec<f64> {
        s.data().column(j).iter().copied().collect()
    }

    #[test]
    fn detrend_removes_constants_and_ramps() {
        let s =series_from_columns(&[vec![5.0; 4], vec![0.0, 1.0, 2.0, 3.0]], 2.0);
        let d = detrend(&s).unwrap();
        assert!(d.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn detrend_matches_direct_two_parameter_fit() {
        let t = 40;
        let y: Vec<f64> = (0..t).map(|i| (i as f64).sin() + 0.3 * i as f64).collect();
        let s = series_from_columns(&[y.clone()], 1.0);
        let d = column(&detrend(&s).unwrap(), 0);
        // oracle: normal equations for [1, t] solved by Cramer's rule
        let n = t as f64;
        let st: f64 = (0..t).map(|i| i as f64).sum();
        let stt: f64 = (0..t).map(|i| (i * i) as f64).sum();
        let sy: f64 = y.iter().sum();
        let sty: f64 = y.iter().enumerate().map(|(i, v)| i as f64 * v).sum();
        let det = n * stt - st * st;
        let b0 = (sy * stt - st * sty) / det;
        let b1 = (n * sty - st * sy) / det;
        for i in 0..t {
            let expect = y[i] - b0 - b1 * i as f64;
            assert!((d[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn detrend_needs_three_samples() {
        let s = series_from_columns(&[vec![1.0, 2.0]], 1.0);
        assert!(matches!(detrend(&s), Err(Error::TooFewSamples { .. })));
    }

    /// Amplitude of a single frequency by direct DFT projection.
    fn dft_amplitude(x: &[f64], freq_cycles_per_sample: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * freq_cycles_per_sample * i as f64;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    fn sinusoid_ratio(hz: f64) -> f64 {
        let tr = 2.0;
        let t = 300;
        let x: Vec<f64> = (0..t)
            .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 * tr).sin())
            .collect();
        let y = column(&bandpass(&series_from_columns(&[x.clone()], tr), (0.01, 0.1)).unwrap(), 0);
        let f = hz * tr;
        let inner = 20..t - 20;
        dft_amplitude(&y[inner.clone()], f) / dft_amplitude(&x[inner], f)
    }

    #[test]
    fn passband_sinusoid_retained() {
        let r = sinusoid_ratio(0.05);
        assert!((r - 1.0).abs() < 0.05, "ratio {r}");
    }

    #[test]
    fn stopband_sinusoid_attenuated() {
        let r = sinusoid_ratio(0.2);
        assert!(r < 0.1, "ratio {r}");
    }

    #[test]
    fn bandpass_zero_and_range() {
        let s = series_from_columns(&[vec![0.0; 50]], 2.0);
        assert!(bandpass(&s, (0.01, 0.1)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            bandpass(&s, (0.01, 0.3)),
            Err(Error::BandOutOfRange { .. })
        ));
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn confound_equal_to_series_leaves_nothing() {
        let c: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64).collect();
        let s = series_from_columns(&[c.clone()], 2.0);
        let cm = ConfoundMatrix::new(DMatrix::from_column_slice(20, 1, &c), vec!["x".into()]).unwrap();
        let r = regress_confounds(&s, &cm).unwrap();
        assert!(r.data().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn orthogonal_confounds_only_remove_mean() {
        let y = vec![1.0, 2.0, 3.0, 4.0, 10.0, 6.0];
        // centered and orthogonal to centered y
        let yc: Vec<f64> = y.iter().map(|v| v - 26.0 / 6.0).collect();
        let mut c = vec![1.0, -1.0, 1.0, -1.0, 0.0, 0.0];
        let proj = c.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>()
            / yc.iter().map(|b| b * b).sum::<f64>();
        for (ci, yi) in c.iter_mut().zip(&yc) {
            *ci -= proj * yi;
        }
        let s = series_from_columns(&[y.clone()], 2.0);
        let cm = ConfoundMatrix::new(DMatrix::from_column_slice(6, 1, &c), vec!["c".into()]).unwrap();
        let r = column(&regress_confounds(&s, &cm).unwrap(), 0);
        for (a, b) in r.iter().zip(&yc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn confound_residuals_match_gram_solve() {
        let t = 20;
        let x = random_matrix(t, 5, 3);
        let y = random_matrix(t, 4, 4);
        let cols: Vec<Vec<f64>> = (0..4).map(|j| y.column(j).iter().copied().collect()).collect();
        let s = series_from_columns(&cols, 2.0);
        let names = (0..5).map(|i| format!("c{i}")).collect();
        let r = regress_confounds(&s, &ConfoundMatrix::new(x.clone(), names).unwrap()).unwrap();
        // oracle: explicit normal equations on [1 | x], solved by Gauss-Jordan
        let mut d = DMatrix::from_element(t, 6, 1.0);
        d.view_mut((0, 1), (t, 5)).copy_from(&x);
        let g = d.transpose() * &d;
        let rhs = d.transpose() * &y;
        let beta = gauss_jordan(g, rhs);
        let expect = &y - &d * beta;
        assert!((r.data() - expect).amax() < 1e-10);
    }

    fn gauss_jordan(mut a: DMatrix<f64>, mut b: DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[(i, c)].abs().partial_cmp(&a[(j, c)].abs()).unwrap()).unwrap();
            a.swap_rows(c, p);
            b.swap_rows(c, p);
            let piv = a[(c, c)];
            for j in 0..n {
                a[(c, j)] /= piv;
            }
            for j in 0..b.ncols() {
                b[(c, j)] /= piv;
            }
            for i in 0..n {
                if i != c {
                    let f = a[(i, c)];
                    for j in 0..n {
                        a[(i, j)] -= f * a[(c, j)];
                    }
                    for j in 0..b.ncols() {
                        b[(i, j)] -= f * b[(c, j)];
                    }
                }
            }
        }
        b
    }

    #[test]
    fn too_many_confounds() {
        let s = series_from_columns(&[vec![1.0, 2.0, 3.0]], 2.0);
        let cm = ConfoundMatrix::new(random_matrix(3, 2, 1), vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(regress_confounds(&s, &cm), Err(Error::TooManyConfounds { .. })));
    }

    #[test]
    fn spike_columns_validated_and_generated() {
        let bad = ConfoundMatrix::new(DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]), vec!["spike_a".into()]);
        assert!(bad.is_err());
        let fd = DMatrix::from_column_slice(4, 1, &[0.0, 0.7, 0.1, 0.9]);
        let c = ConfoundMatrix::new(fd, vec!["framewise_displacement".into()]).unwrap();
        let s = c.with_spikes(0.5).unwrap();
        assert_eq!(s.names(), &["framewise_displacement", "spike_0001", "spike_0003"]);
        assert_eq!(s.column("spike_0003").unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn standardize_cases() {
        let s = series_from_columns(&[vec![1.0, 3.0], vec![4.0, 4.0]], 2.0);
        let z = standardize(&s).unwrap();
        assert_eq!(column(&z, 0), vec![-1.0, 1.0]);
        assert_eq!(column(&z, 1), vec![0.0, 0.0]);
        let r = random_matrix(50, 1, 9);
        let s = series_from_columns(&[r.column(0).iter().copied().collect()], 2.0);
        let z = column(&standardize(&s).unwrap(), 0);
        let m = crate::linalg::mean(&z);
        let sd = crate::linalg::pop_std(&z);
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trim_cases() {
        let s = series_from_columns(&[(0..300).map(|i| i as f64).collect()], 2.0);
        let t = trim(&s, 10, 10).unwrap();
        assert_eq!(t.n_times(), 280);
        assert_eq!(t.data()[(0, 0)], 10.0);
        assert_eq!(trim(&s, 0, 0).unwrap(), s);
        let short = series_from_columns(&[vec![0.0; 15]], 2.0);
        assert!(matches!(trim(&short, 10, 10), Err(Error::EmptyAfterTrim { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn standardize_is_idempotent(seed in 0u64..1000) {
            let r = random_matrix(30, 3, seed);
            let cols: Vec<Vec<f64>> = (0..3).map(|j| r.column(j).iter().copied().collect()).collect();
            let once = standardize(&series_from_columns(&cols, 2.0)).unwrap();
            let twice = standardize(&once).unwrap();
            prop_assert!((once.data() - twice.data()).amax() < 1e-12);
        }

        #[test]
        fn detrend_and_bandpass_are_homogeneous(seed in 0u64..1000, a in -5.0f64..5.0) {
            let r = random_matrix(64, 2, seed);
            let cols: Vec<Vec<f64>> = (0..2).map(|j| r.column(j).iter().copied().collect()).collect();
            let s = series_from_columns(&cols, 2.0);
            let scaled = s.with_data(s.data() * a).unwrap();
            let d1 = detrend(&scaled).unwrap();
            let d2 = detrend(&s).unwrap();
            prop_assert!((d1.data() - d2.data() * a).amax() < 1e-10);
            let b1 = bandpass(&scaled, (0.01, 0.1)).unwrap();
            let b2 = bandpass(&s, (0.01, 0.1)).unwrap();
            prop_assert!((b1.data() - b2.data() * a).amax() < 1e-10);
        }

        #[test]
        fn confound_residuals_are_orthogonal(seed in 0u64..1000) {
            let t = 40;
            let x = random_matrix(t, 6, seed);
            let y = random_matrix(t, 3, seed + 1);
            let cols: Vec<Vec<f64>> = (0..3).map(|j| y.column(j).iter().copied().collect()).collect();
            let s = series_from_columns(&cols, 2.0);
            let names = (0..6).map(|i| format!("c{i}")).collect();
            let r = regress_confounds(&s, &ConfoundMatrix::new(x.clone(), names).unwrap()).unwrap();
            for j in 0..3 {
                let rj: Vec<f64> = r.data().column(j).iter().copied().collect();
                let sr = crate::linalg::pop_std(&rj);
                for c in 0..6 {
                    let xc: Vec<f64> = x.column(c).iter().copied().collect();
                    let sc = crate::linalg::pop_std(&xc);
                    let dot: f64 = rj.iter().zip(&xc).map(|(a, b)| a * b).sum();
                    prop_assert!(dot.abs() / (t as f64 * sr * sc) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn operations_preserve_mask() {
        let r = random_matrix(30, 2, 5);
        let cols: Vec<Vec<f64>> = (0..2).map(|j| r.column(j).iter().copied().collect()).collect();
        let s = series_from_columns(&cols, 2.0);
        for out in [detrend(&s).unwrap(), standardize(&s).unwrap(), bandpass(&s, (0.01, 0.1)).unwrap(), smooth(&s, 4.0).unwrap()] {
            assert_eq!(out.mask(), s.mask());
            assert_eq!(out.grid(), s.grid());
        }
    }
}
