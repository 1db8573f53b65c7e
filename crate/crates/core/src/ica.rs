//! Spatial ICA: voxels are the samples, time points the features.
//!
//! The centered data `X_c` (`T x V`, each time point's mean over voxels
//! removed) are whitened to `k` dimensions with the top eigenvectors of
//! `X_c X_c^T`, then rotated by symmetric FastICA with the logcosh
//! contrast. The fitted model satisfies `X_c ≈ A S`, with `S` the `k x V`
//! spatial sources (unit population variance per row) and `A` the `T x k`
//! time courses. New runs are projected with the pseudo-inverse of `S`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{
    read_matrix, write_matrix, write_matrix_tsv, write_volume_series, Mask, VolumeGrid,
    VolumeSeries,
};
use crate::error::{Error, Result};
use crate::linalg::{pinv, sym_eigen_desc, symmetric_decorrelate};

/// Whitened eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcaConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            k: 100,
            seed: 0,
            max_iter: 200,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub delta: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    mask: Arc<Mask>,
    seed: u64,
    convergence: Convergence,
    /// `k x V`
    sources: DMatrix<f64>,
    /// `T x k`, training time courses
    mixing: DMatrix<f64>,
    /// `k x T`, maps centered training data to sources
    unmixing: DMatrix<f64>,
    /// `k x T` whitening projection
    whitening: DMatrix<f64>,
    /// Per-time-point voxel means removed before whitening.
    feature_means: Vec<f64>,
    /// `V x k`
    source_pinv: DMatrix<f64>,
}

/// Fit spatial ICA with `k` components.
///
/// Returns [`Error::NonConverged`] carrying the best iterate when the
/// tolerance is not reached within `max_iter` iterations.
pub fn fit_ica(series: &VolumeSeries, config: &IcaConfig) -> Result<IcaModel> {
    let IcaConfig {
        k,
        seed,
        max_iter,
        tol,
    } = *config;
    let x = series.data();
    let (t, v) = x.shape();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if k >= t || k > v {
        return Err(Error::RankTooLow { k });
    }
    warn_if_not_standardized(x);

    let feature_means: Vec<f64> = x.row_iter().map(|r| r.sum() / v as f64).collect();
    let mut xc = x.clone();
    for (i, m) in feature_means.iter().enumerate() {
        xc.row_mut(i).add_scalar_mut(-m);
    }
    let gram = &xc * xc.transpose();
    let (vals, vecs) = sym_eigen_desc(&gram);
    if !(vals[k - 1] > RANK_TOL * vals[0]) {
        return Err(Error::RankTooLow { k });
    }
    let scale = (v as f64).sqrt();
    let uk = vecs.columns(0, k).into_owned();
    let sig: Vec<f64> = (0..k).map(|i| vals[i].sqrt()).collect();
    let whitening = DMatrix::from_fn(k, t, |i, j| scale * uk[(j, i)] / sig[i]);
    let z = &whitening * &xc;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelate(&w0);
    let mut best = (w.clone(), f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=max_iter {
        iterations = it;
        let w1 = fastica_step(&w, &z);
        let delta = (0..k)
            .map(|i| (w1.row(i).dot(&w.row(i)).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = w1;
        if delta < best.1 {
            best = (w.clone(), delta);
        }
        if delta < tol {
            converged = true;
            break;
        }
    }
    let (w_final, delta) = if converged { (w, best.1) } else { best };
    let sources = &w_final * &z;
    let unmixing = &w_final * &whitening;
    let mut us = uk.clone();
    for (j, s) in sig.iter().enumerate() {
        us.column_mut(j).scale_mut(*s / scale);
    }
    let mixing = us * w_final.transpose();
    let model = IcaModel::from_parts(
        series.mask_arc().clone(),
        seed,
        Convergence {
            iterations,
            delta,
            converged,
        },
        sources,
        mixing,
        unmixing,
        whitening,
        feature_means,
    );
    if converged {
        Ok(model)
    } else {
        Err(Error::NonConverged {
            iterations,
            delta,
            best: Box::new(model),
        })
    }
}

/// One symmetric logcosh fixed-point update followed by decorrelation.
fn fastica_step(w: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.ncols() as f64;
    let mut g = w * z;
    let mut gprime_mean = DVector::zeros(w.nrows());
    for i in 0..g.nrows() {
        let mut acc = 0.0;
        for j in 0..g.ncols() {
            let th = g[(i, j)].tanh();
            g[(i, j)] = th;
            acc += 1.0 - th * th;
        }
        gprime_mean[i] = acc / n;
    }
    let mut w1 = (g * z.transpose()) / n;
    for i in 0..w.nrows() {
        let row = w.row(i) * gprime_mean[i];
        let mut r = w1.row_mut(i);
        r -= row;
    }
    symmetric_decorrelate(&w1)
}

fn warn_if_not_standardized(x: &DMatrix<f64>) {
    let t = x.nrows() as f64;
    let off = x.column_iter().take(64).any(|c| {
        let m = c.sum() / t;
        let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
        m.abs() > 1e-6 || (var - 1.0).abs() > 1e-6 && var > 0.0
    });
    if off {
        log::warn!("ICA input does not look standardized per voxel");
    }
}

impl IcaModel {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        mask: Arc<Mask>,
        seed: u64,
        convergence: Convergence,
        sources: DMatrix<f64>,
        mixing: DMatrix<f64>,
        unmixing: DMatrix<f64>,
        whitening: DMatrix<f64>,
        feature_means: Vec<f64>,
    ) -> Self {
        let source_pinv = pinv(&sources);
        Self {
            mask,
            seed,
            convergence,
            sources,
            mixing,
            unmixing,
            whitening,
            feature_means,
            source_pinv,
        }
    }

    /// Model built from fixed sources only, e.g. planted ground truth.
    pub fn from_sources(mask: Arc<Mask>, sources: DMatrix<f64>) -> Result<Self> {
        if sources.ncols() != mask.count() {
            return Err(Error::DimMismatch(format!(
                "{} source columns for {} mask voxels",
                sources.ncols(),
                mask.count()
            )));
        }
        let k = sources.nrows();
        Ok(Self::from_parts(
            mask,
            0,
            Convergence {
                iterations: 0,
                delta: 0.0,
                converged: true,
            },
            sources,
            DMatrix::zeros(0, k),
            DMatrix::zeros(k, 0),
            DMatrix::zeros(k, 0),
            Vec::new(),
        ))
    }

    pub fn k(&self) -> usize {
        self.sources.nrows()
    }
    pub fn mask(&self) -> &Mask {
        &self.mask
    }
    pub fn mask_arc(&self) -> &Arc<Mask> {
        &self.mask
    }
    pub fn grid(&self) -> &VolumeGrid {
        self.mask.grid()
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn convergence(&self) -> Convergence {
        self.convergence
    }
    pub fn sources(&self) -> &DMatrix<f64> {
        &self.sources
    }
    pub fn mixing(&self) -> &DMatrix<f64> {
        &self.mixing
    }
    pub fn unmixing(&self) -> &DMatrix<f64> {
        &self.unmixing
    }
    pub fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }
    pub fn feature_means(&self) -> &[f64] {
        &self.feature_means
    }
    pub fn source_pinv(&self) -> &DMatrix<f64> {
        &self.source_pinv
    }

    pub fn source_row(&self, i: usize) -> Vec<f64> {
        self.sources.row(i).iter().copied().collect()
    }

    /// Content digest over sources and mask.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.mask.digest().as_bytes());
        h.update((self.k() as u64).to_le_bytes());
        for v in self.sources.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Negate every source whose median is negative, together with its
/// time course and unmixing row. A median of exactly zero is left alone.
pub fn sign_align(model: &IcaModel) -> IcaModel {
    let mut out = model.clone();
    for i in 0..model.k() {
        if median(&model.source_row(i)) < 0.0 {
            out.sources.row_mut(i).neg_mut();
            out.source_pinv.column_mut(i).neg_mut();
            if out.mixing.ncols() == model.k() {
                out.mixing.column_mut(i).neg_mut();
            }
            if out.unmixing.nrows() == model.k() && out.unmixing.ncols() > 0 {
                out.unmixing.row_mut(i).neg_mut();
            }
        }
    }
    out
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Component time courses of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSeries {
    /// `T x K`
    pub data: DMatrix<f64>,
    pub tr: f64,
    pub model_digest: String,
    pub run_id: String,
}

impl ComponentSeries {
    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.k()).map(component_name).collect()
    }

    /// TSV body at `path`, `{tr, model_digest, run_id, k, t}` at `path.json`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_matrix_tsv(&self.data, &self.column_names(), &[], path)?;
        let meta = ComponentSidecar {
            tr: self.tr,
            model_digest: self.model_digest.clone(),
            run_id: self.run_id.clone(),
            k: self.k(),
            t: self.data.nrows(),
        };
        let sp = json_sidecar(path);
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&sp, e))?;
        crate::dataio::write_text(&sp, &json)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (data, _) = crate::dataio::read_matrix_tsv(path)?;
        let sp = json_sidecar(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let meta: ComponentSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&sp, e))?;
        if meta.k != data.ncols() || meta.t != data.nrows() {
            return Err(Error::DimMismatch(format!(
                "sidecar declares {}x{}, table is {}x{}",
                meta.t,
                meta.k,
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self {
            data,
            tr: meta.tr,
            model_digest: meta.model_digest,
            run_id: meta.run_id,
        })
    }
}

pub fn component_name(i: usize) -> String {
    format!("IC{i:03}")
}

fn json_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Serialize, Deserialize)]
struct ComponentSidecar {
    tr: f64,
    model_digest: String,
    run_id: String,
    k: usize,
    t: usize,
}

/// `A_new = X_new S^+` for a run on the training mask.
pub fn project(model: &IcaModel, series: &VolumeSeries, run_id: &str) -> Result<ComponentSeries> {
    if !series.grid().same_geometry(model.grid()) {
        return Err(Error::GridMismatch(format!(
            "series grid {:?} vs model grid {:?}",
            series.grid().dims,
            model.grid().dims
        )));
    }
    if series.mask().digest() != model.mask().digest() {
        return Err(Error::MaskMismatch);
    }
    Ok(ComponentSeries {
        data: series.data() * model.source_pinv(),
        tr: series.tr(),
        model_digest: model.digest(),
        run_id: run_id.to_owned(),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    k: usize,
    seed: u64,
    convergence: Convergence,
    mask_digest: String,
    model_digest: String,
    dims: [usize; 3],
    voxel_size: [f64; 3],
    affine: [[f64; 4]; 4],
    mask_rle: Vec<u64>,
    tr: f64,
}

/// Persist a model under `dir`: `model.json` metadata, lossless f64
/// matrices, and `sources.vxt` with one volume per component for viewing.
pub fn write_model(model: &IcaModel, tr: f64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = model.grid();
    let meta = ModelMeta {
        k: model.k(),
        seed: model.seed,
        convergence: model.convergence,
        mask_digest: model.mask.digest(),
        model_digest: model.digest(),
        dims: g.dims,
        voxel_size: g.voxel_size,
        affine: g.affine,
        mask_rle: model.mask.to_rle(),
        tr,
    };
    let names: Vec<String> = Vec::new();
    write_matrix(&model.sources, &names, dir.join("sources.mat"))?;
    write_matrix(&model.mixing, &names, dir.join("mixing.mat"))?;
    write_matrix(&model.unmixing, &names, dir.join("unmixing.mat"))?;
    write_matrix(&model.whitening, &names, dir.join("whitening.mat"))?;
    let means = DMatrix::from_column_slice(model.feature_means.len(), 1, &model.feature_means);
    write_matrix(&means, &names, dir.join("feature_means.mat"))?;
    if model.k() >= 2 {
        let vol = VolumeSeries::new(model.mask.clone(), 1.0, model.sources.clone())?;
        write_volume_series(&vol, dir.join("sources.vxt"))?;
    }
    let p = dir.join("model.json");
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&p, e))?;
    crate::dataio::write_text(&p, &json)
}

pub fn read_model(dir: impl AsRef<Path>) -> Result<(IcaModel, f64)> {
    let dir = dir.as_ref();
    let p = dir.join("model.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::json(&p, e))?;
    let grid = VolumeGrid::new(meta.dims, meta.voxel_size, meta.affine)?;
    let mask = Mask::from_rle(grid, &meta.mask_rle)?;
    if mask.digest() != meta.mask_digest {
        return Err(Error::MaskMismatch);
    }
    let (sources, _) = read_matrix(dir.join("sources.mat"))?;
    let (mixing, _) = read_matrix(dir.join("mixing.mat"))?;
    let (unmixing, _) = read_matrix(dir.join("unmixing.mat"))?;
    let (whitening, _) = read_matrix(dir.join("whitening.mat"))?;
    let (means, _) = read_matrix(dir.join("feature_means.mat"))?;
    let model = IcaModel::from_parts(
        Arc::new(mask),
        meta.seed,
        meta.convergence,
        sources,
        mixing,
        unmixing,
        whitening,
        means.iter().copied().collect(),
    );
    if model.digest() != meta.model_digest {
        return Err(Error::MalformedHeader {
            path: p,
            reason: "model digest does not match stored sources".into(),
        });
    }
    Ok((model, meta.tr))
}
