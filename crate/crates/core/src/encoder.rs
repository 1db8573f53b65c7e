//! Ridge encoding models with cross-validated, per-target regularization.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{read_matrix, write_matrix, write_text, Atlas, VolumeSeries};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::ica::ComponentSeries;
use crate::linalg::{column_stats, select_rows, spd_solve};
use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FoldScheme {
    #[default]
    ContiguousBlocks,
    ByStory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeSpec {
    pub alpha_grid: Vec<f64>,
    pub folds: usize,
    pub fold_scheme: FoldScheme,
}

impl Default for RidgeSpec {
    fn default() -> Self {
        Self {
            alpha_grid: log_grid(1.0, 1e4, 10),
            folds: 5,
            fold_scheme: FoldScheme::ContiguousBlocks,
        }
    }
}

/// `n` values log-spaced from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

impl RidgeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a > 0.0 && a.is_finite()))
        {
            return Err(Error::config("ridge.alpha_grid", "must be non-empty and strictly positive"));
        }
        if self.folds < 2 {
            return Err(Error::config("ridge.folds", "must be at least 2"));
        }
        Ok(())
    }
}

/// Held-out row sets for each fold.
///
/// `stories` labels each row with its run; it is required for by-story
/// folds, where whole stories are shuffled by `seed` and dealt round-robin.
pub fn make_folds(
    n_rows: usize,
    spec: &RidgeSpec,
    stories: Option<&[usize]>,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let k = spec.folds;
    match spec.fold_scheme {
        FoldScheme::ContiguousBlocks => {
            if n_rows <= k {
                return Err(Error::TooFewRows { rows: n_rows, folds: k });
            }
            Ok((0..k)
                .map(|f| (f * n_rows / k..(f + 1) * n_rows / k).collect())
                .collect())
        }
        FoldScheme::ByStory => {
            let labels = stories.ok_or_else(|| {
                Error::InvalidArgument("by-story folds need story labels".into())
            })?;
            if labels.len() != n_rows {
                return Err(Error::LengthMismatch(format!(
                    "{} story labels for {n_rows} rows",
                    labels.len()
                )));
            }
            let mut ids: Vec<usize> = labels.to_vec();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < k {
                return Err(Error::InvalidArgument(format!(
                    "{} stories cannot fill {k} folds",
                    ids.len()
                )));
            }
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut folds = vec![Vec::new(); k];
            for (pos, id) in ids.iter().enumerate() {
                folds[pos % k].extend((0..n_rows).filter(|&r| labels[r] == *id));
            }
            Ok(folds)
        }
    }
}

/// Training-row column statistics; zero spread is replaced by one so the
/// column becomes zero after scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let (means, sds) = column_stats(x);
        let sds = sds
            .into_iter()
            .zip(&means)
            .map(|(s, m)| if s <= 1e-12 * m.abs().max(1.0) { 1.0 } else { s })
            .collect();
        Self { means, sds }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.means[j]) / self.sds[j])
    }
}

/// Closed-form ridge on already-scaled `x` and centered `y`, one alpha per
/// target. Targets that share an alpha share one factorization.
fn solve_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, alphas: &[f64]) -> DMatrix<f64> {
    let d = x.ncols();
    let gram = x.transpose() * x;
    let xty = x.transpose() * y;
    let mut distinct: Vec<f64> = alphas.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut w = DMatrix::zeros(d, y.ncols());
    for a in distinct {
        let cols: Vec<usize> = (0..alphas.len()).filter(|&m| alphas[m] == a).collect();
        let rhs = DMatrix::from_fn(d, cols.len(), |i, j| xty[(i, cols[j])]);
        let mut lhs = gram.clone();
        for i in 0..d {
            lhs[(i, i)] += a;
        }
        let sol = spd_solve(lhs, &rhs);
        for (j, &m) in cols.iter().enumerate() {
            w.set_column(m, &sol.column(j));
        }
    }
    w
}

fn column_means(y: &DMatrix<f64>) -> Vec<f64> {
    column_stats(y).0
}

fn centered(y: &DMatrix<f64>, means: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - means[j])
}

/// Pearson r, or 0 when either side is constant.
fn score(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b).unwrap_or(0.0)
}

fn check_inputs(x: &FeatureMatrix, y: &DMatrix<f64>) -> Result<()> {
    if x.n_rows() != y.nrows() {
        return Err(Error::LengthMismatch(format!(
            "design has {} rows, targets {}",
            x.n_rows(),
            y.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("targets"));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("design"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub design_columns: Vec<String>,
    pub target_names: Vec<String>,
    pub alpha_per_target: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// `folds x targets` at the chosen alpha.
    pub cv_scores: Vec<Vec<f64>>,
    /// `alphas x targets`, fold-averaged.
    pub cv_grid: Vec<Vec<f64>>,
    pub alpha_grid: Vec<f64>,
    pub scaler: ColumnScaler,
}

/// Fitted ridge weights and their selection diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingModel {
    /// `D x M`.
    pub weights: DMatrix<f64>,
    pub meta: ModelMeta,
}

impl EncodingModel {
    pub fn n_targets(&self) -> usize {
        self.weights.ncols()
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_matrix(&self.weights, &self.meta.target_names, dir.join("weights.mat"))?;
        write_text(
            dir.join("model.json"),
            &serde_json::to_string_pretty(&self.meta).expect("serializable"),
        )
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (weights, _) = read_matrix(dir.join("weights.mat"))?;
        let p = dir.join("model.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::json(&p, e))?;
        if weights.nrows() != meta.design_columns.len() || weights.ncols() != meta.target_names.len()
        {
            return Err(Error::MalformedHeader {
                path: dir.to_path_buf(),
                reason: "weights shape disagrees with metadata".into(),
            });
        }
        Ok(Self { weights, meta })
    }
}

/// Fit per-target ridge models, selecting each target's alpha by mean
/// out-of-fold Pearson r (ties go to the smaller alpha), then refit on all
/// rows.
pub fn fit_ridge(
    x: &FeatureMatrix,
    y: &DMatrix<f64>,
    target_names: &[String],
    spec: &RidgeSpec,
    stories: Option<&[usize]>,
    seed: u64,
) -> Result<EncodingModel> {
    spec.validate()?;
    check_inputs(x, y)?;
    if target_names.len() != y.ncols() {
        return Err(Error::DimMismatch(format!(
            "{} target names for {} targets",
            target_names.len(),
            y.ncols()
        )));
    }
    let folds = make_folds(x.n_rows(), spec, stories, seed)?;
    let m = y.ncols();
    let na = spec.alpha_grid.len();

    // per fold: alphas x targets scores
    let per_fold: Vec<Vec<Vec<f64>>> = folds
        .par_iter()
        .map(|held| {
            let (train, test) = split_rows(x.n_rows(), held);
            let xtr_raw = select_rows(x.data(), &train);
            let scaler = ColumnScaler::fit(&xtr_raw);
            let xtr = scaler.apply(&xtr_raw);
            let xte = scaler.apply(&select_rows(x.data(), &test));
            let ytr = select_rows(y, &train);
            let yte = select_rows(y, &test);
            let mu = column_means(&ytr);
            let ytr_c = centered(&ytr, &mu);
            spec.alpha_grid
                .iter()
                .map(|&a| {
                    let w = solve_ridge(&xtr, &ytr_c, &vec![a; m]);
                    let pred = &xte * &w;
                    (0..m)
                        .map(|j| {
                            let p: Vec<f64> = pred.column(j).iter().map(|v| v + mu[j]).collect();
                            score(&p, yte.column(j).as_slice())
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut grid = vec![vec![0.0; m]; na];
    for f in &per_fold {
        for (ai, row) in f.iter().enumerate() {
            for j in 0..m {
                grid[ai][j] += row[j] / folds.len() as f64;
            }
        }
    }
    let mut chosen = vec![0usize; m];
    for j in 0..m {
        for ai in 1..na {
            if grid[ai][j] > grid[chosen[j]][j] {
                chosen[j] = ai;
            }
        }
    }
    let alphas: Vec<f64> = chosen.iter().map(|&ai| spec.alpha_grid[ai]).collect();
    let cv_scores = per_fold
        .iter()
        .map(|f| (0..m).map(|j| f[chosen[j]][j]).collect())
        .collect();

    let scaler = ColumnScaler::fit(x.data());
    let xs = scaler.apply(x.data());
    let mu = column_means(y);
    let weights = solve_ridge(&xs, &centered(y, &mu), &alphas);
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("ridge weights"));
    }
    Ok(EncodingModel {
        weights,
        meta: ModelMeta {
            design_columns: x.columns().to_vec(),
            target_names: target_names.to_vec(),
            alpha_per_target: alphas,
            intercepts: mu,
            cv_scores,
            cv_grid: grid,
            alpha_grid: spec.alpha_grid.clone(),
            scaler,
        },
    })
}

fn split_rows(n: usize, held: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut is_held = vec![false; n];
    for &r in held {
        is_held[r] = true;
    }
    let train = (0..n).filter(|&r| !is_held[r]).collect();
    (train, held.to_vec())
}

/// Apply a fitted model, standardizing with its stored training statistics.
pub fn predict(model: &EncodingModel, x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if x.n_cols() != model.weights.nrows() {
        return Err(Error::DimMismatch(format!(
            "design has {} columns, model expects {}",
            x.n_cols(),
            model.weights.nrows()
        )));
    }
    let mut out = model.meta.scaler.apply(x.data()) * &model.weights;
    for (j, b) in model.meta.intercepts.iter().enumerate() {
        out.column_mut(j).add_scalar_mut(*b);
    }
    Ok(out)
}

/// Out-of-fold predictions at fixed per-target alphas, rows in original
/// order.
pub fn cv_predict(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alphas: &[f64],
    folds: &[Vec<usize>],
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    for held in folds {
        let (train, test) = split_rows(x.nrows(), held);
        let xtr_raw = select_rows(x, &train);
        let scaler = ColumnScaler::fit(&xtr_raw);
        let ytr = select_rows(y, &train);
        let mu = column_means(&ytr);
        let w = solve_ridge(&scaler.apply(&xtr_raw), &centered(&ytr, &mu), alphas);
        let pred = scaler.apply(&select_rows(x, &test)) * w;
        for (i, &r) in test.iter().enumerate() {
            for j in 0..y.ncols() {
                out[(r, j)] = pred[(i, j)] + mu[j];
            }
        }
    }
    out
}

/// Where encoding targets come from.
pub enum TargetSource<'a> {
    Voxels(&'a VolumeSeries),
    /// Mean over in-mask voxels of each parcel.
    RoiMeans(&'a VolumeSeries, &'a Atlas),
    Components(&'a ComponentSeries),
}

/// Targets matrix `T x M` and names.
pub fn fit_targets_from(source: TargetSource<'_>) -> Result<(DMatrix<f64>, Vec<String>)> {
    match source {
        TargetSource::Voxels(s) => {
            let names = s.mask().indices().iter().map(|i| format!("v{i}")).collect();
            Ok((s.data().clone(), names))
        }
        TargetSource::RoiMeans(s, atlas) => {
            if !atlas.grid.same_geometry(s.grid()) {
                return Err(Error::GridMismatch("atlas and series grids differ".into()));
            }
            let lookup = s.mask().column_lookup();
            let mut out = DMatrix::zeros(s.n_times(), atlas.parcels.len());
            let mut names = Vec::with_capacity(atlas.parcels.len());
            for (p, parcel) in atlas.parcels.iter().enumerate() {
                let cols: Vec<usize> = parcel
                    .voxels
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .filter_map(|(i, _)| lookup[i])
                    .collect();
                if cols.is_empty() {
                    return Err(Error::EmptyParcel(parcel.name.clone()));
                }
                for t in 0..s.n_times() {
                    out[(t, p)] =
                        cols.iter().map(|&c| s.data()[(t, c)]).sum::<f64>() / cols.len() as f64;
                }
                names.push(parcel.name.clone());
            }
            Ok((out, names))
        }
        TargetSource::Components(c) => Ok((c.data.clone(), c.column_names())),
    }
}
