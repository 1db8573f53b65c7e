//! Stimulus design matrices at TR resolution.
//!
//! Word-level tracks (surprisal, embeddings) are resampled onto the TR grid
//! with a Lanczos kernel; word rate is counted directly per TR. The
//! resulting pre-FIR matrices are lag-expanded and z-scored by
//! [`assemble_design`].

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    read_matrix_tsv, write_matrix_tsv, write_text, EmbeddingTable, WordTable,
};
use crate::error::{Error, Result};
use crate::linalg::{column_stats, mean};

/// Default FIR delays in TRs.
pub const DEFAULT_DELAYS: [usize; 5] = [1, 2, 3, 4, 5];
pub const DEFAULT_LANCZOS_WINDOW: usize = 3;

/// Values attached to individual words.
#[derive(Debug, Clone, PartialEq)]
pub struct WordFeatureTrack {
    pub name: String,
    /// Word midpoints in seconds.
    pub times: Vec<f64>,
    /// `n_words x d`.
    pub values: DMatrix<f64>,
}

impl WordFeatureTrack {
    pub fn new(name: impl Into<String>, times: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        if times.len() != values.nrows() {
            return Err(Error::LengthMismatch(format!(
                "{} times for {} value rows",
                times.len(),
                values.nrows()
            )));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("word feature track"));
        }
        Ok(Self {
            name: name.into(),
            times,
            values,
        })
    }

    /// Embedding rows attached to word midpoints.
    pub fn from_embeddings(words: &WordTable, emb: &EmbeddingTable) -> Result<Self> {
        emb.check_aligned(words)?;
        let times = words.rows().iter().map(|w| w.midpoint()).collect();
        Self::new("embedding", times, emb.data.clone())
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    fn column_names(&self) -> Vec<String> {
        if self.dim() == 1 {
            vec![self.name.clone()]
        } else {
            (0..self.dim()).map(|j| format!("{}_{j}", self.name)).collect()
        }
    }
}

/// A `T x D` design at TR resolution with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    columns: Vec<String>,
    tr: f64,
}

#[derive(Serialize, Deserialize)]
struct FeatureSidecar {
    tr: f64,
    columns: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>, columns: Vec<String>, tr: f64) -> Result<Self> {
        if columns.len() != data.ncols() {
            return Err(Error::DimMismatch(format!(
                "{} names for {} columns",
                columns.len(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("feature matrix"));
        }
        Ok(Self { data, columns, tr })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    /// Drop `head` leading and `tail` trailing rows.
    pub fn trimmed(&self, head: usize, tail: usize) -> Result<Self> {
        let t = self.n_rows();
        if head + tail >= t {
            return Err(Error::EmptyAfterTrim { head, tail, len: t });
        }
        let data = self.data.rows(head, t - head - tail).into_owned();
        Self::new(data, self.columns.clone(), self.tr)
    }

    /// TSV body plus a `.json` sidecar carrying the TR.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_matrix_tsv(&self.data, &self.columns, &[], path)?;
        let side = FeatureSidecar {
            tr: self.tr,
            columns: self.columns.clone(),
        };
        write_text(sidecar(path), &serde_json::to_string_pretty(&side).expect("serializable"))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (data, columns) = read_matrix_tsv(path)?;
        let sp = sidecar(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: FeatureSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&sp, e))?;
        if side.columns != columns {
            return Err(Error::MalformedHeader {
                path: sp,
                reason: "sidecar columns disagree with the table".into(),
            });
        }
        Self::new(data, columns, side.tr)
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn check_words_fit(words: &WordTable, tr: f64, n_trs: usize) -> Result<()> {
    let end = tr * n_trs as f64;
    for w in words.rows() {
        let m = w.midpoint();
        if m >= end {
            return Err(Error::WordPastEnd { time: m, end });
        }
    }
    Ok(())
}

/// Number of word midpoints falling in each TR bin `[t tr, (t+1) tr)`.
pub fn word_rate(words: &WordTable, tr: f64, n_trs: usize) -> Result<FeatureMatrix> {
    check_words_fit(words, tr, n_trs)?;
    let mut counts = DMatrix::zeros(n_trs, 1);
    for w in words.rows() {
        let bin = (w.midpoint() / tr).floor();
        if bin >= 0.0 {
            counts[(bin as usize, 0)] += 1.0;
        }
    }
    FeatureMatrix::new(counts, vec!["word_rate".into()], tr)
}

/// Log base for surprisal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    E,
    Two,
    Ten,
}

impl LogBase {
    fn log(self, p: f64) -> f64 {
        match self {
            LogBase::E => p.ln(),
            LogBase::Two => p.log2(),
            LogBase::Ten => p.log10(),
        }
    }
}

/// Per-word surprisal `-log P(word | context)`. A surprisal column is passed
/// through unchanged; otherwise probabilities are converted.
pub fn surprisal_track(words: &WordTable, base: LogBase) -> Result<WordFeatureTrack> {
    let mut vals = Vec::with_capacity(words.len());
    for (row, w) in words.rows().iter().enumerate() {
        let s = match (w.surprisal, w.probability) {
            (Some(s), _) => s,
            (None, Some(p)) if p > 0.0 => -base.log(p),
            (None, Some(p)) => return Err(Error::NonPositiveProbability { row, p }),
            (None, None) => return Err(Error::MissingSurprisal),
        };
        vals.push(s);
    }
    let times = words.rows().iter().map(|w| w.midpoint()).collect();
    WordFeatureTrack::new("surprisal", times, DMatrix::from_vec(vals.len(), 1, vals))
}

/// OLS residual of `target` on `[1 | regressor]`.
pub fn residualize(target: &FeatureMatrix, regressor: &FeatureMatrix) -> Result<FeatureMatrix> {
    if target.n_cols() != 1 || regressor.n_cols() != 1 {
        return Err(Error::InvalidArgument("residualize takes single-column inputs".into()));
    }
    if target.n_rows() != regressor.n_rows() {
        return Err(Error::LengthMismatch(format!(
            "target has {} rows, regressor {}",
            target.n_rows(),
            regressor.n_rows()
        )));
    }
    let y = target.column(0);
    let x = regressor.column(0);
    let (my, mx) = (mean(&y), mean(&x));
    let xc: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let sxx: f64 = xc.iter().map(|v| v * v).sum();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if sxx <= 1e-24 * scale * scale * x.len() as f64 {
        return Err(Error::DegenerateRegressor);
    }
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let beta = xc.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let mut r: Vec<f64> = yc.iter().zip(&xc).map(|(y, x)| y - beta * x).collect();
    // a second projection pass removes round-off leakage
    let beta2 = xc.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let m2 = mean(&r);
    for (v, x) in r.iter_mut().zip(&xc) {
        *v -= beta2 * x + m2;
    }
    let name = format!("{}_resid", target.columns()[0]);
    FeatureMatrix::new(DMatrix::from_vec(r.len(), 1, r), vec![name], target.tr())
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Lanczos kernel with `a` lobes.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

/// Resample a word-level track onto TR bins, evaluating the kernel at bin
/// centers `t tr + tr / 2`.
pub fn lanczos_downsample(
    track: &WordFeatureTrack,
    tr: f64,
    n_trs: usize,
    window: usize,
) -> Result<FeatureMatrix> {
    if window == 0 {
        return Err(Error::InvalidArgument("lanczos window must be >= 1".into()));
    }
    if track.times.is_empty() {
        return Err(Error::InvalidArgument("track has no words".into()));
    }
    let end = tr * n_trs as f64;
    if let Some(&t) = track.times.iter().find(|&&t| t >= end || t < 0.0) {
        return Err(Error::WordPastEnd { time: t, end });
    }
    let d = track.dim();
    let mut out = DMatrix::zeros(n_trs, d);
    let reach = window as f64 * tr;
    for (w, &time) in track.times.iter().enumerate() {
        // only bins whose centers lie within the kernel support
        let lo = (((time - reach) / tr) - 0.5).floor().max(0.0) as usize;
        let hi = ((((time + reach) / tr) - 0.5).ceil().max(0.0) as usize).min(n_trs - 1);
        for t in lo..=hi {
            let x = (t as f64 * tr + tr / 2.0 - time) / tr;
            let k = lanczos_kernel(x, window);
            if k != 0.0 {
                for j in 0..d {
                    out[(t, j)] += track.values[(w, j)] * k;
                }
            }
        }
    }
    FeatureMatrix::new(out, track.column_names(), tr)
}

/// Lagged copies of every column: column `(f, d)` at row `t` is feature `f`
/// at row `t - d`, zero before the start.
pub fn fir_expand(features: &FeatureMatrix, delays: &[usize]) -> Result<FeatureMatrix> {
    if delays.is_empty() || delays.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "delays must be non-empty and >= 1, got {delays:?}"
        )));
    }
    let (t, d) = (features.n_rows(), features.n_cols());
    let mut out = DMatrix::zeros(t, d * delays.len());
    let mut names = Vec::with_capacity(d * delays.len());
    for f in 0..d {
        for (k, &delay) in delays.iter().enumerate() {
            let c = f * delays.len() + k;
            for row in delay..t {
                out[(row, c)] = features.data[(row - delay, f)];
            }
            names.push(format!("{}@{delay}", features.columns[f]));
        }
    }
    FeatureMatrix::new(out, names, features.tr)
}

/// Lag expansion and z-scoring of each block, then horizontal concatenation.
/// Constant columns are dropped.
pub fn assemble_design(blocks: &[FeatureMatrix], delays: &[usize]) -> Result<FeatureMatrix> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feature blocks".into()))?;
    let t = first.n_rows();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for b in blocks {
        if b.n_rows() != t {
            return Err(Error::LengthMismatch(format!(
                "block `{}` has {} rows, expected {t}",
                b.columns.first().map(String::as_str).unwrap_or("?"),
                b.n_rows()
            )));
        }
        let fir = fir_expand(b, delays)?;
        let (means, sds) = column_stats(&fir.data);
        for (j, name) in fir.columns.iter().enumerate() {
            if sds[j] <= 1e-12 * means[j].abs().max(1.0) {
                log::warn!("dropping constant design column `{name}`");
                continue;
            }
            cols.push(fir.data.column(j).iter().map(|v| (v - means[j]) / sds[j]).collect());
            names.push(name.clone());
        }
    }
    let data = DMatrix::from_fn(t, cols.len(), |i, j| cols[j][i]);
    FeatureMatrix::new(data, names, first.tr)
}

/// Assemble each run separately (lags never cross run boundaries) and stack
/// the rows. Every run must keep the same columns.
pub fn assemble_runs(runs: &[Vec<FeatureMatrix>], delays: &[usize]) -> Result<FeatureMatrix> {
    assemble_runs_trimmed(runs, delays, 0, 0)
}

/// Like [`assemble_runs`], but drops `head` and `tail` rows of every run
/// after lag expansion, so early lags still see the trimmed volumes.
pub fn assemble_runs_trimmed(
    runs: &[Vec<FeatureMatrix>],
    delays: &[usize],
    head: usize,
    tail: usize,
) -> Result<FeatureMatrix> {
    let parts = runs
        .iter()
        .map(|blocks| assemble_design(blocks, delays)?.trimmed(head, tail))
        .collect::<Result<Vec<_>>>()?;
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to assemble".into()))?;
    if let Some(p) = parts.iter().find(|p| p.columns != first.columns) {
        return Err(Error::DimMismatch(format!(
            "runs disagree on design columns ({} vs {})",
            p.n_cols(),
            first.n_cols()
        )));
    }
    let total: usize = parts.iter().map(FeatureMatrix::n_rows).sum();
    let mut data = DMatrix::zeros(total, first.n_cols());
    let mut at = 0;
    for p in &parts {
        data.rows_mut(at, p.n_rows()).copy_from(&p.data);
        at += p.n_rows();
    }
    FeatureMatrix::new(data, first.columns.clone(), first.tr)
}

/// Horizontal concatenation of blocks with equal row counts.
pub fn hstack(blocks: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feature blocks".into()))?;
    let t = first.n_rows();
    if blocks.iter().any(|b| b.n_rows() != t) {
        return Err(Error::LengthMismatch("blocks differ in row count".into()));
    }
    let d: usize = blocks.iter().map(FeatureMatrix::n_cols).sum();
    let mut data = DMatrix::zeros(t, d);
    let mut names = Vec::with_capacity(d);
    let mut at = 0;
    for b in blocks {
        data.columns_mut(at, b.n_cols()).copy_from(&b.data);
        names.extend(b.columns.iter().cloned());
        at += b.n_cols();
    }
    FeatureMatrix::new(data, names, first.tr)
}

/// Which tracks enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackKind {
    WordRate,
    Surprisal,
    /// Surprisal with word rate regressed out.
    ResidualSurprisal,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub tracks: Vec<TrackKind>,
    pub delays: Vec<usize>,
    pub lanczos_window: usize,
    pub log_base: LogBase,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            tracks: vec![TrackKind::WordRate, TrackKind::Embedding],
            delays: DEFAULT_DELAYS.to_vec(),
            lanczos_window: DEFAULT_LANCZOS_WINDOW,
            log_base: LogBase::E,
        }
    }
}

/// Pre-FIR blocks for one run, in configured track order.
pub fn build_blocks(
    config: &FeatureConfig,
    words: &WordTable,
    embeddings: Option<&EmbeddingTable>,
    tr: f64,
    n_trs: usize,
) -> Result<Vec<FeatureMatrix>> {
    let mut out = Vec::with_capacity(config.tracks.len());
    for kind in &config.tracks {
        let block = match kind {
            TrackKind::WordRate => word_rate(words, tr, n_trs)?,
            TrackKind::Surprisal => {
                let s = surprisal_track(words, config.log_base)?;
                lanczos_downsample(&s, tr, n_trs, config.lanczos_window)?
            }
            TrackKind::ResidualSurprisal => {
                let s = surprisal_track(words, config.log_base)?;
                let s = lanczos_downsample(&s, tr, n_trs, config.lanczos_window)?;
                residualize(&s, &word_rate(words, tr, n_trs)?)?
            }
            TrackKind::Embedding => {
                let emb = embeddings.ok_or_else(|| {
                    Error::InvalidArgument("embedding track requested without embeddings".into())
                })?;
                let track = WordFeatureTrack::from_embeddings(words, emb)?;
                lanczos_downsample(&track, tr, n_trs, config.lanczos_window)?
            }
        };
        out.push(block);
    }
    Ok(out)
}
