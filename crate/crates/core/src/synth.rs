//! Synthetic subjects with planted sources, stimulus-driven time courses
//! and a motion/edge artifact.
//!
//! ICA can only separate non-Gaussian sources. Every planted map is a
//! truncated Gaussian blob multiplied by Laplace voxel noise, so the maps
//! are sparse and heavy-tailed by construction.
//!
//! Three seeds control the draw. `geometry_seed` places the maps,
//! `stimulus_seed` draws the stories (words, surprisal, embeddings) and
//! `seed` draws everything subject-specific: noise, motion and undriven
//! time courses. Subjects that share the first two seeds hear the same
//! stories and carry the same networks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    write_atlas, write_confounds, write_embeddings, write_label_volume, write_matrix, write_text,
    write_volume_series, write_word_table, Atlas, EmbeddingTable, Mask, Parcel, VolumeGrid,
    VolumeSeries, Word, WordTable,
};
use crate::error::{Error, Result};
use crate::features::{
    fir_expand, lanczos_downsample, residualize, surprisal_track, word_rate, FeatureMatrix,
    LogBase, WordFeatureTrack, DEFAULT_DELAYS, DEFAULT_LANCZOS_WINDOW,
};
use crate::ica::IcaModel;
use crate::preprocess::ConfoundMatrix;
use crate::stats::pearson;

/// What drives a planted component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Word rate.
    Auditory,
    /// Surprisal with word rate regressed out.
    Language,
    /// A fixed projection of the word embeddings.
    Semantic,
    /// Lagged response to an input unrelated to the stimulus.
    Visual,
    /// Motion-locked, edge-localized artifact.
    Artifact,
}

impl Role {
    pub fn is_driven(self) -> bool {
        matches!(self, Role::Auditory | Role::Language | Role::Semantic)
    }

    fn stem(self) -> &'static str {
        match self {
            Role::Auditory => "AUD",
            Role::Language => "LANG",
            Role::Semantic => "SEM",
            Role::Visual => "VIS",
            Role::Artifact => "ART",
        }
    }
}

/// Default role list: AUD, LANG, SEM, VIS, ART, with extra semantic
/// components inserted before VIS when `k > 5`.
pub fn default_roles(k: usize) -> Vec<Role> {
    let base = [Role::Auditory, Role::Language, Role::Semantic, Role::Visual, Role::Artifact];
    if k <= base.len() {
        return base[..k].to_vec();
    }
    let mut out = vec![Role::Auditory, Role::Language];
    out.extend(std::iter::repeat_n(Role::Semantic, k - 4));
    out.extend([Role::Visual, Role::Artifact]);
    out
}

/// Names such as `SEM`, `SEM2`, `SEM3` for repeated roles.
pub fn role_names(roles: &[Role]) -> Vec<String> {
    let mut seen = std::collections::HashMap::new();
    roles
        .iter()
        .map(|r| {
            let n = seen.entry(r.stem()).or_insert(0);
            *n += 1;
            if *n == 1 {
                r.stem().to_string()
            } else {
                format!("{}{}", r.stem(), n)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Estimation,
    Training,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub tr: f64,
    pub k_true: usize,
    /// Overrides [`default_roles`] when given.
    pub roles: Option<Vec<Role>>,
    pub blob_radius: f64,
    /// Scale of the Laplace voxel noise inside blobs.
    pub blob_texture: f64,
    pub noise_sd: f64,
    pub artifact: bool,
    /// FIR weights over [`DEFAULT_DELAYS`].
    pub fir_weights: Vec<f64>,
    /// Scale each driver to unit variance (using the first run's
    /// statistics) before lag filtering.
    pub normalize_drivers: bool,
    pub embedding_dim: usize,
    /// Mean word rate in words per second.
    pub words_per_second: f64,
    pub estimation_runs: usize,
    pub training_runs: usize,
    pub run_trs: usize,
    pub test_trs: usize,
    /// Shuffle the order of planted components (the truth records it).
    pub shuffle_components: bool,
    pub seed: u64,
    pub stimulus_seed: Option<u64>,
    pub geometry_seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: [16, 16, 16],
            voxel_size: 2.0,
            tr: 2.0,
            k_true: 5,
            roles: None,
            blob_radius: 3.0,
            blob_texture: 0.3,
            noise_sd: 0.1,
            artifact: true,
            fir_weights: vec![0.2, 0.5, 0.6, 0.45, 0.25],
            normalize_drivers: true,
            embedding_dim: 8,
            words_per_second: 2.5,
            estimation_runs: 1,
            training_runs: 3,
            run_trs: 300,
            test_trs: 800,
            shuffle_components: false,
            seed: 0,
            stimulus_seed: None,
            geometry_seed: None,
        }
    }
}

impl SynthSpec {
    pub fn roles(&self) -> Vec<Role> {
        let mut roles = self.roles.clone().unwrap_or_else(|| default_roles(self.k_true));
        if !self.artifact {
            roles.retain(|r| *r != Role::Artifact);
        }
        roles
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 {
            return Err(Error::config("synth.k_true", "must be at least 1"));
        }
        if let Some(r) = &self.roles {
            if r.len() != self.k_true {
                return Err(Error::config("synth.roles", "length must equal k_true"));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::config("synth.noise_sd", "must be non-negative"));
        }
        if self.fir_weights.len() != DEFAULT_DELAYS.len() {
            return Err(Error::config("synth.fir_weights", "need one weight per delay 1..5"));
        }
        if self.run_trs < 20 || self.test_trs < 20 {
            return Err(Error::config("synth.run_trs", "runs need at least 20 volumes"));
        }
        if self.training_runs == 0 || self.estimation_runs == 0 {
            return Err(Error::config("synth", "need estimation and training runs"));
        }
        if !(self.tr > 0.0 && self.voxel_size > 0.0 && self.words_per_second > 0.0) {
            return Err(Error::config("synth", "tr, voxel_size and words_per_second must be positive"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("synth.embedding_dim", "must be at least 1"));
        }
        Ok(())
    }

    fn stimulus_seed(&self) -> u64 {
        self.stimulus_seed.unwrap_or(self.seed)
    }

    fn geometry_seed(&self) -> u64 {
        self.geometry_seed.unwrap_or(self.seed)
    }

    /// `(run id, split, length)` in generation order.
    pub fn run_layout(&self) -> Vec<(String, Split, usize)> {
        let mut out = Vec::new();
        for i in 0..self.estimation_runs {
            out.push((format!("est-{:02}", i + 1), Split::Estimation, self.run_trs));
        }
        for i in 0..self.training_runs {
            out.push((format!("train-{:02}", i + 1), Split::Training, self.run_trs));
        }
        out.push(("test-01".to_string(), Split::Test, self.test_trs));
        out
    }
}

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag << 32 | index);
    rng
}

// head position relaxes back towards rest after each displacement
const MOTION_AR: f64 = 0.9;

const TAG_GEOMETRY: u64 = 1;
const TAG_STORY: u64 = 2;
const TAG_SUBJECT: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_WEIGHTS: u64 = 5;

/// One generated run with its stimulus files.
#[derive(Debug, Clone)]
pub struct SynthRun {
    pub id: String,
    pub split: Split,
    pub series: VolumeSeries,
    pub words: WordTable,
    pub embeddings: EmbeddingTable,
    pub confounds: ConfoundMatrix,
    /// Planted time courses `T x k`.
    pub time_courses: DMatrix<f64>,
}

/// Everything known about how the data were made.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub mask: Arc<Mask>,
    /// Planted maps, `k x V`.
    pub sources: DMatrix<f64>,
    pub roles: Vec<Role>,
    pub names: Vec<String>,
    pub runs: Vec<SynthRun>,
    /// One parcel per planted blob, named after its component.
    pub atlas: Atlas,
    pub csf: Vec<bool>,
    /// Unit-norm embedding projections of the semantic components, in the
    /// order SEM, SEM2, ...
    pub semantic_weights: Vec<Vec<f64>>,
    pub gains: Vec<f64>,
}

impl SynthData {
    pub fn driven(&self) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i].is_driven()).collect()
    }

    pub fn index_of(&self, role: Role) -> Option<usize> {
        self.roles.iter().position(|r| *r == role)
    }

    pub fn runs_in(&self, split: Split) -> impl Iterator<Item = &SynthRun> {
        self.runs.iter().filter(move |r| r.split == split)
    }
}

/// Blob centers: corners of the inner cube, in a geometry-seeded order.
fn blob_centers(spec: &SynthSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 3]>> {
    let r = spec.blob_radius;
    let lo = r.ceil() + 1.0;
    let mut corners = Vec::new();
    for z in 0..2 {
        for y in 0..2 {
            for x in 0..2 {
                let pick = |bit: usize, d: usize| {
                    if bit == 0 {
                        lo
                    } else {
                        d as f64 - 1.0 - lo
                    }
                };
                corners.push([pick(x, spec.dims[0]), pick(y, spec.dims[1]), pick(z, spec.dims[2])]);
            }
        }
    }
    let span = (0..3).map(|a| spec.dims[a] as f64 - 1.0 - 2.0 * lo).fold(f64::MAX, f64::min);
    if n > corners.len() || span <= 2.0 * r {
        return Err(Error::OverlapInfeasible(format!(
            "{n} blobs of radius {r} on grid {:?}",
            spec.dims
        )));
    }
    corners.shuffle(rng);
    Ok(corners.into_iter().take(n).collect())
}

fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rng.random_bool(0.5) {
        scale * e
    } else {
        -scale * e
    }
}

struct Geometry {
    sources: DMatrix<f64>,
    atlas_parcels: Vec<Parcel>,
    csf: Vec<bool>,
}

fn make_geometry(spec: &SynthSpec, grid: &VolumeGrid, roles: &[Role], names: &[String]) -> Result<Geometry> {
    let mut rng = stream(spec.geometry_seed(), TAG_GEOMETRY, 0);
    let n_blobs = roles.iter().filter(|r| **r != Role::Artifact).count();
    let centers = blob_centers(spec, n_blobs, &mut rng)?;
    let v = grid.n_voxels();
    let sigma = spec.blob_radius / 2.0;
    let mut sources = DMatrix::zeros(roles.len(), v);
    let mut parcels = Vec::new();
    let mut next = centers.iter();
    for (k, role) in roles.iter().enumerate() {
        let mut member = vec![false; v];
        if *role == Role::Artifact {
            // a Gaussian patch on the x = 0 face
            let (cy, cz) = ((grid.dims[1] as f64 - 1.0) / 2.0, (grid.dims[2] as f64 - 1.0) / 2.0);
            let s = grid.dims[1].min(grid.dims[2]) as f64 / 5.0;
            for z in 0..grid.dims[2] {
                for y in 0..grid.dims[1] {
                    let d2 = (y as f64 - cy).powi(2) + (z as f64 - cz).powi(2);
                    if d2 <= (2.0 * s).powi(2) {
                        let i = grid.index(0, y, z);
                        sources[(k, i)] = (-d2 / (2.0 * s * s)).exp() * (1.0 + laplace(&mut rng, spec.blob_texture));
                    }
                }
            }
        } else {
            let c = next.next().expect("one center per blob");
            for i in 0..v {
                let p = grid.coords(i);
                let d2: f64 = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum();
                if d2 <= spec.blob_radius * spec.blob_radius {
                    member[i] = true;
                    sources[(k, i)] = (-d2 / (2.0 * sigma * sigma)).exp() * (1.0 + laplace(&mut rng, spec.blob_texture));
                }
            }
            parcels.push(Parcel {
                name: names[k].clone(),
                voxels: member,
            });
        }
        let peak = sources.row(k).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            sources.row_mut(k).scale_mut(1.0 / peak);
        }
    }
    // a small cube at the grid center stands in for ventricles
    let lo: Vec<usize> = grid.dims.iter().map(|d| d / 2 - 2).collect();
    let csf: Vec<bool> = (0..v)
        .map(|i| {
            let p = grid.coords(i);
            (0..3).all(|a| p[a] >= lo[a] && p[a] < lo[a] + 4)
        })
        .collect();
    if parcels.iter().any(|p| p.voxels.iter().zip(&csf).any(|(a, b)| *a && *b)) {
        return Err(Error::OverlapInfeasible("a blob reaches the CSF cube".into()));
    }
    Ok(Geometry {
        sources,
        atlas_parcels: parcels,
        csf,
    })
}

struct Story {
    words: WordTable,
    embeddings: EmbeddingTable,
}

fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x: f64 = StandardNormal.sample(rng);
    for _ in 0..n {
        out.push(x);
        let e: f64 = StandardNormal.sample(rng);
        x = phi * x + innov * e;
    }
    out
}

fn make_story(spec: &SynthSpec, index: u64, n_trs: usize) -> Result<Story> {
    let mut rng = stream(spec.stimulus_seed(), TAG_STORY, index);
    let end = n_trs as f64 * spec.tr;
    // slowly varying rate, sampled per TR and used by thinning
    let modulation = ar1(&mut rng, n_trs, 0.9);
    let rate = |t: f64| {
        let bin = ((t / spec.tr) as usize).min(n_trs - 1);
        spec.words_per_second * (0.2 * modulation[bin]).exp()
    };
    let max_rate = spec.words_per_second * (0.2 * modulation.iter().fold(f64::MIN, |a, b| a.max(*b))).exp();
    let mut onsets = Vec::new();
    let mut t = 0.0;
    loop {
        let e: f64 = Exp1.sample(&mut rng);
        t += e / max_rate;
        if t >= end {
            break;
        }
        if rng.random::<f64>() < rate(t) / max_rate {
            onsets.push(t);
        }
    }
    let surprisal = ar1(&mut rng, onsets.len(), 0.6);
    let dims: Vec<Vec<f64>> = (0..spec.embedding_dim).map(|_| ar1(&mut rng, onsets.len(), 0.6)).collect();
    let mut words = Vec::with_capacity(onsets.len());
    let mut rows = Vec::with_capacity(onsets.len());
    for (w, &on) in onsets.iter().enumerate() {
        let off = (on + 0.25).min(end - 1e-6);
        if (on + off) / 2.0 >= end {
            continue;
        }
        let s = (1.2 * surprisal[w]).exp();
        words.push(Word {
            token: format!("w{w}"),
            onset: on,
            offset: off,
            surprisal: Some(s),
            probability: Some((-s).exp()),
        });
        rows.push(w);
    }
    let emb = DMatrix::from_fn(rows.len(), spec.embedding_dim, |i, j| dims[j][rows[i]]);
    Ok(Story {
        words: WordTable::new(words)?,
        embeddings: EmbeddingTable::new(emb)?,
    })
}

/// Pre-lag drivers (`T x n_driven`, one column per driven role) of a story.
fn drivers(
    spec: &SynthSpec,
    story: &Story,
    n_trs: usize,
    roles: &[Role],
    semantic: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    let wr = word_rate(&story.words, spec.tr, n_trs)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut sem = semantic.iter();
    let emb_track = WordFeatureTrack::from_embeddings(&story.words, &story.embeddings)?;
    let emb = if story.words.is_empty() {
        DMatrix::zeros(n_trs, spec.embedding_dim)
    } else {
        lanczos_downsample(&emb_track, spec.tr, n_trs, DEFAULT_LANCZOS_WINDOW)?
            .data()
            .clone()
    };
    for role in roles.iter().filter(|r| r.is_driven()) {
        let col = match role {
            Role::Auditory => wr.column(0),
            Role::Language => {
                let s = surprisal_track(&story.words, LogBase::E)?;
                let s = lanczos_downsample(&s, spec.tr, n_trs, DEFAULT_LANCZOS_WINDOW)?;
                residualize(&s, &wr)?.column(0)
            }
            Role::Semantic => {
                let w = sem.next().expect("one weight vector per semantic role");
                (&emb * DMatrix::from_column_slice(w.len(), 1, w)).column(0).iter().copied().collect()
            }
            _ => unreachable!(),
        };
        cols.push(col);
    }
    Ok(DMatrix::from_fn(n_trs, cols.len(), |i, j| cols[j][i]))
}

/// Lag-filter one driver column with the spec's FIR weights.
pub fn fir_filter(x: &[f64], weights: &[f64]) -> Vec<f64> {
    let f = FeatureMatrix::new(
        DMatrix::from_column_slice(x.len(), 1, x),
        vec!["x".into()],
        1.0,
    )
    .expect("finite driver");
    let lagged = fir_expand(&f, &DEFAULT_DELAYS[..weights.len()]).expect("valid delays");
    (0..x.len())
        .map(|t| (0..weights.len()).map(|d| weights[d] * lagged.data()[(t, d)]).sum())
        .collect()
}

struct Motion {
    confounds: ConfoundMatrix,
    artifact: Vec<f64>,
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let m = crate::linalg::mean(x);
    let s = crate::linalg::pop_std(x);
    x.iter().map(|v| if s > 0.0 { (v - m) / s } else { 0.0 }).collect()
}

fn make_motion(rng: &mut ChaCha8Rng, n: usize) -> Result<Motion> {
    let trans_step = Normal::new(0.0, 0.03).expect("valid sd");
    let rot_step = Normal::new(0.0, 0.0005).expect("valid sd");
    let jump = Normal::new(0.0, 0.6).expect("valid sd");
    let mut params = DMatrix::<f64>::zeros(n, 6);
    let mut innov_x = vec![0.0; n];
    let mut spikes = vec![0.0; n];
    for t in 1..n {
        let spike = rng.random_bool(0.02);
        for j in 0..6 {
            let mut step = if j < 3 { trans_step.sample(rng) } else { rot_step.sample(rng) };
            if j == 0 {
                innov_x[t] = step;
            }
            if spike && j < 3 {
                let mut d: f64 = jump.sample(rng);
                // keep every jump above the spike threshold
                if d.abs() < 0.3 {
                    d = 0.3f64.copysign(d);
                }
                step += d;
            }
            params[(t, j)] = MOTION_AR * params[(t - 1, j)] + step;
        }
        if spike {
            spikes[t] = 1.0;
        }
    }
    let mut fd = vec![0.0; n];
    for t in 1..n {
        let d = |j: usize| (params[(t, j)] - params[(t - 1, j)]).abs();
        fd[t] = d(0) + d(1) + d(2) + 50.0 * (d(3) + d(4) + d(5));
    }
    let tx: Vec<f64> = params.column(0).iter().copied().collect();
    let (ztx, zin) = (zscore(&tx), zscore(&innov_x));
    let artifact = (0..n).map(|t| 0.6 * ztx[t] + 0.8 * zin[t] + 2.0 * spikes[t]).collect();
    let mut data = DMatrix::zeros(n, 7);
    data.columns_mut(0, 6).copy_from(&params);
    data.set_column(6, &DMatrix::from_vec(n, 1, fd).column(0));
    let names = ["trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z", "framewise_displacement"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Ok(Motion {
        confounds: ConfoundMatrix::new(data, names)?,
        artifact,
    })
}

/// Draw a full synthetic subject.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let roles = spec.roles();
    let names = role_names(&roles);
    let grid = VolumeGrid::isotropic(spec.dims, spec.voxel_size)?;
    let mask = Arc::new(Mask::full(grid.clone()));
    let geom = make_geometry(spec, &grid, &roles, &names)?;

    let mut wrng = stream(spec.stimulus_seed(), TAG_WEIGHTS, 0);
    let n_sem = roles.iter().filter(|r| **r == Role::Semantic).count();
    // orthonormal projections keep the semantic drivers apart
    let mut semantic: Vec<Vec<f64>> = Vec::with_capacity(n_sem);
    while semantic.len() < n_sem {
        let mut w: Vec<f64> = (0..spec.embedding_dim).map(|_| StandardNormal.sample(&mut wrng)).collect();
        if semantic.len() < spec.embedding_dim {
            for u in &semantic {
                let dot: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-8 {
            semantic.push(w.iter().map(|v| v / n).collect());
        }
    }

    let layout = spec.run_layout();
    let stories: Vec<Story> = layout
        .iter()
        .enumerate()
        .map(|(i, (_, split, n))| {
            // the test story is shared by every subject with the same stimulus seed
            let index = if *split == Split::Test { 1 << 20 } else { i as u64 };
            make_story(spec, index, *n)
        })
        .collect::<Result<_>>()?;
    let driver_mats: Vec<DMatrix<f64>> = stories
        .iter()
        .zip(&layout)
        .map(|(s, (_, _, n))| drivers(spec, s, *n, &roles, &semantic))
        .collect::<Result<_>>()?;

    let n_driven = driver_mats[0].ncols();
    let (offsets, gains): (Vec<f64>, Vec<f64>) = if spec.normalize_drivers {
        (0..n_driven)
            .map(|j| {
                let c: Vec<f64> = driver_mats[0].column(j).iter().copied().collect();
                let s = crate::linalg::pop_std(&c);
                (crate::linalg::mean(&c), if s > 0.0 { 1.0 / s } else { 1.0 })
            })
            .unzip()
    } else {
        (vec![0.0; n_driven], vec![1.0; n_driven])
    };

    let mut runs = Vec::with_capacity(layout.len());
    for (i, ((id, split, n), story)) in layout.iter().zip(stories).enumerate() {
        let mut rng = stream(spec.seed, TAG_SUBJECT, i as u64);
        let motion = make_motion(&mut rng, *n)?;
        let mut tc = DMatrix::zeros(*n, roles.len());
        let mut d = 0;
        for (k, role) in roles.iter().enumerate() {
            let col: Vec<f64> = match role {
                r if r.is_driven() => {
                    let x: Vec<f64> = driver_mats[i]
                        .column(d)
                        .iter()
                        .map(|v| (v - offsets[d]) * gains[d])
                        .collect();
                    d += 1;
                    fir_filter(&x, &spec.fir_weights)
                }
                Role::Visual => {
                    // response to an input unrelated to the story
                    let x: Vec<f64> = (0..*n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    fir_filter(&x, &spec.fir_weights)
                }
                Role::Artifact => motion.artifact.clone(),
                _ => unreachable!(),
            };
            tc.set_column(k, &DMatrix::from_vec(*n, 1, col).column(0));
        }
        let mut x = &tc * &geom.sources;
        if spec.noise_sd > 0.0 {
            let mut nrng = stream(spec.seed, TAG_NOISE, i as u64);
            let noise = Normal::new(0.0, spec.noise_sd).expect("valid sd");
            x.iter_mut().for_each(|v| *v += noise.sample(&mut nrng));
        }
        runs.push(SynthRun {
            id: id.clone(),
            split: *split,
            series: VolumeSeries::new(mask.clone(), spec.tr, x)?,
            words: story.words,
            embeddings: story.embeddings,
            confounds: motion.confounds,
            time_courses: tc,
        });
    }

    // geometry and drivers are drawn in role order, so shuffling afterwards
    // keeps subjects comparable
    let mut order: Vec<usize> = (0..roles.len()).collect();
    if spec.shuffle_components {
        order.shuffle(&mut stream(spec.seed, TAG_SUBJECT, u64::MAX >> 32));
    }
    let sources = DMatrix::from_fn(order.len(), geom.sources.ncols(), |i, j| geom.sources[(order[i], j)]);
    for run in &mut runs {
        let tc = &run.time_courses;
        run.time_courses = DMatrix::from_fn(tc.nrows(), order.len(), |t, j| tc[(t, order[j])]);
    }
    Ok(SynthData {
        spec: spec.clone(),
        atlas: Atlas::new(grid, geom.atlas_parcels)?,
        mask,
        sources,
        roles: order.iter().map(|&i| roles[i]).collect(),
        names: order.iter().map(|&i| names[i].clone()).collect(),
        runs,
        csf: geom.csf,
        semantic_weights: semantic,
        gains,
    })
}

/// File locations of one written run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub id: String,
    pub split: Split,
    pub bold: PathBuf,
    pub words: PathBuf,
    pub embeddings: PathBuf,
    pub confounds: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SynthSpec,
    pub names: Vec<String>,
    pub roles: Vec<Role>,
    pub driven: Vec<usize>,
    pub artifact: Vec<usize>,
    pub semantic_weights: Vec<Vec<f64>>,
    pub gains: Vec<f64>,
    pub fir_weights: Vec<f64>,
    pub delays: Vec<usize>,
    pub sources: PathBuf,
    pub runs: Vec<RunFiles>,
    pub atlas: PathBuf,
    pub csf_mask: PathBuf,
}

/// Where [`write_synth`] puts the files of run `id`.
pub fn run_files(dir: &Path, id: &str, split: Split) -> RunFiles {
    RunFiles {
        id: id.to_string(),
        split,
        bold: dir.join(format!("{id}_bold.vxt")),
        words: dir.join(format!("{id}_words.tsv")),
        embeddings: dir.join(format!("{id}_embeddings.bin")),
        confounds: dir.join(format!("{id}_confounds.tsv")),
    }
}

/// Write every file the pipeline consumes plus `truth.json`.
pub fn write_synth(data: &SynthData, dir: impl AsRef<Path>) -> Result<Truth> {
    let dir = dir.as_ref();
    let mut runs = Vec::new();
    for r in &data.runs {
        let files = run_files(dir, &r.id, r.split);
        write_volume_series(&r.series, &files.bold)?;
        write_word_table(&r.words, &files.words)?;
        write_embeddings(&r.embeddings, &files.embeddings)?;
        write_confounds(&r.confounds, &files.confounds)?;
        write_matrix(&r.time_courses, &data.names, dir.join(format!("{}_truth_tc.mat", r.id)))?;
        runs.push(files);
    }
    let sources = dir.join("truth_sources.mat");
    write_matrix(&data.sources.transpose(), &data.names, &sources)?;
    let atlas = dir.join("atlas.vxt");
    write_atlas(&data.atlas, &atlas)?;
    let csf_mask = dir.join("csf_mask.vxt");
    let csf: Vec<f64> = data.csf.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_label_volume(data.mask.grid(), &csf, &csf_mask)?;
    let truth = Truth {
        spec: data.spec.clone(),
        names: data.names.clone(),
        roles: data.roles.clone(),
        driven: data.driven(),
        artifact: data.index_of(Role::Artifact).into_iter().collect(),
        semantic_weights: data.semantic_weights.clone(),
        gains: data.gains.clone(),
        fir_weights: data.spec.fir_weights.clone(),
        delays: DEFAULT_DELAYS.to_vec(),
        sources,
        runs,
        atlas,
        csf_mask,
    };
    write_text(
        dir.join("truth.json"),
        &serde_json::to_string_pretty(&truth).expect("serializable"),
    )?;
    Ok(truth)
}

/// Greedy best-match assignment of planted maps to recovered components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    /// Best |spatial r| per planted source.
    pub scores: Vec<f64>,
    /// Recovered component assigned to each planted source.
    pub assignment: Vec<usize>,
    /// Sign of the correlation for each assignment.
    pub signs: Vec<f64>,
    /// Recovered components left without a planted partner.
    pub unassigned: Vec<usize>,
}

/// Repeatedly take the largest remaining |r| between a planted map and a
/// recovered map, never reusing either side.
pub fn score_recovery(truth: &DMatrix<f64>, mask: &Mask, model: &IcaModel) -> Result<Recovery> {
    if !mask.grid().same_geometry(model.grid()) || mask.count() != model.mask().count() {
        return Err(Error::GridMismatch("truth and model grids differ".into()));
    }
    let (kt, k) = (truth.nrows(), model.k());
    let mut r = vec![vec![0.0; k]; kt];
    for (i, row) in r.iter_mut().enumerate() {
        let a: Vec<f64> = truth.row(i).iter().copied().collect();
        for (j, v) in row.iter_mut().enumerate() {
            *v = pearson(&a, &model.source_row(j)).unwrap_or(0.0);
        }
    }
    let mut assignment = vec![usize::MAX; kt];
    let mut used = vec![false; k];
    for _ in 0..kt.min(k) {
        let mut best = (0, 0, -1.0);
        for i in (0..kt).filter(|&i| assignment[i] == usize::MAX) {
            for j in (0..k).filter(|&j| !used[j]) {
                if r[i][j].abs() > best.2 {
                    best = (i, j, r[i][j].abs());
                }
            }
        }
        assignment[best.0] = best.1;
        used[best.1] = true;
    }
    let scores = (0..kt)
        .map(|i| if assignment[i] == usize::MAX { 0.0 } else { r[i][assignment[i]].abs() })
        .collect();
    let signs = (0..kt)
        .map(|i| if assignment[i] == usize::MAX { 0.0 } else { r[i][assignment[i]].signum() })
        .collect();
    Ok(Recovery {
        scores,
        assignment,
        signs,
        unassigned: (0..k).filter(|&j| !used[j]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            run_trs: 60,
            test_trs: 80,
            training_runs: 1,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn roles_and_names() {
        assert_eq!(role_names(&default_roles(5)), ["AUD", "LANG", "SEM", "VIS", "ART"]);
        assert_eq!(
            role_names(&default_roles(7)),
            ["AUD", "LANG", "SEM", "SEM2", "SEM3", "VIS", "ART"]
        );
        assert_eq!(default_roles(7).iter().filter(|r| r.is_driven()).count(), 5);
    }

    #[test]
    fn noiseless_rank_equals_k() {
        let spec = SynthSpec {
            k_true: 3,
            noise_sd: 0.0,
            ..small()
        };
        let d = generate(&spec).unwrap();
        let sv = d.runs[0].series.data().clone().svd(false, false).singular_values;
        let tol = sv[0] * 1e-10;
        assert_eq!(sv.iter().filter(|s| **s > tol).count(), 3);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.series.data(), y.series.data());
            assert_eq!(x.words, y.words);
        }
        let dir = tempfile::tempdir().unwrap();
        let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
        write_synth(&a, &d1).unwrap();
        write_synth(&b, &d2).unwrap();
        let f = "train-01_bold.vxt.raw";
        assert_eq!(std::fs::read(d1.join(f)).unwrap(), std::fs::read(d2.join(f)).unwrap());
    }

    #[test]
    fn word_rate_component_is_lagged_word_rate() {
        let spec = SynthSpec {
            noise_sd: 0.0,
            normalize_drivers: false,
            fir_weights: vec![0.0, 1.0, 0.0, 0.0, 0.0],
            ..small()
        };
        let d = generate(&spec).unwrap();
        let aud = d.index_of(Role::Auditory).unwrap();
        for run in &d.runs {
            // recount words per bin independently of the feature code
            let n = run.time_courses.nrows();
            let mut counts = vec![0.0; n];
            for w in run.words.rows() {
                counts[((w.onset + w.offset) / 2.0 / spec.tr) as usize] += 1.0;
            }
            for t in 0..n {
                let want = if t >= 2 { counts[t - 2] } else { 0.0 };
                assert_eq!(run.time_courses[(t, aud)], want);
            }
        }
    }

    #[test]
    fn shared_stimulus_seed_shares_test_story() {
        let a = generate(&SynthSpec { seed: 1, stimulus_seed: Some(9), ..small() }).unwrap();
        let b = generate(&SynthSpec { seed: 2, stimulus_seed: Some(9), ..small() }).unwrap();
        let ta = a.runs_in(Split::Test).next().unwrap();
        let tb = b.runs_in(Split::Test).next().unwrap();
        assert_eq!(ta.words, tb.words);
        assert_ne!(ta.series.data(), tb.series.data());
    }

    #[test]
    fn infeasible_layout() {
        let spec = SynthSpec {
            dims: [8, 8, 8],
            ..small()
        };
        assert!(matches!(generate(&spec), Err(Error::OverlapInfeasible(_))));
    }

    #[test]
    fn recovery_of_permuted_flipped_truth() {
        let d = generate(&small()).unwrap();
        let pi = [2, 4, 0, 1, 3];
        let mut s = d.sources.clone();
        for (i, &p) in pi.iter().enumerate() {
            let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
            s.set_row(p, &(d.sources.row(i) * sign));
        }
        let model = IcaModel::from_sources(d.mask.clone(), s).unwrap();
        let rec = score_recovery(&d.sources, &d.mask, &model).unwrap();
        assert_eq!(rec.assignment, pi.to_vec());
        assert!(rec.scores.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert_eq!(rec.signs, vec![-1.0, 1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn recovery_under_small_noise_and_extra_components() {
        let d = generate(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = d.sources.nrows();
        let v = d.sources.ncols();
        // 20 dB: noise power one hundredth of the map power
        let mut s = DMatrix::zeros(k + 2, v);
        for i in 0..k {
            let row = d.sources.row(i);
            let p = row.iter().map(|x| x * x).sum::<f64>() / v as f64;
            let sd = (p / 100.0).sqrt();
            for j in 0..v {
                let e: f64 = StandardNormal.sample(&mut rng);
                s[(i, j)] = row[j] + sd * e;
            }
        }
        for j in 0..v {
            s[(k, j)] = rng.random_range(-1.0..1.0);
            s[(k + 1, j)] = rng.random_range(-1.0..1.0);
        }
        let model = IcaModel::from_sources(d.mask.clone(), s).unwrap();
        let rec = score_recovery(&d.sources, &d.mask, &model).unwrap();
        assert!(rec.scores.iter().all(|s| *s > 0.95), "{:?}", rec.scores);
        assert_eq!(rec.unassigned, vec![k, k + 1]);
    }
}
