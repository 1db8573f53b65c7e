//! Staged analysis over a JSON config: ingest (or generate), preprocess,
//! estimate components, project, build features, fit encoding models,
//! test, label artifacts, match to an atlas and report.
//!
//! Every stage writes its artifacts under `out/<stage>/` and is skipped on
//! rerun when its input digest is unchanged. Stages only communicate
//! through those files.

mod cache;
mod config;
mod group;
mod report;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use cache::{file_digest, DigestBuilder};
pub use config::{
    DataPaths, FeatureAnalysisBlock, IcaBlock, MatchingBlock, PipelineConfig, PreprocessBlocks,
    StatsBlock,
};
pub use group::{
    feature_analysis, match_subject_configs, FeatureAnalysis, FeatureScore, GroupReport,
};
pub use report::{read_summary, ReportRow, RunSummary};

use cache::StageDir;

use crate::aroma::{aroma_features, classify, edge_mask, AromaFeatures, Label};
use crate::dataio::{
    read_atlas, read_confounds, read_embeddings, read_mask_volume, read_volume_series,
    read_word_table, write_matrix_tsv, write_text, write_volume_series_as, Dtype, VolumeSeries,
};
use crate::encoder::{fit_ridge, make_folds, predict, EncodingModel};
use crate::error::{Error, Result};
use crate::features::{assemble_runs_trimmed, build_blocks, FeatureMatrix, TrackKind};
use crate::ica::{component_name, fit_ica, project, read_model, sign_align, write_model, ComponentSeries, IcaModel};
use crate::matching::{match_atlas, AtlasMatch};
use crate::stats::{bh_fdr, pearson, permutation_test, ranks, PermutationResult, PermutationSetup};
use crate::synth::{generate, write_synth, RunFiles, Split};

/// Stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Preprocess,
    IcaFit,
    Project,
    Features,
    Encode,
    Permtest,
    Fdr,
    Aroma,
    MatchAtlas,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::IcaFit => "ica",
            Stage::Project => "project",
            Stage::Features => "features",
            Stage::Encode => "encode",
            Stage::Permtest => "permtest",
            Stage::Fdr => "fdr",
            Stage::Aroma => "aroma",
            Stage::MatchAtlas => "match_atlas",
            Stage::Report => "report",
        }
    }
}

/// Test-story scores written by the encode stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeScores {
    pub components: Vec<String>,
    pub test_r: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Fold-averaged out-of-fold r at the chosen alpha.
    pub cv_r: Vec<f64>,
    pub test_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrResult {
    pub q: f64,
    pub reject: Vec<bool>,
    /// 1-based rank by test r.
    pub rank: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AromaResult {
    pub features: Vec<AromaFeatures>,
    pub labels: Vec<Label>,
}

/// A configured analysis bound to its output directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    config_digest: String,
    runs: Vec<RunFiles>,
    atlas: Option<PathBuf>,
    csf_mask: Option<PathBuf>,
    digests: Vec<(Stage, String)>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config_digest: cfg.digest(),
            runs: cfg.paths.runs.clone(),
            atlas: cfg.paths.atlas.clone(),
            csf_mask: cfg.paths.csf_mask.clone(),
            cfg,
            digests: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.cfg.out.join(stage.name())
    }

    pub fn runs(&self) -> &[RunFiles] {
        &self.runs
    }

    pub fn atlas_path(&self) -> Option<&Path> {
        self.atlas.as_deref()
    }

    fn runs_in(&self, split: Split) -> impl Iterator<Item = &RunFiles> {
        self.runs.iter().filter(move |r| r.split == split)
    }

    pub(crate) fn test_run(&self) -> &RunFiles {
        self.runs_in(Split::Test).next().expect("validated: one test run")
    }

    fn digest_of(&self, stage: Stage) -> &str {
        self.digests
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, d)| d.as_str())
            .expect("upstream stage ran first")
    }

    /// Run every stage up to and including `last`, reusing fresh stages.
    pub fn run_until(&mut self, last: Stage) -> Result<()> {
        let all = [
            Stage::Synth,
            Stage::Preprocess,
            Stage::IcaFit,
            Stage::Project,
            Stage::Features,
            Stage::Encode,
            Stage::Permtest,
            Stage::Fdr,
            Stage::Aroma,
            Stage::MatchAtlas,
            Stage::Report,
        ];
        for stage in all.into_iter().filter(|s| *s <= last) {
            if self.digests.iter().any(|(s, _)| *s == stage) {
                continue;
            }
            self.run_stage(stage).map_err(|e| e.in_stage(stage.name()))?;
        }
        Ok(())
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let digest = self.stage_digest(stage)?;
        let dir = StageDir::new(self.stage_dir(stage), digest.clone());
        if stage == Stage::Synth {
            // the generated paths are needed downstream either way
            self.adopt_synth_paths(&dir.dir);
        }
        if dir.is_fresh() {
            log::info!("{}: up to date", stage.name());
        } else {
            log::info!("{}: running", stage.name());
            dir.prepare()?;
            match stage {
                Stage::Synth => self.do_synth(&dir)?,
                Stage::Preprocess => self.do_preprocess(&dir)?,
                Stage::IcaFit => self.do_ica(&dir)?,
                Stage::Project => self.do_project(&dir)?,
                Stage::Features => self.do_features(&dir)?,
                Stage::Encode => self.do_encode(&dir)?,
                Stage::Permtest => self.do_permtest(&dir)?,
                Stage::Fdr => self.do_fdr(&dir)?,
                Stage::Aroma => self.do_aroma(&dir)?,
                Stage::MatchAtlas => self.do_match_atlas(&dir)?,
                Stage::Report => report::write_reports(self, &dir)?,
            }
            dir.commit()?;
        }
        self.digests.push((stage, digest));
        Ok(())
    }

    fn input_digest(&self) -> Result<String> {
        if let Some(spec) = &self.cfg.synth {
            return Ok(DigestBuilder::new("synth").json(spec).finish());
        }
        let mut d = DigestBuilder::new("inputs");
        for r in &self.runs {
            d = d.json(&(&r.id, r.split));
            for p in [&r.bold, &r.confounds, &r.words, &r.embeddings] {
                if p.exists() {
                    d = d.text(&file_digest(p)?);
                    if p == &r.bold {
                        d = d.text(&file_digest(&raw_body(p))?);
                    }
                }
            }
        }
        for p in [&self.atlas, &self.csf_mask].into_iter().flatten() {
            d = d.text(&file_digest(p)?).text(&file_digest(&raw_body(p))?);
        }
        Ok(d.finish())
    }

    fn stage_digest(&self, stage: Stage) -> Result<String> {
        let c = &self.cfg;
        let b = DigestBuilder::new(stage.name());
        Ok(match stage {
            Stage::Synth => self.input_digest()?,
            Stage::Preprocess => b
                .text(self.digest_of(Stage::Synth))
                .json(&(&c.preprocess.ica, &c.preprocess.encoding, &c.preprocess.artifact))
                .finish(),
            Stage::IcaFit => b
                .text(self.digest_of(Stage::Preprocess))
                .json(&c.ica_config())
                .finish(),
            Stage::Project => b.text(self.digest_of(Stage::IcaFit)).finish(),
            Stage::Features => b.text(self.digest_of(Stage::Synth)).json(&c.features).finish(),
            Stage::Encode => b
                .text(self.digest_of(Stage::Project))
                .text(self.digest_of(Stage::Features))
                .json(&(&c.ridge, c.seed, c.preprocess.test_skip))
                .finish(),
            Stage::Permtest => b
                .text(self.digest_of(Stage::Encode))
                .json(&(&c.stats.n_perm, &c.stats.null, c.seed))
                .finish(),
            Stage::Fdr => b
                .text(self.digest_of(Stage::Permtest))
                .json(&c.stats.q)
                .finish(),
            Stage::Aroma => b
                .text(self.digest_of(Stage::Project))
                .text(self.digest_of(Stage::Synth))
                .json(&c.aroma)
                .finish(),
            Stage::MatchAtlas => b
                .text(self.digest_of(Stage::IcaFit))
                .text(self.digest_of(Stage::Synth))
                .json(&c.matching)
                .finish(),
            Stage::Report => b
                .text(self.digest_of(Stage::Fdr))
                .text(self.digest_of(Stage::Aroma))
                .text(self.digest_of(Stage::MatchAtlas))
                .text(&self.config_digest)
                .finish(),
        })
    }

    fn adopt_synth_paths(&mut self, dir: &Path) {
        let Some(spec) = &self.cfg.synth else { return };
        self.runs = spec
            .run_layout()
            .into_iter()
            .map(|(id, split, _)| crate::synth::run_files(dir, &id, split))
            .collect();
        self.atlas = Some(dir.join("atlas.vxt"));
        self.csf_mask = Some(dir.join("csf_mask.vxt"));
    }

    /// Ground truth of a generated subject.
    pub fn truth_path(&self) -> Option<PathBuf> {
        self.cfg.synth.as_ref().map(|_| self.stage_dir(Stage::Synth).join("truth.json"))
    }

    fn do_synth(&self, dir: &StageDir) -> Result<()> {
        if let Some(spec) = &self.cfg.synth {
            let data = generate(spec)?;
            write_synth(&data, &dir.dir)?;
        }
        Ok(())
    }

    fn do_preprocess(&self, dir: &StageDir) -> Result<()> {
        let p = &self.cfg.preprocess;
        for r in &self.runs {
            let series = read_volume_series(&r.bold)?;
            let conf = read_confounds(&r.confounds)?;
            let tr = series.tr();
            let mut jobs: Vec<(&str, &crate::preprocess::PreprocessConfig)> = Vec::new();
            match r.split {
                Split::Estimation => jobs.push(("ica", &p.ica)),
                Split::Training => {
                    jobs.push(("enc", &p.encoding));
                    jobs.push(("art", &p.artifact));
                }
                Split::Test => jobs.push(("enc", &p.encoding)),
            }
            for (tag, pc) in jobs {
                pc.validate(tr)?;
                let out = pc.run(&series, Some(&conf))?;
                write_volume_series_as(&out, dir.path(&format!("{}_{tag}.vxt", r.id)), Dtype::F64)?;
            }
        }
        Ok(())
    }

    fn preprocessed(&self, id: &str, tag: &str) -> Result<VolumeSeries> {
        read_volume_series(self.stage_dir(Stage::Preprocess).join(format!("{id}_{tag}.vxt")))
    }

    fn do_ica(&self, dir: &StageDir) -> Result<()> {
        let parts = self
            .runs_in(Split::Estimation)
            .map(|r| self.preprocessed(&r.id, "ica"))
            .collect::<Result<Vec<_>>>()?;
        let first = &parts[0];
        if let Some(bad) = parts.iter().find(|p| p.mask().digest() != first.mask().digest()) {
            return Err(Error::GridMismatch(format!(
                "estimation runs use different masks ({} vs {} voxels)",
                bad.n_voxels(),
                first.n_voxels()
            )));
        }
        let t: usize = parts.iter().map(VolumeSeries::n_times).sum();
        let mut data = DMatrix::zeros(t, first.n_voxels());
        let mut at = 0;
        for p in &parts {
            data.rows_mut(at, p.n_times()).copy_from(p.data());
            at += p.n_times();
        }
        let joined = first.with_data(data)?;
        let model = fit_ica(&joined, &self.cfg.ica_config())?;
        write_model(&sign_align(&model), first.tr(), &dir.dir)
    }

    /// Sign-aligned component model.
    pub fn model(&self) -> Result<IcaModel> {
        Ok(read_model(self.stage_dir(Stage::IcaFit))?.0)
    }

    fn do_project(&self, dir: &StageDir) -> Result<()> {
        let model = self.model()?;
        for r in self.runs.iter().filter(|r| r.split != Split::Estimation) {
            let enc = project(&model, &self.preprocessed(&r.id, "enc")?, &r.id)?;
            enc.write(dir.path(&format!("{}_enc.tsv", r.id)))?;
            if r.split == Split::Training {
                let art = project(&model, &self.preprocessed(&r.id, "art")?, &r.id)?;
                art.write(dir.path(&format!("{}_art.tsv", r.id)))?;
            }
        }
        Ok(())
    }

    /// Projected component series of a run (`enc` or `art` path).
    pub fn component_series(&self, id: &str, tag: &str) -> Result<ComponentSeries> {
        ComponentSeries::read(self.stage_dir(Stage::Project).join(format!("{id}_{tag}.tsv")))
    }

    fn do_features(&self, dir: &StageDir) -> Result<()> {
        for r in self.runs.iter().filter(|r| r.split != Split::Estimation) {
            let blocks = self.build_run_blocks(r, &self.cfg.features.tracks)?;
            for (kind, b) in self.cfg.features.tracks.iter().zip(&blocks) {
                b.write(dir.path(&format!("{}_{}.tsv", r.id, track_label(kind))))?;
            }
        }
        Ok(())
    }

    pub(crate) fn build_run_blocks(&self, r: &RunFiles, tracks: &[TrackKind]) -> Result<Vec<FeatureMatrix>> {
        let series = read_volume_series(&r.bold)?;
        let words = read_word_table(&r.words)?;
        let emb = if tracks.contains(&TrackKind::Embedding) {
            Some(read_embeddings(&r.embeddings)?)
        } else {
            None
        };
        let fc = crate::features::FeatureConfig {
            tracks: tracks.to_vec(),
            ..self.cfg.features.clone()
        };
        build_blocks(&fc, &words, emb.as_ref(), series.tr(), series.n_times())
    }

    fn run_blocks(&self, id: &str) -> Result<Vec<FeatureMatrix>> {
        self.cfg
            .features
            .tracks
            .iter()
            .map(|k| FeatureMatrix::read(self.stage_dir(Stage::Features).join(format!("{id}_{}.tsv", track_label(k)))))
            .collect()
    }

    /// Training design blocks, stacked targets and per-row run labels.
    pub(crate) fn training_set(&self, tracks: Option<&[TrackKind]>) -> Result<TrainingSet> {
        let mut blocks = Vec::new();
        let mut ys = Vec::new();
        for r in self.runs_in(Split::Training) {
            blocks.push(match tracks {
                None => self.run_blocks(&r.id)?,
                Some(t) => self.build_run_blocks(r, t)?,
            });
            ys.push(self.component_series(&r.id, "enc")?.data);
        }
        let (head, tail) = self.trims();
        let x = assemble_runs_trimmed(&blocks, &self.cfg.features.delays, head, tail)?;
        let y = vstack(&ys);
        if x.n_rows() != y.nrows() {
            return Err(Error::LengthMismatch(format!(
                "{} design rows for {} target rows",
                x.n_rows(),
                y.nrows()
            )));
        }
        let stories = ys.iter().enumerate().flat_map(|(i, m)| std::iter::repeat_n(i, m.nrows())).collect();
        Ok(TrainingSet { blocks, x, y, stories })
    }

    fn trims(&self) -> (usize, usize) {
        let e = &self.cfg.preprocess.encoding;
        (e.trim_head, e.trim_tail)
    }

    /// Held-out design and observed series on the test run, after the
    /// extra head skip.
    pub(crate) fn test_set(&self, tracks: Option<&[TrackKind]>) -> Result<(FeatureMatrix, DMatrix<f64>)> {
        let r = self.test_run();
        let blocks = match tracks {
            None => self.run_blocks(&r.id)?,
            Some(t) => self.build_run_blocks(r, t)?,
        };
        let (head, tail) = self.trims();
        let skip = self.cfg.preprocess.test_skip;
        let x = assemble_runs_trimmed(&[blocks], &self.cfg.features.delays, head + skip, tail)?;
        let obs = self.component_series(&r.id, "enc")?.data;
        if obs.nrows() <= skip || obs.nrows() - skip != x.n_rows() {
            return Err(Error::EmptyAfterTrim {
                head: skip,
                tail: 0,
                len: obs.nrows(),
            });
        }
        Ok((x, obs.rows(skip, obs.nrows() - skip).into_owned()))
    }

    fn do_encode(&self, dir: &StageDir) -> Result<()> {
        let ts = self.training_set(None)?;
        let names: Vec<String> = (0..ts.y.ncols()).map(component_name).collect();
        let model = fit_ridge(&ts.x, &ts.y, &names, &self.cfg.ridge, Some(&ts.stories), self.cfg.seed)?;
        let model_dir = dir.path("model");
        fs::create_dir_all(&model_dir).map_err(|e| Error::io(&model_dir, e))?;
        model.write(&model_dir)?;
        let (xt, obs) = self.test_set(None)?;
        let pred = predict(&model, &xt)?;
        let test_r = (0..obs.ncols())
            .map(|j| corr_or_zero(pred.column(j).as_slice(), obs.column(j).as_slice()))
            .collect();
        let n_folds = model.meta.cv_scores.len() as f64;
        let cv_r = (0..obs.ncols())
            .map(|j| model.meta.cv_scores.iter().map(|f| f[j]).sum::<f64>() / n_folds)
            .collect();
        write_matrix_tsv(&pred, &names, &[], dir.path("test_pred.tsv"))?;
        write_matrix_tsv(&obs, &names, &[], dir.path("test_obs.tsv"))?;
        let scores = EncodeScores {
            components: names,
            test_r,
            alpha: model.meta.alpha_per_target.clone(),
            cv_r,
            test_rows: obs.nrows(),
        };
        write_json(&dir.path("scores.json"), &scores)
    }

    pub fn encoding_model(&self) -> Result<EncodingModel> {
        EncodingModel::read(self.stage_dir(Stage::Encode).join("model"))
    }

    pub fn encode_scores(&self) -> Result<EncodeScores> {
        read_json(&self.stage_dir(Stage::Encode).join("scores.json"))
    }

    /// Predicted and observed test series, `T x K` each.
    pub fn test_series(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.stage_dir(Stage::Encode);
        Ok((
            crate::dataio::read_matrix_tsv(d.join("test_pred.tsv"))?.0,
            crate::dataio::read_matrix_tsv(d.join("test_obs.tsv"))?.0,
        ))
    }

    fn do_permtest(&self, dir: &StageDir) -> Result<()> {
        let ts = self.training_set(None)?;
        let model = self.encoding_model()?;
        let folds = make_folds(ts.x.n_rows(), &self.cfg.ridge, Some(&ts.stories), self.cfg.seed)?;
        let setup = PermutationSetup {
            runs: &ts.blocks,
            delays: &self.cfg.features.delays,
            targets: &ts.y,
            alphas: &model.meta.alpha_per_target,
            folds: &folds,
            trim: self.trims(),
        };
        let res = permutation_test(&setup, self.cfg.stats.n_perm, self.cfg.seed, self.cfg.stats.null)?;
        write_json(&dir.path("perm.json"), &res)
    }

    pub fn permutation(&self) -> Result<PermutationResult> {
        read_json(&self.stage_dir(Stage::Permtest).join("perm.json"))
    }

    fn do_fdr(&self, dir: &StageDir) -> Result<()> {
        let perm = self.permutation()?;
        let scores = self.encode_scores()?;
        let res = FdrResult {
            q: self.cfg.stats.q,
            reject: bh_fdr(&perm.p, self.cfg.stats.q)?,
            rank: ranks(&scores.test_r),
        };
        write_json(&dir.path("fdr.json"), &res)
    }

    pub fn fdr(&self) -> Result<FdrResult> {
        read_json(&self.stage_dir(Stage::Fdr).join("fdr.json"))
    }

    fn do_aroma(&self, dir: &StageDir) -> Result<()> {
        let model = self.model()?;
        let edge = edge_mask(model.mask());
        let csf = match &self.csf_mask {
            Some(p) => {
                let (grid, m) = read_mask_volume(p)?;
                if !grid.same_geometry(model.grid()) {
                    return Err(Error::GridMismatch("CSF mask grid differs from the model".into()));
                }
                Some(m)
            }
            None => None,
        };
        let mut per_run = Vec::new();
        for r in self.runs_in(Split::Training) {
            let series = self.component_series(&r.id, "art")?;
            let conf = read_confounds(&r.confounds)?;
            per_run.push(aroma_features(
                &model,
                &series.data,
                series.tr,
                Some(&edge),
                csf.as_deref(),
                &conf,
                &self.cfg.aroma,
            )?);
        }
        let n = per_run.len() as f64;
        let features: Vec<AromaFeatures> = (0..model.k())
            .map(|j| AromaFeatures {
                hfc: per_run.iter().map(|f| f[j].hfc).sum::<f64>() / n,
                edge_frac: per_run.iter().map(|f| f[j].edge_frac).sum::<f64>() / n,
                csf_frac: per_run.iter().map(|f| f[j].csf_frac).sum::<f64>() / n,
                motion_corr: per_run.iter().map(|f| f[j].motion_corr).sum::<f64>() / n,
            })
            .collect();
        let labels = features.iter().map(|f| classify(f, &self.cfg.aroma)).collect();
        write_json(&dir.path("aroma.json"), &AromaResult { features, labels })
    }

    pub fn aroma(&self) -> Result<AromaResult> {
        read_json(&self.stage_dir(Stage::Aroma).join("aroma.json"))
    }

    fn do_match_atlas(&self, dir: &StageDir) -> Result<()> {
        if !self.cfg.matching.enabled {
            return write_json(&dir.path("match.json"), &Option::<AtlasMatch>::None);
        }
        let atlas_path = self
            .atlas
            .as_ref()
            .ok_or_else(|| Error::config("paths.atlas", "required when matching is enabled"))?;
        let atlas = read_atlas(atlas_path)?;
        let m = match_atlas(&self.model()?, &atlas, self.cfg.matching.percentile, self.cfg.matching.weighted)?;
        write_json(&dir.path("match.json"), &Some(m))
    }

    pub fn atlas_match(&self) -> Result<Option<AtlasMatch>> {
        read_json(&self.stage_dir(Stage::MatchAtlas).join("match.json"))
    }
}

pub(crate) struct TrainingSet {
    pub blocks: Vec<Vec<FeatureMatrix>>,
    pub x: FeatureMatrix,
    pub y: DMatrix<f64>,
    pub stories: Vec<usize>,
}

/// Run the whole analysis and return the report.
pub fn run_all(cfg: PipelineConfig) -> Result<RunSummary> {
    let mut p = Pipeline::new(cfg)?;
    p.run_until(Stage::Report)?;
    read_summary(p.stage_dir(Stage::Report))
}

pub(crate) fn track_label(kind: &TrackKind) -> String {
    match serde_json::to_value(kind) {
        Ok(serde_json::Value::String(s)) => s,
        _ => format!("{kind:?}"),
    }
}

pub(crate) fn corr_or_zero(a: &[f64], b: &[f64]) -> f64 {
    match pearson(a, b) {
        Ok(r) => r,
        Err(_) => 0.0,
    }
}

pub(crate) fn vstack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let t: usize = parts.iter().map(|m| m.nrows()).sum();
    let k = parts.first().map_or(0, |m| m.ncols());
    let mut out = DMatrix::zeros(t, k);
    let mut at = 0;
    for m in parts {
        out.rows_mut(at, m.nrows()).copy_from(m);
        at += m.nrows();
    }
    out
}

fn raw_body(header: &Path) -> PathBuf {
    let mut s = header.as_os_str().to_owned();
    s.push(".raw");
    PathBuf::from(s)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("serializable"))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
