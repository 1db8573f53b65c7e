use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aroma::AromaConfig;
use crate::encoder::RidgeSpec;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, TrackKind};
use crate::ica::IcaConfig;
use crate::matching::MatchDirection;
use crate::preprocess::PreprocessConfig;
use crate::stats::NullScheme;
use crate::synth::{RunFiles, Split, SynthSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub runs: Vec<RunFiles>,
    pub atlas: Option<PathBuf>,
    /// Label volume, nonzero inside CSF.
    pub csf_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessBlocks {
    pub ica: PreprocessConfig,
    pub encoding: PreprocessConfig,
    /// Path used for artifact scoring; confounds stay in the data.
    pub artifact: PreprocessConfig,
    /// Volumes dropped from the start of the test run after trimming.
    pub test_skip: usize,
}

impl Default for PreprocessBlocks {
    fn default() -> Self {
        Self {
            ica: PreprocessConfig::ica_estimation(),
            encoding: PreprocessConfig::encoding(),
            artifact: PreprocessConfig::artifact_scoring(),
            test_skip: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaBlock {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcaBlock {
    fn default() -> Self {
        let d = IcaConfig::default();
        Self {
            k: d.k,
            max_iter: d.max_iter,
            tol: d.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsBlock {
    pub n_perm: usize,
    pub q: f64,
    pub null: NullScheme,
}

impl Default for StatsBlock {
    fn default() -> Self {
        Self {
            n_perm: 1000,
            q: 0.05,
            null: NullScheme::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingBlock {
    pub enabled: bool,
    pub percentile: f64,
    /// Correlate retained values instead of the binarized map.
    pub weighted: bool,
    pub direction: MatchDirection,
    /// Match on predicted rather than observed test series.
    pub use_predicted: bool,
    pub top_n: usize,
}

impl Default for MatchingBlock {
    fn default() -> Self {
        Self {
            enabled: true,
            percentile: 99.0,
            weighted: false,
            direction: MatchDirection::TemporalFirst,
            use_predicted: true,
            top_n: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureAnalysisBlock {
    /// Atlas parcels whose best component is analysed.
    pub networks: Vec<String>,
    pub tracks: Vec<TrackKind>,
}

impl Default for FeatureAnalysisBlock {
    fn default() -> Self {
        Self {
            networks: vec!["AUD".into(), "LANG".into(), "VIS".into()],
            tracks: vec![TrackKind::WordRate, TrackKind::ResidualSurprisal],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Label used in group outputs.
    pub subject: String,
    /// Seeds ICA, fold assignment and permutations.
    pub seed: u64,
    pub out: PathBuf,
    /// Generate the inputs instead of reading `paths`.
    pub synth: Option<SynthSpec>,
    pub paths: DataPaths,
    pub preprocess: PreprocessBlocks,
    pub ica: IcaBlock,
    pub features: FeatureConfig,
    pub ridge: RidgeSpec,
    pub stats: StatsBlock,
    pub matching: MatchingBlock,
    pub aroma: AromaConfig,
    pub feature_analysis: FeatureAnalysisBlock,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            subject: "sub-01".into(),
            seed: 0,
            out: PathBuf::from("out"),
            synth: None,
            paths: DataPaths::default(),
            preprocess: PreprocessBlocks::default(),
            ica: IcaBlock::default(),
            features: FeatureConfig::default(),
            ridge: RidgeSpec::default(),
            stats: StatsBlock::default(),
            matching: MatchingBlock::default(),
            aroma: AromaConfig::default(),
            feature_analysis: FeatureAnalysisBlock::default(),
        }
    }
}

impl PipelineConfig {
    /// Settings for a generated subject: one component per planted source
    /// and every track that drives one.
    pub fn synthetic(spec: SynthSpec) -> Self {
        let k = spec.roles().len();
        Self {
            seed: spec.seed,
            synth: Some(spec),
            ica: IcaBlock {
                k,
                ..IcaBlock::default()
            },
            features: FeatureConfig {
                tracks: vec![TrackKind::WordRate, TrackKind::ResidualSurprisal, TrackKind::Embedding],
                ..FeatureConfig::default()
            },
            ..Self::default()
        }
    }

    /// Read a JSON config. Relative paths are taken from the config's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dataio::write_text(path, &serde_json::to_string_pretty(self).expect("serializable"))
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for r in &mut self.paths.runs {
            fix(&mut r.bold);
            fix(&mut r.words);
            fix(&mut r.embeddings);
            fix(&mut r.confounds);
        }
        if let Some(p) = &mut self.paths.atlas {
            fix(p);
        }
        if let Some(p) = &mut self.paths.csf_mask {
            fix(p);
        }
    }

    /// Digest of everything that shapes results. The output directory is
    /// left out so identical analyses agree wherever they are written.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        super::cache::DigestBuilder::new("config").json(&c).finish()
    }

    pub fn ica_config(&self) -> IcaConfig {
        IcaConfig {
            k: self.ica.k,
            seed: self.seed,
            max_iter: self.ica.max_iter,
            tol: self.ica.tol,
        }
    }

    pub fn uses_embeddings(&self) -> bool {
        self.features.tracks.contains(&TrackKind::Embedding)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ica.k == 0 {
            return Err(Error::config("ica.k", "must be at least 1"));
        }
        if !(self.ica.tol > 0.0) || self.ica.max_iter == 0 {
            return Err(Error::config("ica", "tol and max_iter must be positive"));
        }
        if self.features.tracks.is_empty() {
            return Err(Error::config("features.tracks", "need at least one track"));
        }
        if self.features.delays.is_empty() {
            return Err(Error::config("features.delays", "need at least one delay"));
        }
        self.ridge.validate()?;
        if self.stats.n_perm == 0 {
            return Err(Error::config("stats.n_perm", "must be at least 1"));
        }
        if !(self.stats.q > 0.0 && self.stats.q < 1.0) {
            return Err(Error::config("stats.q", "must lie in (0, 1)"));
        }
        if let NullScheme::Block { len } = self.stats.null {
            if len == 0 {
                return Err(Error::config("stats.null.len", "must be at least 1"));
            }
        }
        if !(self.matching.percentile > 0.0 && self.matching.percentile < 100.0) {
            return Err(Error::config("matching.percentile", "must lie in (0, 100)"));
        }
        if !(self.aroma.map_percentile > 0.0 && self.aroma.map_percentile < 100.0) {
            return Err(Error::config("aroma.map_percentile", "must lie in (0, 100)"));
        }
        if let Some(spec) = &self.synth {
            if !self.paths.runs.is_empty() {
                return Err(Error::config("paths.runs", "must be empty when `synth` is set"));
            }
            return spec.validate();
        }
        self.validate_runs(&self.paths.runs)?;
        if self.matching.enabled && self.paths.atlas.is_none() {
            return Err(Error::config("paths.atlas", "required when matching is enabled"));
        }
        for (field, p) in [("paths.atlas", &self.paths.atlas), ("paths.csf_mask", &self.paths.csf_mask)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::config(field, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn validate_runs(&self, runs: &[RunFiles]) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in runs.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::config(
                    format!("paths.runs[{i}].id"),
                    format!("run id `{}` appears twice", r.id),
                ));
            }
            let mut files = vec![("bold", &r.bold), ("confounds", &r.confounds)];
            if r.split != Split::Estimation {
                files.push(("words", &r.words));
                if self.uses_embeddings() {
                    files.push(("embeddings", &r.embeddings));
                }
            }
            for (name, p) in files {
                if !p.exists() {
                    return Err(Error::config(
                        format!("paths.runs[{i}].{name}"),
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
        }
        let count = |s: Split| runs.iter().filter(|r| r.split == s).count();
        if count(Split::Estimation) == 0 {
            return Err(Error::config("paths.runs", "no estimation run"));
        }
        if count(Split::Training) == 0 {
            return Err(Error::config("paths.runs", "no training run"));
        }
        if count(Split::Test) != 1 {
            return Err(Error::config("paths.runs", "exactly one test run is required"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_atlas_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let data = crate::synth::generate(&SynthSpec {
            run_trs: 40,
            test_trs: 60,
            training_runs: 1,
            ..SynthSpec::default()
        })
        .unwrap();
        let truth = crate::synth::write_synth(&data, dir.path()).unwrap();
        let cfg = PipelineConfig {
            paths: DataPaths {
                runs: truth.runs.clone(),
                atlas: None,
                csf_mask: None,
            },
            ..PipelineConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "paths.atlas"),
            other => panic!("{other:?}"),
        }
        let ok = PipelineConfig {
            paths: DataPaths {
                runs: truth.runs.clone(),
                atlas: Some(truth.atlas.clone()),
                csf_mask: None,
            },
            ..PipelineConfig::default()
        };
        ok.validate().unwrap();
        let mut dup = ok.clone();
        dup.paths.runs[1].id = dup.paths.runs[0].id.clone();
        assert!(matches!(dup.validate(), Err(Error::Config { .. })));
        let mut missing = ok.clone();
        missing.paths.runs[0].bold = dir.path().join("nope.vxt");
        match missing.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "paths.runs[0].bold"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let cfg = PipelineConfig::synthetic(SynthSpec::default());
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: PipelineConfig = serde_json::from_str(r#"{"ica": {"k": 7}}"#).unwrap();
        assert_eq!(partial.ica.k, 7);
        assert_eq!(partial.ica.max_iter, IcaBlock::default().max_iter);
    }

    #[test]
    fn digest_ignores_output_dir() {
        let a = PipelineConfig::synthetic(SynthSpec::default());
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
    }
}
