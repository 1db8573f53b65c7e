//! Analyses that sit on top of finished subject runs: cross-subject
//! matching and single-feature models for named networks.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::svg::{bar_chart, Bar, NEUTRAL, SIGNAL};
use super::{corr_or_zero, file_digest, track_label, write_json, Pipeline, PipelineConfig, Stage};
use crate::dataio::write_text;
use crate::encoder::{fit_ridge, predict};
use crate::error::{Error, Result};
use crate::features::TrackKind;
use crate::ica::component_name;
use crate::matching::{loo_aggregate, match_all, GroupSummary, MatchResult, SubjectBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub subjects: Vec<String>,
    pub results: Vec<MatchResult>,
    pub summary: GroupSummary,
}

/// Run (or reuse) every subject's analysis, then match all pairs and
/// summarise by predictivity rank. Matching settings come from the first
/// config. Outputs go to `out`.
pub fn match_subject_configs(configs: &[PipelineConfig], out: &Path) -> Result<GroupReport> {
    if configs.len() < 2 {
        return Err(Error::TooFewSubjects(configs.len()));
    }
    let m = &configs[0].matching;
    let mut bundles = Vec::with_capacity(configs.len());
    for cfg in configs {
        let mut p = Pipeline::new(cfg.clone())?;
        p.run_until(Stage::Report)?;
        let (pred, obs) = p.test_series()?;
        let skip = cfg.preprocess.test_skip;
        bundles.push(SubjectBundle {
            id: cfg.subject.clone(),
            model: p.model()?,
            series: if m.use_predicted { pred } else { obs },
            // identical word tables mean a shared story; the skip must agree too
            story: format!("{}+{skip}", file_digest(&p.test_run().words)?),
            predictivity: p.encode_scores()?.test_r,
        });
    }
    let mut ids: Vec<&str> = bundles.iter().map(|b| b.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != bundles.len() {
        return Err(Error::config("subject", "subject labels must be distinct"));
    }
    let results = match_all(&bundles, m.direction)?;
    let summary = loo_aggregate(&results, &bundles, m.top_n)?;
    let report = GroupReport {
        subjects: bundles.iter().map(|b| b.id.clone()).collect(),
        results,
        summary,
    };
    write_group(&report, configs, out)?;
    Ok(report)
}

fn write_group(report: &GroupReport, configs: &[PipelineConfig], out: &Path) -> Result<()> {
    let digests: Vec<String> = configs.iter().map(PipelineConfig::digest).collect();
    let note = format!("config_digests={}", digests.join(","));

    let mut pairs = format!("# {note}\n");
    pairs.push_str("reference,ref_component,other,matched_component,match_r,eval_r\n");
    for res in &report.results {
        for p in &res.pairs {
            let _ = writeln!(
                pairs,
                "{},{},{},{},{:.6},{:.6}",
                p.ref_subject,
                component_name(p.ref_component),
                p.other_subject,
                component_name(p.matched_component),
                p.match_r,
                p.eval_r
            );
        }
    }
    write_text(out.join("matches.csv"), &pairs)?;

    let mut bars = format!("# {note}\nrank,mean,sd\n");
    for b in &report.summary.bars {
        let _ = writeln!(bars, "{},{:.6},{:.6}", b.rank, b.mean, b.sd);
    }
    write_text(out.join("group_bars.csv"), &bars)?;
    write_json(&out.join("group.json"), report)?;

    let eval = match report.summary.direction {
        crate::matching::MatchDirection::TemporalFirst => "spatial r",
        crate::matching::MatchDirection::SpatialFirst => "temporal r",
    };
    let svg_bars: Vec<Bar> = report
        .summary
        .bars
        .iter()
        .map(|b| Bar {
            label: format!("rank {}", b.rank),
            value: b.mean,
            err: Some(b.sd),
            color: SIGNAL,
        })
        .collect();
    write_text(
        out.join("group_bars.svg"),
        &bar_chart("cross-subject similarity by predictivity rank", eval, &svg_bars, &note),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub network: String,
    pub component: String,
    pub track: TrackKind,
    /// Test r of the single-track model.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnalysis {
    pub scores: Vec<FeatureScore>,
}

impl FeatureAnalysis {
    pub fn get(&self, network: &str, track: TrackKind) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.network == network && s.track == track)
            .map(|s| s.r)
    }
}

/// For each configured network, fit one encoding model per feature track
/// on that network's component and score it on the test story. Results go
/// to `out/feature_analysis/`.
pub fn feature_analysis(cfg: &PipelineConfig) -> Result<FeatureAnalysis> {
    let fa = &cfg.feature_analysis;
    if fa.networks.is_empty() || fa.tracks.is_empty() {
        return Err(Error::config(
            "feature_analysis",
            "needs at least one network and one track",
        ));
    }
    let mut p = Pipeline::new(cfg.clone())?;
    p.run_until(Stage::MatchAtlas)?;
    let atlas = p
        .atlas_match()?
        .ok_or_else(|| Error::config("matching.enabled", "feature analysis needs atlas matching"))?;
    let components = fa
        .networks
        .iter()
        .map(|n| atlas.component_for(n))
        .collect::<Result<Vec<_>>>()?;

    let mut scores = Vec::new();
    for &track in &fa.tracks {
        let tracks = [track];
        let ts = p.training_set(Some(&tracks))?;
        let (xt, obs) = p.test_set(Some(&tracks))?;
        for (network, &c) in fa.networks.iter().zip(&components) {
            let name = component_name(c);
            let y = DMatrix::from_column_slice(ts.y.nrows(), 1, ts.y.column(c).as_slice());
            let model = fit_ridge(&ts.x, &y, std::slice::from_ref(&name), &cfg.ridge, Some(&ts.stories), cfg.seed)
                .map_err(|e| e.in_stage("feature_analysis"))?;
            let pred = predict(&model, &xt)?;
            scores.push(FeatureScore {
                network: network.clone(),
                component: name,
                track,
                r: corr_or_zero(pred.column(0).as_slice(), obs.column(c).as_slice()),
            });
        }
    }
    let result = FeatureAnalysis { scores };

    let dir = cfg.out.join("feature_analysis");
    let note = format!("config_digest={}", p.config_digest());
    let mut csv = format!("# {note}\nnetwork,component,track,r\n");
    for s in &result.scores {
        let _ = writeln!(csv, "{},{},{},{:.6}", s.network, s.component, track_label(&s.track), s.r);
    }
    write_text(dir.join("feature_analysis.csv"), &csv)?;
    write_json(&dir.join("feature_analysis.json"), &result)?;
    let colors = [SIGNAL, NEUTRAL];
    let bars: Vec<Bar> = fa
        .networks
        .iter()
        .flat_map(|n| {
            fa.tracks.iter().enumerate().map(move |(i, &t)| (n, i, t))
        })
        .map(|(n, i, t)| Bar {
            label: format!("{n} {}", track_label(&t)),
            value: result.get(n, t).unwrap_or(0.0),
            err: None,
            color: colors[i % colors.len()],
        })
        .collect();
    write_text(
        dir.join("feature_analysis.svg"),
        &bar_chart("single-feature predictivity by network", "test r", &bars, &note),
    )?;
    Ok(result)
}
