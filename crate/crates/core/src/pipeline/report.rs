//! Per-subject report: predictivity table, summary and figures.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cache::StageDir;
use super::svg::{bar_chart, Bar, NEUTRAL, NOISE, SIGNAL};
use super::{read_json, write_json, Pipeline};
use crate::aroma::Label;
use crate::dataio::{read_matrix, write_text};
use crate::error::Result;
use crate::synth::{score_recovery, Truth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub component: String,
    pub test_r: f64,
    pub cv_r: f64,
    pub p: f64,
    pub reject: bool,
    pub rank: usize,
    pub alpha: f64,
    pub hfc: f64,
    pub edge_frac: f64,
    pub csf_frac: f64,
    pub motion_corr: f64,
    pub label: Label,
    /// Best-matching atlas parcel.
    pub network: Option<String>,
    pub network_r: Option<f64>,
    pub low_confidence: Option<bool>,
    /// Planted source this component recovers, on synthetic data.
    pub truth: Option<String>,
    pub truth_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecovery {
    pub source: String,
    pub component: String,
    /// Absolute spatial correlation.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub subject: String,
    pub config_digest: String,
    /// One row per component, in component order.
    pub rows: Vec<ReportRow>,
    pub recovery: Option<Vec<SourceRecovery>>,
}

impl RunSummary {
    pub fn row(&self, component: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.component == component)
    }

    /// Row of the component recovering planted source `source`.
    pub fn row_for_truth(&self, source: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.truth.as_deref() == Some(source))
    }

    /// Rows ordered best to worst by test r.
    pub fn ranked(&self) -> Vec<&ReportRow> {
        let mut rows: Vec<&ReportRow> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.rank);
        rows
    }
}

pub fn read_summary(dir: impl AsRef<Path>) -> Result<RunSummary> {
    read_json(&dir.as_ref().join("summary.json"))
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn csv(summary: &RunSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_digest={}", summary.config_digest);
    s.push_str(
        "component,rank,test_r,cv_r,p,reject,alpha,hfc,edge_frac,csf_frac,motion_corr,label,network,network_r,low_confidence,truth,truth_r\n",
    );
    for r in summary.ranked() {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{},{:.6e},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            r.component,
            r.rank,
            r.test_r,
            r.cv_r,
            r.p,
            r.reject,
            r.alpha,
            r.hfc,
            r.edge_frac,
            r.csf_frac,
            r.motion_corr,
            r.label.as_str(),
            fmt_opt(&r.network),
            fmt_opt(&r.network_r.map(|v| format!("{v:.6}"))),
            fmt_opt(&r.low_confidence),
            fmt_opt(&r.truth),
            fmt_opt(&r.truth_r.map(|v| format!("{v:.6}"))),
        );
    }
    s
}

fn recovery(p: &Pipeline) -> Result<Option<Vec<SourceRecovery>>> {
    let Some(path) = p.truth_path() else {
        return Ok(None);
    };
    let truth: Truth = read_json(&path)?;
    let (sources, _) = read_matrix(&truth.sources)?;
    let model = p.model()?;
    let rec = score_recovery(&sources.transpose(), model.mask(), &model)?;
    Ok(Some(
        truth
            .names
            .iter()
            .zip(rec.assignment.iter().zip(&rec.scores))
            .map(|(name, (&c, &r))| SourceRecovery {
                source: name.clone(),
                component: crate::ica::component_name(c),
                r,
            })
            .collect(),
    ))
}

pub(super) fn write_reports(p: &Pipeline, dir: &StageDir) -> Result<()> {
    let scores = p.encode_scores()?;
    let perm = p.permutation()?;
    let fdr = p.fdr()?;
    let aroma = p.aroma()?;
    let atlas = p.atlas_match()?;
    let recovery = recovery(p)?;

    let rows: Vec<ReportRow> = scores
        .components
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let a = atlas.as_ref().map(|m| &m.components[j]);
            let t = recovery
                .as_ref()
                .and_then(|rec| rec.iter().find(|s| &s.component == name));
            ReportRow {
                component: name.clone(),
                test_r: scores.test_r[j],
                cv_r: scores.cv_r[j],
                p: perm.p[j],
                reject: fdr.reject[j],
                rank: fdr.rank[j],
                alpha: scores.alpha[j],
                hfc: aroma.features[j].hfc,
                edge_frac: aroma.features[j].edge_frac,
                csf_frac: aroma.features[j].csf_frac,
                motion_corr: aroma.features[j].motion_corr,
                label: aroma.labels[j],
                network: a.map(|a| a.parcel.clone()),
                network_r: a.map(|a| a.r),
                low_confidence: a.map(|a| a.low_confidence),
                truth: t.map(|t| t.source.clone()),
                truth_r: t.map(|t| t.r),
            }
        })
        .collect();
    let summary = RunSummary {
        subject: p.config().subject.clone(),
        config_digest: p.config_digest().to_string(),
        rows,
        recovery,
    };

    write_text(dir.path("predictivity.csv"), &csv(&summary))?;
    write_json(&dir.path("summary.json"), &summary)?;

    let note = format!("config_digest={}", summary.config_digest);
    let bars: Vec<Bar> = summary
        .ranked()
        .into_iter()
        .map(|r| Bar {
            label: match &r.network {
                Some(n) => format!("{} ({n})", r.component),
                None => r.component.clone(),
            },
            value: r.test_r,
            err: None,
            color: match r.label {
                Label::Signal => SIGNAL,
                Label::Noise => NOISE,
            },
        })
        .collect();
    write_text(
        dir.path("ranked_predictivity.svg"),
        &bar_chart(
            &format!("{}: components by test r", summary.subject),
            "test r",
            &bars,
            &note,
        ),
    )?;

    if let Some(m) = &atlas {
        let bars: Vec<Bar> = m
            .parcels
            .iter()
            .map(|pa| {
                let r = scores.test_r[pa.component];
                Bar {
                    label: format!("{} ({})", pa.parcel, scores.components[pa.component]),
                    value: r,
                    err: None,
                    color: if summary.rows[pa.component].low_confidence == Some(true) {
                        NEUTRAL
                    } else {
                        SIGNAL
                    },
                }
            })
            .collect();
        write_text(
            dir.path("network_predictivity.svg"),
            &bar_chart(
                &format!("{}: predictivity by network", summary.subject),
                "test r",
                &bars,
                &note,
            ),
        )?;
    }
    Ok(())
}
