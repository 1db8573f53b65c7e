//! Assigning components to atlas networks and to each other across subjects.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Atlas;
use crate::error::{Error, Result};
use crate::ica::{sign_align, IcaModel};
use crate::stats::pearson;

/// Atlas assignments below this spatial r are flagged.
pub const LOW_CONFIDENCE_R: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedMap {
    pub component: usize,
    /// Sign-aligned values over the mask.
    pub values: Vec<f64>,
    pub retained: Vec<bool>,
    pub percentile: f64,
}

impl ThresholdedMap {
    pub fn n_retained(&self) -> usize {
        self.retained.iter().filter(|&&b| b).count()
    }

    /// 1 on retained voxels, 0 elsewhere.
    pub fn binary(&self) -> Vec<f64> {
        self.retained.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Values on retained voxels, 0 elsewhere.
    pub fn weighted(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.retained)
            .map(|(v, &b)| if b { *v } else { 0.0 })
            .collect()
    }
}

/// Keep the top `100 - percentile` percent of voxels by absolute value.
///
/// `m = max(1, V - ceil(percentile * V / 100))` voxels are targeted; the
/// threshold is the `m`-th largest `|value|` and every voxel reaching it is
/// kept, so ties at the threshold are all retained.
pub fn threshold_map(component: usize, values: &[f64], percentile: f64) -> Result<ThresholdedMap> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie in (0, 100), got {percentile}"
        )));
    }
    if values.iter().all(|v| *v == 0.0) {
        return Err(Error::AllZeroSource);
    }
    let v = values.len();
    let m = v
        .saturating_sub((percentile * v as f64 / 100.0).ceil() as usize)
        .max(1);
    let mut abs: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    abs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let thr = abs[m - 1];
    Ok(ThresholdedMap {
        component,
        values: values.to_vec(),
        retained: values.iter().map(|x| x.abs() >= thr).collect(),
        percentile,
    })
}

fn corr_or_zero(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentAssignment {
    pub component: usize,
    pub parcel: String,
    pub r: f64,
    pub low_confidence: bool,
    /// Another parcel reached the same r; the earlier parcel wins.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelAssignment {
    pub parcel: String,
    pub component: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasMatch {
    pub components: Vec<ComponentAssignment>,
    /// Best component per parcel.
    pub parcels: Vec<ParcelAssignment>,
    /// `components x parcels`.
    pub r: Vec<Vec<f64>>,
}

impl AtlasMatch {
    /// Component index labelled with `parcel` in the reverse view.
    pub fn component_for(&self, parcel: &str) -> Result<usize> {
        self.parcels
            .iter()
            .find(|p| p.parcel == parcel)
            .map(|p| p.component)
            .ok_or_else(|| Error::NetworkUnresolved(parcel.to_string()))
    }
}

/// Spatial correlation between each thresholded component map and each
/// parcel over the analysis mask. Binary maps are compared unless
/// `weighted`, which keeps the retained values.
pub fn match_atlas(
    model: &IcaModel,
    atlas: &Atlas,
    percentile: f64,
    weighted: bool,
) -> Result<AtlasMatch> {
    if !atlas.grid.same_geometry(model.grid()) {
        return Err(Error::GridMismatch("atlas and model grids differ".into()));
    }
    let aligned = sign_align(model);
    let idx = model.mask().indices();
    let parcels: Vec<Vec<f64>> = atlas
        .parcels
        .iter()
        .map(|p| {
            let v: Vec<f64> = idx.iter().map(|&i| if p.voxels[i] { 1.0 } else { 0.0 }).collect();
            if v.iter().all(|x| *x == 0.0) {
                Err(Error::EmptyParcel(p.name.clone()))
            } else {
                Ok(v)
            }
        })
        .collect::<Result<_>>()?;

    let r: Vec<Vec<f64>> = (0..aligned.k())
        .into_par_iter()
        .map(|c| {
            let tm = threshold_map(c, &aligned.source_row(c), percentile)?;
            let map = if weighted { tm.weighted() } else { tm.binary() };
            Ok(parcels.iter().map(|p| corr_or_zero(&map, p)).collect())
        })
        .collect::<Result<_>>()?;

    let components = r
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let best = argmax(row);
            ComponentAssignment {
                component: c,
                parcel: atlas.parcels[best].name.clone(),
                r: row[best],
                low_confidence: row[best] < LOW_CONFIDENCE_R,
                tied: row.iter().enumerate().any(|(j, v)| j != best && *v == row[best]),
            }
        })
        .collect();
    let parcels = atlas
        .parcels
        .iter()
        .enumerate()
        .map(|(p, parcel)| {
            let col: Vec<f64> = r.iter().map(|row| row[p]).collect();
            let best = argmax(&col);
            ParcelAssignment {
                parcel: parcel.name.clone(),
                component: best,
                r: col[best],
            }
        })
        .collect();
    Ok(AtlasMatch {
        components,
        parcels,
        r,
    })
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MatchDirection {
    /// Match on time series, evaluate on maps.
    #[default]
    TemporalFirst,
    /// Match on maps, evaluate on time series.
    SpatialFirst,
}

/// What one subject contributes to cross-subject matching.
#[derive(Debug, Clone)]
pub struct SubjectBundle {
    pub id: String,
    /// Sign-aligned component maps.
    pub model: IcaModel,
    /// Component time series on the shared test story, `T x K`.
    pub series: nalgebra::DMatrix<f64>,
    pub story: String,
    /// Test predictivity per component, used for ranking.
    pub predictivity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub ref_subject: String,
    pub ref_component: usize,
    pub other_subject: String,
    pub matched_component: usize,
    pub match_r: f64,
    pub eval_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub direction: MatchDirection,
    pub reference: String,
    pub pairs: Vec<MatchPair>,
}

impl MatchResult {
    /// Matched component in `other` for each reference component.
    pub fn assignment(&self, other: &str) -> Vec<usize> {
        self.pairs
            .iter()
            .filter(|p| p.other_subject == other)
            .map(|p| p.matched_component)
            .collect()
    }
}

fn temporal_r(a: &SubjectBundle, i: usize, b: &SubjectBundle, j: usize) -> f64 {
    corr_or_zero(a.series.column(i).as_slice(), b.series.column(j).as_slice())
}

fn spatial_r(a: &SubjectBundle, i: usize, b: &SubjectBundle, j: usize) -> f64 {
    corr_or_zero(&a.model.source_row(i), &b.model.source_row(j))
}

/// Per-component argmax partners of `reference` in every other subject.
/// Many-to-one matches are allowed.
pub fn match_subjects(
    reference: &SubjectBundle,
    others: &[SubjectBundle],
    direction: MatchDirection,
) -> Result<MatchResult> {
    for o in others {
        if o.story != reference.story || o.series.nrows() != reference.series.nrows() {
            return Err(Error::NoSharedStory(format!(
                "{} ({}, {} rows) vs {} ({}, {} rows)",
                reference.id,
                reference.story,
                reference.series.nrows(),
                o.id,
                o.story,
                o.series.nrows()
            )));
        }
        if !o.model.grid().same_geometry(reference.model.grid())
            || o.model.mask().digest() != reference.model.mask().digest()
        {
            return Err(Error::GridMismatch(format!(
                "{} and {} do not share a grid and mask",
                reference.id, o.id
            )));
        }
    }
    let (matcher, evaluator): (MetricFn, MetricFn) = match direction {
        MatchDirection::TemporalFirst => (temporal_r, spatial_r),
        MatchDirection::SpatialFirst => (spatial_r, temporal_r),
    };
    let k = reference.model.k();
    let mut pairs = Vec::with_capacity(k * others.len());
    for o in others {
        let rows: Vec<MatchPair> = (0..k)
            .into_par_iter()
            .map(|i| {
                let scores: Vec<f64> = (0..o.model.k()).map(|j| matcher(reference, i, o, j)).collect();
                let j = argmax(&scores);
                MatchPair {
                    ref_subject: reference.id.clone(),
                    ref_component: i,
                    other_subject: o.id.clone(),
                    matched_component: j,
                    match_r: scores[j],
                    eval_r: evaluator(reference, i, o, j),
                }
            })
            .collect();
        pairs.extend(rows);
    }
    Ok(MatchResult {
        direction,
        reference: reference.id.clone(),
        pairs,
    })
}

type MetricFn = fn(&SubjectBundle, usize, &SubjectBundle, usize) -> f64;

/// Every subject in turn as reference against all the others.
pub fn match_all(subjects: &[SubjectBundle], direction: MatchDirection) -> Result<Vec<MatchResult>> {
    if subjects.len() < 2 {
        return Err(Error::TooFewSubjects(subjects.len()));
    }
    (0..subjects.len())
        .map(|s| {
            let others: Vec<SubjectBundle> = subjects
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != s)
                .map(|(_, b)| b.clone())
                .collect();
            match_subjects(&subjects[s], &others, direction)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankBar {
    pub rank: usize,
    pub mean: f64,
    /// Population standard deviation across references.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub direction: MatchDirection,
    pub bars: Vec<RankBar>,
    /// Mean over ranks of each reference's averaged eval r.
    pub per_reference: Vec<(String, f64)>,
}

/// Leave-one-out summary: for each reference, eval r averaged over the other
/// subjects at each of its top-`top_n` components by predictivity; bars are
/// the mean and spread of those values across references.
pub fn loo_aggregate(
    results: &[MatchResult],
    subjects: &[SubjectBundle],
    top_n: usize,
) -> Result<GroupSummary> {
    if subjects.len() < 2 || results.len() < 2 {
        return Err(Error::TooFewSubjects(subjects.len().min(results.len())));
    }
    let direction = results[0].direction;
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(results.len());
    let mut per_reference = Vec::with_capacity(results.len());
    for res in results {
        let subj = subjects
            .iter()
            .find(|s| s.id == res.reference)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown reference `{}`", res.reference)))?;
        let order = crate::stats::rank_components(&subj.predictivity);
        let n = top_n.min(order.len());
        let row: Vec<f64> = order[..n]
            .iter()
            .map(|&c| {
                let vals: Vec<f64> = res
                    .pairs
                    .iter()
                    .filter(|p| p.ref_component == c)
                    .map(|p| p.eval_r)
                    .collect();
                crate::linalg::mean(&vals)
            })
            .collect();
        per_reference.push((res.reference.clone(), crate::linalg::mean(&row)));
        table.push(row);
    }
    let n = table.iter().map(Vec::len).min().unwrap_or(0);
    let bars = (0..n)
        .map(|rank| {
            let col: Vec<f64> = table.iter().map(|row| row[rank]).collect();
            RankBar {
                rank: rank + 1,
                mean: crate::linalg::mean(&col),
                sd: crate::linalg::pop_std(&col),
            }
        })
        .collect();
    Ok(GroupSummary {
        direction,
        bars,
        per_reference,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataio::{Mask, Parcel, VolumeGrid};

    #[test]
    fn threshold_counts() {
        let vals: Vec<f64> = (0..1000).map(|i| i as f64 - 500.5).collect();
        let t = threshold_map(0, &vals, 99.0).unwrap();
        assert_eq!(t.n_retained(), 10);
        let t = threshold_map(0, &[2.0; 7], 99.0).unwrap();
        assert_eq!(t.n_retained(), 7);
        assert!(threshold_map(0, &vals, 0.0).is_err());
        assert!(threshold_map(0, &vals, 100.0).is_err());
        assert!(matches!(threshold_map(0, &[0.0; 4], 50.0), Err(Error::AllZeroSource)));
    }

    fn line_mask(v: usize) -> Arc<Mask> {
        Arc::new(Mask::full(VolumeGrid::isotropic([v, 1, 1], 2.0).unwrap()))
    }

    fn parcel(name: &str, v: usize, range: std::ops::Range<usize>) -> Parcel {
        Parcel {
            name: name.into(),
            voxels: (0..v).map(|i| range.contains(&i)).collect(),
        }
    }

    #[test]
    fn exact_parcel_wins() {
        let v = 200;
        let mask = line_mask(v);
        let mut s = DMatrix::zeros(2, v);
        // component 0: strong on voxels 10..12, weak spread elsewhere
        for i in 0..v {
            s[(0, i)] = if (10..12).contains(&i) { 5.0 } else { 0.01 * (i % 3) as f64 };
            s[(1, i)] = if (100..102).contains(&i) { 4.0 } else { 0.0 };
        }
        let model = IcaModel::from_sources(mask.clone(), s).unwrap();
        let atlas = Atlas::new(
            mask.grid().clone(),
            vec![
                parcel("A", v, 10..12),
                parcel("B", v, 100..102),
                parcel("Bdup", v, 100..102),
            ],
        )
        .unwrap();
        let m = match_atlas(&model, &atlas, 99.0, false).unwrap();
        assert_eq!(m.components[0].parcel, "A");
        assert!((m.components[0].r - 1.0).abs() < 1e-12);
        assert_eq!(m.components[1].parcel, "B");
        assert!(m.components[1].tied);
        assert_eq!(m.component_for("B").unwrap(), 1);
        assert!(matches!(m.component_for("C"), Err(Error::NetworkUnresolved(_))));
    }

    #[test]
    fn disjoint_map_is_low_confidence() {
        let v = 300;
        let mask = line_mask(v);
        let s = DMatrix::from_fn(1, v, |_, i| if (200..203).contains(&i) { 1.0 } else { 0.0 });
        let model = IcaModel::from_sources(mask.clone(), s).unwrap();
        let atlas = Atlas::new(mask.grid().clone(), vec![parcel("A", v, 0..50)]).unwrap();
        let m = match_atlas(&model, &atlas, 99.0, false).unwrap();
        // oracle: correlation of two disjoint binary vectors
        let (n, a, b) = (v as f64, 3.0, 50.0);
        let want = -(a * b / n) / ((a - a * a / n).sqrt() * (b - b * b / n).sqrt());
        assert!((m.components[0].r - want).abs() < 1e-12);
        assert!(m.components[0].low_confidence);
    }

    #[test]
    fn empty_parcel_and_grid_checks() {
        let g = VolumeGrid::isotropic([4, 1, 1], 2.0).unwrap();
        let mask = Arc::new(Mask::new(g.clone(), vec![true, true, true, false]).unwrap());
        let model = IcaModel::from_sources(mask, DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 2.0])).unwrap();
        let atlas = Atlas::new(g, vec![parcel("out", 4, 3..4)]).unwrap();
        assert!(matches!(match_atlas(&model, &atlas, 50.0, false), Err(Error::EmptyParcel(_))));
        let other = Atlas::new(VolumeGrid::isotropic([5, 1, 1], 2.0).unwrap(), vec![]).unwrap();
        assert!(matches!(match_atlas(&model, &other, 50.0, false), Err(Error::GridMismatch(_))));
    }

    fn subject(id: &str, seed: u64, k: usize, v: usize, t: usize) -> SubjectBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = DMatrix::from_fn(k, v, |_, _| rng.random_range(-1.0..1.0));
        let series = DMatrix::from_fn(t, k, |_, _| rng.random_range(-1.0..1.0));
        SubjectBundle {
            id: id.into(),
            model: IcaModel::from_sources(line_mask(v), s).unwrap(),
            series,
            story: "test".into(),
            predictivity: (0..k).map(|c| 1.0 - c as f64 / k as f64).collect(),
        }
    }

    fn permuted(base: &SubjectBundle, id: &str, pi: &[usize]) -> SubjectBundle {
        // other component pi[i] carries reference component i
        let k = pi.len();
        let mut s = base.model.sources().clone();
        let mut series = base.series.clone();
        for i in 0..k {
            s.set_row(pi[i], &base.model.sources().row(i));
            series.set_column(pi[i], &base.series.column(i));
        }
        SubjectBundle {
            id: id.into(),
            model: IcaModel::from_sources(base.model.mask_arc().clone(), s).unwrap(),
            series,
            story: base.story.clone(),
            predictivity: base.predictivity.clone(),
        }
    }

    #[test]
    fn copies_match_identically() {
        let a = subject("a", 1, 6, 80, 50);
        let mut b = a.clone();
        b.id = "b".into();
        for dir in [MatchDirection::TemporalFirst, MatchDirection::SpatialFirst] {
            let r = match_subjects(&a, &[b.clone()], dir).unwrap();
            assert_eq!(r.assignment("b"), (0..6).collect::<Vec<_>>());
            for p in &r.pairs {
                assert!((p.match_r - 1.0).abs() < 1e-12 && (p.eval_r - 1.0).abs() < 1e-12);
            }
        }
        let res = match_all(&[a.clone(), b.clone()], MatchDirection::TemporalFirst).unwrap();
        let g = loo_aggregate(&res, &[a, b], 3).unwrap();
        assert!(g.bars.iter().all(|b| (b.mean - 1.0).abs() < 1e-12 && b.sd < 1e-12));
    }

    #[test]
    fn planted_permutation_is_recovered() {
        let a = subject("a", 2, 7, 100, 60);
        let pi = [3, 0, 6, 1, 5, 2, 4];
        let b = permuted(&a, "b", &pi);
        let r = match_subjects(&a, &[b.clone()], MatchDirection::TemporalFirst).unwrap();
        assert_eq!(r.assignment("b"), pi.to_vec());
        // the reverse direction yields the inverse permutation
        let back = match_subjects(&b, &[a], MatchDirection::TemporalFirst).unwrap();
        let inv = back.assignment("a");
        for i in 0..7 {
            assert_eq!(inv[pi[i]], i);
        }
    }

    #[test]
    fn independent_subjects_evaluate_near_zero() {
        let t = 200;
        let a = subject("a", 3, 8, 150, t);
        let b = subject("b", 4, 8, 150, t);
        let r = match_subjects(&a, &[b], MatchDirection::SpatialFirst).unwrap();
        let mean_abs = r.pairs.iter().map(|p| p.eval_r.abs()).sum::<f64>() / r.pairs.len() as f64;
        assert!(mean_abs < 2.0 / (t as f64).sqrt(), "{mean_abs}");
    }

    #[test]
    fn story_and_subject_count_checks() {
        let a = subject("a", 5, 3, 20, 30);
        let mut b = subject("b", 6, 3, 20, 30);
        b.story = "other".into();
        assert!(matches!(
            match_subjects(&a, &[b], MatchDirection::TemporalFirst),
            Err(Error::NoSharedStory(_))
        ));
        assert!(matches!(
            match_all(&[a], MatchDirection::TemporalFirst),
            Err(Error::TooFewSubjects(1))
        ));
    }

    #[test]
    fn two_subjects_loo_equals_pairwise() {
        let a = subject("a", 7, 4, 60, 40);
        let mut b = subject("b", 8, 4, 60, 40);
        // share some structure so values are not all near zero
        b.series = &a.series * 0.7 + &b.series * 0.3;
        let res = match_all(&[a.clone(), b.clone()], MatchDirection::TemporalFirst).unwrap();
        let g = loo_aggregate(&res, &[a.clone(), b.clone()], 1).unwrap();
        let top_a = crate::stats::rank_components(&a.predictivity)[0];
        let top_b = crate::stats::rank_components(&b.predictivity)[0];
        let ab = res[0].pairs.iter().find(|p| p.ref_component == top_a).unwrap().eval_r;
        let ba = res[1].pairs.iter().find(|p| p.ref_component == top_b).unwrap().eval_r;
        assert_eq!(g.per_reference[0].1, ab);
        assert_eq!(g.per_reference[1].1, ba);
        assert!((g.bars[0].mean - (ab + ba) / 2.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn matching_ignores_positive_rescaling(seed in 0u64..500, scale in 0.01f64..100.0) {
            let a = subject("a", seed, 5, 60, 40);
            let b = subject("b", seed + 1000, 5, 60, 40);
            let mut b2 = b.clone();
            b2.series *= scale;
            b2.model = IcaModel::from_sources(b.model.mask_arc().clone(), b.model.sources() * scale).unwrap();
            for dir in [MatchDirection::TemporalFirst, MatchDirection::SpatialFirst] {
                let r1 = match_subjects(&a, &[b.clone()], dir).unwrap();
                let r2 = match_subjects(&a, &[b2.clone()], dir).unwrap();
                prop_assert_eq!(r1.assignment("b"), r2.assignment("b"));
            }
        }

        #[test]
        fn threshold_size_depends_only_on_v_and_p(v in 1usize..400, p in 1.0f64..99.5, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..v).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = threshold_map(0, &vals, p).unwrap();
            let want = v.saturating_sub((p * v as f64 / 100.0).ceil() as usize).max(1);
            prop_assert_eq!(t.n_retained(), want);
        }
    }
}
