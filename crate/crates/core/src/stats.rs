//! Correlation, permutation inference, FDR control and ranking.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::cv_predict;
use crate::error::{Error, Result};
use crate::features::{assemble_runs_trimmed, hstack, FeatureMatrix};

/// Pearson correlation from population moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("{} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let tiny = |s: f64, m: f64| s <= 1e-26 * n * m.abs().max(1.0).powi(2);
    if tiny(sxx, mx) || tiny(syy, my) {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Column-wise Pearson r between two equally shaped matrices.
pub fn pearson_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..a.ncols())
        .map(|j| pearson(a.column(j).as_slice(), b.column(j).as_slice()))
        .collect()
}

/// How design rows are shuffled for the null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NullScheme {
    /// Every row independently.
    #[default]
    Full,
    /// Contiguous blocks of `len` rows are shuffled as units.
    Block { len: usize },
}

/// Row order for permutation `index` under `seed`.
pub fn permutation_indices(n: usize, seed: u64, index: u64, scheme: NullScheme) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index);
    match scheme {
        NullScheme::Full => {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        }
        NullScheme::Block { len } => {
            let len = len.max(1);
            let mut blocks: Vec<Vec<usize>> = (0..n)
                .collect::<Vec<_>>()
                .chunks(len)
                .map(<[usize]>::to_vec)
                .collect();
            blocks.shuffle(&mut rng);
            blocks.concat()
        }
    }
}

/// Everything a permutation refit needs: pre-lag feature blocks per run,
/// the stacked targets, fixed per-target alphas and the fold layout.
pub struct PermutationSetup<'a> {
    pub runs: &'a [Vec<FeatureMatrix>],
    pub delays: &'a [usize],
    pub targets: &'a DMatrix<f64>,
    pub alphas: &'a [f64],
    pub folds: &'a [Vec<usize>],
    /// Rows dropped from the start and end of each run after lag expansion.
    pub trim: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    /// Out-of-fold r on the unshuffled design.
    pub observed: Vec<f64>,
    pub p: Vec<f64>,
    pub n_perm: usize,
}

fn oof_scores(setup: &PermutationSetup<'_>, design: &FeatureMatrix) -> Vec<f64> {
    let pred = cv_predict(design.data(), setup.targets, setup.alphas, setup.folds);
    (0..setup.targets.ncols())
        .map(|j| {
            pearson(pred.column(j).as_slice(), setup.targets.column(j).as_slice()).unwrap_or(0.0)
        })
        .collect()
}

/// One-sided permutation p-values, `(1 + #{null >= observed}) / (n + 1)`.
///
/// The pre-lag rows of all runs are shuffled jointly, then each run is
/// lag-expanded and standardized again. Results do not depend on thread
/// scheduling: permutation `i` always uses the stream seeded by `seed ^ i`.
pub fn permutation_test(
    setup: &PermutationSetup<'_>,
    n_perm: usize,
    seed: u64,
    scheme: NullScheme,
) -> Result<PermutationResult> {
    if n_perm == 0 {
        return Err(Error::InvalidArgument("n_perm must be at least 1".into()));
    }
    let bases = setup
        .runs
        .iter()
        .map(|blocks| hstack(blocks))
        .collect::<Result<Vec<_>>>()?;
    let lens: Vec<usize> = bases.iter().map(FeatureMatrix::n_rows).collect();
    let total: usize = lens.iter().sum();
    let (head, tail) = setup.trim;
    let kept: usize = lens.iter().map(|l| l.saturating_sub(head + tail)).sum();
    if kept != setup.targets.nrows() {
        return Err(Error::LengthMismatch(format!(
            "{kept} design rows for {} target rows",
            setup.targets.nrows()
        )));
    }
    let first = &bases[0];
    let mut stacked = DMatrix::zeros(total, first.n_cols());
    let mut at = 0;
    for b in &bases {
        stacked.rows_mut(at, b.n_rows()).copy_from(b.data());
        at += b.n_rows();
    }

    let observed_design = assemble_runs_trimmed(&single_block_runs(&bases), setup.delays, head, tail)?;
    let observed = oof_scores(setup, &observed_design);

    let exceed: Vec<Vec<bool>> = (0..n_perm)
        .into_par_iter()
        .map(|i| -> Result<Vec<bool>> {
            let order = permutation_indices(total, seed, i as u64, scheme);
            let mut runs = Vec::with_capacity(lens.len());
            let mut at = 0;
            for &len in &lens {
                let data = DMatrix::from_fn(len, first.n_cols(), |r, c| stacked[(order[at + r], c)]);
                runs.push(vec![FeatureMatrix::new(data, first.columns().to_vec(), first.tr())?]);
                at += len;
            }
            let design = assemble_runs_trimmed(&runs, setup.delays, head, tail)?;
            let null = oof_scores(setup, &design);
            Ok(null.iter().zip(&observed).map(|(n, o)| n >= o).collect())
        })
        .collect::<Result<_>>()?;

    let p = (0..observed.len())
        .map(|j| {
            let count = exceed.iter().filter(|e| e[j]).count();
            (1 + count) as f64 / (n_perm + 1) as f64
        })
        .collect();
    Ok(PermutationResult {
        observed,
        p,
        n_perm,
    })
}

fn single_block_runs(bases: &[FeatureMatrix]) -> Vec<Vec<FeatureMatrix>> {
    bases.iter().map(|b| vec![b.clone()]).collect()
}

/// Benjamini-Hochberg step-up rejections at level `q`.
pub fn bh_fdr(p: &[f64], q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("q must lie in (0, 1), got {q}")));
    }
    if let Some(bad) = p.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside (0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(a.cmp(&b)));
    let cutoff = (1..=m)
        .rev()
        .find(|&i| p[order[i - 1]] <= i as f64 * q / m as f64)
        .unwrap_or(0);
    let mut out = vec![false; m];
    for &idx in &order[..cutoff] {
        out[idx] = true;
    }
    Ok(out)
}

/// Indices ordered by descending score, ties by ascending index.
pub fn rank_components(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// 1-based rank of each target under [`rank_components`].
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut out = vec![0; scores.len()];
    for (pos, idx) in rank_components(scores).into_iter().enumerate() {
        out[idx] = pos + 1;
    }
    out
}
