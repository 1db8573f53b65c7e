//! End-to-end acceptance checks on synthetic data with planted ground
//! truth. Each check prints one PASS/FAIL line; the test fails if any does.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use icenc::encoder::{fit_ridge, make_folds, RidgeSpec};
use icenc::features::{
    build_blocks, lanczos_downsample, lanczos_kernel, FeatureConfig, FeatureMatrix, TrackKind,
    WordFeatureTrack,
};
use icenc::ica::{fit_ica, project, IcaConfig, IcaModel};
use icenc::pipeline::{
    feature_analysis, match_subject_configs, read_summary, run_all, PipelineConfig, RunSummary,
};
use icenc::stats::{bh_fdr, pearson, permutation_test, NullScheme, PermutationSetup};
use icenc::synth::{generate, score_recovery, Role, Split, SynthSpec};
use icenc::aroma::Label;
use icenc::dataio::VolumeSeries;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn ica_recovery() -> Check {
    let spec = SynthSpec::default();
    let data = generate(&spec).unwrap();
    let x = &data.runs.iter().find(|r| r.split == Split::Estimation).unwrap().series;
    let start = Instant::now();
    let model = single_thread(|| {
        fit_ica(
            x,
            &IcaConfig {
                k: spec.k_true,
                ..IcaConfig::default()
            },
        )
    })
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let rec = score_recovery(&data.sources, &data.mask, &model).unwrap();
    let worst = rec.scores.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(
        worst > 0.95 && secs < 30.0,
        format!("min |r| {worst:.4} over {} sources, {secs:.2}s", rec.scores.len()),
    )
}

fn projection_identity() -> Check {
    let data = generate(&SynthSpec::default()).unwrap();
    let model = IcaModel::from_sources(data.mask.clone(), data.sources.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a0 = DMatrix::from_fn(120, model.k(), |_, _| rng.random_range(-2.0..2.0));
    let x = VolumeSeries::new(Arc::clone(&data.mask), 2.0, &a0 * model.sources()).unwrap();
    let a = project(&model, &x, "p").unwrap().data;
    let err = (a - a0).abs().max();
    ensure(err < 1e-8, format!("max |A - A0| = {err:.2e}"))
}

/// Explicit normal-equations solve on the standardized design and centered
/// targets.
fn normal_equations(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let t = x.nrows() as f64;
    let mut xs = x.clone();
    for mut col in xs.column_iter_mut() {
        let mu = col.sum() / t;
        let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / t).sqrt();
        col.apply(|v| *v = (*v - mu) / sd);
    }
    let mut yc = y.clone();
    for j in 0..y.ncols() {
        let m = y.column(j).mean();
        yc.column_mut(j).add_scalar_mut(-m);
    }
    let d = xs.ncols();
    let lhs = xs.transpose() * &xs + DMatrix::identity(d, d) * alpha;
    lhs.lu().solve(&(xs.transpose() * yc)).unwrap()
}

fn ridge_oracle() -> Check {
    let mut worst = 0.0f64;
    let grid = RidgeSpec::default().alpha_grid;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
        let x = DMatrix::from_fn(60, 10, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(60, 3, |_, _| rng.random_range(-1.0..1.0));
        let names: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let design = FeatureMatrix::new(x.clone(), names, 2.0).unwrap();
        let targets: Vec<String> = (0..3).map(|i| format!("t{i}")).collect();
        for &alpha in &grid {
            let spec = RidgeSpec {
                alpha_grid: vec![alpha],
                ..RidgeSpec::default()
            };
            let m = fit_ridge(&design, &y, &targets, &spec, None, 0).unwrap();
            let want = normal_equations(&x, &y, alpha);
            worst = worst.max((m.weights - want).abs().max());
        }
    }
    ensure(worst < 1e-9, format!("max weight error {worst:.2e} over 20 instances x {} alphas", grid.len()))
}

fn end_to_end_summary(out: &Path) -> RunSummary {
    let mut cfg = PipelineConfig::synthetic(SynthSpec::default());
    cfg.out = out.to_path_buf();
    run_all(cfg).unwrap()
}

fn driven_names() -> Vec<String> {
    let spec = SynthSpec::default();
    spec.roles()
        .iter()
        .zip(icenc::synth::role_names(&spec.roles()))
        .filter(|(r, _)| r.is_driven())
        .map(|(_, n)| n)
        .collect()
}

fn end_to_end(s: &RunSummary) -> Check {
    let spec = SynthSpec::default();
    let names = icenc::synth::role_names(&spec.roles());
    let driven = driven_names();
    let mut detail = Vec::new();
    let mut ok = true;
    for n in &names {
        let Some(row) = s.row_for_truth(n) else {
            return Err(format!("no component recovers {n}"));
        };
        let good = if driven.contains(n) {
            row.test_r > 0.9 && row.rank <= driven.len()
        } else {
            row.test_r.abs() < 0.2 && row.rank > driven.len()
        };
        ok &= good;
        detail.push(format!("{n} r={:.3} rank {}", row.test_r, row.rank));
    }
    ensure(ok, detail.join(", "))
}

fn permutation_calibration() -> Check {
    let (n_null, n_perm, t) = (200, 200, 120);
    let spec = RidgeSpec::default();
    let folds = make_folds(t, &spec, None, 0).unwrap();
    let mut hits = 0;
    for i in 0..n_null {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let f: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = DMatrix::from_fn(t, 1, |_, _| rng.random_range(-1.0..1.0));
        let runs = vec![vec![FeatureMatrix::new(DMatrix::from_vec(t, 1, f), vec!["f".into()], 2.0).unwrap()]];
        let setup = PermutationSetup {
            runs: &runs,
            delays: &[1, 2, 3],
            targets: &y,
            alphas: &[1.0],
            folds: &folds,
            trim: (0, 0),
        };
        let res = permutation_test(&setup, n_perm, i as u64, NullScheme::Full).unwrap();
        if res.p[0] < 0.05 {
            hits += 1;
        }
    }
    let frac = hits as f64 / n_null as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = DMatrix::zeros(t, 1);
    for r in 2..t {
        y[(r, 0)] = f[r - 2];
    }
    let runs = vec![vec![FeatureMatrix::new(DMatrix::from_vec(t, 1, f), vec!["f".into()], 2.0).unwrap()]];
    let setup = PermutationSetup {
        runs: &runs,
        delays: &[1, 2, 3],
        targets: &y,
        alphas: &[1.0],
        folds: &folds,
        trim: (0, 0),
    };
    let p_driven = permutation_test(&setup, n_perm, 3, NullScheme::Full).unwrap().p[0];
    let want = 1.0 / (n_perm + 1) as f64;
    ensure(
        (0.01..=0.12).contains(&frac) && p_driven == want,
        format!("null fraction p<0.05 = {frac:.3}; driven p = {p_driven:.5} (want {want:.5})"),
    )
}

/// Step-up rule evaluated directly: reject the k smallest p-values for the
/// largest k with p_(k) <= k q / m.
fn brute_bh(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cut = None;
    for k in (1..=m).rev() {
        if sorted[k - 1] <= k as f64 * q / m as f64 {
            cut = Some(sorted[k - 1]);
            break;
        }
    }
    p.iter().map(|&v| cut.is_some_and(|c| v <= c)).collect()
}

fn bh_brute_force() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=50);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.3) {
                    rng.random_range(1e-6..0.01)
                } else {
                    rng.random_range(1e-6..1.0)
                }
            })
            .collect();
        if bh_fdr(&p, 0.05).unwrap() != brute_bh(&p, 0.05) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("{mismatches} mismatches in 1000 vectors"))
}

fn lanczos() -> Check {
    let mut worst = (lanczos_kernel(0.0, 3) - 1.0).abs();
    for x in [1.0, -1.0, 2.0, -2.0, 3.0, -3.0] {
        worst = worst.max(lanczos_kernel(x, 3).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (tr, n_trs, a) = (2.0, 40, 3usize);
    let times: Vec<f64> = (0..150).map(|_| rng.random_range(0.0..tr * n_trs as f64)).collect();
    let values = DMatrix::from_fn(times.len(), 2, |_, _| rng.random_range(-1.0..1.0));
    let track = WordFeatureTrack::new("w", times.clone(), values.clone()).unwrap();
    let got = lanczos_downsample(&track, tr, n_trs, a).unwrap();
    let sinc = |x: f64| {
        if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        }
    };
    let mut resample_err = 0.0f64;
    for t in 0..n_trs {
        for j in 0..2 {
            let mut acc = 0.0;
            for (w, &time) in times.iter().enumerate() {
                let x = (t as f64 * tr + tr / 2.0 - time) / tr;
                if x.abs() < a as f64 {
                    acc += values[(w, j)] * sinc(x) * sinc(x / a as f64);
                }
            }
            resample_err = resample_err.max((got.data()[(t, j)] - acc).abs());
        }
    }
    ensure(
        worst < 1e-12 && resample_err < 1e-12,
        format!("kernel identity error {worst:.1e}, resampling error {resample_err:.1e}"),
    )
}

fn residual_orthogonality() -> Check {
    let data = generate(&SynthSpec::default()).unwrap();
    let cfg = FeatureConfig {
        tracks: vec![TrackKind::WordRate, TrackKind::ResidualSurprisal],
        ..FeatureConfig::default()
    };
    let mut worst = 0.0f64;
    for r in data.runs.iter().filter(|r| r.split != Split::Estimation) {
        let b = build_blocks(&cfg, &r.words, None, r.series.tr(), r.series.n_times()).unwrap();
        let wr: Vec<f64> = b[0].data().column(0).iter().copied().collect();
        let rs: Vec<f64> = b[1].data().column(0).iter().copied().collect();
        worst = worst.max(pearson(&wr, &rs).unwrap().abs());
    }
    ensure(worst < 1e-10, format!("max |corr| {worst:.1e}"))
}

fn group_configs(root: &Path) -> Vec<PipelineConfig> {
    (1..=4u64)
        .map(|s| {
            let spec = SynthSpec {
                k_true: 7,
                shuffle_components: true,
                seed: s,
                geometry_seed: Some(100),
                stimulus_seed: Some(200),
                ..SynthSpec::default()
            };
            let mut c = PipelineConfig::synthetic(spec);
            c.subject = format!("sub-{s:02}");
            c.out = root.join(&c.subject);
            c.stats.n_perm = 50;
            c
        })
        .collect()
}

fn cross_subject(root: &Path) -> Check {
    let cfgs = group_configs(root);
    let g = match_subject_configs(&cfgs, &root.join("group")).map_err(|e| e.to_string())?;
    let sums: Vec<RunSummary> = cfgs
        .iter()
        .map(|c| read_summary(c.out.join("report")).unwrap())
        .collect();
    let names = icenc::synth::role_names(&cfgs[0].synth.as_ref().unwrap().roles());
    let driven: Vec<&String> = names
        .iter()
        .zip(cfgs[0].synth.as_ref().unwrap().roles())
        .filter(|(_, r)| r.is_driven())
        .map(|(n, _)| n)
        .collect();
    let (mut hit, mut total) = (0, 0);
    for res in &g.results {
        let ref_sum = sums.iter().find(|s| s.subject == res.reference).unwrap();
        for p in &res.pairs {
            let truth = ref_sum.rows[p.ref_component].truth.clone();
            if !truth.as_ref().is_some_and(|t| driven.contains(&t)) {
                continue;
            }
            let other = sums.iter().find(|s| s.subject == p.other_subject).unwrap();
            total += 1;
            if other.rows[p.matched_component].truth == truth {
                hit += 1;
            }
        }
    }
    let bars: Vec<f64> = g.summary.bars.iter().map(|b| b.mean).collect();
    ensure(
        total > 0 && hit == total && bars.len() == 5 && bars.iter().all(|&b| b > 0.8),
        format!(
            "{hit}/{total} driven matches; top-5 bars {}",
            bars.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn artifact_labels(s: &RunSummary) -> Check {
    let spec = SynthSpec::default();
    let roles = spec.roles();
    let names = icenc::synth::role_names(&roles);
    let driven = driven_names();
    let mut ok = true;
    let mut detail = Vec::new();
    for (role, n) in roles.iter().zip(&names) {
        let Some(row) = s.row_for_truth(n) else {
            return Err(format!("no component recovers {n}"));
        };
        if *role == Role::Artifact {
            ok &= row.label == Label::Noise && row.rank > driven.len();
        } else if role.is_driven() {
            ok &= row.label == Label::Signal;
        }
        detail.push(format!("{n}:{}@{}", row.label.as_str(), row.rank));
    }
    ensure(ok, detail.join(" "))
}

fn determinism(root: &Path) -> Check {
    let run = |dir: &str, threads: usize| {
        let mut cfg = PipelineConfig::synthetic(SynthSpec::default());
        cfg.out = root.join(dir);
        cfg.stats.n_perm = 200;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_all(cfg).unwrap());
        root.join(dir).join("report")
    };
    let a = run("a", 1);
    let b = run("b", 4);
    let mut compared = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv" || e == "json" || e == "svg") {
            let name = path.file_name().unwrap();
            if std::fs::read(&path).unwrap() != std::fs::read(b.join(name)).unwrap() {
                return Err(format!("{} differs", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    ensure(compared >= 2, format!("{compared} report files identical across 1 and 4 threads"))
}

fn feature_shape(root: &Path) -> Check {
    let start = Instant::now();
    let mut cfg = PipelineConfig::synthetic(SynthSpec::default());
    cfg.out = root.join("features");
    cfg.stats.n_perm = 50;
    let fa = feature_analysis(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let get = |n: &str, t: TrackKind| fa.get(n, t).unwrap();
    let (aw, ar) = (get("AUD", TrackKind::WordRate), get("AUD", TrackKind::ResidualSurprisal));
    let (lw, lr) = (get("LANG", TrackKind::WordRate), get("LANG", TrackKind::ResidualSurprisal));
    let (vw, vr) = (get("VIS", TrackKind::WordRate), get("VIS", TrackKind::ResidualSurprisal));
    ensure(
        aw > ar && lr > lw && vw.abs() < 0.1 && vr.abs() < 0.1 && secs < 120.0,
        format!(
            "AUD wr {aw:.3} rs {ar:.3}; LANG wr {lw:.3} rs {lr:.3}; VIS wr {vw:.3} rs {vr:.3}; {secs:.1}s"
        ),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let summary = end_to_end_summary(&root.join("e2e"));
    let checks: Vec<(&str, Box<dyn FnOnce() -> Check>)> = vec![
        ("1 ICA recovery", Box::new(ica_recovery)),
        ("2 projection identity", Box::new(projection_identity)),
        ("3 ridge oracle", Box::new(ridge_oracle)),
        ("4 end-to-end predictivity", Box::new(|| end_to_end(&summary))),
        ("5 permutation calibration", Box::new(permutation_calibration)),
        ("6 BH-FDR brute force", Box::new(bh_brute_force)),
        ("7 Lanczos identities", Box::new(lanczos)),
        ("8 residual orthogonality", Box::new(residual_orthogonality)),
        ("9 cross-subject matching", Box::new(|| cross_subject(&root.join("group")))),
        ("10 artifact labels", Box::new(|| artifact_labels(&summary))),
        ("11 determinism", Box::new(|| determinism(&root.join("det")))),
        ("12 feature analysis", Box::new(|| feature_shape(root))),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        match check() {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                println!("FAIL {name}: {d}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
