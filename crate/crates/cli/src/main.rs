use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icenc::matching::MatchDirection;
use icenc::pipeline::{
    feature_analysis, match_subject_configs, read_summary, Pipeline, PipelineConfig, RunSummary,
    Stage,
};
use icenc::synth::{generate, write_synth, SynthSpec};
use icenc::{Error, ErrorKind};

/// Independent-component encoding models for story-listening fMRI.
#[derive(Parser, Debug)]
#[command(name = "icenc", version)]
struct Cli {
    /// Pipeline config (JSON). Without it the default synthetic subject is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log stage progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic subjects plus a config for each.
    Synth {
        /// Generator settings (JSON); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Planted component count.
        #[arg(long)]
        k: Option<usize>,
        /// Subjects sharing maps and stories, with their own noise.
        #[arg(long, default_value_t = 1)]
        subjects: usize,
        /// Shuffle component order per subject.
        #[arg(long)]
        shuffle: bool,
    },
    Preprocess,
    IcaFit,
    Project,
    Features,
    Encode,
    Permtest,
    Fdr,
    Aroma,
    MatchAtlas,
    /// Run every stage and print the ranked components.
    RunAll,
    /// Same as run-all; prints the stored report.
    Report,
    /// Match components across subjects given one config per subject.
    MatchSubjects {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// temporal-first or spatial-first
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Single-feature models on named atlas networks.
    FeatureAnalysis,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<PipelineConfig, Error> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::synthetic(SynthSpec::default()),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        if let Some(spec) = &mut cfg.synth {
            spec.seed = s;
        }
    }
    if let Some(o) = out {
        cfg.out = o.to_path_buf();
    }
    Ok(cfg)
}

/// Networks matched with low confidence are marked with `?`.
fn print_summary(s: &RunSummary) {
    println!("# {} config_digest={}", s.subject, s.config_digest);
    println!("{:<6} {:>4} {:>8} {:>8} {:>6} {:<7} {:<8}", "comp", "rank", "test_r", "p", "fdr", "label", "network");
    for r in s.ranked() {
        println!(
            "{:<6} {:>4} {:>8.3} {:>8.4} {:>6} {:<7} {:<8}",
            r.component,
            r.rank,
            r.test_r,
            r.p,
            if r.reject { "yes" } else { "no" },
            r.label.as_str(),
            match (&r.network, r.low_confidence) {
                (Some(n), Some(true)) => format!("{n}?"),
                (Some(n), _) => n.clone(),
                (None, _) => "-".into(),
            },
        );
    }
}

fn synth(
    spec_path: Option<&Path>,
    k: Option<usize>,
    subjects: usize,
    shuffle: bool,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Error> {
    if subjects == 0 {
        return Err(Error::InvalidArgument("--subjects must be at least 1".into()));
    }
    let mut base: SynthSpec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config { field: "--spec".into(), reason: e.to_string() })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config { field: "--spec".into(), reason: e.to_string() })?
        }
        None => SynthSpec::default(),
    };
    if let Some(k) = k {
        base.k_true = k;
        base.roles = None;
    }
    if let Some(s) = seed {
        base.seed = s;
    }
    base.shuffle_components |= shuffle;
    if subjects > 1 {
        base.geometry_seed.get_or_insert(base.seed);
        base.stimulus_seed.get_or_insert(base.seed);
    }
    for i in 0..subjects {
        let (subject, dir) = if subjects == 1 {
            ("sub-01".to_string(), out.to_path_buf())
        } else {
            let s = format!("sub-{:02}", i + 1);
            let d = out.join(&s);
            (s, d)
        };
        let spec = SynthSpec {
            seed: base.seed + i as u64,
            ..base.clone()
        };
        let data = generate(&spec)?;
        let truth = write_synth(&data, dir.join("data"))?;
        let rel = |p: &Path| p.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
        let mut cfg = PipelineConfig::synthetic(spec);
        cfg.synth = None;
        cfg.subject = subject;
        cfg.out = PathBuf::from("results");
        cfg.paths.runs = truth
            .runs
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.bold = rel(&r.bold);
                r.words = rel(&r.words);
                r.embeddings = rel(&r.embeddings);
                r.confounds = rel(&r.confounds);
                r
            })
            .collect();
        cfg.paths.atlas = Some(rel(&truth.atlas));
        cfg.paths.csf_mask = Some(rel(&truth.csf_mask));
        cfg.save(dir.join("config.json"))?;
        println!("{}", dir.join("config.json").display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        rayon_pool(j).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let stage = match &cli.command {
        Command::Synth { spec, k, subjects, shuffle } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
            return synth(spec.as_deref(), *k, *subjects, *shuffle, cli.seed, &out);
        }
        Command::MatchSubjects { configs, direction, top_n } => {
            let mut cfgs = configs
                .iter()
                .map(|c| load_config(Some(c), cli.seed, None))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(d) = direction {
                let d: MatchDirection = serde_json::from_value(serde_json::Value::String(d.clone()))
                    .map_err(|_| Error::Config {
                        field: "--direction".into(),
                        reason: format!("`{d}` is neither temporal-first nor spatial-first"),
                    })?;
                cfgs[0].matching.direction = d;
            }
            if let Some(n) = top_n {
                cfgs[0].matching.top_n = *n;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("group"));
            let g = match_subject_configs(&cfgs, &out)?;
            println!("rank mean sd");
            for b in &g.summary.bars {
                println!("{} {:.3} {:.3}", b.rank, b.mean, b.sd);
            }
            return Ok(());
        }
        Command::FeatureAnalysis => {
            let cfg = load_config(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
            let fa = feature_analysis(&cfg)?;
            for s in &fa.scores {
                println!("{} {} {:?} {:.3}", s.network, s.component, s.track, s.r);
            }
            return Ok(());
        }
        Command::Preprocess => Stage::Preprocess,
        Command::IcaFit => Stage::IcaFit,
        Command::Project => Stage::Project,
        Command::Features => Stage::Features,
        Command::Encode => Stage::Encode,
        Command::Permtest => Stage::Permtest,
        Command::Fdr => Stage::Fdr,
        Command::Aroma => Stage::Aroma,
        Command::MatchAtlas => Stage::MatchAtlas,
        Command::RunAll | Command::Report => Stage::Report,
    };
    let cfg = load_config(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    let mut p = Pipeline::new(cfg)?;
    p.run_until(stage)?;
    if stage == Stage::Report {
        print_summary(&read_summary(p.stage_dir(Stage::Report))?);
    } else {
        println!("{}", p.stage_dir(stage).display());
    }
    Ok(())
}

fn rayon_pool(threads: usize) -> Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
