//! `auxsearch` command line tool.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auxsearch::analysis::{
    cardinality_effect, effect_table, pattern_effect, pattern_histogram, write_effects_csv,
    write_histogram_csv, write_records_csv, AnalysisRecord, EffectRow,
};
use auxsearch::config::RunConfig;
use auxsearch::dsl::{parse_valid, search_space_size, ElementKind, LossCandidate, Pattern};
use auxsearch::envs::{random_policy_return, scripted_baseline_return, EnvSpec};
use auxsearch::evolution::{
    aulc, cross_validate, prune_operators, read_search_log, resume_search, run_search, RlEvaluator,
    SearchLog, SEARCH_LOG_FILE,
};
use auxsearch::rl::{train_run, LearningCurve};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "auxsearch",
    version,
    about = "Evolutionary search over auxiliary RL losses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by commands that read a run configuration.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Post-warmup environment steps per training run.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an evolutionary search and log every evaluation.
    Search {
        #[command(flatten)]
        common: Common,
        /// Continue the search in this directory instead of starting fresh.
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
    },
    /// Continue an interrupted search from its output directory.
    Resume {
        #[arg(long = "resume", value_name = "DIR")]
        dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train one agent, with a candidate auxiliary loss or without.
    Train {
        #[command(flatten)]
        common: Common,
        /// Candidate in text form, e.g. "src:{s0,a0} tgt:{s1} op:mse k:1".
        #[arg(long)]
        candidate: Option<String>,
    },
    /// Mean return of a fixed policy.
    Evaluate {
        #[arg(long, default_value = "pointmass-dense")]
        env: String,
        #[arg(long, value_enum, default_value_t = Policy::Scripted)]
        policy: Policy,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rank the ten loss operators on the forward-dynamics input.
    PruneOps {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        trials: usize,
    },
    /// Train candidates on several environments and pick the best.
    CrossValidate {
        #[command(flatten)]
        common: Common,
        /// File with one candidate per line.
        #[arg(long)]
        candidates: PathBuf,
        /// Comma-separated environment ids.
        #[arg(long, value_delimiter = ',', required = true)]
        envs: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Pattern and cardinality statistics over a search log.
    Analyze {
        /// A search.jsonl file.
        #[arg(long)]
        log: PathBuf,
        /// Environment id recorded in the output.
        #[arg(long, default_value = "pointmass-dense")]
        env: String,
        /// Output directory; defaults to `analysis/` next to the log.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Exact size of the loss search space.
    SpaceSize {
        #[arg(long, default_value_t = 10)]
        kmax: u32,
        #[arg(long, default_value_t = 10)]
        ops: u32,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print every configuration key with its default value.
    PrintDefaults,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Scripted,
    Random,
}

enum Failure {
    Config(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn config_err(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(config_err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(e) = &common.env {
        cfg.env = e.clone();
    }
    if let Some(s) = common.steps {
        cfg.budget = s;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn summarize(log: &SearchLog) {
    for stage in &log.stages {
        if let Some(best) = stage.best() {
            println!(
                "stage {}: best {:.3} {}",
                stage.stage, best.aulc, best.candidate
            );
        }
    }
}

fn search(common: &Common, resume: Option<&Path>) -> Outcome {
    if let Some(dir) = resume {
        return resume_dir(dir, common.workers);
    }
    let cfg = resolve(common)?;
    let env = cfg.env_spec().map_err(config_err)?;
    write_file(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    let evaluator = RlEvaluator {
        env,
        budget: cfg.budget,
        sac: cfg.sac(),
    };
    let log = run_search(&cfg.evolution(), &evaluator, Some(&cfg.out)).map_err(runtime_err)?;
    summarize(&log);
    println!("log: {}", cfg.out.join(SEARCH_LOG_FILE).display());
    Ok(())
}

fn resume_dir(dir: &Path, workers: Option<usize>) -> Outcome {
    let mut cfg = RunConfig::load(&dir.join("config.toml")).map_err(config_err)?;
    cfg.out = dir.to_path_buf();
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(config_err)?;
    let env = cfg.env_spec().map_err(config_err)?;
    let evaluator = RlEvaluator {
        env,
        budget: cfg.budget,
        sac: cfg.sac(),
    };
    let log = resume_search(&cfg.evolution(), &evaluator, dir).map_err(runtime_err)?;
    summarize(&log);
    Ok(())
}

fn curve_json(candidate: Option<&LossCandidate>, env: &str, curve: &LearningCurve) -> String {
    let finite = |x: f64| {
        if x.is_finite() {
            serde_json::json!(x)
        } else {
            serde_json::Value::Null
        }
    };
    let score = aulc(curve).unwrap_or(f64::NEG_INFINITY);
    serde_json::json!({
        "candidate": candidate.map(ToString::to_string),
        "env": env,
        "aulc": finite(score),
        "checkpoints": curve.checkpoints.iter().map(|&(s, v)| (s, finite(v))).collect::<Vec<_>>(),
        "seed": curve.seed,
        "env_steps": curve.env_steps,
        "diverged": curve.diverged,
    })
    .to_string()
}

fn train(common: &Common, candidate: Option<&str>) -> Outcome {
    let cfg = resolve(common)?;
    let env = cfg.env_spec().map_err(config_err)?;
    let candidate = candidate.map(parse_valid).transpose().map_err(config_err)?;
    let curve = train_run(candidate.as_ref(), &env, cfg.budget, cfg.seed, &cfg.sac())
        .map_err(runtime_err)?;
    let line = curve_json(candidate.as_ref(), &cfg.env, &curve);
    println!("{line}");
    if common.out.is_some() {
        write_file(&cfg.out.join("curve.json"), &format!("{line}\n"))?;
    }
    Ok(())
}

fn evaluate(env: &str, policy: Policy, episodes: usize, seed: u64) -> Outcome {
    let spec: EnvSpec = env.parse().map_err(config_err)?;
    if episodes == 0 {
        return Err(config_err("episodes must be at least 1"));
    }
    let r = match policy {
        Policy::Scripted => scripted_baseline_return(&spec, episodes, seed),
        Policy::Random => random_policy_return(&spec, episodes, seed),
    };
    println!("{r:.6}");
    Ok(())
}

fn prune(common: &Common, trials: usize) -> Outcome {
    if trials == 0 {
        return Err(config_err("trials must be at least 1"));
    }
    let cfg = resolve(common)?;
    let env = cfg.env_spec().map_err(config_err)?;
    let evaluator = RlEvaluator {
        env,
        budget: cfg.budget,
        sac: cfg.sac(),
    };
    let report = prune_operators(&evaluator, trials, cfg.seed);
    let mut text = report.table();
    text.push('\n');
    for (rank, s) in report.ranking.iter().enumerate() {
        text.push_str(&format!(
            "{:>2}. {:<14} {:.3} ± {:.3}\n",
            rank + 1,
            s.operator,
            s.mean,
            s.std
        ));
    }
    print!("{text}");
    if common.out.is_some() {
        write_file(&cfg.out.join("prune.txt"), &text)?;
    }
    Ok(())
}

fn crossval(common: &Common, path: &Path, envs: &[String], seeds: &[u64]) -> Outcome {
    let cfg = resolve(common)?;
    let text =
        fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let candidates: Vec<LossCandidate> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_valid)
        .collect::<Result<_, _>>()
        .map_err(config_err)?;
    if candidates.is_empty() {
        return Err(config_err("no candidates given"));
    }
    let specs: Vec<EnvSpec> = envs
        .iter()
        .map(|e| e.parse())
        .collect::<Result<_, _>>()
        .map_err(config_err)?;
    let sac = cfg.sac();
    let cv = cross_validate(&candidates, envs, seeds, |c, env, seed| {
        let spec = specs[envs.iter().position(|e| e == env).expect("known env")];
        let curve = train_run(Some(c), &spec, cfg.budget, seed, &sac)?;
        Ok::<_, auxsearch::rl::RlError>(aulc(&curve).unwrap_or(f64::NEG_INFINITY))
    })
    .map_err(runtime_err)?;
    let mut out = String::new();
    for (i, c) in candidates.iter().enumerate() {
        let cells: Vec<String> = cv.scores[i].iter().map(|s| format!("{s:.3}")).collect();
        out.push_str(&format!(
            "{i}\t{}\t{:.4}\t{c}\n",
            cells.join("\t"),
            cv.mean_normalized[i]
        ));
    }
    out.push_str(&format!(
        "winner: {} {}\n",
        cv.winner, candidates[cv.winner]
    ));
    print!("{out}");
    if common.out.is_some() {
        write_file(&cfg.out.join("cross_validation.tsv"), &out)?;
    }
    Ok(())
}

fn analyze(log: &Path, env: &str, out: Option<&Path>, bins: usize) -> Outcome {
    if bins == 0 {
        return Err(config_err("bins must be at least 1"));
    }
    let records = read_search_log(log).map_err(runtime_err)?;
    let records: Vec<AnalysisRecord> = records
        .iter()
        .map(|r| AnalysisRecord::from_search(r, env))
        .collect();
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => log.parent().unwrap_or(Path::new(".")).join("analysis"),
    };
    let mut patterns = Vec::new();
    let mut skipped = Vec::new();
    for p in Pattern::builtin() {
        match pattern_effect(&records, &p) {
            Ok(effect) => patterns.push(EffectRow {
                env: env.to_string(),
                effect,
            }),
            Err(e) => skipped.push(format!("{}: {e}", p.name)),
        }
        let h = pattern_histogram(&records, &p, bins);
        let name = p.name.replace(' ', "_");
        write_histogram_csv(&h, &dir.join(format!("histogram_{name}.csv"))).map_err(runtime_err)?;
    }
    let mut cardinality = Vec::new();
    for kind in ElementKind::ALL {
        match cardinality_effect(&records, kind) {
            Ok(effect) => cardinality.push(EffectRow {
                env: env.to_string(),
                effect,
            }),
            Err(e) => skipped.push(format!("{} cardinality: {e}", kind.name())),
        }
    }
    write_records_csv(&records, &dir.join("records.csv")).map_err(runtime_err)?;
    write_effects_csv(&patterns, &dir.join("patterns.csv")).map_err(runtime_err)?;
    write_effects_csv(&cardinality, &dir.join("cardinality.csv")).map_err(runtime_err)?;

    let failed = records.iter().filter(|r| !r.aulc.is_finite()).count();
    let mut report = format!(
        "{} records, {failed} failed runs excluded\n\n",
        records.len()
    );
    report.push_str(&effect_table(&patterns));
    report.push('\n');
    report.push_str(&effect_table(&cardinality));
    for s in &skipped {
        report.push_str(&format!("skipped {s}\n"));
    }
    write_file(&dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Search { common, resume } => search(&common, resume.as_deref()),
        Command::Resume { dir, workers } => resume_dir(&dir, workers),
        Command::Train { common, candidate } => train(&common, candidate.as_deref()),
        Command::Evaluate {
            env,
            policy,
            episodes,
            seed,
        } => evaluate(&env, policy, episodes, seed),
        Command::PruneOps { common, trials } => prune(&common, trials),
        Command::CrossValidate {
            common,
            candidates,
            envs,
            seeds,
        } => crossval(&common, &candidates, &envs, &seeds),
        Command::Analyze {
            log,
            env,
            out,
            bins,
        } => analyze(&log, &env, out.as_deref(), bins),
        Command::SpaceSize { kmax, ops } => {
            println!("{}", search_space_size(kmax, ops));
            Ok(())
        }
        Command::Config {
            action: ConfigAction::PrintDefaults,
        } => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
