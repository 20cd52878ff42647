use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use incnas::agents::{load_checkpoint, sidecar_path};
use incnas::eval::{
    best_after_queries, chunk_runs, group_runs, improvement_stats, read_records, run_evaluation, run_search, Agent,
    AgentKind, EpisodeRecord, EvalConfig, Run, BOOTSTRAP_RESAMPLES, EVAL_EPISODE_LENGTH,
};
use incnas::neighborhood::neighbors;
use incnas::oracle::{Oracle, SyntheticOracle, TabularOracle};
use incnas::par::Exec;
use incnas::space::{enumerate_with, sample_uniform, EnumerateOptions, DEFAULT_ENUMERATION_BOUND};
use incnas::training::{run_training, DirectoryObserver, TrainConfig};
use incnas::{Architecture, SpaceSpec};

#[derive(Parser)]
#[command(name = "incnas", version, about = "Incremental architecture search")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct SpaceArgs {
    /// Preset (nb101, nb301, micro, micro5) or TOML file.
    #[arg(long, default_value = "nb101")]
    space: String,
}

#[derive(Args, Clone)]
struct OracleArgs {
    /// Accuracy table (`digest,val_acc,test_acc`); the synthetic oracle is
    /// used when absent.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Every architecture of a space as JSON lines.
    Enumerate {
        #[command(flatten)]
        space: SpaceArgs,
        /// Refuse spaces whose candidate estimate exceeds this.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BOUND)]
        bound: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniform samples, one architecture per line.
    Sample {
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Neighbor set of an architecture.
    Neighbors {
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 50)]
        cap: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Oracle queries.
    Oracle {
        #[command(subcommand)]
        cmd: OracleCmd,
    },
    /// Query-budgeted search from uniform initial states.
    Search {
        #[arg(long, value_parser = parse_algo)]
        algo: AgentKind,
        #[arg(long)]
        budget: u64,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        space: SpaceArgs,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long, default_value_t = 50)]
        cap: usize,
        #[arg(long, default_value_t = EVAL_EPISODE_LENGTH)]
        episode_length: usize,
        /// Required for `qagent`; its space overrides `--space`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run id written into the records.
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long)]
        record_time: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains the Q-network agent.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the training log and checkpoints.
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One episode per initial state.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One architecture per line, as printed by `sample`.
        #[arg(long)]
        initial_set: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = parse_algo, default_value = "qagent")]
        algo: AgentKind,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long, default_value_t = EVAL_EPISODE_LENGTH)]
        episode_length: usize,
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long)]
        record_time: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Improvement histograms and best-after-queries curves from records.
    Report {
        /// Directory of `*.jsonl` record files.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated budgets; defaults to a 1-2-5 ladder.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<u64>,
        /// Split each file into runs of this many episodes instead of using
        /// the run ids.
        #[arg(long)]
        per_run: Option<usize>,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Accuracy of one architecture.
    Eval {
        arch: String,
        #[command(flatten)]
        space: SpaceArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
}

fn parse_algo(s: &str) -> Result<AgentKind, String> {
    AgentKind::parse(s).ok_or_else(|| format!("unknown algorithm {s:?}; use random, walk, local or qagent"))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_oracle(args: &OracleArgs, spec: &SpaceSpec) -> Result<Arc<dyn Oracle>> {
    Ok(match &args.table {
        Some(p) => Arc::new(TabularOracle::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => Arc::new(SyntheticOracle::new(spec.clone())),
    })
}

fn load_space(name: &str) -> Result<SpaceSpec> {
    SpaceSpec::load(name).with_context(|| format!("loading space {name:?}"))
}

fn read_initial_set(path: &Path, spec: &SpaceSpec) -> Result<Vec<Architecture>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            spec.parse_architecture(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn qagent(path: &Path) -> Result<(Agent, SpaceSpec, usize)> {
    let (net, params, meta) = load_checkpoint(path)
        .with_context(|| format!("loading {} and {}", path.display(), sidecar_path(path).display()))?;
    let spec = load_space(&meta.space)?;
    let cap = net.config().slots - 1;
    let agent = Agent::QAgent {
        net: Arc::new(net),
        params: Arc::new(params),
    };
    Ok((agent, spec, cap))
}

fn baseline(kind: AgentKind) -> Agent {
    match kind {
        AgentKind::Random => Agent::RandomSearch,
        AgentKind::Walk => Agent::RandomWalk,
        AgentKind::Local => Agent::LocalSearch,
        AgentKind::Qagent => unreachable!("needs a checkpoint"),
    }
}

fn write_records(out: &mut dyn Write, records: &[EpisodeRecord]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    out.flush()?;
    Ok(())
}

fn default_budgets(max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut scale = 1u64;
    'outer: loop {
        for m in [1, 2, 5] {
            let b = m * scale;
            if b > max {
                break 'outer;
            }
            out.push(b);
        }
        scale *= 10;
    }
    if out.last() != Some(&max) && max > 0 {
        out.push(max);
    }
    out
}

fn report(records_dir: &Path, out_dir: &Path, seed: u64, budgets: &[u64], per_run: Option<usize>) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(records_dir)
        .with_context(|| format!("reading {}", records_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .jsonl files in {}", records_dir.display());
    }
    let mut improvements: BTreeMap<AgentKind, Vec<f64>> = BTreeMap::new();
    let mut runs: BTreeMap<AgentKind, Vec<Run>> = BTreeMap::new();
    let mut errors = 0usize;
    for f in &files {
        let recs = read_records(BufReader::new(File::open(f)?)).with_context(|| format!("reading {}", f.display()))?;
        let mut by_kind: BTreeMap<AgentKind, Vec<EpisodeRecord>> = BTreeMap::new();
        for r in recs {
            if r.error.is_some() {
                errors += 1;
                continue;
            }
            by_kind.entry(r.algorithm).or_default().push(r);
        }
        for (kind, recs) in by_kind {
            improvements
                .entry(kind)
                .or_default()
                .extend(recs.iter().map(EpisodeRecord::improvement));
            let file_runs = match per_run {
                Some(n) => chunk_runs(&recs, n),
                None => group_runs(&recs).into_values().collect(),
            };
            runs.entry(kind).or_default().extend(file_runs);
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = serde_json::Map::new();
    for (kind, imp) in &improvements {
        let name = kind.name();
        let stats = improvement_stats(imp).ok();
        if let Some(s) = &stats {
            std::fs::write(out_dir.join(format!("improvement_{name}.csv")), s.histogram.to_csv())?;
        }
        let kind_runs = &runs[kind];
        let max_budget = kind_runs
            .iter()
            .map(|r| r.iter().map(|(q, _)| q).sum::<u64>())
            .max()
            .unwrap_or(0);
        let ladder = if budgets.is_empty() {
            default_budgets(max_budget)
        } else {
            budgets.to_vec()
        };
        let curve = best_after_queries(kind_runs, &ladder, BOOTSTRAP_RESAMPLES, &mut rng);
        std::fs::write(out_dir.join(format!("curve_{name}.csv")), curve.to_csv())?;
        summary.insert(
            name.to_string(),
            serde_json::json!({
                "episodes": imp.len(),
                "runs": kind_runs.len(),
                "improvement": stats,
                "curve": curve,
            }),
        );
    }
    summary.insert("failed_episodes".into(), errors.into());
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(summary))?;
    std::fs::write(out_dir.join("summary.json"), text + "\n")?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.cmd {
        Cmd::Enumerate { space, bound, out } => {
            let spec = load_space(&space.space)?;
            let all = enumerate_with(&spec, EnumerateOptions { bound, exec })?;
            let mut w = output(&out)?;
            for a in &all {
                let line = serde_json::json!({"digest": a.digest().to_hex(), "arch": spec.format_architecture(a)});
                writeln!(w, "{line}")?;
            }
            w.flush()?;
            eprintln!("{} architectures", all.len());
        }
        Cmd::Sample { space, count, seed, out } => {
            let spec = load_space(&space.space)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = output(&out)?;
            for _ in 0..count {
                writeln!(w, "{}", spec.format_architecture(&sample_uniform(&spec, &mut rng)?))?;
            }
            w.flush()?;
        }
        Cmd::Neighbors { space, arch, cap, seed } => {
            let spec = load_space(&space.space)?;
            let a = spec.parse_architecture(&arch)?;
            let set = neighbors(&a, &spec, cap, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut w = output(&None)?;
            for (slot, c) in set.candidates.iter().enumerate() {
                let line = serde_json::json!({
                    "slot": slot + 1,
                    "digest": c.digest().to_hex(),
                    "arch": spec.format_architecture(c),
                });
                writeln!(w, "{line}")?;
            }
            w.flush()?;
            eprintln!("{} of {} neighbors", set.candidates.len(), set.pool_size);
        }
        Cmd::Oracle {
            cmd: OracleCmd::Eval { arch, space, oracle },
        } => {
            let spec = load_space(&space.space)?;
            let a = spec.parse_architecture(&arch)?;
            let acc = load_oracle(&oracle, &spec)?.validation_accuracy(&a)?;
            println!("{}", serde_json::json!({"digest": a.digest().to_hex(), "val_acc": acc}));
        }
        Cmd::Search {
            algo,
            budget,
            seed,
            space,
            oracle,
            cap,
            episode_length,
            checkpoint,
            run,
            record_time,
            out,
        } => {
            let (agent, spec, cap) = match algo {
                AgentKind::Qagent => {
                    let path = checkpoint.ok_or_else(|| anyhow!("--checkpoint is required for qagent"))?;
                    qagent(&path)?
                }
                k => (baseline(k), load_space(&space.space)?, cap),
            };
            let oracle = load_oracle(&oracle, &spec)?;
            let mut cfg = EvalConfig::new(spec, cap, seed);
            cfg.env.max_steps = episode_length;
            cfg.run = run;
            cfg.exec = exec;
            cfg.record_time = record_time;
            let records = run_search(&agent, oracle, budget, &cfg)?;
            write_records(&mut *output(&out)?, &records)?;
        }
        Cmd::Train {
            config,
            out,
            oracle,
            seed,
        } => {
            let mut cfg = TrainConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if cli.sequential {
                cfg.parallel = false;
            }
            let spec = load_space(&cfg.space)?;
            let oracle = load_oracle(&oracle, &spec)?;
            let mut obs = DirectoryObserver::new(&out)?;
            let outcome = run_training(&cfg, &spec, oracle, &mut obs)?;
            eprintln!(
                "{} environment steps, {} learner steps",
                outcome.env_steps, outcome.learner_steps
            );
            if let Some(last) = obs.written.last() {
                println!("{}", last.display());
            }
        }
        Cmd::Evaluate {
            checkpoint,
            initial_set,
            seed,
            algo,
            oracle,
            episode_length,
            run,
            record_time,
            out,
        } => {
            // The checkpoint fixes the space and neighbor cap for every algorithm.
            let (q, spec, cap) = qagent(&checkpoint)?;
            let agent = if algo == AgentKind::Qagent { q } else { baseline(algo) };
            let init = read_initial_set(&initial_set, &spec)?;
            let oracle = load_oracle(&oracle, &spec)?;
            let mut cfg = EvalConfig::new(spec, cap, seed);
            cfg.env.max_steps = episode_length;
            cfg.run = run;
            cfg.exec = exec;
            cfg.record_time = record_time;
            let records = run_evaluation(&agent, &init, oracle, &cfg)?;
            write_records(&mut *output(&out)?, &records)?;
        }
        Cmd::Report {
            records,
            out,
            seed,
            budgets,
            per_run,
        } => report(&records, &out, seed, &budgets, per_run)?,
    }
    Ok(())
}
