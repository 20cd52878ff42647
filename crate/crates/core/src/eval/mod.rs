//! Evaluation protocol: one episode per initial state, query accounting,
//! and record files.

pub mod stats;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{act_local_search, act_random_walk, Params, QNetwork};
use crate::arch::Architecture;
use crate::env::{Env, EnvConfig, EnvError};
use crate::oracle::Oracle;
use crate::par::{self, Exec};
use crate::space::{sample_uniform, SpaceError, SpaceSpec};

pub use stats::{
    best_after_queries, bootstrap_ci, improvement_stats, median, percentile_sorted, skewness, Histogram,
    ImprovementStats, QueryCurve, Run, StatsError, BOOTSTRAP_RESAMPLES,
};

/// Default evaluation episode length.
pub const EVAL_EPISODE_LENGTH: usize = 32;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("agent does not fit the environment: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("record line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Random,
    Walk,
    Local,
    Qagent,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Random => "random",
            AgentKind::Walk => "walk",
            AgentKind::Local => "local",
            AgentKind::Qagent => "qagent",
        }
    }

    pub fn parse(s: &str) -> Option<AgentKind> {
        [AgentKind::Random, AgentKind::Walk, AgentKind::Local, AgentKind::Qagent]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone)]
pub enum Agent {
    /// Each episode is the initial architecture itself: one uniform draw.
    RandomSearch,
    RandomWalk,
    LocalSearch,
    /// Greedy on the network's Q-values.
    QAgent { net: Arc<QNetwork>, params: Arc<Params> },
}

impl Agent {
    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::RandomSearch => AgentKind::Random,
            Agent::RandomWalk => AgentKind::Walk,
            Agent::LocalSearch => AgentKind::Local,
            Agent::QAgent { .. } => AgentKind::Qagent,
        }
    }
}

/// One step of an episode ledger: the action taken, the number of
/// candidates shown with it, and the state reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerStep {
    pub action: usize,
    pub candidates: usize,
    pub digest: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub algorithm: AgentKind,
    pub run: u64,
    pub episode: usize,
    pub initial_digest: String,
    pub initial_accuracy: f64,
    pub final_digest: String,
    pub final_accuracy: f64,
    pub steps: Vec<LedgerStep>,
    pub queries_charged: u64,
    /// Seconds; only filled when timing is requested so record files stay
    /// reproducible by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeRecord {
    pub fn improvement(&self) -> f64 {
        self.final_accuracy - self.initial_accuracy
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

/// Local search pays for every candidate it was shown; every other
/// algorithm pays one query per episode.
pub fn charge_queries(kind: AgentKind, steps: &[LedgerStep]) -> u64 {
    match kind {
        AgentKind::Local => steps.iter().map(|s| s.candidates as u64).sum(),
        _ => 1,
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// `max_steps` is the evaluation episode length.
    pub env: EnvConfig,
    pub seed: u64,
    pub run: u64,
    pub exec: Exec,
    pub record_time: bool,
}

impl EvalConfig {
    pub fn new(spec: SpaceSpec, neighbor_cap: usize, seed: u64) -> EvalConfig {
        let mut env = EnvConfig::new(spec);
        env.neighbor_cap = neighbor_cap;
        env.max_steps = EVAL_EPISODE_LENGTH;
        EvalConfig {
            env,
            seed,
            run: 0,
            exec: Exec::Parallel,
            record_time: false,
        }
    }
}

fn episode_seed(seed: u64, run: u64, episode: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(run.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode as u64);
    r.gen()
}

fn check_agent(agent: &Agent, cfg: &EvalConfig) -> Result<(), EvalError> {
    cfg.env.check()?;
    if let Agent::QAgent { net, params } = agent {
        let c = net.config();
        if c.slots != cfg.env.slots() || c.token_width != cfg.env.token_width() {
            return Err(EvalError::Mismatch(format!(
                "network expects {} slots of width {}, environment gives {} of width {}",
                c.slots,
                c.token_width,
                cfg.env.slots(),
                cfg.env.token_width()
            )));
        }
        if params.data.len() != net.num_params() {
            return Err(EvalError::Mismatch("parameter count differs from the network".into()));
        }
    }
    Ok(())
}

/// One episode per initial state. Episodes are independent and seeded by
/// `(seed, run, index)`, so results do not depend on scheduling. Oracle
/// failures end the affected episode and are stored in its record.
pub fn run_evaluation(
    agent: &Agent,
    initial_set: &[Architecture],
    oracle: Arc<dyn Oracle>,
    cfg: &EvalConfig,
) -> Result<Vec<EpisodeRecord>, EvalError> {
    check_agent(agent, cfg)?;
    let records = par::map_range(cfg.exec, initial_set.len(), |i| {
        run_episode(agent, &initial_set[i], oracle.clone(), cfg, i)
    });
    records.into_iter().collect()
}

fn digest_hex(a: &Architecture) -> String {
    a.digest().to_hex()
}

fn run_episode(
    agent: &Agent,
    initial: &Architecture,
    oracle: Arc<dyn Oracle>,
    cfg: &EvalConfig,
    episode: usize,
) -> Result<EpisodeRecord, EvalError> {
    let start = Instant::now();
    let seed = episode_seed(cfg.seed, cfg.run, episode);
    let mut env_cfg = cfg.env.clone();
    env_cfg.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5_A5A5_A5A5);
    let kind = agent.kind();
    let mut record = EpisodeRecord {
        algorithm: kind,
        run: cfg.run,
        episode,
        initial_digest: digest_hex(initial),
        initial_accuracy: f64::NAN,
        final_digest: digest_hex(initial),
        final_accuracy: f64::NAN,
        steps: Vec::new(),
        queries_charged: 0,
        wall_time_s: None,
        error: None,
    };

    let result: Result<(), EnvError> = (|| {
        let mut env = Env::new(env_cfg, oracle.clone())?;
        let mut obs = env.reset_to(initial.clone())?;
        let acc0 = env.current_accuracy().expect("reset");
        record.initial_accuracy = acc0;
        record.final_accuracy = acc0;
        if kind == AgentKind::Random {
            return Ok(());
        }
        loop {
            let shown = obs.num_valid() - 1;
            let action = match agent {
                Agent::RandomSearch => unreachable!("handled above"),
                Agent::RandomWalk => act_random_walk(&obs, &mut rng),
                Agent::LocalSearch => {
                    let nbrs = env.neighbor_set().expect("reset");
                    let accs = nbrs
                        .candidates
                        .iter()
                        .map(|c| oracle.validation_accuracy(c))
                        .collect::<Result<Vec<_>, _>>()?;
                    act_local_search(env.current_accuracy().expect("reset"), &accs)
                }
                Agent::QAgent { net, params } => net
                    .forward(params, &obs)
                    .map_err(|e| EnvError::Encode(e.to_string()))?
                    .argmax(),
            };
            let out = env.step(action)?;
            let done = out.done();
            let current = env.current().expect("reset");
            record.steps.push(LedgerStep {
                action,
                candidates: shown,
                digest: digest_hex(current),
                accuracy: out.accuracy,
            });
            record.final_digest = digest_hex(current);
            record.final_accuracy = out.accuracy;
            obs = out.observation;
            if done {
                return Ok(());
            }
        }
    })();
    match result {
        Ok(()) => {}
        Err(EnvError::Oracle(e)) => record.error = Some(e.to_string()),
        Err(e) => return Err(e.into()),
    }
    record.queries_charged = charge_queries(kind, &record.steps);
    if cfg.record_time {
        record.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    Ok(record)
}

/// Uniformly drawn initial states.
pub fn sample_initial_set(spec: &SpaceSpec, count: usize, seed: u64) -> Result<Vec<Architecture>, SpaceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_uniform(spec, &mut rng)).collect()
}

/// Episodes from fresh uniform initial states until `budget` queries are
/// charged. Runs episodes in batches sized by the remaining budget.
pub fn run_search(
    agent: &Agent,
    oracle: Arc<dyn Oracle>,
    budget: u64,
    cfg: &EvalConfig,
) -> Result<Vec<EpisodeRecord>, EvalError> {
    check_agent(agent, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut spent = 0u64;
    while spent < budget {
        let batch = if agent.kind() == AgentKind::Local { 1 } else { (budget - spent) as usize };
        let initial = (0..batch)
            .map(|_| sample_uniform(&cfg.env.spec, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let offset = records.len();
        let mut batch_records = par::map_range(cfg.exec, batch, |i| {
            run_episode(agent, &initial[i], oracle.clone(), cfg, offset + i)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        spent += batch_records.iter().map(|r| r.queries_charged).sum::<u64>();
        records.append(&mut batch_records);
    }
    Ok(records)
}

/// Reads line-delimited records; blank lines are skipped.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<EpisodeRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Record {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Groups records into runs keyed by `(algorithm, run)`, episodes in order.
pub fn group_runs(records: &[EpisodeRecord]) -> BTreeMap<(AgentKind, u64), Run> {
    let mut by: BTreeMap<(AgentKind, u64), Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        by.entry((r.algorithm, r.run)).or_default().push(r);
    }
    by.into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|r| r.episode);
            let run = v
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| (r.queries_charged, r.final_accuracy))
                .collect();
            (k, run)
        })
        .collect()
}

/// Splits one record sequence into runs of `per_run` consecutive episodes.
pub fn chunk_runs(records: &[EpisodeRecord], per_run: usize) -> Vec<Run> {
    records
        .chunks(per_run)
        .filter(|c| c.len() == per_run)
        .map(|c| c.iter().map(|r| (r.queries_charged, r.final_accuracy)).collect())
        .collect()
}
