//! Q-learning in the distributed prioritized replay pattern, at desk scale.
//!
//! Collectors (one group of environments per worker, each worker with its
//! own epsilon) act with a frozen parameter snapshot while the learner
//! trains on the replay buffer; the two run side by side in phases. After
//! each phase the collected n-step entries enter the buffer and a new
//! snapshot is published. Results do not depend on the thread count.

pub mod learner;
pub mod nstep;
pub mod replay;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{act_epsilon_greedy, save_checkpoint, CheckpointError, CheckpointMeta, Params, QNetConfig, QNetwork, ShapeError};
use crate::env::{token_width, Env, EnvConfig, EnvError, Observation};
use crate::oracle::{Oracle, ShapingConfig};
use crate::par::{self, Exec};
use crate::space::{Regime, SpaceSpec};

pub use learner::{double_q_target, huber, Adam, Learner, StepStats};
pub use nstep::{assemble_nstep, target_value, ReplayEntry, Trajectory, TrajectoryError};
pub use replay::{EntryId, ReplayBuffer, ReplayError, SampledBatch, PRIORITY_FLOOR};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at learner step {step}")]
    NonFinite { step: u64, loss: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Preset name or TOML path.
    pub space: String,
    pub seed: u64,
    /// Environment steps over all collectors.
    pub total_steps: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub replay_shards: usize,
    pub priority_alpha: f64,
    pub importance_beta: f64,
    pub epsilon: f64,
    pub epsilon_alpha: f64,
    pub workers: usize,
    pub envs_per_worker: usize,
    pub episode_length: usize,
    pub neighbor_cap: usize,
    pub n_step: usize,
    /// Keep the bootstrap term on time-limit endings.
    pub bootstrap_truncated: bool,
    pub batch_size: usize,
    /// Learner steps between target-network copies.
    pub target_sync: u64,
    /// Buffer size before the learner starts.
    pub learning_starts: usize,
    /// Environment steps collected per learner step.
    pub env_steps_per_update: usize,
    /// Steps each environment takes per phase.
    pub rollout_steps: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub shaping: ShapingConfig,
    /// Latent width; 256 for free-form spaces and 512 for templates if unset.
    pub latent: Option<usize>,
    pub heads: usize,
    pub blocks: usize,
    /// Feed-forward width; `4 * latent` if unset.
    pub ffn: Option<usize>,
    pub encoder_layers: usize,
    pub positional_encoding: bool,
    /// Environment steps between log records.
    pub log_interval: u64,
    /// Environment steps between checkpoints; the final state is always saved.
    pub checkpoint_interval: u64,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            space: "nb101".into(),
            seed: 0,
            total_steps: 200_000,
            gamma: 0.9,
            learning_rate: 4e-5,
            replay_capacity: 25_000,
            replay_shards: 4,
            priority_alpha: 0.6,
            importance_beta: 0.4,
            epsilon: 0.4,
            epsilon_alpha: 7.0,
            workers: 8,
            envs_per_worker: 4,
            episode_length: 16,
            neighbor_cap: 50,
            n_step: 3,
            bootstrap_truncated: true,
            batch_size: 32,
            target_sync: 2_500,
            learning_starts: 1_000,
            env_steps_per_update: 4,
            rollout_steps: 16,
            grad_clip: 10.0,
            shaping: ShapingConfig::default(),
            latent: None,
            heads: 4,
            blocks: 2,
            ffn: None,
            encoder_layers: 2,
            positional_encoding: true,
            log_interval: 10_000,
            checkpoint_interval: 100_000,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<TrainConfig, TrainError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.replay_capacity == 0 || self.replay_shards == 0 || self.replay_shards > self.replay_capacity {
            return bad("replay capacity and shards must be positive, with no more shards than capacity");
        }
        if self.workers == 0 || self.envs_per_worker == 0 || self.rollout_steps == 0 {
            return bad("workers, envs_per_worker and rollout_steps must be positive");
        }
        if self.batch_size == 0 || self.n_step == 0 || self.env_steps_per_update == 0 {
            return bad("batch_size, n_step and env_steps_per_update must be positive");
        }
        if self.episode_length == 0 || self.target_sync == 0 {
            return bad("episode_length and target_sync must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon) || self.learning_rate < 0.0 {
            return bad("epsilon must lie in [0, 1] and the learning rate be nonnegative");
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return bad("log and checkpoint intervals must be positive");
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn network_config(&self, spec: &SpaceSpec) -> QNetConfig {
        let latent = self.latent.unwrap_or(match spec.regime() {
            Regime::FreeForm => 256,
            Regime::FixedTemplate(_) => 512,
        });
        let mut cfg = QNetConfig::new(token_width(spec), 1 + self.neighbor_cap, latent);
        cfg.heads = self.heads;
        cfg.blocks = self.blocks;
        cfg.ffn = self.ffn.unwrap_or(4 * latent);
        cfg.encoder_layers = self.encoder_layers;
        cfg.positional_encoding = self.positional_encoding;
        cfg
    }

    pub fn env_config(&self, spec: &SpaceSpec, seed: u64) -> EnvConfig {
        EnvConfig {
            spec: spec.clone(),
            neighbor_cap: self.neighbor_cap,
            shaping: self.shaping,
            max_steps: self.episode_length,
            gamma: self.gamma,
            seed,
        }
    }

    pub fn epsilons(&self) -> Vec<f64> {
        (0..self.workers)
            .map(|i| epsilon_for_worker(i, self.workers, self.epsilon, self.epsilon_alpha))
            .collect()
    }
}

/// `epsilon^(1 + alpha * i / (n - 1))`; a single worker gets `epsilon`.
pub fn epsilon_for_worker(i: usize, num_workers: usize, epsilon: f64, alpha: f64) -> f64 {
    if num_workers < 2 {
        return epsilon;
    }
    epsilon.powf(1.0 + alpha * i as f64 / (num_workers - 1) as f64)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Environment steps so far.
    pub step: u64,
    pub learner_steps: u64,
    /// Mean validation accuracy of architectures reached since the last record.
    pub mean_accuracy: f64,
    /// Mean learner loss since the last record; `None` before learning starts.
    pub loss: Option<f64>,
    pub epsilon: Vec<f64>,
    pub buffer_size: usize,
}

/// Receives log records and checkpoints as training proceeds.
pub trait TrainObserver {
    fn log(&mut self, _record: &LogRecord) -> Result<(), TrainError> {
        Ok(())
    }

    fn checkpoint(&mut self, _step: u64, _params: &Params, _meta: &CheckpointMeta) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemoryObserver {
    pub log: Vec<LogRecord>,
    pub checkpoints: Vec<(u64, Params)>,
}

impl TrainObserver for MemoryObserver {
    fn log(&mut self, record: &LogRecord) -> Result<(), TrainError> {
        self.log.push(record.clone());
        Ok(())
    }

    fn checkpoint(&mut self, step: u64, params: &Params, _meta: &CheckpointMeta) -> Result<(), TrainError> {
        self.checkpoints.push((step, params.clone()));
        Ok(())
    }
}

/// Writes `train_log.jsonl` and `ckpt_<step>.bin` (+ `.json`) into a directory.
/// Log lines are flushed as they arrive.
pub struct DirectoryObserver {
    dir: PathBuf,
    log: BufWriter<File>,
    pub written: Vec<PathBuf>,
}

impl DirectoryObserver {
    pub fn new(dir: &Path) -> Result<DirectoryObserver, TrainError> {
        std::fs::create_dir_all(dir)?;
        let log = BufWriter::new(File::create(dir.join("train_log.jsonl"))?);
        Ok(DirectoryObserver {
            dir: dir.to_path_buf(),
            log,
            written: Vec::new(),
        })
    }
}

impl TrainObserver for DirectoryObserver {
    fn log(&mut self, record: &LogRecord) -> Result<(), TrainError> {
        let line = serde_json::to_string(record).map_err(|e| TrainError::Config(e.to_string()))?;
        writeln!(self.log, "{line}")?;
        self.log.flush()?;
        Ok(())
    }

    fn checkpoint(&mut self, step: u64, params: &Params, meta: &CheckpointMeta) -> Result<(), TrainError> {
        let path = self.dir.join(format!("ckpt_{step:010}.bin"));
        save_checkpoint(&path, params, meta)?;
        self.written.push(path);
        Ok(())
    }
}

struct Collector {
    env: Env,
    epsilon: f64,
    rng: ChaCha8Rng,
    obs: Arc<Observation>,
    traj: Trajectory,
}

#[derive(Default)]
struct PhaseOutput {
    entries: Vec<ReplayEntry>,
    accuracy_sum: f64,
    steps: u64,
}

impl Collector {
    fn run(&mut self, net: &QNetwork, params: &Params, cfg: &TrainConfig) -> Result<PhaseOutput, TrainError> {
        let mut out = PhaseOutput::default();
        for _ in 0..cfg.rollout_steps {
            let q = net.forward(params, &self.obs)?;
            let action = act_epsilon_greedy(&q, self.epsilon, &mut self.rng);
            let step = self.env.step(action)?;
            out.accuracy_sum += step.accuracy;
            out.steps += 1;
            let done = step.done();
            self.traj.actions.push(action);
            self.traj.rewards.push(step.reward);
            self.traj.observations.push(Arc::new(step.observation));
            if done {
                self.traj.terminated = step.terminated;
                self.traj.truncated = step.truncated;
                out.entries
                    .extend(assemble_nstep(&self.traj, cfg.n_step, cfg.gamma, cfg.bootstrap_truncated)?);
                self.obs = Arc::new(self.env.reset()?);
                self.traj = Trajectory {
                    observations: vec![self.obs.clone()],
                    ..Trajectory::default()
                };
            } else {
                self.obs = self.traj.observations.last().expect("just pushed").clone();
            }
        }
        Ok(out)
    }
}

/// Final state of a training run.
pub struct TrainOutcome {
    pub net: Arc<QNetwork>,
    pub params: Params,
    pub env_steps: u64,
    pub learner_steps: u64,
}

/// Runs training until `cfg.total_steps` environment steps are collected.
pub fn run_training(
    cfg: &TrainConfig,
    spec: &SpaceSpec,
    oracle: Arc<dyn Oracle>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    cfg.check()?;
    let exec = cfg.exec();
    let net = Arc::new(QNetwork::new(cfg.network_config(spec))?);
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = net.init(seeds.gen());
    let mut learner = Learner::new(net.clone(), params, cfg.learning_rate, cfg.target_sync, exec);
    learner.grad_clip = cfg.grad_clip;
    let mut learn_rng = ChaCha8Rng::seed_from_u64(seeds.gen());
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, cfg.replay_shards, cfg.priority_alpha, cfg.importance_beta)?;

    let epsilons = cfg.epsilons();
    let mut collectors = Vec::with_capacity(cfg.workers * cfg.envs_per_worker);
    for &epsilon in &epsilons {
        for _ in 0..cfg.envs_per_worker {
            let mut env = Env::new(cfg.env_config(spec, seeds.gen()), oracle.clone())?;
            let obs = Arc::new(env.reset()?);
            collectors.push(Collector {
                env,
                epsilon,
                rng: ChaCha8Rng::seed_from_u64(seeds.gen()),
                traj: Trajectory {
                    observations: vec![obs.clone()],
                    ..Trajectory::default()
                },
                obs,
            });
        }
    }

    let meta = |step: u64| CheckpointMeta {
        network: net.config().clone(),
        space: cfg.space.clone(),
        step,
        hyperparameters: serde_json::to_value(cfg).unwrap_or_default(),
    };

    let mut snapshot = Arc::new(learner.online.clone());
    let mut env_steps = 0u64;
    let mut next_log = cfg.log_interval;
    let mut next_ckpt = cfg.checkpoint_interval;
    let mut last_ckpt = None;
    let (mut acc_sum, mut acc_n, mut loss_sum, mut loss_n) = (0.0, 0u64, 0.0, 0u64);
    let phase_steps = (collectors.len() * cfg.rollout_steps) as u64;

    while env_steps < cfg.total_steps {
        let updates = if buffer.len() >= cfg.learning_starts.max(1) {
            phase_steps as usize / cfg.env_steps_per_update
        } else {
            0
        };
        let snap = snapshot.clone();
        let (collected, learned) = par::join(
            exec,
            || {
                let mut results: Vec<Option<Result<PhaseOutput, TrainError>>> = (0..collectors.len()).map(|_| None).collect();
                let mut work: Vec<_> = collectors.iter_mut().zip(results.iter_mut()).collect();
                par::for_each_mut(exec, &mut work, |_, (c, slot)| **slot = Some(c.run(&net, &snap, cfg)));
                results.into_iter().map(|r| r.expect("filled")).collect::<Result<Vec<_>, _>>()
            },
            || -> Result<Vec<f64>, TrainError> {
                let mut losses = Vec::with_capacity(updates);
                for _ in 0..updates {
                    let (ids, stats) = {
                        let batch = buffer.sample(cfg.batch_size, &mut learn_rng)?;
                        (batch.ids.clone(), learner.train_step(&batch)?)
                    };
                    buffer.update_priorities(&ids, &stats.td_errors);
                    losses.push(stats.loss);
                }
                Ok(losses)
            },
        );
        let losses = learned?;
        for out in collected? {
            acc_sum += out.accuracy_sum;
            acc_n += out.steps;
            for e in out.entries {
                buffer.push(e);
            }
        }
        loss_sum += losses.iter().sum::<f64>();
        loss_n += losses.len() as u64;
        env_steps += phase_steps;
        snapshot = Arc::new(learner.online.clone());

        let finished = env_steps >= cfg.total_steps;
        if env_steps >= next_log || finished {
            observer.log(&LogRecord {
                step: env_steps,
                learner_steps: learner.steps(),
                mean_accuracy: if acc_n > 0 { acc_sum / acc_n as f64 } else { 0.0 },
                loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                epsilon: epsilons.clone(),
                buffer_size: buffer.len(),
            })?;
            (acc_sum, acc_n, loss_sum, loss_n) = (0.0, 0, 0.0, 0);
            while next_log <= env_steps {
                next_log += cfg.log_interval;
            }
        }
        if env_steps >= next_ckpt || finished {
            observer.checkpoint(env_steps, &learner.online, &meta(env_steps))?;
            last_ckpt = Some(env_steps);
            while next_ckpt <= env_steps {
                next_ckpt += cfg.checkpoint_interval;
            }
        }
    }
    if last_ckpt != Some(env_steps) {
        observer.checkpoint(env_steps, &learner.online, &meta(env_steps))?;
    }
    Ok(TrainOutcome {
        net,
        learner_steps: learner.steps(),
        params: learner.online,
        env_steps,
    })
}
