//! The incremental search MDP.
//!
//! A state is an architecture. Each step presents the current architecture
//! (slot 0) and up to `N` neighbors (slots `1..=N`). Choosing slot 0
//! terminates the episode; choosing slot `i` moves there deterministically
//! and pays `shape(acc_new) - shape(acc_old)`. After `max_steps` steps the
//! episode is truncated, which learners treat as a time limit rather than a
//! terminal state.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{Architecture, Cell};
use crate::graph::CellGraph;
use crate::neighborhood::{neighbors, NeighborSet};
use crate::oracle::{step_reward, Oracle, OracleError, ShapingConfig};
use crate::par::{self, Exec};
use crate::space::{sample_uniform, validate, EdgeCell, OpEdge, SpaceError, SpaceSpec};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished")]
    EpisodeOver,
    #[error("action {0} is masked off")]
    InvalidAction(usize),
    #[error("cannot encode architecture: {0}")]
    Encode(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub spec: SpaceSpec,
    pub neighbor_cap: usize,
    pub shaping: ShapingConfig,
    pub max_steps: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(spec: SpaceSpec) -> EnvConfig {
        EnvConfig {
            spec,
            neighbor_cap: 50,
            shaping: ShapingConfig::default(),
            max_steps: 16,
            gamma: 0.9,
            seed: 0,
        }
    }

    pub fn check(&self) -> Result<(), EnvError> {
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(EnvError::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !self.shaping.is_valid() {
            return Err(EnvError::Config("shaping alpha must be positive unless mode is off".into()));
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        1 + self.neighbor_cap
    }

    pub fn token_width(&self) -> usize {
        token_width(&self.spec)
    }
}

/// Per-cell width: strict lower triangle of the padded adjacency plus one
/// one-hot label group per padded vertex; cells are concatenated.
pub fn token_width(spec: &SpaceSpec) -> usize {
    let v = spec.max_vertices();
    spec.cells_per_architecture() * (v * (v - 1) / 2 + v * spec.label_count())
}

/// Slot tokens (binary) and the action mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    width: usize,
    tokens: Vec<u8>,
    mask: Vec<bool>,
}

impl Observation {
    /// Panics unless `tokens.len() == mask.len() * width` and slot 0 is valid.
    pub fn from_parts(width: usize, tokens: Vec<u8>, mask: Vec<bool>) -> Observation {
        assert_eq!(tokens.len(), mask.len() * width, "token buffer does not match slots");
        assert!(mask.first() == Some(&true), "slot 0 must be valid");
        Observation { width, tokens, mask }
    }

    pub fn slots(&self) -> usize {
        self.mask.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn token(&self, slot: usize) -> &[u8] {
        &self.tokens[slot * self.width..(slot + 1) * self.width]
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn encode_cell(g: &CellGraph, spec: &SpaceSpec, out: &mut [u8]) -> Result<(), EnvError> {
    let v = spec.max_vertices();
    let n = g.num_vertices();
    if n > v {
        return Err(EnvError::Encode(format!("{n} vertices above cap {v}")));
    }
    // Row d of the strict lower triangle holds sources 0..d of vertex d.
    for (s, d) in g.edges() {
        out[d * (d - 1) / 2 + s] = 1;
    }
    let labels = &mut out[v * (v - 1) / 2..];
    let k = spec.label_count();
    for (i, &l) in g.labels().iter().enumerate() {
        let idx = spec
            .one_hot_index(l)
            .ok_or_else(|| EnvError::Encode(format!("label {} outside alphabet", l.0)))?;
        labels[i * k + idx] = 1;
    }
    Ok(())
}

/// Binary token of one architecture.
pub fn encode_architecture(arch: &Architecture, spec: &SpaceSpec) -> Result<Vec<u8>, EnvError> {
    let mut out = vec![0u8; token_width(spec)];
    encode_architecture_into(arch, spec, &mut out)?;
    Ok(out)
}

fn encode_architecture_into(arch: &Architecture, spec: &SpaceSpec, out: &mut [u8]) -> Result<(), EnvError> {
    if arch.cells().len() != spec.cells_per_architecture() {
        return Err(EnvError::Encode("cell count does not match the space".into()));
    }
    if let Err(v) = arch.validate(spec) {
        return Err(EnvError::Encode(v.to_string()));
    }
    let per_cell = out.len() / spec.cells_per_architecture();
    for (cell, chunk) in arch.cells().iter().zip(out.chunks_mut(per_cell)) {
        encode_cell(cell.graph(), spec, chunk)?;
    }
    Ok(())
}

/// Inverse of [`encode_architecture`]; `None` for zero or malformed tokens.
pub fn decode_architecture(token: &[u8], spec: &SpaceSpec) -> Option<Architecture> {
    let per_cell = token_width(spec) / spec.cells_per_architecture();
    if token.len() != token_width(spec) {
        return None;
    }
    let v = spec.max_vertices();
    let k = spec.label_count();
    let mut cells = Vec::new();
    for chunk in token.chunks(per_cell) {
        let label_part = &chunk[v * (v - 1) / 2..];
        let mut labels = Vec::new();
        for i in 0..v {
            let group = &label_part[i * k..(i + 1) * k];
            match group.iter().position(|&b| b == 1) {
                Some(idx) => labels.push(spec.label_from_one_hot(idx)?),
                None => break,
            }
        }
        if labels.len() < 2 {
            return None;
        }
        let n = labels.len();
        let mut edges = Vec::new();
        for d in 1..n {
            for s in 0..d {
                if chunk[d * (d - 1) / 2 + s] == 1 {
                    edges.push((s, d));
                }
            }
        }
        let g = CellGraph::new(labels, &edges).ok()?;
        validate(&g, spec).ok()?;
        let cell = match spec.template() {
            None => Cell::Nodes(g),
            Some(_) => Cell::from_edge_cell(edge_cell_from_graph(&g, spec)?, spec).ok()?,
        };
        cells.push(cell);
    }
    Architecture::new(cells).ok()
}

/// Recovers the operations-on-edges cell from its converted graph.
fn edge_cell_from_graph(g: &CellGraph, spec: &SpaceSpec) -> Option<EdgeCell> {
    let t = spec.template()?;
    let stride = t.in_edges_per_node + 1;
    let mut edges = Vec::new();
    for k in 0..t.intermediates {
        for j in 0..t.in_edges_per_node {
            let v = EdgeCell::INPUTS + k * stride + j;
            let op = g.label(v).op_index()?;
            let pred = g.pred_mask(v);
            if pred.count_ones() != 1 {
                return None;
            }
            let p = pred.trailing_zeros() as usize;
            let src = if p < EdgeCell::INPUTS {
                p
            } else {
                let off = p - EdgeCell::INPUTS;
                if off % stride != t.in_edges_per_node {
                    return None;
                }
                EdgeCell::INPUTS + off / stride
            };
            edges.push(OpEdge { src, dst: k, op });
        }
    }
    let cell = EdgeCell::new(t, spec.op_labels().len(), edges).ok()?;
    let rebuilt = crate::space::convert_edges_to_nodes(&cell, spec.reduction_label()?);
    (rebuilt == *g).then_some(cell)
}

/// Slot 0 is the current architecture, slots `1..=cap` the candidates;
/// absent candidates are zero tokens with a false mask.
pub fn encode_observation(nbrs: &NeighborSet, spec: &SpaceSpec) -> Result<Observation, EnvError> {
    let width = token_width(spec);
    let slots = 1 + nbrs.cap;
    let mut tokens = vec![0u8; slots * width];
    encode_architecture_into(&nbrs.current, spec, &mut tokens[..width])?;
    for (i, c) in nbrs.candidates.iter().enumerate() {
        encode_architecture_into(c, spec, &mut tokens[(i + 1) * width..(i + 2) * width])?;
    }
    let mut mask = vec![false; slots];
    mask[0] = true;
    for m in &mut mask[1..=nbrs.candidates.len()] {
        *m = true;
    }
    Ok(Observation { width, tokens, mask })
}

/// Result of one [`Env::step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub previous_accuracy: f64,
    pub accuracy: f64,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

struct State {
    nbrs: NeighborSet,
    accuracy: f64,
    t: usize,
    done: bool,
}

/// One episode runner. Single caller; the oracle may be shared.
pub struct Env {
    cfg: EnvConfig,
    oracle: Arc<dyn Oracle>,
    rng: ChaCha8Rng,
    state: Option<State>,
}

impl Env {
    pub fn new(cfg: EnvConfig, oracle: Arc<dyn Oracle>) -> Result<Env, EnvError> {
        cfg.check()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Env {
            cfg,
            oracle,
            rng,
            state: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn oracle(&self) -> &Arc<dyn Oracle> {
        &self.oracle
    }

    /// Starts an episode from a freshly sampled architecture.
    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        let arch = sample_uniform(&self.cfg.spec, &mut self.rng)?;
        self.reset_to(arch)
    }

    /// Starts an episode from `arch`.
    pub fn reset_to(&mut self, arch: Architecture) -> Result<Observation, EnvError> {
        if let Err(v) = arch.validate(&self.cfg.spec) {
            return Err(EnvError::Encode(v.to_string()));
        }
        let accuracy = self.oracle.validation_accuracy(&arch)?;
        let nbrs = neighbors(&arch, &self.cfg.spec, self.cfg.neighbor_cap, &mut self.rng);
        let obs = encode_observation(&nbrs, &self.cfg.spec)?;
        self.state = Some(State {
            nbrs,
            accuracy,
            t: 0,
            done: false,
        });
        Ok(obs)
    }

    pub fn current(&self) -> Option<&Architecture> {
        self.state.as_ref().map(|s| &s.nbrs.current)
    }

    pub fn current_accuracy(&self) -> Option<f64> {
        self.state.as_ref().map(|s| s.accuracy)
    }

    /// Neighbors presented in the latest observation.
    pub fn neighbor_set(&self) -> Option<&NeighborSet> {
        self.state.as_ref().map(|s| &s.nbrs)
    }

    /// Steps taken in the current episode.
    pub fn elapsed(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.t)
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let max_steps = self.cfg.max_steps;
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if state.done {
            return Err(EnvError::EpisodeOver);
        }
        if action > state.nbrs.candidates.len() {
            return Err(EnvError::InvalidAction(action));
        }
        let prev = state.accuracy;
        if action == 0 {
            state.t += 1;
            state.done = true;
            let observation = encode_observation(&state.nbrs, &self.cfg.spec)?;
            return Ok(StepOutcome {
                observation,
                reward: 0.0,
                terminated: true,
                truncated: false,
                previous_accuracy: prev,
                accuracy: prev,
            });
        }
        let next = state.nbrs.candidates[action - 1].clone();
        let accuracy = self.oracle.validation_accuracy(&next)?;
        let reward = step_reward(Some(prev), accuracy, &self.cfg.shaping);
        let nbrs = neighbors(&next, &self.cfg.spec, self.cfg.neighbor_cap, &mut self.rng);
        let observation = encode_observation(&nbrs, &self.cfg.spec)?;
        state.nbrs = nbrs;
        state.accuracy = accuracy;
        state.t += 1;
        let truncated = state.t >= max_steps;
        state.done = truncated;
        Ok(StepOutcome {
            observation,
            reward,
            terminated: false,
            truncated,
            previous_accuracy: prev,
            accuracy,
        })
    }
}

type Slot<'a> = (&'a mut Env, usize, Option<Result<BatchStep, EnvError>>);

/// Independent environments advanced together.
pub struct VecEnv {
    envs: Vec<Env>,
    exec: Exec,
}

/// Default number of environments per batch.
pub const DEFAULT_BATCH: usize = 32;

impl VecEnv {
    /// `count` environments seeded `seed, seed + 1, ...`.
    pub fn new(cfg: &EnvConfig, oracle: Arc<dyn Oracle>, count: usize, exec: Exec) -> Result<VecEnv, EnvError> {
        let envs = (0..count)
            .map(|i| {
                let mut c = cfg.clone();
                c.seed = cfg.seed.wrapping_add(i as u64);
                Env::new(c, oracle.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VecEnv { envs, exec })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn reset_all(&mut self) -> Result<Vec<Observation>, EnvError> {
        let mut out: Vec<Option<Result<Observation, EnvError>>> = (0..self.envs.len()).map(|_| None).collect();
        let mut pairs: Vec<(&mut Env, &mut Option<Result<Observation, EnvError>>)> =
            self.envs.iter_mut().zip(out.iter_mut()).collect();
        par::for_each_mut(self.exec, &mut pairs, |_, (env, slot)| **slot = Some(env.reset()));
        out.into_iter().map(|r| r.expect("filled")).collect()
    }

    /// Steps every environment with its action. Finished environments are
    /// reset; their outcome still reports the final transition and
    /// `next_start` holds the new episode's first observation.
    pub fn step_autoreset(&mut self, actions: &[usize]) -> Result<Vec<BatchStep>, EnvError> {
        assert_eq!(actions.len(), self.envs.len(), "one action per environment");
        let mut work: Vec<Slot<'_>> = self
            .envs
            .iter_mut()
            .zip(actions)
            .map(|(e, &a)| (e, a, None))
            .collect();
        par::for_each_mut(self.exec, &mut work, |_, (env, action, slot)| {
            let r = env.step(*action).and_then(|outcome| {
                let next_start = if outcome.done() { Some(env.reset()?) } else { None };
                Ok(BatchStep { outcome, next_start })
            });
            *slot = Some(r);
        });
        work.into_iter().map(|(_, _, r)| r.expect("filled")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BatchStep {
    pub outcome: StepOutcome,
    pub next_start: Option<Observation>,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u64,
    pub step: usize,
    pub digest: String,
    pub action: usize,
    pub reward: f64,
    pub previous_accuracy: f64,
    pub accuracy: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

/// Whether a slot token is all zeros.
pub fn is_zero_token(token: &[u8]) -> bool {
    token.iter().all(|&b| b == 0)
}
