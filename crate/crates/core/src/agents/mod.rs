//! Search policies: random search, random walk, greedy local search and the
//! Q-network agent.

pub mod qnet;
pub mod tensor;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::env::Observation;
use crate::oracle::{Oracle, OracleError};
use crate::space::{sample_uniform, SpaceError, SpaceSpec};

pub use qnet::{QNetConfig, QNetwork, QValues, ShapeError};
pub use tensor::{sidecar_path, CheckpointError, Layout, Params};

/// Contents of the JSON sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: QNetConfig,
    /// Preset name or path of the search space definition.
    pub space: String,
    pub step: u64,
    /// Training hyperparameters, kept for reference.
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

/// Writes `path` (tensors) and `path.json` (metadata).
pub fn save_checkpoint(path: &Path, params: &Params, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    params.write_to(BufWriter::new(File::create(path)?))?;
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(sidecar_path(path), text + "\n")?;
    Ok(())
}

/// Rebuilds the network from the sidecar and loads its parameters.
pub fn load_checkpoint(path: &Path) -> Result<(QNetwork, Params, CheckpointMeta), CheckpointError> {
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let net = QNetwork::new(meta.network.clone()).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
    let params = Params::read_from(BufReader::new(File::open(path)?), Arc::clone(net.layout()))?;
    Ok((net, params, meta))
}

/// Uniform over valid slots, terminate included.
pub fn act_random_walk<R: Rng + ?Sized>(obs: &Observation, rng: &mut R) -> usize {
    obs.valid_actions().choose(rng).unwrap_or(0)
}

/// Best strictly improving candidate, lowest slot on ties; 0 when nothing
/// beats `current`. `candidates[i]` belongs to slot `i + 1`.
pub fn act_local_search(current: f64, candidates: &[f64]) -> usize {
    let mut best = 0;
    let mut best_acc = current;
    for (i, &a) in candidates.iter().enumerate() {
        if a > best_acc {
            best = i + 1;
            best_acc = a;
        }
    }
    best
}

/// Greedy with probability `1 - epsilon`, otherwise uniform over valid slots.
pub fn act_epsilon_greedy<R: Rng + ?Sized>(q: &QValues, epsilon: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < epsilon {
        q.valid
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .choose(rng)
            .unwrap_or(0)
    } else {
        q.argmax()
    }
}

#[derive(Debug, Clone)]
pub struct RandomSearchOutcome {
    pub best: Architecture,
    pub best_accuracy: f64,
    /// Accuracy of each sample in draw order.
    pub accuracies: Vec<f64>,
    /// Best accuracy after each query.
    pub running_best: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// `budget` independent uniform samples; keeps the first best.
pub fn random_search<R: Rng + ?Sized>(
    spec: &SpaceSpec,
    oracle: &dyn Oracle,
    budget: usize,
    rng: &mut R,
) -> Result<RandomSearchOutcome, SearchError> {
    if budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let mut best: Option<(Architecture, f64)> = None;
    let mut accuracies = Vec::with_capacity(budget);
    let mut running_best = Vec::with_capacity(budget);
    for _ in 0..budget {
        let arch = sample_uniform(spec, rng)?;
        let acc = oracle.validation_accuracy(&arch)?;
        accuracies.push(acc);
        if best.as_ref().is_none_or(|(_, b)| acc > *b) {
            best = Some((arch, acc));
        }
        running_best.push(best.as_ref().expect("set above").1);
    }
    let (best, best_accuracy) = best.expect("budget >= 1");
    Ok(RandomSearchOutcome {
        best,
        best_accuracy,
        accuracies,
        running_best,
    })
}
