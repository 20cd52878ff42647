//! Performance oracles and reward shaping.
//!
//! Every oracle answers [`Oracle::query`] deterministically per architecture
//! digest. [`TabularOracle`] looks metrics up in a digest-keyed table loaded
//! from CSV; [`SyntheticOracle`] computes a closed-form score from graph
//! features, which gives neighboring architectures similar values.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::arch::Architecture;
use crate::graph::{CellGraph, Digest, Label};
use crate::space::SpaceSpec;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no entry for digest {0}")]
    MissingEntry(Digest),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("digest {0} appears twice with different values")]
    Conflict(Digest),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub validation_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Architecture performance estimator. Read-only after construction.
pub trait Oracle: Send + Sync {
    fn query(&self, arch: &Architecture) -> Result<Metrics, OracleError>;

    fn validation_accuracy(&self, arch: &Architecture) -> Result<f64, OracleError> {
        self.query(arch).map(|m| m.validation_accuracy)
    }
}

/// Digest-keyed table of precomputed metrics.
#[derive(Debug, Clone, Default)]
pub struct TabularOracle {
    entries: HashMap<Digest, Metrics>,
}

impl TabularOracle {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, digest: Digest, metrics: Metrics) -> Result<(), OracleError> {
        match self.entries.get(&digest) {
            Some(m) if *m != metrics => Err(OracleError::Conflict(digest)),
            _ => {
                self.entries.insert(digest, metrics);
                Ok(())
            }
        }
    }

    pub fn get(&self, digest: &Digest) -> Option<&Metrics> {
        self.entries.get(digest)
    }

    /// Reads `digest,val_acc,test_acc` CSV (header required, `test_acc` may
    /// be empty).
    pub fn from_reader<R: BufRead>(reader: R) -> Result<TabularOracle, OracleError> {
        let mut oracle = TabularOracle::default();
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, header)) => {
                let header = header?;
                if header.trim() != "digest,val_acc,test_acc" {
                    return Err(OracleError::Parse {
                        line: 1,
                        msg: format!("expected header digest,val_acc,test_acc, got {header:?}"),
                    });
                }
            }
            None => {
                return Err(OracleError::Parse {
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        }
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| OracleError::Parse { line: lineno, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            }
            let digest = Digest::from_hex(fields[0]).ok_or_else(|| bad(format!("bad digest {:?}", fields[0])))?;
            let parse_acc = |s: &str| -> Result<f64, OracleError> {
                let v: f64 = s.parse().map_err(|_| bad(format!("bad accuracy {s:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("accuracy {v} outside [0, 1]")));
                }
                Ok(v)
            };
            let validation_accuracy = parse_acc(fields[1])?;
            let test_accuracy = if fields[2].is_empty() {
                None
            } else {
                Some(parse_acc(fields[2])?)
            };
            oracle.insert(
                digest,
                Metrics {
                    validation_accuracy,
                    test_accuracy,
                },
            )?;
        }
        Ok(oracle)
    }

    pub fn load(path: &Path) -> Result<TabularOracle, OracleError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    /// CSV text, rows sorted by digest.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<_> = self.entries.iter().collect();
        rows.sort_by_key(|(d, _)| **d);
        let mut out = String::from("digest,val_acc,test_acc\n");
        for (d, m) in rows {
            let test = m.test_accuracy.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{d},{},{test}", m.validation_accuracy);
        }
        out
    }
}

/// Loads the CSV table at `path`.
pub fn ingest_table(path: &Path) -> Result<TabularOracle, OracleError> {
    TabularOracle::load(path)
}

impl Oracle for TabularOracle {
    fn query(&self, arch: &Architecture) -> Result<Metrics, OracleError> {
        self.entries
            .get(&arch.digest())
            .copied()
            .ok_or(OracleError::MissingEntry(arch.digest()))
    }
}

/// Closed-form stand-in for a benchmark table.
///
/// `acc = clamp(0.80 + 0.15 * sigmoid(w . f - 1) + 0.005 * u, 0, 1)` with
/// features `f = [n(op0)/k, n(op1)/k, n(op2)/k, longest_path/(V-1), edges/E]`
/// where `k = V - inputs - 1` is the interior vertex budget, `V`/`E` the
/// space caps, and `u` in `[-1, 1]` comes from the first 8 digest bytes.
/// Multi-cell architectures average their cells. These constants are frozen:
/// recorded fixtures depend on them.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: SpaceSpec,
}

pub const SYNTHETIC_WEIGHTS: [f64; 5] = [0.3, 0.8, -0.2, 0.5, 0.2];
const SYNTHETIC_BASE: f64 = 0.80;
const SYNTHETIC_SPAN: f64 = 0.15;
const SYNTHETIC_BIAS: f64 = 1.0;
const SYNTHETIC_JITTER: f64 = 0.005;

impl SyntheticOracle {
    pub fn new(spec: SpaceSpec) -> SyntheticOracle {
        SyntheticOracle { spec }
    }

    pub fn spec(&self) -> &SpaceSpec {
        &self.spec
    }

    pub fn features(&self, g: &CellGraph) -> [f64; 5] {
        let interior = (self.spec.max_vertices() - self.spec.num_inputs() - 1) as f64;
        let count = |i: usize| g.labels().iter().filter(|&&l| l == Label::op(i)).count() as f64;
        [
            count(0) / interior,
            count(1) / interior,
            count(2) / interior,
            g.longest_path() as f64 / (self.spec.max_vertices() - 1) as f64,
            g.num_edges() as f64 / self.spec.max_edges() as f64,
        ]
    }

    /// Score of one cell whose canonical digest is `digest`.
    pub fn score_cell(&self, g: &CellGraph, digest: &Digest) -> f64 {
        let f = self.features(g);
        let z: f64 = f.iter().zip(SYNTHETIC_WEIGHTS).map(|(a, b)| a * b).sum::<f64>() - SYNTHETIC_BIAS;
        let acc = SYNTHETIC_BASE + SYNTHETIC_SPAN * sigmoid(z) + SYNTHETIC_JITTER * digest_unit(digest);
        acc.clamp(0.0, 1.0)
    }

    pub fn synthetic_score(&self, arch: &Architecture) -> f64 {
        let total: f64 = arch
            .graphs()
            .zip(arch.cell_digests())
            .map(|(g, d)| self.score_cell(g, d))
            .sum();
        total / arch.cells().len() as f64
    }
}

impl Oracle for SyntheticOracle {
    fn query(&self, arch: &Architecture) -> Result<Metrics, OracleError> {
        Ok(Metrics {
            validation_accuracy: self.synthetic_score(arch),
            test_accuracy: None,
        })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// First 8 digest bytes as a big-endian integer mapped onto `[-1, 1]`.
pub fn digest_unit(d: &Digest) -> f64 {
    let x = u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"));
    2.0 * (x as f64 / u64::MAX as f64) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapingMode {
    /// `exp(alpha * (acc - 1))`: bounded in `(e^-alpha, 1]`.
    #[default]
    Normalized,
    /// `exp(alpha * acc)`.
    Raw,
    /// Identity.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapingConfig {
    pub alpha: f64,
    pub mode: ShapingMode,
}

impl ShapingConfig {
    pub fn normalized(alpha: f64) -> Self {
        ShapingConfig {
            alpha,
            mode: ShapingMode::Normalized,
        }
    }

    pub fn off() -> Self {
        ShapingConfig {
            alpha: 0.0,
            mode: ShapingMode::Off,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.alpha.is_finite() && (self.mode == ShapingMode::Off || self.alpha > 0.0)
    }
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self::normalized(6.0)
    }
}

/// Exponential reward shaping; strictly increasing in `acc` for `alpha > 0`.
pub fn shape(acc: f64, cfg: &ShapingConfig) -> f64 {
    match cfg.mode {
        ShapingMode::Normalized => (cfg.alpha * (acc - 1.0)).exp(),
        ShapingMode::Raw => (cfg.alpha * acc).exp(),
        ShapingMode::Off => acc,
    }
}

/// `shape(cur) - shape(prev)`; zero when there is no previous architecture.
pub fn step_reward(prev: Option<f64>, cur: f64, cfg: &ShapingConfig) -> f64 {
    match prev {
        None => 0.0,
        Some(p) => shape(cur, cfg) - shape(p, cfg),
    }
}
