//! n-step transitions from finished episodes.

use std::sync::Arc;

use thiserror::Error;

use crate::env::Observation;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory has not finished")]
    Incomplete,
    #[error("trajectory needs one more observation than actions")]
    Lengths,
}

/// One finished episode: `observations[t]` is seen before `actions[t]`;
/// the final observation follows the last step.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub observations: Vec<Arc<Observation>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayEntry {
    pub obs: Arc<Observation>,
    pub action: usize,
    /// `sum_k gamma^k r_{t+k}` over the realized window.
    pub reward: f64,
    pub next_obs: Arc<Observation>,
    /// `gamma^m` for the realized window length `m`.
    pub discount: f64,
    /// No bootstrap term when set.
    pub terminated: bool,
}

/// Entries for every step of a finished episode.
///
/// With `bootstrap_truncated` a time-limit ending keeps the bootstrap term;
/// without it truncation is treated like termination.
pub fn assemble_nstep(
    traj: &Trajectory,
    n: usize,
    gamma: f64,
    bootstrap_truncated: bool,
) -> Result<Vec<ReplayEntry>, TrajectoryError> {
    if !traj.terminated && !traj.truncated {
        return Err(TrajectoryError::Incomplete);
    }
    let len = traj.len();
    if traj.observations.len() != len + 1 || traj.rewards.len() != len {
        return Err(TrajectoryError::Lengths);
    }
    let ends_terminal = traj.terminated || !bootstrap_truncated;
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let m = n.min(len - t);
        let mut reward = 0.0;
        let mut g = 1.0;
        for k in 0..m {
            reward += g * traj.rewards[t + k];
            g *= gamma;
        }
        out.push(ReplayEntry {
            obs: traj.observations[t].clone(),
            action: traj.actions[t],
            reward,
            next_obs: traj.observations[t + m].clone(),
            discount: g,
            terminated: ends_terminal && t + m == len,
        });
    }
    Ok(out)
}

/// `reward + discount * bootstrap`, or `reward` alone when terminated.
pub fn target_value(entry: &ReplayEntry, bootstrap: f64) -> f64 {
    if entry.terminated {
        entry.reward
    } else {
        entry.reward + entry.discount * bootstrap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Observation;

    pub(crate) fn dummy_obs() -> Arc<Observation> {
        Arc::new(Observation::from_parts(1, vec![0], vec![true]))
    }

    fn traj(rewards: &[f64], terminated: bool) -> Trajectory {
        Trajectory {
            observations: (0..=rewards.len()).map(|_| dummy_obs()).collect(),
            actions: vec![1; rewards.len()],
            rewards: rewards.to_vec(),
            terminated,
            truncated: !terminated,
        }
    }

    #[test]
    fn worked_example() {
        let t = traj(&[1.0, 0.0, 2.0, 5.0], false);
        let e = &assemble_nstep(&t, 3, 0.9, true).unwrap()[0];
        assert!((e.reward - 2.62).abs() < 1e-12);
        assert!((e.discount - 0.729).abs() < 1e-12);
        assert!((target_value(e, 10.0) - 9.91).abs() < 1e-12);
    }

    #[test]
    fn terminal_window() {
        let t = traj(&[1.0, 0.5], true);
        let es = assemble_nstep(&t, 3, 0.9, true).unwrap();
        assert_eq!(es.len(), 2);
        assert!(es[1].terminated && es[0].terminated);
        assert_eq!(target_value(&es[1], 100.0), 0.5);
        assert!((es[0].reward - 1.45).abs() < 1e-12);
    }

    #[test]
    fn truncation_keeps_bootstrap() {
        let t = traj(&[0.1; 16], false);
        let es = assemble_nstep(&t, 3, 0.9, true).unwrap();
        assert!(es.iter().all(|e| !e.terminated));
        assert!((es[15].discount - 0.9).abs() < 1e-12);
        let off = assemble_nstep(&t, 3, 0.9, false).unwrap();
        for (a, b) in es.iter().zip(&off) {
            let diff = target_value(a, 2.0) - target_value(b, 2.0);
            if b.terminated {
                assert!((diff - a.discount * 2.0).abs() < 1e-12);
            } else {
                assert_eq!(diff, 0.0);
            }
        }
        assert_eq!(off.iter().filter(|e| e.terminated).count(), 3);
    }

    #[test]
    fn rejects_unfinished() {
        let mut t = traj(&[1.0], false);
        t.truncated = false;
        assert_eq!(assemble_nstep(&t, 3, 0.9, true).unwrap_err(), TrajectoryError::Incomplete);
        let mut t = traj(&[1.0], true);
        t.observations.pop();
        assert_eq!(assemble_nstep(&t, 3, 0.9, true).unwrap_err(), TrajectoryError::Lengths);
    }
}
