//! Per-step trajectory snapshots, the normalized error series and summary
//! statistics over batches of trials.

use num::{BigRational, ToPrimitive};
use serde::Serialize;
use thiserror::Error;

use crate::protocol::{Mass, NodeState};
use crate::sync_engine::RunOutcome;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("no outcomes to summarize")]
    NoOutcomes,
    #[error("node {node} holds zero mass at step {step}; its reciprocal state is undefined")]
    ZeroMass { step: u64, node: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeSnapshot {
    pub y: i64,
    pub z: i64,
    pub q_s: i64,
    pub max_vote: i64,
    pub min_vote: i64,
    pub flag: bool,
}

impl From<&NodeState> for NodeSnapshot {
    fn from(s: &NodeState) -> Self {
        Self {
            y: s.y,
            z: s.z,
            q_s: s.q_s,
            max_vote: s.max_vote,
            min_vote: s.min_vote,
            flag: s.flag,
        }
    }
}

/// State of the whole network after `step` (step 0 is the initial state).
/// `in_flight` is mass not held by any node: processing buffers in the
/// asynchronous engine, always zero in the synchronous one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub nodes: Vec<NodeSnapshot>,
    pub in_flight: Mass,
    pub in_flight_messages: u64,
}

impl TrajectoryRecord {
    pub fn capture(step: u64, nodes: &[NodeState], in_flight: Mass, in_flight_messages: u64) -> Self {
        Self {
            step,
            nodes: nodes.iter().map(NodeSnapshot::from).collect(),
            in_flight,
            in_flight_messages,
        }
    }

    pub fn total_mass(&self) -> Mass {
        self.nodes.iter().map(|s| Mass::new(s.y, s.z)).sum::<Mass>() + self.in_flight
    }
}

/// Which state the error compares against `x*`: the reciprocal `z / y`
/// (scheduling, where the quotient is inverse utilization) or `y / z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    #[default]
    Reciprocal,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSeries {
    pub steps: Vec<u64>,
    pub values: Vec<f64>,
    /// Set when the initial state already sits at `x*`, in which case every
    /// value is reported as zero.
    pub degenerate: bool,
}

/// Root of the summed squared deviation from `x*` at each recorded step,
/// normalized by the same quantity at the first record.
pub fn normalized_error(
    trajectory: &[TrajectoryRecord],
    x_star: &BigRational,
    mode: ErrorMode,
) -> Result<ErrorSeries, MetricsError> {
    let first = trajectory.first().ok_or(MetricsError::EmptyTrajectory)?;
    let x = x_star.to_f64().unwrap_or(f64::NAN);

    let sq_dev = |rec: &TrajectoryRecord| -> Result<f64, MetricsError> {
        rec.nodes.iter().enumerate().try_fold(0.0, |acc, (node, s)| {
            let state = match mode {
                ErrorMode::Direct => s.y as f64 / s.z as f64,
                ErrorMode::Reciprocal if s.y == 0 => {
                    return Err(MetricsError::ZeroMass { step: rec.step, node })
                }
                ErrorMode::Reciprocal => s.z as f64 / s.y as f64,
            };
            Ok(acc + (state - x).powi(2))
        })
    };

    let denom = sq_dev(first)?;
    let steps = trajectory.iter().map(|r| r.step).collect();
    if denom == 0.0 {
        return Ok(ErrorSeries {
            steps,
            values: vec![0.0; trajectory.len()],
            degenerate: true,
        });
    }
    let values = trajectory
        .iter()
        .map(|r| sq_dev(r).map(|num| (num / denom).sqrt()))
        .collect::<Result<_, _>>()?;
    Ok(ErrorSeries {
        steps,
        values,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStats {
    pub trials: usize,
    pub converged: usize,
    /// One entry per trial; censored trials enter at the step they stopped.
    pub convergence_steps: Vec<u64>,
    pub censored: Vec<bool>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: u64,
    pub max: u64,
    pub bound: Option<u64>,
    pub fraction_within_bound: Option<f64>,
}

/// Per-trial input to [`TrialStats`]: convergence step, or the censoring
/// step when `converged` is false.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSteps {
    pub steps: u64,
    pub converged: bool,
}

impl From<&RunOutcome> for TrialSteps {
    fn from(o: &RunOutcome) -> Self {
        Self {
            steps: o.convergence_steps(),
            converged: o.converged,
        }
    }
}

impl TrialStats {
    pub fn from_steps(trials: &[TrialSteps], bound: Option<u64>) -> Result<Self, MetricsError> {
        if trials.is_empty() {
            return Err(MetricsError::NoOutcomes);
        }
        let n = trials.len() as f64;
        let steps: Vec<u64> = trials.iter().map(|t| t.steps).collect();
        let mean = steps.iter().map(|&s| s as f64).sum::<f64>() / n;
        let var = steps.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
        let fraction_within_bound = bound.map(|b| {
            trials.iter().filter(|t| t.converged && t.steps <= b).count() as f64 / n
        });
        Ok(Self {
            trials: trials.len(),
            converged: trials.iter().filter(|t| t.converged).count(),
            min: *steps.iter().min().unwrap_or(&0),
            max: *steps.iter().max().unwrap_or(&0),
            convergence_steps: steps,
            censored: trials.iter().map(|t| !t.converged).collect(),
            mean,
            std: var.sqrt(),
            bound,
            fraction_within_bound,
        })
    }
}

pub fn trial_stats(outcomes: &[RunOutcome], bound: Option<u64>) -> Result<TrialStats, MetricsError> {
    let steps: Vec<TrialSteps> = outcomes.iter().map(TrialSteps::from).collect();
    TrialStats::from_steps(&steps, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::BigInt;
    use proptest::prelude::*;

    fn record(step: u64, masses: &[(i64, i64)]) -> TrajectoryRecord {
        TrajectoryRecord {
            step,
            nodes: masses
                .iter()
                .map(|&(y, z)| NodeSnapshot {
                    y,
                    z,
                    q_s: 0,
                    max_vote: 0,
                    min_vote: 0,
                    flag: false,
                })
                .collect(),
            in_flight: Mass::ZERO,
            in_flight_messages: 0,
        }
    }

    fn ratio(p: i64, q: i64) -> BigRational {
        BigRational::new(BigInt::from(p), BigInt::from(q))
    }

    fn converged(steps: u64) -> TrialSteps {
        TrialSteps { steps, converged: true }
    }

    #[test]
    fn error_starts_at_one_and_vanishes_at_optimum() {
        let traj = [record(0, &[(10, 2), (40, 2)]), record(1, &[(25, 2), (25, 2)])];
        let e = normalized_error(&traj, &ratio(25, 2), ErrorMode::Direct).unwrap();
        assert_eq!(e.values, vec![1.0, 0.0]);
        assert!(!e.degenerate);

        let e = normalized_error(&traj, &ratio(2, 25), ErrorMode::Reciprocal).unwrap();
        assert_eq!(e.values[0], 1.0);
        assert_eq!(e.values[1], 0.0);
    }

    #[test]
    fn reciprocal_error_matches_hand_evaluation() {
        let traj = [record(0, &[(2, 4), (8, 4)]), record(1, &[(4, 4), (6, 4)])];
        let x = 0.5;
        let d0 = (2.0f64 - x).powi(2) + (0.5f64 - x).powi(2);
        let d1 = (1.0f64 - x).powi(2) + (4.0f64 / 6.0 - x).powi(2);
        let e = normalized_error(&traj, &ratio(1, 2), ErrorMode::Reciprocal).unwrap();
        assert!((e.values[1] - (d1 / d0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_start_is_flagged() {
        let traj = [record(0, &[(6, 2), (3, 1)]), record(1, &[(6, 2), (3, 1)])];
        let e = normalized_error(&traj, &ratio(3, 1), ErrorMode::Direct).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.values, vec![0.0, 0.0]);
    }

    #[test]
    fn error_rejects_bad_input() {
        assert_eq!(
            normalized_error(&[], &ratio(1, 1), ErrorMode::Direct),
            Err(MetricsError::EmptyTrajectory)
        );
        let traj = [record(0, &[(0, 2), (4, 2)])];
        assert_eq!(
            normalized_error(&traj, &ratio(1, 1), ErrorMode::Reciprocal),
            Err(MetricsError::ZeroMass { step: 0, node: 0 })
        );
    }

    #[test]
    fn stats_examples() {
        let s = TrialStats::from_steps(&[converged(8)], None).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (8.0, 0.0, 8, 8));
        assert_eq!(s.fraction_within_bound, None);

        let s = TrialStats::from_steps(&[converged(8), converged(10), converged(12)], Some(10)).unwrap();
        assert_eq!(s.fraction_within_bound, Some(2.0 / 3.0));
        assert_eq!(s.mean, 10.0);
        assert!((s.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);

        assert_eq!(TrialStats::from_steps(&[], None), Err(MetricsError::NoOutcomes));
    }

    #[test]
    fn censored_trials_are_kept_and_never_within_bound() {
        let trials = [converged(4), TrialSteps { steps: 50, converged: false }];
        let s = TrialStats::from_steps(&trials, Some(100)).unwrap();
        assert_eq!(s.trials, 2);
        assert_eq!(s.converged, 1);
        assert_eq!(s.censored, vec![false, true]);
        assert_eq!(s.max, 50);
        assert_eq!(s.fraction_within_bound, Some(0.5));
    }

    proptest! {
        #[test]
        fn stats_are_permutation_invariant(
            steps in prop::collection::vec((1u64..500, any::<bool>()), 1..30),
            bound in 1u64..500,
            rot in 0usize..30,
        ) {
            let trials: Vec<_> = steps.iter().map(|&(s, c)| TrialSteps { steps: s, converged: c }).collect();
            let mut shuffled = trials.clone();
            shuffled.reverse();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            let a = TrialStats::from_steps(&trials, Some(bound)).unwrap();
            let b = TrialStats::from_steps(&shuffled, Some(bound)).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-9);
            prop_assert!((a.std - b.std).abs() < 1e-9);
            prop_assert_eq!((a.min, a.max, a.converged), (b.min, b.max, b.converged));
            prop_assert_eq!(a.fraction_within_bound, b.fraction_within_bound);
        }

        #[test]
        fn error_is_non_negative(
            masses in prop::collection::vec(prop::collection::vec((1i64..200, 1i64..20), 3), 1..6),
            xp in 1i64..100,
            xq in 1i64..100,
        ) {
            let traj: Vec<_> = masses.iter().enumerate().map(|(k, m)| record(k as u64, m)).collect();
            for mode in [ErrorMode::Direct, ErrorMode::Reciprocal] {
                let e = normalized_error(&traj, &ratio(xp, xq), mode).unwrap();
                prop_assert!(e.values.iter().all(|&v| v >= 0.0));
                prop_assert!(e.values[0] == 0.0 || e.values[0] == 1.0);
            }
        }
    }
}
