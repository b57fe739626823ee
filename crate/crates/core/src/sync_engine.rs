//! Lockstep engine: every step each active node refreshes its votes at the
//! start of a window, exchanges votes with its in-neighbours, splits and
//! routes its mass, absorbs everything delivered in the same step and, at
//! the end of a window, checks the termination rule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::digraph::{Digraph, NodeId, TransmissionDistribution};
use crate::metrics::TrajectoryRecord;
use crate::protocol::{Mass, NodeState, OutboundMessage, ProtocolError, Recovery, ReportQuotient, VoteMessage};

pub const DEFAULT_MAX_STEPS: u64 = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("window length {window} is below the graph diameter {diameter}")]
    WindowBelowDiameter { window: u64, diameter: u32 },
    #[error("max_steps {max_steps} is below the window length {window}")]
    MaxStepsBelowWindow { max_steps: u64, window: u64 },
    #[error("expected {expected} initial (y0, z0) pairs, got {got}")]
    InitialLength { expected: usize, got: usize },
    #[error("invalid delay model: {0}")]
    InvalidDelayModel(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("mass not conserved at step {step}: expected {expected:?}, found {found:?}")]
    ConservationBreach { step: u64, expected: Mass, found: Mass },
    #[error("invariant violated at step {step}, node {node}: {what}")]
    InvariantBreach {
        step: u64,
        node: NodeId,
        what: &'static str,
    },
    #[error("node {node} ended window at step {step} with votes ({max}, {min}), global extrema are ({global_max}, {global_min})")]
    WindowInsufficient {
        step: u64,
        node: NodeId,
        max: i64,
        min: i64,
        global_max: i64,
        global_min: i64,
    },
}

/// Inputs of one run. `window` is the vote-window length: the diameter or
/// any known upper bound on it.
#[derive(Debug, Clone)]
pub struct SyncRunConfig<'a> {
    pub graph: &'a Digraph,
    pub initial: Vec<(i64, i64)>,
    pub window: u64,
    pub seed: u64,
    pub max_steps: u64,
    pub record_trajectory: bool,
    /// Per-step conservation and invariant checks.
    pub audit: bool,
}

impl<'a> SyncRunConfig<'a> {
    pub fn new(graph: &'a Digraph, initial: Vec<(i64, i64)>, seed: u64) -> Self {
        Self {
            graph,
            initial,
            window: u64::from(graph.diameter()),
            seed,
            max_steps: DEFAULT_MAX_STEPS,
            record_trajectory: false,
            audit: cfg!(debug_assertions),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let n = self.graph.node_count();
        if self.initial.len() != n {
            return Err(EngineError::InitialLength {
                expected: n,
                got: self.initial.len(),
            });
        }
        if self.window < u64::from(self.graph.diameter()) {
            return Err(EngineError::WindowBelowDiameter {
                window: self.window,
                diameter: self.graph.diameter(),
            });
        }
        if self.max_steps < self.window {
            return Err(EngineError::MaxStepsBelowWindow {
                max_steps: self.max_steps,
                window: self.window,
            });
        }
        Ok(())
    }

    pub(crate) fn init_nodes(&self) -> Result<Vec<NodeState>, EngineError> {
        self.initial
            .iter()
            .enumerate()
            .map(|(j, &(y0, z0))| NodeState::init(j, y0, z0).map_err(EngineError::from))
            .collect()
    }
}

/// Terminal report of a run. A run that hits `max_steps` is reported with
/// `converged = false` and the last node states, not as an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub converged: bool,
    pub termination_step: Option<u64>,
    pub steps_executed: u64,
    pub window: u64,
    pub final_q_s: Vec<i64>,
    pub recovered: Vec<Option<i64>>,
    /// Step at which each node raised its flag.
    pub flag_steps: Vec<Option<u64>>,
    pub messages_emitted: u64,
    pub final_nodes: Vec<NodeState>,
    pub trajectory: Option<Vec<TrajectoryRecord>>,
}

impl RunOutcome {
    /// The common terminal value, if every node holds the same one.
    pub fn agreement(&self) -> Option<i64> {
        let first = *self.final_q_s.first()?;
        self.final_q_s.iter().all(|&q| q == first).then_some(first)
    }

    pub fn spread(&self) -> i64 {
        let max = self.final_q_s.iter().max().copied().unwrap_or(0);
        let min = self.final_q_s.iter().min().copied().unwrap_or(0);
        max - min
    }

    /// Steps charged to this run in statistics: the termination step, or
    /// `steps_executed` for a censored run.
    pub fn convergence_steps(&self) -> u64 {
        self.termination_step.unwrap_or(self.steps_executed)
    }
}

pub(crate) fn routing_rng(seed: u64, node: NodeId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * node as u64);
    rng
}

pub(crate) fn delay_rng(seed: u64, node: NodeId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * node as u64 + 1);
    rng
}

/// Window-initial extrema recorded for the audit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WindowExtrema {
    pub max: i64,
    pub min: i64,
}

impl WindowExtrema {
    pub(crate) fn of<'n>(nodes: impl Iterator<Item = &'n NodeState>) -> Option<Self> {
        nodes.fold(None, |acc, s| {
            Some(match acc {
                None => WindowExtrema {
                    max: s.max_vote,
                    min: s.min_vote,
                },
                Some(e) => WindowExtrema {
                    max: e.max.max(s.max_vote),
                    min: e.min.min(s.min_vote),
                },
            })
        })
    }

    pub(crate) fn check(&self, step: u64, s: &NodeState) -> Result<(), EngineError> {
        if s.max_vote != self.max || s.min_vote != self.min {
            return Err(EngineError::WindowInsufficient {
                step,
                node: s.id,
                max: s.max_vote,
                min: s.min_vote,
                global_max: self.max,
                global_min: self.min,
            });
        }
        Ok(())
    }
}

pub(crate) fn check_node_invariants(step: u64, s: &NodeState) -> Result<(), EngineError> {
    let breach = |what| {
        Err(EngineError::InvariantBreach {
            step,
            node: s.id,
            what,
        })
    };
    if s.z < 1 {
        return breach("node holds no token");
    }
    if s.y < 0 {
        return breach("negative mass");
    }
    if s.max_vote < s.min_vote {
        return breach("max vote below min vote");
    }
    if s.flag && (s.max_vote - s.min_vote > 1 || s.q_s != s.min_vote) {
        return breach("flag raised without vote agreement");
    }
    Ok(())
}

pub struct SyncEngine<'a, R = ReportQuotient> {
    graph: &'a Digraph,
    dist: TransmissionDistribution,
    nodes: Vec<NodeState>,
    rngs: Vec<ChaCha8Rng>,
    recovery: R,
    step: u64,
    window: u64,
    total: Mass,
    audit: bool,
    extrema: Option<WindowExtrema>,
    flag_steps: Vec<Option<u64>>,
    messages_emitted: u64,
    trajectory: Option<Vec<TrajectoryRecord>>,
    votes: Vec<VoteMessage>,
    inbox: Vec<Vec<OutboundMessage>>,
    kept: Vec<Mass>,
}

impl<'a> SyncEngine<'a, ReportQuotient> {
    pub fn new(cfg: &SyncRunConfig<'a>) -> Result<Self, EngineError> {
        Self::with_recovery(cfg, ReportQuotient)
    }
}

impl<'a, R: Recovery> SyncEngine<'a, R> {
    pub fn with_recovery(cfg: &SyncRunConfig<'a>, recovery: R) -> Result<Self, EngineError> {
        cfg.validate()?;
        let nodes = cfg.init_nodes()?;
        let n = nodes.len();
        let total = nodes.iter().map(NodeState::mass).sum();
        let trajectory = cfg
            .record_trajectory
            .then(|| vec![TrajectoryRecord::capture(0, &nodes, Mass::ZERO, 0)]);
        Ok(Self {
            graph: cfg.graph,
            dist: cfg.graph.transmission_distribution(),
            rngs: (0..n).map(|j| routing_rng(cfg.seed, j)).collect(),
            nodes,
            recovery,
            step: 0,
            window: cfg.window,
            total,
            audit: cfg.audit,
            extrema: None,
            flag_steps: vec![None; n],
            messages_emitted: 0,
            trajectory,
            votes: Vec::with_capacity(n),
            inbox: vec![Vec::new(); n],
            kept: vec![Mass::ZERO; n],
        })
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Index of the last executed step (0 before the first).
    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn all_flagged(&self) -> bool {
        self.nodes.iter().all(|s| s.flag)
    }

    pub fn messages_emitted(&self) -> u64 {
        self.messages_emitted
    }

    pub fn total_mass(&self) -> Mass {
        self.nodes.iter().map(NodeState::mass).sum()
    }

    /// Executes one synchronous step. A fully terminated engine is left
    /// untouched.
    pub fn step(&mut self) -> Result<(), EngineError> {
        if self.all_flagged() {
            return Ok(());
        }
        let k = self.step + 1;

        if (k - 1).is_multiple_of(self.window) {
            for s in self.nodes.iter_mut().filter(|s| !s.flag) {
                s.refresh_votes()?;
            }
            if self.audit {
                self.extrema = WindowExtrema::of(self.nodes.iter().filter(|s| !s.flag));
            }
        }

        // Votes are broadcast before anyone merges, so every node sees its
        // in-neighbours' values from the start of this step.
        self.votes.clear();
        self.votes.extend(self.nodes.iter().map(NodeState::vote));
        for j in 0..self.nodes.len() {
            if self.nodes[j].flag {
                continue;
            }
            let incoming: Vec<VoteMessage> = self
                .graph
                .in_neighbors(j)
                .iter()
                .filter(|&&i| !self.nodes[i].flag)
                .map(|&i| self.votes[i])
                .collect();
            self.nodes[j].merge_votes(&incoming);
        }

        for j in 0..self.nodes.len() {
            let s = &mut self.nodes[j];
            self.kept[j] = s.mass();
            if s.flag || s.z <= 1 {
                continue;
            }
            let split = s.split_mass(self.dist.row(j), &mut self.rngs[j])?;
            self.kept[j] = split.kept;
            self.messages_emitted += split.outbound.len() as u64;
            for msg in split.outbound {
                self.inbox[msg.dst].push(msg);
            }
        }

        for (j, s) in self.nodes.iter_mut().enumerate() {
            s.absorb(self.kept[j], &self.inbox[j])?;
            self.inbox[j].clear();
        }

        if k.is_multiple_of(self.window) {
            for s in self.nodes.iter_mut().filter(|s| !s.flag) {
                if let Some(e) = self.extrema.filter(|_| self.audit) {
                    e.check(k, s)?;
                }
                if s.finalize_if_converged(&self.recovery) {
                    self.flag_steps[s.id] = Some(k);
                }
            }
        }

        self.step = k;
        if self.audit {
            self.audit_step()?;
        }
        if let Some(t) = self.trajectory.as_mut() {
            t.push(TrajectoryRecord::capture(k, &self.nodes, Mass::ZERO, 0));
        }
        Ok(())
    }

    fn audit_step(&self) -> Result<(), EngineError> {
        let found = self.total_mass();
        if found != self.total {
            return Err(EngineError::ConservationBreach {
                step: self.step,
                expected: self.total,
                found,
            });
        }
        for s in &self.nodes {
            check_node_invariants(self.step, s)?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> RunOutcome {
        let converged = self.all_flagged();
        RunOutcome {
            converged,
            termination_step: converged
                .then(|| self.flag_steps.iter().flatten().copied().max())
                .flatten(),
            steps_executed: self.step,
            window: self.window,
            final_q_s: self.nodes.iter().map(|s| s.q_s).collect(),
            recovered: self.nodes.iter().map(|s| s.solution).collect(),
            flag_steps: self.flag_steps,
            messages_emitted: self.messages_emitted,
            final_nodes: self.nodes,
            trajectory: self.trajectory,
        }
    }
}

pub fn run_sync(cfg: &SyncRunConfig<'_>) -> Result<RunOutcome, EngineError> {
    run_sync_with(cfg, ReportQuotient)
}

pub fn run_sync_with<R: Recovery>(
    cfg: &SyncRunConfig<'_>,
    recovery: R,
) -> Result<RunOutcome, EngineError> {
    let mut engine = SyncEngine::with_recovery(cfg, recovery)?;
    while !engine.all_flagged() && engine.current_step() < cfg.max_steps {
        engine.step()?;
    }
    Ok(engine.into_outcome())
}
