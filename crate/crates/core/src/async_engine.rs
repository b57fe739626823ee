//! Bounded-delay engine. Every node runs back-to-back processing cycles:
//! a cycle starting at step `s` draws a duration `λ ∈ {1..B}`, splits the
//! node's mass at once (the routed pieces wait in a processing buffer),
//! and at step `s + λ - 1` emits both the buffered pieces and the node's
//! current votes. Votes are merged every step, so vote windows of `D·B`
//! steps reach every node. With `B = 1` the trajectory is the synchronous
//! one.

use num::{BigInt, BigRational, One, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digraph::{NodeId, TransmissionDistribution};
use crate::metrics::TrajectoryRecord;
use crate::protocol::{Mass, NodeState, OutboundMessage, Recovery, ReportQuotient, VoteMessage};
use crate::sync_engine::{
    check_node_invariants, delay_rng, routing_rng, EngineError, RunOutcome, SyncRunConfig, WindowExtrema,
};

/// Integer weights over the delays `1..=max_delay`; entry `i` weighs a
/// delay of `i + 1` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayWeights {
    Uniform,
    Shared(Vec<u32>),
    PerNode(Vec<Vec<u32>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayModel {
    pub max_delay: u32,
    pub weights: DelayWeights,
}

impl DelayModel {
    pub fn uniform(max_delay: u32) -> Self {
        Self {
            max_delay,
            weights: DelayWeights::Uniform,
        }
    }

    pub fn shared(weights: Vec<u32>) -> Self {
        Self {
            max_delay: weights.len() as u32,
            weights: DelayWeights::Shared(weights),
        }
    }

    pub fn per_node(weights: Vec<Vec<u32>>) -> Self {
        Self {
            max_delay: weights.first().map_or(0, |w| w.len() as u32),
            weights: DelayWeights::PerNode(weights),
        }
    }

    pub fn unit() -> Self {
        Self::uniform(1)
    }

    pub fn validate(&self, n: usize) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidDelayModel(msg));
        if self.max_delay == 0 {
            return bad("max_delay must be at least 1".into());
        }
        let check_row = |row: &[u32]| -> Result<(), EngineError> {
            if row.len() != self.max_delay as usize {
                return bad(format!("expected {} weights, got {}", self.max_delay, row.len()));
            }
            if row.iter().all(|&w| w == 0) {
                return bad("weights are all zero".into());
            }
            Ok(())
        };
        match &self.weights {
            DelayWeights::Uniform => Ok(()),
            DelayWeights::Shared(row) => check_row(row),
            DelayWeights::PerNode(rows) => {
                if rows.len() != n {
                    return bad(format!("expected weights for {n} nodes, got {}", rows.len()));
                }
                rows.iter().try_for_each(|r| check_row(r))
            }
        }
    }

    fn weights_of(&self, node: NodeId) -> Vec<u32> {
        match &self.weights {
            DelayWeights::Uniform => vec![1; self.max_delay as usize],
            DelayWeights::Shared(row) => row.clone(),
            DelayWeights::PerNode(rows) => rows[node].clone(),
        }
    }

    /// Exact probabilities of the delays `1..=max_delay` at `node`.
    pub fn pmf(&self, node: NodeId) -> Vec<BigRational> {
        let w = self.weights_of(node);
        let total: u64 = w.iter().map(|&x| u64::from(x)).sum();
        w.iter()
            .map(|&x| BigRational::new(BigInt::from(x), BigInt::from(total)))
            .collect()
    }

    /// Probability that `node` needs the full `max_delay` steps.
    pub fn max_delay_probability(&self, node: NodeId) -> BigRational {
        self.pmf(node).pop().unwrap_or_else(BigRational::zero)
    }

    /// Smallest full-delay probability over the first `n` nodes.
    pub fn min_max_delay_probability(&self, n: usize) -> BigRational {
        (0..n)
            .map(|j| self.max_delay_probability(j))
            .min()
            .unwrap_or_else(BigRational::one)
    }

    fn sampler(&self, node: NodeId) -> WeightedIndex<u32> {
        WeightedIndex::new(self.weights_of(node)).expect("delay weights validated")
    }
}

impl Default for DelayModel {
    fn default() -> Self {
        Self::unit()
    }
}

#[derive(Debug, Clone)]
pub struct AsyncRunConfig<'a> {
    pub base: SyncRunConfig<'a>,
    pub delays: DelayModel,
}

impl<'a> AsyncRunConfig<'a> {
    pub fn new(base: SyncRunConfig<'a>, delays: DelayModel) -> Self {
        Self { base, delays }
    }

    /// Vote-window length `D_used · B`.
    pub fn window(&self) -> u64 {
        self.base.window * u64::from(self.delays.max_delay)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.base.validate()?;
        self.delays.validate(self.base.graph.node_count())?;
        if self.base.max_steps < self.window() {
            return Err(EngineError::MaxStepsBelowWindow {
                max_steps: self.base.max_steps,
                window: self.window(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Cycle {
    next_start: u64,
    emit_at: Option<u64>,
    buffer: Vec<OutboundMessage>,
}

impl Cycle {
    fn buffered(&self) -> Mass {
        self.buffer.iter().map(OutboundMessage::mass).sum()
    }
}

pub struct AsyncEngine<'a, R = ReportQuotient> {
    cfg: AsyncRunConfig<'a>,
    dist: TransmissionDistribution,
    nodes: Vec<NodeState>,
    cycles: Vec<Cycle>,
    routing: Vec<ChaCha8Rng>,
    delaying: Vec<ChaCha8Rng>,
    samplers: Vec<WeightedIndex<u32>>,
    recovery: R,
    step: u64,
    window: u64,
    total: Mass,
    extrema: Option<WindowExtrema>,
    flag_steps: Vec<Option<u64>>,
    messages_emitted: u64,
    trajectory: Option<Vec<TrajectoryRecord>>,
    vote_inbox: Vec<Vec<VoteMessage>>,
    arrivals: Vec<Vec<OutboundMessage>>,
}

impl<'a> AsyncEngine<'a, ReportQuotient> {
    pub fn new(cfg: &AsyncRunConfig<'a>) -> Result<Self, EngineError> {
        Self::with_recovery(cfg, ReportQuotient)
    }
}

impl<'a, R: Recovery> AsyncEngine<'a, R> {
    pub fn with_recovery(cfg: &AsyncRunConfig<'a>, recovery: R) -> Result<Self, EngineError> {
        cfg.validate()?;
        let nodes = cfg.base.init_nodes()?;
        let n = nodes.len();
        let seed = cfg.base.seed;
        let trajectory = cfg
            .base
            .record_trajectory
            .then(|| vec![TrajectoryRecord::capture(0, &nodes, Mass::ZERO, 0)]);
        Ok(Self {
            dist: cfg.base.graph.transmission_distribution(),
            total: nodes.iter().map(NodeState::mass).sum(),
            nodes,
            cycles: vec![
                Cycle {
                    next_start: 1,
                    emit_at: None,
                    buffer: Vec::new(),
                };
                n
            ],
            routing: (0..n).map(|j| routing_rng(seed, j)).collect(),
            delaying: (0..n).map(|j| delay_rng(seed, j)).collect(),
            samplers: (0..n).map(|j| cfg.delays.sampler(j)).collect(),
            recovery,
            step: 0,
            window: cfg.window(),
            extrema: None,
            flag_steps: vec![None; n],
            messages_emitted: 0,
            trajectory,
            vote_inbox: vec![Vec::new(); n],
            arrivals: vec![Vec::new(); n],
            cfg: cfg.clone(),
        })
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn all_flagged(&self) -> bool {
        self.nodes.iter().all(|s| s.flag)
    }

    pub fn messages_emitted(&self) -> u64 {
        self.messages_emitted
    }

    /// Mass waiting in processing buffers.
    pub fn in_flight(&self) -> Mass {
        self.cycles.iter().map(Cycle::buffered).sum()
    }

    /// Node masses plus buffered mass.
    pub fn total_mass(&self) -> Mass {
        self.nodes.iter().map(NodeState::mass).sum::<Mass>() + self.in_flight()
    }

    pub fn step(&mut self) -> Result<(), EngineError> {
        if self.all_flagged() {
            return Ok(());
        }
        let k = self.step + 1;
        let n = self.nodes.len();

        if (k - 1).is_multiple_of(self.window) {
            for j in 0..n {
                if self.nodes[j].flag {
                    continue;
                }
                let held = self.nodes[j].mass() + self.cycles[j].buffered();
                self.nodes[j].refresh_votes_from(held)?;
                self.vote_inbox[j].clear();
            }
            if self.cfg.base.audit {
                self.extrema = WindowExtrema::of(self.nodes.iter().filter(|s| !s.flag));
            }
        }

        for j in 0..n {
            if self.nodes[j].flag || self.cycles[j].next_start != k {
                continue;
            }
            let lambda = self.samplers[j].sample(&mut self.delaying[j]) as u64 + 1;
            let cycle = &mut self.cycles[j];
            cycle.emit_at = Some(k + lambda - 1);
            cycle.next_start = k + lambda;
            let s = &mut self.nodes[j];
            if s.z > 1 {
                let split = s.split_mass(self.dist.row(j), &mut self.routing[j])?;
                s.set_mass(split.kept);
                cycle.buffer = split.outbound;
            }
        }

        for j in 0..n {
            if self.nodes[j].flag || self.cycles[j].emit_at != Some(k) {
                continue;
            }
            self.cycles[j].emit_at = None;
            let vote = self.nodes[j].vote();
            for &dst in self.cfg.base.graph.out_neighbors(j) {
                self.vote_inbox[dst].push(vote);
            }
            self.messages_emitted += self.cycles[j].buffer.len() as u64;
            for msg in self.cycles[j].buffer.drain(..) {
                self.arrivals[msg.dst].push(msg);
            }
        }

        for j in 0..n {
            let s = &mut self.nodes[j];
            if !s.flag {
                s.merge_votes(&self.vote_inbox[j]);
            }
            self.vote_inbox[j].clear();
            let stored = s.mass();
            s.absorb(stored, &self.arrivals[j])?;
            self.arrivals[j].clear();
        }

        if k.is_multiple_of(self.window) {
            let audit = self.cfg.base.audit;
            for s in self.nodes.iter_mut().filter(|s| !s.flag) {
                if let (true, Some(e)) = (audit, self.extrema) {
                    e.check(k, s)?;
                }
                if s.finalize_if_converged(&self.recovery) {
                    self.flag_steps[s.id] = Some(k);
                }
            }
        }

        self.step = k;
        if self.cfg.base.audit {
            self.audit_step()?;
        }
        if self.trajectory.is_some() {
            let in_flight = self.in_flight();
            let pending = self.cycles.iter().map(|c| c.buffer.len() as u64).sum();
            let rec = TrajectoryRecord::capture(k, &self.nodes, in_flight, pending);
            if let Some(t) = self.trajectory.as_mut() {
                t.push(rec);
            }
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

pub fn run_async(cfg: &AsyncRunConfig<'_>) -> Result<RunOutcome, EngineError> {
    run_async_with(cfg, ReportQuotient)
}

pub fn run_async_with<R: Recovery>(
    cfg: &AsyncRunConfig<'_>,
    recovery: R,
) -> Result<RunOutcome, EngineError> {
    let mut engine = AsyncEngine::with_recovery(cfg, recovery)?;
    while !engine.all_flagged() && engine.current_step() < cfg.base.max_steps {
        engine.step()?;
    }
    Ok(engine.into_outcome())
}
