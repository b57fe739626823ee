//! Declarative, seeded experiment runner.
//!
//! A JSON [`ExperimentConfig`] names the engine mode, the graph, how initial
//! values are produced and how many trials to run. Trial `i` derives all of
//! its randomness (graph, initial values, engine streams) from
//! `seed + i`, so a sync and an async config sharing a seed run on the same
//! instances. Trials run on a rayon pool and are collected in order; no
//! artifact carries a timestamp, so reruns are byte-identical.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use num::{BigInt, BigRational, Signed, ToPrimitive};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::applications::{
    federated_init, generic_init, scheduling_init, scheduling_recover, ApplicationError, Client,
    FederatedInstance, SchedulingInstance, Server,
};
use crate::async_engine::{run_async_with, AsyncRunConfig, DelayModel, DelayWeights};
use crate::bounds::{theorem1_step_bound, theorem2_step_bound, BoundInputs, BoundsError, BoundsReport};
use crate::digraph::{generate_random_digraph, Digraph, DigraphError, NodeId};
use crate::metrics::{normalized_error, ErrorMode, ErrorSeries, MetricsError, TrialStats, TrialSteps};
use crate::protocol::Recovery;
use crate::sync_engine::{run_sync_with, EngineError, RunOutcome, SyncRunConfig, DEFAULT_MAX_STEPS};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("graph: {0}")]
    Graph(#[from] DigraphError),
    #[error("trial {trial}: {source}")]
    Engine { trial: usize, source: EngineError },
    #[error(transparent)]
    Application(#[from] ApplicationError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn config_err(field: &'static str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Config { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Random { n: usize, edge_prob: f64 },
    File { path: PathBuf },
}

/// Inclusive integer range `[lo, hi]`.
pub type Range = (i64, i64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacities {
    /// Node `j` is server number `j + 1`; even numbers get `even`.
    Alternating { even: i64, odd: i64 },
    Explicit(Vec<i64>),
}

impl Capacities {
    fn of(&self, node: NodeId) -> i64 {
        match self {
            Capacities::Alternating { even, odd } => {
                if (node + 1).is_multiple_of(2) {
                    *even
                } else {
                    *odd
                }
            }
            Capacities::Explicit(c) => c[node % c.len()],
        }
    }
}

fn default_zero_range() -> Range {
    (0, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Explicit {
        y0: Vec<i64>,
        z0: Vec<i64>,
    },
    Generic {
        alpha: Vec<i64>,
        rho: Vec<i64>,
        #[serde(default)]
        literal: bool,
    },
    Uniform {
        y: Range,
        z: Range,
    },
    Scheduling(SchedulingInstance),
    SchedulingRandom {
        load: Range,
        #[serde(default = "default_zero_range")]
        occupied: Range,
        capacities: Capacities,
    },
    Federated {
        instance: FederatedInstance,
        #[serde(default)]
        literal: bool,
    },
    FederatedRandom {
        r_size: Range,
        w_local: Range,
        #[serde(default)]
        literal: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n: Vec<usize>,
    #[serde(default)]
    pub max_delay: Vec<u32>,
}

fn default_trials() -> usize {
    1
}

fn default_retries() -> u32 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub graph: GraphSpec,
    #[serde(default)]
    pub d_override: Option<u32>,
    pub init: InitSpec,
    #[serde(default)]
    pub delay: Option<DelayModel>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub error_mode: Option<ErrorMode>,
    #[serde(default)]
    pub record_trajectory: Option<bool>,
    #[serde(default)]
    pub audit: Option<bool>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn check_range(field: &'static str, (lo, hi): Range, min: i64) -> Result<(), ExperimentError> {
    if lo < min || hi < lo {
        return Err(config_err(field, format!("range [{lo}, {hi}] must satisfy {min} <= lo <= hi")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn new(mode: Mode, graph: GraphSpec, init: InitSpec) -> Self {
        Self {
            mode,
            graph,
            d_override: None,
            init,
            delay: None,
            trials: 1,
            seed: 0,
            max_steps: None,
            epsilon: None,
            error_mode: None,
            record_trajectory: None,
            audit: None,
            max_retries: default_retries(),
            sweep: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        if let GraphSpec::Random { n, edge_prob } = self.graph {
            if n < 2 {
                return Err(config_err("graph.random.n", "must be at least 2"));
            }
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(config_err("graph.random.edge_prob", "must lie in (0, 1]"));
            }
        }
        match (self.mode, &self.delay) {
            (Mode::Async, None) => return Err(config_err("delay", "async mode requires a delay model")),
            (_, Some(d)) if d.max_delay == 0 => return Err(config_err("delay.max_delay", "must be at least 1")),
            _ => {}
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(config_err("epsilon", "must lie strictly between 0 and 1"));
            }
        }
        if self.d_override == Some(0) {
            return Err(config_err("d_override", "must be at least 1"));
        }
        match &self.init {
            InitSpec::Explicit { y0, z0 } if y0.len() != z0.len() => {
                return Err(config_err("init.explicit", "y0 and z0 differ in length"))
            }
            InitSpec::Generic { alpha, rho, .. } if alpha.len() != rho.len() => {
                return Err(config_err("init.generic", "alpha and rho differ in length"))
            }
            InitSpec::Uniform { y, z } => {
                check_range("init.uniform.y", *y, 0)?;
                check_range("init.uniform.z", *z, 1)?;
            }
            InitSpec::SchedulingRandom { load, occupied, capacities } => {
                check_range("init.scheduling_random.load", *load, 0)?;
                check_range("init.scheduling_random.occupied", *occupied, 0)?;
                if let Capacities::Explicit(c) = capacities {
                    if c.is_empty() {
                        return Err(config_err("init.scheduling_random.capacities", "list is empty"));
                    }
                }
            }
            InitSpec::FederatedRandom { r_size, w_local, .. } => {
                check_range("init.federated_random.r_size", *r_size, 1)?;
                check_range("init.federated_random.w_local", *w_local, 0)?;
            }
            _ => {}
        }
        if let Some(sweep) = &self.sweep {
            if sweep.n.is_empty() {
                return Err(config_err("sweep.n", "list is empty"));
            }
            if !matches!(self.graph, GraphSpec::Random { .. }) {
                return Err(config_err("sweep", "sweeps need a random graph"));
            }
            if !sweep.max_delay.is_empty() && self.mode != Mode::Async {
                return Err(config_err("sweep.max_delay", "delay sweeps need async mode"));
            }
            if sweep.max_delay.contains(&0) {
                return Err(config_err("sweep.max_delay", "delays must be at least 1"));
            }
        }
        Ok(())
    }

    fn delays(&self) -> DelayModel {
        match self.mode {
            Mode::Sync => DelayModel::unit(),
            Mode::Async => self.delay.clone().unwrap_or_default(),
        }
    }

    fn records_trajectory(&self) -> bool {
        self.record_trajectory.unwrap_or(self.trials == 1)
    }
}

/// What a trial's terminal quotient means at the application level.
#[derive(Debug, Clone)]
enum Application {
    Quotient,
    Scheduling(SchedulingInstance),
    Federated(FederatedInstance),
}

impl Recovery for Application {
    fn recover(&self, node: NodeId, q_s: i64) -> Option<i64> {
        match self {
            Application::Scheduling(inst) => scheduling_recover(node, q_s, inst).ok(),
            _ => Some(q_s),
        }
    }
}

struct TrialInstance {
    graph: Digraph,
    initial: Vec<(i64, i64)>,
    app: Application,
    engine_seed: u64,
}

fn build_instance(cfg: &ExperimentConfig, fixed: Option<&Digraph>, trial: usize) -> Result<TrialInstance, ExperimentError> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(trial as u64));
    let graph_seed = master.next_u64();
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let engine_seed = master.next_u64();

    let graph = match (&cfg.graph, fixed) {
        (_, Some(g)) => g.clone(),
        (GraphSpec::Random { n, edge_prob }, None) => generate_random_digraph(*n, *edge_prob, graph_seed, cfg.max_retries)?,
        (GraphSpec::File { .. }, None) => unreachable!("file graphs are loaded once up front"),
    };
    let n = graph.node_count();
    let mut draw = |(lo, hi): Range| init_rng.gen_range(lo..=hi);

    let (initial, app) = match &cfg.init {
        InitSpec::Explicit { y0, z0 } => {
            if y0.len() != n {
                return Err(config_err("init.explicit", format!("{} values for a graph with {n} nodes", y0.len())));
            }
            (y0.iter().copied().zip(z0.iter().copied()).collect(), Application::Quotient)
        }
        InitSpec::Generic { alpha, rho, literal } => {
            if alpha.len() != n {
                return Err(config_err("init.generic", format!("{} values for a graph with {n} nodes", alpha.len())));
            }
            (generic_init(alpha, rho, *literal)?.initial, Application::Quotient)
        }
        InitSpec::Uniform { y, z } => ((0..n).map(|_| (draw(*y), draw(*z))).collect(), Application::Quotient),
        InitSpec::Scheduling(inst) => {
            if inst.nodes.len() != n {
                return Err(config_err("init.scheduling", format!("{} servers for a graph with {n} nodes", inst.nodes.len())));
            }
            (scheduling_init(inst)?.initial, Application::Scheduling(inst.clone()))
        }
        InitSpec::SchedulingRandom { load, occupied, capacities } => {
            let inst = SchedulingInstance {
                nodes: (0..n)
                    .map(|j| Server {
                        l: draw(*load),
                        u: draw(*occupied),
                        pi_max: capacities.of(j),
                    })
                    .collect(),
            };
            (scheduling_init(&inst)?.initial, Application::Scheduling(inst))
        }
        InitSpec::Federated { instance, literal } => {
            if instance.nodes.len() != n {
                return Err(config_err("init.federated", format!("{} clients for a graph with {n} nodes", instance.nodes.len())));
            }
            (federated_init(instance, *literal)?.initial, Application::Federated(instance.clone()))
        }
        InitSpec::FederatedRandom { r_size, w_local, literal } => {
            let inst = FederatedInstance {
                nodes: (0..n)
                    .map(|_| Client {
                        r_size: draw(*r_size),
                        w_local: draw(*w_local),
                    })
                    .collect(),
            };
            (federated_init(&inst, *literal)?.initial, Application::Federated(inst))
        }
    };
    Ok(TrialInstance { graph, initial, app, engine_seed })
}

/// Graph and raw initial values of trial `trial`.
pub fn instance(cfg: &ExperimentConfig, trial: usize) -> Result<(Digraph, Vec<(i64, i64)>), ExperimentError> {
    cfg.validate()?;
    let fixed = load_fixed_graph(cfg)?;
    let inst = build_instance(cfg, fixed.as_ref(), trial)?;
    Ok((inst.graph, inst.initial))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialBound {
    pub y_init: u64,
    pub tau: u64,
    pub steps: u64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub n: usize,
    pub diameter: u32,
    pub window: u64,
    pub max_steps: u64,
    pub converged: bool,
    pub censored: bool,
    pub steps: u64,
    /// Common terminal value, when all nodes agree.
    pub q_s: Option<i64>,
    pub spread: i64,
    pub quotient_floor: i64,
    pub quotient_ceil: i64,
    /// Agreement on a value in `{⌊Q⌋, ⌈Q⌉}`.
    pub in_band: bool,
    /// All flags raised at one step.
    pub simultaneous: bool,
    pub messages_emitted: u64,
    /// Largest deviation of a recovered answer from the exact optimum.
    pub solution_error: Option<f64>,
    pub recovered: Vec<Option<i64>>,
    pub bound: Option<TrialBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_series: Option<ErrorSeries>,
}

fn solution_error(app: &Application, initial: &[(i64, i64)], outcome: &RunOutcome) -> Option<f64> {
    if !outcome.converged {
        return None;
    }
    match app {
        Application::Scheduling(inst) => {
            let exact = inst.exact_workloads();
            outcome
                .recovered
                .iter()
                .zip(&exact)
                .map(|(w, x)| {
                    let w = (*w)?;
                    (BigRational::from_integer(BigInt::from(w)) - x).abs().to_f64()
                })
                .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))
        }
        Application::Federated(inst) => {
            let x = inst.exact_aggregate();
            let q = outcome.agreement()?;
            (BigRational::from_integer(BigInt::from(q)) - x).abs().to_f64()
        }
        Application::Quotient => {
            let (sy, sz) = initial.iter().fold((0i64, 0i64), |a, &(y, z)| (a.0 + y, a.1 + z));
            let q = outcome.agreement()?;
            (BigRational::from_integer(BigInt::from(q)) - BigRational::new(sy.into(), sz.into()))
                .abs()
                .to_f64()
        }
    }
}

fn run_trial(cfg: &ExperimentConfig, fixed: Option<&Digraph>, trial: usize) -> Result<TrialRecord, ExperimentError> {
    let inst = build_instance(cfg, fixed, trial)?;
    let g = &inst.graph;
    let diameter = g.diameter();
    let d_used = match cfg.d_override {
        Some(d) if d < diameter => {
            return Err(config_err(
                "d_override",
                format!("d_override {d} is below the sampled diameter {diameter} (trial {trial})"),
            ))
        }
        Some(d) => d,
        None => diameter,
    };
    let delays = cfg.delays();
    delays
        .validate(g.node_count())
        .map_err(|source| ExperimentError::Engine { trial, source })?;

    let bound = match cfg.epsilon {
        Some(eps) => {
            let mut inputs = BoundInputs::from_instance(g, &delays, eps, &inst.initial)?;
            inputs.diameter = d_used;
            let report: BoundsReport = inputs.report()?;
            let (n, d, b) = (report.n, u64::from(d_used), u64::from(delays.max_delay));
            let (tau, steps) = match cfg.mode {
                Mode::Sync => (report.tau_sync, theorem1_step_bound(report.y_init, n, report.tau_sync, d)),
                Mode::Async => (report.tau_async, theorem2_step_bound(report.y_init, n, report.tau_async, d, b)),
            };
            Some(TrialBound { y_init: report.y_init, tau, steps, confidence: report.confidence })
        }
        None => None,
    };
    let window = u64::from(d_used) * u64::from(delays.max_delay);
    let max_steps = cfg
        .max_steps
        .or(bound.as_ref().map(|b| b.steps.saturating_mul(100)))
        .unwrap_or(DEFAULT_MAX_STEPS)
        .max(window);

    let base = SyncRunConfig {
        graph: g,
        initial: inst.initial.clone(),
        window: u64::from(d_used),
        seed: inst.engine_seed,
        max_steps,
        record_trajectory: cfg.records_trajectory(),
        audit: cfg.audit.unwrap_or(cfg!(debug_assertions) || log::log_enabled!(log::Level::Debug)),
    };
    let engine_err = |source| ExperimentError::Engine { trial, source };
    let outcome = match cfg.mode {
        Mode::Sync => run_sync_with(&base, inst.app.clone()).map_err(engine_err)?,
        Mode::Async => run_async_with(&AsyncRunConfig::new(base, delays), inst.app.clone()).map_err(engine_err)?,
    };

    let (sy, sz) = inst.initial.iter().fold((0i64, 0i64), |a, &(y, z)| (a.0 + 2 * y, a.1 + 2 * z));
    let (lo, hi) = (sy.div_euclid(sz), (sy + sz - 1).div_euclid(sz));
    let q_s = outcome.agreement();
    let error_series = match &outcome.trajectory {
        Some(traj) => {
            let mode = cfg.error_mode.unwrap_or(match inst.app {
                Application::Scheduling(_) => ErrorMode::Reciprocal,
                _ => ErrorMode::Direct,
            });
            let x_star = match mode {
                ErrorMode::Direct => BigRational::new(sy.into(), sz.into()),
                ErrorMode::Reciprocal => BigRational::new(sz.into(), sy.max(1).into()),
            };
            normalized_error(traj, &x_star, mode).ok()
        }
        None => None,
    };
    let first_flag = outcome.flag_steps.first().copied().flatten();
    Ok(TrialRecord {
        trial,
        n: g.node_count(),
        diameter,
        window,
        max_steps,
        converged: outcome.converged,
        censored: !outcome.converged,
        steps: outcome.convergence_steps(),
        q_s,
        spread: outcome.spread(),
        quotient_floor: lo,
        quotient_ceil: hi,
        in_band: q_s.is_some_and(|q| q == lo || q == hi),
        simultaneous: first_flag.is_some() && outcome.flag_steps.iter().all(|&s| s == first_flag),
        messages_emitted: outcome.messages_emitted,
        solution_error: solution_error(&inst.app, &inst.initial, &outcome),
        recovered: outcome.recovered,
        bound,
        error_series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsSummary {
    pub epsilon: f64,
    /// Share of trials that terminated within their own step bound.
    pub fraction_within_bound: f64,
    /// Largest per-trial confidence `(1 - ε)^(y_init + n)`.
    pub required_confidence: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub stats: TrialStats,
    pub agreement_failures: usize,
    pub bounds: Option<BoundsSummary>,
    pub trials: Vec<TrialRecord>,
}

fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))
}

fn load_fixed_graph(cfg: &ExperimentConfig) -> Result<Option<Digraph>, ExperimentError> {
    match &cfg.graph {
        GraphSpec::File { path } => Ok(Some(fs::read_to_string(path)?.parse()?)),
        GraphSpec::Random { .. } => Ok(None),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let fixed = load_fixed_graph(cfg)?;
    let pool = worker_pool(workers)?;
    log::info!("running {} {:?} trial(s) from seed {}", cfg.trials, cfg.mode, cfg.seed);
    let trials: Vec<TrialRecord> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, fixed.as_ref(), t))
            .collect::<Result<_, _>>()
    })?;
    summarize(cfg.clone(), trials)
}

fn summarize(config: ExperimentConfig, trials: Vec<TrialRecord>) -> Result<ExperimentReport, ExperimentError> {
    let steps: Vec<TrialSteps> = trials
        .iter()
        .map(|t| TrialSteps { steps: t.steps, converged: t.converged })
        .collect();
    let stats = TrialStats::from_steps(&steps, None)?;
    let bounds = config.epsilon.map(|epsilon| {
        let within = trials
            .iter()
            .filter(|t| t.converged && t.bound.as_ref().is_some_and(|b| t.steps <= b.steps))
            .count();
        let fraction_within_bound = within as f64 / trials.len() as f64;
        let required_confidence = trials
            .iter()
            .filter_map(|t| t.bound.as_ref().map(|b| b.confidence))
            .fold(0.0, f64::max);
        BoundsSummary {
            epsilon,
            fraction_within_bound,
            required_confidence,
            passes: fraction_within_bound >= required_confidence,
        }
    });
    Ok(ExperimentReport {
        agreement_failures: trials.iter().filter(|t| t.converged && !t.in_band).count(),
        config,
        stats,
        bounds,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub n: usize,
    pub max_delay: u32,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, n: usize, max_delay: u32) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.n == n && c.max_delay == max_delay)
    }
}

/// Runs the config once per `(n, B)` grid point. Every cell reuses the base
/// seed, so cells with the same `n` share graphs and initial values.
pub fn run_sweep(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<SweepReport, ExperimentError> {
    cfg.validate()?;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| config_err("sweep", "missing"))?;
    let delays: Vec<u32> = if sweep.max_delay.is_empty() {
        vec![cfg.delay.as_ref().map_or(1, |d| d.max_delay)]
    } else {
        sweep.max_delay.clone()
    };
    let mut cells = Vec::new();
    for &n in &sweep.n {
        for &b in &delays {
            let mut cell = cfg.clone();
            cell.sweep = None;
            if let GraphSpec::Random { n: ref mut size, .. } = cell.graph {
                *size = n;
            }
            if cfg.mode == Mode::Async && !sweep.max_delay.is_empty() {
                cell.delay = Some(match cfg.delay.as_ref().map(|d| &d.weights) {
                    Some(DelayWeights::Uniform) | None => DelayModel::uniform(b),
                    Some(_) => return Err(config_err("sweep.max_delay", "delay sweeps need uniform weights")),
                });
            }
            log::info!("sweep cell n={n} B={b}");
            let report = run_experiment(&cell, workers)?;
            cells.push(SweepCell { n, max_delay: b, report });
        }
    }
    Ok(SweepReport { cells })
}

pub mod presets {
    //! The paper's experiments at desk scale.

    use super::*;

    pub const FIG2_SIZES: [usize; 4] = [50, 100, 200, 300];
    pub const FIG2_DELAYS: [u32; 3] = [5, 10, 15];
    pub const FIG2_FULL_SIZES: [usize; 8] = [50, 100, 200, 300, 500, 1000, 2000, 3000];
    pub const FIG2_FULL_DELAYS: [u32; 6] = [5, 10, 15, 20, 25, 30];

    fn data_center_init() -> InitSpec {
        InitSpec::SchedulingRandom {
            load: (1, 100),
            occupied: (0, 0),
            capacities: Capacities::Alternating { even: 100, odd: 300 },
        }
    }

    /// Synchronous load balancing on 20 nodes.
    pub fn fig1(seed: u64, trials: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            Mode::Sync,
            GraphSpec::Random { n: 20, edge_prob: 0.5 },
            data_center_init(),
        );
        cfg.seed = seed;
        cfg.trials = trials;
        cfg
    }

    /// Federated aggregation on 20 nodes: the synchronous config and its
    /// asynchronous twin with `B = 5` on the same instances.
    pub fn fig3(seed: u64, trials: usize) -> (ExperimentConfig, ExperimentConfig) {
        let mut sync = ExperimentConfig::new(
            Mode::Sync,
            GraphSpec::Random { n: 20, edge_prob: 0.5 },
            InitSpec::FederatedRandom {
                r_size: (10, 100),
                w_local: (1000, 100_000),
                literal: false,
            },
        );
        sync.seed = seed;
        sync.trials = trials;
        let mut asy = sync.clone();
        asy.mode = Mode::Async;
        asy.delay = Some(DelayModel::uniform(5));
        (sync, asy)
    }

    /// Asynchronous load balancing over a grid of sizes and delay bounds.
    pub fn fig2_desk(seed: u64, trials: usize, full_scale: bool) -> ExperimentConfig {
        let (n, max_delay) = if full_scale {
            (FIG2_FULL_SIZES.to_vec(), FIG2_FULL_DELAYS.to_vec())
        } else {
            (FIG2_SIZES.to_vec(), FIG2_DELAYS.to_vec())
        };
        let mut cfg = ExperimentConfig::new(
            Mode::Async,
            GraphSpec::Random { n: n[0], edge_prob: 0.5 },
            data_center_init(),
        );
        cfg.delay = Some(DelayModel::uniform(max_delay[0]));
        cfg.seed = seed;
        cfg.trials = trials;
        cfg.record_trajectory = Some(false);
        cfg.sweep = Some(SweepSpec { n, max_delay });
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn outcomes_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("trial,converged,steps,q_s,spread,censored\n");
    for t in &report.trials {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.trial,
            t.converged,
            t.steps,
            opt(t.q_s),
            t.spread,
            t.censored
        ));
    }
    out
}

pub fn error_series_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("trial,k,e_k\n");
    for t in &report.trials {
        if let Some(e) = &t.error_series {
            for (k, v) in e.steps.iter().zip(&e.values) {
                out.push_str(&format!("{},{},{}\n", t.trial, k, v));
            }
        }
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    stats: &'a TrialStats,
    agreement_failures: usize,
    bounds: &'a Option<BoundsSummary>,
}

pub fn summary_json(report: &ExperimentReport) -> Result<String, ExperimentError> {
    Ok(serde_json::to_string_pretty(&Summary {
        config: &report.config,
        stats: &report.stats,
        agreement_failures: report.agreement_failures,
        bounds: &report.bounds,
    })?)
}

/// Writes `outcomes.csv`, `error_series.csv` and `summary.json` (or
/// `outcomes.json` in place of the CSVs) into `dir`. Returns the paths.
pub fn write_artifacts(report: &ExperimentReport, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match format {
        OutputFormat::Csv => {
            files.push((dir.join("outcomes.csv"), outcomes_csv(report)));
            if report.trials.iter().any(|t| t.error_series.is_some()) {
                files.push((dir.join("error_series.csv"), error_series_csv(report)));
            }
        }
        OutputFormat::Json => {
            files.push((dir.join("outcomes.json"), serde_json::to_string_pretty(&report.trials)?));
        }
    }
    files.push((dir.join("summary.json"), summary_json(report)?));
    for (path, body) in &files {
        fs::write(path, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("n,max_delay,trials,converged,mean,std,min,max\n");
    for c in &report.cells {
        let s = &c.report.stats;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.n, c.max_delay, s.trials, s.converged, s.mean, s.std, s.min, s.max
        ));
    }
    out
}

pub fn write_sweep_artifacts(report: &SweepReport, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let table = match format {
        OutputFormat::Csv => (dir.join("sweep.csv"), sweep_csv(report)),
        OutputFormat::Json => (dir.join("sweep.json"), serde_json::to_string_pretty(&sweep_rows(report))?),
    };
    fs::write(&table.0, &table.1)?;
    written.push(table.0);
    for c in &report.cells {
        let sub = dir.join(format!("n{}_b{}", c.n, c.max_delay));
        written.extend(write_artifacts(&c.report, &sub, format)?);
    }
    Ok(written)
}

#[derive(Serialize)]
struct SweepRow<'a> {
    n: usize,
    max_delay: u32,
    stats: &'a TrialStats,
}

fn sweep_rows(report: &SweepReport) -> Vec<SweepRow<'_>> {
    report
        .cells
        .iter()
        .map(|c| SweepRow { n: c.n, max_delay: c.max_delay, stats: &c.report.stats })
        .collect()
}
