//! Closed-form convergence quantities and exact random-walk oracles.
//!
//! Probabilities are exact [`BigRational`]s. The window counts `τ` are the
//! smallest integers with `(1 - p)^τ <= ε`, where `p` is the per-window
//! visit probability.

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::async_engine::DelayModel;
use crate::digraph::{Digraph, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(f64),
    #[error("diameter must be at least 1")]
    Diameter,
    #[error("maximum out-degree must be at least 1")]
    OutDegree,
    #[error("visit probability must lie in (0, 1], got {0}")]
    Probability(String),
    #[error("node {node} is out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: NodeId, n: usize },
}

fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn check_shape(d: u32, dmax: u32) -> Result<(), BoundsError> {
    if d == 0 {
        return Err(BoundsError::Diameter);
    }
    if dmax == 0 {
        return Err(BoundsError::OutDegree);
    }
    Ok(())
}

/// `(1 + dmax)^(-d)`: lower bound on a token visiting any given node within
/// one window of `d` steps.
pub fn lemma1_bound(d: u32, dmax: u32) -> Result<BigRational, BoundsError> {
    check_shape(d, dmax)?;
    Ok(num::pow(ratio(1, 1 + i64::from(dmax)), d as usize))
}

/// The delayed analogue over `d·B` steps, scaled by `bmin^d` where `bmin`
/// is the smallest probability of a full-length processing delay.
pub fn lemma2_bound(d: u32, dmax: u32, bmin: &BigRational) -> Result<BigRational, BoundsError> {
    if !bmin.is_positive() || *bmin > BigRational::one() {
        return Err(BoundsError::Probability(bmin.to_string()));
    }
    Ok(lemma1_bound(d, dmax)? * num::pow(bmin.clone(), d as usize))
}

/// Smallest `τ >= 1` with `(1 - p)^τ <= epsilon`.
pub fn tau_for_probability(epsilon: f64, p: &BigRational) -> Result<u64, BoundsError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(BoundsError::Epsilon(epsilon));
    }
    if !p.is_positive() || *p > BigRational::one() {
        return Err(BoundsError::Probability(p.to_string()));
    }
    if p.is_one() {
        return Ok(1);
    }
    let pf = p.to_f64().unwrap_or(0.0);
    let miss = |t: u64| -> f64 {
        if pf > 1e-6 {
            (1.0 - pf).powf(t as f64)
        } else {
            (t as f64 * (-pf).ln_1p()).exp()
        }
    };
    let mut t = (epsilon.ln() / (-pf).ln_1p()).ceil().max(1.0) as u64;
    while t > 1 && miss(t - 1) <= epsilon {
        t -= 1;
    }
    while miss(t) > epsilon {
        t += 1;
    }
    Ok(t)
}

pub fn tau_sync(epsilon: f64, d: u32, dmax: u32) -> Result<u64, BoundsError> {
    tau_for_probability(epsilon, &lemma1_bound(d, dmax)?)
}

pub fn tau_async(epsilon: f64, d: u32, dmax: u32, bmin: &BigRational) -> Result<u64, BoundsError> {
    tau_for_probability(epsilon, &lemma2_bound(d, dmax, bmin)?)
}

/// Total deviation of the initial values from the band `[⌊q⌋, ⌈q⌉]`.
pub fn y_init(y0: &[i64], q: &BigRational) -> u64 {
    let lo = q.floor().to_integer();
    let hi = q.ceil().to_integer();
    y0.iter()
        .map(|&y| {
            let y = BigInt::from(y);
            if y > hi {
                y - &hi
            } else if y < lo {
                &lo - y
            } else {
                BigInt::zero()
            }
        })
        .sum::<BigInt>()
        .to_u64()
        .unwrap_or(u64::MAX)
}

/// Step count after which the synchronous run has terminated with
/// probability at least `(1 - ε)^(y_init + n)`.
pub fn theorem1_step_bound(y_init: u64, n: u64, tau: u64, d: u64) -> u64 {
    let windows = ((y_init + n) * tau * d).div_ceil(d);
    windows * d + d
}

/// Delayed counterpart of [`theorem1_step_bound`] with windows of `d·b`.
pub fn theorem2_step_bound(y_init: u64, n: u64, tau: u64, d: u64, b: u64) -> u64 {
    let w = d * b;
    let windows = ((y_init + n) * tau * w).div_ceil(w);
    windows * w + w
}

/// `(1 - ε)^(y_init + n)`.
pub fn confidence(epsilon: f64, y_init: u64, n: u64) -> f64 {
    (1.0 - epsilon).powf((y_init + n) as f64)
}

fn check_node(g: &Digraph, node: NodeId) -> Result<(), BoundsError> {
    let n = g.node_count();
    if node >= n {
        return Err(BoundsError::NodeOutOfRange { node, n });
    }
    Ok(())
}

/// Exact distribution of a single token after `steps` moves, where each
/// move follows the sender's transmission distribution.
pub fn token_walk_distribution(g: &Digraph, start: NodeId, steps: u32) -> Result<Vec<BigRational>, BoundsError> {
    check_node(g, start)?;
    let dist = g.transmission_distribution();
    let n = g.node_count();
    let mut cur = vec![BigRational::zero(); n];
    cur[start] = BigRational::one();
    for _ in 0..steps {
        let mut next = vec![BigRational::zero(); n];
        for (v, mass) in cur.iter().enumerate().filter(|(_, m)| !m.is_zero()) {
            let row = dist.row(v);
            let share = mass / BigRational::from_integer(BigInt::from(row.len()));
            for &u in row.support() {
                next[u] += &share;
            }
        }
        cur = next;
    }
    Ok(cur)
}

pub fn token_walk_oracle(g: &Digraph, start: NodeId, target: NodeId, steps: u32) -> Result<BigRational, BoundsError> {
    check_node(g, target)?;
    Ok(token_walk_distribution(g, start, steps)?.swap_remove(target))
}

/// Exact probability that a token sits at `target` after `steps` steps
/// when every node holds it for a random processing time drawn from
/// `delays` before forwarding it. The chain runs on (node, residual delay).
pub fn delayed_walk_oracle(
    g: &Digraph,
    delays: &DelayModel,
    start: NodeId,
    target: NodeId,
    steps: u32,
) -> Result<BigRational, BoundsError> {
    check_node(g, start)?;
    check_node(g, target)?;
    let n = g.node_count();
    let b = delays.max_delay as usize;
    let dist = g.transmission_distribution();
    let pmfs: Vec<Vec<BigRational>> = (0..n).map(|j| delays.pmf(j)).collect();

    // cur[v][r - 1]: token at v, leaving after r more steps.
    let mut cur = vec![vec![BigRational::zero(); b]; n];
    for (r, p) in pmfs[start].iter().enumerate() {
        cur[start][r] = p.clone();
    }
    for _ in 0..steps {
        let mut next = vec![vec![BigRational::zero(); b]; n];
        for v in 0..n {
            for r in 1..b {
                if !cur[v][r].is_zero() {
                    next[v][r - 1] += &cur[v][r];
                }
            }
            if cur[v][0].is_zero() {
                continue;
            }
            let row = dist.row(v);
            let share = &cur[v][0] / BigRational::from_integer(BigInt::from(row.len()));
            for &u in row.support() {
                for (r, p) in pmfs[u].iter().enumerate() {
                    next[u][r] += &share * p;
                }
            }
        }
        cur = next;
    }
    Ok(cur[target].iter().cloned().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub diameter: u32,
    pub max_out_degree: u32,
    pub epsilon: f64,
    pub max_delay: u32,
    pub bmin: BigRational,
    pub n: u64,
    pub y_init: u64,
    pub q_tasks: BigRational,
}

impl BoundInputs {
    /// Gathers the inputs for a concrete instance. `initial` holds the raw
    /// `(y0, z0)` pairs; the quotient and the initial error are taken on
    /// the doubled values the protocol starts from.
    pub fn from_instance(
        g: &Digraph,
        delays: &DelayModel,
        epsilon: f64,
        initial: &[(i64, i64)],
    ) -> Result<Self, BoundsError> {
        let y0: Vec<i64> = initial.iter().map(|&(y, _)| 2 * y).collect();
        let sy: i64 = y0.iter().sum();
        let sz: i64 = initial.iter().map(|&(_, z)| 2 * z).sum();
        if sz <= 0 {
            return Err(BoundsError::Probability("empty token count".into()));
        }
        let q_tasks = ratio(sy, sz);
        Ok(Self {
            diameter: g.diameter(),
            max_out_degree: g.max_out_degree() as u32,
            epsilon,
            max_delay: delays.max_delay,
            bmin: delays.min_max_delay_probability(g.node_count()),
            n: g.node_count() as u64,
            y_init: y_init(&y0, &q_tasks),
            q_tasks,
        })
    }

    pub fn report(&self) -> Result<BoundsReport, BoundsError> {
        let (d, dmax) = (self.diameter, self.max_out_degree);
        let l1 = lemma1_bound(d, dmax)?;
        let l2 = lemma2_bound(d, dmax, &self.bmin)?;
        let tau_sync = tau_for_probability(self.epsilon, &l1)?;
        let tau_async = tau_for_probability(self.epsilon, &l2)?;
        let d64 = u64::from(d);
        Ok(BoundsReport {
            n: self.n,
            diameter: d,
            max_out_degree: dmax,
            epsilon: self.epsilon,
            max_delay: self.max_delay,
            bmin: self.bmin.to_string(),
            q_tasks: self.q_tasks.to_string(),
            q_tasks_value: self.q_tasks.to_f64().unwrap_or(f64::NAN),
            y_init: self.y_init,
            lemma1: l1.to_string(),
            lemma1_value: l1.to_f64().unwrap_or(0.0),
            lemma2: l2.to_string(),
            lemma2_value: l2.to_f64().unwrap_or(0.0),
            tau_sync,
            tau_async,
            theorem1_steps: theorem1_step_bound(self.y_init, self.n, tau_sync, d64),
            theorem2_steps: theorem2_step_bound(self.y_init, self.n, tau_async, d64, u64::from(self.max_delay)),
            confidence: confidence(self.epsilon, self.y_init, self.n),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub n: u64,
    pub diameter: u32,
    pub max_out_degree: u32,
    pub epsilon: f64,
    pub max_delay: u32,
    pub bmin: String,
    pub q_tasks: String,
    pub q_tasks_value: f64,
    pub y_init: u64,
    pub lemma1: String,
    pub lemma1_value: f64,
    pub lemma2: String,
    pub lemma2_value: f64,
    pub tau_sync: u64,
    pub tau_async: u64,
    pub theorem1_steps: u64,
    pub theorem2_steps: u64,
    pub confidence: f64,
}

impl BoundsReport {
    /// Key-value lines in a fixed order.
    pub fn to_table(&self) -> String {
        let rows: [(&str, String); 18] = [
            ("n", self.n.to_string()),
            ("diameter", self.diameter.to_string()),
            ("max_out_degree", self.max_out_degree.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("max_delay", self.max_delay.to_string()),
            ("bmin", self.bmin.clone()),
            ("q_tasks", self.q_tasks.clone()),
            ("q_tasks_value", self.q_tasks_value.to_string()),
            ("y_init", self.y_init.to_string()),
            ("lemma1", self.lemma1.clone()),
            ("lemma1_value", self.lemma1_value.to_string()),
            ("lemma2", self.lemma2.clone()),
            ("lemma2_value", self.lemma2_value.to_string()),
            ("tau_sync", self.tau_sync.to_string()),
            ("tau_async", self.tau_async.to_string()),
            ("theorem1_steps", self.theorem1_steps.to_string()),
            ("theorem2_steps", self.theorem2_steps.to_string()),
            ("confidence", self.confidence.to_string()),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

/// Smallest `p` such that no pair's `steps`-step visit probability falls
/// below it; used to compare against the lemma bounds.
pub fn min_visit_probability(g: &Digraph, steps: u32) -> BigRational {
    (0..g.node_count())
        .filter_map(|s| token_walk_distribution(g, s, steps).ok())
        .flat_map(|row| row.into_iter())
        .min()
        .unwrap_or_else(BigRational::zero)
}
