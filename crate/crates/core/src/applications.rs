//! Initial-value mappings for the two applications (load balancing across
//! servers and federated model aggregation) plus the generic quadratic
//! problem, and the rules that turn a terminal quotient back into an
//! application answer.

use log::warn;
use num::{BigInt, BigRational, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digraph::NodeId;
use crate::protocol::Recovery;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApplicationError {
    #[error("instance has no nodes")]
    Empty,
    #[error("total demand {demand} exceeds available capacity {available}")]
    CapacityExceeded { demand: i64, available: i64 },
    #[error("node {node}: {reason}")]
    InvalidNode { node: NodeId, reason: &'static str },
    #[error("terminal quotient is zero; workloads cannot be recovered")]
    ZeroQuotient,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Result of an initial-value mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Initialization {
    pub initial: Vec<(i64, i64)>,
    /// Nodes whose token count had to be raised to one.
    pub fallback_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Server {
    /// Workload of tasks to place, in cycles.
    pub l: i64,
    /// Cycles already occupied.
    pub u: i64,
    pub pi_max: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulingInstance {
    pub nodes: Vec<Server>,
}

impl SchedulingInstance {
    pub fn demand(&self) -> i64 {
        self.nodes.iter().map(|s| s.l).sum()
    }

    pub fn available(&self) -> i64 {
        self.nodes.iter().map(|s| s.pi_max - s.u).sum()
    }

    pub fn validate(&self) -> Result<(), ApplicationError> {
        if self.nodes.is_empty() {
            return Err(ApplicationError::Empty);
        }
        for (node, s) in self.nodes.iter().enumerate() {
            if s.pi_max <= 0 {
                return Err(ApplicationError::InvalidNode { node, reason: "capacity must be positive" });
            }
            if s.l < 0 || s.u < 0 {
                return Err(ApplicationError::InvalidNode { node, reason: "negative workload" });
            }
        }
        let (demand, available) = (self.demand(), self.available());
        if demand > available {
            return Err(ApplicationError::CapacityExceeded { demand, available });
        }
        Ok(())
    }

    /// Balanced utilization `Σ(l + u) / Σπ`.
    pub fn exact_utilization(&self) -> BigRational {
        let load: i64 = self.nodes.iter().map(|s| s.l + s.u).sum();
        let cap: i64 = self.nodes.iter().map(|s| s.pi_max).sum();
        BigRational::new(BigInt::from(load), BigInt::from(cap))
    }

    /// Exact optimal workloads `x*·π_j − u_j`.
    pub fn exact_workloads(&self) -> Vec<BigRational> {
        let x = self.exact_utilization();
        self.nodes
            .iter()
            .map(|s| &x * BigInt::from(s.pi_max) - BigRational::from_integer(BigInt::from(s.u)))
            .collect()
    }
}

/// `y0 = π`, `z0 = l + u`; the terminal quotient approximates the inverse
/// of the balanced utilization.
pub fn scheduling_init(inst: &SchedulingInstance) -> Result<Initialization, ApplicationError> {
    inst.validate()?;
    let mut fallback_nodes = Vec::new();
    let initial = inst
        .nodes
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut z0 = s.l + s.u;
            if z0 == 0 {
                warn!("node {j} has no demand and no occupied cycles; giving it one token");
                fallback_nodes.push(j);
                z0 = 1;
            }
            (s.pi_max, z0)
        })
        .collect();
    Ok(Initialization { initial, fallback_nodes })
}

/// Nearest integer to `p / q` for `q > 0`, halves rounded down.
fn round_half_down(p: i64, q: i64) -> i64 {
    (2 * p + q - 1).div_euclid(2 * q)
}

/// `w* = round(π / q_s) − u`. May be negative, meaning the node should shed
/// load.
pub fn scheduling_recover(node: NodeId, q_s: i64, inst: &SchedulingInstance) -> Result<i64, ApplicationError> {
    if q_s == 0 {
        return Err(ApplicationError::ZeroQuotient);
    }
    let s = inst.nodes.get(node).ok_or(ApplicationError::LengthMismatch {
        expected: inst.nodes.len(),
        got: node + 1,
    })?;
    Ok(round_half_down(s.pi_max, q_s) - s.u)
}

/// Recovery rule handed to the engines for scheduling runs.
#[derive(Debug, Clone)]
pub struct SchedulingRecovery<'a>(pub &'a SchedulingInstance);

impl Recovery for SchedulingRecovery<'_> {
    fn recover(&self, node: NodeId, q_s: i64) -> Option<i64> {
        scheduling_recover(node, q_s, self.0).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Client {
    /// Local dataset size.
    pub r_size: i64,
    /// Quantized local model parameter.
    pub w_local: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederatedInstance {
    pub nodes: Vec<Client>,
}

impl FederatedInstance {
    pub fn validate(&self) -> Result<(), ApplicationError> {
        if self.nodes.is_empty() {
            return Err(ApplicationError::Empty);
        }
        for (node, c) in self.nodes.iter().enumerate() {
            if c.r_size < 1 {
                return Err(ApplicationError::InvalidNode { node, reason: "dataset must be non-empty" });
            }
            if c.w_local < 0 {
                return Err(ApplicationError::InvalidNode { node, reason: "negative model parameter" });
            }
        }
        Ok(())
    }

    /// Dataset-weighted mean of the local parameters.
    pub fn exact_aggregate(&self) -> BigRational {
        let num: i64 = self.nodes.iter().map(|c| c.r_size * c.w_local).sum();
        let den: i64 = self.nodes.iter().map(|c| c.r_size).sum();
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

/// `y0 = |R|·W`, `z0 = |R|`. With `literal` the mass is `W` alone, which
/// does not reproduce the weighted mean.
pub fn federated_init(inst: &FederatedInstance, literal: bool) -> Result<Initialization, ApplicationError> {
    inst.validate()?;
    let initial = inst
        .nodes
        .iter()
        .map(|c| (if literal { c.w_local } else { c.r_size * c.w_local }, c.r_size))
        .collect();
    Ok(Initialization { initial, fallback_nodes: Vec::new() })
}

pub fn federated_recover(q_s: i64) -> i64 {
    q_s
}

/// `y0 = α·ρ`, `z0 = α`, so the quotient is the `α`-weighted mean of `ρ`.
/// With `literal` the token count is `ρ` instead.
pub fn generic_init(alpha: &[i64], rho: &[i64], literal: bool) -> Result<Initialization, ApplicationError> {
    if alpha.is_empty() {
        return Err(ApplicationError::Empty);
    }
    if alpha.len() != rho.len() {
        return Err(ApplicationError::LengthMismatch { expected: alpha.len(), got: rho.len() });
    }
    let mut initial = Vec::with_capacity(alpha.len());
    for (node, (&a, &r)) in alpha.iter().zip(rho).enumerate() {
        if a < 1 {
            return Err(ApplicationError::InvalidNode { node, reason: "alpha must be positive" });
        }
        if r < 0 {
            return Err(ApplicationError::InvalidNode { node, reason: "rho must be non-negative" });
        }
        initial.push((a * r, if literal { r } else { a }));
    }
    Ok(Initialization { initial, fallback_nodes: Vec::new() })
}

/// Minimizer of `Σ α_j (x − ρ_j)²`.
pub fn generic_optimum(alpha: &[i64], rho: &[i64]) -> BigRational {
    let num: i64 = alpha.iter().zip(rho).map(|(a, r)| a * r).sum();
    let den: i64 = alpha.iter().sum();
    if den == 0 {
        return BigRational::zero();
    }
    BigRational::new(BigInt::from(num), BigInt::from(den))
}
