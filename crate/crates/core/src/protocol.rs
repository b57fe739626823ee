//! Per-node state machine shared by the synchronous and asynchronous engines.
//!
//! A node holds an integer mass `y` spread over `z` tokens. Each step it
//! splits `y` into `z` pieces that differ by at most one, keeps a smallest
//! piece and routes the others at random. In parallel it floods a max vote
//! (`⌈y/z⌉`) and a min vote (`⌊y/z⌋`) over a window; when the two extrema
//! are within one of each other the node adopts the min vote and stops.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::digraph::{NodeId, TransmissionRow};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("node {node}: invalid initial values y0={y0}, z0={z0} (need y0 >= 0 and z0 >= 1)")]
    InvalidInitialization { node: NodeId, y0: i64, z0: i64 },
    #[error("node {node}: split requires more than one token, holds {z}")]
    NothingToSplit { node: NodeId, z: i64 },
    #[error("node {node}: transmission row belongs to node {row}")]
    TopologyMismatch { node: NodeId, row: NodeId },
    #[error("message {src} -> {dst} delivered to node {node}")]
    Misaddressed {
        node: NodeId,
        src: NodeId,
        dst: NodeId,
    },
    #[error("node {node}: ratio undefined with {z} tokens")]
    NoTokens { node: NodeId, z: i64 },
}

/// A `(y, z)` pair: summed token value and token count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Mass {
    pub y: i64,
    pub z: i64,
}

impl Mass {
    pub const ZERO: Mass = Mass { y: 0, z: 0 };

    pub fn new(y: i64, z: i64) -> Self {
        Self { y, z }
    }
}

impl std::ops::Add for Mass {
    type Output = Mass;
    fn add(self, rhs: Mass) -> Mass {
        Mass::new(self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::AddAssign for Mass {
    fn add_assign(&mut self, rhs: Mass) {
        self.y += rhs.y;
        self.z += rhs.z;
    }
}

impl std::iter::Sum for Mass {
    fn sum<I: Iterator<Item = Mass>>(iter: I) -> Mass {
        iter.fold(Mass::ZERO, |a, b| a + b)
    }
}

/// A coalesced batch of pieces sent from `src` to one out-neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutboundMessage {
    pub src: NodeId,
    pub dst: NodeId,
    pub c_y: i64,
    pub c_z: i64,
}

impl OutboundMessage {
    pub fn mass(&self) -> Mass {
        Mass::new(self.c_y, self.c_z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VoteMessage {
    pub src: NodeId,
    pub max: i64,
    pub min: i64,
}

/// Result of one mass split: what the node keeps (its minimum piece plus
/// any pieces routed to itself) and what leaves it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub kept: Mass,
    pub outbound: Vec<OutboundMessage>,
}

impl Split {
    pub fn sent(&self) -> Mass {
        self.outbound.iter().map(OutboundMessage::mass).sum()
    }
}

/// Maps a node's terminal quotient to its application-level answer.
pub trait Recovery {
    fn recover(&self, node: NodeId, q_s: i64) -> Option<i64>;
}

/// Reports the terminal quotient unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportQuotient;

impl Recovery for ReportQuotient {
    fn recover(&self, _node: NodeId, q_s: i64) -> Option<i64> {
        Some(q_s)
    }
}

impl<F> Recovery for F
where
    F: Fn(NodeId, i64) -> Option<i64>,
{
    fn recover(&self, node: NodeId, q_s: i64) -> Option<i64> {
        self(node, q_s)
    }
}

pub(crate) fn floor_div(y: i64, z: i64) -> i64 {
    y.div_euclid(z)
}

pub(crate) fn ceil_div(y: i64, z: i64) -> i64 {
    let q = y.div_euclid(z);
    if y.rem_euclid(z) == 0 {
        q
    } else {
        q + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeState {
    pub id: NodeId,
    pub y: i64,
    pub z: i64,
    /// `y` right after initialization (already doubled).
    pub y0_doubled: i64,
    pub max_vote: i64,
    pub min_vote: i64,
    pub q_s: i64,
    pub flag: bool,
    pub solution: Option<i64>,
}

impl NodeState {
    /// Doubles both initial values so every node starts with at least two
    /// tokens. Votes stay at zero until the first window refresh.
    pub fn init(id: NodeId, y0: i64, z0: i64) -> Result<Self, ProtocolError> {
        if z0 < 1 || y0 < 0 {
            return Err(ProtocolError::InvalidInitialization { node: id, y0, z0 });
        }
        let (y, z) = (2 * y0, 2 * z0);
        Ok(Self {
            id,
            y,
            z,
            y0_doubled: y,
            max_vote: 0,
            min_vote: 0,
            q_s: ceil_div(y, z),
            flag: false,
            solution: None,
        })
    }

    pub fn mass(&self) -> Mass {
        Mass::new(self.y, self.z)
    }

    pub fn set_mass(&mut self, mass: Mass) {
        self.y = mass.y;
        self.z = mass.z;
    }

    /// Partitions `y` into `z` pieces of `⌊y/z⌋` or `⌈y/z⌉` (exactly
    /// `y mod z` of the larger value), keeps one smallest piece and routes
    /// each remaining piece independently according to `row`. Pieces routed
    /// to self fold into the kept mass; pieces for the same neighbour are
    /// coalesced. Also sets `q_s = ⌈y/z⌉`. The node's own `(y, z)` is left
    /// untouched; callers hand the result to [`NodeState::absorb`].
    pub fn split_mass<R: Rng + ?Sized>(
        &mut self,
        row: &TransmissionRow,
        rng: &mut R,
    ) -> Result<Split, ProtocolError> {
        if self.z <= 1 {
            return Err(ProtocolError::NothingToSplit {
                node: self.id,
                z: self.z,
            });
        }
        if row.node() != self.id {
            return Err(ProtocolError::TopologyMismatch {
                node: self.id,
                row: row.node(),
            });
        }
        self.q_s = ceil_div(self.y, self.z);

        let small = floor_div(self.y, self.z);
        let large_count = self.y.rem_euclid(self.z);
        let routed = self.z - 1;

        let mut acc = vec![Mass::ZERO; row.len()];
        for piece in 0..routed {
            let value = if piece < large_count { small + 1 } else { small };
            let slot = &mut acc[row.sample_index(rng)];
            slot.y += value;
            slot.z += 1;
        }

        let kept = Mass::new(small, 1) + acc[0];
        let outbound = row
            .support()
            .iter()
            .zip(&acc)
            .skip(1)
            .filter(|(_, m)| m.z > 0)
            .map(|(&dst, m)| OutboundMessage {
                src: self.id,
                dst,
                c_y: m.y,
                c_z: m.z,
            })
            .collect();
        Ok(Split { kept, outbound })
    }

    /// Replaces `(y, z)` with the kept mass plus everything received.
    pub fn absorb(&mut self, kept: Mass, received: &[OutboundMessage]) -> Result<(), ProtocolError> {
        let mut total = kept;
        for msg in received {
            if msg.dst != self.id {
                return Err(ProtocolError::Misaddressed {
                    node: self.id,
                    src: msg.src,
                    dst: msg.dst,
                });
            }
            total += msg.mass();
        }
        self.set_mass(total);
        Ok(())
    }

    pub fn refresh_votes(&mut self) -> Result<(), ProtocolError> {
        self.refresh_votes_from(self.mass())
    }

    /// Resets the votes to the ceiling and floor of `held.y / held.z`.
    pub fn refresh_votes_from(&mut self, held: Mass) -> Result<(), ProtocolError> {
        if held.z <= 0 {
            return Err(ProtocolError::NoTokens {
                node: self.id,
                z: held.z,
            });
        }
        self.max_vote = ceil_div(held.y, held.z);
        self.min_vote = floor_div(held.y, held.z);
        Ok(())
    }

    pub fn vote(&self) -> VoteMessage {
        VoteMessage {
            src: self.id,
            max: self.max_vote,
            min: self.min_vote,
        }
    }

    pub fn merge_votes(&mut self, incoming: &[VoteMessage]) {
        for v in incoming {
            self.max_vote = self.max_vote.max(v.max);
            self.min_vote = self.min_vote.min(v.min);
        }
    }

    /// Window-boundary check: adopts the min vote and raises the flag when
    /// the vote gap is at most one. Returns whether the node terminated.
    pub fn finalize_if_converged<R: Recovery + ?Sized>(&mut self, recovery: &R) -> bool {
        if self.max_vote - self.min_vote <= 1 {
            self.q_s = self.min_vote;
            self.flag = true;
            self.solution = recovery.recover(self.id, self.q_s);
        }
        self.flag
    }
}
