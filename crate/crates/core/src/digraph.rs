//! Static directed communication topologies.
//!
//! Node ids are dense integers `0..n` and every neighbour list is kept sorted
//! ascending, so iteration order never depends on hashing. A [`Digraph`] is
//! only ever constructed strongly connected; its diameter is computed once at
//! construction.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use num::{BigRational, One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum DigraphError {
    #[error("a digraph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error(
        "no strongly connected draw for n={n}, edge_prob={edge_prob} after {max_retries} attempts"
    )]
    GenerationFailed {
        n: usize,
        edge_prob: f64,
        max_retries: u32,
    },
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("edge ({src}, {dst}) references a node outside 0..{n}")]
    NodeOutOfRange { src: NodeId, dst: NodeId, n: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("digraph is not strongly connected: node {to} is unreachable from node {from}")]
    NotStronglyConnected { from: NodeId, to: NodeId },
    #[error("malformed edge list at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A strongly connected digraph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    out_neighbors: Vec<Vec<NodeId>>,
    in_neighbors: Vec<Vec<NodeId>>,
    diameter: u32,
}

impl Digraph {
    /// Builds a digraph from an edge list, rejecting self-loops, duplicates,
    /// out-of-range ids and topologies that are not strongly connected.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, DigraphError> {
        if n < 2 {
            return Err(DigraphError::TooFewNodes(n));
        }
        let mut out_neighbors = vec![Vec::new(); n];
        for &(src, dst) in edges {
            if src >= n || dst >= n {
                return Err(DigraphError::NodeOutOfRange { src, dst, n });
            }
            if src == dst {
                return Err(DigraphError::SelfLoop(src));
            }
            out_neighbors[src].push(dst);
        }
        for (src, list) in out_neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(DigraphError::DuplicateEdge(src, w[0]));
            }
        }
        Self::from_sorted_adjacency(out_neighbors)
    }

    fn from_sorted_adjacency(out_neighbors: Vec<Vec<NodeId>>) -> Result<Self, DigraphError> {
        let in_neighbors = transpose(&out_neighbors);
        let diameter = diameter_of(&out_neighbors)?;
        Ok(Self {
            out_neighbors,
            in_neighbors,
            diameter,
        })
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn ring(n: usize) -> Result<Self, DigraphError> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    /// Every ordered pair of distinct nodes is an edge.
    pub fn complete(n: usize) -> Result<Self, DigraphError> {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self::from_edges(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.out_neighbors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out_neighbors.iter().map(Vec::len).sum()
    }

    pub fn out_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.out_neighbors[node]
    }

    pub fn in_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.in_neighbors[node]
    }

    pub fn out_degree(&self, node: NodeId) -> usize {
        self.out_neighbors[node].len()
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Longest shortest directed path over all ordered pairs.
    pub fn diameter(&self) -> u32 {
        self.diameter
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.out_neighbors
            .iter()
            .enumerate()
            .flat_map(|(src, dsts)| dsts.iter().map(move |&dst| (src, dst)))
    }

    pub fn adjacency(&self) -> &[Vec<NodeId>] {
        &self.out_neighbors
    }

    /// Serializes to the edge-list text format: a `n m` header followed by
    /// one `src dst` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.node_count(), self.edge_count());
        for (src, dst) in self.edges() {
            out.push_str(&format!("{src} {dst}\n"));
        }
        out
    }

    /// Per-node uniform routing distribution over the node itself and its
    /// out-neighbours.
    pub fn transmission_distribution(&self) -> TransmissionDistribution {
        TransmissionDistribution {
            rows: (0..self.node_count())
                .map(|j| TransmissionRow::new(j, self.out_neighbors[j].clone()))
                .collect(),
        }
    }
}

impl fmt::Display for Digraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_edge_list())
    }
}

impl FromStr for Digraph {
    type Err = DigraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(DigraphError::Parse {
            line: 1,
            reason: "missing `n m` header".into(),
        })?;
        let [n, m] = parse_pair(line, header)?;
        let mut edges = Vec::with_capacity(m);
        for (line, text) in lines {
            edges.push(parse_pair(line, text)?.into());
        }
        if edges.len() != m {
            return Err(DigraphError::Parse {
                line,
                reason: format!("header declares {m} edges but {} were listed", edges.len()),
            });
        }
        Self::from_edges(n, &edges)
    }
}

fn parse_pair(line: usize, text: &str) -> Result<[usize; 2], DigraphError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(DigraphError::Parse {
            line,
            reason: format!("expected two integers, found {:?}", text),
        });
    }
    let mut out = [0usize; 2];
    for (slot, field) in out.iter_mut().zip(&fields) {
        *slot = field.parse().map_err(|e| DigraphError::Parse {
            line,
            reason: format!("{field:?}: {e}"),
        })?;
    }
    Ok(out)
}

/// Samples an Erdős–Rényi style digraph where each ordered pair `(i, j)`,
/// `i != j`, is an edge independently with probability `edge_prob`. Draws
/// that are not strongly connected are rejected and re-sampled, up to
/// `max_retries` attempts. The result is a pure function of the arguments.
pub fn generate_random_digraph(
    n: usize,
    edge_prob: f64,
    seed: u64,
    max_retries: u32,
) -> Result<Digraph, DigraphError> {
    if n < 2 {
        return Err(DigraphError::TooFewNodes(n));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(DigraphError::InvalidProbability(edge_prob));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_retries {
        let mut out = vec![Vec::new(); n];
        for (i, list) in out.iter_mut().enumerate() {
            for j in 0..n {
                if i != j && rng.gen_bool(edge_prob) {
                    list.push(j);
                }
            }
        }
        if is_strongly_connected(&out) {
            return Digraph::from_sorted_adjacency(out);
        }
    }
    Err(DigraphError::GenerationFailed {
        n,
        edge_prob,
        max_retries,
    })
}

/// True iff every node reaches every other node. Uses one traversal from
/// node 0 on the graph and one on its transpose.
pub fn is_strongly_connected(out_neighbors: &[Vec<NodeId>]) -> bool {
    if out_neighbors.is_empty() {
        return false;
    }
    let reverse = transpose(out_neighbors);
    bfs_distances(out_neighbors, 0).iter().all(Option::is_some)
        && bfs_distances(&reverse, 0).iter().all(Option::is_some)
}

fn transpose(out_neighbors: &[Vec<NodeId>]) -> Vec<Vec<NodeId>> {
    let mut rev = vec![Vec::new(); out_neighbors.len()];
    // Ascending source order keeps every in-list sorted.
    for (src, dsts) in out_neighbors.iter().enumerate() {
        for &dst in dsts {
            rev[dst].push(src);
        }
    }
    rev
}

fn bfs_distances(adj: &[Vec<NodeId>], source: NodeId) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or_default();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Exact diameter by breadth-first search from every node.
pub fn diameter_of(out_neighbors: &[Vec<NodeId>]) -> Result<u32, DigraphError> {
    let mut diameter = 0;
    for from in 0..out_neighbors.len() {
        for (to, d) in bfs_distances(out_neighbors, from).into_iter().enumerate() {
            match d {
                Some(d) => diameter = diameter.max(d),
                None => return Err(DigraphError::NotStronglyConnected { from, to }),
            }
        }
    }
    Ok(diameter)
}

/// Routing choices for one node: index 0 is the node itself, indices
/// `1..=out_degree` are its out-neighbours in ascending order. Every choice
/// has probability `1 / (1 + out_degree)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionRow {
    node: NodeId,
    support: Vec<NodeId>,
}

impl TransmissionRow {
    fn new(node: NodeId, out_neighbors: Vec<NodeId>) -> Self {
        let mut support = Vec::with_capacity(out_neighbors.len() + 1);
        support.push(node);
        support.extend(out_neighbors);
        Self { node, support }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// The node itself followed by its out-neighbours.
    pub fn support(&self) -> &[NodeId] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Exact probability of routing to `dst` (zero outside the support).
    pub fn probability(&self, dst: NodeId) -> BigRational {
        if self.support.contains(&dst) {
            BigRational::new(One::one(), (self.support.len() as i64).into())
        } else {
            BigRational::zero()
        }
    }

    /// Draws a support index (0 means "self").
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.support.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionDistribution {
    rows: Vec<TransmissionRow>,
}

impl TransmissionDistribution {
    pub fn row(&self, node: NodeId) -> &TransmissionRow {
        &self.rows[node]
    }

    pub fn rows(&self) -> &[TransmissionRow] {
        &self.rows
    }
}
