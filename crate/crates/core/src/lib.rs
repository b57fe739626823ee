//! Finite-time distributed optimization of quadratic costs over directed
//! networks, where nodes exchange only integer-valued messages.
//!
//! The crate provides a synchronous engine ([`sync_engine`]) and an
//! asynchronous engine with bounded processing delays ([`async_engine`]),
//! both built on the per-node state machine in [`protocol`]. Closed-form
//! convergence bounds and the exact random-walk oracles that check them live
//! in [`bounds`]; [`applications`] maps task scheduling and federated
//! aggregation onto protocol inputs; [`experiment`] runs seeded trial sweeps.

pub mod applications;
pub mod async_engine;
pub mod bounds;
pub mod digraph;
pub mod experiment;
pub mod metrics;
pub mod protocol;
pub mod sync_engine;

pub use digraph::{generate_random_digraph, Digraph, DigraphError, NodeId};
pub use protocol::{Mass, NodeState, OutboundMessage, ProtocolError, Recovery, VoteMessage};
pub use async_engine::{run_async, AsyncRunConfig, DelayModel};
pub use sync_engine::{run_sync, EngineError, RunOutcome, SyncRunConfig};
