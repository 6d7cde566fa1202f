//! Simulator and library for social-trust-driven hierarchical federated
//! learning on a reputation-governed blockchain.

pub mod coalition;
pub mod consensus;
pub mod flsim;
pub mod harness;
pub mod ids;
pub mod ledger;
pub mod provenance;
pub mod rng;
pub mod social_graph;

pub use ids::{AvatarId, NodeId};
