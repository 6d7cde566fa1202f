//! Reputation-weighted committee consensus over MA blocks.
//!
//! Each height runs four phases: sortition elects proposers and voters from
//! the reputation table, proposers package the mempool, committees re-elected
//! per stage run soft and cert votes, and the signed votes (the CVScript)
//! drive the next reputation table. Both the CVScript and the table live
//! off-chain behind header pointers.

mod agreement;
mod network;
mod reputation;
mod sortition;
mod vote;

pub use agreement::{propose_candidate, run_multistage_vote, Agreement, Candidate, NodeDecision};
pub use network::{CvScriptVerifier, HeightReport, Network};
pub use reputation::{apply_reputation, ProposalVerdict, ReputationParams, ReputationTable};
pub use sortition::{committee_threshold, sortition_elect, verify_membership, Committee, SortitionParams};
pub use vote::{cert_stage, soft_stage, CvScript, Vote, PROPOSAL_STAGE};

use serde::{Deserialize, Serialize};

use crate::ids::NodeId;
use crate::ledger::{ChainError, CodecError, KeyError, StoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ByzantineProfile {
    Honest,
    /// Never proposes or votes.
    Silent,
    /// Sends conflicting proposals and votes to the two halves of the network.
    Equivocator,
    /// Proposes blocks with a corrupted merkle root; votes honestly.
    InvalidProposer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FullNode {
    pub id: NodeId,
    pub profile: ByzantineProfile,
}

impl FullNode {
    pub fn honest(id: u32) -> Self {
        FullNode { id: NodeId(id), profile: ByzantineProfile::Honest }
    }

    pub fn is_honest(&self) -> bool {
        self.profile == ByzantineProfile::Honest
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusParams {
    pub sortition: SortitionParams,
    pub reputation: ReputationParams,
}

#[derive(Debug, thiserror::Error)]
pub enum ConsensusError {
    #[error("no node has positive reputation")]
    NoElectableNodes,
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("vote from {0} has an invalid signature")]
    RejectedVote(NodeId),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}
