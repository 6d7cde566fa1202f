use std::collections::BTreeMap;

use super::reputation::ReputationTable;
use super::sortition::{committee_threshold, sortition_elect, SortitionParams};
use super::vote::{cert_stage, soft_stage, CvScript, Vote};
use super::{ByzantineProfile, ConsensusError, FullNode};
use crate::ids::NodeId;
use crate::ledger::{build_block, BlockError, Digest, KeyRegistry, MaBlock, OffchainStore, Transaction, TxPayload};

/// Packages every mempool transaction that verifies and whose pointers
/// resolve. The task id follows the first trTx and the global pointer the
/// last gaTx; otherwise both carry over from `parent`.
pub fn propose_candidate(
    mempool: &[Transaction],
    parent: &MaBlock,
    store: &OffchainStore,
    registry: &KeyRegistry,
) -> Result<MaBlock, BlockError> {
    let txs: Vec<Transaction> = mempool
        .iter()
        .filter(|tx| tx.verify(registry).is_ok() && tx.pointers().iter().all(|p| store.get_verified(p).is_ok()))
        .cloned()
        .collect();
    let mut task_id = parent.header.task_id;
    let mut global = parent.header.global_result_ptr;
    let mut seen_task = false;
    for tx in &txs {
        match tx.payload() {
            TxPayload::TaskRequest(b) if !seen_task => {
                task_id = b.task_id;
                seen_task = true;
            }
            TxPayload::GlobalAggregate(b) => global = b.global_ptr,
            _ => {}
        }
    }
    build_block(parent, txs, task_id, global, registry)
}

/// One proposer's offer as seen by each half of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub proposer: NodeId,
    pub priority: f64,
    /// Proposal hash delivered to group 0 and group 1.
    pub values: [Digest; 2],
    pub valid: [bool; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeDecision {
    /// Reached a cert quorum on this value (`Digest::ZERO` is the empty block).
    Decided(Digest),
    /// Ran out of rounds and fell back to the empty block.
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agreement {
    /// Finalized proposal hash, or `Digest::ZERO` for the empty block.
    pub decision: Digest,
    pub cvscript: CvScript,
    /// Honest nodes only.
    pub decisions: BTreeMap<NodeId, NodeDecision>,
    /// Committee size of every vote stage that ran, in order.
    pub committee_sizes: Vec<usize>,
    /// Members of every vote stage that ran.
    pub elected: Vec<NodeId>,
    pub stages_used: u32,
    pub safety_violation: bool,
}

/// Which half of the network a node sits in for this height. Equivocators
/// exploit the split.
pub(crate) fn group_of(seed: &Digest, id: NodeId) -> usize {
    (Digest::of_parts(&[b"socialfl/group", seed.as_bytes(), &id.0.to_le_bytes()]).0[0] & 1) as usize
}

#[derive(Default, Clone, Copy)]
struct NodeState {
    locked: Option<Digest>,
    decided: Option<Digest>,
}

/// Synchronous soft/cert voting with committees re-drawn every stage.
pub fn run_multistage_vote(
    nodes: &[FullNode],
    reputations: &ReputationTable,
    registry: &KeyRegistry,
    candidates: &[Candidate],
    seed: &Digest,
    height: u64,
    params: &SortitionParams,
) -> Result<Agreement, ConsensusError> {
    let profile: BTreeMap<NodeId, ByzantineProfile> = nodes.iter().map(|n| (n.id, n.profile)).collect();
    let group: BTreeMap<NodeId, usize> = nodes.iter().map(|n| (n.id, group_of(seed, n.id))).collect();
    let preference: [Digest; 2] = [0, 1].map(|g| {
        candidates
            .iter()
            .filter(|c| c.valid[g])
            .min_by(|a, b| a.priority.total_cmp(&b.priority).then(a.proposer.cmp(&b.proposer)))
            .map_or(Digest::ZERO, |c| c.values[g])
    });
    // What an equivocator sends to each half.
    let split = {
        let a = preference[0];
        let b = if preference[1] != a { preference[1] } else { Digest::ZERO };
        [a, b]
    };
    let follows_protocol =
        |id: &NodeId| matches!(profile.get(id), Some(ByzantineProfile::Honest | ByzantineProfile::InvalidProposer));
    let mut state: BTreeMap<NodeId, NodeState> =
        nodes.iter().filter(|n| follows_protocol(&n.id)).map(|n| (n.id, NodeState::default())).collect();

    let mut votes: Vec<Vote> = Vec::new();
    let mut sizes = Vec::new();
    let mut elected = Vec::new();
    let mut stages_used = 0;

    // Casts one stage. `choose` gives a protocol-following member's vote.
    let mut cast = |stage: u32,
                    choose: &dyn Fn(NodeId) -> Option<Digest>,
                    votes: &mut Vec<Vote>|
     -> Result<(usize, [BTreeMap<Digest, usize>; 2]), ConsensusError> {
        let committee = sortition_elect(registry, reputations, seed, stage, params)?;
        let mut tally: [BTreeMap<Digest, usize>; 2] = Default::default();
        for &(id, _) in &committee.members {
            elected.push(id);
            let sent: [Option<Digest>; 2] = match profile.get(&id) {
                Some(ByzantineProfile::Silent) | None => [None, None],
                Some(ByzantineProfile::Equivocator) => [Some(split[0]), Some(split[1])],
                Some(_) => {
                    let v = choose(id);
                    [v, v]
                }
            };
            for (g, v) in sent.iter().enumerate() {
                if let Some(v) = v {
                    *tally[g].entry(*v).or_default() += 1;
                    if g == 0 || sent[0] != sent[1] {
                        votes.push(Vote::sign(registry, id, height, stage, *v)?);
                    }
                }
            }
        }
        Ok((committee.len(), tally))
    };
    let reached = |tally: &BTreeMap<Digest, usize>, t: usize| tally.iter().find(|(_, c)| **c >= t).map(|(v, _)| *v);

    for r in 0..params.r_max {
        let snapshot = state.clone();
        let soft_choice = |id: NodeId| {
            let s = snapshot[&id];
            Some(s.decided.or(s.locked).unwrap_or(preference[group[&id]]))
        };
        let (n, tally) = cast(soft_stage(r), &soft_choice, &mut votes)?;
        sizes.push(n);
        let t = committee_threshold(n, params.quorum);
        let certified = [reached(&tally[0], t), reached(&tally[1], t)];
        for (id, s) in state.iter_mut() {
            if let Some(v) = certified[group[id]] {
                s.locked = Some(v);
            }
        }

        let snapshot = state.clone();
        let cert_choice = |id: NodeId| snapshot[&id].decided.or(certified[group[&id]]);
        let (n, tally) = cast(cert_stage(r), &cert_choice, &mut votes)?;
        sizes.push(n);
        let t = committee_threshold(n, params.quorum);
        let decided = [reached(&tally[0], t), reached(&tally[1], t)];
        for (id, s) in state.iter_mut() {
            if s.decided.is_none() {
                s.decided = decided[group[id]];
            }
        }
        stages_used = cert_stage(r) + 1;
        let mut honest = state.iter().filter(|(id, _)| profile[id] == ByzantineProfile::Honest).peekable();
        if honest.peek().is_some() && honest.all(|(_, s)| s.decided.is_some()) {
            break;
        }
    }

    let decisions: BTreeMap<NodeId, NodeDecision> = state
        .iter()
        .filter(|(id, _)| profile[id] == ByzantineProfile::Honest)
        .map(|(id, s)| (*id, s.decided.map_or(NodeDecision::Fallback, NodeDecision::Decided)))
        .collect();
    let mut backing: BTreeMap<Digest, usize> = BTreeMap::new();
    for d in decisions.values() {
        if let NodeDecision::Decided(v) = d {
            if !v.is_zero() {
                *backing.entry(*v).or_default() += 1;
            }
        }
    }
    let safety_violation = backing.len() > 1;
    // Catch-up: a non-empty honest decision is adopted by everyone else.
    let decision = backing.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(Digest::ZERO, |(v, _)| *v);

    votes.sort_by_key(|v| (v.stage, v.validator, v.value));
    elected.sort();
    elected.dedup();
    Ok(Agreement {
        decision,
        cvscript: CvScript { height, votes, finalized: decision },
        decisions,
        committee_sizes: sizes,
        elected,
        stages_used,
        safety_violation,
    })
}
