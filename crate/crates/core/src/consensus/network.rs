use std::collections::{BTreeMap, BTreeSet};

use super::agreement::{propose_candidate, run_multistage_vote, Candidate, NodeDecision};
use super::reputation::{apply_reputation, ProposalVerdict, ReputationTable};
use super::sortition::{committee_threshold, sortition_elect, verify_membership, SortitionParams};
use super::vote::{cert_stage, CvScript, PROPOSAL_STAGE};
use super::{ByzantineProfile, ConsensusError, ConsensusParams, FullNode};
use crate::ids::NodeId;
use crate::ledger::{
    election_seed, validate_block, validate_proposal, Canonical, CertificateCheck, Chain, Digest, KeyRegistry, MaBlock,
    OffchainStore, Principal, Transaction,
};

/// Checks a finalized block's CVScript: signatures, committee membership
/// under the parent's reputation table, and a cert quorum for the block
/// unless it is the empty fallback.
#[derive(Clone, Copy, Debug, Default)]
pub struct CvScriptVerifier {
    pub params: SortitionParams,
}

impl CertificateCheck for CvScriptVerifier {
    fn check(
        &self,
        block: &MaBlock,
        parent: &MaBlock,
        store: &OffchainStore,
        registry: &KeyRegistry,
    ) -> Result<(), String> {
        let raw = store.get_verified(&block.header.cvscript_ptr).map_err(|e| e.to_string())?;
        let cv = CvScript::from_bytes(raw).map_err(|e| format!("cvscript: {e}"))?;
        let raw = store.get_verified(&parent.header.reputation_ptr).map_err(|e| e.to_string())?;
        let table = ReputationTable::from_bytes(raw).map_err(|e| format!("parent reputations: {e}"))?;
        let raw = store.get_verified(&block.header.reputation_ptr).map_err(|e| e.to_string())?;
        let next = ReputationTable::from_bytes(raw).map_err(|e| format!("reputations: {e}"))?;
        if !next.ids().eq(table.ids()) {
            return Err("reputation table changed membership".into());
        }
        let h = block.header.height;
        let seed = &block.header.seed;
        if cv.height != h {
            return Err(format!("cvscript height {} for block {h}", cv.height));
        }
        let last_stage = cert_stage(self.params.r_max - 1);
        for v in &cv.votes {
            if v.height != h || v.stage == PROPOSAL_STAGE || v.stage > last_stage {
                return Err(format!("vote by {} out of place", v.validator));
            }
            if !v.verify(registry) {
                return Err(format!("bad signature on vote by {}", v.validator));
            }
            if !verify_membership(registry, &table, seed, v.stage, v.validator, &self.params) {
                return Err(format!("{} not elected for stage {}", v.validator, v.stage));
            }
        }
        if cv.finalized.is_zero() {
            return if block.is_empty_child_of(parent) {
                Ok(())
            } else {
                Err("empty decision on a non-empty block".into())
            };
        }
        if block.proposal_hash() != cv.finalized {
            return Err("cvscript finalizes a different block".into());
        }
        for r in 0..self.params.r_max {
            let stage = cert_stage(r);
            let size = sortition_elect(registry, &table, seed, stage, &self.params).map_err(|e| e.to_string())?.len();
            if cv.count(stage, &cv.finalized) >= committee_threshold(size, self.params.quorum) {
                return Ok(());
            }
        }
        Err("no cert quorum for the finalized block".into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeightReport {
    pub height: u64,
    pub block_hash: Digest,
    /// Finalized proposal hash; `None` for the empty block.
    pub decided: Option<Digest>,
    /// Proposal stage first, then each vote stage that ran.
    pub committee_sizes: Vec<usize>,
    /// Distinct byzantine nodes elected to any stage.
    pub byz_count: usize,
    pub stages_used: u32,
    pub decisions: BTreeMap<NodeId, NodeDecision>,
    pub safety_violation: bool,
    pub verdicts: BTreeMap<NodeId, ProposalVerdict>,
}

/// Full nodes plus everything they share: keys, off-chain store, chain,
/// reputations and mempool.
pub struct Network {
    pub nodes: Vec<FullNode>,
    pub params: ConsensusParams,
    pub registry: KeyRegistry,
    pub store: OffchainStore,
    pub chain: Chain,
    pub reputations: ReputationTable,
    pub mempool: Vec<Transaction>,
}

impl Network {
    pub fn new(
        master_seed: u64,
        nodes: Vec<FullNode>,
        params: ConsensusParams,
        task_id: u64,
        initial_model: Vec<u8>,
    ) -> Result<Self, ConsensusError> {
        params.sortition.validate()?;
        params.reputation.validate()?;
        let ids: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
        if ids.len() != nodes.len() || ids.is_empty() {
            return Err(ConsensusError::InvalidParams("node ids must be unique and non-empty".into()));
        }
        let mut registry = KeyRegistry::new(master_seed);
        for n in &nodes {
            registry.register(Principal::Node(n.id));
        }
        let reputations = ReputationTable::uniform(ids, params.reputation.r0);
        let mut store = OffchainStore::new();
        let model = store.put(initial_model);
        let rep = store.put(reputations.to_bytes());
        let chain = Chain::new(MaBlock::genesis(task_id, model, rep));
        Ok(Network { nodes, params, registry, store, chain, reputations, mempool: Vec::new() })
    }

    pub fn submit(&mut self, tx: Transaction) {
        self.mempool.push(tx);
    }

    pub fn verifier(&self) -> CvScriptVerifier {
        CvScriptVerifier { params: self.params.sortition }
    }

    pub fn profile(&self, id: NodeId) -> Option<ByzantineProfile> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.profile)
    }

    /// Sortition, proposal, agreement, append, reputation update.
    pub fn run_height(&mut self) -> Result<HeightReport, ConsensusError> {
        let parent = self.chain.tip().clone();
        let height = parent.header.height + 1;
        let seed = election_seed(&parent.hash(), height);
        let sp = self.params.sortition;

        let proposers = sortition_elect(&self.registry, &self.reputations, &seed, PROPOSAL_STAGE, &sp)?;
        let honest_block = propose_candidate(&self.mempool, &parent, &self.store, &self.registry)
            .map_err(|e| ConsensusError::InvalidParams(e.to_string()))?;
        let mut blocks: BTreeMap<Digest, MaBlock> = BTreeMap::new();
        let mut valid: BTreeMap<Digest, bool> = BTreeMap::new();
        let mut candidates = Vec::new();
        let mut verdicts = BTreeMap::new();
        for &(id, priority) in &proposers.members {
            let offer: [MaBlock; 2] = match self.profile(id) {
                Some(ByzantineProfile::Honest) => [honest_block.clone(), honest_block.clone()],
                Some(ByzantineProfile::InvalidProposer) => {
                    let mut b = honest_block.clone();
                    b.header.tx_merkle_root = Digest::of_parts(&[b"corrupt", b.header.tx_merkle_root.as_bytes()]);
                    [b.clone(), b]
                }
                Some(ByzantineProfile::Equivocator) => {
                    let mut b = honest_block.clone();
                    b.txs.pop();
                    b.header.tx_merkle_root = b.computed_merkle_root();
                    [honest_block.clone(), b]
                }
                Some(ByzantineProfile::Silent) | None => continue,
            };
            let values = [offer[0].proposal_hash(), offer[1].proposal_hash()];
            let mut ok = [false; 2];
            for (g, b) in offer.into_iter().enumerate() {
                let v = values[g];
                ok[g] = *valid
                    .entry(v)
                    .or_insert_with(|| validate_proposal(&b, &parent, &self.store, &self.registry).is_ok());
                blocks.entry(v).or_insert(b);
            }
            let verdict = if values[0] != values[1] {
                ProposalVerdict::Equivocated
            } else if !ok[0] {
                ProposalVerdict::Invalid
            } else {
                ProposalVerdict::Valid
            };
            verdicts.insert(id, verdict);
            candidates.push(Candidate { proposer: id, priority, values, valid: ok });
        }

        let agreement =
            run_multistage_vote(&self.nodes, &self.reputations, &self.registry, &candidates, &seed, height, &sp)?;
        let block = if agreement.decision.is_zero() {
            MaBlock::empty_child(&parent)
        } else {
            blocks[&agreement.decision].clone()
        };
        let next = apply_reputation(
            &agreement.cvscript,
            &verdicts,
            &self.reputations,
            &self.params.reputation,
            &self.registry,
        )?;
        let cv_ptr = self.store.put(agreement.cvscript.to_bytes());
        let rep_ptr = self.store.put(next.to_bytes());
        let block = block.with_post_consensus(cv_ptr, rep_ptr);
        validate_block(&block, &parent, &self.store, &self.registry, &self.verifier())
            .map_err(|e| ConsensusError::InvalidParams(format!("finalized block rejected: {e}")))?;

        let included: BTreeSet<Digest> = block.txs.iter().map(Transaction::hash).collect();
        self.mempool.retain(|t| !included.contains(&t.hash()));
        let block_hash = block.hash();
        self.chain.append(block)?;
        self.reputations = next;

        let mut elected: BTreeSet<NodeId> = agreement.elected.iter().copied().collect();
        elected.extend(proposers.members.iter().map(|m| m.0));
        let byz_count = elected.iter().filter(|id| self.profile(**id) != Some(ByzantineProfile::Honest)).count();
        let mut committee_sizes = vec![proposers.len()];
        committee_sizes.extend(&agreement.committee_sizes);
        Ok(HeightReport {
            height,
            block_hash,
            decided: (!agreement.decision.is_zero()).then_some(agreement.decision),
            committee_sizes,
            byz_count,
            stages_used: agreement.stages_used,
            decisions: agreement.decisions,
            safety_violation: agreement.safety_violation,
            verdicts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{build_with_registry, GaTxBody, TxPayload};

    fn network(profiles: &[ByzantineProfile], seed: u64) -> Network {
        let nodes = profiles.iter().enumerate().map(|(i, p)| FullNode { id: NodeId(i as u32), profile: *p }).collect();
        Network::new(seed, nodes, ConsensusParams::default(), 1, b"model-0".to_vec()).unwrap()
    }

    fn push_ga(net: &mut Network, round: u64) -> Transaction {
        let ptr = net.store.put(format!("global {round}").into_bytes());
        let tx = build_with_registry(
            TxPayload::GlobalAggregate(GaTxBody { task_id: 1, round, global_ptr: ptr, aggregator: NodeId(0) }),
            &net.registry,
        )
        .unwrap();
        net.submit(tx.clone());
        tx
    }

    #[test]
    fn honest_network_includes_mempool() {
        let mut net = network(&[ByzantineProfile::Honest; 20], 3);
        let tx = push_ga(&mut net, 1);
        let r = net.run_height().unwrap();
        assert!(r.decided.is_some());
        assert_eq!(net.chain.len(), 2);
        assert_eq!(net.chain.tip().txs, vec![tx]);
        assert!(net.mempool.is_empty());
        let genesis = net.chain.genesis().hash();
        net.chain.validate(&genesis, &net.store, &net.registry, &net.verifier()).unwrap();
    }

    #[test]
    fn candidate_filters_invalid_transactions() {
        let mut net = network(&[ByzantineProfile::Honest; 4], 3);
        for r in 0..4 {
            push_ga(&mut net, r);
        }
        let dangling = build_with_registry(
            TxPayload::GlobalAggregate(GaTxBody {
                task_id: 1,
                round: 9,
                global_ptr: Digest::of(b"nowhere"),
                aggregator: NodeId(0),
            }),
            &net.registry,
        )
        .unwrap();
        net.mempool.insert(2, dangling);
        let b = propose_candidate(&net.mempool, net.chain.tip(), &net.store, &net.registry).unwrap();
        assert_eq!(b.txs.len(), 4);
        let empty = propose_candidate(&[], net.chain.tip(), &net.store, &net.registry).unwrap();
        assert!(empty.txs.is_empty() && empty.is_empty_child_of(net.chain.tip()));
    }

    #[test]
    fn invalid_proposer_block_fails_validation() {
        let mut net = network(&[ByzantineProfile::InvalidProposer; 20], 8);
        push_ga(&mut net, 1);
        let r = net.run_height().unwrap();
        assert!(r.verdicts.values().all(|v| *v == ProposalVerdict::Invalid));
        assert!(r.decided.is_none());
        assert_eq!(net.chain.len(), 2);
    }

    #[test]
    fn byzantine_network_stays_live_and_deterministic() {
        let mut profiles = vec![ByzantineProfile::Honest; 14];
        profiles.extend([
            ByzantineProfile::Equivocator,
            ByzantineProfile::InvalidProposer,
            ByzantineProfile::Silent,
            ByzantineProfile::Equivocator,
            ByzantineProfile::InvalidProposer,
            ByzantineProfile::Silent,
        ]);
        let run = |seed| {
            let mut net = network(&profiles, seed);
            let mut reports = Vec::new();
            for h in 0..40 {
                push_ga(&mut net, h);
                reports.push(net.run_height().unwrap());
            }
            (net.chain.blocks().iter().map(|b| b.to_bytes()).collect::<Vec<_>>(), reports, net)
        };
        let (a, ra, net) = run(5);
        let (b, _, _) = run(5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 41);
        assert!(ra.iter().all(|r| !r.safety_violation));
        let genesis = net.chain.genesis().hash();
        net.chain.validate(&genesis, &net.store, &net.registry, &net.verifier()).unwrap();
    }

    #[test]
    fn forged_certificate_rejected() {
        let mut net = network(&[ByzantineProfile::Honest; 20], 3);
        push_ga(&mut net, 1);
        net.run_height().unwrap();
        let parent = net.chain.genesis().clone();
        let mut block = net.chain.tip().clone();
        let cv = CvScript::from_bytes(net.store.get(&block.header.cvscript_ptr).unwrap()).unwrap();
        let mut thin = cv.clone();
        thin.votes.retain(|v| v.stage != cert_stage(0));
        block.header.cvscript_ptr = net.store.put(thin.to_bytes());
        let err = net.verifier().check(&block, &parent, &net.store, &net.registry).unwrap_err();
        assert!(err.contains("quorum"), "{err}");
    }
}
