use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::vote::CvScript;
use super::ConsensusError;
use crate::ids::NodeId;
use crate::ledger::codec::{Decoder, Encoder};
use crate::ledger::{Canonical, CodecError, KeyRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReputationParams {
    pub delta1: f64,
    pub delta2: f64,
    pub r0: f64,
}

impl Default for ReputationParams {
    fn default() -> Self {
        ReputationParams { delta1: 0.05, delta2: 0.1, r0: 0.5 }
    }
}

impl ReputationParams {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.delta1 > 0.0 && self.delta2 > 0.0 && (0.0..=1.0).contains(&self.r0) {
            Ok(())
        } else {
            Err(ConsensusError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Reputation of every full node, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ReputationTable(pub BTreeMap<NodeId, f64>);

impl ReputationTable {
    pub fn uniform(ids: impl IntoIterator<Item = NodeId>, r: f64) -> Self {
        ReputationTable(ids.into_iter().map(|i| (i, r.clamp(0.0, 1.0))).collect())
    }

    pub fn get(&self, id: NodeId) -> f64 {
        self.0.get(&id).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.keys().copied()
    }
}

impl Canonical for ReputationTable {
    fn encode(&self, e: &mut Encoder) {
        e.seq_len(self.0.len());
        for (id, r) in &self.0 {
            e.u32(id.0).f64(*r);
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let n = d.seq_len(12)?;
        let mut m = BTreeMap::new();
        for _ in 0..n {
            let id = NodeId(d.u32()?);
            let r = d.f64()?;
            if !(0.0..=1.0).contains(&r) {
                return Err(CodecError::Invalid("reputation outside [0,1]"));
            }
            if m.insert(id, r).is_some() {
                return Err(CodecError::Invalid("duplicate node in reputation table"));
            }
        }
        Ok(ReputationTable(m))
    }
}

/// What the network learned about a proposer's block this height.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalVerdict {
    Valid,
    /// Failed validation.
    Invalid,
    /// Different blocks were sent to different peers.
    Equivocated,
}

/// Next height's reputations. Offenders (equivocating voters, bad
/// proposers) lose `delta2` once; everyone else whose votes all match the
/// finalized value gains `delta1`.
pub fn apply_reputation(
    cvscript: &CvScript,
    proposals: &BTreeMap<NodeId, ProposalVerdict>,
    reputations: &ReputationTable,
    params: &ReputationParams,
    registry: &KeyRegistry,
) -> Result<ReputationTable, ConsensusError> {
    let mut seen: BTreeMap<(NodeId, u32), crate::ledger::Digest> = BTreeMap::new();
    let mut equivocators = BTreeSet::new();
    let mut consistent: BTreeMap<NodeId, bool> = BTreeMap::new();
    for v in &cvscript.votes {
        if !v.verify(registry) {
            return Err(ConsensusError::RejectedVote(v.validator));
        }
        if let Some(prev) = seen.insert((v.validator, v.stage), v.value) {
            if prev != v.value {
                equivocators.insert(v.validator);
            }
        }
        let ok = v.height == cvscript.height && v.value == cvscript.finalized;
        *consistent.entry(v.validator).or_insert(true) &= ok;
    }
    let mut out = reputations.clone();
    for (id, r) in out.0.iter_mut() {
        let offended = equivocators.contains(id)
            || matches!(proposals.get(id), Some(ProposalVerdict::Invalid | ProposalVerdict::Equivocated));
        if offended {
            *r = (*r - params.delta2).clamp(0.0, 1.0);
        } else if consistent.get(id) == Some(&true) {
            *r = (*r + params.delta1).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
