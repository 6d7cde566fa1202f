use serde::{Deserialize, Serialize};

use super::reputation::ReputationTable;
use super::ConsensusError;
use crate::ids::NodeId;
use crate::ledger::{Digest, KeyRegistry, Principal};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SortitionParams {
    /// Expected committee size `k`.
    pub committee_size: f64,
    pub quorum: f64,
    /// Soft/cert stage pairs tried before falling back to the empty block.
    pub r_max: u32,
}

impl Default for SortitionParams {
    fn default() -> Self {
        SortitionParams { committee_size: 10.0, quorum: 2.0 / 3.0, r_max: 3 }
    }
}

impl SortitionParams {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.committee_size >= 1.0 && self.quorum > 0.5 && self.quorum <= 1.0 && self.r_max >= 1 {
            Ok(())
        } else {
            Err(ConsensusError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Elected members of one stage with their priorities, ordered by id.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Committee {
    pub members: Vec<(NodeId, f64)>,
}

impl Committee {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.members.binary_search_by_key(&id, |m| m.0).is_ok()
    }

    pub fn priority(&self, id: NodeId) -> Option<f64> {
        self.members.binary_search_by_key(&id, |m| m.0).ok().map(|k| self.members[k].1)
    }
}

fn vrf_input(seed: &Digest, stage: u32) -> Vec<u8> {
    let mut v = seed.as_bytes().to_vec();
    v.extend_from_slice(&stage.to_le_bytes());
    v
}

fn vrf_value(registry: &KeyRegistry, id: NodeId, seed: &Digest, stage: u32) -> Result<f64, ConsensusError> {
    Ok(registry.vrf(Principal::Node(id), &vrf_input(seed, stage))?.to_unit_interval())
}

/// Node `i` is elected iff its VRF output falls below `k * r_i / sum(r)`.
pub fn sortition_elect(
    registry: &KeyRegistry,
    reputations: &ReputationTable,
    seed: &Digest,
    stage: u32,
    params: &SortitionParams,
) -> Result<Committee, ConsensusError> {
    let total = reputations.total();
    if !(total > 0.0) {
        return Err(ConsensusError::NoElectableNodes);
    }
    let mut members = Vec::new();
    for (&id, &r) in &reputations.0 {
        let v = vrf_value(registry, id, seed, stage)?;
        if v < params.committee_size * r / total {
            members.push((id, v));
        }
    }
    Ok(Committee { members })
}

/// Re-checks a membership claim from public data.
pub fn verify_membership(
    registry: &KeyRegistry,
    reputations: &ReputationTable,
    seed: &Digest,
    stage: u32,
    id: NodeId,
    params: &SortitionParams,
) -> bool {
    let total = reputations.total();
    match vrf_value(registry, id, seed, stage) {
        Ok(v) => total > 0.0 && v < params.committee_size * reputations.get(id) / total,
        Err(_) => false,
    }
}

/// Votes needed out of a committee of `size`: `ceil(quorum * size)`, at least 1.
pub fn committee_threshold(size: usize, quorum: f64) -> usize {
    ((quorum * size as f64 - 1e-9).ceil() as usize).max(1)
}
