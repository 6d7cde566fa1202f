use crate::ids::NodeId;
use crate::ledger::codec::{Decoder, Encoder};
use crate::ledger::{Canonical, CodecError, Digest, KeyError, KeyRegistry, Principal, Signature};

/// Stage 0 elects proposers; round `r` votes at `soft_stage(r)` then `cert_stage(r)`.
pub const PROPOSAL_STAGE: u32 = 0;

pub fn soft_stage(round: u32) -> u32 {
    1 + 2 * round
}

pub fn cert_stage(round: u32) -> u32 {
    2 + 2 * round
}

/// A signed vote. `value` is a proposal hash, or `Digest::ZERO` for the empty block.
#[derive(Clone, Debug, PartialEq)]
pub struct Vote {
    pub validator: NodeId,
    pub height: u64,
    pub stage: u32,
    pub value: Digest,
    pub signature: Signature,
}

fn signing_bytes(validator: NodeId, height: u64, stage: u32, value: &Digest) -> Vec<u8> {
    let mut e = Encoder::new();
    e.bytes(b"socialfl/vote").u32(validator.0).u64(height).u32(stage).digest(value);
    e.finish()
}

impl Vote {
    pub fn sign(
        registry: &KeyRegistry,
        validator: NodeId,
        height: u64,
        stage: u32,
        value: Digest,
    ) -> Result<Vote, KeyError> {
        let key = registry.signing_key(Principal::Node(validator))?;
        let signature = key.sign(&signing_bytes(validator, height, stage, &value));
        Ok(Vote { validator, height, stage, value, signature })
    }

    pub fn verify(&self, registry: &KeyRegistry) -> bool {
        registry.verify(
            Principal::Node(self.validator),
            &signing_bytes(self.validator, self.height, self.stage, &self.value),
            &self.signature,
        )
    }
}

impl Canonical for Vote {
    fn encode(&self, e: &mut Encoder) {
        e.u32(self.validator.0).u64(self.height).u32(self.stage).digest(&self.value);
        e.digest(&Digest(self.signature.0));
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Vote {
            validator: NodeId(d.u32()?),
            height: d.u64()?,
            stage: d.u32()?,
            value: d.digest()?,
            signature: Signature(d.digest()?.0),
        })
    }
}

/// Every vote cast at one height plus the value the height finalized.
#[derive(Clone, Debug, PartialEq)]
pub struct CvScript {
    pub height: u64,
    pub votes: Vec<Vote>,
    pub finalized: Digest,
}

impl CvScript {
    /// Distinct validators that voted `value` at `stage`.
    pub fn count(&self, stage: u32, value: &Digest) -> usize {
        let mut ids: Vec<NodeId> =
            self.votes.iter().filter(|v| v.stage == stage && v.value == *value).map(|v| v.validator).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    }
}

impl Canonical for CvScript {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.height);
        e.seq_len(self.votes.len());
        for v in &self.votes {
            v.encode(e);
        }
        e.digest(&self.finalized);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let height = d.u64()?;
        let n = d.seq_len(80)?;
        let votes = (0..n).map(|_| Vote::decode(d)).collect::<Result<_, _>>()?;
        Ok(CvScript { height, votes, finalized: d.digest()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_sign_verify_and_codec() {
        let mut reg = KeyRegistry::new(1);
        reg.register(Principal::Node(NodeId(3)));
        let v = Vote::sign(&reg, NodeId(3), 9, soft_stage(1), Digest::of(b"b")).unwrap();
        assert!(v.verify(&reg));
        let mut forged = v.clone();
        forged.stage = cert_stage(1);
        assert!(!forged.verify(&reg));
        assert!(Vote::sign(&reg, NodeId(4), 9, 1, Digest::ZERO).is_err());

        let cv = CvScript { height: 9, votes: vec![v.clone(), v], finalized: Digest::ZERO };
        let bytes = cv.to_bytes();
        assert_eq!(CvScript::from_bytes(&bytes).unwrap(), cv);
        assert_eq!(cv.count(3, &Digest::of(b"b")), 1);
        assert!(CvScript::from_bytes(&bytes[1..]).is_err());
    }

    #[test]
    fn stage_numbering() {
        assert_eq!((soft_stage(0), cert_stage(0), soft_stage(2), cert_stage(2)), (1, 2, 5, 6));
    }
}
