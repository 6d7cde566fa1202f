//! The transaction kinds carried by model-aggregation blocks.

use super::codec::{Canonical, CodecError, Decoder, Encoder};
use super::keys::{KeyError, KeyRegistry, Principal, Signature, SigningKey};
use super::Digest;
use crate::ids::{AvatarId, NodeId};

/// FL task request.
#[derive(Clone, Debug, PartialEq)]
pub struct TrTxBody {
    pub task_id: u64,
    pub timestamp: u64,
    pub requester: u32,
    pub task_reward: f64,
    pub initial_model_ptr: Digest,
    pub expected_performance: f64,
    /// On-chain anchor of the requester's payment hashchain.
    pub payment_anchor: Digest,
}

/// Social-layer aggregation result of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct SaTxBody {
    pub task_id: u64,
    pub round: u64,
    /// Strictly ascending.
    pub members: Vec<AvatarId>,
    pub aggregate_ptr: Digest,
    pub contributions: Vec<f64>,
}

/// Global aggregation result, signed by the consensus node that computed it.
#[derive(Clone, Debug, PartialEq)]
pub struct GaTxBody {
    pub task_id: u64,
    pub round: u64,
    pub global_ptr: Digest,
    pub aggregator: NodeId,
}

/// Outcome of an ownership verification, synchronised on-chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ProvenanceTxBody {
    pub task_id: u64,
    pub verdict_ptr: Digest,
    pub verifier: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrTx {
    pub body: TrTxBody,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaTx {
    pub body: SaTxBody,
    /// One per member, in member order.
    pub signatures: Vec<Signature>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaTx {
    pub body: GaTxBody,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProvenanceTx {
    pub body: ProvenanceTxBody,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transaction {
    TaskRequest(TrTx),
    SocialAggregate(SaTx),
    GlobalAggregate(GaTx),
    Provenance(ProvenanceTx),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TxPayload {
    TaskRequest(TrTxBody),
    SocialAggregate(SaTxBody),
    GlobalAggregate(GaTxBody),
    Provenance(ProvenanceTxBody),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TxError {
    #[error("multi-signature incomplete: missing {missing:?}")]
    IncompleteMultisig { missing: Vec<AvatarId> },
    #[error("no signing key supplied for {0}")]
    MissingSigner(Principal),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("bad signature from {0}")]
    BadSignature(Principal),
    #[error("malformed transaction: {0}")]
    Malformed(&'static str),
}

const DOMAIN: &[u8] = b"socialfl/tx/v1";

impl TrTxBody {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.task_id)
            .u64(self.timestamp)
            .u32(self.requester)
            .f64(self.task_reward)
            .digest(&self.initial_model_ptr)
            .f64(self.expected_performance)
            .digest(&self.payment_anchor);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(TrTxBody {
            task_id: d.u64()?,
            timestamp: d.u64()?,
            requester: d.u32()?,
            task_reward: d.f64()?,
            initial_model_ptr: d.digest()?,
            expected_performance: d.f64()?,
            payment_anchor: d.digest()?,
        })
    }
}

impl SaTxBody {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.task_id).u64(self.round).seq_len(self.members.len());
        for m in &self.members {
            e.u32(m.0);
        }
        e.digest(&self.aggregate_ptr).seq_len(self.contributions.len());
        for c in &self.contributions {
            e.f64(*c);
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let task_id = d.u64()?;
        let round = d.u64()?;
        let n = d.seq_len(4)?;
        let members = (0..n).map(|_| d.u32().map(AvatarId)).collect::<Result<_, _>>()?;
        let aggregate_ptr = d.digest()?;
        let n = d.seq_len(8)?;
        let contributions = (0..n).map(|_| d.f64()).collect::<Result<_, _>>()?;
        Ok(SaTxBody { task_id, round, members, aggregate_ptr, contributions })
    }
}

impl GaTxBody {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.task_id).u64(self.round).digest(&self.global_ptr).u32(self.aggregator.0);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(GaTxBody { task_id: d.u64()?, round: d.u64()?, global_ptr: d.digest()?, aggregator: NodeId(d.u32()?) })
    }
}

impl ProvenanceTxBody {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.task_id).digest(&self.verdict_ptr).u32(self.verifier.0);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ProvenanceTxBody { task_id: d.u64()?, verdict_ptr: d.digest()?, verifier: NodeId(d.u32()?) })
    }
}

impl TxPayload {
    fn tag(&self) -> u8 {
        match self {
            TxPayload::TaskRequest(_) => 1,
            TxPayload::SocialAggregate(_) => 2,
            TxPayload::GlobalAggregate(_) => 3,
            TxPayload::Provenance(_) => 4,
        }
    }

    /// Bytes covered by the signature(s).
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(DOMAIN).u8(self.tag());
        match self {
            TxPayload::TaskRequest(b) => b.encode(&mut e),
            TxPayload::SocialAggregate(b) => b.encode(&mut e),
            TxPayload::GlobalAggregate(b) => b.encode(&mut e),
            TxPayload::Provenance(b) => b.encode(&mut e),
        }
        e.finish()
    }

    /// Principals whose signatures the transaction must carry, in order.
    pub fn required_signers(&self) -> Vec<Principal> {
        match self {
            TxPayload::TaskRequest(b) => vec![Principal::Requester(b.requester)],
            TxPayload::SocialAggregate(b) => b.members.iter().map(|m| Principal::Avatar(*m)).collect(),
            TxPayload::GlobalAggregate(b) => vec![Principal::Node(b.aggregator)],
            TxPayload::Provenance(b) => vec![Principal::Node(b.verifier)],
        }
    }

    fn check_shape(&self) -> Result<(), TxError> {
        match self {
            TxPayload::SocialAggregate(b) => {
                if b.members.is_empty() {
                    return Err(TxError::Malformed("saTx without members"));
                }
                if b.members.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(TxError::Malformed("saTx members not strictly ascending"));
                }
                if b.contributions.len() != b.members.len() {
                    return Err(TxError::Malformed("saTx contribution count differs from member count"));
                }
                if b.contributions.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                    return Err(TxError::Malformed("saTx contribution not positive"));
                }
            }
            TxPayload::TaskRequest(b) => {
                if !(b.expected_performance > 0.0 && b.expected_performance <= 1.0) {
                    return Err(TxError::Malformed("trTx expected performance outside (0,1]"));
                }
                if !b.task_reward.is_finite() || b.task_reward < 0.0 {
                    return Err(TxError::Malformed("trTx reward negative"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Signs `payload` with the supplied keys.
///
/// A `SaTx` needs one key per listed member; any missing member yields
/// [`TxError::IncompleteMultisig`].
pub fn build_transaction(payload: TxPayload, keys: &[SigningKey]) -> Result<Transaction, TxError> {
    payload.check_shape()?;
    let msg = payload.signing_bytes();
    let required = payload.required_signers();
    let find = |p: Principal| keys.iter().find(|k| k.principal() == p);
    let mut sigs = Vec::with_capacity(required.len());
    let mut missing = Vec::new();
    for p in &required {
        match find(*p) {
            Some(k) => sigs.push(k.sign(&msg)),
            None => match p {
                Principal::Avatar(a) if matches!(payload, TxPayload::SocialAggregate(_)) => missing.push(*a),
                _ => return Err(TxError::MissingSigner(*p)),
            },
        }
    }
    if !missing.is_empty() {
        return Err(TxError::IncompleteMultisig { missing });
    }
    Ok(Transaction::assemble(payload, sigs))
}

/// Looks up every required key in `registry` and signs.
pub fn build_with_registry(payload: TxPayload, registry: &KeyRegistry) -> Result<Transaction, TxError> {
    let keys =
        payload.required_signers().into_iter().map(|p| registry.signing_key(p)).collect::<Result<Vec<_>, _>>()?;
    build_transaction(payload, &keys)
}

impl Transaction {
    fn assemble(payload: TxPayload, mut sigs: Vec<Signature>) -> Transaction {
        match payload {
            TxPayload::TaskRequest(body) => Transaction::TaskRequest(TrTx { body, signature: sigs.remove(0) }),
            TxPayload::SocialAggregate(body) => Transaction::SocialAggregate(SaTx { body, signatures: sigs }),
            TxPayload::GlobalAggregate(body) => Transaction::GlobalAggregate(GaTx { body, signature: sigs.remove(0) }),
            TxPayload::Provenance(body) => Transaction::Provenance(ProvenanceTx { body, signature: sigs.remove(0) }),
        }
    }

    pub fn payload(&self) -> TxPayload {
        match self {
            Transaction::TaskRequest(t) => TxPayload::TaskRequest(t.body.clone()),
            Transaction::SocialAggregate(t) => TxPayload::SocialAggregate(t.body.clone()),
            Transaction::GlobalAggregate(t) => TxPayload::GlobalAggregate(t.body.clone()),
            Transaction::Provenance(t) => TxPayload::Provenance(t.body.clone()),
        }
    }

    pub fn signatures(&self) -> Vec<Signature> {
        match self {
            Transaction::TaskRequest(t) => vec![t.signature],
            Transaction::SocialAggregate(t) => t.signatures.clone(),
            Transaction::GlobalAggregate(t) => vec![t.signature],
            Transaction::Provenance(t) => vec![t.signature],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Transaction::TaskRequest(_) => "trTx",
            Transaction::SocialAggregate(_) => "saTx",
            Transaction::GlobalAggregate(_) => "gaTx",
            Transaction::Provenance(_) => "provTx",
        }
    }

    /// Off-chain digests this transaction points at.
    pub fn pointers(&self) -> Vec<Digest> {
        match self {
            Transaction::TaskRequest(t) => vec![t.body.initial_model_ptr],
            Transaction::SocialAggregate(t) => vec![t.body.aggregate_ptr],
            Transaction::GlobalAggregate(t) => vec![t.body.global_ptr],
            Transaction::Provenance(t) => vec![t.body.verdict_ptr],
        }
    }

    /// Checks shape and every signature against the registry.
    pub fn verify(&self, registry: &KeyRegistry) -> Result<(), TxError> {
        let payload = self.payload();
        payload.check_shape()?;
        let signers = payload.required_signers();
        let sigs = self.signatures();
        if sigs.len() != signers.len() {
            return Err(TxError::Malformed("signature count differs from signer count"));
        }
        let msg = payload.signing_bytes();
        for (p, s) in signers.iter().zip(&sigs) {
            if !registry.verify(*p, &msg, s) {
                return Err(TxError::BadSignature(*p));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }
}

impl Canonical for Transaction {
    fn encode(&self, e: &mut Encoder) {
        let payload = self.payload();
        e.u8(payload.tag());
        match &payload {
            TxPayload::TaskRequest(b) => b.encode(e),
            TxPayload::SocialAggregate(b) => b.encode(e),
            TxPayload::GlobalAggregate(b) => b.encode(e),
            TxPayload::Provenance(b) => b.encode(e),
        }
        let sigs = self.signatures();
        e.seq_len(sigs.len());
        for s in &sigs {
            e.digest(&Digest(s.0));
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let tag = d.u8()?;
        let payload = match tag {
            1 => TxPayload::TaskRequest(TrTxBody::decode(d)?),
            2 => TxPayload::SocialAggregate(SaTxBody::decode(d)?),
            3 => TxPayload::GlobalAggregate(GaTxBody::decode(d)?),
            4 => TxPayload::Provenance(ProvenanceTxBody::decode(d)?),
            t => return Err(CodecError::BadTag { what: "transaction", tag: t }),
        };
        let n = d.seq_len(32)?;
        let sigs: Vec<Signature> = (0..n).map(|_| d.digest().map(|g| Signature(g.0))).collect::<Result<_, _>>()?;
        let expected = match &payload {
            TxPayload::SocialAggregate(_) => sigs.len(),
            _ => 1,
        };
        if sigs.len() != expected {
            return Err(CodecError::BadLength(n as u32));
        }
        Ok(Transaction::assemble(payload, sigs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry_with_members(n: u32) -> KeyRegistry {
        let mut reg = KeyRegistry::new(5);
        for i in 0..n {
            reg.register(Principal::Avatar(AvatarId(i)));
        }
        reg.register(Principal::Requester(0));
        reg
    }

    fn satx_body(n: u32) -> SaTxBody {
        SaTxBody {
            task_id: 1,
            round: 1,
            members: (0..n).map(AvatarId).collect(),
            aggregate_ptr: Digest::of(b"agg"),
            contributions: (0..n).map(|i| 1.0 + i as f64).collect(),
        }
    }

    #[test]
    fn satx_with_all_member_signatures_verifies() {
        let reg = registry_with_members(3);
        let keys: Vec<_> = (0..3).map(|i| reg.signing_key(Principal::Avatar(AvatarId(i))).unwrap()).collect();
        let tx = build_transaction(TxPayload::SocialAggregate(satx_body(3)), &keys).unwrap();
        tx.verify(&reg).unwrap();
    }

    #[test]
    fn satx_missing_one_signature_is_incomplete() {
        let reg = registry_with_members(3);
        let keys: Vec<_> = (0..2).map(|i| reg.signing_key(Principal::Avatar(AvatarId(i))).unwrap()).collect();
        let err = build_transaction(TxPayload::SocialAggregate(satx_body(3)), &keys).unwrap_err();
        assert_eq!(err, TxError::IncompleteMultisig { missing: vec![AvatarId(2)] });
    }

    #[test]
    fn unknown_signer_is_key_error() {
        let reg = registry_with_members(2);
        let err = build_with_registry(TxPayload::SocialAggregate(satx_body(3)), &reg).unwrap_err();
        assert!(matches!(err, TxError::Key(KeyError::Unknown(_))));
    }

    #[test]
    fn trtx_canonical_round_trip() {
        let reg = registry_with_members(0);
        let tx = build_with_registry(
            TxPayload::TaskRequest(TrTxBody {
                task_id: 7,
                timestamp: 3,
                requester: 0,
                task_reward: 12.5,
                initial_model_ptr: Digest::of(b"m0"),
                expected_performance: 0.9,
                payment_anchor: Digest::of(b"anchor"),
            }),
            &reg,
        )
        .unwrap();
        let bytes = tx.to_bytes();
        let back = Transaction::from_bytes(&bytes).unwrap();
        assert_eq!(back, tx);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tampered_signature_is_detected() {
        let reg = registry_with_members(2);
        let mut tx = build_with_registry(TxPayload::SocialAggregate(satx_body(2)), &reg).unwrap();
        if let Transaction::SocialAggregate(s) = &mut tx {
            s.body.contributions[0] = 99.0;
        }
        assert_eq!(tx.verify(&reg), Err(TxError::BadSignature(Principal::Avatar(AvatarId(0)))));
    }

    #[test]
    fn satx_rejects_unsorted_members_and_bad_contributions() {
        let reg = registry_with_members(3);
        let mut body = satx_body(2);
        body.members.reverse();
        assert!(matches!(build_with_registry(TxPayload::SocialAggregate(body), &reg), Err(TxError::Malformed(_))));
        let mut body = satx_body(2);
        body.contributions[1] = 0.0;
        assert!(matches!(build_with_registry(TxPayload::SocialAggregate(body), &reg), Err(TxError::Malformed(_))));
    }
}
