//! Model-aggregation blocks, the three FL transaction kinds, the off-chain
//! store behind on-chain hash pointers, and hashchain payment commitments.

mod block;
mod chain;
pub mod codec;
mod digest;
mod hashchain;
mod keys;
mod merkle;
mod store;
mod tx;

pub use block::{build_block, election_seed, BlockError, BlockHeader, MaBlock};
pub use chain::{validate_chain_bytes, Chain, ChainError, ChainRecord};
pub use codec::{Canonical, CodecError};
pub use digest::{Digest, ParseDigestError};
pub use hashchain::{settle, Hashchain, HashchainError, HashchainState};
pub use keys::{KeyError, KeyRegistry, Principal, Signature, SigningKey};
pub use merkle::{empty_root, merkle_root};
pub use store::{OffchainStore, StoreError};
pub use tx::{
    build_transaction, build_with_registry, GaTx, GaTxBody, ProvenanceTx, ProvenanceTxBody, SaTx, SaTxBody, TrTx,
    TrTxBody, Transaction, TxError, TxPayload,
};

/// Why a block was refused. Checks run in declaration order and the first
/// failure is reported.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rejection {
    #[error("undecodable block: {0}")]
    Malformed(#[from] CodecError),
    #[error("height {got}, expected {expected}")]
    BadHeight { expected: u64, got: u64 },
    #[error("prev_hash does not match parent")]
    BadLinkage,
    #[error("seed is not H(prev_hash || height)")]
    BadSeed,
    #[error("merkle root does not match transactions")]
    BadRoot,
    #[error("transaction {index}: {source}")]
    BadSignature { index: usize, source: TxError },
    #[error("pointer {0} not in off-chain store")]
    DanglingPointer(Digest),
    #[error("off-chain payload {0} fails its content hash")]
    CorruptPayload(Digest),
    #[error("proposal carries post-agreement pointers")]
    UnexpectedCertificate,
    #[error("certificate: {0}")]
    BadCertificate(String),
}

/// Verifies the agreement certificate a finalized block points at.
///
/// The ledger does not know the vote format; the consensus layer plugs in.
pub trait CertificateCheck {
    fn check(
        &self,
        block: &MaBlock,
        parent: &MaBlock,
        store: &OffchainStore,
        registry: &KeyRegistry,
    ) -> Result<(), String>;
}

/// Accepts any certificate. For ledgers assembled without consensus.
pub struct NoCertificate;

impl CertificateCheck for NoCertificate {
    fn check(&self, _: &MaBlock, _: &MaBlock, _: &OffchainStore, _: &KeyRegistry) -> Result<(), String> {
        Ok(())
    }
}

pub(crate) fn check_pointer(store: &OffchainStore, ptr: &Digest) -> Result<(), Rejection> {
    match store.get_verified(ptr) {
        Ok(_) => Ok(()),
        Err(StoreError::NotFound(d)) => Err(Rejection::DanglingPointer(d)),
        Err(_) => Err(Rejection::CorruptPayload(*ptr)),
    }
}

/// Checks a proposal against its parent: height, linkage, seed, merkle
/// root, every signature, and every off-chain pointer.
pub fn validate_proposal(
    block: &MaBlock,
    parent: &MaBlock,
    store: &OffchainStore,
    registry: &KeyRegistry,
) -> Result<(), Rejection> {
    check_body(block, parent, store, registry)?;
    if !block.header.cvscript_ptr.is_zero() || !block.header.reputation_ptr.is_zero() {
        return Err(Rejection::UnexpectedCertificate);
    }
    Ok(())
}

/// Full check of a finalized block extending `parent` (the current tip).
pub fn validate_block(
    block: &MaBlock,
    parent: &MaBlock,
    store: &OffchainStore,
    registry: &KeyRegistry,
    certs: &dyn CertificateCheck,
) -> Result<(), Rejection> {
    check_body(block, parent, store, registry)?;
    check_pointer(store, &block.header.cvscript_ptr)?;
    check_pointer(store, &block.header.reputation_ptr)?;
    certs.check(block, parent, store, registry).map_err(Rejection::BadCertificate)
}

fn check_body(
    block: &MaBlock,
    parent: &MaBlock,
    store: &OffchainStore,
    registry: &KeyRegistry,
) -> Result<(), Rejection> {
    let h = &block.header;
    let expected = parent.header.height + 1;
    if h.height != expected {
        return Err(Rejection::BadHeight { expected, got: h.height });
    }
    if h.prev_hash != parent.hash() {
        return Err(Rejection::BadLinkage);
    }
    if h.seed != election_seed(&h.prev_hash, h.height) {
        return Err(Rejection::BadSeed);
    }
    if h.tx_merkle_root != block.computed_merkle_root() {
        return Err(Rejection::BadRoot);
    }
    for (index, tx) in block.txs.iter().enumerate() {
        tx.verify(registry).map_err(|source| Rejection::BadSignature { index, source })?;
    }
    check_pointer(store, &h.global_result_ptr)?;
    for tx in &block.txs {
        for p in tx.pointers() {
            check_pointer(store, &p)?;
        }
    }
    Ok(())
}
