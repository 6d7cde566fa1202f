use std::io::Write;

use serde::Serialize;

use super::block::MaBlock;
use super::codec::Canonical;
use super::keys::KeyRegistry;
use super::store::OffchainStore;
use super::{check_pointer, validate_block, CertificateCheck, Digest, Rejection};

/// A single linear chain rooted at a trusted genesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    blocks: Vec<MaBlock>,
}

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("block does not extend the tip: {0}")]
    NotExtending(String),
}

/// One line of the chain export.
#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct ChainRecord {
    pub height: u64,
    pub hash: Digest,
    pub prev_hash: Digest,
    pub tx_count: usize,
    pub tx_kinds: Vec<String>,
}

impl Chain {
    pub fn new(genesis: MaBlock) -> Self {
        Chain { blocks: vec![genesis] }
    }

    pub fn tip(&self) -> &MaBlock {
        self.blocks.last().unwrap()
    }

    pub fn genesis(&self) -> &MaBlock {
        &self.blocks[0]
    }

    pub fn blocks(&self) -> &[MaBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Appends after checking height and linkage only; full validation is
    /// the caller's business.
    pub fn append(&mut self, block: MaBlock) -> Result<(), ChainError> {
        let tip = self.tip();
        if block.header.height != tip.header.height + 1 {
            return Err(ChainError::NotExtending(format!(
                "height {} after {}",
                block.header.height, tip.header.height
            )));
        }
        if block.header.prev_hash != tip.hash() {
            return Err(ChainError::NotExtending("prev_hash mismatch".into()));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Re-validates every block from genesis. `genesis_hash` is the trusted root.
    pub fn validate(
        &self,
        genesis_hash: &Digest,
        store: &OffchainStore,
        registry: &KeyRegistry,
        certs: &dyn CertificateCheck,
    ) -> Result<(), (u64, Rejection)> {
        validate_chain_bytes(
            &self.blocks.iter().map(|b| b.to_bytes()).collect::<Vec<_>>(),
            genesis_hash,
            store,
            registry,
            certs,
        )
    }

    pub fn records(&self) -> Vec<ChainRecord> {
        self.blocks
            .iter()
            .map(|b| ChainRecord {
                height: b.header.height,
                hash: b.hash(),
                prev_hash: b.header.prev_hash,
                tx_count: b.txs.len(),
                tx_kinds: b.txs.iter().map(|t| t.kind().to_string()).collect(),
            })
            .collect()
    }

    /// Line-delimited JSON, one record per block.
    pub fn export_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Validates a chain given as serialized blocks, as it would be read back
/// from storage.
pub fn validate_chain_bytes(
    blocks: &[Vec<u8>],
    genesis_hash: &Digest,
    store: &OffchainStore,
    registry: &KeyRegistry,
    certs: &dyn CertificateCheck,
) -> Result<(), (u64, Rejection)> {
    let mut parent: Option<MaBlock> = None;
    for (h, raw) in blocks.iter().enumerate() {
        let h = h as u64;
        let block = MaBlock::from_bytes(raw).map_err(|e| (h, Rejection::Malformed(e)))?;
        match &parent {
            None => {
                if block.hash() != *genesis_hash {
                    return Err((h, Rejection::BadLinkage));
                }
                for p in [block.header.global_result_ptr, block.header.reputation_ptr] {
                    check_pointer(store, &p).map_err(|r| (h, r))?;
                }
            }
            Some(p) => validate_block(&block, p, store, registry, certs).map_err(|r| (h, r))?,
        }
        parent = Some(block);
    }
    Ok(())
}
