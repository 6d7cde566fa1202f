use super::codec::{Canonical, CodecError, Decoder, Encoder};
use super::keys::KeyRegistry;
use super::merkle::merkle_root;
use super::tx::{Transaction, TxError};
use super::Digest;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub task_id: u64,
    pub global_result_ptr: Digest,
    /// Election seed this height's committees were drawn with.
    pub seed: Digest,
    /// Set after agreement; zero in proposals.
    pub cvscript_ptr: Digest,
    /// Reputation table after this height's update; zero in proposals.
    pub reputation_ptr: Digest,
    pub tx_merkle_root: Digest,
}

/// Model-aggregation block.
#[derive(Clone, Debug, PartialEq)]
pub struct MaBlock {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BlockError {
    #[error("transaction {index} invalid: {source}")]
    InvalidTx { index: usize, source: TxError },
}

/// `H(prev_hash || height)`: the sortition seed for `height`.
pub fn election_seed(prev_hash: &Digest, height: u64) -> Digest {
    Digest::of_parts(&[b"socialfl/seed", prev_hash.as_bytes(), &height.to_le_bytes()])
}

impl BlockHeader {
    fn encode_with(&self, e: &mut Encoder, post_consensus: bool) {
        let zero = Digest::ZERO;
        e.u64(self.height)
            .digest(&self.prev_hash)
            .u64(self.task_id)
            .digest(&self.global_result_ptr)
            .digest(&self.seed)
            .digest(if post_consensus { &self.cvscript_ptr } else { &zero })
            .digest(if post_consensus { &self.reputation_ptr } else { &zero })
            .digest(&self.tx_merkle_root);
    }
}

impl Canonical for BlockHeader {
    fn encode(&self, e: &mut Encoder) {
        self.encode_with(e, true);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(BlockHeader {
            height: d.u64()?,
            prev_hash: d.digest()?,
            task_id: d.u64()?,
            global_result_ptr: d.digest()?,
            seed: d.digest()?,
            cvscript_ptr: d.digest()?,
            reputation_ptr: d.digest()?,
            tx_merkle_root: d.digest()?,
        })
    }
}

impl Canonical for MaBlock {
    fn encode(&self, e: &mut Encoder) {
        self.header.encode(e);
        e.seq_len(self.txs.len());
        for tx in &self.txs {
            e.bytes(&tx.to_bytes());
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let header = BlockHeader::decode(d)?;
        let n = d.seq_len(4)?;
        let mut txs = Vec::with_capacity(n);
        for _ in 0..n {
            txs.push(Transaction::from_bytes(d.bytes()?)?);
        }
        Ok(MaBlock { header, txs })
    }
}

impl MaBlock {
    pub fn genesis(task_id: u64, initial_model_ptr: Digest, reputation_ptr: Digest) -> MaBlock {
        MaBlock {
            header: BlockHeader {
                height: 0,
                prev_hash: Digest::ZERO,
                task_id,
                global_result_ptr: initial_model_ptr,
                seed: election_seed(&Digest::ZERO, 0),
                cvscript_ptr: Digest::ZERO,
                reputation_ptr,
                tx_merkle_root: merkle_root(&[]),
            },
            txs: Vec::new(),
        }
    }

    /// Hash of the full header; what children link to.
    pub fn hash(&self) -> Digest {
        let mut e = Encoder::new();
        e.bytes(b"socialfl/block");
        self.header.encode(&mut e);
        Digest::of(&e.finish())
    }

    /// Hash of the header with the post-agreement pointers zeroed; what
    /// validators vote on.
    pub fn proposal_hash(&self) -> Digest {
        let mut e = Encoder::new();
        e.bytes(b"socialfl/proposal");
        self.header.encode_with(&mut e, false);
        Digest::of(&e.finish())
    }

    pub fn computed_merkle_root(&self) -> Digest {
        merkle_root(&self.txs.iter().map(Transaction::hash).collect::<Vec<_>>())
    }

    /// The fallback block every node can build for the height after `parent`.
    pub fn empty_child(parent: &MaBlock) -> MaBlock {
        let height = parent.header.height + 1;
        let prev_hash = parent.hash();
        MaBlock {
            header: BlockHeader {
                height,
                prev_hash,
                task_id: parent.header.task_id,
                global_result_ptr: parent.header.global_result_ptr,
                seed: election_seed(&prev_hash, height),
                cvscript_ptr: Digest::ZERO,
                reputation_ptr: Digest::ZERO,
                tx_merkle_root: merkle_root(&[]),
            },
            txs: Vec::new(),
        }
    }

    /// True iff this block is the empty fallback for `parent`, ignoring
    /// post-agreement pointers.
    pub fn is_empty_child_of(&self, parent: &MaBlock) -> bool {
        self.proposal_hash() == MaBlock::empty_child(parent).proposal_hash()
    }

    pub fn with_post_consensus(mut self, cvscript_ptr: Digest, reputation_ptr: Digest) -> MaBlock {
        self.header.cvscript_ptr = cvscript_ptr;
        self.header.reputation_ptr = reputation_ptr;
        self
    }
}

/// Assembles a proposal extending `parent`. Every transaction must verify.
pub fn build_block(
    parent: &MaBlock,
    txs: Vec<Transaction>,
    task_id: u64,
    global_ptr: Digest,
    registry: &KeyRegistry,
) -> Result<MaBlock, BlockError> {
    for (index, tx) in txs.iter().enumerate() {
        tx.verify(registry).map_err(|source| BlockError::InvalidTx { index, source })?;
    }
    let mut block = MaBlock::empty_child(parent);
    block.header.task_id = task_id;
    block.header.global_result_ptr = global_ptr;
    block.txs = txs;
    block.header.tx_merkle_root = block.computed_merkle_root();
    Ok(block)
}
