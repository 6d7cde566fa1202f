//! Hashchain payment commitments.
//!
//! The payer keeps `h_0 = H(seed)`, `h_i = H(h_{i-1})` up to `h_{n-1}` and
//! publishes `h_{n-1}` on chain. The k-th off-chain commitment is
//! `h_{n-1-k}`; anyone can settle it by hashing k times back to the anchor.

use super::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HashchainError {
    #[error("hashchain length must be at least 1")]
    Empty,
    #[error("all {0} commitments already revealed")]
    Exhausted(usize),
}

#[derive(Clone, Debug)]
pub struct Hashchain {
    links: Vec<Digest>,
    revealed: usize,
}

/// Public view of a hashchain's progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashchainState {
    pub anchor: Digest,
    pub revealed_index: usize,
    pub len: usize,
}

impl Hashchain {
    pub fn new(seed: &[u8], n: usize) -> Result<Self, HashchainError> {
        if n == 0 {
            return Err(HashchainError::Empty);
        }
        let mut links = Vec::with_capacity(n);
        links.push(Digest::of(seed));
        for i in 1..n {
            let next = Digest::of(links[i - 1].as_bytes());
            links.push(next);
        }
        Ok(Hashchain { links, revealed: 0 })
    }

    pub fn anchor(&self) -> Digest {
        *self.links.last().unwrap()
    }

    pub fn link(&self, i: usize) -> Option<Digest> {
        self.links.get(i).copied()
    }

    pub fn state(&self) -> HashchainState {
        HashchainState { anchor: self.anchor(), revealed_index: self.revealed, len: self.links.len() }
    }

    /// Reveals the next commitment.
    pub fn commit(&mut self) -> Result<Digest, HashchainError> {
        let n = self.links.len();
        if self.revealed + 1 > n - 1 {
            return Err(HashchainError::Exhausted(n - 1));
        }
        self.revealed += 1;
        Ok(self.links[n - 1 - self.revealed])
    }
}

/// True iff hashing `commit` `k` times yields `anchor`.
pub fn settle(anchor: &Digest, commit: &Digest, k: usize) -> bool {
    let mut h = *commit;
    for _ in 0..k {
        h = Digest::of(h.as_bytes());
    }
    h == *anchor
}
