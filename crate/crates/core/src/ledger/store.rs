//! Content-addressed off-chain storage.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use super::Digest;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no entry for {0}")]
    NotFound(Digest),
    #[error("entry {0} does not hash to its key")]
    Corrupt(Digest),
    #[error("store io: {0}")]
    Io(#[from] io::Error),
    #[error("unexpected file in store directory: {0}")]
    BadFileName(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OffchainStore {
    entries: BTreeMap<Digest, Vec<u8>>,
}

impl OffchainStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, bytes: Vec<u8>) -> Digest {
        let key = Digest::of(&bytes);
        self.entries.entry(key).or_insert(bytes);
        key
    }

    /// Raw stored bytes, without re-hashing.
    pub fn get(&self, key: &Digest) -> Result<&[u8], StoreError> {
        self.entries.get(key).map(Vec::as_slice).ok_or(StoreError::NotFound(*key))
    }

    /// Stored bytes, checked against their content address.
    pub fn get_verified(&self, key: &Digest) -> Result<&[u8], StoreError> {
        let b = self.get(key)?;
        if Digest::of(b) != *key {
            return Err(StoreError::Corrupt(*key));
        }
        Ok(b)
    }

    pub fn contains(&self, key: &Digest) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Digest> {
        self.entries.keys()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Writes one file per entry, named by the lowercase hex digest.
    pub fn persist(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        for (k, v) in &self.entries {
            fs::write(dir.join(k.to_hex()), v)?;
        }
        Ok(())
    }

    /// Loads a persisted directory as-is; integrity is checked on
    /// [`get_verified`](Self::get_verified), not here.
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let mut entries = BTreeMap::new();
        for ent in fs::read_dir(dir)? {
            let ent = ent?;
            let name = ent.file_name().to_string_lossy().into_owned();
            let key: Digest = name.parse().map_err(|_| StoreError::BadFileName(name.clone()))?;
            entries.insert(key, fs::read(ent.path())?);
        }
        Ok(OffchainStore { entries })
    }
}
