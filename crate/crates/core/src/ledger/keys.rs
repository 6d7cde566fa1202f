//! Simulated PKI.
//!
//! The simulator is its own certificate authority: every principal gets a
//! secret derived from the run's master seed, and signatures are
//! HMAC-SHA256 tags that the registry can re-check. The same keys back the
//! keyed-hash VRF used by sortition.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use super::codec::Encoder;
use super::Digest;
use crate::ids::{AvatarId, NodeId};

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Principal {
    Avatar(AvatarId),
    Node(NodeId),
    Requester(u32),
}

impl Principal {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        match *self {
            Principal::Avatar(a) => e.u8(0).u32(a.0),
            Principal::Node(n) => e.u8(1).u32(n.0),
            Principal::Requester(r) => e.u8(2).u32(r),
        };
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::Avatar(a) => write!(f, "{a}"),
            Principal::Node(n) => write!(f, "{n}"),
            Principal::Requester(r) => write!(f, "requester-{r}"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 32]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", &hex::encode(self.0)[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("no key registered for {0}")]
    Unknown(Principal),
}

/// A principal's secret, held by whoever signs on its behalf.
#[derive(Clone)]
pub struct SigningKey {
    principal: Principal,
    secret: [u8; 32],
}

impl SigningKey {
    pub fn principal(&self) -> Principal {
        self.principal
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(mac(&self.secret, msg))
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey").field("principal", &self.principal).finish_non_exhaustive()
    }
}

fn mac(secret: &[u8; 32], msg: &[u8]) -> [u8; 32] {
    let mut m = <HmacSha256 as KeyInit>::new_from_slice(secret).expect("hmac accepts any key length");
    m.update(msg);
    m.finalize().into_bytes().into()
}

#[derive(Clone, Debug, Default)]
pub struct KeyRegistry {
    master: [u8; 32],
    secrets: BTreeMap<Principal, [u8; 32]>,
}

impl KeyRegistry {
    pub fn new(master_seed: u64) -> Self {
        let master = Digest::of_parts(&[b"socialfl/pki/v1", &master_seed.to_le_bytes()]).0;
        KeyRegistry { master, secrets: BTreeMap::new() }
    }

    /// Registers `p` (idempotent) and returns its signing key.
    pub fn register(&mut self, p: Principal) -> SigningKey {
        let mut e = Encoder::new();
        p.encode(&mut e);
        let secret = *self.secrets.entry(p).or_insert_with(|| mac(&self.master, &e.finish()));
        SigningKey { principal: p, secret }
    }

    pub fn contains(&self, p: Principal) -> bool {
        self.secrets.contains_key(&p)
    }

    pub fn signing_key(&self, p: Principal) -> Result<SigningKey, KeyError> {
        self.secrets.get(&p).map(|s| SigningKey { principal: p, secret: *s }).ok_or(KeyError::Unknown(p))
    }

    pub fn verify(&self, p: Principal, msg: &[u8], sig: &Signature) -> bool {
        match self.secrets.get(&p) {
            Some(s) => mac(s, msg) == sig.0,
            None => false,
        }
    }

    /// Keyed-hash VRF output for `p` on `input`.
    pub fn vrf(&self, p: Principal, input: &[u8]) -> Result<Digest, KeyError> {
        let s = self.secrets.get(&p).ok_or(KeyError::Unknown(p))?;
        let mut msg = b"vrf".to_vec();
        msg.extend_from_slice(input);
        Ok(Digest(mac(s, &msg)))
    }
}
