//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use socialfl::coalition::{Profiles, QualityParams};
use socialfl::social_graph::TrustMatrix;
use socialfl::AvatarId;

const EPS: f64 = 1e-12;

fn contribution(profiles: &Profiles, a: AvatarId) -> f64 {
    let p = &profiles[&a];
    p.data_size * p.data_quality
}

fn utility(q: &QualityParams, d: f64, n: usize) -> f64 {
    q.u_max * d / (d + q.kappa) - q.beta * q.sigma_dp * q.sigma_dp / n as f64
}

/// Closed-form share of every member, in the given order.
pub fn shares(q: &QualityParams, profiles: &Profiles, members: &[AvatarId]) -> Vec<f64> {
    let ds: Vec<f64> = members.iter().map(|a| contribution(profiles, *a)).collect();
    let total_d: f64 = ds.iter().sum();
    let fed = utility(q, total_d, members.len()) - q.cost_per_member * members.len() as f64;
    let solo: Vec<f64> = ds.iter().map(|d| utility(q, *d, 1) - q.cost_per_member).collect();
    let extra = fed - solo.iter().sum::<f64>();
    ds.iter().zip(&solo).map(|(d, s)| s + d / total_d * extra).collect()
}

fn share_of(q: &QualityParams, profiles: &Profiles, members: &[AvatarId], a: AvatarId) -> f64 {
    let k = members.iter().position(|m| *m == a).unwrap();
    shares(q, profiles, members)[k]
}

fn mutual(trust: &TrustMatrix, a: AvatarId, b: AvatarId) -> bool {
    trust.get(a, b) >= trust.threshold() && trust.get(b, a) >= trust.threshold()
}

/// Every admitted, strictly improving unilateral move available in `clusters`.
pub fn improving_deviations(
    clusters: &[Vec<AvatarId>],
    profiles: &Profiles,
    q: &QualityParams,
    trust: &TrustMatrix,
) -> Vec<(AvatarId, Option<usize>)> {
    let mut out = Vec::new();
    for (own, cluster) in clusters.iter().enumerate() {
        for &a in cluster {
            let now = share_of(q, profiles, cluster, a);
            if cluster.len() > 1 && utility(q, contribution(profiles, a), 1) - q.cost_per_member > now + EPS {
                out.push((a, None));
            }
            for (k, target) in clusters.iter().enumerate() {
                if k == own || !target.iter().all(|m| mutual(trust, a, *m)) {
                    continue;
                }
                let mut grown = target.clone();
                grown.push(a);
                let after = shares(q, profiles, &grown);
                if after[target.len()] <= now + EPS {
                    continue;
                }
                let before = shares(q, profiles, target);
                let none_worse = before.iter().zip(&after).all(|(b, x)| *x >= *b - EPS);
                let some_better = before.iter().zip(&after).any(|(b, x)| *x > *b + EPS);
                if none_worse && some_better {
                    out.push((a, Some(k)));
                }
            }
        }
    }
    out
}

/// All set partitions of `items`.
pub fn set_partitions(items: &[AvatarId]) -> Vec<Vec<Vec<AvatarId>>> {
    let Some((&first, rest)) = items.split_first() else {
        return vec![vec![]];
    };
    let mut out = Vec::new();
    for p in set_partitions(rest) {
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k].insert(0, first);
            out.push(q);
        }
        let mut q = p;
        q.insert(0, vec![first]);
        out.push(q);
    }
    out
}

pub mod integrity {
    use rand::Rng;
    use socialfl::consensus::Network;
    use socialfl::ledger::{validate_chain_bytes, Canonical, OffchainStore};

    #[derive(Debug, Default, Clone, Copy)]
    pub struct FlipStats {
        pub tried: usize,
        pub detected: usize,
    }

    /// Flips `ceil(fraction * len)` sampled bytes of the serialized chain, one
    /// at a time, and re-validates.
    pub fn block_flips(net: &Network, fraction: f64, seed: u64) -> FlipStats {
        let blocks: Vec<Vec<u8>> = net.chain.blocks().iter().map(|b| b.to_bytes()).collect();
        let total: usize = blocks.iter().map(Vec::len).sum();
        let genesis = net.chain.genesis().hash();
        let certs = net.verifier();
        let mut r = socialfl::rng::stream(seed, "block_flips", 0, 0);
        let mut stats = FlipStats::default();
        for _ in 0..(fraction * total as f64).ceil() as usize {
            let mut pos = r.random_range(0..total);
            let b = blocks.iter().position(|blk| {
                if pos < blk.len() {
                    true
                } else {
                    pos -= blk.len();
                    false
                }
            });
            let b = b.unwrap();
            let mut tampered = blocks.clone();
            tampered[b][pos] ^= r.random_range(1..=255u8);
            stats.tried += 1;
            if validate_chain_bytes(&tampered, &genesis, &net.store, &net.registry, &certs).is_err() {
                stats.detected += 1;
            }
        }
        stats
    }

    /// Same over the off-chain payloads, tampered on disk and reloaded.
    pub fn payload_flips(net: &Network, fraction: f64, seed: u64) -> FlipStats {
        let dir = tempfile::tempdir().unwrap();
        net.store.persist(dir.path()).unwrap();
        let mut files: Vec<(std::path::PathBuf, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                let bytes = std::fs::read(&p).unwrap();
                (p, bytes)
            })
            .collect();
        files.sort();
        let total: usize = files.iter().map(|f| f.1.len()).sum();
        let blocks: Vec<Vec<u8>> = net.chain.blocks().iter().map(|b| b.to_bytes()).collect();
        let genesis = net.chain.genesis().hash();
        let certs = net.verifier();
        let mut r = socialfl::rng::stream(seed, "payload_flips", 0, 0);
        let mut stats = FlipStats::default();
        for _ in 0..(fraction * total as f64).ceil() as usize {
            let mut pos = r.random_range(0..total);
            let k = files.iter().position(|(_, b)| {
                if pos < b.len() {
                    true
                } else {
                    pos -= b.len();
                    false
                }
            });
            let (path, original) = &files[k.unwrap()];
            let mut bytes = original.clone();
            bytes[pos] ^= r.random_range(1..=255u8);
            std::fs::write(path, &bytes).unwrap();
            let store = OffchainStore::load(dir.path()).unwrap();
            std::fs::write(path, original).unwrap();
            stats.tried += 1;
            if validate_chain_bytes(&blocks, &genesis, &store, &net.registry, &certs).is_err() {
                stats.detected += 1;
            }
        }
        files.clear();
        stats
    }
}
