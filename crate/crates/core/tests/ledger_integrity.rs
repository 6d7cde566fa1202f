mod common;

use common::integrity::{block_flips, payload_flips};
use socialfl::harness::{run_consensus_experiment, ExperimentConfig};
use socialfl::ledger::{settle, Hashchain};

fn chain_of_50(byz: f64) -> socialfl::consensus::Network {
    let cfg = ExperimentConfig { rounds: 49, byz_fraction: byz, ..ExperimentConfig::with_seed(5) };
    let run = run_consensus_experiment(&cfg).unwrap();
    assert_eq!(run.network.chain.len(), 50);
    run.network
}

#[test]
fn untouched_chain_validates() {
    let net = chain_of_50(0.3);
    let g = net.chain.genesis().hash();
    net.chain.validate(&g, &net.store, &net.registry, &net.verifier()).unwrap();
}

#[test]
fn every_sampled_block_flip_is_detected() {
    let net = chain_of_50(0.3);
    let s = block_flips(&net, 0.002, 1);
    assert!(s.tried > 10);
    assert_eq!(s.detected, s.tried);
}

#[test]
fn every_sampled_payload_flip_is_detected() {
    let net = chain_of_50(0.0);
    let s = payload_flips(&net, 0.001, 2);
    assert!(s.tried > 10);
    assert_eq!(s.detected, s.tried);
}

#[test]
fn hashchain_settles_every_prefix() {
    for n in [1usize, 2, 17, 64] {
        let mut hc = Hashchain::new(format!("payer {n}").as_bytes(), n).unwrap();
        let anchor = hc.anchor();
        for k in 1..n {
            let c = hc.commit().unwrap();
            assert!(settle(&anchor, &c, k));
            assert!(!settle(&anchor, &c, k + 1));
        }
        assert!(hc.commit().is_err());
    }
}
