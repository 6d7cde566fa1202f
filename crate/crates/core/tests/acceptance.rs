mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use socialfl::coalition::{
    federated_payoff, form_stable_partition, payoff_shares, random_profiles, AvatarProfile, QualityParams,
};
use socialfl::consensus::{NodeDecision, ProposalVerdict};
use socialfl::harness::{
    execute, main_model, run_coalition_experiment, run_consensus_experiment, verification_baselines, Experiment,
    ExperimentConfig,
};
use socialfl::ledger::{settle, Hashchain};
use socialfl::provenance::{simulate_collusion, Attack};
use socialfl::social_graph::{random_graph, TrustParams};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn criterion(n: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = o.ok && in_time;
    let budget = limit.map(|l| format!(" (limit {}s)", l.as_secs())).unwrap_or_default();
    println!(
        "{} criterion {n}: {name}: {} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    pass
}

fn coalition_convergence() -> Outcome {
    let mut worst_iter = 0;
    let mut failures = Vec::new();
    for seed in 1..=10u64 {
        let run = run_coalition_experiment(&ExperimentConfig::with_seed(seed)).unwrap();
        let t = &run.trace;
        let last = t.series.last().unwrap();
        worst_iter = worst_iter.max(t.iterations);
        if t.truncated || t.iterations > 20 || last.moved != 0 || !(last.mean_payoff > t.noncoop_mean) {
            failures.push(seed);
        }
    }
    outcome(failures.is_empty(), format!("10 seeds, max {worst_iter} iterations, failing seeds {failures:?}"))
}

fn nash_oracle() -> Outcome {
    let q = QualityParams::default();
    let mut failures = 0;
    for inst in 0..50u64 {
        let n = 3 + (inst % 6) as usize;
        let seed = 1000 + inst;
        let trust = random_graph(n, 1.0, seed, TrustParams::default()).unwrap().trust_matrix();
        let profiles = random_profiles(n, seed);
        let trace = form_stable_partition(&trust, &profiles, &q, 1000).unwrap();
        if trace.truncated
            || !common::improving_deviations(trace.final_partition.clusters(), &profiles, &q, &trust).is_empty()
        {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("50 instances, n in 3..=8, {failures} failures"))
}

fn budget_balance() -> Outcome {
    let q = QualityParams::default();
    let mut r = socialfl::rng::stream(3, "fuzz_clusters", 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..=30usize);
        let profiles = socialfl::coalition::profiles_from((0..n as u32).map(|k| {
            AvatarProfile::new(socialfl::AvatarId(k), r.random_range(0.1..100.0), r.random_range(0.01..=1.0)).unwrap()
        }));
        let ids: Vec<_> = profiles.keys().copied().collect();
        let shares = payoff_shares(&ids, &profiles, &q).unwrap();
        let fed = federated_payoff(&ids, &profiles, &q).unwrap();
        let d: f64 = profiles.values().map(|p| p.contribution()).sum();
        let wsum: f64 = profiles.values().map(|p| p.contribution() / d).sum();
        worst = worst.max((shares.iter().sum::<f64>() - fed).abs()).max((wsum - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("1000 clusters, max deviation {worst:.2e}"))
}

fn consensus_and_reputation() -> (Outcome, Outcome) {
    let cfg = ExperimentConfig { rounds: 500, byz_fraction: 0.3, ..ExperimentConfig::with_seed(17) };
    let run = run_consensus_experiment(&cfg).unwrap();
    let violations = run.summary.safety_violations;
    let undecided = run
        .reports
        .iter()
        .filter(|r| {
            run.network.nodes.iter().filter(|n| n.is_honest()).any(|n| {
                !matches!(r.decisions.get(&n.id), Some(NodeDecision::Decided(_)) | Some(NodeDecision::Fallback))
            })
        })
        .count();
    let grew = run.network.chain.len() == 501;
    let clean = run_consensus_experiment(&ExperimentConfig { byz_fraction: 0.0, ..cfg.clone() }).unwrap();
    let c4 = outcome(
        violations == 0 && undecided == 0 && grew && clean.summary.empty_block_count == 0,
        format!(
            "30% faulty: {violations} violations, {undecided} undecided heights, {} fallback blocks; fault-free: {} fallback blocks",
            run.summary.empty_block_count, clean.summary.empty_block_count
        ),
    );

    let d2 = cfg.reputation.delta2;
    let honest: Vec<_> = run.network.nodes.iter().filter(|n| n.is_honest()).map(|n| n.id).collect();
    let faulty: Vec<_> = run.network.nodes.iter().filter(|n| !n.is_honest()).map(|n| n.id).collect();
    let mean = |t: &socialfl::consensus::ReputationTable, ids: &[socialfl::NodeId]| {
        ids.iter().map(|i| t.get(*i)).sum::<f64>() / ids.len() as f64
    };
    let (mut decreases, mut bad_penalties, mut offenses, mut not_separated) = (0, 0, 0, 0);
    for (h, rep) in run.reports.iter().enumerate() {
        let (before, after) = (&run.reputations[h], &run.reputations[h + 1]);
        decreases += honest.iter().filter(|i| after.get(**i) < before.get(**i)).count();
        for (id, v) in &rep.verdicts {
            if *v == ProposalVerdict::Invalid {
                offenses += 1;
                if after.get(*id) != (before.get(*id) - d2).max(0.0) {
                    bad_penalties += 1;
                }
            }
        }
        if h + 1 >= 50 && mean(after, &honest) <= mean(after, &faulty) {
            not_separated += 1;
        }
    }
    let c5 = outcome(
        decreases == 0 && bad_penalties == 0 && not_separated == 0 && offenses > 0,
        format!(
            "{decreases} honest decreases, {bad_penalties}/{offenses} invalid-proposal penalties off by anything, \
             {not_separated} heights >= 50 without separation; final honest {:.3} vs faulty {:.3}",
            mean(run.reputations.last().unwrap(), &honest),
            mean(run.reputations.last().unwrap(), &faulty)
        ),
    );
    (c4, c5)
}

fn ledger_integrity() -> Outcome {
    let cfg = ExperimentConfig { rounds: 49, byz_fraction: 0.3, ..ExperimentConfig::with_seed(23) };
    let net = run_consensus_experiment(&cfg).unwrap().network;
    let blocks = common::integrity::block_flips(&net, 0.01, 1);
    let payloads = common::integrity::payload_flips(&net, 0.01, 2);
    let mut settle_ok = true;
    for n in 1..=64usize {
        let mut hc = Hashchain::new(&(n as u64).to_le_bytes(), n + 1).unwrap();
        let anchor = hc.anchor();
        for k in 1..=n {
            settle_ok &= settle(&anchor, &hc.commit().unwrap(), k);
        }
    }
    outcome(
        net.chain.len() == 50 && blocks.detected == blocks.tried && payloads.detected == payloads.tried && settle_ok,
        format!(
            "{} blocks; block flips {}/{} detected, payload flips {}/{} detected; hashchain settle n<=64 {}",
            net.chain.len(),
            blocks.detected,
            blocks.tried,
            payloads.detected,
            payloads.tried,
            if settle_ok { "ok" } else { "failed" }
        ),
    )
}

fn collusion() -> Outcome {
    let cfg = ExperimentConfig::with_seed(29);
    let (task, clean) = main_model(&cfg);
    let mut worst: f64 = 0.0;
    for attack in [Attack::Stealing, Attack::Counterfeiting] {
        for ratio in [0.1, 0.2, 0.3, 0.4] {
            let seed = socialfl::rng::child_seed(cfg.master_seed, attack.name(), (ratio * 10.0) as u64);
            let o = simulate_collusion(attack, ratio, 200, 100, seed, &clean, &task, &cfg.watermark, &cfg.thresholds)
                .unwrap();
            worst = worst.max(o.rate());
        }
    }
    let base = verification_baselines(&cfg, &task, &clean, 200).unwrap();
    let (tp, tn) = (base[0].rate, base[1].rate);
    outcome(
        worst <= 0.05 && tp >= 0.99 && tn >= 0.99,
        format!(
            "max attack success {worst:.3} over 8 cells x 200 trials; genuine owned {tp:.3}; clean rejected {tn:.3}"
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::with_seed(31);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = execute(Experiment::Pipeline, &cfg, a.path()).unwrap();
    execute(Experiment::Pipeline, &cfg, b.path()).unwrap();
    let mut differing = Vec::new();
    for p in &fa {
        let name = p.file_name().unwrap();
        if std::fs::read(p).unwrap() != std::fs::read(b.path().join(name)).unwrap() {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    outcome(differing.is_empty(), format!("{} files compared, differing: {differing:?}", fa.len()))
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let mut all = true;
    all &= criterion(1, "coalition convergence beats non-cooperation", secs(30), coalition_convergence);
    all &= criterion(2, "exhaustive Nash-stability oracle", secs(60), nash_oracle);
    all &= criterion(3, "budget balance and contribution weights", None, budget_balance);
    let mut c5 = None;
    all &= criterion(4, "consensus safety and liveness", secs(60), || {
        let (c4, rep) = consensus_and_reputation();
        c5 = Some(rep);
        c4
    });
    all &= criterion(5, "reputation dynamics", None, || c5.take().unwrap());
    all &= criterion(6, "ledger integrity and hashchain settlement", None, ledger_integrity);
    all &= criterion(7, "collusion resistance and verification rates", secs(120), collusion);
    all &= criterion(8, "pipeline determinism", None, determinism);
    if !all {
        std::process::exit(1);
    }
}
