use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use socialfl::harness::{
    execute, run_coalition_experiment, run_full_pipeline, CoalitionRow, ConsensusRow, Experiment, ExperimentConfig,
    PipelineRow,
};
use socialfl::ledger::{Digest, Transaction};
use socialfl::provenance::Verdict;

fn small() -> ExperimentConfig {
    ExperimentConfig { n_avatars: 20, rounds: 5, ..ExperimentConfig::with_seed(11) }
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn five_rounds_give_five_blocks_with_the_round_transactions() {
    let run = run_full_pipeline(&small()).unwrap();
    assert_eq!(run.network.chain.len(), 6);
    let clusters = run.coalition.trace.final_partition.len();
    for (round, block) in run.network.chain.blocks()[1..].iter().enumerate() {
        let round = round as u64 + 1;
        let sa: Vec<_> = block
            .txs
            .iter()
            .filter_map(|t| match t {
                Transaction::SocialAggregate(s) => Some(s),
                _ => None,
            })
            .collect();
        assert_eq!(sa.len(), clusters);
        assert!(sa.iter().all(|s| s.body.round == round && s.signatures.len() == s.body.members.len()));
        let ga: Vec<_> = block
            .txs
            .iter()
            .filter_map(|t| match t {
                Transaction::GlobalAggregate(g) => Some(g),
                _ => None,
            })
            .collect();
        assert_eq!(ga.len(), 1);
        assert_eq!(ga[0].body.round, round);
        assert_eq!(block.header.global_result_ptr, ga[0].body.global_ptr);
        let kinds: Vec<&str> = block.txs.iter().map(|t| t.kind()).collect();
        assert_eq!(kinds.contains(&"trTx"), round == 1);
        assert_eq!(kinds.iter().any(|k| *k != "trTx" && *k != "saTx" && *k != "gaTx"), round == 5);
    }
    assert_eq!(run.verdict.verdict, Verdict::Owned);
    for row in &run.rounds {
        assert_eq!(row.satx_count, row.clusters);
    }
}

#[test]
fn pipeline_outputs_are_byte_identical_and_parse() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    execute(Experiment::Pipeline, &cfg, a.path()).unwrap();
    execute(Experiment::Pipeline, &cfg, b.path()).unwrap();
    let (fa, fb) = (read_dir(a.path()), read_dir(b.path()));
    assert_eq!(fa.len(), 6);
    assert_eq!(fa, fb);

    let manifest: serde_json::Value = serde_json::from_slice(&fa["pipeline_manifest.json"]).unwrap();
    assert_eq!(manifest["config_digest"], cfg.digest().to_hex());
    assert_eq!(manifest["outputs"]["chain.jsonl"], Digest::of(&fa["chain.jsonl"]).to_hex());

    let rows: Vec<PipelineRow> =
        csv::Reader::from_reader(&fa["pipeline_rounds.csv"][..]).deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows.len(), 5);
    let rows: Vec<ConsensusRow> =
        csv::Reader::from_reader(&fa["pipeline_consensus.csv"][..]).deserialize().collect::<Result<_, _>>().unwrap();
    assert!(rows.len() >= 5);
    let rows: Vec<CoalitionRow> =
        csv::Reader::from_reader(&fa["pipeline_coalition.csv"][..]).deserialize().collect::<Result<_, _>>().unwrap();
    assert!(!rows.is_empty());
    assert_eq!(fa["chain.jsonl"].iter().filter(|b| **b == b'\n').count(), 6);
}

#[test]
fn coalition_experiment_shapes() {
    let run = run_coalition_experiment(&ExperimentConfig { n_avatars: 1, ..ExperimentConfig::with_seed(3) }).unwrap();
    assert_eq!(run.rows.len(), 1);
    assert_eq!(run.rows[0].socialfl_avg_payoff, run.rows[0].noncoop_avg_payoff);

    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::with_seed(3);
    execute(Experiment::Coalition, &cfg, dir.path()).unwrap();
    let first = fs::read(dir.path().join("coalition.csv")).unwrap();
    execute(Experiment::Coalition, &cfg, dir.path()).unwrap();
    assert_eq!(first, fs::read(dir.path().join("coalition.csv")).unwrap());
    let header = String::from_utf8(first).unwrap();
    assert!(header.starts_with("iteration,socialfl_avg_payoff,noncoop_avg_payoff,num_clusters,moved\n"));
    let rows: Vec<CoalitionRow> = csv::Reader::from_path(dir.path().join("coalition.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    let last = rows.last().unwrap();
    assert_eq!(last.moved, 0);
    assert!(last.socialfl_avg_payoff > last.noncoop_avg_payoff);
}

#[test]
fn small_provenance_sweep() {
    let mut cfg = ExperimentConfig::with_seed(2);
    cfg.attack.ratios = vec![0.0, 0.4, 1.0];
    cfg.attack.trials = 4;
    cfg.attack.n_clients = 20;
    let dir = tempfile::tempdir().unwrap();
    execute(Experiment::Provenance, &cfg, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("provenance.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "attack,ratio,trials,successes,rate");
    assert_eq!(lines.len(), 7);
    assert!(lines.contains(&"stealing,1.0,4,4,1.0"));
    assert!(lines.contains(&"counterfeiting,0.4,4,0,0.0"));
    let base = fs::read_to_string(dir.path().join("provenance_baseline.csv")).unwrap();
    assert!(base.contains("genuine-owned,4,4,1.0") && base.contains("clean-rejected,4,4,1.0"));
}
