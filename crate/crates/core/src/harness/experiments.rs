use rand::seq::SliceRandom;
use serde::Serialize;

use super::{ExperimentConfig, HarnessError};
use crate::coalition::{form_stable_partition, random_profiles, GameTrace, Partition, Profiles};
use crate::consensus::{ByzantineProfile, ConsensusParams, FullNode, HeightReport, Network, ReputationTable};
use crate::flsim::{run_round, GroundTruth, ModelVector, DEFAULT_DIM};
use crate::ledger::{
    build_with_registry, Canonical, GaTxBody, Hashchain, Principal, ProvenanceTxBody, SaTxBody, TrTxBody, Transaction,
    TxPayload,
};
use crate::provenance::{
    genuine_submissions, simulate_collusion, Classifier, Deployment, MainTask, Verdict, VerdictRecord,
};
use crate::rng;
use crate::social_graph::{random_graph, TrustMatrix};
use crate::NodeId;

const TASK_ID: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct CoalitionRow {
    pub iteration: usize,
    pub socialfl_avg_payoff: f64,
    pub noncoop_avg_payoff: f64,
    pub num_clusters: usize,
    pub moved: usize,
}

pub struct CoalitionRun {
    pub trace: GameTrace,
    pub rows: Vec<CoalitionRow>,
}

fn population(cfg: &ExperimentConfig) -> Result<(TrustMatrix, Profiles), HarnessError> {
    let graph = random_graph(cfg.n_avatars, cfg.density, rng::child_seed(cfg.master_seed, "graph", 0), cfg.trust)?;
    let profiles = random_profiles(cfg.n_avatars, rng::child_seed(cfg.master_seed, "profiles", 0));
    Ok((graph.trust_matrix(), profiles))
}

pub fn run_coalition_experiment(cfg: &ExperimentConfig) -> Result<CoalitionRun, HarnessError> {
    let (trust, profiles) = population(cfg)?;
    let trace = form_stable_partition(&trust, &profiles, &cfg.quality, cfg.max_iter)?;
    let rows = trace
        .series
        .iter()
        .skip(1)
        .map(|r| CoalitionRow {
            iteration: r.iteration,
            socialfl_avg_payoff: r.mean_payoff,
            noncoop_avg_payoff: trace.noncoop_mean,
            num_clusters: r.num_clusters,
            moved: r.moved,
        })
        .collect();
    Ok(CoalitionRun { trace, rows })
}

/// `round(fraction * n)` nodes, picked by a seeded shuffle, become faulty
/// with profiles cycling equivocator, invalid proposer, silent.
pub fn assign_profiles(n: usize, byz_fraction: f64, seed: u64) -> Vec<FullNode> {
    let k = ((byz_fraction * n as f64).round() as usize).min(n);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, "byzantine", 0, 0));
    let cycle = [ByzantineProfile::Equivocator, ByzantineProfile::InvalidProposer, ByzantineProfile::Silent];
    let mut profiles = vec![ByzantineProfile::Honest; n];
    for (j, i) in ids.into_iter().take(k).enumerate() {
        profiles[i] = cycle[j % cycle.len()];
    }
    profiles.into_iter().enumerate().map(|(i, profile)| FullNode { id: NodeId(i as u32), profile }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ConsensusRow {
    pub height: u64,
    pub decided: String,
    pub committee_sizes: String,
    pub byz_count: usize,
    pub stages_used: u32,
    pub safety_violation: bool,
    pub honest_mean_reputation: f64,
    pub faulty_mean_reputation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ConsensusSummary {
    pub heights: u64,
    pub safety_violations: usize,
    pub empty_block_count: usize,
    pub honest_mean_reputation: Option<f64>,
    pub faulty_mean_reputation: Option<f64>,
}

pub struct ConsensusRun {
    pub network: Network,
    pub reports: Vec<HeightReport>,
    /// Entry 0 is the initial table, entry h the table after height h.
    pub reputations: Vec<ReputationTable>,
    pub rows: Vec<ConsensusRow>,
    pub summary: ConsensusSummary,
}

fn mean_rep(table: &ReputationTable, net: &Network, honest: bool) -> Option<f64> {
    let vals: Vec<f64> = net.nodes.iter().filter(|n| n.is_honest() == honest).map(|n| table.get(n.id)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn aggregator(net: &Network) -> NodeId {
    net.nodes.iter().find(|n| n.is_honest()).unwrap_or(&net.nodes[0]).id
}

fn consensus_row(r: &HeightReport, net: &Network) -> ConsensusRow {
    ConsensusRow {
        height: r.height,
        decided: r.decided.map(|d| d.to_hex()).unwrap_or_default(),
        committee_sizes: r.committee_sizes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
        byz_count: r.byz_count,
        stages_used: r.stages_used,
        safety_violation: r.safety_violation,
        honest_mean_reputation: mean_rep(&net.reputations, net, true).unwrap_or(f64::NAN),
        faulty_mean_reputation: mean_rep(&net.reputations, net, false),
    }
}

fn params(cfg: &ExperimentConfig) -> ConsensusParams {
    ConsensusParams { sortition: cfg.sortition, reputation: cfg.reputation }
}

/// `cfg.rounds` heights, each carrying one fresh gaTx.
pub fn run_consensus_experiment(cfg: &ExperimentConfig) -> Result<ConsensusRun, HarnessError> {
    let nodes = assign_profiles(cfg.n_full, cfg.byz_fraction, cfg.master_seed);
    let mut net =
        Network::new(cfg.master_seed, nodes, params(cfg), TASK_ID, ModelVector::zeros(DEFAULT_DIM).to_bytes())?;
    let agg = aggregator(&net);
    let mut reports = Vec::new();
    let mut reputations = vec![net.reputations.clone()];
    let mut rows = Vec::new();
    for round in 1..=cfg.rounds {
        let ptr = net.store.put(format!("global model {round}").into_bytes());
        let body = GaTxBody { task_id: TASK_ID, round, global_ptr: ptr, aggregator: agg };
        net.submit(build_with_registry(TxPayload::GlobalAggregate(body), &net.registry)?);
        let r = net.run_height()?;
        rows.push(consensus_row(&r, &net));
        reputations.push(net.reputations.clone());
        reports.push(r);
    }
    let summary = ConsensusSummary {
        heights: cfg.rounds,
        safety_violations: reports.iter().filter(|r| r.safety_violation).count(),
        empty_block_count: reports.iter().filter(|r| r.decided.is_none()).count(),
        honest_mean_reputation: mean_rep(&net.reputations, &net, true),
        faulty_mean_reputation: mean_rep(&net.reputations, &net, false),
    };
    Ok(ConsensusRun { network: net, reports, reputations, rows, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct AttackRow {
    pub attack: String,
    pub ratio: f64,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct BaselineRow {
    pub check: String,
    pub trials: usize,
    pub passes: usize,
    pub rate: f64,
}

pub struct ProvenanceRun {
    pub rows: Vec<AttackRow>,
    pub baselines: Vec<BaselineRow>,
}

/// The shared synthetic task and its watermark-free model.
pub fn main_model(cfg: &ExperimentConfig) -> (MainTask, Classifier) {
    let task = MainTask::generate(rng::child_seed(cfg.master_seed, "main_task", 0), &cfg.watermark);
    let clean = task.train_model(&cfg.watermark);
    (task, clean)
}

/// Genuine verification of the protected model, and of the clean model,
/// over `trials` independent deployments.
pub fn verification_baselines(
    cfg: &ExperimentConfig,
    task: &MainTask,
    clean: &Classifier,
    trials: usize,
) -> Result<Vec<BaselineRow>, HarnessError> {
    let (mut tp, mut tn) = (0, 0);
    for t in 0..trials {
        let seed = rng::child_seed(cfg.master_seed, "baseline_trial", t as u64);
        let dep = Deployment::build(cfg.attack.n_clients, seed, clean, task, &cfg.watermark, &cfg.thresholds)?;
        let subs = genuine_submissions(&dep.watermarks);
        tp += (dep.verify(&dep.model, &subs, &cfg.thresholds)?.verdict == Verdict::Owned) as usize;
        tn += (dep.verify(clean, &subs, &cfg.thresholds)?.verdict == Verdict::NotOwned) as usize;
    }
    let row = |check: &str, passes: usize| BaselineRow {
        check: check.into(),
        trials,
        passes,
        rate: passes as f64 / trials as f64,
    };
    Ok(vec![row("genuine-owned", tp), row("clean-rejected", tn)])
}

pub fn run_provenance_experiment(cfg: &ExperimentConfig) -> Result<ProvenanceRun, HarnessError> {
    let (task, clean) = main_model(cfg);
    let mut rows = Vec::new();
    for kind in &cfg.attack.kinds {
        for &ratio in &cfg.attack.ratios {
            let seed = rng::child_seed(cfg.master_seed, kind.name(), ratio.to_bits());
            let o = simulate_collusion(
                *kind,
                ratio,
                cfg.attack.trials,
                cfg.attack.n_clients,
                seed,
                &clean,
                &task,
                &cfg.watermark,
                &cfg.thresholds,
            )?;
            rows.push(AttackRow {
                attack: kind.name().into(),
                ratio,
                trials: o.trials,
                successes: o.successes,
                rate: o.rate(),
            });
        }
    }
    let baselines = verification_baselines(cfg, &task, &clean, cfg.attack.trials)?;
    Ok(ProvenanceRun { rows, baselines })
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct PipelineRow {
    pub round: u64,
    pub clusters: usize,
    pub utility: f64,
    pub global_ptr: String,
    pub block_height: u64,
    pub block_hash: String,
    pub satx_count: usize,
    pub payment_commit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct VerdictRow {
    pub verdict: String,
    pub gap: Option<f64>,
    pub model: String,
    pub record: String,
}

impl VerdictRow {
    pub fn of(v: &VerdictRecord) -> Self {
        let verdict = match v.verdict {
            Verdict::Owned => "owned",
            Verdict::NotOwned => "not-owned",
            Verdict::Refused => "refused",
        };
        VerdictRow { verdict: verdict.into(), gap: v.gap, model: v.model.to_hex(), record: v.digest().to_hex() }
    }
}

pub struct PipelineRun {
    pub coalition: CoalitionRun,
    pub network: Network,
    pub reports: Vec<HeightReport>,
    pub rounds: Vec<PipelineRow>,
    pub consensus_rows: Vec<ConsensusRow>,
    pub verdict: VerdictRecord,
}

/// Runs heights until every pending transaction is on chain.
fn drain(net: &mut Network, reports: &mut Vec<HeightReport>, rows: &mut Vec<ConsensusRow>) -> Result<(), HarnessError> {
    const MAX_RETRIES: usize = 20;
    for _ in 0..MAX_RETRIES {
        let r = net.run_height()?;
        rows.push(consensus_row(&r, net));
        reports.push(r);
        if net.mempool.is_empty() {
            return Ok(());
        }
    }
    Err(HarnessError::Pipeline(format!("mempool not drained after {MAX_RETRIES} heights")))
}

pub fn run_full_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun, HarnessError> {
    let seed = cfg.master_seed;
    let coalition = run_coalition_experiment(cfg)?;
    let (_, profiles) = population(cfg)?;
    let partition: &Partition = &coalition.trace.final_partition;
    let truth = GroundTruth::generate(DEFAULT_DIM, rng::child_seed(seed, "ground_truth", 0));

    let nodes = assign_profiles(cfg.n_full, cfg.byz_fraction, seed);
    let initial = ModelVector::zeros(DEFAULT_DIM).to_bytes();
    let mut net = Network::new(seed, nodes, params(cfg), TASK_ID, initial.clone())?;
    for a in profiles.keys() {
        net.registry.register(Principal::Avatar(*a));
    }
    let requester = 0;
    net.registry.register(Principal::Requester(requester));
    let agg = aggregator(&net);
    let mut payments = Hashchain::new(&seed.to_le_bytes(), cfg.rounds as usize + 1)?;
    let trtx = TrTxBody {
        task_id: TASK_ID,
        timestamp: 0,
        requester,
        task_reward: 100.0,
        initial_model_ptr: net.store.put(initial),
        expected_performance: 0.9,
        payment_anchor: payments.anchor(),
    };
    net.submit(build_with_registry(TxPayload::TaskRequest(trtx), &net.registry)?);

    let mut reports = Vec::new();
    let mut consensus_rows = Vec::new();
    let mut rounds = Vec::new();
    let mut verdict = None;
    for round in 1..=cfg.rounds {
        let out = run_round(partition, &profiles, &truth, cfg.dp.sigma, cfg.n_edges, round, seed)?;
        for c in &out.clusters {
            let body = SaTxBody {
                task_id: TASK_ID,
                round,
                members: c.members.clone(),
                aggregate_ptr: net.store.put(c.params.to_bytes()),
                contributions: c.members.iter().map(|m| profiles[m].contribution()).collect(),
            };
            net.submit(build_with_registry(TxPayload::SocialAggregate(body), &net.registry)?);
        }
        let global_ptr = net.store.put(out.global.to_bytes());
        let ga = GaTxBody { task_id: TASK_ID, round, global_ptr, aggregator: agg };
        net.submit(build_with_registry(TxPayload::GlobalAggregate(ga), &net.registry)?);

        if round == cfg.rounds {
            let v = protect_and_verify(cfg, &profiles)?;
            let body = ProvenanceTxBody { task_id: TASK_ID, verdict_ptr: net.store.put(v.to_bytes()), verifier: agg };
            net.submit(build_with_registry(TxPayload::Provenance(body), &net.registry)?);
            verdict = Some(v);
        }

        drain(&mut net, &mut reports, &mut consensus_rows)?;
        let tip = net.chain.tip();
        rounds.push(PipelineRow {
            round,
            clusters: out.clusters.len(),
            utility: out.utility,
            global_ptr: global_ptr.to_hex(),
            block_height: tip.header.height,
            block_hash: tip.hash().to_hex(),
            satx_count: tip.txs.iter().filter(|t| matches!(t, Transaction::SocialAggregate(_))).count(),
            payment_commit: payments.commit()?.to_hex(),
        });
    }
    let genesis = net.chain.genesis().hash();
    net.chain
        .validate(&genesis, &net.store, &net.registry, &net.verifier())
        .map_err(|(h, e)| HarnessError::Pipeline(format!("chain invalid at height {h}: {e}")))?;
    let verdict = verdict.ok_or_else(|| HarnessError::Pipeline("no rounds configured".into()))?;
    Ok(PipelineRun { coalition, network: net, reports, rounds, consensus_rows, verdict })
}

/// Every avatar owns a private watermark; the global model carries the
/// joint one and is verified once with everyone's genuine submissions.
fn protect_and_verify(cfg: &ExperimentConfig, profiles: &Profiles) -> Result<VerdictRecord, HarnessError> {
    let (task, clean) = main_model(cfg);
    let seed = rng::child_seed(cfg.master_seed, "deployment", 0);
    let dep = Deployment::build(profiles.len(), seed, &clean, &task, &cfg.watermark, &cfg.thresholds)?;
    Ok(dep.verify(&dep.model, &genuine_submissions(&dep.watermarks), &cfg.thresholds)?)
}
