//! Experiment orchestration and CSV reporting.

mod config;
mod experiments;

pub use config::{load_config, AttackGrid, ExperimentConfig};
pub use experiments::{
    assign_profiles, main_model, run_coalition_experiment, run_consensus_experiment, run_full_pipeline,
    run_provenance_experiment, verification_baselines, AttackRow, BaselineRow, CoalitionRow, CoalitionRun,
    ConsensusRow, ConsensusRun, ConsensusSummary, PipelineRow, PipelineRun, ProvenanceRun, VerdictRow,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::ledger::Digest;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] crate::social_graph::GraphError),
    #[error(transparent)]
    Coalition(#[from] crate::coalition::CoalitionError),
    #[error(transparent)]
    Fl(#[from] crate::flsim::FlError),
    #[error(transparent)]
    Consensus(#[from] crate::consensus::ConsensusError),
    #[error(transparent)]
    Provenance(#[from] crate::provenance::ProvenanceError),
    #[error(transparent)]
    Tx(#[from] crate::ledger::TxError),
    #[error(transparent)]
    Hashchain(#[from] crate::ledger::HashchainError),
    #[error("pipeline: {0}")]
    Pipeline(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Coalition,
    Consensus,
    Provenance,
    Pipeline,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::Coalition, Experiment::Consensus, Experiment::Provenance, Experiment::Pipeline];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Coalition => "coalition",
            Experiment::Consensus => "consensus",
            Experiment::Provenance => "provenance",
            Experiment::Pipeline => "pipeline",
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    master_seed: u64,
    config_digest: String,
    version: &'a str,
    /// File name to SHA-256 of its contents.
    outputs: BTreeMap<String, String>,
}

/// Runs `exp` and writes its outputs plus `<name>_manifest.json` into `dir`.
/// Returns the written paths.
pub fn execute(exp: Experiment, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<String> = Vec::new();
    let mut csv_out = |name: &str, f: &dyn Fn(&Path) -> Result<(), HarnessError>| -> Result<(), HarnessError> {
        f(&dir.join(name))?;
        files.push(name.to_string());
        Ok(())
    };
    match exp {
        Experiment::Coalition => {
            let run = run_coalition_experiment(cfg)?;
            csv_out("coalition.csv", &|p| write_csv(p, &run.rows))?;
        }
        Experiment::Consensus => {
            let run = run_consensus_experiment(cfg)?;
            csv_out("consensus.csv", &|p| write_csv(p, &run.rows))?;
            csv_out("consensus_summary.csv", &|p| write_csv(p, std::slice::from_ref(&run.summary)))?;
        }
        Experiment::Provenance => {
            let run = run_provenance_experiment(cfg)?;
            csv_out("provenance.csv", &|p| write_csv(p, &run.rows))?;
            csv_out("provenance_baseline.csv", &|p| write_csv(p, &run.baselines))?;
        }
        Experiment::Pipeline => {
            let run = run_full_pipeline(cfg)?;
            csv_out("pipeline_coalition.csv", &|p| write_csv(p, &run.coalition.rows))?;
            csv_out("pipeline_rounds.csv", &|p| write_csv(p, &run.rounds))?;
            csv_out("pipeline_consensus.csv", &|p| write_csv(p, &run.consensus_rows))?;
            csv_out("pipeline_verdict.csv", &|p| write_csv(p, &[VerdictRow::of(&run.verdict)]))?;
            csv_out("chain.jsonl", &|p| Ok(run.network.chain.export_jsonl(fs::File::create(p)?)?))?;
        }
    }
    let mut outputs = BTreeMap::new();
    for f in &files {
        outputs.insert(f.clone(), Digest::of(&fs::read(dir.join(f))?).to_hex());
    }
    let manifest = Manifest {
        experiment: exp.name(),
        master_seed: cfg.master_seed,
        config_digest: cfg.digest().to_hex(),
        version: env!("CARGO_PKG_VERSION"),
        outputs,
    };
    let name = format!("{}_manifest.json", exp.name());
    fs::write(dir.join(&name), serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(name);
    Ok(files.into_iter().map(|f| dir.join(f)).collect())
}
