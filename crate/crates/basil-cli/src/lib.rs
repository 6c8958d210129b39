//! Experiment plumbing behind the `basil-sim` binary: config loading,
//! single runs, campaigns and the summary table.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use basil::adversary::{ClientBehavior, ReplicaBehavior};
use basil::client::{ReadQuorum, ViewStrategy};
use basil::history::HistoryLog;
use basil::metrics::Metrics;
use basil::sim::{Sim, SimConfig};
use basil::verifier::{self, Verdict};
use basil::workload::WorkloadKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const HISTORY_FILE: &str = "history.log";
pub const METRICS_FILE: &str = "metrics";
pub const VERDICT_FILE: &str = "verdict";
pub const SUMMARY_FILE: &str = "summary";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

impl From<basil::Error> for CliError {
    fn from(e: basil::Error) -> Self {
        match e {
            basil::Error::Config(_) | basil::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

/// A Byzantine behavior named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnyBehavior {
    Client(ClientBehavior),
    Replica(ReplicaBehavior),
}

pub fn parse_behavior(s: &str) -> Result<AnyBehavior, String> {
    if let Some(b) = ClientBehavior::ALL.into_iter().find(|b| b.name() == s) {
        return Ok(AnyBehavior::Client(b));
    }
    if let Some(b) = ReplicaBehavior::ALL.into_iter().find(|b| b.name() == s) {
        return Ok(AnyBehavior::Replica(b));
    }
    let names: Vec<&str> =
        ClientBehavior::ALL.iter().map(|b| b.name()).chain(ReplicaBehavior::ALL.iter().map(|b| b.name())).collect();
    Err(format!("unknown behavior `{s}` (expected one of: {})", names.join(", ")))
}

fn parse_serde<T: for<'de> Deserialize<'de>>(s: &str, what: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("invalid {what} `{s}`"))
}

pub fn parse_workload(s: &str) -> Result<WorkloadKind, String> {
    parse_serde(s, "workload")
}

pub fn parse_read_quorum(s: &str) -> Result<ReadQuorum, String> {
    parse_serde(s, "read quorum (f+1 or 2f+1)")
}

pub fn parse_view_strategy(s: &str) -> Result<ViewStrategy, String> {
    parse_serde(s, "view strategy (subsumption or matching)")
}

/// Command-line values applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub f: Option<u32>,
    pub shards: Option<u32>,
    pub clients: Option<u32>,
    pub byz_frac: Option<f64>,
    pub byz_behaviors: Vec<AnyBehavior>,
    pub byz_replicas: Option<u32>,
    pub workload: Option<WorkloadKind>,
    pub zipf: Option<f64>,
    pub reads: Option<usize>,
    pub writes: Option<usize>,
    pub keys: Option<u64>,
    pub duration: Option<u64>,
    pub quiesce: Option<u64>,
    pub gst: Option<u64>,
    pub delta: Option<u64>,
    pub batch: Option<usize>,
    pub read_quorum: Option<ReadQuorum>,
    pub view_strategy: Option<ViewStrategy>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SimConfig) {
        macro_rules! set {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { cfg.$($target).+ = v; })*
            };
        }
        set!(
            seed => seed,
            f => f,
            shards => shards,
            clients => clients,
            byz_frac => byz_client_frac,
            byz_replicas => byz_replicas_per_shard,
            workload => workload.kind,
            zipf => workload.zipf,
            reads => workload.reads,
            writes => workload.writes,
            keys => workload.keys,
            duration => duration,
            quiesce => quiesce,
            gst => gst,
            delta => delta,
            batch => batch_size,
            read_quorum => read_quorum,
            view_strategy => view_strategy,
        );
        let clients: Vec<ClientBehavior> = self
            .byz_behaviors
            .iter()
            .filter_map(|b| match b {
                AnyBehavior::Client(c) => Some(*c),
                _ => None,
            })
            .collect();
        let replicas: Vec<ReplicaBehavior> = self
            .byz_behaviors
            .iter()
            .filter_map(|b| match b {
                AnyBehavior::Replica(r) => Some(*r),
                _ => None,
            })
            .collect();
        if !clients.is_empty() {
            cfg.byz_client_behaviors = clients;
        }
        if !replicas.is_empty() {
            cfg.byz_replica_behaviors = replicas;
            if self.byz_replicas.is_none() && cfg.byz_replicas_per_shard == 0 {
                cfg.byz_replicas_per_shard = cfg.f;
            }
        }
    }
}

fn toml_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

/// A single-run config: the flat `SimConfig` fields.
pub fn load_sim_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| toml_error(path, e))?;
    table.remove("matrix");
    table.try_into().map_err(|e| toml_error(path, e))
}

/// One adversary setting of a campaign matrix; unset fields keep the base config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adversary {
    pub name: String,
    pub byz_client_frac: Option<f64>,
    #[serde(default)]
    pub byz_client_behaviors: Vec<ClientBehavior>,
    pub byz_replicas_per_shard: Option<u32>,
    #[serde(default)]
    pub byz_replica_behaviors: Vec<ReplicaBehavior>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Matrix {
    pub seeds: u64,
    pub seed_start: u64,
    pub workloads: Vec<WorkloadKind>,
    pub adversaries: Vec<Adversary>,
    /// Worker threads; 0 picks the number of cores.
    pub jobs: usize,
}

impl Default for Matrix {
    fn default() -> Self {
        Matrix { seeds: 1, seed_start: 1, workloads: Vec::new(), adversaries: Vec::new(), jobs: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub base: SimConfig,
    pub matrix: Matrix,
}

/// A campaign config: `SimConfig` fields plus a `[matrix]` table.
pub fn load_campaign(path: &Path) -> Result<Campaign, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| toml_error(path, e))?;
    let matrix = match table.remove("matrix") {
        Some(m) => m.try_into().map_err(|e| toml_error(path, format!("matrix: {e}")))?,
        None => Matrix::default(),
    };
    let base: SimConfig = table.try_into().map_err(|e| toml_error(path, e))?;
    Ok(Campaign { base, matrix })
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub id: String,
    pub cfg: SimConfig,
}

impl Campaign {
    /// Expand the matrix, sorted by run id.
    pub fn runs(&self) -> Vec<RunSpec> {
        let workloads = if self.matrix.workloads.is_empty() { vec![self.base.workload.kind] } else { self.matrix.workloads.clone() };
        let adversaries = if self.matrix.adversaries.is_empty() {
            vec![Adversary { name: "base".into(), ..Adversary::default() }]
        } else {
            self.matrix.adversaries.clone()
        };
        let mut out = Vec::new();
        for adv in &adversaries {
            for wl in &workloads {
                for seed in self.matrix.seed_start..self.matrix.seed_start + self.matrix.seeds {
                    let mut cfg = self.base.clone();
                    cfg.seed = seed;
                    cfg.workload.kind = *wl;
                    if let Some(x) = adv.byz_client_frac {
                        cfg.byz_client_frac = x;
                    }
                    if !adv.byz_client_behaviors.is_empty() {
                        cfg.byz_client_behaviors = adv.byz_client_behaviors.clone();
                    }
                    if let Some(x) = adv.byz_replicas_per_shard {
                        cfg.byz_replicas_per_shard = x;
                    }
                    if !adv.byz_replica_behaviors.is_empty() {
                        cfg.byz_replica_behaviors = adv.byz_replica_behaviors.clone();
                    }
                    let wl_name = serde_json::to_value(wl).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                    out.push(RunSpec { id: format!("{}-{}-s{:04}", adv.name, wl_name, seed), cfg });
                }
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub id: String,
    pub metrics: Metrics,
    pub verdict: Verdict,
}

/// Simulate, verify and write `<out>/<id>/{history.log, metrics, verdict}`.
pub fn execute(spec: &RunSpec, out: &Path) -> Result<RunResult, CliError> {
    let outcome = Sim::new(spec.cfg.clone())?.run();
    let verdict = verifier::verify(&outcome.log);
    let dir = out.join(&spec.id);
    fs::create_dir_all(&dir)?;
    outcome.log.write_ndjson(BufWriter::new(fs::File::create(dir.join(HISTORY_FILE))?))?;
    write_json(&dir.join(METRICS_FILE), &outcome.metrics)?;
    write_json(&dir.join(VERDICT_FILE), &verdict)?;
    Ok(RunResult { id: spec.id.clone(), metrics: outcome.metrics, verdict })
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Run(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Run every cell of the matrix and write the summary table.
pub fn run_campaign(campaign: &Campaign, out: &Path) -> Result<Vec<RunResult>, CliError> {
    let runs = campaign.runs();
    for r in &runs {
        r.cfg.validate().map_err(|e| CliError::Usage(format!("run {}: {e}", r.id)))?;
    }
    let work = || runs.par_iter().map(|r| execute(r, out)).collect::<Result<Vec<_>, _>>();
    let mut results = if campaign.matrix.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(campaign.matrix.jobs)
            .build()
            .map_err(|e| CliError::Run(e.to_string()))?;
        pool.install(work)?
    } else {
        work()?
    };
    results.sort_by(|a, b| a.id.cmp(&b.id));
    fs::write(out.join(SUMMARY_FILE), summary_table(&results))?;
    Ok(results)
}

pub fn verify_file(path: &Path) -> Result<Verdict, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let log = HistoryLog::read_ndjson(BufReader::new(file))?;
    Ok(verifier::verify(&log))
}

/// Collect the run results found under a campaign or run output directory.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>, CliError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(METRICS_FILE).is_file() && p.join(VERDICT_FILE).is_file())
        .collect();
    dirs.sort();
    let read = |p: &Path| -> Result<String, CliError> { Ok(fs::read_to_string(p)?) };
    let mut out = Vec::new();
    for d in dirs {
        let metrics = serde_json::from_str(&read(&d.join(METRICS_FILE))?).map_err(|e| CliError::Run(format!("{}: {e}", d.display())))?;
        let verdict = serde_json::from_str(&read(&d.join(VERDICT_FILE))?).map_err(|e| CliError::Run(format!("{}: {e}", d.display())))?;
        let id = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push(RunResult { id, metrics, verdict });
    }
    Ok(out)
}

fn verdict_word(v: &Verdict) -> String {
    if !v.ok() {
        let failed: Vec<&str> = v.failures().map(|c| c.name.as_str()).collect();
        return format!("FAIL({})", failed.join(","));
    }
    if v.checks.iter().any(|c| c.status == verifier::Status::Incomplete) {
        return "incomplete".into();
    }
    "pass".into()
}

pub fn summary_table(results: &[RunResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<40} {:>8} {:>8} {:>7} {:>8} {:>6} {:>6} {:>6} {:>6} {:>6}  verdict",
        "run", "commit", "abort", "fast%", "tput", "p50", "p99", "fb", "elect", "byz-c"
    );
    for r in results {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<40} {:>8} {:>8} {:>7.1} {:>8.2} {:>6} {:>6} {:>6} {:>6} {:>6}  {}",
            r.id,
            m.correct.committed,
            m.correct.aborted,
            100.0 * m.fast_fraction,
            m.throughput,
            m.commit_latency.p50,
            m.commit_latency.p99,
            m.fallbacks,
            m.elections,
            m.byzantine.committed,
            verdict_word(&r.verdict)
        );
    }
    let failed = results.iter().filter(|r| !r.verdict.ok()).count();
    let _ = writeln!(s, "runs: {}  failed verification: {}", results.len(), failed);
    s
}
