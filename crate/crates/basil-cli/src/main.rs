use std::path::{Path, PathBuf};
use std::process::ExitCode;

use basil::client::{ReadQuorum, ViewStrategy};
use basil::sim::SimConfig;
use basil::workload::WorkloadKind;
use basil_cli::{
    execute, load_campaign, load_results, load_sim_config, parse_behavior, parse_read_quorum, parse_view_strategy,
    parse_workload, run_campaign, summary_table, verify_file, AnyBehavior, Campaign, CliError, Overrides, RunSpec,
};
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "basil-sim", version, about = "Simulate, verify and summarize Basil runs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and verify it.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Name of the run directory (default: seed-<seed>).
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Run a matrix of workloads x adversaries x seeds.
    Campaign {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of seeds (overrides the config's matrix).
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a history log and print the verdict.
    Verify {
        log: PathBuf,
        /// Also write the verdict here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary table of an output directory.
    Report { dir: PathBuf },
}

#[derive(Args, Default)]
struct Knobs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    f: Option<u32>,
    #[arg(long)]
    shards: Option<u32>,
    #[arg(long)]
    clients: Option<u32>,
    /// Fraction of Byzantine clients.
    #[arg(long)]
    byz_frac: Option<f64>,
    /// Client or replica behavior; repeatable.
    #[arg(long, value_parser = parse_behavior)]
    byz_behavior: Vec<AnyBehavior>,
    /// Byzantine replicas per shard (defaults to f when a replica behavior is given).
    #[arg(long)]
    byz_replicas: Option<u32>,
    #[arg(long, value_parser = parse_workload)]
    workload: Option<WorkloadKind>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    reads: Option<usize>,
    #[arg(long)]
    writes: Option<usize>,
    #[arg(long)]
    keys: Option<u64>,
    #[arg(long)]
    duration: Option<u64>,
    #[arg(long)]
    quiesce: Option<u64>,
    #[arg(long)]
    gst: Option<u64>,
    #[arg(long)]
    delta: Option<u64>,
    /// Replies per signature batch.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_parser = parse_read_quorum)]
    read_quorum: Option<ReadQuorum>,
    #[arg(long, value_parser = parse_view_strategy)]
    view_strategy: Option<ViewStrategy>,
}

impl Knobs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            f: self.f,
            shards: self.shards,
            clients: self.clients,
            byz_frac: self.byz_frac,
            byz_behaviors: self.byz_behavior.clone(),
            byz_replicas: self.byz_replicas,
            workload: self.workload,
            zipf: self.zipf,
            reads: self.reads,
            writes: self.writes,
            keys: self.keys,
            duration: self.duration,
            quiesce: self.quiesce,
            gst: self.gst,
            delta: self.delta,
            batch: self.batch,
            read_quorum: self.read_quorum,
            view_strategy: self.view_strategy,
        }
    }
}

fn base_config(path: Option<&Path>) -> Result<SimConfig, CliError> {
    match path {
        Some(p) => load_sim_config(p),
        None => Ok(SimConfig::default()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("run failed: {msg}");
            ExitCode::from(EXIT_RUN)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<u8, CliError> {
    match cmd {
        Cmd::Run { config, knobs, out, run_id } => {
            let mut cfg = base_config(config.as_deref())?;
            knobs.overrides().apply(&mut cfg);
            cfg.validate()?;
            let id = run_id.unwrap_or_else(|| format!("seed-{}", cfg.seed));
            let result = execute(&RunSpec { id, cfg }, &out)?;
            let table = summary_table(std::slice::from_ref(&result));
            print!("{table}");
            Ok(if result.verdict.ok() { 0 } else { EXIT_VERIFY })
        }
        Cmd::Campaign { config, seeds, jobs, knobs, out } => {
            let mut campaign = match config {
                Some(p) => load_campaign(&p)?,
                None => Campaign { base: SimConfig::default(), matrix: Default::default() },
            };
            knobs.overrides().apply(&mut campaign.base);
            if let Some(s) = knobs.seed {
                campaign.matrix.seed_start = s;
            }
            if let Some(s) = seeds {
                campaign.matrix.seeds = s;
            }
            if let Some(j) = jobs {
                campaign.matrix.jobs = j;
            }
            std::fs::create_dir_all(&out)?;
            let results = run_campaign(&campaign, &out)?;
            print!("{}", summary_table(&results));
            Ok(if results.iter().all(|r| r.verdict.ok()) { 0 } else { EXIT_VERIFY })
        }
        Cmd::Verify { log, out } => {
            let verdict = verify_file(&log)?;
            let text = serde_json::to_string_pretty(&verdict).map_err(|e| CliError::Run(e.to_string()))?;
            println!("{text}");
            if let Some(p) = out {
                std::fs::write(p, format!("{text}\n"))?;
            }
            Ok(if verdict.ok() { 0 } else { EXIT_VERIFY })
        }
        Cmd::Report { dir } => {
            let results = load_results(&dir)?;
            if results.is_empty() {
                return Err(CliError::Usage(format!("no runs found under {}", dir.display())));
            }
            print!("{}", summary_table(&results));
            Ok(if results.iter().all(|r| r.verdict.ok()) { 0 } else { EXIT_VERIFY })
        }
    }
}
