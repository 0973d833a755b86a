use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsfl_core::error::DsflError;
use dsfl_core::harness::{
    attack_demo, audit_report, compare_matrix, parse_override, run_experiment, write_metrics_csv, write_summary_csv,
    AggregatorKind, ExperimentConfig, Setting,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "dsfl", version, about = "Dual-server Byzantine-resilient federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write per-round metrics as CSV.
    Run(Common),
    /// Sweep aggregators × Byzantine fractions and write one summary row per cell.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated aggregators.
        #[arg(long, default_value = "fedavg,dsfl")]
        aggregators: String,
        /// Comma-separated Byzantine fractions; may be empty.
        #[arg(long, default_value = "0,0.2")]
        betas: String,
    },
    /// Report rank and recoverability of the group-sum system for one drawn grouping.
    Audit(Common),
    /// Run the original two-server round and the single-colluder reconstruction.
    AttackDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Override any config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<DsflError> for Failure {
    fn from(e: DsflError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut overrides: Vec<Setting> = Vec::new();
    for s in &common.set {
        overrides.push(parse_override(s).map_err(|e| Failure::Config(e.to_string()))?);
    }
    for (key, value) in [
        ("seed", common.seed.map(|v| v.to_string())),
        ("rounds", common.rounds.map(|v| v.to_string())),
    ] {
        if let Some(value) = value {
            overrides.push(Setting {
                key: key.into(),
                value,
                line: None,
            });
        }
    }
    let env_seed = std::env::var("DSFL_SEED").ok();
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), &overrides, env_seed.as_deref())
        .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Failure::Config(format!("--{flag}: cannot parse `{p}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let rows = run_experiment(&cfg)?;
            if cfg.output.is_none() {
                write_metrics_csv(&rows, io::stdout().lock())?;
            }
        }
        Command::Compare {
            common,
            aggregators,
            betas,
        } => {
            let cfg = load(&common)?;
            let aggs = aggregators
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| AggregatorKind::parse(p).ok_or_else(|| Failure::Config(format!("unknown aggregator `{p}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            let betas: Vec<f64> = parse_list("betas", &betas)?;
            let rows = compare_matrix(&cfg, &aggs, &betas)?;
            match &cfg.output {
                Some(path) => write_summary_csv(&rows, std::fs::File::create(path)?)?,
                None => write_summary_csv(&rows, io::stdout().lock())?,
            }
        }
        Command::Audit(common) => {
            let cfg = load(&common)?;
            let r = audit_report(&cfg)?;
            let mut out = io::stdout().lock();
            writeln!(out, "participants    {}", r.n_participants)?;
            writeln!(out, "groups          {} (size {})", r.n_groups, r.group_size)?;
            writeln!(out, "rank            {}", r.rank)?;
            writeln!(out, "nullspace_dim   {}", r.nullspace_dim)?;
            writeln!(out, "exposed         {:?}", r.exposed)?;
            writeln!(out, "verdict         {}", if r.ambiguous { "ambiguous" } else { "unique" })?;
            writeln!(out, "residual        {:e}", r.witness_residual)?;
            writeln!(out, "witness_gap     {:e}", r.witness_gap)?;
        }
        Command::AttackDemo { common, dim } => {
            let cfg = load(&common)?;
            let r = attack_demo(cfg.round.n_participants, dim, cfg.round.noise_std, cfg.round.seed)?;
            let mut out = io::stdout().lock();
            writeln!(out, "participants              {}", r.n_participants)?;
            writeln!(out, "dim                       {}", r.dim)?;
            writeln!(out, "max_share_error           {:e}", r.max_share_error)?;
            writeln!(out, "max_reconstruction_error  {:e}", r.max_update_error)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("dsfl: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("dsfl: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
