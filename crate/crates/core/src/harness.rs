//! Experiment configuration, orchestration and CSV output.
//!
//! Configs are flat `key = value` files; `#` starts a comment. Every run is
//! fully determined by its config, so identical configs give identical CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{combine_shares, exposed_participants, group_sum_residual, lsfl_reconstruct, pcm_rank, recovery_audit, RecoveryVerdict};
use crate::baselines::lsfl_round;
use crate::clients::{AdversaryKind, AdversarySpec, FlipMap};
use crate::error::{DsflError, Result};
use crate::grouping::group_share_sums;
use crate::model::ModelVector;
use crate::protocol::{round_overhead, run_training_with, stream, stream_rng, Aggregator, Overhead, RoundConfig, RoundRecord};
use crate::tasks::{make_task, Task, TaskSpec, DEFAULT_L2_REG};

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "rounds",
    "output",
    "n_participants",
    "byz_fraction",
    "noise_std",
    "group_size",
    "k",
    "n_groups",
    "credit_init",
    "reward",
    "penalty",
    "cost",
    "local_epochs",
    "batch_size",
    "learning_rate",
    "lr_gamma",
    "task",
    "task_dim",
    "task_classes",
    "task_samples",
    "task_noise",
    "task_separation",
    "task_pixel_noise",
    "l2_reg",
    "csv_path",
    "iid",
    "adversary",
    "adversary_ids",
    "adversary_count",
    "adversary_q",
    "free_rider_std",
    "flip_map",
    "flip_scale",
    "resample_adversaries",
    "aggregator",
    "trim_frac",
    "krum_f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    Dsfl,
    FedAvg,
    Median,
    TrimmedMean,
    Krum,
    Lsfl,
}

impl AggregatorKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dsfl" => AggregatorKind::Dsfl,
            "fedavg" => AggregatorKind::FedAvg,
            "median" => AggregatorKind::Median,
            "trimmed_mean" => AggregatorKind::TrimmedMean,
            "krum" => AggregatorKind::Krum,
            "lsfl" => AggregatorKind::Lsfl,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::Dsfl => "dsfl",
            AggregatorKind::FedAvg => "fedavg",
            AggregatorKind::Median => "median",
            AggregatorKind::TrimmedMean => "trimmed_mean",
            AggregatorKind::Krum => "krum",
            AggregatorKind::Lsfl => "lsfl",
        }
    }
}

/// Which adversary model the config asks for; label maps are resolved once the
/// class count is known.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversaryChoice {
    Honest,
    Inversion { q: f64 },
    FreeRider { noise_std: f64 },
    LabelFlip { flip_map: Option<Vec<usize>>, scale: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub round: RoundConfig,
    pub task: TaskSpec,
    pub iid: bool,
    pub adversary: AdversaryChoice,
    /// Explicit adversary ids; otherwise the first `adversary_count` participants.
    pub adversary_ids: Option<Vec<usize>>,
    /// Defaults to `round(β·N)`.
    pub adversary_count: Option<usize>,
    pub resample_adversaries: bool,
    pub aggregator: AggregatorKind,
    /// Defaults to `β`.
    pub trim_frac: Option<f64>,
    /// Defaults to `⌊β·N⌋`.
    pub krum_f: Option<usize>,
    pub rounds: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            round: RoundConfig::default(),
            task: TaskSpec::Quadratic {
                dim: 20,
                samples: 500,
                noise: 0.1,
            },
            iid: true,
            adversary: AdversaryChoice::Honest,
            adversary_ids: None,
            adversary_count: None,
            resample_adversaries: false,
            aggregator: AggregatorKind::Dsfl,
            trim_frac: None,
            krum_f: None,
            rounds: 100,
            output: None,
        }
    }
}

/// One `key = value` assignment and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    /// Line in the config file; `None` for command-line overrides.
    pub line: Option<usize>,
}

/// Splits config text into settings, rejecting malformed lines and unknown keys.
pub fn parse_settings(text: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| DsflError::config(Some(line), content, "expected `key = value`"))?;
        out.push(make_setting(key, value, Some(line))?);
    }
    Ok(out)
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<Setting> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| DsflError::config(None, s, "expected `key=value`"))?;
    make_setting(key, value, None)
}

fn make_setting(key: &str, value: &str, line: Option<usize>) -> Result<Setting> {
    let key = key.trim();
    if !KNOWN_KEYS.contains(&key) {
        return Err(DsflError::config(line, key, "unknown key"));
    }
    Ok(Setting {
        key: key.to_string(),
        value: value.trim().to_string(),
        line,
    })
}

/// Last value given for each key.
struct Settings(BTreeMap<String, (String, Option<usize>)>);

impl Settings {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| DsflError::config(*line, key, format!("cannot parse `{v}`"))),
        }
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|(v, _)| v.as_str())
    }

    fn list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|_| DsflError::config(*line, key, format!("cannot parse `{p}` as an index")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn err(&self, key: &str, msg: impl Into<String>) -> DsflError {
        DsflError::config(self.0.get(key).and_then(|(_, l)| *l), key, msg)
    }
}

impl ExperimentConfig {
    /// Builds a config from settings applied in order over the defaults.
    pub fn from_settings(settings: &[Setting]) -> Result<Self> {
        let s = Settings(
            settings
                .iter()
                .map(|st| (st.key.clone(), (st.value.clone(), st.line)))
                .collect(),
        );
        let d = ExperimentConfig::default();
        let rd = &d.round;
        let opt_usize = |key: &str| -> Result<Option<usize>> {
            match s.str(key) {
                Some("auto") => Ok(None),
                _ => s.get(key),
            }
        };
        let round = RoundConfig {
            n_participants: s.get("n_participants")?.unwrap_or(rd.n_participants),
            byz_fraction: s.get("byz_fraction")?.unwrap_or(rd.byz_fraction),
            noise_std: s.get("noise_std")?.unwrap_or(rd.noise_std),
            group_size: s.get("group_size")?.unwrap_or(rd.group_size),
            k: opt_usize("k")?,
            n_groups: opt_usize("n_groups")?,
            credit_init: s.get("credit_init")?.unwrap_or(rd.credit_init),
            reward: s.get("reward")?.unwrap_or(rd.reward),
            penalty: s.get("penalty")?.unwrap_or(rd.penalty),
            cost: s.get("cost")?.unwrap_or(rd.cost),
            local_epochs: s.get("local_epochs")?.unwrap_or(rd.local_epochs),
            batch_size: s.get("batch_size")?.unwrap_or(rd.batch_size),
            learning_rate: s.get("learning_rate")?.unwrap_or(rd.learning_rate),
            lr_gamma: s.get("lr_gamma")?,
            seed: s.get("seed")?.unwrap_or(rd.seed),
        };
        let l2_reg = s.get("l2_reg")?.unwrap_or(DEFAULT_L2_REG);
        let task = match s.str("task").unwrap_or("quadratic") {
            "quadratic" => TaskSpec::Quadratic {
                dim: s.get("task_dim")?.unwrap_or(20),
                samples: s.get("task_samples")?.unwrap_or(500),
                noise: s.get("task_noise")?.unwrap_or(0.1),
            },
            "logistic" => TaskSpec::Logistic {
                dim: s.get("task_dim")?.unwrap_or(10),
                classes: s.get("task_classes")?.unwrap_or(2),
                samples: s.get("task_samples")?.unwrap_or(1000),
                separation: s.get("task_separation")?.unwrap_or(3.0),
                l2_reg,
            },
            "tiny_digits" => TaskSpec::TinyDigits {
                samples: s.get("task_samples")?.unwrap_or(1000),
                pixel_noise: s.get("task_pixel_noise")?.unwrap_or(0.3),
                l2_reg,
            },
            "csv" => TaskSpec::Csv {
                path: s
                    .str("csv_path")
                    .ok_or_else(|| DsflError::config(None, "csv_path", "required when task = csv"))?
                    .to_string(),
                l2_reg,
            },
            other => return Err(s.err("task", format!("unknown task `{other}`"))),
        };
        let adversary = match s.str("adversary").unwrap_or("honest") {
            "honest" => AdversaryChoice::Honest,
            "inversion" => AdversaryChoice::Inversion {
                q: s.get("adversary_q")?.unwrap_or(-1.0),
            },
            "free_rider" => AdversaryChoice::FreeRider {
                noise_std: s.get("free_rider_std")?.unwrap_or(1.0),
            },
            "label_flip" => AdversaryChoice::LabelFlip {
                flip_map: s.list("flip_map")?,
                scale: s.get("flip_scale")?,
            },
            other => return Err(s.err("adversary", format!("unknown adversary `{other}`"))),
        };
        let aggregator = match s.str("aggregator") {
            None => d.aggregator,
            Some(name) => {
                AggregatorKind::parse(name).ok_or_else(|| s.err("aggregator", format!("unknown aggregator `{name}`")))?
            }
        };
        let cfg = ExperimentConfig {
            round,
            task,
            iid: s.get("iid")?.unwrap_or(d.iid),
            adversary,
            adversary_ids: s.list("adversary_ids")?,
            adversary_count: s.get("adversary_count")?,
            resample_adversaries: s.get("resample_adversaries")?.unwrap_or(false),
            aggregator,
            trim_frac: s.get("trim_frac")?,
            krum_f: s.get("krum_f")?,
            rounds: s.get("rounds")?.unwrap_or(d.rounds),
            output: s.str("output").map(PathBuf::from),
        };
        cfg.round
            .validate()
            .map_err(|e| DsflError::config(None, "round", e.to_string()))?;
        if cfg.rounds == 0 {
            return Err(s.err("rounds", "must be at least 1"));
        }
        Ok(cfg)
    }

    /// Reads `path` (if any), then applies `overrides`. `env_seed` is used only
    /// when neither the file nor the overrides set a seed.
    pub fn load(path: Option<&Path>, overrides: &[Setting], env_seed: Option<&str>) -> Result<Self> {
        let mut settings = match path {
            Some(p) => parse_settings(&fs::read_to_string(p)?)?,
            None => Vec::new(),
        };
        settings.extend_from_slice(overrides);
        if !settings.iter().any(|s| s.key == "seed") {
            if let Some(v) = env_seed {
                settings.push(Setting {
                    key: "seed".into(),
                    value: v.trim().to_string(),
                    line: None,
                });
            }
        }
        ExperimentConfig::from_settings(&settings)
    }

    pub fn make_task(&self) -> Result<Task> {
        let mut rng = stream_rng(self.round.seed, 0, 0, stream::TASK);
        make_task(&self.task, self.round.n_participants, self.iid, &mut rng)
    }

    pub fn adversary_spec(&self, task: &Task) -> Result<AdversarySpec> {
        let kind = match &self.adversary {
            AdversaryChoice::Honest => return Ok(AdversarySpec::honest()),
            AdversaryChoice::Inversion { q } => AdversaryKind::Inversion { q: *q },
            AdversaryChoice::FreeRider { noise_std } => AdversaryKind::FreeRider { noise_std: *noise_std },
            AdversaryChoice::LabelFlip { flip_map, scale } => {
                let map = match flip_map {
                    Some(m) => FlipMap::new(m.clone())?,
                    None => {
                        let classes = match &task.objective {
                            crate::tasks::Objective::Softmax { classes, .. } => *classes,
                            _ => return Err(DsflError::config(None, "adversary", "label flipping needs a classification task")),
                        };
                        FlipMap::cyclic(classes)?
                    }
                };
                AdversaryKind::LabelFlip {
                    flip_map: map,
                    scale: *scale,
                }
            }
        };
        let n = self.round.n_participants;
        let ids = match &self.adversary_ids {
            Some(ids) => ids.clone(),
            None => {
                let count = self
                    .adversary_count
                    .unwrap_or_else(|| (self.round.byz_fraction * n as f64).round() as usize);
                (0..count.min(n)).collect()
            }
        };
        let mut spec = AdversarySpec::new(kind, ids)?;
        spec.resample_each_round = self.resample_adversaries;
        Ok(spec)
    }

    pub fn aggregator(&self) -> Aggregator {
        let beta = self.round.byz_fraction;
        let n = self.round.n_participants;
        match self.aggregator {
            AggregatorKind::Dsfl => Aggregator::Dsfl,
            AggregatorKind::FedAvg => Aggregator::FedAvg,
            AggregatorKind::Median => Aggregator::Median,
            AggregatorKind::TrimmedMean => Aggregator::TrimmedMean {
                trim_frac: self.trim_frac.unwrap_or(beta),
            },
            AggregatorKind::Krum => Aggregator::Krum {
                f: self.krum_f.unwrap_or((beta * n as f64 + 1e-9).floor() as usize),
            },
            AggregatorKind::Lsfl => Aggregator::Lsfl,
        }
    }
}

/// One CSV row per round.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub dist_to_opt: Option<f64>,
    pub attacker_selected_count: usize,
    pub attacker_success_rate: f64,
    pub active_participants: usize,
    pub bytes_sent: usize,
}

pub const METRICS_HEADER: [&str; 8] = [
    "round",
    "loss",
    "accuracy",
    "dist_to_opt",
    "attacker_selected_count",
    "attacker_success_rate",
    "active_participants",
    "bytes_sent",
];

impl From<&RoundRecord> for MetricsRow {
    fn from(r: &RoundRecord) -> Self {
        MetricsRow {
            round: r.round,
            loss: r.metrics.loss,
            accuracy: r.metrics.accuracy,
            dist_to_opt: r.metrics.dist_to_opt,
            attacker_selected_count: r.adversaries_selected,
            attacker_success_rate: r.attacker_success_rate(),
            active_participants: r.participants.len(),
            bytes_sent: r.bytes_sent,
        }
    }
}

/// Formats with 12 significant digits, dropping trailing zeros.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed)
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            fmt_real(r.loss),
            fmt_opt(r.accuracy),
            fmt_opt(r.dist_to_opt),
            r.attacker_selected_count.to_string(),
            fmt_real(r.attacker_success_rate),
            r.active_participants.to_string(),
            r.bytes_sent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured experiment and returns the task and full history.
pub fn run_history(cfg: &ExperimentConfig) -> Result<(Task, Vec<RoundRecord>)> {
    let task = cfg.make_task()?;
    let adversary = cfg.adversary_spec(&task)?;
    let history = run_training_with(&cfg.round, &task, &adversary, cfg.rounds, cfg.aggregator())?;
    Ok((task, history))
}

/// Runs the experiment, writing the metrics CSV when an output path is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let (_, history) = run_history(cfg)?;
    let rows: Vec<MetricsRow> = history.iter().map(MetricsRow::from).collect();
    if let Some(path) = &cfg.output {
        write_metrics_csv(&rows, fs::File::create(path)?)?;
    }
    Ok(rows)
}

/// Final metrics of one `(aggregator, β)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub aggregator: AggregatorKind,
    pub byz_fraction: f64,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub final_dist_to_opt: Option<f64>,
    pub mean_attacker_success_rate: f64,
    pub final_active_participants: usize,
    pub total_bytes: usize,
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "aggregator",
    "byz_fraction",
    "final_loss",
    "final_accuracy",
    "final_dist_to_opt",
    "mean_attacker_success_rate",
    "final_active_participants",
    "total_bytes",
];

pub fn summarize(cfg: &ExperimentConfig, rows: &[MetricsRow]) -> SummaryRow {
    let last = rows.last().expect("a run has at least one round");
    SummaryRow {
        aggregator: cfg.aggregator,
        byz_fraction: cfg.round.byz_fraction,
        final_loss: last.loss,
        final_accuracy: last.accuracy,
        final_dist_to_opt: last.dist_to_opt,
        mean_attacker_success_rate: rows.iter().map(|r| r.attacker_success_rate).sum::<f64>() / rows.len() as f64,
        final_active_participants: last.active_participants,
        total_bytes: rows.iter().map(|r| r.bytes_sent).sum(),
    }
}

/// The base config with the aggregator and `β` of one sweep cell.
pub fn sweep_cell(base: &ExperimentConfig, aggregator: AggregatorKind, beta: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.aggregator = aggregator;
    cfg.round.byz_fraction = beta;
    cfg.output = None;
    cfg
}

/// Runs every `(aggregator, β)` pair; rows come back in sweep order, aggregators outermost.
pub fn compare_matrix(base: &ExperimentConfig, aggregators: &[AggregatorKind], betas: &[f64]) -> Result<Vec<SummaryRow>> {
    let cells: Vec<ExperimentConfig> = aggregators
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .map(|(a, b)| sweep_cell(base, a, b))
        .collect();
    cells
        .par_iter()
        .map(|cfg| run_experiment(cfg).map(|rows| summarize(cfg, &rows)))
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.aggregator.name().to_string(),
            fmt_real(r.byz_fraction),
            fmt_real(r.final_loss),
            fmt_opt(r.final_accuracy),
            fmt_opt(r.final_dist_to_opt),
            fmt_real(r.mean_attacker_success_rate),
            r.final_active_participants.to_string(),
            r.total_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-round message and byte counts of the dual-server round for `cfg`,
/// with the grouping shape of the first round.
pub fn overhead_report(cfg: &ExperimentConfig) -> Result<Overhead> {
    cfg.round.validate()?;
    let dim = match cfg.task.param_dim() {
        Some(d) => d,
        None => cfg.make_task()?.param_dim(),
    };
    let n = cfg.round.n_participants;
    let mut rng = stream_rng(cfg.round.seed, 1, 0, stream::ROUND);
    let pcm = cfg.round.draw_pcm(n, &mut rng)?;
    Ok(round_overhead(n, pcm.n_groups(), cfg.round.effective_k(), dim))
}

/// Linear-recovery audit of one drawn grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub n_participants: usize,
    pub n_groups: usize,
    pub group_size: usize,
    pub rank: usize,
    pub nullspace_dim: usize,
    pub exposed: Vec<usize>,
    pub ambiguous: bool,
    /// Worst group-sum mismatch over both witness assignments (or the unique solution).
    pub witness_residual: f64,
    /// Largest coordinate gap between the two witness assignments.
    pub witness_gap: f64,
}

pub fn audit_report(cfg: &ExperimentConfig) -> Result<AuditReport> {
    cfg.round.validate()?;
    let n = cfg.round.n_participants;
    let seed = cfg.round.seed;
    let pcm = cfg.round.draw_pcm(n, &mut stream_rng(seed, 1, 0, stream::ROUND))?;
    let (rank, nullspace_dim) = pcm_rank(&pcm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shares: Vec<ModelVector> = (0..n)
        .map(|_| ModelVector::new((0..4).map(|_| rng.gen_range(-20.0..20.0)).collect()))
        .collect::<Result<_>>()?;
    let sums = group_share_sums(&pcm, &shares)?;
    let (ambiguous, witness_residual, witness_gap) = match recovery_audit(&pcm, &sums)? {
        RecoveryVerdict::Ambiguous { witness, .. } => {
            let res = group_sum_residual(&pcm, &witness.0, &sums)?.max(group_sum_residual(&pcm, &witness.1, &sums)?);
            let mut gap = 0.0f64;
            for (a, b) in witness.0.iter().zip(&witness.1) {
                gap = gap.max(a.sub(b)?.norm_inf());
            }
            (true, res, gap)
        }
        RecoveryVerdict::Unique { recovered } => (false, group_sum_residual(&pcm, &recovered, &sums)?, 0.0),
    };
    Ok(AuditReport {
        n_participants: n,
        n_groups: pcm.n_groups(),
        group_size: pcm.group_size(),
        rank,
        nullspace_dim,
        exposed: exposed_participants(&pcm),
        ambiguous,
        witness_residual,
        witness_gap,
    })
}

/// Outcome of the single-colluder attack on the original two-server round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackReport {
    pub n_participants: usize,
    pub dim: usize,
    /// Worst error over reconstructed second shares.
    pub max_share_error: f64,
    /// Worst error over reconstructed full updates.
    pub max_update_error: f64,
}

/// Participant 0 colludes with TP: it hands over its second share, TP combines
/// the distance report with the first shares it already holds.
pub fn attack_demo(n: usize, dim: usize, noise_std: f64, seed: u64) -> Result<AttackReport> {
    if n < 2 || dim == 0 {
        return Err(DsflError::invalid("attack demo needs at least two participants and dim ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let updates: Vec<ModelVector> = (0..n)
        .map(|_| ModelVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect::<Result<_>>()?;
    let round = lsfl_round(&updates, noise_std, &mut rng)?;
    let rebuilt = lsfl_reconstruct(&round.report, &round.shares[0].share2, 0)?;
    let mut max_share_error = 0.0f64;
    let mut max_update_error = 0.0f64;
    for (i, share2) in (1..n).zip(&rebuilt) {
        max_share_error = max_share_error.max(share2.sub(&round.shares[i].share2)?.norm_inf());
        let w = combine_shares(&round.shares[i].share1, share2)?;
        max_update_error = max_update_error.max(w.sub(&updates[i])?.norm_inf());
    }
    Ok(AttackReport {
        n_participants: n,
        dim,
        max_share_error,
        max_update_error,
    })
}
