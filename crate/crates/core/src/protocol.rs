//! The dual-server round: participants split their updates, the two servers
//! (TP holding first shares, SP holding second shares and the global model)
//! score random participant groups, keep the `k` most typical participants and
//! aggregate their shares. Also the credit ledger and the training loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{coord_median, fedavg, krum_select, lsfl_round, trimmed_mean};
use crate::clients::{corrupt_update, flip_labels, local_train, AdversaryKind, AdversarySpec};
use crate::error::{DsflError, Result};
use crate::grouping::{
    build_cpg, build_pcm, choose_k, group_count, group_distances, group_share_sums, select_participants, Cpg, Pcm,
    SelectionResult,
};
use crate::model::{split_update, sum_vectors, ModelVector, SharePair, DEFAULT_NOISE_STD};
use crate::tasks::{Dataset, Metrics, Task};

/// Bytes per real number on the wire.
pub const BYTES_PER_REAL: usize = 8;

/// Per-round protocol parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub n_participants: usize,
    /// Expected fraction of Byzantine participants, `β ∈ [0, 0.5)`.
    pub byz_fraction: f64,
    pub noise_std: f64,
    pub group_size: usize,
    /// Participants kept per round; `⌊(1 − β)N⌋` when unset.
    pub k: Option<usize>,
    /// Number of groups including the all-participants group; derived from `β` when unset.
    pub n_groups: Option<usize>,
    pub credit_init: f64,
    pub reward: f64,
    pub penalty: f64,
    pub cost: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// When set, round `t` (from 1) trains with `learning_rate / (t + lr_gamma)`.
    pub lr_gamma: Option<f64>,
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            n_participants: 10,
            byz_fraction: 0.2,
            noise_std: DEFAULT_NOISE_STD,
            group_size: crate::grouping::DEFAULT_GROUP_SIZE,
            k: None,
            n_groups: None,
            credit_init: 10.0,
            reward: 2.0,
            penalty: 2.0,
            cost: 1.0,
            local_epochs: 1,
            batch_size: 10,
            learning_rate: 0.05,
            lr_gamma: None,
            seed: 0,
        }
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(DsflError::invalid(format!("{name} must be a nonnegative number, got {v}")))
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants < 2 {
            return Err(DsflError::invalid("at least two participants are required"));
        }
        if !(0.0..0.5).contains(&self.byz_fraction) {
            return Err(DsflError::invalid(format!(
                "Byzantine fraction must lie in [0, 0.5), got {}",
                self.byz_fraction
            )));
        }
        nonneg("noise_std", self.noise_std)?;
        for (name, v) in [
            ("credit_init", self.credit_init),
            ("reward", self.reward),
            ("penalty", self.penalty),
            ("cost", self.cost),
        ] {
            nonneg(name, v)?;
        }
        if self.group_size == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(DsflError::invalid("group_size, local_epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(DsflError::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(g) = self.lr_gamma {
            if !(g.is_finite() && g >= 0.0) {
                return Err(DsflError::invalid(format!("lr_gamma must be nonnegative, got {g}")));
            }
        }
        if let Some(k) = self.k {
            if k == 0 || k > self.n_participants {
                return Err(DsflError::invalid(format!("k = {k} outside 1..={}", self.n_participants)));
            }
        }
        if let Some(m) = self.n_groups {
            if m < 2 {
                return Err(DsflError::invalid("at least two groups are required"));
            }
        }
        Ok(())
    }

    pub fn effective_k(&self) -> usize {
        self.k.unwrap_or_else(|| choose_k(self.n_participants, self.byz_fraction))
    }

    /// Learning rate of round `t` (counted from 1).
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        match self.lr_gamma {
            Some(g) => self.learning_rate / (t as f64 + g),
            None => self.learning_rate,
        }
    }

    /// Group count and group size used when `n_active` participants take part.
    ///
    /// The count is capped at `n_active − 1` so that the group system always has
    /// a nullspace, and the size is raised until the proper groups can cover
    /// every participant.
    pub fn group_shape(&self, n_active: usize) -> Result<(usize, usize)> {
        let m = match self.n_groups {
            Some(m) => m,
            None => group_count(self.byz_fraction * 100.0)?,
        };
        let m = m.min(n_active.saturating_sub(1)).max(2);
        let gs = self.group_size.max(n_active.div_ceil(m - 1)).min(n_active);
        Ok((m, gs))
    }

    /// Draws the round's PCM, dropping groups (and enlarging the rest) whenever
    /// no grouping of the current shape keeps every participant hidden.
    pub fn draw_pcm<R: Rng + ?Sized>(&self, n_active: usize, rng: &mut R) -> Result<Pcm> {
        let (m0, _) = self.group_shape(n_active)?;
        let mut last = None;
        for m in (2..=m0).rev() {
            let gs = self.group_size.max(n_active.div_ceil(m - 1)).min(n_active);
            match build_pcm(n_active, m, gs, rng) {
                Ok(pcm) => return Ok(pcm),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one group shape is tried"))
    }
}

/// Per-participant credit balances and the set still taking part.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditLedger {
    balances: BTreeMap<usize, f64>,
    active: BTreeSet<usize>,
}

impl CreditLedger {
    /// Participants `0..n`, all active with balance `init`.
    pub fn new(n: usize, init: f64) -> Self {
        CreditLedger {
            balances: (0..n).map(|i| (i, init)).collect(),
            active: (0..n).collect(),
        }
    }

    pub fn balance(&self, id: usize) -> Option<f64> {
        self.balances.get(&id).copied()
    }

    pub fn balances(&self) -> &BTreeMap<usize, f64> {
        &self.balances
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.active.contains(&id)
    }

    pub fn active(&self) -> &BTreeSet<usize> {
        &self.active
    }

    pub fn active_ids(&self) -> Vec<usize> {
        self.active.iter().copied().collect()
    }

    pub fn total_balance(&self) -> f64 {
        self.balances.values().sum()
    }
}

/// Selected participants earn `reward − cost`, the other active ones pay
/// `penalty + cost`; anyone whose balance drops below zero leaves.
pub fn credit_update(ledger: &CreditLedger, selected: &BTreeSet<usize>, cfg: &RoundConfig) -> CreditLedger {
    debug_assert!(selected.is_subset(&ledger.active));
    let mut next = ledger.clone();
    for &id in &ledger.active {
        let b = next.balances.get_mut(&id).expect("active participant has a balance");
        if selected.contains(&id) {
            *b += cfg.reward - cfg.cost;
        } else {
            *b -= cfg.penalty + cfg.cost;
        }
        if *b < 0.0 {
            next.active.remove(&id);
        }
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Participant(usize),
    Tp,
    Sp,
    /// Every active participant at once.
    AllParticipants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Share1,
    Share2,
    Pcm,
    GroupSum,
    Cpg,
    Selection,
    PartialAggregate,
    GlobalModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub from: Party,
    pub to: Party,
    pub kind: PayloadKind,
    pub bytes: usize,
}

/// Everything TP holds at the end of a round.
#[derive(Debug, Clone)]
pub struct TpView {
    pub share1: Vec<ModelVector>,
    pub pcm: Pcm,
    pub group_sums1: Vec<ModelVector>,
    pub cpg: Cpg,
    pub selection: SelectionResult,
    pub partial1: ModelVector,
}

/// Everything SP holds at the end of a round.
#[derive(Debug, Clone)]
pub struct SpView {
    pub share2: Vec<ModelVector>,
    pub group_sums1: Vec<ModelVector>,
    pub pcm: Pcm,
    pub w_bar: ModelVector,
    pub d_g: Vec<f64>,
    pub cpg: Cpg,
    pub selected: Vec<usize>,
    pub partial1: ModelVector,
    pub partial2: ModelVector,
    pub global: ModelVector,
}

#[derive(Debug, Clone)]
pub struct RoundTranscript {
    pub messages: Vec<Message>,
    pub tp_view: TpView,
    pub sp_view: SpView,
    pub global_model: ModelVector,
}

impl RoundTranscript {
    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.bytes).sum()
    }

    pub fn share_bytes(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| matches!(m.kind, PayloadKind::Share1 | PayloadKind::Share2))
            .map(|m| m.bytes)
            .sum()
    }
}

/// Analytic message count and byte totals for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overhead {
    pub messages: usize,
    pub bytes: usize,
    pub share_bytes: usize,
}

/// Counts for `n` participants, `m` groups, `k` selected and `dim`-dimensional updates.
pub fn round_overhead(n: usize, m: usize, k: usize, dim: usize) -> Overhead {
    let vec_bytes = dim * BYTES_PER_REAL;
    let share_bytes = 2 * n * vec_bytes;
    let bytes = share_bytes
        + n * m
        + m * vec_bytes
        + n * (m - 1) * BYTES_PER_REAL
        + k * BYTES_PER_REAL
        + 2 * vec_bytes;
    Overhead {
        messages: 2 * n + m + 5,
        bytes,
        share_bytes,
    }
}

/// Result of one dual-server round.
#[derive(Debug, Clone)]
pub struct DsflRound {
    pub global: ModelVector,
    /// Positions refer to the order of `updates`.
    pub selection: SelectionResult,
    pub selected_ids: Vec<usize>,
    pub ledger: CreditLedger,
    pub transcript: RoundTranscript,
    /// Ground-truth shares, kept outside both server views for auditing.
    pub shares: Vec<SharePair>,
}

fn partial_aggregate<'a>(shares: impl IntoIterator<Item = &'a ModelVector>, k: usize) -> Result<ModelVector> {
    Ok(sum_vectors(shares)?.scale(1.0 / (2.0 * k as f64)))
}

/// One round of the protocol over the updates of the participants `ids`
/// (`updates[j]` belongs to `ids[j]`).
pub fn dsfl_round<R: Rng + ?Sized>(
    cfg: &RoundConfig,
    updates: &[ModelVector],
    ids: &[usize],
    ledger: &CreditLedger,
    rng: &mut R,
) -> Result<DsflRound> {
    if updates.len() != ids.len() {
        return Err(DsflError::Shape {
            expected: ids.len(),
            actual: updates.len(),
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| !ledger.is_active(id)) {
        return Err(DsflError::invalid(format!("participant {id} is not active")));
    }
    let n = updates.len();
    let k = cfg.effective_k();
    if n < k {
        return Err(DsflError::UnderQuorum { needed: k, active: n });
    }
    if n < 2 {
        return Err(DsflError::invalid("a round needs at least two participants"));
    }
    let dim = updates[0].dim();
    let vec_bytes = dim * BYTES_PER_REAL;
    let mut messages = Vec::with_capacity(2 * n + 16);

    // Participants split and upload.
    let shares = updates
        .iter()
        .map(|w| split_update(w, cfg.noise_std, rng))
        .collect::<Result<Vec<_>>>()?;
    for &id in ids {
        messages.push(Message {
            from: Party::Participant(id),
            to: Party::Tp,
            kind: PayloadKind::Share1,
            bytes: vec_bytes,
        });
        messages.push(Message {
            from: Party::Participant(id),
            to: Party::Sp,
            kind: PayloadKind::Share2,
            bytes: vec_bytes,
        });
    }
    let share1: Vec<ModelVector> = shares.iter().map(|p| p.share1.clone()).collect();
    let share2: Vec<ModelVector> = shares.iter().map(|p| p.share2.clone()).collect();

    // TP draws the groups and sends the PCM and its group sums; the first
    // group holds everyone, so its sum doubles as TP's total.
    let pcm = cfg.draw_pcm(n, rng)?;
    let m = pcm.n_groups();
    let group_sums1 = group_share_sums(&pcm, &share1)?;
    messages.push(Message {
        from: Party::Tp,
        to: Party::Sp,
        kind: PayloadKind::Pcm,
        bytes: n * m,
    });
    for _ in 0..m {
        messages.push(Message {
            from: Party::Tp,
            to: Party::Sp,
            kind: PayloadKind::GroupSum,
            bytes: vec_bytes,
        });
    }

    // SP: global mean, group distances, CPG back to TP.
    let group_sums2 = group_share_sums(&pcm, &share2)?;
    let w_bar = group_sums1[0].add(&group_sums2[0])?.scale(1.0 / (2.0 * n as f64));
    let d_g = group_distances(&w_bar, &group_sums1, &group_sums2, &pcm.group_sizes())?;
    let cpg = build_cpg(&pcm, &d_g)?;
    messages.push(Message {
        from: Party::Sp,
        to: Party::Tp,
        kind: PayloadKind::Cpg,
        bytes: n * (m - 1) * BYTES_PER_REAL,
    });

    // TP scores, selects and notifies SP.
    let selection = select_participants(&cpg, k)?;
    let selected_ids: Vec<usize> = selection.selected.iter().map(|&j| ids[j]).collect();
    messages.push(Message {
        from: Party::Tp,
        to: Party::Sp,
        kind: PayloadKind::Selection,
        bytes: k * BYTES_PER_REAL,
    });
    let new_ledger = credit_update(ledger, &selected_ids.iter().copied().collect(), cfg);

    // Partial aggregates; TP hands its half to SP, which forms and broadcasts W.
    let mut chosen = selection.selected.clone();
    chosen.sort_unstable();
    let partial1 = partial_aggregate(chosen.iter().map(|&j| &share1[j]), k)?;
    let partial2 = partial_aggregate(chosen.iter().map(|&j| &share2[j]), k)?;
    messages.push(Message {
        from: Party::Tp,
        to: Party::Sp,
        kind: PayloadKind::PartialAggregate,
        bytes: vec_bytes,
    });
    let global = partial1.add(&partial2)?;
    messages.push(Message {
        from: Party::Sp,
        to: Party::AllParticipants,
        kind: PayloadKind::GlobalModel,
        bytes: vec_bytes,
    });

    let transcript = RoundTranscript {
        messages,
        tp_view: TpView {
            share1,
            pcm: pcm.clone(),
            group_sums1: group_sums1.clone(),
            cpg: cpg.clone(),
            selection: selection.clone(),
            partial1: partial1.clone(),
        },
        sp_view: SpView {
            share2,
            group_sums1,
            pcm,
            w_bar,
            d_g,
            cpg,
            selected: selection.selected.clone(),
            partial1,
            partial2,
            global: global.clone(),
        },
        global_model: global.clone(),
    };
    Ok(DsflRound {
        global,
        selection,
        selected_ids,
        ledger: new_ledger,
        transcript,
        shares,
    })
}

/// Counts of individual shares found in the wrong server's view.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ViewLeaks {
    pub share2_in_tp: usize,
    pub share1_in_sp: usize,
}

impl ViewLeaks {
    pub fn total(&self) -> usize {
        self.share2_in_tp + self.share1_in_sp
    }
}

fn matches_any(view: &[&ModelVector], secret: &ModelVector) -> bool {
    let tol = 1e-9 * (1.0 + secret.norm_inf());
    view.iter()
        .any(|v| v.dim() == secret.dim() && v.sub(secret).map(|d| d.norm_inf() <= tol).unwrap_or(false))
}

/// Looks for every participant's second share among TP's vectors and every
/// first share among SP's vectors.
pub fn scan_views(transcript: &RoundTranscript, shares: &[SharePair]) -> ViewLeaks {
    let tp = &transcript.tp_view;
    let sp = &transcript.sp_view;
    let tp_vectors: Vec<&ModelVector> = tp
        .share1
        .iter()
        .chain(&tp.group_sums1)
        .chain(std::iter::once(&tp.partial1))
        .collect();
    let sp_vectors: Vec<&ModelVector> = sp
        .share2
        .iter()
        .chain(&sp.group_sums1)
        .chain([&sp.w_bar, &sp.partial1, &sp.partial2, &sp.global])
        .collect();
    let mut leaks = ViewLeaks::default();
    for pair in shares {
        if matches_any(&tp_vectors, &pair.share2) {
            leaks.share2_in_tp += 1;
        }
        if matches_any(&sp_vectors, &pair.share1) {
            leaks.share1_in_sp += 1;
        }
    }
    leaks
}

/// Aggregation rule applied by the servers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    Dsfl,
    FedAvg,
    Median,
    TrimmedMean { trim_frac: f64 },
    Krum { f: usize },
    Lsfl,
}

impl Aggregator {
    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Dsfl => "dsfl",
            Aggregator::FedAvg => "fedavg",
            Aggregator::Median => "median",
            Aggregator::TrimmedMean { .. } => "trimmed_mean",
            Aggregator::Krum { .. } => "krum",
            Aggregator::Lsfl => "lsfl",
        }
    }
}

/// Independent random streams drawn from the run seed.
pub mod stream {
    pub const TRAIN: u64 = 1;
    pub const CORRUPT: u64 = 2;
    pub const ROUND: u64 = 3;
    pub const ADVERSARY: u64 = 4;
    pub const TASK: u64 = 5;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the random stream `stream` for `participant` in `round`.
pub fn derive_seed(seed: u64, round: u64, participant: u64, stream: u64) -> u64 {
    [round, participant, stream].iter().fold(splitmix(seed), |acc, &x| splitmix(acc ^ x))
}

pub fn stream_rng(seed: u64, round: u64, participant: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, round, participant, stream))
}

/// One round of a training run.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Counted from 1.
    pub round: usize,
    pub global: ModelVector,
    pub metrics: Metrics,
    /// Present for the dual-server aggregator; positions index `participants`.
    pub selection: Option<SelectionResult>,
    pub participants: Vec<usize>,
    pub selected_ids: Vec<usize>,
    pub adversaries_active: usize,
    pub adversaries_selected: usize,
    pub messages: usize,
    pub bytes_sent: usize,
    pub share_bytes: usize,
    pub view_leaks: ViewLeaks,
    /// Participants whose credit ran out at the end of this round.
    pub removed: Vec<usize>,
}

impl RoundRecord {
    /// Fraction of participating adversaries whose update entered the aggregate.
    pub fn attacker_success_rate(&self) -> f64 {
        if self.adversaries_active == 0 {
            0.0
        } else {
            self.adversaries_selected as f64 / self.adversaries_active as f64
        }
    }
}

/// Trains with the dual-server aggregator.
pub fn run_training(cfg: &RoundConfig, task: &Task, adversary: &AdversarySpec, rounds: usize) -> Result<Vec<RoundRecord>> {
    run_training_with(cfg, task, adversary, rounds, Aggregator::Dsfl)
}

/// Broadcast, local training, corruption, aggregation and evaluation, `rounds` times.
pub fn run_training_with(
    cfg: &RoundConfig,
    task: &Task,
    adversary: &AdversarySpec,
    rounds: usize,
    aggregator: Aggregator,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    adversary.validate()?;
    if rounds == 0 {
        return Err(DsflError::invalid("at least one round is required"));
    }
    if task.n_shards() != cfg.n_participants {
        return Err(DsflError::Shape {
            expected: cfg.n_participants,
            actual: task.n_shards(),
        });
    }
    if let Some(&id) = adversary.members.iter().find(|&&id| id >= cfg.n_participants) {
        return Err(DsflError::invalid(format!("adversary id {id} outside 0..{}", cfg.n_participants)));
    }
    let flipped: Option<Vec<Dataset>> = match &adversary.kind {
        AdversaryKind::LabelFlip { flip_map, .. } => {
            Some(task.shards.iter().map(|s| flip_labels(s, flip_map)).collect::<Result<_>>()?)
        }
        _ => None,
    };
    let n_adversaries = if matches!(adversary.kind, AdversaryKind::Honest) {
        0
    } else {
        adversary.members.len()
    };

    let mut global = ModelVector::zeros(task.param_dim());
    let mut ledger = CreditLedger::new(cfg.n_participants, cfg.credit_init);
    let mut members = adversary.members.clone();
    let mut history = Vec::with_capacity(rounds);

    for t in 1..=rounds {
        let r = t as u64;
        let ids = ledger.active_ids();
        if adversary.resample_each_round && n_adversaries > 0 {
            let mut rng = stream_rng(cfg.seed, r, 0, stream::ADVERSARY);
            let count = n_adversaries.min(ids.len());
            members = sample(&mut rng, ids.len(), count).into_iter().map(|j| ids[j]).collect();
        }
        let is_adv = |id: usize| n_adversaries > 0 && members.contains(&id);
        let lr = cfg.learning_rate_at(t);

        let updates = ids
            .par_iter()
            .map(|&id| {
                let shard = match (&flipped, is_adv(id)) {
                    (Some(f), true) => &f[id],
                    _ => &task.shards[id],
                };
                let mut rng = stream_rng(cfg.seed, r, id as u64, stream::TRAIN);
                let w = local_train(&task.objective, shard, &global, cfg.local_epochs, cfg.batch_size, lr, &mut rng)?;
                if is_adv(id) {
                    let mut rng = stream_rng(cfg.seed, r, id as u64, stream::CORRUPT);
                    corrupt_update(&w, &adversary.kind, &mut rng)
                } else {
                    Ok(w)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let mut round_rng = stream_rng(cfg.seed, r, 0, stream::ROUND);
        let mut removed = Vec::new();
        let n = ids.len();
        let dim = global.dim();
        let vec_bytes = dim * BYTES_PER_REAL;
        let (new_global, selection, selected_ids, messages, bytes_sent, share_bytes, view_leaks) = match aggregator {
            Aggregator::Dsfl => {
                let out = dsfl_round(cfg, &updates, &ids, &ledger, &mut round_rng)?;
                let leaks = scan_views(&out.transcript, &out.shares);
                let tr = &out.transcript;
                let counts = (tr.messages.len(), tr.total_bytes(), tr.share_bytes());
                removed = ids.iter().copied().filter(|&id| !out.ledger.is_active(id)).collect();
                ledger = out.ledger;
                (out.global, Some(out.selection), out.selected_ids, counts.0, counts.1, counts.2, leaks)
            }
            Aggregator::Lsfl => {
                let out = lsfl_round(&updates, cfg.noise_std, &mut round_rng)?;
                // Shares in, z₁ from TP, the N-vector report back, broadcast.
                let bytes = 2 * n * vec_bytes + vec_bytes + n * vec_bytes + vec_bytes;
                (out.global, None, ids.clone(), 2 * n + 1 + n + 1, bytes, 2 * n * vec_bytes, ViewLeaks::default())
            }
            plain => {
                let (w, chosen) = match plain {
                    Aggregator::FedAvg => (fedavg(&updates)?, ids.clone()),
                    Aggregator::Median => (coord_median(&updates)?, ids.clone()),
                    Aggregator::TrimmedMean { trim_frac } => (trimmed_mean(&updates, trim_frac)?, ids.clone()),
                    Aggregator::Krum { f } => {
                        let j = krum_select(&updates, f)?;
                        (updates[j].clone(), vec![ids[j]])
                    }
                    Aggregator::Dsfl | Aggregator::Lsfl => unreachable!(),
                };
                let bytes = n * vec_bytes + vec_bytes;
                (w, None, chosen, n + 1, bytes, 0, ViewLeaks::default())
            }
        };
        global = new_global;
        let metrics = task.evaluate(&global)?;
        let adversaries_active = ids.iter().filter(|&&id| is_adv(id)).count();
        let adversaries_selected = selected_ids.iter().filter(|&&id| is_adv(id)).count();
        history.push(RoundRecord {
            round: t,
            global: global.clone(),
            metrics,
            selection,
            participants: ids,
            selected_ids,
            adversaries_active,
            adversaries_selected,
            messages,
            bytes_sent,
            share_bytes,
            view_leaks,
            removed,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mean_vectors;
    use crate::tasks::{make_task, TaskSpec};

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    fn random_updates(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<ModelVector> {
        (0..n)
            .map(|_| mv(&(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn identical_updates_with_full_k_return_the_update() {
        let cfg = RoundConfig {
            byz_fraction: 0.0,
            ..RoundConfig::default()
        };
        assert_eq!(cfg.effective_k(), 10);
        let u = mv(&[0.3, -1.2, 5.0]);
        let updates = vec![u.clone(); 10];
        let ids: Vec<usize> = (0..10).collect();
        let ledger = CreditLedger::new(10, 10.0);
        let out = dsfl_round(&cfg, &updates, &ids, &ledger, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.global.sub(&u).unwrap().norm_inf() <= 1e-9);
    }

    #[test]
    fn aggregate_equals_mean_of_selected_raw_updates() {
        let cfg = RoundConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let updates = random_updates(&mut rng, 10, 6);
        let ids: Vec<usize> = (0..10).collect();
        let out = dsfl_round(&cfg, &updates, &ids, &CreditLedger::new(10, 10.0), &mut rng).unwrap();
        let chosen: Vec<ModelVector> = out.selection.selected.iter().map(|&j| updates[j].clone()).collect();
        let want = mean_vectors(&chosen).unwrap();
        assert!(out.global.sub(&want).unwrap().norm_inf() <= 1e-9 * (1.0 + want.norm_inf()));
    }

    #[test]
    fn scaled_inversion_adversaries_excluded() {
        // Exclusion is not guaranteed for every grouping draw; this instance excludes both.
        let cfg = RoundConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let honest = mv(&(0..8).map(|_| rng.gen_range(0.5..1.5)).collect::<Vec<_>>());
        let mut updates: Vec<ModelVector> = (0..10)
            .map(|_| {
                let jitter: Vec<f64> = honest.as_slice().iter().map(|x| x + rng.gen_range(-0.05..0.05)).collect();
                mv(&jitter)
            })
            .collect();
        updates[3] = updates[3].scale(-10.0);
        updates[7] = updates[7].scale(-10.0);
        let ids: Vec<usize> = (0..10).collect();
        let out = dsfl_round(&cfg, &updates, &ids, &CreditLedger::new(10, 10.0), &mut rng).unwrap();
        assert_eq!(out.selection.selected.len(), 8);
        assert!(!out.selected_ids.contains(&3) && !out.selected_ids.contains(&7));

        // Rebuild d'' from raw updates and the round's PCM.
        let pcm = &out.transcript.tp_view.pcm;
        let mean = mean_vectors(&updates).unwrap();
        let d: Vec<f64> = (0..pcm.n_groups())
            .map(|g| {
                let members: Vec<ModelVector> = pcm.members(g).iter().map(|&p| updates[p].clone()).collect();
                let gm = mean_vectors(&members).unwrap();
                gm.sub(&mean).unwrap().as_slice().iter().map(|x| x * x).sum()
            })
            .collect();
        let rows: Vec<f64> = (0..10)
            .map(|p| (1..pcm.n_groups()).filter(|&g| pcm.is_member(p, g)).map(|g| d[g]).sum())
            .collect();
        let mut sorted = rows.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = (sorted[4] + sorted[5]) / 2.0;
        for p in 0..10 {
            let want = (rows[p] - med).abs();
            assert!((out.selection.scores[p] - want).abs() <= 1e-6 * (1.0 + want));
        }
    }

    #[test]
    fn transcript_accounting() {
        for (n, dim) in [(5, 10), (10, 1000), (50, 10)] {
            let cfg = RoundConfig {
                n_participants: n,
                ..RoundConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let updates = random_updates(&mut rng, n, dim);
            let ids: Vec<usize> = (0..n).collect();
            let out = dsfl_round(&cfg, &updates, &ids, &CreditLedger::new(n, 10.0), &mut rng).unwrap();
            let tr = &out.transcript;
            assert_eq!(tr.share_bytes(), 2 * n * dim * 8);
            let m = tr.tp_view.pcm.n_groups();
            let want = round_overhead(n, m, cfg.effective_k(), dim);
            assert_eq!(tr.messages.len(), want.messages);
            assert_eq!(tr.total_bytes(), want.bytes);
            assert_eq!(scan_views(tr, &out.shares).total(), 0);
        }
    }

    #[test]
    fn under_quorum_aborts() {
        let cfg = RoundConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let updates = random_updates(&mut rng, 7, 3);
        let ids: Vec<usize> = (0..7).collect();
        let err = dsfl_round(&cfg, &updates, &ids, &CreditLedger::new(10, 10.0), &mut rng).unwrap_err();
        assert!(matches!(err, DsflError::UnderQuorum { needed: 8, active: 7 }));
    }

    #[test]
    fn never_selected_participant_leaves_in_round_four() {
        let cfg = RoundConfig::default();
        let mut ledger = CreditLedger::new(2, cfg.credit_init);
        let mut balance = cfg.credit_init;
        for round in 1..=6 {
            let was_active = ledger.is_active(1);
            ledger = credit_update(&ledger, &[0].into_iter().collect(), &cfg);
            if was_active {
                balance -= cfg.penalty + cfg.cost;
            }
            assert_eq!(ledger.is_active(1), round < 4, "round {round}");
            if round <= 4 {
                assert_eq!(ledger.balance(1), Some(balance));
            }
        }
        assert_eq!(ledger.balance(1), Some(-2.0));
        assert_eq!(ledger.balance(0), Some(16.0));
    }

    #[test]
    fn empty_selection_charges_everyone() {
        let cfg = RoundConfig::default();
        let ledger = credit_update(&CreditLedger::new(3, 10.0), &BTreeSet::new(), &cfg);
        assert!(ledger.balances().values().all(|&b| b == 7.0));
    }

    #[test]
    fn group_shape_adapts_to_pool_size() {
        let cfg = RoundConfig::default();
        assert_eq!(cfg.group_shape(10).unwrap(), (7, 3));
        assert_eq!(cfg.group_shape(5).unwrap(), (4, 3));
        assert_eq!(cfg.group_shape(50).unwrap(), (7, 9));
        assert_eq!(cfg.group_shape(2).unwrap(), (2, 2));
    }

    #[test]
    fn seeds_differ_by_stream_and_round() {
        let a = derive_seed(1, 1, 0, stream::TRAIN);
        assert_ne!(a, derive_seed(1, 1, 0, stream::CORRUPT));
        assert_ne!(a, derive_seed(1, 2, 0, stream::TRAIN));
        assert_ne!(a, derive_seed(1, 1, 1, stream::TRAIN));
        assert_ne!(a, derive_seed(2, 1, 0, stream::TRAIN));
        assert_eq!(a, derive_seed(1, 1, 0, stream::TRAIN));
    }

    fn quadratic_task(n: usize, seed: u64) -> Task {
        let spec = TaskSpec::Quadratic {
            dim: 5,
            samples: 40 * n,
            noise: 0.1,
        };
        make_task(&spec, n, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn honest_training_matches_fedavg_with_full_k() {
        let cfg = RoundConfig {
            byz_fraction: 0.0,
            ..RoundConfig::default()
        };
        let task = quadratic_task(10, 4);
        let honest = AdversarySpec::honest();
        let a = run_training_with(&cfg, &task, &honest, 20, Aggregator::Dsfl).unwrap();
        let b = run_training_with(&cfg, &task, &honest, 20, Aggregator::FedAvg).unwrap();
        let la = a.last().unwrap().metrics.loss;
        let lb = b.last().unwrap().metrics.loss;
        assert!((la - lb).abs() <= 1e-6, "{la} vs {lb}");
    }

    #[test]
    fn identical_seeds_identical_history() {
        let cfg = RoundConfig::default();
        let task = quadratic_task(10, 5);
        let adv = AdversarySpec::new(AdversaryKind::Inversion { q: -1.0 }, [1, 2]).unwrap();
        let a = run_training(&cfg, &task, &adv, 15).unwrap();
        let b = run_training(&cfg, &task, &adv, 15).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.global, y.global);
            assert_eq!(x.metrics, y.metrics);
            assert_eq!(x.selected_ids, y.selected_ids);
        }
    }
}
