//! The co-teaching training loop.
//!
//! Two networks are warmed up with the all-negatives loss, then every epoch:
//!
//! 1. each network scores every training pair with the warm-up loss and a
//!    two-component mixture turns those scores into clean posteriors;
//! 2. network A trains on B's clean/noisy split and B on A's;
//! 3. clean pairs get soft margins from rank correlation against the
//!    network's own memory bank (labels use the bank as it was before the
//!    batch is pushed), and the clean batch's fresh features are pushed;
//! 4. noisy pairs below `eta` under both networks are half-replaced from
//!    the bank and contribute `tau · L_noisy`.
//!
//! The variants switch pieces off for ablations: `hard` keeps noisy pairs
//! with margin 0, `drop` discards them, `rc-drop` adds soft margins, and
//! `repair` adds half-replacing.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::RawPair;
use crate::encoders::{
    backprop_batch, triplet_on_features, warmup_loss_and_grad, EncoderPair, Embedding, Grads, Sgd,
};
use crate::error::{param, Error, Result};
use crate::evaluation::{self, RetrievalReport};
use crate::gmm_selector::{per_sample_losses, select, GmmFit, GmmSplit, SelectorConfig};
use crate::memory_bank::MemoryBank;
use crate::npr::{half_replace, noisy_loss, select_npr_candidates, Direction, MarginParams, ReplacementPair};
use crate::rank_correlation::{self, anchors, with_anchors};

/// Exponential soft margin `α·(m^y − 1)/(m − 1)`.
pub fn soft_margin(y_star: f64, m: f64, alpha: f64) -> f64 {
    alpha * (m.powf(y_star) - 1.0) / (m - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Hard,
    Drop,
    RcDrop,
    Repair,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Hard, Variant::Drop, Variant::RcDrop, Variant::Repair];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hard => "hard",
            Variant::Drop => "drop",
            Variant::RcDrop => "rc-drop",
            Variant::Repair => "repair",
        }
    }

    fn soft_labels(self) -> bool {
        matches!(self, Variant::RcDrop | Variant::Repair)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| param("variant", format!("unknown variant `{s}`")))
    }
}

/// Where the `γ`/`μ` anchors for clean-batch labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScope {
    /// Anchors from the correlations of the batch being labelled.
    Batch,
    /// Anchors from all training pairs, computed once at the start of each epoch.
    Epoch,
}

impl FromStr for LabelScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(LabelScope::Batch),
            "epoch" => Ok(LabelScope::Epoch),
            _ => Err(param("label_scope", format!("unknown scope `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_epoch: usize,
    pub lr_decay: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub m: f64,
    pub p: f64,
    pub eta: f64,
    pub tau: f64,
    /// Top-K for half-replacing; `None` picks 32 for banks of at least 1024
    /// entries and 8 otherwise.
    pub k: Option<usize>,
    pub bank_size: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub variant: Variant,
    pub label_scope: LabelScope,
    pub loss_norm: bool,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
    /// Start both networks from the same weights and shuffle streams.
    pub shared_init: bool,
    /// Record a weight checksum after every optimizer step.
    pub trace_updates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            warmup_epochs: 5,
            batch_size: 64,
            lr: 0.05,
            lr_decay_epoch: 20,
            lr_decay: 0.1,
            momentum: 0.9,
            alpha: 0.2,
            m: 10.0,
            p: 0.5,
            eta: 0.25,
            tau: 0.15,
            k: None,
            bank_size: 512,
            embed_dim: 16,
            seed: 1,
            variant: Variant::Repair,
            label_scope: LabelScope::Batch,
            loss_norm: true,
            gmm_max_iters: 100,
            gmm_tol: 1e-8,
            shared_init: false,
            trace_updates: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(param("warmup_epochs", "must satisfy 1 <= warmup_epochs < epochs"));
        }
        if self.batch_size < 2 {
            return Err(param("batch_size", "must be at least 2"));
        }
        if !(self.lr > 0.0) {
            return Err(param("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(param("momentum", "must be in [0, 1)"));
        }
        if !(self.alpha >= 0.0) {
            return Err(param("alpha", "must be non-negative"));
        }
        if !(self.m > 1.0) {
            return Err(param("m", "must be greater than 1"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(param("p", "must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(param("eta", "must be in [0, 1)"));
        }
        if !(self.tau >= 0.0) {
            return Err(param("tau", "must be non-negative"));
        }
        if self.k == Some(0) {
            return Err(param("k", "must be at least 1"));
        }
        if self.bank_size < 2 {
            return Err(param("bank_size", "must be at least 2"));
        }
        if self.embed_dim == 0 {
            return Err(param("embed_dim", "must be positive"));
        }
        Ok(())
    }

    pub fn effective_k(&self) -> usize {
        self.k
            .unwrap_or(if self.bank_size >= 1024 { 32 } else { 8 })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }

    fn selector(&self) -> SelectorConfig {
        SelectorConfig {
            p: self.p,
            max_iters: self.gmm_max_iters,
            tol: self.gmm_tol,
            normalize: self.loss_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Init = 1,
    Warmup = 2,
    Epoch = 3,
}

fn stream(cfg: &TrainConfig, phase: Phase, epoch: usize, net: usize) -> ChaCha8Rng {
    let net = if cfg.shared_init { 0 } else { net as u64 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((phase as u64) << 56) | ((epoch as u64) << 8) | net);
    rng
}

#[derive(Debug, Clone)]
pub struct NetState {
    pub enc: EncoderPair,
    pub bank: MemoryBank,
    opt: Sgd,
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub net_a: NetState,
    pub net_b: NetState,
    /// Number of epochs (warm-up included) completed so far.
    pub epoch: usize,
}

impl TrainerState {
    pub fn new(cfg: &TrainConfig, d_img: usize, d_txt: usize) -> Result<Self> {
        cfg.validate()?;
        let make = |net| -> Result<NetState> {
            let mut rng = stream(cfg, Phase::Init, 0, net);
            Ok(NetState {
                enc: EncoderPair::new(cfg.embed_dim, d_img, d_txt, &mut rng),
                bank: MemoryBank::new(cfg.bank_size, cfg.embed_dim)?,
                opt: Sgd::new(cfg.momentum),
            })
        };
        Ok(TrainerState {
            net_a: make(0)?,
            net_b: make(1)?,
            epoch: 0,
        })
    }

    pub fn encoders(&self) -> [&EncoderPair; 2] {
        [&self.net_a.enc, &self.net_b.enc]
    }
}

/// Splits `ids` into chunks of `size`, folding a trailing single element into
/// the previous chunk so every batch has negatives.
fn batches(ids: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = ids.chunks(size).collect();
    if out.len() >= 2 && out[out.len() - 1].len() < 2 {
        let n = out.len();
        let start = (n - 2) * size;
        out.truncate(n - 2);
        out.push(&ids[start..]);
    }
    out
}

fn pick<'a>(pairs: &'a [RawPair], ids: &[usize]) -> Vec<&'a RawPair> {
    ids.iter().map(|&i| &pairs[i]).collect()
}

fn units(embs: &[Embedding]) -> Vec<&[f64]> {
    embs.iter().map(|e| e.unit.as_slice()).collect()
}

/// Mean warm-up loss of each network per warm-up epoch.
pub fn warmup(state: &mut TrainerState, pairs: &[RawPair], cfg: &TrainConfig) -> Result<Vec<[f64; 2]>> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientNegatives(pairs.len()));
    }
    let mut history = Vec::with_capacity(cfg.warmup_epochs);
    for _ in 0..cfg.warmup_epochs {
        let epoch = state.epoch;
        let lr = cfg.lr_at(epoch);
        let (la, lb) = rayon::join(
            || warmup_epoch(&mut state.net_a, pairs, cfg, lr, stream(cfg, Phase::Warmup, epoch, 0)),
            || warmup_epoch(&mut state.net_b, pairs, cfg, lr, stream(cfg, Phase::Warmup, epoch, 1)),
        );
        history.push([la?, lb?]);
        state.epoch += 1;
    }
    for net in [&mut state.net_a, &mut state.net_b] {
        init_bank(net, pairs, cfg)?;
    }
    Ok(history)
}

fn warmup_epoch(net: &mut NetState, pairs: &[RawPair], cfg: &TrainConfig, lr: f64, mut rng: ChaCha8Rng) -> Result<f64> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut total = 0.0;
    let mut count = 0;
    for ids in batches(&order, cfg.batch_size) {
        let (loss, grads) = warmup_loss_and_grad(&net.enc, &pick(pairs, ids), cfg.alpha)?;
        net.opt.step(&mut net.enc, &grads, lr);
        total += loss;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Fills the bank with the lowest-loss pairs of the network's own clean
/// subset; the lowest-loss pair is pushed last so it is evicted last.
fn init_bank(net: &mut NetState, pairs: &[RawPair], cfg: &TrainConfig) -> Result<()> {
    let losses = per_sample_losses(&net.enc, pairs, cfg.alpha, cfg.batch_size)?;
    let sel = select(&losses, &cfg.selector())?;
    let mut ids = if sel.split.clean_ids.is_empty() {
        (0..pairs.len()).collect()
    } else {
        sel.split.clean_ids
    };
    ids.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    ids.truncate(cfg.bank_size);
    for &i in ids.iter().rev() {
        let img = net.enc.embed_image(&pairs[i].image_raw)?;
        let txt = net.enc.embed_text(&pairs[i].text_raw)?;
        net.bank.push(&img.unit, &txt.unit)?;
    }
    Ok(())
}

/// Clean posteriors of every training pair under one network.
pub fn posteriors(enc: &EncoderPair, pairs: &[RawPair], cfg: &TrainConfig) -> Result<(Vec<f64>, Vec<f64>, Option<GmmFit>)> {
    let losses = per_sample_losses(enc, pairs, cfg.alpha, cfg.batch_size)?;
    let sel = select(&losses, &cfg.selector())?;
    Ok((sel.split.posteriors, losses, sel.fit))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NprRecord {
    /// Index of the pair in the training slice.
    pub pair_index: usize,
    pub pair_id: usize,
    pub direction: Direction,
    pub bank_entry_index: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NetEpochStats {
    pub l_clean: f64,
    pub l_noisy: f64,
    pub batches: usize,
    pub npr_pairs: usize,
    pub fallback: bool,
    #[serde(skip)]
    pub npr_records: Vec<NprRecord>,
    #[serde(skip)]
    pub checksums: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub variant: Variant,
    pub lr: f64,
    /// Size of each network's clean subset, (A, B).
    pub clean_sizes: [usize; 2],
    pub gmm: [Option<GmmFit>; 2],
    pub net_a: NetEpochStats,
    pub net_b: NetEpochStats,
    pub val: Option<RetrievalReport>,
    pub soft_label_auc: Option<f64>,
}

impl EpochReport {
    pub fn l_clean(&self) -> f64 {
        (self.net_a.l_clean + self.net_b.l_clean) / 2.0
    }

    pub fn l_noisy(&self) -> f64 {
        (self.net_a.l_noisy + self.net_b.l_noisy) / 2.0
    }

    pub fn npr_count(&self) -> usize {
        self.net_a.npr_pairs + self.net_b.npr_pairs
    }
}

struct EpochContext<'a> {
    pairs: &'a [RawPair],
    cfg: &'a TrainConfig,
    w_a: &'a [f64],
    w_b: &'a [f64],
    lr: f64,
}

/// Everything computed for one clean/noisy mini-batch before the update.
pub struct BatchStep {
    pub grads: Grads,
    pub l_clean: f64,
    pub l_noisy: f64,
    pub replacements: Vec<ReplacementPair>,
    pub replaced_from: Vec<usize>,
}

fn epoch_anchors(net: &NetState, pairs: &[RawPair]) -> Result<Option<(f64, f64)>> {
    let snap = net.bank.snapshot();
    if snap.len() < 2 {
        return Ok(None);
    }
    let set = rank_correlation::soft_labels_for_batch(&snap, &net.enc, &pairs.iter().collect::<Vec<_>>())?;
    Ok(Some((set.gamma, set.mu)))
}

/// One optimizer step's worth of work for network `net` on a clean batch and
/// its companion noisy batch. Pushes the clean features into the bank.
fn batch_step(
    ctx: &EpochContext,
    net: &mut NetState,
    clean_ids: &[usize],
    noisy_ids: &[usize],
    fixed_anchors: Option<(f64, f64)>,
) -> Result<BatchStep> {
    let cfg = ctx.cfg;
    let clean = pick(ctx.pairs, clean_ids);
    let (img, txt) = net.enc.embed_batch(&clean)?;
    let snap = net.bank.snapshot();

    let mut margins = vec![cfg.alpha; clean.len()];
    let mut batch_anchors = None;
    if cfg.variant.soft_labels() && snap.len() >= 2 {
        let corre = rank_correlation::correlations(&snap, &units(&img), &units(&txt))?;
        let (gamma, mu) = match fixed_anchors {
            Some(a) => a,
            None => anchors(&corre)?,
        };
        let labels = with_anchors(&corre, gamma, mu);
        for (m, &y) in margins.iter_mut().zip(&labels.y_star) {
            *m = soft_margin(y, cfg.m, cfg.alpha);
        }
        batch_anchors = Some((gamma, mu));
    }

    for (i, t) in img.iter().zip(&txt) {
        net.bank.push(&i.unit, &t.unit)?;
    }

    let (l_clean, mut grads) = if cfg.variant == Variant::Hard && !noisy_ids.is_empty() {
        let noisy = pick(ctx.pairs, noisy_ids);
        let (nimg, ntxt) = net.enc.embed_batch(&noisy)?;
        let all: Vec<&RawPair> = clean.iter().chain(&noisy).copied().collect();
        let all_img: Vec<Embedding> = img.iter().chain(&nimg).cloned().collect();
        let all_txt: Vec<Embedding> = txt.iter().chain(&ntxt).cloned().collect();
        margins.extend(std::iter::repeat_n(0.0, noisy.len()));
        let fl = triplet_on_features(&units(&all_img), &units(&all_txt), &margins)?;
        (fl.loss, backprop_batch(&net.enc, &all, &all_img, &all_txt, &fl))
    } else {
        let fl = triplet_on_features(&units(&img), &units(&txt), &margins)?;
        (fl.loss, backprop_batch(&net.enc, &clean, &img, &txt, &fl))
    };

    let mut step = BatchStep {
        grads: Grads::zeros_like(&net.enc),
        l_clean,
        l_noisy: 0.0,
        replacements: Vec::new(),
        replaced_from: Vec::new(),
    };

    if cfg.variant == Variant::Repair && snap.len() >= 2 && !noisy_ids.is_empty() {
        let wa: Vec<f64> = noisy_ids.iter().map(|&i| ctx.w_a[i]).collect();
        let wb: Vec<f64> = noisy_ids.iter().map(|&i| ctx.w_b[i]).collect();
        let chosen = select_npr_candidates(&wa, &wb, cfg.eta)?;
        let k = cfg.effective_k();
        let mut sources = Vec::with_capacity(2 * chosen.len());
        for slot in chosen {
            let idx = noisy_ids[slot];
            let pair = &ctx.pairs[idx];
            let ie = net.enc.embed_image(&pair.image_raw)?;
            let te = net.enc.embed_text(&pair.text_raw)?;
            for r in half_replace(&snap, &ie, &te, k, pair.pair_id)? {
                step.replacements.push(r);
                step.replaced_from.push(idx);
                sources.push(pair);
            }
        }
        if !step.replacements.is_empty() {
            let (gamma, mu) = match batch_anchors {
                Some(a) => a,
                None => {
                    let corre = rank_correlation::correlations(&snap, &units(&img), &units(&txt))?;
                    anchors(&corre)?
                }
            };
            let nl = noisy_loss(
                &net.enc,
                &step.replacements,
                &sources,
                &snap,
                &MarginParams {
                    alpha: cfg.alpha,
                    m: cfg.m,
                    gamma,
                    mu,
                },
            )?;
            step.l_noisy = nl.loss;
            if cfg.tau != 0.0 {
                grads.add_scaled(&nl.grads, cfg.tau);
            }
        }
    }
    step.grads = grads;
    Ok(step)
}

fn network_epoch(
    ctx: &EpochContext,
    net: &mut NetState,
    split: &GmmSplit,
    mut rng: ChaCha8Rng,
) -> Result<NetEpochStats> {
    let cfg = ctx.cfg;
    let mut stats = NetEpochStats::default();
    let mut clean = split.clean_ids.clone();
    let mut noisy = split.noisy_ids.clone();
    clean.shuffle(&mut rng);
    noisy.shuffle(&mut rng);

    if clean.len() < 2 {
        log::warn!(
            "clean subset has {} pairs; falling back to warm-up training on all data",
            clean.len()
        );
        stats.fallback = true;
        let mut order: Vec<usize> = (0..ctx.pairs.len()).collect();
        order.shuffle(&mut rng);
        for ids in batches(&order, cfg.batch_size) {
            let (loss, grads) = warmup_loss_and_grad(&net.enc, &pick(ctx.pairs, ids), cfg.alpha)?;
            net.opt.step(&mut net.enc, &grads, ctx.lr);
            stats.l_clean += loss;
            stats.batches += 1;
            if cfg.trace_updates {
                stats.checksums.push(net.enc.checksum());
            }
        }
        stats.l_clean /= stats.batches.max(1) as f64;
        return Ok(stats);
    }

    let fixed_anchors = match (cfg.label_scope, cfg.variant.soft_labels()) {
        (LabelScope::Epoch, true) => epoch_anchors(net, ctx.pairs)?,
        _ => None,
    };

    let mut noisy_cursor = 0;
    for clean_ids in batches(&clean, cfg.batch_size) {
        let noisy_ids: Vec<usize> = if noisy.is_empty() {
            Vec::new()
        } else {
            (0..cfg.batch_size.min(noisy.len()))
                .map(|j| noisy[(noisy_cursor + j) % noisy.len()])
                .collect()
        };
        noisy_cursor = (noisy_cursor + noisy_ids.len()) % noisy.len().max(1);

        let step = batch_step(ctx, net, clean_ids, &noisy_ids, fixed_anchors)?;
        net.opt.step(&mut net.enc, &step.grads, ctx.lr);
        stats.l_clean += step.l_clean;
        stats.l_noisy += step.l_noisy;
        stats.batches += 1;
        stats.npr_pairs += step.replacements.len() / 2;
        for (r, &idx) in step.replacements.iter().zip(&step.replaced_from) {
            stats.npr_records.push(NprRecord {
                pair_index: idx,
                pair_id: r.source_pair_id,
                direction: r.direction,
                bank_entry_index: r.bank_entry_index,
                similarity: r.similarity,
            });
        }
        if cfg.trace_updates {
            stats.checksums.push(net.enc.checksum());
        }
    }
    let b = stats.batches.max(1) as f64;
    stats.l_clean /= b;
    stats.l_noisy /= b;
    Ok(stats)
}

/// One co-teaching epoch over `pairs`. `val` (clean held-out pairs) is only
/// used for the report.
pub fn train_epoch(
    state: &mut TrainerState,
    pairs: &[RawPair],
    val: &[RawPair],
    cfg: &TrainConfig,
) -> Result<EpochReport> {
    let epoch = state.epoch;
    let lr = cfg.lr_at(epoch);
    let sel = cfg.selector();
    let (ra, rb) = rayon::join(
        || -> Result<_> {
            let losses = per_sample_losses(&state.net_a.enc, pairs, cfg.alpha, cfg.batch_size)?;
            select(&losses, &sel)
        },
        || -> Result<_> {
            let losses = per_sample_losses(&state.net_b.enc, pairs, cfg.alpha, cfg.batch_size)?;
            select(&losses, &sel)
        },
    );
    let (sel_a, sel_b) = (ra?, rb?);
    let ctx = EpochContext {
        pairs,
        cfg,
        w_a: &sel_a.split.posteriors,
        w_b: &sel_b.split.posteriors,
        lr,
    };
    // A learns from B's split and B from A's.
    let (stats_a, stats_b) = rayon::join(
        || network_epoch(&ctx, &mut state.net_a, &sel_b.split, stream(cfg, Phase::Epoch, epoch, 0)),
        || network_epoch(&ctx, &mut state.net_b, &sel_a.split, stream(cfg, Phase::Epoch, epoch, 1)),
    );
    let (stats_a, stats_b) = (stats_a?, stats_b?);
    state.epoch += 1;

    let val_report = if val.len() >= 2 {
        Some(evaluation::retrieval_report(&evaluation::similarity_matrix(
            &state.encoders(),
            val,
        )?)?)
    } else {
        None
    };
    let soft_label_auc = evaluation::soft_label_auc(state, pairs).ok();

    Ok(EpochReport {
        epoch,
        variant: cfg.variant,
        lr,
        clean_sizes: [sel_a.split.clean_ids.len(), sel_b.split.clean_ids.len()],
        gmm: [sel_a.fit, sel_b.fit],
        net_a: stats_a,
        net_b: stats_b,
        val: val_report,
        soft_label_auc,
    })
}

/// Soft labels of every training pair under each network against its own
/// bank, with anchors over the whole set; returns (A, B).
pub fn dataset_soft_labels(
    state: &TrainerState,
    pairs: &[RawPair],
) -> Result<[rank_correlation::SoftLabelSet; 2]> {
    let refs: Vec<&RawPair> = pairs.iter().collect();
    let a = rank_correlation::soft_labels_for_batch(&state.net_a.bank.snapshot(), &state.net_a.enc, &refs)?;
    let b = rank_correlation::soft_labels_for_batch(&state.net_b.bank.snapshot(), &state.net_b.enc, &refs)?;
    Ok([a, b])
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub warmup_losses: Vec<[f64; 2]>,
    pub epochs: Vec<EpochReport>,
    /// Epoch whose validation R@1 was best; `None` without a validation split.
    pub best_epoch: Option<usize>,
    pub best: Option<RetrievalReport>,
}

pub struct TrainOutcome {
    pub final_state: TrainerState,
    pub best_state: TrainerState,
    pub report: RunReport,
}

/// Warm-up followed by `epochs − warmup_epochs` co-teaching epochs. The
/// checkpoint with the best mean validation R@1 is kept; ties go to the
/// earlier epoch.
pub fn train(cfg: &TrainConfig, pairs: &[RawPair], val: &[RawPair]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = pairs.first().ok_or(Error::InsufficientNegatives(0))?;
    let mut state = TrainerState::new(cfg, first.image_raw.len(), first.text_raw.len())?;
    let warmup_losses = warmup(&mut state, pairs, cfg)?;
    let mut best_state = state.clone();
    let mut best: Option<(usize, RetrievalReport)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs - cfg.warmup_epochs);
    for _ in cfg.warmup_epochs..cfg.epochs {
        let report = train_epoch(&mut state, pairs, val, cfg)?;
        if let Some(v) = report.val {
            if best.is_none_or(|(_, b)| v.r1() > b.r1()) {
                best = Some((report.epoch, v));
                best_state = state.clone();
            }
        }
        epochs.push(report);
    }
    Ok(TrainOutcome {
        final_state: state,
        best_state,
        report: RunReport {
            config: cfg.clone(),
            warmup_losses,
            best_epoch: best.map(|(e, _)| e),
            best: best.map(|(_, r)| r),
            epochs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GenerateParams};

    #[test]
    fn soft_margin_endpoints() {
        assert_eq!(soft_margin(0.0, 10.0, 0.2), 0.0);
        assert_eq!(soft_margin(1.0, 10.0, 0.2), 0.2);
        let expect = 0.2 * (10f64.sqrt() - 1.0) / 9.0;
        assert!((soft_margin(0.5, 10.0, 0.2) - expect).abs() < 1e-12);
        assert!((expect - 0.0480506).abs() < 1e-6);
    }

    #[test]
    fn soft_margin_increasing_convex() {
        let ys: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let v: Vec<f64> = ys.iter().map(|&y| soft_margin(y, 10.0, 0.2)).collect();
        for w in v.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - w[1] >= w[1] - w[0]);
        }
    }

    #[test]
    fn batches_fold_trailing_singleton() {
        let ids: Vec<usize> = (0..9).collect();
        let b = batches(&ids, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        let b = batches(&ids, 3);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("soft".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            warmup_epochs: 30,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            m: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().effective_k(), 8);
        let big = TrainConfig {
            bank_size: 4096,
            ..TrainConfig::default()
        };
        assert_eq!(big.effective_k(), 32);
    }

    fn small() -> (crate::dataset::PairDataset, TrainConfig) {
        let ds = generate(&GenerateParams {
            n: 300,
            noise_rate: 0.3,
            seed: 5,
            ..GenerateParams::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            warmup_epochs: 2,
            batch_size: 32,
            bank_size: 64,
            seed: 3,
            ..TrainConfig::default()
        };
        (ds, cfg)
    }

    #[test]
    fn banks_filled_from_lowest_loss_pairs() {
        let (ds, cfg) = small();
        let (train_pairs, _) = ds.split();
        let mut state = TrainerState::new(&cfg, ds.d_img, ds.d_txt).unwrap();
        warmup(&mut state, train_pairs, &cfg).unwrap();
        for net in [&state.net_a, &state.net_b] {
            assert!(!net.bank.is_empty());
            let losses = per_sample_losses(&net.enc, train_pairs, cfg.alpha, cfg.batch_size).unwrap();
            let mut order: Vec<usize> = (0..losses.len()).collect();
            order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
            let allowed: Vec<Vec<f32>> = order
                .iter()
                .take(net.bank.len())
                .map(|&i| {
                    net.enc
                        .embed_image(&train_pairs[i].image_raw)
                        .unwrap()
                        .unit
                        .iter()
                        .map(|&x| x as f32)
                        .collect()
                })
                .collect();
            for f in &net.bank.snapshot().img {
                let f32s: Vec<f32> = f.iter().map(|&x| x as f32).collect();
                assert!(allowed.contains(&f32s));
            }
        }
    }

    #[test]
    fn co_teaching_symmetry_with_shared_init() {
        let (ds, cfg) = small();
        let (train_pairs, val) = ds.split();
        let cfg = TrainConfig {
            shared_init: true,
            ..cfg
        };
        let out = train(&cfg, train_pairs, val).unwrap();
        assert_eq!(out.final_state.net_a.enc, out.final_state.net_b.enc);
        assert_eq!(out.final_state.net_a.bank, out.final_state.net_b.bank);
    }

    #[test]
    fn margins_stay_in_bounds() {
        for y in [0.0, 0.1, 0.5, 0.99, 1.0] {
            let a = soft_margin(y, 10.0, 0.2);
            assert!((0.0..=0.2).contains(&a));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, cfg) = small();
        let (train_pairs, val) = ds.split();
        let a = train(&cfg, train_pairs, val).unwrap();
        let b = train(&cfg, train_pairs, val).unwrap();
        assert_eq!(a.final_state.net_a.enc, b.final_state.net_a.enc);
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn best_checkpoint_is_best_validation_epoch() {
        let (ds, cfg) = small();
        let (train_pairs, val) = ds.split();
        let out = train(&cfg, train_pairs, val).unwrap();
        let best = out.report.best.unwrap();
        for e in &out.report.epochs {
            assert!(e.val.unwrap().r1() <= best.r1());
        }
        let sim = evaluation::similarity_matrix(&out.best_state.encoders(), val).unwrap();
        assert_eq!(evaluation::retrieval_report(&sim).unwrap(), best);
    }
}
