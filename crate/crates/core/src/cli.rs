//! Command-line front end.
//!
//! `generate` writes a synthetic dataset, `train` runs one configuration and
//! writes its artifacts, `ablate` compares the four variants over several
//! seeds and `sweep` varies one hyperparameter.
//!
//! Any command accepts `--config FILE`, a flat `key = value` file using the
//! long flag names. Values from the file are applied first so flags given on
//! the command line win.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{generate, GenerateParams, PairDataset};
use crate::error::{Error, Result};
use crate::evaluation::{self, DetectionReport, RetrievalReport, HISTOGRAM_BINS, RECALL_KS};
use crate::trainer::{self, LabelScope, TrainConfig, TrainOutcome, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// η values reported in detection tables.
pub const ETA_GRID: [f64; 5] = [0.05, 0.15, 0.25, 0.35, 0.45];

#[derive(Parser, Debug)]
#[command(name = "repair", version, about = "Noisy-correspondence training experiments")]
#[command(args_override_self = true)]
struct Cli {
    /// Flat key = value file with default flag values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic paired dataset.
    Generate(GenerateArgs),
    /// Train one configuration.
    Train(TrainArgs),
    /// Train all four variants over several seeds.
    Ablate(AblateArgs),
    /// Vary one hyperparameter over a grid.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d_latent: usize,
    #[arg(long, default_value_t = 32)]
    d_img: usize,
    #[arg(long, default_value_t = 32)]
    d_txt: usize,
    #[arg(long, default_value_t = 0.4)]
    noise_rate: f64,
    #[arg(long, default_value_t = GenerateParams::default().sigma)]
    sigma: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write one JSON object per pair to this path.
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Hard,
    Drop,
    RcDrop,
    Repair,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Hard => Variant::Hard,
            VariantArg::Drop => Variant::Drop,
            VariantArg::RcDrop => Variant::RcDrop,
            VariantArg::Repair => Variant::Repair,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScopeArg {
    Batch,
    Epoch,
}

/// Training hyperparameters shared by `train`, `ablate` and `sweep`.
#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay_epoch: Option<usize>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    bank_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, value_enum)]
    label_scope: Option<ScopeArg>,
    /// Fit the mixture on raw rather than min-max normalized losses.
    #[arg(long)]
    raw_losses: bool,
    #[arg(long)]
    gmm_max_iters: Option<usize>,
    /// Output directory; defaults to a name under $REPAIR_OUT_DIR (or `runs`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl TrainOpts {
    fn config(&self, variant: Variant, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            warmup_epochs: self.warmup_epochs.unwrap_or(d.warmup_epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr: self.lr.unwrap_or(d.lr),
            lr_decay_epoch: self.lr_decay_epoch.unwrap_or(d.lr_decay_epoch),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            momentum: self.momentum.unwrap_or(d.momentum),
            alpha: self.alpha.unwrap_or(d.alpha),
            m: self.m.unwrap_or(d.m),
            p: self.p.unwrap_or(d.p),
            eta: self.eta.unwrap_or(d.eta),
            tau: self.tau.unwrap_or(d.tau),
            k: self.k.or(d.k),
            bank_size: self.bank_size.unwrap_or(d.bank_size),
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            label_scope: match self.label_scope {
                Some(ScopeArg::Batch) => LabelScope::Batch,
                Some(ScopeArg::Epoch) => LabelScope::Epoch,
                None => d.label_scope,
            },
            loss_norm: !self.raw_losses,
            gmm_max_iters: self.gmm_max_iters.unwrap_or(d.gmm_max_iters),
            seed,
            variant,
            ..d
        }
    }

    fn out_dir(&self, name: &str) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| {
            std::env::var_os("REPAIR_OUT_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(name)
        })
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, value_enum, default_value = "repair")]
    variant: VariantArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Number of training seeds, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Exit nonzero unless median R@1 of repair is at least that of hard.
    #[arg(long)]
    assert_ordering: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum SweepParam {
    Eta,
    BankSize,
    Tau,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    grid: String,
    #[arg(long, value_enum, default_value = "repair")]
    variant: VariantArg,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Reads `--config` from raw arguments and splices the file's entries in
/// front of the real flags.
fn expand_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key = value", lineno + 1))?;
        let (key, value) = (key.trim().trim_start_matches("--"), value.trim());
        match value {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value.to_string());
            }
        }
    }
    // Insert after the subcommand so subcommand flags resolve.
    let sub = args
        .iter()
        .position(|a| ["generate", "train", "ablate", "sweep"].contains(&a.as_str()))
        .map(|i| i + 1)
        .unwrap_or(args.len());
    let mut out = args[..sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[sub..]);
    Ok(out)
}

/// Runs the CLI on the process arguments and returns the exit code.
pub fn run() -> i32 {
    run_with(std::env::args().collect())
}

pub fn run_with(args: Vec<String>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match result {
        Ok(code) => code,
        Err(Error::Parameter { name, reason }) => {
            eprintln!("error: invalid value for --{}: {reason}", name.replace('_', "-"));
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<i32> {
    let ds = generate(&GenerateParams {
        n: a.n,
        d_latent: a.d_latent,
        d_img: a.d_img,
        d_txt: a.d_txt,
        noise_rate: a.noise_rate,
        sigma: a.sigma,
        seed: a.seed,
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ds.save(&a.out)?;
    if let Some(p) = &a.jsonl {
        ds.write_jsonl(p)?;
    }
    println!("{}", ds.fingerprint());
    Ok(EXIT_OK)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    dataset: String,
    dataset_fingerprint: String,
    configs: Vec<&'a TrainConfig>,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Outputs { dir, written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, contents)?;
        Ok(())
    }

    fn manifest(
        mut self,
        command: &str,
        dataset: &Path,
        ds: &PairDataset,
        configs: Vec<&TrainConfig>,
        started: u64,
    ) -> Result<()> {
        let mut outputs = std::mem::take(&mut self.written);
        outputs.push("manifest.json".into());
        let m = RunManifest {
            command,
            version: concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION")),
            dataset: dataset.display().to_string(),
            dataset_fingerprint: ds.fingerprint(),
            configs,
            started_unix: started,
            finished_unix: unix_now(),
            outputs,
        };
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}

fn load_dataset(path: &Path) -> Result<PairDataset> {
    PairDataset::load(path)
}

fn warn_ignored(cfg: &TrainConfig, opts: &TrainOpts) {
    if cfg.variant != Variant::Repair && opts.tau.is_some() {
        log::warn!("tau is ignored for the {} variant", cfg.variant);
    }
    if cfg.variant != Variant::Repair && opts.k.is_some() {
        log::warn!("k is ignored for the {} variant", cfg.variant);
    }
}

fn epochs_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from(
        "epoch,variant,lr,l_clean,l_noisy,clean_size_a,clean_size_b,npr_count,val_r1,val_r5,val_r10,val_rsum,soft_label_auc\n",
    );
    for e in &outcome.report.epochs {
        let (r, rsum) = match e.val {
            Some(v) => (
                [0, 1, 2].map(|i| format!("{:.6}", (v.i2t[i] + v.t2i[i]) / 2.0)),
                format!("{:.4}", v.r_sum),
            ),
            None => (["".into(), "".into(), "".into()], String::new()),
        };
        let auc = e.soft_label_auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{:.8},{:.8},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.variant,
            e.lr,
            e.l_clean(),
            e.l_noisy(),
            e.clean_sizes[0],
            e.clean_sizes[1],
            e.npr_count(),
            r[0],
            r[1],
            r[2],
            rsum,
            auc
        );
    }
    s
}

fn recall_csv(r: &RetrievalReport) -> String {
    let mut s = String::from("direction,k,value\n");
    for (name, vals) in [("i2t", r.i2t), ("t2i", r.t2i)] {
        for (k, v) in RECALL_KS.iter().zip(vals) {
            let _ = writeln!(s, "{name},{k},{v:.6}");
        }
    }
    let _ = writeln!(s, "rsum,,{:.4}", r.r_sum);
    s
}

fn detection_csv(reports: &[DetectionReport]) -> String {
    let mut s = String::from("eta,selected,accuracy,precision,recall,precision_defined\n");
    for d in reports {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{}",
            d.eta_used.unwrap_or(f64::NAN),
            d.selected,
            d.accuracy,
            d.precision,
            d.recall,
            d.precision_defined
        );
    }
    s
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let started = unix_now();
    let cfg = a.opts.config(a.variant.into(), a.seed);
    cfg.validate()?;
    warn_ignored(&cfg, &a.opts);
    let ds = load_dataset(&a.opts.dataset)?;
    let (train_pairs, val) = ds.split();
    let outcome = trainer::train(&cfg, train_pairs, val)?;
    let mut out = Outputs::new(a.opts.out_dir(&format!("train-{}-seed{}", cfg.variant, cfg.seed)))?;

    out.write("epochs.csv", &epochs_csv(&outcome))?;
    if let Some(best) = &outcome.report.best {
        out.write("recall.csv", &recall_csv(best))?;
    }

    let truth = evaluation::ground_truth(train_pairs);
    let mut npr = String::from("epoch,net,pair_id,direction,bank_entry_index,similarity,true_mismatch\n");
    for e in &outcome.report.epochs {
        for (net, stats) in [("a", &e.net_a), ("b", &e.net_b)] {
            for r in &stats.npr_records {
                let _ = writeln!(
                    npr,
                    "{},{net},{},{},{},{:.6},{}",
                    e.epoch,
                    r.pair_id,
                    r.direction.as_str(),
                    r.bank_entry_index,
                    r.similarity,
                    !truth[r.pair_index]
                );
            }
        }
    }
    out.write("npr.csv", &npr)?;

    let state = &outcome.final_state;
    let [la, lb] = trainer::dataset_soft_labels(state, train_pairs)?;
    let scores: Vec<f64> = la.y_star.iter().zip(&lb.y_star).map(|(x, y)| (x + y) / 2.0).collect();
    let mut labels = String::from("pair_id,corre_a,y_star_a,corre_b,y_star_b,score,true_match\n");
    for (i, p) in train_pairs.iter().enumerate() {
        let _ = writeln!(
            labels,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            p.pair_id, la.corre[i], la.y_star[i], lb.corre[i], lb.y_star[i], scores[i], truth[i]
        );
    }
    out.write("soft_labels.csv", &labels)?;

    let separation = evaluation::soft_label_separation(&scores, &truth).ok();
    if let Some(sep) = &separation {
        let mut h = String::from("bin_lo,bin_hi,clean,noisy\n");
        for b in 0..HISTOGRAM_BINS {
            let lo = b as f64 / HISTOGRAM_BINS as f64;
            let hi = (b + 1) as f64 / HISTOGRAM_BINS as f64;
            let _ = writeln!(h, "{lo},{hi},{},{}", sep.hist_clean[b], sep.hist_noisy[b]);
        }
        out.write("soft_label_histogram.csv", &h)?;
    }

    let detection = evaluation::detection_sweep(state, train_pairs, &cfg, &ETA_GRID)?;
    out.write("detection.csv", &detection_csv(&detection))?;

    let mut gmm = String::new();
    for e in &outcome.report.epochs {
        for (net, fit) in ["a", "b"].iter().zip(&e.gmm) {
            let line = serde_json::json!({ "epoch": e.epoch, "net": net, "fit": fit });
            let _ = writeln!(gmm, "{line}");
        }
    }
    out.write("gmm.jsonl", &gmm)?;

    let report = serde_json::json!({
        "run": &outcome.report,
        "soft_label_auc": separation.as_ref().map(|s| s.auc),
        "detection": detection,
        "note": "rsum sums six recalls over a 1:1 held-out pairing and is comparable only between runs of this tool",
    });
    out.write("report.json", &serde_json::to_string_pretty(&report)?)?;

    for (name, enc) in [
        ("best_a.bin", &outcome.best_state.net_a.enc),
        ("best_b.bin", &outcome.best_state.net_b.enc),
        ("final_a.bin", &state.net_a.enc),
        ("final_b.bin", &state.net_b.enc),
    ] {
        let p = out.path(name);
        enc.save(p)?;
    }
    for (name, bank) in [("bank_a.bin", &state.net_a.bank), ("bank_b.bin", &state.net_b.bank)] {
        let p = out.path(name);
        bank.dump(p)?;
    }

    if let Some(best) = &outcome.report.best {
        println!(
            "best epoch {}: R@1 {:.4} (i2t {:.4}, t2i {:.4}), rsum {:.2}",
            outcome.report.best_epoch.unwrap_or(0),
            best.r1(),
            best.i2t[0],
            best.t2i[0],
            best.r_sum
        );
    }
    println!("wrote {}", out.dir.display());
    let dir = a.opts.dataset.clone();
    out.manifest("train", &dir, &ds, vec![&cfg], started)?;
    Ok(EXIT_OK)
}

/// Headline numbers of one finished run.
#[derive(Debug, Clone, Serialize)]
struct RunSummary {
    r1: f64,
    r1_i2t: f64,
    r1_t2i: f64,
    r_sum: f64,
    soft_label_auc: Option<f64>,
    detection: Option<DetectionReport>,
}

fn summarize(cfg: &TrainConfig, ds: &PairDataset, eta: Option<f64>) -> Result<RunSummary> {
    let (train_pairs, val) = ds.split();
    let outcome = trainer::train(cfg, train_pairs, val)?;
    let best = outcome
        .report
        .best
        .ok_or_else(|| Error::DegenerateInput("no held-out pairs to evaluate".into()))?;
    let soft_label_auc = match cfg.variant {
        Variant::RcDrop | Variant::Repair => evaluation::soft_label_auc(&outcome.final_state, train_pairs).ok(),
        _ => None,
    };
    let detection = match eta {
        Some(e) => Some(evaluation::detection_sweep(&outcome.final_state, train_pairs, cfg, &[e])?[0]),
        None => None,
    };
    Ok(RunSummary {
        r1: best.r1(),
        r1_i2t: best.i2t[0],
        r1_t2i: best.t2i[0],
        r_sum: best.r_sum,
        soft_label_auc,
        detection,
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn cmd_ablate(a: &AblateArgs) -> Result<i32> {
    let started = unix_now();
    if a.seeds == 0 {
        return Err(crate::error::param("seeds", "must be at least 1"));
    }
    let ds = load_dataset(&a.opts.dataset)?;
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let configs: Vec<TrainConfig> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .map(|(v, s)| a.opts.config(v, s))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    warn_ignored(&configs[0], &a.opts);
    let runs: Vec<RunSummary> = configs
        .par_iter()
        .map(|c| summarize(c, &ds, None))
        .collect::<Result<_>>()?;

    let mut csv = String::from("variant,seed,r1,r1_i2t,r1_t2i,rsum,soft_label_auc\n");
    let mut medians = Vec::new();
    for (vi, v) in Variant::ALL.iter().enumerate() {
        let block = &runs[vi * seeds.len()..(vi + 1) * seeds.len()];
        for (s, r) in seeds.iter().zip(block) {
            let _ = writeln!(
                csv,
                "{v},{s},{:.6},{:.6},{:.6},{:.4},{}",
                r.r1,
                r.r1_i2t,
                r.r1_t2i,
                r.r_sum,
                opt(r.soft_label_auc)
            );
        }
        let med = |f: &dyn Fn(&RunSummary) -> f64| median(&mut block.iter().map(f).collect::<Vec<_>>());
        let aucs: Vec<f64> = block.iter().filter_map(|r| r.soft_label_auc).collect();
        let r1 = med(&|r| r.r1);
        let _ = writeln!(
            csv,
            "{v},median,{:.6},{:.6},{:.6},{:.4},{}",
            r1,
            med(&|r| r.r1_i2t),
            med(&|r| r.r1_t2i),
            med(&|r| r.r_sum),
            if aucs.is_empty() { String::new() } else { format!("{:.6}", median(&mut aucs.clone())) }
        );
        medians.push(r1);
    }
    let mut out = Outputs::new(a.opts.out_dir("ablate"))?;
    out.write("ablation.csv", &csv)?;
    print!("{csv}");
    let [hard, drop, rc, rep] = [medians[0], medians[1], medians[2], medians[3]];
    let ordered = rep >= rc && rc >= drop && drop >= hard;
    println!(
        "median R@1 hard {hard:.4} drop {drop:.4} rc-drop {rc:.4} repair {rep:.4}; full ordering {}",
        if ordered { "holds" } else { "does not hold" }
    );
    out.manifest("ablate", &a.opts.dataset, &ds, configs.iter().collect(), started)?;
    if a.assert_ordering && rep < hard {
        eprintln!("error: median R@1 of repair ({rep:.4}) is below hard ({hard:.4})");
        return Ok(EXIT_RUNTIME);
    }
    Ok(EXIT_OK)
}

/// Parses `start:stop:step` (inclusive) or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| crate::error::param("grid", format!("`{text}`: {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) {
            return Err(bad("step must be positive"));
        }
        let mut v = Vec::new();
        let mut i = 0u32;
        loop {
            let x = start + f64::from(i) * step;
            if x > stop + step * 1e-9 {
                break;
            }
            v.push((x * 1e9).round() / 1e9);
            i += 1;
        }
        v
    } else {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(num)
            .collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(bad("empty grid"));
    }
    Ok(values)
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let started = unix_now();
    if a.seeds == 0 {
        return Err(crate::error::param("seeds", "must be at least 1"));
    }
    let grid = parse_grid(&a.grid)?;
    let ds = load_dataset(&a.opts.dataset)?;
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let mut configs = Vec::new();
    for &value in &grid {
        for &s in &seeds {
            let mut c = a.opts.config(a.variant.into(), s);
            match a.param {
                SweepParam::Eta => c.eta = value,
                SweepParam::Tau => c.tau = value,
                SweepParam::BankSize => {
                    if value < 0.0 || value.fract() != 0.0 {
                        return Err(crate::error::param("grid", format!("bank size {value} is not a whole number")));
                    }
                    c.bank_size = value as usize;
                }
            }
            c.validate()?;
            configs.push(c);
        }
    }
    let runs: Vec<RunSummary> = configs
        .par_iter()
        .map(|c| summarize(c, &ds, Some(c.eta)))
        .collect::<Result<_>>()?;

    let name = match a.param {
        SweepParam::Eta => "eta",
        SweepParam::BankSize => "bank_size",
        SweepParam::Tau => "tau",
    };
    let mut csv = format!("{name},seed,r1,rsum,soft_label_auc,eta,detect_selected,detect_accuracy,detect_precision,detect_recall\n");
    let mut best: Option<(f64, f64)> = None;
    for (gi, &value) in grid.iter().enumerate() {
        let block = &runs[gi * seeds.len()..(gi + 1) * seeds.len()];
        for (cfg, r) in configs[gi * seeds.len()..].iter().zip(block) {
            let d = r.detection.expect("sweep runs record detection");
            let _ = writeln!(
                csv,
                "{value},{},{:.6},{:.4},{},{},{},{:.6},{:.6},{:.6}",
                cfg.seed,
                r.r1,
                r.r_sum,
                opt(r.soft_label_auc),
                cfg.eta,
                d.selected,
                d.accuracy,
                d.precision,
                d.recall
            );
        }
        let med = |f: &dyn Fn(&RunSummary) -> f64| median(&mut block.iter().map(f).collect::<Vec<_>>());
        let r1 = med(&|r| r.r1);
        let _ = writeln!(
            csv,
            "{value},median,{:.6},{:.4},,,,{:.6},{:.6},{:.6}",
            r1,
            med(&|r| r.r_sum),
            med(&|r| r.detection.map_or(0.0, |d| d.accuracy)),
            med(&|r| r.detection.map_or(0.0, |d| d.precision)),
            med(&|r| r.detection.map_or(0.0, |d| d.recall)),
        );
        if best.is_none_or(|(_, b)| r1 > b) {
            best = Some((value, r1));
        }
    }
    let mut out = Outputs::new(a.opts.out_dir(&format!("sweep-{name}")))?;
    out.write("sweep.csv", &csv)?;
    print!("{csv}");
    if let Some((v, r1)) = best {
        println!("best median R@1 {r1:.4} at {name} = {v}");
    }
    out.manifest("sweep", &a.opts.dataset, &ds, configs.iter().collect(), started)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_range_is_inclusive() {
        assert_eq!(parse_grid("0.05:0.45:0.1").unwrap(), vec![0.05, 0.15, 0.25, 0.35, 0.45]);
        assert_eq!(parse_grid("64,128").unwrap(), vec![64.0, 128.0]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("1:2:0").is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn invalid_noise_rate_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds.bin");
        let code = run_with(
            ["repair", "generate", "--noise-rate", "1.5", "--out", out.to_str().unwrap()]
                .map(String::from)
                .to_vec(),
        );
        assert_eq!(code, EXIT_USAGE);
        assert!(!out.exists());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let code = run_with(["repair", "train", "--bogus"].map(String::from).to_vec());
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn missing_dataset_is_runtime_error() {
        let code = run_with(
            ["repair", "train", "--dataset", "/nonexistent/ds.bin"]
                .map(String::from)
                .to_vec(),
        );
        assert_eq!(code, EXIT_RUNTIME);
    }

    #[test]
    fn config_file_values_yield_to_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        fs::write(&cfg, "# defaults\nn = 50\nseed = 3\nnoise-rate = 0.2\n").unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let base = |out: &Path, extra: &[&str]| {
            let mut v: Vec<String> = ["repair", "generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]
                .map(String::from)
                .to_vec();
            v.extend(extra.iter().map(|s| s.to_string()));
            v
        };
        assert_eq!(run_with(base(&a, &[])), EXIT_OK);
        assert_eq!(run_with(base(&b, &["--seed", "4"])), EXIT_OK);
        let da = PairDataset::load(&a).unwrap();
        let db = PairDataset::load(&b).unwrap();
        assert_eq!(da.len(), 50);
        assert_eq!(da.seed, 3);
        assert_eq!(db.seed, 4);
    }
}
