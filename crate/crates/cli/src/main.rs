//! Command-line driver for the sparse-encoding action recognition pipeline.
//!
//! Subcommands: `gen-data` (synthetic corpus), `train`, `eval`, `bench`,
//! `cost`, `label-sim`. Reports are JSON (CSV where noted) to stdout or
//! `--out`.
//!
//! Exit codes: 0 success, 2 configuration error (bad flags, bad config file,
//! invalid values), 3 data error (missing/corrupt files), 4 failed
//! `--assert-*` check.

use clap::{Args, Parser, Subcommand};
use frameres_core::cost::{pipeline_cost, CostMode, EncoderCostSpec};
use frameres_core::datagen::{
    generate, read_corpus, split, write_corpus, Corpus, MotionKind, SynthSpec,
};
use frameres_core::encoder::{build_encoder, encode_batch, EncoderConfig, Frame};
use frameres_core::error::{CoreError, Result};
use frameres_core::ffres::DEFAULT_DEPTH;
use frameres_core::labels::{label_similarity_report, CaptionProvider};
use frameres_core::pipeline::{
    read_checkpoint, run_eval, run_train, time_median, write_checkpoint, RunConfig, RunReport,
    Variant,
};
use frameres_core::recognition::{LabelSet, Paradigm, DEFAULT_LOGIT_SCALE};
use frameres_core::rng::CounterRng;
use frameres_core::sampling::PerGap;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "frameres",
    version,
    about = "Action recognition that encodes fewer frames and restores the rest"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
// One short-lived instance ever exists; boxing the big variants buys nothing.
#[allow(clippy::large_enum_variant)]
enum Cmd {
    /// Generate a deterministic synthetic motion-video corpus file.
    GenData(GenDataArgs),
    /// Train the restoration stack and recognition head on a corpus.
    Train(TrainArgs),
    /// Evaluate a stored checkpoint.
    Eval(EvalArgs),
    /// Benchmark frame encoding throughput (median over repetitions).
    Bench(BenchArgs),
    /// Print the analytic compute-cost report for a pipeline shape.
    Cost(CostArgs),
    /// Report pairwise label-embedding similarity for a caption manifest.
    LabelSim(LabelSimArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 41)]
    seed: u64,
    /// Comma-separated motion class names (default: all eight).
    #[arg(long)]
    classes: Option<String>,
    #[arg(long, default_value_t = 250)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 0.02)]
    noise_std: f64,
    /// Caption manifest for label captions (default: template captions).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// Corpus file produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint destination (optional).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    paradigm: Option<String>,
    /// Sampling filter: keep every r-th frame.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Restoration-supervision weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Restoration stack depth.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restorations per gap: "all" or "one".
    #[arg(long)]
    per_gap: Option<String>,
    #[arg(long)]
    logit_scale: Option<f64>,
    /// Fraction of each class used for training; the rest is the eval side.
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    enc_patch: Option<usize>,
    #[arg(long)]
    enc_hidden: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    enc_heads: Option<usize>,
    #[arg(long)]
    enc_out: Option<usize>,
    #[arg(long)]
    enc_seed: Option<u64>,
    /// Thread count for parallel sections (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with code 4 if final top-1 accuracy is below this.
    #[arg(long)]
    assert_top1_min: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also measure restored-feature quality (encodes restoration sites,
    /// untimed).
    #[arg(long)]
    probe_cosine: bool,
    /// When set, split the corpus and evaluate the held-out side.
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with code 4 if top-1 accuracy is below this.
    #[arg(long)]
    assert_top1_min: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Frames per timed repetition.
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 41)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct CostArgs {
    /// Encoder shape preset.
    #[arg(long, default_value = "vit-b32", value_parser = ["vit-b32", "desk"])]
    preset: String,
    /// Pipeline to price: baseline, sllm-infer, or sllm-train.
    #[arg(long, default_value = "sllm-train")]
    mode: String,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 2)]
    r: usize,
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    depth: usize,
    /// Frame height (desk preset only).
    #[arg(long, default_value_t = 32)]
    height: usize,
    /// Frame width (desk preset only).
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Emit CSV instead of JSON.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LabelSimArgs {
    /// Caption manifest; omit to use the fixed template captions.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated label names (default: every manifest entry).
    #[arg(long)]
    names: Option<String>,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 41)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Emit CSV instead of JSON.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CoreError::Config(_) => 2u8,
                _ => 3u8,
            })
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Cost(a) => cmd_cost(a),
        Cmd::LabelSim(a) => cmd_label_sim(a),
    }
}

/// Route output to a file or stdout.
fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Cap the worker pool before any parallel section runs. A no-op when the
/// pool is already initialized or the build is sequential.
fn set_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        if n > 0 && std::env::var_os("RAYON_NUM_THREADS").is_none() {
            std::env::set_var("RAYON_NUM_THREADS", n.to_string());
        }
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// Flat `key = value` config text. Blank lines and `#` comments are skipped;
/// every key must be consumed by the caller — leftovers are hard errors.
struct ConfigBag {
    values: BTreeMap<String, String>,
}

impl ConfigBag {
    fn empty() -> ConfigBag {
        ConfigBag {
            values: BTreeMap::new(),
        }
    }

    fn from_file(path: &Path) -> Result<ConfigBag> {
        let text = std::fs::read_to_string(path)?;
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!(
                    "config line {}: expected key = value, got {line:?}",
                    i + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(CoreError::Config(format!(
                    "config line {}: empty key or value",
                    i + 1
                )));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(CoreError::Config(format!(
                    "config line {}: duplicate key {key:?}",
                    i + 1
                )));
            }
        }
        Ok(ConfigBag { values })
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CoreError::Config(format!("config key {key}: cannot parse value {raw:?}"))
            }),
        }
    }

    fn finish(self) -> Result<()> {
        if self.values.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.values.keys().map(String::as_str).collect();
            Err(CoreError::Config(format!(
                "unknown config keys: {}",
                keys.join(", ")
            )))
        }
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn parse_classes(arg: Option<&str>) -> Result<Vec<MotionKind>> {
    match arg {
        None => Ok(MotionKind::all().to_vec()),
        Some(list) => list
            .split(',')
            .map(|s| MotionKind::parse(s.trim()))
            .collect(),
    }
}

fn cmd_gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let spec = SynthSpec {
        classes: parse_classes(a.classes.as_deref())?,
        per_class: a.per_class,
        frames: a.frames,
        height: a.height,
        width: a.width,
        noise_std: a.noise_std,
        seed: a.seed,
    };
    let captions = match &a.manifest {
        Some(p) => CaptionProvider::from_file(p)?,
        None => CaptionProvider::default(),
    };
    let corpus = generate(&spec, &captions)?;
    write_corpus(&corpus, &a.out)?;
    eprintln!(
        "wrote {} videos ({} classes, {} frames of {}x{}) to {}",
        corpus.len(),
        corpus.labels.len(),
        corpus.frames,
        corpus.height,
        corpus.width,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct SplitChoice {
    train_frac: f64,
    split_seed: u64,
}

fn resolve_train(a: &TrainArgs, corpus: &Corpus) -> Result<(RunConfig, SplitChoice)> {
    let mut bag = match &a.config {
        Some(p) => ConfigBag::from_file(p)?,
        None => ConfigBag::empty(),
    };
    let desk = EncoderConfig::desk();
    let encoder = EncoderConfig {
        patch: a.enc_patch.or(bag.take("enc_patch")?).unwrap_or(desk.patch),
        hidden: a
            .enc_hidden
            .or(bag.take("enc_hidden")?)
            .unwrap_or(desk.hidden),
        layers: a
            .enc_layers
            .or(bag.take("enc_layers")?)
            .unwrap_or(desk.layers),
        heads: a.enc_heads.or(bag.take("enc_heads")?).unwrap_or(desk.heads),
        out: a.enc_out.or(bag.take("enc_out")?).unwrap_or(desk.out),
        seed: a.enc_seed.or(bag.take("enc_seed")?).unwrap_or(desk.seed),
    };
    let variant_s: Option<String> = bag.take("variant")?;
    let variant = match a.variant.as_deref().or(variant_s.as_deref()) {
        Some(s) => Variant::parse(s)?,
        None => Variant::Sllm,
    };
    let paradigm_s: Option<String> = bag.take("paradigm")?;
    let paradigm = match a.paradigm.as_deref().or(paradigm_s.as_deref()) {
        Some(s) => Paradigm::parse(s)?,
        None => Paradigm::Matching,
    };
    let per_gap_s: Option<String> = bag.take("per_gap")?;
    let per_gap = match a.per_gap.as_deref().or(per_gap_s.as_deref()) {
        Some("all") | None => PerGap::All,
        Some("one") => PerGap::One,
        Some(other) => return Err(CoreError::Config(format!("unknown per-gap mode {other:?}"))),
    };
    let cfg = RunConfig {
        encoder,
        frames: a.frames.or(bag.take("frames")?).unwrap_or(corpus.frames),
        filter: a.r.or(bag.take("r")?).unwrap_or(2),
        variant,
        paradigm,
        beta: a
            .beta
            .or(bag.take("beta")?)
            .unwrap_or(frameres_core::pipeline::DEFAULT_RESTORATION_WEIGHT),
        ffres_depth: a.depth.or(bag.take("depth")?).unwrap_or(DEFAULT_DEPTH),
        lr: a.lr.or(bag.take("lr")?).unwrap_or(1e-3),
        epochs: a.epochs.or(bag.take("epochs")?).unwrap_or(10),
        batch: a.batch.or(bag.take("batch")?).unwrap_or(16),
        seed: a.seed.or(bag.take("seed")?).unwrap_or(41),
        per_gap,
        logit_scale: a
            .logit_scale
            .or(bag.take("logit_scale")?)
            .unwrap_or(DEFAULT_LOGIT_SCALE),
    };
    let choice = SplitChoice {
        train_frac: a.train_frac.or(bag.take("train_frac")?).unwrap_or(0.8),
        split_seed: a.split_seed.or(bag.take("split_seed")?).unwrap_or(cfg.seed),
    };
    bag.finish()?;
    Ok((cfg, choice))
}

fn assert_top1(report: &RunReport, min: Option<f64>) -> ExitCode {
    match min {
        Some(m) if report.top1 < m => {
            eprintln!(
                "assertion failed: top1 {:.4} is below the required {:.4}",
                report.top1, m
            );
            ExitCode::from(4)
        }
        _ => ExitCode::SUCCESS,
    }
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    set_workers(a.workers);
    let corpus = read_corpus(&a.data)?;
    let (cfg, choice) = resolve_train(&a, &corpus)?;
    let (train, test) = split(&corpus, choice.train_frac, choice.split_seed)?;
    let (report, ckpt) = run_train(&cfg, &train, &test)?;
    if let Some(p) = &a.checkpoint {
        write_checkpoint(&ckpt, p)?;
        eprintln!("checkpoint written to {}", p.display());
    }
    emit(&report.to_json(), a.out.as_deref())?;
    Ok(assert_top1(&report, a.assert_top1_min))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    set_workers(a.workers);
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let corpus = read_corpus(&a.data)?;
    let target = match a.train_frac {
        Some(frac) => {
            let seed = a.split_seed.unwrap_or(ckpt.meta.seed);
            split(&corpus, frac, seed)?.1
        }
        None => corpus,
    };
    let report = run_eval(&ckpt, &target, a.probe_cosine)?;
    emit(&report.to_json(), a.out.as_deref())?;
    Ok(assert_top1(&report, a.assert_top1_min))
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn cmd_bench(a: BenchArgs) -> Result<ExitCode> {
    set_workers(a.workers);
    if a.frames == 0 {
        return Err(CoreError::Config("bench needs at least one frame".into()));
    }
    if a.reps < 10 || a.warmup < 3 {
        return Err(CoreError::Config(format!(
            "bench needs >= 3 warmup and >= 10 timed repetitions, got {} and {}",
            a.warmup, a.reps
        )));
    }
    let enc = build_encoder(&EncoderConfig::desk())?;
    let rng = CounterRng::new(a.seed, 0xBE9C);
    let mut frames = Vec::with_capacity(a.frames);
    for i in 0..a.frames {
        let base = (i * a.height * a.width) as u64;
        let pixels: Vec<f32> = (0..a.height * a.width)
            .map(|j| rng.uniform(base + j as u64) as f32)
            .collect();
        frames.push(Frame::new(a.height, a.width, pixels)?);
    }
    let median = time_median(
        || {
            let feats = encode_batch(&enc, &frames)?;
            std::hint::black_box(&feats);
            Ok(())
        },
        a.warmup,
        a.reps,
    )?;
    let report = serde_json::json!({
        "schema_version": 1,
        "kind": "encode_bench",
        "frames_per_rep": a.frames,
        "height": a.height,
        "width": a.width,
        "warmup": a.warmup,
        "reps": a.reps,
        "parallel": frameres_core::par::PARALLEL_ENABLED,
        "median_seconds": median,
        "frames_per_second": a.frames as f64 / median.max(1e-12),
    });
    emit(
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&report).expect("bench json")
        ),
        a.out.as_deref(),
    )?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

fn cmd_cost(a: CostArgs) -> Result<ExitCode> {
    let spec = match a.preset.as_str() {
        "vit-b32" => EncoderCostSpec::vit_b32(),
        "desk" => EncoderCostSpec::from_encoder(&EncoderConfig::desk(), a.height, a.width)?,
        other => return Err(CoreError::Config(format!("unknown preset {other:?}"))),
    };
    let mode = match a.mode.as_str() {
        "baseline" => CostMode::Baseline,
        "sllm-infer" => CostMode::SllmInfer,
        "sllm-train" => CostMode::SllmTrain,
        other => return Err(CoreError::Config(format!("unknown cost mode {other:?}"))),
    };
    let report = pipeline_cost(&spec, a.depth, a.frames, a.r, mode)?;
    let text = if a.csv {
        report.to_csv()
    } else {
        report.to_json()
    };
    emit(&text, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// label-sim
// ---------------------------------------------------------------------------

fn cmd_label_sim(a: LabelSimArgs) -> Result<ExitCode> {
    let provider = match &a.manifest {
        Some(p) => CaptionProvider::from_file(p)?,
        None => CaptionProvider::default(),
    };
    let names: Vec<String> = match &a.names {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            let stored: Vec<String> = provider.names().iter().map(|s| s.to_string()).collect();
            if stored.is_empty() {
                return Err(CoreError::Config(
                    "template captions need --names to know which labels to embed".into(),
                ));
            }
            stored
        }
    };
    let pairs: Vec<(String, String)> = names
        .iter()
        .map(|n| Ok((n.clone(), provider.caption(n)?)))
        .collect::<Result<Vec<_>>>()?;
    let labels = LabelSet::build(&pairs, a.width, a.seed)?;
    let report = label_similarity_report(&labels, a.top_k)?;
    let text = if a.csv {
        report.to_csv()
    } else {
        report.to_json()
    };
    emit(&text, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}
