//! End-to-end training and evaluation runs.
//!
//! A run wires the fixed pieces together: the frozen encoder produces frame
//! features; the sampling plan decides which frames are encoded and which are
//! restored; the restoration stack fills the gaps; the recognition head
//! scores the pooled sequence. Only the restoration stack and the head are
//! trained.
//!
//! Per-video losses: the head cross-entropy, plus (when supervision is on)
//! `beta` times the mean restoration divergence against frozen-encoder
//! features of the discarded frames. The frozen targets are computed once per
//! run and cached, which changes no numbers — the encoder is deterministic —
//! only how often it runs.
//!
//! Everything is deterministic for a fixed config and seed: parameter init,
//! epoch shuffles, batch order, and gradient reduction (per-video gradients
//! are computed in parallel but reduced sequentially in video order).

use crate::cost::{pipeline_cost, CostMode, CostReport, EncoderCostSpec};
use crate::datagen::Corpus;
use crate::encoder::{build_encoder, encode, EncoderConfig, FrozenWeights};
use crate::error::{CoreError, Result};
use crate::ffres::{
    adam_step, backward, init_ffres, restoration_loss, restoration_loss_grad, restore_batch_traced,
    AdamState, FFResParams,
};
use crate::labels::CaptionProvider;
use crate::numerics::{cosine, FeatureVec, Matrix};
use crate::par::par_map;
use crate::recognition::{
    head_loss, init_heads, predict_scores, rank_of, HeadGradients, HeadParams, LabelEntry,
    LabelSet, Paradigm,
};
use crate::rng::SeqRng;
use crate::sampling::{interleave, make_plan_limited, PartitionPlan, PerGap};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub const REPORT_SCHEMA: u32 = 1;

/// Default weight on the restoration term of the training objective.
///
/// The two loss paths reach the restorer at very different scales: the
/// recognition path is amplified by the feature-normalization backward (which
/// divides by small pooled-feature norms), while the distribution-matching
/// term differentiates near-uniform softmaxes of small-magnitude features and
/// produces gradients several orders of magnitude smaller. Left at weight
/// 1.0, supervision moves the restorer by less than 1e-3 in mean cosine; this
/// weight rebalances the paths so supervision meaningfully anchors restored
/// features to the frozen-encoder targets without hurting recognition.
pub const DEFAULT_RESTORATION_WEIGHT: f64 = 5000.0;

const LABEL_SEED_SALT: u64 = 0x4C41_4245_4C53;
const EPOCH_SHUFFLE_STREAM: u64 = 0x4550_0000;

/// Which pipeline wiring a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Encode every frame; no restoration.
    Baseline,
    /// Sparse encoding, restoration, restoration supervision.
    Sllm,
    /// Sparse encoding and restoration, but no supervision term.
    SllmNoSupervision,
    /// Sparse encoding only: the sequence is just the retained frames.
    SllmNoFfres,
    /// Full pipeline, but label embeddings use template captions instead of
    /// the corpus captions.
    SllmNoAugment,
}

impl Variant {
    pub fn all() -> [Variant; 5] {
        [
            Variant::Baseline,
            Variant::Sllm,
            Variant::SllmNoSupervision,
            Variant::SllmNoFfres,
            Variant::SllmNoAugment,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Sllm => "sllm",
            Variant::SllmNoSupervision => "sllm_no_supervision",
            Variant::SllmNoFfres => "sllm_no_ffres",
            Variant::SllmNoAugment => "sllm_no_augment",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::all()
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown variant {s:?}")))
    }

    /// Does this variant restore discarded frames?
    pub fn uses_restoration(&self) -> bool {
        !matches!(self, Variant::Baseline | Variant::SllmNoFfres)
    }

    /// Does this variant supervise restorations against frozen features?
    pub fn uses_supervision(&self) -> bool {
        matches!(self, Variant::Sllm | Variant::SllmNoAugment)
    }

    /// Does this variant subsample frames at all?
    pub fn uses_sampling(&self) -> bool {
        !matches!(self, Variant::Baseline)
    }
}

/// Full configuration of one run. Frame geometry comes from the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub frames: usize,
    pub filter: usize,
    pub variant: Variant,
    pub paradigm: Paradigm,
    pub beta: f64,
    pub ffres_depth: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub per_gap: PerGap,
    pub logit_scale: f64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.frames < 2 {
            return Err(CoreError::Config(format!(
                "need at least 2 frames per video, got {}",
                self.frames
            )));
        }
        if self.variant.uses_sampling() && self.filter < 2 {
            return Err(CoreError::Config(format!(
                "sampling filter must be at least 2, got {}",
                self.filter
            )));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(CoreError::Config(format!(
                "beta must be nonnegative, got {}",
                self.beta
            )));
        }
        if self.ffres_depth == 0 {
            return Err(CoreError::Config(
                "restoration depth must be nonzero".into(),
            ));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(CoreError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch == 0 {
            return Err(CoreError::Config("batch size must be nonzero".into()));
        }
        if self.logit_scale.is_nan() || self.logit_scale <= 0.0 {
            return Err(CoreError::Config(format!(
                "logit scale must be positive, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "encoder": self.encoder,
            "frames": self.frames,
            "filter": self.filter,
            "variant": self.variant.as_str(),
            "paradigm": self.paradigm.as_str(),
            "beta": self.beta,
            "ffres_depth": self.ffres_depth,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch": self.batch,
            "seed": self.seed,
            "per_gap": per_gap_str(self.per_gap),
            "logit_scale": self.logit_scale,
        })
    }
}

fn per_gap_str(p: PerGap) -> &'static str {
    match p {
        PerGap::All => "all",
        PerGap::One => "one",
    }
}

fn per_gap_parse(s: &str) -> Result<PerGap> {
    match s {
        "all" => Ok(PerGap::All),
        "one" => Ok(PerGap::One),
        other => Err(CoreError::Config(format!("unknown per-gap mode {other:?}"))),
    }
}

/// Frozen-encoder features of one video, as a run variant sees it: the
/// retained (or, for the baseline, all) frame features in order, plus the
/// frozen features of restoration sites when supervision needs them.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub label: usize,
    pub retained: Vec<FeatureVec>,
    /// Frozen features of discarded frames, keyed by 1-based frame index.
    pub targets: BTreeMap<usize, FeatureVec>,
}

/// What the per-batch objective actually computes.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveFlags {
    pub use_restoration: bool,
    pub use_supervision: bool,
    pub beta: f64,
    pub paradigm: Paradigm,
}

impl ObjectiveFlags {
    pub fn for_variant(variant: Variant, beta: f64, paradigm: Paradigm) -> ObjectiveFlags {
        ObjectiveFlags {
            use_restoration: variant.uses_restoration(),
            use_supervision: variant.uses_supervision(),
            beta,
            paradigm,
        }
    }
}

/// Mean losses over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub head: f64,
    pub restoration: f64,
    pub total: f64,
}

/// Gradients for every trainable tensor, mean over the batch. The
/// restoration list is empty when the variant does not restore.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub ffres: Vec<Matrix>,
    pub heads: HeadGradients,
}

struct PerVideo {
    head: f64,
    restoration: f64,
    ffres_grads: Option<Vec<Matrix>>,
    head_grads: Option<HeadGradients>,
}

fn video_pass(
    ffres: &FFResParams,
    heads: &HeadParams,
    labels: &LabelSet,
    plan: Option<&PartitionPlan>,
    flags: &ObjectiveFlags,
    video: &VideoFeatures,
    want_grads: bool,
) -> Result<PerVideo> {
    let (seq, tape, rest_inputs) = if flags.use_restoration {
        let plan =
            plan.ok_or_else(|| CoreError::Config("restoration requires a sampling plan".into()))?;
        if video.retained.len() != plan.retained.len() {
            return Err(CoreError::shape(
                "video_pass",
                plan.retained.len(),
                video.retained.len(),
            ));
        }
        let position: BTreeMap<usize, usize> = plan
            .retained
            .iter()
            .enumerate()
            .map(|(i, &f)| (f, i))
            .collect();
        let mut inputs = Vec::with_capacity(plan.triples.len());
        for t in &plan.triples {
            let l = &video.retained[position[&t.left]];
            let r = &video.retained[position[&t.right]];
            inputs.push((l.clone(), r.clone(), t.lambda));
        }
        let (restored, tape) = restore_batch_traced(ffres, &inputs)?;
        let mut by_mid = BTreeMap::new();
        for (t, f) in plan.triples.iter().zip(&restored) {
            by_mid.insert(t.mid, f.clone());
        }
        let seq = interleave(plan, &video.retained, &by_mid)?;
        (seq, Some(tape), restored)
    } else {
        (video.retained.clone(), None, Vec::new())
    };

    let (head, _scores, head_grads) = head_loss(heads, labels, &seq, video.label, flags.paradigm)?;

    let mut restoration = 0.0;
    let mut rest_grads: Vec<FeatureVec> = Vec::new();
    if flags.use_supervision && tape.is_some() {
        let plan = plan.expect("supervision implies a plan");
        let n = plan.triples.len();
        for (t, predicted) in plan.triples.iter().zip(&rest_inputs) {
            let target = video.targets.get(&t.mid).ok_or_else(|| {
                CoreError::Data(format!(
                    "missing frozen target for frame {} needed by supervision",
                    t.mid
                ))
            })?;
            restoration += restoration_loss(predicted, target)? / n as f64;
            if want_grads {
                rest_grads.push(restoration_loss_grad(predicted, target)?);
            }
        }
    }

    let mut out = PerVideo {
        head,
        restoration,
        ffres_grads: None,
        head_grads: None,
    };
    if !want_grads {
        return Ok(out);
    }

    if let Some(tape) = &tape {
        let plan = plan.expect("restoration implies a plan");
        let n_seq = seq.len() as f64;
        let n_triples = plan.triples.len() as f64;
        let mut upstreams: Vec<FeatureVec> = plan
            .triples
            .iter()
            .map(|_| head_grads.pooled.iter().map(|g| g / n_seq).collect())
            .collect();
        if flags.use_supervision {
            for (up, rest) in upstreams.iter_mut().zip(&rest_grads) {
                for (u, g) in up.iter_mut().zip(rest) {
                    *u += flags.beta * g / n_triples;
                }
            }
        }
        out.ffres_grads = Some(backward(ffres, tape, &upstreams)?);
    }
    out.head_grads = Some(head_grads);
    Ok(out)
}

fn batch_pass(
    ffres: &FFResParams,
    heads: &HeadParams,
    labels: &LabelSet,
    plan: Option<&PartitionPlan>,
    flags: &ObjectiveFlags,
    batch: &[&VideoFeatures],
    want_grads: bool,
) -> Result<(BatchStats, Option<GradientSet>)> {
    if batch.is_empty() {
        return Err(CoreError::degenerate("batch_pass", "empty batch"));
    }
    let per_video: Vec<Result<PerVideo>> = par_map(batch, |v| {
        video_pass(ffres, heads, labels, plan, flags, v, want_grads)
    });
    let inv = 1.0 / batch.len() as f64;
    let mut stats = BatchStats {
        head: 0.0,
        restoration: 0.0,
        total: 0.0,
    };
    let mut grads = want_grads.then(|| GradientSet {
        ffres: if flags.use_restoration {
            ffres
                .layers
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect()
        } else {
            Vec::new()
        },
        heads: HeadGradients::zeros(heads.width(), heads.num_labels()),
    });
    // sequential reduce in video order keeps the sum bit-reproducible
    for pv in per_video {
        let pv = pv?;
        stats.head += pv.head * inv;
        stats.restoration += pv.restoration * inv;
        if let Some(g) = &mut grads {
            if let Some(fg) = pv.ffres_grads {
                for (acc, one) in g.ffres.iter_mut().zip(fg) {
                    acc.add_assign(&one)?;
                }
            }
            if let Some(hg) = pv.head_grads {
                g.heads.add_assign(&hg)?;
            }
        }
    }
    stats.total = stats.head + flags.beta * stats.restoration;
    if let Some(g) = &mut grads {
        for m in g.ffres.iter_mut() {
            m.scale_in_place(inv);
        }
        g.heads.scale(inv);
    }
    Ok((stats, grads))
}

/// Mean batch losses without gradients.
pub fn batch_objective(
    ffres: &FFResParams,
    heads: &HeadParams,
    labels: &LabelSet,
    plan: Option<&PartitionPlan>,
    flags: &ObjectiveFlags,
    batch: &[&VideoFeatures],
) -> Result<BatchStats> {
    Ok(batch_pass(ffres, heads, labels, plan, flags, batch, false)?.0)
}

/// Mean batch losses plus gradients for every trainable tensor.
pub fn batch_gradients(
    ffres: &FFResParams,
    heads: &HeadParams,
    labels: &LabelSet,
    plan: Option<&PartitionPlan>,
    flags: &ObjectiveFlags,
    batch: &[&VideoFeatures],
) -> Result<(BatchStats, GradientSet)> {
    let (stats, grads) = batch_pass(ffres, heads, labels, plan, flags, batch, true)?;
    Ok((stats, grads.expect("gradients requested")))
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

fn check_corpus(cfg_frames: usize, corpus: &Corpus) -> Result<()> {
    corpus.validate()?;
    if corpus.frames != cfg_frames {
        return Err(CoreError::Config(format!(
            "corpus has {} frames per video but the run expects {}",
            corpus.frames, cfg_frames
        )));
    }
    Ok(())
}

/// Encode a corpus once: retained frames per the plan (all frames when the
/// plan is absent), plus frozen targets at restoration sites when asked.
/// Every `encode` call bumps `calls`.
pub fn extract_features(
    enc: &FrozenWeights,
    corpus: &Corpus,
    plan: Option<&PartitionPlan>,
    with_targets: bool,
    calls: &AtomicU64,
) -> Result<Vec<VideoFeatures>> {
    let indices: Vec<usize> = (0..corpus.len()).collect();
    let out: Vec<Result<VideoFeatures>> = par_map(&indices, |&vi| {
        let video = &corpus.videos[vi];
        let mut retained = Vec::new();
        match plan {
            Some(p) => {
                for &f in &p.retained {
                    calls.fetch_add(1, Ordering::Relaxed);
                    retained.push(encode(enc, &corpus.frame(vi, f - 1)?)?);
                }
            }
            None => {
                for t in 0..corpus.frames {
                    calls.fetch_add(1, Ordering::Relaxed);
                    retained.push(encode(enc, &corpus.frame(vi, t)?)?);
                }
            }
        }
        let mut targets = BTreeMap::new();
        if with_targets {
            let p = plan.ok_or_else(|| {
                CoreError::Config("supervision targets require a sampling plan".into())
            })?;
            for t in &p.triples {
                calls.fetch_add(1, Ordering::Relaxed);
                targets.insert(t.mid, encode(enc, &corpus.frame(vi, t.mid - 1)?)?);
            }
        }
        Ok(VideoFeatures {
            label: video.label,
            retained,
            targets,
        })
    });
    out.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Build the label set for a run: corpus captions normally, template captions
/// for the no-augment variant. The embedding seed is derived from the run
/// seed so label space and parameter init are decoupled.
pub fn build_labels(
    corpus: &Corpus,
    variant: Variant,
    width: usize,
    seed: u64,
) -> Result<LabelSet> {
    let template = CaptionProvider::default();
    let pairs: Vec<(String, String)> = corpus
        .labels
        .iter()
        .map(|l| {
            let caption = if variant == Variant::SllmNoAugment {
                template.caption(&l.name)?
            } else {
                Ok::<_, CoreError>(l.caption.clone())?
            };
            Ok((l.name.clone(), caption))
        })
        .collect::<Result<Vec<_>>>()?;
    LabelSet::build(&pairs, width, seed ^ LABEL_SEED_SALT)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Measured outcome of one evaluation pass.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub videos: usize,
    pub top1: f64,
    pub top5: f64,
    pub encoder_calls: u64,
    pub seconds: f64,
    /// Mean cosine between restored and frozen features, when probed.
    pub mean_restored_cosine: Option<f64>,
}

/// Run inference over a corpus: encode what the plan retains, restore the
/// rest, score. The timed pass never touches discarded frames; the optional
/// probe re-runs untimed with frozen features of restoration sites to measure
/// restoration quality.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    enc: &FrozenWeights,
    ffres: &FFResParams,
    heads: &HeadParams,
    labels: &LabelSet,
    plan: Option<&PartitionPlan>,
    variant: Variant,
    paradigm: Paradigm,
    corpus: &Corpus,
    probe: bool,
) -> Result<EvalOutcome> {
    check_corpus(corpus.frames, corpus)?;
    if corpus.labels.len() != labels.len() {
        return Err(CoreError::Consistency(format!(
            "corpus has {} labels but the model scores {}",
            corpus.labels.len(),
            labels.len()
        )));
    }
    let use_plan = variant.uses_sampling().then_some(plan).flatten();
    if variant.uses_sampling() && use_plan.is_none() {
        return Err(CoreError::Config("variant needs a sampling plan".into()));
    }
    let calls = AtomicU64::new(0);
    let start = Instant::now();
    let feats = extract_features(enc, corpus, use_plan, false, &calls)?;
    let ranks: Vec<Result<usize>> = par_map(&feats, |vf| {
        let seq = if variant.uses_restoration() {
            let plan = use_plan.expect("restoration implies a plan");
            let position: BTreeMap<usize, usize> = plan
                .retained
                .iter()
                .enumerate()
                .map(|(i, &f)| (f, i))
                .collect();
            let mut by_mid = BTreeMap::new();
            for t in &plan.triples {
                let l = &vf.retained[position[&t.left]];
                let r = &vf.retained[position[&t.right]];
                by_mid.insert(t.mid, crate::ffres::restore(ffres, l, r, t.lambda)?);
            }
            interleave(plan, &vf.retained, &by_mid)?
        } else {
            vf.retained.clone()
        };
        let scores = predict_scores(heads, labels, &seq, paradigm)?;
        rank_of(&scores, vf.label)
    });
    let seconds = start.elapsed().as_secs_f64();
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    let n = feats.len();
    for r in ranks {
        let r = r?;
        if r == 0 {
            top1 += 1;
        }
        if r < 5 {
            top5 += 1;
        }
    }

    // The probe reuses the already-encoded retained features and encodes
    // only the restoration sites, so the call counter lands exactly on
    // retained + restored per video. It runs outside the timed window.
    let mean_restored_cosine = if probe && variant.uses_restoration() {
        let plan = use_plan.expect("restoration implies a plan");
        if plan.triples.is_empty() {
            None
        } else {
            let indices: Vec<usize> = (0..feats.len()).collect();
            let sums: Vec<Result<(f64, usize)>> = par_map(&indices, |&vi| {
                let vf = &feats[vi];
                let position: BTreeMap<usize, usize> = plan
                    .retained
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| (f, i))
                    .collect();
                let mut acc = 0.0;
                for t in &plan.triples {
                    let l = &vf.retained[position[&t.left]];
                    let r = &vf.retained[position[&t.right]];
                    let restored = crate::ffres::restore(ffres, l, r, t.lambda)?;
                    calls.fetch_add(1, Ordering::Relaxed);
                    let target = encode(enc, &corpus.frame(vi, t.mid - 1)?)?;
                    acc += cosine(&restored, &target)?;
                }
                Ok((acc, plan.triples.len()))
            });
            let mut total = 0.0;
            let mut count = 0usize;
            for s in sums {
                let (a, c) = s?;
                total += a;
                count += c;
            }
            Some(total / count as f64)
        }
    } else {
        None
    };

    Ok(EvalOutcome {
        videos: n,
        top1: top1 as f64 / n as f64,
        top5: top5 as f64 / n as f64,
        encoder_calls: calls.load(Ordering::Relaxed),
        seconds,
        mean_restored_cosine,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub head: f64,
    pub restoration: f64,
    pub total: f64,
}

/// Everything one run reports. Timing fields (`wall_seconds`,
/// `train_throughput`, `infer_throughput`) vary between runs; every other
/// field is deterministic for a fixed config and seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub variant: String,
    pub paradigm: String,
    pub seed: u64,
    pub frames: usize,
    pub filter: usize,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub train_videos: usize,
    pub eval_videos: usize,
    pub top1: f64,
    pub top5: f64,
    pub mean_restored_cosine: Option<f64>,
    pub epoch_losses: Vec<EpochLoss>,
    /// Trained videos per second over the whole training phase, when one ran.
    pub train_throughput: Option<f64>,
    /// Evaluated videos per second in the timed inference pass.
    pub infer_throughput: f64,
    pub encoder_calls_total: u64,
    pub encoder_calls_per_video: f64,
    pub cost: CostReport,
    pub config_echo: serde_json::Value,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        s.push('\n');
        s
    }
}

/// Accuracy and efficiency deltas between two evaluated runs, in the
/// direction `candidate - reference`.
pub fn delta_metrics(candidate: &RunReport, reference: &RunReport) -> Result<serde_json::Value> {
    if reference.infer_throughput.is_nan() || reference.infer_throughput <= 0.0 {
        return Err(CoreError::degenerate(
            "delta_metrics",
            "reference throughput is not positive",
        ));
    }
    Ok(serde_json::json!({
        "d_acc": candidate.top1 - reference.top1,
        "d_efficiency":
            (candidate.infer_throughput - reference.infer_throughput)
                / reference.infer_throughput,
        "candidate": candidate.variant,
        "reference": reference.variant,
    }))
}

fn cost_for(cfg_like: &CkptMeta, height: usize, width: usize) -> Result<CostReport> {
    let enc_cfg = cfg_like.encoder_config();
    let spec = EncoderCostSpec::from_encoder(&enc_cfg, height, width)?;
    let variant = Variant::parse(&cfg_like.variant)?;
    let mode = if variant.uses_sampling() {
        CostMode::SllmInfer
    } else {
        CostMode::Baseline
    };
    // the analytic model prices the standard pipeline of this mode; the
    // no-restoration ablation differs only by the (tiny) restoration term
    pipeline_cost(
        &spec,
        cfg_like.ffres_depth,
        cfg_like.frames,
        cfg_like.filter.max(2),
        mode,
    )
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Run identity stored in a checkpoint — enough to rebuild the frozen
/// encoder, the sampling plan, and the variant wiring for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkptMeta {
    pub schema_version: u32,
    pub enc_patch: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub enc_out: usize,
    pub enc_seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub filter: usize,
    pub variant: String,
    pub paradigm: String,
    pub beta: f64,
    pub ffres_depth: usize,
    pub seed: u64,
    pub per_gap: String,
    pub logit_scale: f64,
}

impl CkptMeta {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            patch: self.enc_patch,
            hidden: self.enc_hidden,
            layers: self.enc_layers,
            heads: self.enc_heads,
            out: self.enc_out,
            seed: self.enc_seed,
        }
    }
}

/// A trained model: run identity, restoration parameters, head parameters,
/// and the label set it scores against.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CkptMeta,
    pub ffres: FFResParams,
    pub heads: HeadParams,
    pub labels: LabelSet,
}

const CKPT_MAGIC: &[u8; 4] = b"SLCK";
const CKPT_VERSION: u8 = 1;

fn push_block(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn push_string16(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    if s.len() > u16::MAX as usize {
        return Err(CoreError::Format(format!(
            "string of {} bytes too long",
            s.len()
        )));
    }
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn checkpoint_to_bytes(c: &Checkpoint) -> Result<Vec<u8>> {
    c.heads.validate()?;
    let e = c.heads.width();
    if c.ffres.width != e || c.labels.width() != e {
        return Err(CoreError::Consistency(format!(
            "checkpoint widths disagree: restoration {}, heads {e}, labels {}",
            c.ffres.width,
            c.labels.width()
        )));
    }
    if c.labels.len() != c.heads.num_labels() {
        return Err(CoreError::Consistency(format!(
            "checkpoint has {} labels but heads score {}",
            c.labels.len(),
            c.heads.num_labels()
        )));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.push(CKPT_VERSION);
    let meta = serde_json::to_vec(&c.meta)
        .map_err(|e| CoreError::Format(format!("meta serialization failed: {e}")))?;
    push_block(&mut buf, &meta);
    push_block(&mut buf, &crate::ffres::save_params_bytes(&c.ffres));
    let mut heads = Vec::new();
    heads.extend_from_slice(&(e as u32).to_le_bytes());
    heads.extend_from_slice(&(c.heads.num_labels() as u32).to_le_bytes());
    heads.extend_from_slice(&c.heads.logit_scale.to_le_bytes());
    for m in [&c.heads.w_vid, &c.heads.w_txt, &c.heads.w_cls] {
        for v in m.data() {
            heads.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in &c.heads.bias {
        heads.extend_from_slice(&v.to_le_bytes());
    }
    push_block(&mut buf, &heads);
    let mut labels = Vec::new();
    labels.extend_from_slice(&(c.labels.len() as u32).to_le_bytes());
    for entry in c.labels.entries() {
        push_string16(&mut labels, &entry.name)?;
        push_string16(&mut labels, &entry.caption)?;
        for v in &entry.embedding {
            labels.extend_from_slice(&v.to_le_bytes());
        }
    }
    push_block(&mut buf, &labels);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    use crate::encoder::ByteReader;
    if bytes.len() < 4 {
        return Err(CoreError::Format("checkpoint truncated".into()));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CoreError::Format(format!(
            "checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    let mut r = ByteReader::new(payload);
    if r.take(4)? != CKPT_MAGIC {
        return Err(CoreError::Format("bad checkpoint magic".into()));
    }
    let version = r.u8()?;
    if version != CKPT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let block = |r: &mut ByteReader| -> Result<Vec<u8>> {
        let len = r.u32()? as usize;
        Ok(r.take(len)?.to_vec())
    };
    let meta: CkptMeta = serde_json::from_slice(&block(&mut r)?)
        .map_err(|e| CoreError::Format(format!("bad checkpoint meta: {e}")))?;
    if meta.schema_version != REPORT_SCHEMA {
        return Err(CoreError::Format(format!(
            "unsupported checkpoint schema {}",
            meta.schema_version
        )));
    }
    let ffres = crate::ffres::load_params_bytes(&block(&mut r)?)?;
    let head_bytes = block(&mut r)?;
    let mut hr = ByteReader::new(&head_bytes);
    let e = hr.u32()? as usize;
    let m = hr.u32()? as usize;
    if e == 0 || m == 0 || e > 1 << 20 || m > 1 << 20 {
        return Err(CoreError::Format(format!("implausible head dims {e}x{m}")));
    }
    let logit_scale = hr.f64()?;
    let read_matrix = |hr: &mut ByteReader, rows: usize, cols: usize| -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(hr.f64()?);
        }
        Matrix::from_vec(rows, cols, data)
    };
    let w_vid = read_matrix(&mut hr, e, e)?;
    let w_txt = read_matrix(&mut hr, e, e)?;
    let w_cls = read_matrix(&mut hr, e, m)?;
    let mut bias = Vec::with_capacity(m);
    for _ in 0..m {
        bias.push(hr.f64()?);
    }
    if hr.remaining() != 0 {
        return Err(CoreError::Format("trailing bytes in head block".into()));
    }
    let heads = HeadParams {
        w_vid,
        w_txt,
        logit_scale,
        w_cls,
        bias,
    };
    heads.validate()?;
    let label_bytes = block(&mut r)?;
    let mut lr = ByteReader::new(&label_bytes);
    let count = lr.u32()? as usize;
    if count != m {
        return Err(CoreError::Format(format!(
            "label block has {count} entries but heads score {m}"
        )));
    }
    let read_string = |lr: &mut ByteReader| -> Result<String> {
        let len = lr.u16()? as usize;
        String::from_utf8(lr.take(len)?.to_vec())
            .map_err(|_| CoreError::Format("label table is not UTF-8".into()))
    };
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut lr)?;
        let caption = read_string(&mut lr)?;
        let mut embedding = Vec::with_capacity(e);
        for _ in 0..e {
            embedding.push(lr.f64()?);
        }
        entries.push(LabelEntry {
            name,
            caption,
            embedding,
        });
    }
    if lr.remaining() != 0 {
        return Err(CoreError::Format("trailing bytes in label block".into()));
    }
    if r.remaining() != 0 {
        return Err(CoreError::Format(
            "trailing bytes after checkpoint payload".into(),
        ));
    }
    let labels = LabelSet::from_entries(entries, e)?;
    if ffres.width != e {
        return Err(CoreError::Consistency(format!(
            "checkpoint widths disagree: restoration {}, heads {e}",
            ffres.width
        )));
    }
    Ok(Checkpoint {
        meta,
        ffres,
        heads,
        labels,
    })
}

pub fn write_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(c)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn label_names_match(corpus: &Corpus, labels: &LabelSet) -> Result<()> {
    if corpus.labels.len() != labels.len() {
        return Err(CoreError::Consistency(format!(
            "corpus has {} labels but the model scores {}",
            corpus.labels.len(),
            labels.len()
        )));
    }
    for (c, e) in corpus.labels.iter().zip(labels.entries()) {
        if c.name != e.name {
            return Err(CoreError::Consistency(format!(
                "label order mismatch: corpus {:?} vs model {:?}",
                c.name, e.name
            )));
        }
    }
    Ok(())
}

/// Train the restoration stack and head on `train`, then evaluate on `test`.
/// Fully deterministic for a fixed config and seed, apart from the reported
/// wall-clock timings.
pub fn run_train(
    cfg: &RunConfig,
    train: &Corpus,
    test: &Corpus,
) -> Result<(RunReport, Checkpoint)> {
    cfg.validate()?;
    check_corpus(cfg.frames, train)?;
    check_corpus(cfg.frames, test)?;
    if train.height != test.height || train.width != test.width {
        return Err(CoreError::Consistency(format!(
            "train grid {}x{} does not match test grid {}x{}",
            train.height, train.width, test.height, test.width
        )));
    }
    if train.labels != test.labels {
        return Err(CoreError::Consistency(
            "train and test corpora disagree on the label table".into(),
        ));
    }
    let started = Instant::now();
    let enc = build_encoder(&cfg.encoder)?;
    let flags = ObjectiveFlags::for_variant(cfg.variant, cfg.beta, cfg.paradigm);
    let plan = if cfg.variant.uses_sampling() {
        Some(make_plan_limited(cfg.frames, cfg.filter, cfg.per_gap)?)
    } else {
        None
    };
    let width = cfg.encoder.out;
    let labels = build_labels(train, cfg.variant, width, cfg.seed)?;
    label_names_match(train, &labels)?;

    let train_start = Instant::now();
    let train_calls = AtomicU64::new(0);
    let feats = extract_features(
        &enc,
        train,
        plan.as_ref(),
        flags.use_supervision,
        &train_calls,
    )?;

    let mut ffres = init_ffres(width, cfg.ffres_depth, cfg.seed)?;
    let mut heads = init_heads(width, labels.len(), cfg.seed)?;
    heads.logit_scale = cfg.logit_scale;

    let train_ffres = flags.use_restoration;
    let mut sizes: Vec<usize> = Vec::new();
    if train_ffres {
        sizes.extend(ffres.layers.iter().map(|m| m.len()));
    }
    sizes.push(heads.w_vid.len());
    match cfg.paradigm {
        Paradigm::Matching => sizes.push(heads.w_txt.len()),
        Paradigm::Classification => {
            sizes.push(heads.w_cls.len());
            sizes.push(heads.bias.len());
        }
    }
    let mut opt = AdamState::new(&sizes);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..feats.len()).collect();
        let mut rng = SeqRng::new(cfg.seed, EPOCH_SHUFFLE_STREAM + epoch as u64);
        rng.shuffle(&mut order);
        let mut sum = EpochLoss {
            head: 0.0,
            restoration: 0.0,
            total: 0.0,
        };
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&VideoFeatures> = chunk.iter().map(|&i| &feats[i]).collect();
            let (stats, grads) =
                batch_gradients(&ffres, &heads, &labels, plan.as_ref(), &flags, &batch)?;
            let w = chunk.len() as f64 / feats.len() as f64;
            sum.head += stats.head * w;
            sum.restoration += stats.restoration * w;
            sum.total += stats.total * w;
            let mut params: Vec<&mut [f64]> = Vec::new();
            let mut gsl: Vec<&[f64]> = Vec::new();
            if train_ffres {
                for (p, g) in ffres.layers.iter_mut().zip(&grads.ffres) {
                    params.push(p.data_mut());
                    gsl.push(g.data());
                }
            }
            params.push(heads.w_vid.data_mut());
            gsl.push(grads.heads.w_vid.data());
            match cfg.paradigm {
                Paradigm::Matching => {
                    params.push(heads.w_txt.data_mut());
                    gsl.push(grads.heads.w_txt.data());
                }
                Paradigm::Classification => {
                    params.push(heads.w_cls.data_mut());
                    gsl.push(grads.heads.w_cls.data());
                    params.push(heads.bias.as_mut_slice());
                    gsl.push(grads.heads.bias.as_slice());
                }
            }
            adam_step(&mut opt, &mut params, &gsl, cfg.lr)?;
        }
        epoch_losses.push(sum);
    }
    let train_seconds = train_start.elapsed().as_secs_f64();

    let eval = evaluate(
        &enc,
        &ffres,
        &heads,
        &labels,
        plan.as_ref(),
        cfg.variant,
        cfg.paradigm,
        test,
        flags.use_restoration,
    )?;

    let meta = CkptMeta {
        schema_version: REPORT_SCHEMA,
        enc_patch: cfg.encoder.patch,
        enc_hidden: cfg.encoder.hidden,
        enc_layers: cfg.encoder.layers,
        enc_heads: cfg.encoder.heads,
        enc_out: cfg.encoder.out,
        enc_seed: cfg.encoder.seed,
        height: train.height,
        width: train.width,
        frames: cfg.frames,
        filter: cfg.filter,
        variant: cfg.variant.as_str().to_string(),
        paradigm: cfg.paradigm.as_str().to_string(),
        beta: cfg.beta,
        ffres_depth: cfg.ffres_depth,
        seed: cfg.seed,
        per_gap: per_gap_str(cfg.per_gap).to_string(),
        logit_scale: cfg.logit_scale,
    };
    let cost = cost_for(&meta, train.height, train.width)?;
    let report = RunReport {
        schema_version: REPORT_SCHEMA,
        variant: cfg.variant.as_str().to_string(),
        paradigm: cfg.paradigm.as_str().to_string(),
        seed: cfg.seed,
        frames: cfg.frames,
        filter: cfg.filter,
        beta: cfg.beta,
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch: cfg.batch,
        train_videos: train.len(),
        eval_videos: eval.videos,
        top1: eval.top1,
        top5: eval.top5,
        mean_restored_cosine: eval.mean_restored_cosine,
        epoch_losses,
        train_throughput: (cfg.epochs > 0 && train_seconds > 0.0)
            .then(|| (train.len() * cfg.epochs) as f64 / train_seconds),
        infer_throughput: eval.videos as f64 / eval.seconds.max(1e-9),
        encoder_calls_total: eval.encoder_calls,
        encoder_calls_per_video: eval.encoder_calls as f64 / eval.videos as f64,
        cost,
        config_echo: cfg.to_json(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let ckpt = Checkpoint {
        meta,
        ffres,
        heads,
        labels,
    };
    Ok((report, ckpt))
}

/// Evaluate a stored checkpoint on a corpus.
pub fn run_eval(ckpt: &Checkpoint, test: &Corpus, probe: bool) -> Result<RunReport> {
    let meta = &ckpt.meta;
    check_corpus(meta.frames, test)?;
    if test.height != meta.height || test.width != meta.width {
        return Err(CoreError::Consistency(format!(
            "corpus grid {}x{} does not match checkpoint grid {}x{}",
            test.height, test.width, meta.height, meta.width
        )));
    }
    label_names_match(test, &ckpt.labels)?;
    let variant = Variant::parse(&meta.variant)?;
    let paradigm = Paradigm::parse(&meta.paradigm)?;
    let per_gap = per_gap_parse(&meta.per_gap)?;
    let started = Instant::now();
    let enc = build_encoder(&meta.encoder_config())?;
    let plan = if variant.uses_sampling() {
        Some(make_plan_limited(meta.frames, meta.filter, per_gap)?)
    } else {
        None
    };
    let eval = evaluate(
        &enc,
        &ckpt.ffres,
        &ckpt.heads,
        &ckpt.labels,
        plan.as_ref(),
        variant,
        paradigm,
        test,
        probe,
    )?;
    let cost = cost_for(meta, test.height, test.width)?;
    Ok(RunReport {
        schema_version: REPORT_SCHEMA,
        variant: meta.variant.clone(),
        paradigm: meta.paradigm.clone(),
        seed: meta.seed,
        frames: meta.frames,
        filter: meta.filter,
        beta: meta.beta,
        epochs: 0,
        lr: 0.0,
        batch: 0,
        train_videos: 0,
        eval_videos: eval.videos,
        top1: eval.top1,
        top5: eval.top5,
        mean_restored_cosine: eval.mean_restored_cosine,
        epoch_losses: Vec::new(),
        train_throughput: None,
        infer_throughput: eval.videos as f64 / eval.seconds.max(1e-9),
        encoder_calls_total: eval.encoder_calls,
        encoder_calls_per_video: eval.encoder_calls as f64 / eval.videos as f64,
        cost,
        config_echo: serde_json::json!({"checkpoint": true}),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Median wall time of `f` in seconds over `reps` timed repetitions after
/// `warmup` untimed ones.
pub fn time_median(mut f: impl FnMut() -> Result<()>, warmup: usize, reps: usize) -> Result<f64> {
    if reps == 0 {
        return Err(CoreError::Config(
            "need at least one timed repetition".into(),
        ));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("times are finite"));
    Ok(times[times.len() / 2])
}
