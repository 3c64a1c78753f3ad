//! Recognition heads over an interleaved feature sequence.
//!
//! Two paradigms share the same pooled video feature (arithmetic mean of the
//! sequence, projected by `W_vid`, L2-normalized):
//!
//! * **Matching**: score each action label by scaled cosine between the video
//!   feature and the projected label embedding `W_txt * s_k`; train with
//!   softmax cross-entropy over the scores (contrastive pull toward the true
//!   label).
//! * **Classification**: a linear layer `W_cls^T v + bias` with softmax
//!   cross-entropy.
//!
//! Label embeddings come from a deterministic bag-of-tokens hash: each token
//! of the caption maps to a seeded Gaussian direction, tokens are averaged and
//! the result normalized. This stands in for a frozen text encoder: it is
//! fixed, caption-sensitive, and never trained.

use crate::error::{CoreError, Result};
use crate::numerics::{
    cosine, dot, l2_normalize, l2_normalize_backward, mean_rows, outer, softmax_vec, FeatureVec,
    Matrix,
};
use crate::rng::{fnv1a, CounterRng};

pub const DEFAULT_LOGIT_SCALE: f64 = 10.0;
pub const HEAD_INIT_STD: f64 = 0.02;

/// Which recognition head is in use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paradigm {
    Matching,
    Classification,
}

impl Paradigm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Paradigm::Matching => "matching",
            Paradigm::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "matching" => Ok(Paradigm::Matching),
            "classification" => Ok(Paradigm::Classification),
            other => Err(CoreError::Config(format!(
                "unknown paradigm {other:?} (expected matching|classification)"
            ))),
        }
    }
}

/// One action label: name, caption text, and its fixed embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEntry {
    pub name: String,
    pub caption: String,
    pub embedding: FeatureVec,
}

/// The fixed set of M actions with L2-normalized embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    entries: Vec<LabelEntry>,
    width: usize,
}

impl LabelSet {
    /// Embed `(name, caption)` pairs. Names must be unique, M >= 2.
    pub fn build(pairs: &[(String, String)], width: usize, seed: u64) -> Result<LabelSet> {
        let entries = pairs
            .iter()
            .map(|(name, caption)| {
                Ok(LabelEntry {
                    name: name.clone(),
                    caption: caption.clone(),
                    embedding: embed_label(name, caption, width, seed)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LabelSet::from_entries(entries, width)
    }

    /// Assemble from pre-embedded entries (checkpoint load path); validates
    /// the set invariants.
    pub fn from_entries(entries: Vec<LabelEntry>, width: usize) -> Result<LabelSet> {
        if entries.len() < 2 {
            return Err(CoreError::Config(format!(
                "label set needs at least 2 entries, got {}",
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.len() != width {
                return Err(CoreError::shape("label_set", width, e.embedding.len()));
            }
            let n = crate::numerics::norm(&e.embedding);
            if (n - 1.0).abs() > 1e-9 {
                return Err(CoreError::Consistency(format!(
                    "label {:?} embedding norm {n} is not 1",
                    e.name
                )));
            }
            if entries[..i].iter().any(|p| p.name == e.name) {
                return Err(CoreError::Config(format!(
                    "duplicate label name {:?}",
                    e.name
                )));
            }
        }
        Ok(LabelSet { entries, width })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> &LabelEntry {
        &self.entries[k]
    }

    /// Stacked M x E embedding matrix.
    pub fn matrix(&self) -> Matrix {
        Matrix::from_fn(self.entries.len(), self.width, |r, c| {
            self.entries[r].embedding[c]
        })
    }
}

/// Deterministic caption embedding: lowercase, split on non-alphanumerics,
/// hash each token to a seeded Gaussian direction, average the bag, normalize.
/// Token accumulation runs in sorted-hash order, so the result is independent
/// of token order (bag-of-tokens, duplicates counted).
pub fn embed_label(name: &str, caption: &str, width: usize, seed: u64) -> Result<FeatureVec> {
    if width == 0 {
        return Err(CoreError::Config("embedding width must be nonzero".into()));
    }
    let lower = caption.to_lowercase();
    let mut streams: Vec<u64> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| fnv1a(t.as_bytes()))
        .collect();
    if streams.is_empty() {
        return Err(CoreError::Data(format!(
            "caption for label {name:?} has no tokens"
        )));
    }
    streams.sort_unstable();
    let mut acc = vec![0.0; width];
    for &stream in &streams {
        let rng = CounterRng::new(seed, stream);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += rng.normal(i as u64);
        }
    }
    let inv = 1.0 / streams.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    l2_normalize(&acc)
}

/// Trainable head parameters for both paradigms.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// E x E projection applied to the pooled video feature.
    pub w_vid: Matrix,
    /// E x E projection applied to label embeddings (matching paradigm).
    pub w_txt: Matrix,
    /// Fixed positive scale on cosine scores.
    pub logit_scale: f64,
    /// E x M linear classifier (classification paradigm).
    pub w_cls: Matrix,
    pub bias: FeatureVec,
}

/// Projections start at identity plus small noise; the classifier starts near
/// zero so untrained logits are near-uniform.
pub fn init_heads(width: usize, num_labels: usize, seed: u64) -> Result<HeadParams> {
    if width == 0 || num_labels == 0 {
        return Err(CoreError::Config("head dimensions must be nonzero".into()));
    }
    let noisy_identity = |stream: u64| {
        let rng = CounterRng::new(seed, stream);
        Matrix::from_fn(width, width, |r, c| {
            let base = if r == c { 1.0 } else { 0.0 };
            base + rng.normal((r * width + c) as u64) * HEAD_INIT_STD
        })
    };
    let cls_rng = CounterRng::new(seed, 0x4845_0003);
    Ok(HeadParams {
        w_vid: noisy_identity(0x4845_0001),
        w_txt: noisy_identity(0x4845_0002),
        logit_scale: DEFAULT_LOGIT_SCALE,
        w_cls: Matrix::from_fn(width, num_labels, |r, c| {
            cls_rng.normal((r * num_labels + c) as u64) * HEAD_INIT_STD
        }),
        bias: vec![0.0; num_labels],
    })
}

impl HeadParams {
    pub fn validate(&self) -> Result<()> {
        let e = self.w_vid.rows();
        if self.w_vid.cols() != e || self.w_txt.rows() != e || self.w_txt.cols() != e {
            return Err(CoreError::shape("head_params", e, self.w_txt.rows()));
        }
        if self.w_cls.rows() != e || self.w_cls.cols() != self.bias.len() {
            return Err(CoreError::shape("head_params", e, self.w_cls.rows()));
        }
        if self.logit_scale.is_nan() || self.logit_scale <= 0.0 {
            return Err(CoreError::Config(format!(
                "logit scale must be positive, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.w_vid.rows()
    }

    pub fn num_labels(&self) -> usize {
        self.bias.len()
    }
}

/// Gradients for every trainable head tensor, plus the gradient with respect
/// to the pooled (pre-projection) mean feature — the hook through which loss
/// flows back into restored features.
#[derive(Clone, Debug)]
pub struct HeadGradients {
    pub w_vid: Matrix,
    pub w_txt: Matrix,
    pub w_cls: Matrix,
    pub bias: FeatureVec,
    pub pooled: FeatureVec,
}

impl HeadGradients {
    pub fn zeros(width: usize, num_labels: usize) -> Self {
        HeadGradients {
            w_vid: Matrix::zeros(width, width),
            w_txt: Matrix::zeros(width, width),
            w_cls: Matrix::zeros(width, num_labels),
            bias: vec![0.0; num_labels],
            pooled: vec![0.0; width],
        }
    }

    pub fn add_assign(&mut self, other: &HeadGradients) -> Result<()> {
        self.w_vid.add_assign(&other.w_vid)?;
        self.w_txt.add_assign(&other.w_txt)?;
        self.w_cls.add_assign(&other.w_cls)?;
        if self.bias.len() != other.bias.len() || self.pooled.len() != other.pooled.len() {
            return Err(CoreError::shape(
                "head_grads",
                self.bias.len(),
                other.bias.len(),
            ));
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        for (a, b) in self.pooled.iter_mut().zip(&other.pooled) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.w_vid.scale_in_place(s);
        self.w_txt.scale_in_place(s);
        self.w_cls.scale_in_place(s);
        for a in &mut self.bias {
            *a *= s;
        }
        for a in &mut self.pooled {
            *a *= s;
        }
    }
}

/// Pool a feature sequence into one normalized video vector:
/// mean over the sequence, `W_vid` projection, L2 normalization.
pub fn video_feature(heads: &HeadParams, features: &[FeatureVec]) -> Result<FeatureVec> {
    if features.is_empty() {
        return Err(CoreError::degenerate(
            "video_feature",
            "empty feature sequence",
        ));
    }
    let mean = mean_rows(features)?;
    let projected = heads.w_vid.matvec(&mean)?;
    l2_normalize(&projected)
}

/// Similarity scores against every label: `logit_scale * cosine(v, W_txt s_k)`.
pub fn match_scores(v: &[f64], labels: &LabelSet, heads: &HeadParams) -> Result<Vec<f64>> {
    labels
        .entries()
        .iter()
        .map(|e| {
            let projected = heads.w_txt.matvec(&e.embedding)?;
            Ok(heads.logit_scale * cosine(v, &projected)?)
        })
        .collect()
}

/// Linear classifier logits `W_cls^T v + bias`.
pub fn classify_logits(v: &[f64], heads: &HeadParams) -> Result<Vec<f64>> {
    let mut logits = heads.w_cls.matvec_transpose(v)?;
    for (l, b) in logits.iter_mut().zip(&heads.bias) {
        *l += b;
    }
    Ok(logits)
}

/// Softmax cross-entropy `-log softmax(scores)[true_index]` with its exact
/// gradient `softmax(scores) - onehot(true_index)`.
///
/// When the true score is the maximum the loss is computed through `ln_1p`,
/// so uniform scores give exactly `ln M` and a dominant true score
/// underflows gracefully to 0 instead of losing precision.
pub fn contrastive_loss(scores: &[f64], true_index: usize) -> Result<(f64, FeatureVec)> {
    let m = scores.len();
    if m < 2 {
        return Err(CoreError::Config(format!(
            "need at least 2 scores, got {m}"
        )));
    }
    if true_index >= m {
        return Err(CoreError::Config(format!(
            "true index {true_index} out of range for {m} scores"
        )));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s_true = scores[true_index];
    let loss = if s_true == max {
        // ln(sum_k exp(s_k - s_true)) = ln(1 + sum_{k != true} exp(s_k - s_true))
        let rest: f64 = scores
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != true_index)
            .map(|(_, &s)| (s - s_true).exp())
            .sum();
        rest.ln_1p()
    } else {
        let sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
        max + sum.ln() - s_true
    };
    let mut grad = softmax_vec(scores);
    grad[true_index] -= 1.0;
    Ok((loss, grad))
}

/// Cross-entropy for the classification head over `W_cls^T v + bias`.
/// Returns the loss and its gradient with respect to the logits.
pub fn classify_loss(
    v: &[f64],
    true_index: usize,
    heads: &HeadParams,
) -> Result<(f64, FeatureVec)> {
    let logits = classify_logits(v, heads)?;
    contrastive_loss(&logits, true_index)
}

/// Full forward + backward for one video: pooled feature, paradigm head,
/// cross-entropy against the true label. Returns `(loss, scores, gradients)`;
/// `gradients.pooled` is dLoss/d(mean feature).
pub fn head_loss(
    heads: &HeadParams,
    labels: &LabelSet,
    features: &[FeatureVec],
    true_index: usize,
    paradigm: Paradigm,
) -> Result<(f64, Vec<f64>, HeadGradients)> {
    heads.validate()?;
    let width = heads.width();
    let m = labels.len();
    if true_index >= m {
        return Err(CoreError::Config(format!(
            "label index {true_index} out of range for {m} labels"
        )));
    }
    let mean = mean_rows(features)?;
    if mean.len() != width {
        return Err(CoreError::shape("head_loss", width, mean.len()));
    }
    let projected = heads.w_vid.matvec(&mean)?;
    let v = l2_normalize(&projected)?;
    let mut grads = HeadGradients::zeros(width, heads.num_labels());

    let (loss, scores, d_v) = match paradigm {
        Paradigm::Matching => {
            // score_k = scale * <v, n_k>, n_k = normalize(W_txt s_k)
            let mut projected_labels = Vec::with_capacity(m);
            let mut normalized_labels = Vec::with_capacity(m);
            let mut scores = Vec::with_capacity(m);
            for e in labels.entries() {
                let q = heads.w_txt.matvec(&e.embedding)?;
                let n = l2_normalize(&q)?;
                scores.push(heads.logit_scale * dot(&v, &n)?);
                projected_labels.push(q);
                normalized_labels.push(n);
            }
            let (loss, d_scores) = contrastive_loss(&scores, true_index)?;
            let mut d_v = vec![0.0; width];
            for (k, ds) in d_scores.iter().enumerate() {
                let coeff = heads.logit_scale * ds;
                for (dv, &n) in d_v.iter_mut().zip(&normalized_labels[k]) {
                    *dv += coeff * n;
                }
                let d_n: FeatureVec = v.iter().map(|&vi| coeff * vi).collect();
                let d_q = l2_normalize_backward(&projected_labels[k], &d_n)?;
                grads
                    .w_txt
                    .add_assign(&outer(&d_q, &labels.entry(k).embedding))?;
            }
            (loss, scores, d_v)
        }
        Paradigm::Classification => {
            let logits = classify_logits(&v, heads)?;
            let (loss, d_logits) = contrastive_loss(&logits, true_index)?;
            grads.w_cls.add_assign(&outer(&v, &d_logits))?;
            grads.bias.copy_from_slice(&d_logits);
            let d_v = heads.w_cls.matvec(&d_logits)?;
            (loss, logits, d_v)
        }
    };

    let d_projected = l2_normalize_backward(&projected, &d_v)?;
    grads.w_vid.add_assign(&outer(&d_projected, &mean))?;
    grads.pooled = heads.w_vid.matvec_transpose(&d_projected)?;
    Ok((loss, scores, grads))
}

/// Scores for prediction only (no gradients), per paradigm.
pub fn predict_scores(
    heads: &HeadParams,
    labels: &LabelSet,
    features: &[FeatureVec],
    paradigm: Paradigm,
) -> Result<Vec<f64>> {
    let v = video_feature(heads, features)?;
    match paradigm {
        Paradigm::Matching => match_scores(&v, labels, heads),
        Paradigm::Classification => classify_logits(&v, heads),
    }
}

/// Index of the best score.
pub fn argmax(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(CoreError::degenerate("argmax", "no scores"));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Rank of `index` in descending score order (0 = best). Ties ahead of
/// `index` count against it, so the rank is deterministic.
pub fn rank_of(scores: &[f64], index: usize) -> Result<usize> {
    if index >= scores.len() {
        return Err(CoreError::Config(format!(
            "index {index} out of range for {} scores",
            scores.len()
        )));
    }
    let target = scores[index];
    Ok(scores
        .iter()
        .enumerate()
        .filter(|(i, &s)| s > target || (s == target && *i < index))
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(width: usize, stream: u64) -> FeatureVec {
        let rng = CounterRng::new(8800, stream);
        (0..width).map(|i| rng.normal(i as u64)).collect()
    }

    fn identity(width: usize) -> Matrix {
        Matrix::from_fn(width, width, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    fn test_labels(m: usize, width: usize) -> LabelSet {
        let pairs: Vec<(String, String)> = (0..m)
            .map(|k| (format!("action-{k}"), format!("action number {k} motion")))
            .collect();
        LabelSet::build(&pairs, width, 99).unwrap()
    }

    fn identity_heads(width: usize, m: usize) -> HeadParams {
        HeadParams {
            w_vid: identity(width),
            w_txt: identity(width),
            logit_scale: DEFAULT_LOGIT_SCALE,
            w_cls: Matrix::zeros(width, m),
            bias: vec![0.0; m],
        }
    }

    #[test]
    fn video_feature_identity_projection_normalizes_single_input() {
        let heads = identity_heads(4, 2);
        let f = vec![vec![3.0, 0.0, 4.0, 0.0]];
        let v = video_feature(&heads, &f).unwrap();
        assert_eq!(v, vec![0.6, 0.0, 0.8, 0.0]);
        assert!(video_feature(&heads, &[]).is_err());
    }

    #[test]
    fn video_feature_is_permutation_invariant() {
        let heads = init_heads(8, 3, 4).unwrap();
        let feats: Vec<FeatureVec> = (0..15).map(|t| random_vec(8, t)).collect();
        let v1 = video_feature(&heads, &feats).unwrap();
        let mut reversed = feats.clone();
        reversed.reverse();
        let v2 = video_feature(&heads, &reversed).unwrap();
        for (a, b) in v1.iter().zip(&v2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn video_feature_matches_mean_then_project_oracle() {
        let heads = init_heads(8, 3, 5).unwrap();
        let feats: Vec<FeatureVec> = (0..7).map(|t| random_vec(8, 30 + t)).collect();
        let v = video_feature(&heads, &feats).unwrap();
        // oracle: explicit mean, explicit projection, explicit norm
        let mut mean = [0.0; 8];
        for f in &feats {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x / 7.0;
            }
        }
        let proj: Vec<f64> = (0..8)
            .map(|r| {
                mean.iter()
                    .enumerate()
                    .map(|(c, m)| heads.w_vid.at(r, c) * m)
                    .sum()
            })
            .collect();
        let n = proj.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..8 {
            assert!((v[i] - proj[i] / n).abs() < 1e-12, "component {i}");
        }
    }

    #[test]
    fn match_scores_pick_the_aligned_label() {
        let width = 4;
        // orthogonal unit embeddings
        let entries: Vec<LabelEntry> = (0..width)
            .map(|k| {
                let mut e = vec![0.0; width];
                e[k] = 1.0;
                LabelEntry {
                    name: format!("axis-{k}"),
                    caption: format!("axis {k}"),
                    embedding: e,
                }
            })
            .collect();
        let labels = LabelSet::from_entries(entries, width).unwrap();
        let heads = identity_heads(width, width);
        let v = vec![0.0, 1.0, 0.0, 0.0];
        let scores = match_scores(&v, &labels, &heads).unwrap();
        assert_eq!(argmax(&scores).unwrap(), 1);
        assert!((scores[1] - DEFAULT_LOGIT_SCALE).abs() < 1e-12);
        assert!(scores[0].abs() < 1e-12);
        // positive rescaling of the scale never changes the argmax
        let mut heads2 = heads.clone();
        heads2.logit_scale *= 7.5;
        let scores2 = match_scores(&v, &labels, &heads2).unwrap();
        assert_eq!(argmax(&scores2).unwrap(), 1);
    }

    #[test]
    fn match_scores_match_bruteforce_cosine_oracle() {
        let width = 8;
        let labels = test_labels(5, width);
        let heads = init_heads(width, 5, 6).unwrap();
        let v = l2_normalize(&random_vec(width, 70)).unwrap();
        let scores = match_scores(&v, &labels, &heads).unwrap();
        for (k, score) in scores.iter().enumerate() {
            let embedding = &labels.entry(k).embedding;
            let proj: Vec<f64> = (0..width)
                .map(|r| {
                    embedding
                        .iter()
                        .enumerate()
                        .map(|(c, e)| heads.w_txt.at(r, c) * e)
                        .sum()
                })
                .collect();
            let num: f64 = v.iter().zip(&proj).map(|(a, b)| a * b).sum();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let np = proj.iter().map(|x| x * x).sum::<f64>().sqrt();
            let want = heads.logit_scale * num / (nv * np);
            assert!((score - want).abs() < 1e-12, "label {k}");
        }
        // argmax is invariant to a common positive rescaling of all embeddings:
        // cosine removes magnitude, checked through a scaled projection
        let mut scaled = heads.clone();
        scaled.w_txt.scale_in_place(3.0);
        let scores_scaled = match_scores(&v, &labels, &scaled).unwrap();
        assert_eq!(argmax(&scores).unwrap(), argmax(&scores_scaled).unwrap());
        for (a, b) in scores.iter().zip(&scores_scaled) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn contrastive_loss_uniform_scores_equal_ln_m() {
        for &m in &[2usize, 8, 400] {
            let scores = vec![1.7; m];
            let (loss, grad) = contrastive_loss(&scores, m / 2).unwrap();
            assert!(
                (loss - (m as f64).ln()).abs() < 1e-12,
                "M={m}: {loss} vs {}",
                (m as f64).ln()
            );
            // gradient: 1/M everywhere except true index, which gets 1/M - 1
            for (k, g) in grad.iter().enumerate() {
                let want = if k == m / 2 {
                    1.0 / m as f64 - 1.0
                } else {
                    1.0 / m as f64
                };
                assert!((g - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contrastive_loss_saturates_to_zero() {
        let mut scores = vec![0.0; 8];
        scores[3] = 50.0;
        let (loss, _) = contrastive_loss(&scores, 3).unwrap();
        assert!(loss >= 0.0);
        assert!(loss <= 1e-20, "loss {loss} did not saturate");
    }

    #[test]
    fn contrastive_loss_rejects_bad_index() {
        assert!(contrastive_loss(&[1.0, 2.0], 2).is_err());
        assert!(contrastive_loss(&[1.0], 0).is_err());
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let eps = 1e-6;
        let scores = random_vec(6, 90);
        let (_, grad) = contrastive_loss(&scores, 2).unwrap();
        for i in 0..6 {
            let mut sp = scores.clone();
            sp[i] += eps;
            let mut sm = scores.clone();
            sm[i] -= eps;
            let num = (contrastive_loss(&sp, 2).unwrap().0 - contrastive_loss(&sm, 2).unwrap().0)
                / (2.0 * eps);
            let rel = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel <= 1e-6, "[{i}]: {} vs {num}", grad[i]);
        }
    }

    #[test]
    fn classify_uniform_and_dominant_cases() {
        let width = 8;
        let heads = identity_heads(width, 8); // zero classifier -> uniform logits
        let v = l2_normalize(&random_vec(width, 95)).unwrap();
        let (loss, _) = classify_loss(&v, 5, &heads).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);
        let mut dominant = heads.clone();
        dominant.bias[5] = 60.0;
        let (loss_dom, _) = classify_loss(&v, 5, &dominant).unwrap();
        assert!(loss_dom < 1e-12);
        assert!(classify_loss(&v, 8, &heads).is_err());
    }

    #[test]
    fn embed_label_deterministic_and_order_invariant() {
        let a = embed_label("x", "arm movements and claps", 32, 7).unwrap();
        let b = embed_label("x", "arm movements and claps", 32, 7).unwrap();
        assert_eq!(a, b);
        let c = embed_label("y", "claps and movements arm", 32, 7).unwrap();
        assert_eq!(a, c, "bag-of-tokens embedding must ignore order");
        assert!((crate::numerics::norm(&a) - 1.0).abs() < 1e-12);
        // case and punctuation fold into the same tokens
        let d = embed_label("x", "Arm, movements... AND claps!", 32, 7).unwrap();
        assert_eq!(a, d);
        // different seed, different embedding
        let e = embed_label("x", "arm movements and claps", 32, 8).unwrap();
        assert_ne!(a, e);
    }

    #[test]
    fn embed_label_rejects_empty_token_stream() {
        assert!(embed_label("x", "", 16, 1).is_err());
        assert!(embed_label("x", "...!!!", 16, 1).is_err());
        assert!(embed_label("x", "   ", 16, 1).is_err());
    }

    /// Disjoint-token captions decorrelate: at E=32, the mean |cosine| over
    /// 100 random disjoint pairs stays under 0.2. (Individual pairs can
    /// exceed it — a cosine of two random directions in 32 dimensions has
    /// standard deviation ~ 1/sqrt(32) — so the bound is on the mean.)
    #[test]
    fn disjoint_caption_embeddings_decorrelate_on_average() {
        let rng = CounterRng::new(4242, 0);
        let mut total = 0.0;
        for t in 0..100u64 {
            let cap_a: String = (0..4)
                .map(|i| format!("wa{}", rng.raw(t * 100 + i)))
                .collect::<Vec<_>>()
                .join(" ");
            let cap_b: String = (0..4)
                .map(|i| format!("xb{}", rng.raw(t * 100 + 50 + i)))
                .collect::<Vec<_>>()
                .join(" ");
            let ea = embed_label("a", &cap_a, 32, 5).unwrap();
            let eb = embed_label("b", &cap_b, 32, 5).unwrap();
            total += cosine(&ea, &eb).unwrap().abs();
        }
        let mean = total / 100.0;
        assert!(mean <= 0.2, "mean |cosine| {mean} over disjoint captions");
    }

    #[test]
    fn label_set_enforces_invariants() {
        let one = vec![("a".to_string(), "a caption".to_string())];
        assert!(LabelSet::build(&one, 8, 1).is_err());
        let dup = vec![
            ("a".to_string(), "first caption".to_string()),
            ("a".to_string(), "second caption".to_string()),
        ];
        assert!(LabelSet::build(&dup, 8, 1).is_err());
        let ok = test_labels(3, 8);
        assert_eq!(ok.len(), 3);
        assert_eq!(ok.matrix().rows(), 3);
        assert_eq!(ok.matrix().cols(), 8);
    }

    #[test]
    fn rank_and_argmax() {
        let scores = vec![0.3, 0.9, 0.1, 0.9];
        assert_eq!(argmax(&scores).unwrap(), 1);
        assert_eq!(rank_of(&scores, 1).unwrap(), 0);
        assert_eq!(rank_of(&scores, 3).unwrap(), 1); // tie resolved by index
        assert_eq!(rank_of(&scores, 0).unwrap(), 2);
        assert_eq!(rank_of(&scores, 2).unwrap(), 3);
        assert!(rank_of(&scores, 4).is_err());
    }

    /// Head gradients for both paradigms against central finite differences
    /// of the full scalar loss.
    #[test]
    fn head_loss_gradients_match_finite_differences() {
        let eps = 1e-5;
        let width = 6;
        let m = 3;
        let labels = test_labels(m, width);
        let feats: Vec<FeatureVec> = (0..4).map(|t| random_vec(width, 200 + t)).collect();
        for paradigm in [Paradigm::Matching, Paradigm::Classification] {
            let heads = init_heads(width, m, 17).unwrap();
            let (_, _, grads) = head_loss(&heads, &labels, &feats, 1, paradigm).unwrap();
            let loss_at = |h: &HeadParams| head_loss(h, &labels, &feats, 1, paradigm).unwrap().0;
            let check = |ana: f64, num: f64, what: &str| {
                let err = (num - ana).abs();
                let rel = err / num.abs().max(ana.abs()).max(1e-8);
                assert!(
                    err <= 1e-8 || rel <= 1e-4,
                    "{what} ({paradigm:?}): analytic {ana} vs numeric {num}"
                );
            };
            for r in 0..width {
                for c in 0..width {
                    let mut hp = heads.clone();
                    *hp.w_vid.at_mut(r, c) += eps;
                    let mut hm = heads.clone();
                    *hm.w_vid.at_mut(r, c) -= eps;
                    check(
                        grads.w_vid.at(r, c),
                        (loss_at(&hp) - loss_at(&hm)) / (2.0 * eps),
                        &format!("w_vid({r},{c})"),
                    );
                    let mut hp = heads.clone();
                    *hp.w_txt.at_mut(r, c) += eps;
                    let mut hm = heads.clone();
                    *hm.w_txt.at_mut(r, c) -= eps;
                    check(
                        grads.w_txt.at(r, c),
                        (loss_at(&hp) - loss_at(&hm)) / (2.0 * eps),
                        &format!("w_txt({r},{c})"),
                    );
                }
                for c in 0..m {
                    let mut hp = heads.clone();
                    *hp.w_cls.at_mut(r, c) += eps;
                    let mut hm = heads.clone();
                    *hm.w_cls.at_mut(r, c) -= eps;
                    check(
                        grads.w_cls.at(r, c),
                        (loss_at(&hp) - loss_at(&hm)) / (2.0 * eps),
                        &format!("w_cls({r},{c})"),
                    );
                }
            }
            for k in 0..m {
                let mut hp = heads.clone();
                hp.bias[k] += eps;
                let mut hm = heads.clone();
                hm.bias[k] -= eps;
                check(
                    grads.bias[k],
                    (loss_at(&hp) - loss_at(&hm)) / (2.0 * eps),
                    &format!("bias[{k}]"),
                );
            }
            // pooled-feature gradient: perturb one input feature component;
            // d loss / d feats[j][i] = pooled[i] / n
            let n = feats.len() as f64;
            for i in 0..width {
                let mut fp = feats.clone();
                fp[0][i] += eps;
                let mut fm = feats.clone();
                fm[0][i] -= eps;
                let jp = head_loss(&heads, &labels, &fp, 1, paradigm).unwrap().0;
                let jm = head_loss(&heads, &labels, &fm, 1, paradigm).unwrap().0;
                check(
                    grads.pooled[i] / n,
                    (jp - jm) / (2.0 * eps),
                    &format!("pooled[{i}]"),
                );
            }
        }
    }
}
