//! Label-aligned supervised contrastive loss over multi-view, multi-label
//! batches.
//!
//! Every view (image, text or label embedding of a sample) is both an anchor
//! and a contrast feature. For anchor `i`:
//!
//! * `A(i)` is every other view in the batch;
//! * `P(i)` is the views in `A(i)` that share at least one label with `i`;
//! * for `p` in `P(i)`, `j(p)` is the views of `p`'s sample that share a
//!   label with `i`, excluding `i`.
//!
//! ```text
//! L = sum_i  -1/|P(i)|  sum_{p in P(i)} sum_{v in j(p)} log softmax_i(v)
//! softmax_i(v) = exp(z_i . z_v / tau) / sum_{n in A(i)} exp(z_i . z_n / tau)
//! ```
//!
//! Anchors with an empty `P(i)` contribute nothing. Because `j(p)` only
//! depends on `p`'s sample, view `v` enters anchor `i`'s sum once for every
//! member of `P(i)` drawn from `v`'s sample; the implementation folds that
//! into a per-view multiplicity.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::embedding::{dot, l2_norm, normalize_in_place};

pub type LabelId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupColaError {
    #[error("batch needs at least 2 views, got {0}")]
    DegenerateBatch(usize),
    #[error("view {0} has no labels")]
    MissingLabels(usize),
    #[error("view {view} has dimension {got}, expected {expected}")]
    DimensionMismatch { view: usize, expected: usize, got: usize },
    #[error("view {view} is not unit length (norm {norm})")]
    NotNormalized { view: usize, norm: f64 },
    #[error("view {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("batch file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewKind {
    Image,
    Text,
    Label,
}

impl ViewKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Image => "image",
            Self::Text => "text",
            Self::Label => "label",
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(Self::Image),
            "text" => Ok(Self::Text),
            "label" => Ok(Self::Label),
            other => Err(format!("unknown view kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewEmbedding {
    pub sample: usize,
    pub kind: ViewKind,
    pub z: Vec<f64>,
}

impl ViewEmbedding {
    /// Rejects vectors whose norm is not within 1e-6 of 1.
    pub fn new(sample: usize, kind: ViewKind, z: Vec<f64>) -> Result<Self, SupColaError> {
        let norm = l2_norm(&z);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(SupColaError::NotNormalized { view: sample, norm });
        }
        Ok(Self { sample, kind, z })
    }

    /// Normalizes `z` to unit length.
    pub fn normalized(sample: usize, kind: ViewKind, mut z: Vec<f64>) -> Result<Self, SupColaError> {
        normalize_in_place(&mut z).map_err(|_| SupColaError::InvalidArgument("zero vector".into()))?;
        Ok(Self { sample, kind, z })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { temperature: 0.07 }
    }
}

impl LossConfig {
    pub fn new(temperature: f64) -> Result<Self, SupColaError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(SupColaError::InvalidArgument(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }
}

/// A batch of views with their label sets.
///
/// The loss and gradient treat the vectors as free variables, so a batch
/// may hold non-unit vectors after [`SupColaBatch::with_vector`].
#[derive(Debug, Clone, PartialEq)]
pub struct SupColaBatch {
    views: Vec<ViewEmbedding>,
    labels: Vec<BTreeSet<LabelId>>,
}

impl SupColaBatch {
    pub fn new(views: Vec<ViewEmbedding>, labels: Vec<BTreeSet<LabelId>>) -> Result<Self, SupColaError> {
        if views.len() < 2 {
            return Err(SupColaError::DegenerateBatch(views.len()));
        }
        if labels.len() != views.len() {
            return Err(SupColaError::InvalidArgument(format!(
                "{} views but {} label sets",
                views.len(),
                labels.len()
            )));
        }
        let dim = views[0].z.len();
        for (i, v) in views.iter().enumerate() {
            if v.z.len() != dim {
                return Err(SupColaError::DimensionMismatch {
                    view: i,
                    expected: dim,
                    got: v.z.len(),
                });
            }
            if v.z.iter().any(|x| !x.is_finite()) {
                return Err(SupColaError::NonFinite(i));
            }
            if labels[i].is_empty() {
                return Err(SupColaError::MissingLabels(i));
            }
        }
        Ok(Self { views, labels })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.views[0].z.len()
    }

    pub fn views(&self) -> &[ViewEmbedding] {
        &self.views
    }

    pub fn labels(&self) -> &[BTreeSet<LabelId>] {
        &self.labels
    }

    /// Copy with view `index`'s vector replaced; no normalization check.
    pub fn with_vector(&self, index: usize, z: Vec<f64>) -> Self {
        let mut next = self.clone();
        next.views[index].z = z;
        next
    }

    fn shares_label(&self, a: usize, b: usize) -> bool {
        !self.labels[a].is_disjoint(&self.labels[b])
    }

    /// Positive multiplicity of each view for `anchor`, and `|P(anchor)|`.
    fn positive_weights(&self, anchor: usize) -> (Vec<f64>, usize) {
        let n = self.views.len();
        let positive: Vec<bool> = (0..n).map(|v| v != anchor && self.shares_label(anchor, v)).collect();
        let p_count = positive.iter().filter(|&&p| p).count();
        let mut weights = vec![0.0; n];
        for v in 0..n {
            if positive[v] {
                let sample = self.views[v].sample;
                weights[v] = (0..n)
                    .filter(|&p| positive[p] && self.views[p].sample == sample)
                    .count() as f64;
            }
        }
        (weights, p_count)
    }

    /// `z_anchor . z_n / tau` for every view, with the anchor's own entry
    /// left at negative infinity.
    fn logits(&self, anchor: usize, tau: f64) -> Vec<f64> {
        let za = &self.views[anchor].z;
        self.views
            .iter()
            .enumerate()
            .map(|(n, v)| if n == anchor { f64::NEG_INFINITY } else { dot(za, &v.z) / tau })
            .collect()
    }
}

/// Softmax of `anchor` over `A(anchor)`; the anchor's own slot is 0.
pub fn anchor_softmax(batch: &SupColaBatch, cfg: &LossConfig, anchor: usize) -> Vec<f64> {
    let logits = batch.logits(anchor, cfg.temperature);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn anchor_terms(batch: &SupColaBatch, cfg: &LossConfig, anchor: usize) -> Option<(f64, Vec<f64>, Vec<f64>, usize)> {
    let (weights, p_count) = batch.positive_weights(anchor);
    if p_count == 0 {
        return None;
    }
    let logits = batch.logits(anchor, cfg.temperature);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
    let mut acc = 0.0;
    for (v, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w * (logits[v] - lse);
        }
    }
    let softmax: Vec<f64> = logits.iter().map(|&s| (s - lse).exp()).collect();
    Some((-acc / p_count as f64, weights, softmax, p_count))
}

/// Per-anchor loss contributions.
pub fn supcola_anchor_losses(batch: &SupColaBatch, cfg: &LossConfig) -> Vec<f64> {
    (0..batch.len())
        .map(|i| anchor_terms(batch, cfg, i).map_or(0.0, |t| t.0))
        .collect()
}

pub fn supcola_loss(batch: &SupColaBatch, cfg: &LossConfig) -> Result<f64, SupColaError> {
    if batch.len() < 2 {
        return Err(SupColaError::DegenerateBatch(batch.len()));
    }
    Ok(supcola_anchor_losses(batch, cfg).iter().sum())
}

/// Analytic gradient of [`supcola_loss`] with respect to every view vector.
///
/// For anchor `i` with multiplicities `c_v`, `C = sum c_v` and softmax `q_n`,
/// `dL_i/ds_n = (C q_n - c_n) / |P(i)|` where `s_n = z_i . z_n / tau`; the
/// chain rule sends `z_n / tau` to `z_i` and `z_i / tau` to `z_n`.
pub fn supcola_grad(batch: &SupColaBatch, cfg: &LossConfig) -> Result<Vec<Vec<f64>>, SupColaError> {
    if batch.len() < 2 {
        return Err(SupColaError::DegenerateBatch(batch.len()));
    }
    let dim = batch.dim();
    let tau = cfg.temperature;
    let mut grads = vec![vec![0.0; dim]; batch.len()];
    for i in 0..batch.len() {
        let Some((_, weights, softmax, p_count)) = anchor_terms(batch, cfg, i) else {
            continue;
        };
        let total: f64 = weights.iter().sum();
        for n in 0..batch.len() {
            if n == i {
                continue;
            }
            let coef = (total * softmax[n] - weights[n]) / p_count as f64 / tau;
            if coef == 0.0 {
                continue;
            }
            let (zi, zn) = (&batch.views[i].z, &batch.views[n].z);
            for k in 0..dim {
                grads[i][k] += coef * zn[k];
            }
            for k in 0..dim {
                grads[n][k] += coef * zi[k];
            }
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignOutcome {
    pub batch: SupColaBatch,
    /// Loss before the first step followed by the loss after each step.
    pub losses: Vec<f64>,
}

/// Plain gradient descent on the view vectors, re-normalizing every vector
/// to unit length after each step.
pub fn align_toy(
    batch: &SupColaBatch,
    cfg: &LossConfig,
    steps: usize,
    learning_rate: f64,
) -> Result<AlignOutcome, SupColaError> {
    if steps == 0 {
        return Err(SupColaError::InvalidArgument("steps must be >= 1".into()));
    }
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(SupColaError::InvalidArgument(format!(
            "learning rate must be > 0, got {learning_rate}"
        )));
    }
    let mut current = batch.clone();
    let mut losses = Vec::with_capacity(steps + 1);
    losses.push(supcola_loss(&current, cfg)?);
    for _ in 0..steps {
        let grads = supcola_grad(&current, cfg)?;
        for (view, g) in current.views.iter_mut().zip(&grads) {
            for (z, gk) in view.z.iter_mut().zip(g) {
                *z -= learning_rate * gk;
            }
            normalize_in_place(&mut view.z)
                .map_err(|_| SupColaError::InvalidArgument("a view collapsed to zero".into()))?;
        }
        losses.push(supcola_loss(&current, cfg)?);
    }
    Ok(AlignOutcome {
        batch: current,
        losses,
    })
}

/// Central-difference check of [`supcola_grad`]; returns the largest
/// elementwise relative error `|a - f| / max(|a|, |f|, floor)`.
pub fn gradient_check(batch: &SupColaBatch, cfg: &LossConfig, eps: f64, floor: f64) -> Result<f64, SupColaError> {
    let analytic = supcola_grad(batch, cfg)?;
    let mut worst: f64 = 0.0;
    for (v, g) in analytic.iter().enumerate() {
        for k in 0..batch.dim() {
            let mut plus = batch.views[v].z.clone();
            plus[k] += eps;
            let mut minus = batch.views[v].z.clone();
            minus[k] -= eps;
            let fd = (supcola_loss(&batch.with_vector(v, plus), cfg)?
                - supcola_loss(&batch.with_vector(v, minus), cfg)?)
                / (2.0 * eps);
            let denom = g[k].abs().max(fd.abs()).max(floor);
            worst = worst.max((g[k] - fd).abs() / denom);
        }
    }
    Ok(worst)
}

/// Seeded random batch: `views` unit vectors of dimension `dim`, grouped
/// into samples of up to three views, each view carrying 1 to `max_labels`
/// labels drawn from `0..label_pool`.
pub fn random_batch(seed: u64, views: usize, dim: usize, max_labels: usize, label_pool: u32) -> SupColaBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [ViewKind::Image, ViewKind::Text, ViewKind::Label];
    let mut out = Vec::with_capacity(views);
    let mut labels = Vec::with_capacity(views);
    let mut sample = 0;
    while out.len() < views {
        let per_sample = rng.random_range(1..=3).min(views - out.len());
        let sample_labels: BTreeSet<LabelId> =
            (0..rng.random_range(1..=max_labels)).map(|_| rng.random_range(0..label_pool)).collect();
        for kind in kinds.iter().take(per_sample) {
            let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            out.push(ViewEmbedding::normalized(sample, *kind, z).expect("gaussian vector is nonzero"));
            labels.push(sample_labels.clone());
        }
        sample += 1;
    }
    SupColaBatch::new(out, labels).expect("random batch satisfies invariants")
}

/// Writes one line per view: `sample <TAB> kind <TAB> labels <TAB> values`,
/// labels comma-separated, values space-separated in shortest round-trip form.
pub fn write_batch(batch: &SupColaBatch) -> String {
    let mut out = String::new();
    for (view, labels) in batch.views.iter().zip(&batch.labels) {
        let labels: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        let values: Vec<String> = view.z.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            view.sample,
            view.kind,
            labels.join(","),
            values.join(" ")
        ));
    }
    out
}

/// Parses the format produced by [`write_batch`]. Vectors must be unit
/// length; `#` lines and blank lines are skipped.
pub fn read_batch(text: &str) -> Result<SupColaBatch, SupColaError> {
    let mut views = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let bad = |message: String| SupColaError::Parse { line: line_no, message };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let sample: usize = fields[0].trim().parse().map_err(|e| bad(format!("sample index: {e}")))?;
        let kind: ViewKind = fields[1].trim().parse().map_err(bad)?;
        let label_set = fields[2]
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<LabelId>())
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(|e| bad(format!("labels: {e}")))?;
        let z = fields[3]
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("values: {e}")))?;
        let view = ViewEmbedding::new(sample, kind, z).map_err(|e| bad(e.to_string()))?;
        views.push(view);
        labels.push(label_set);
    }
    SupColaBatch::new(views, labels)
}
