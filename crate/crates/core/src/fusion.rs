//! Fusion objectives and inference rules.
//!
//! Baselines (early, late, additive) sit next to the multiplicative
//! combination: every modality (or mixture candidate) produces its own
//! class probabilities, and the cost each one pays on class `k` is scaled by
//! how badly the others do on that class,
//!
//! ```text
//! q_i^k = [ prod_{j != i} (1 - p_j^k) ]^(beta / (M - 1))
//! l^k   = - sum_i w_i q_i^k log p_i^k
//! ```
//!
//! Prediction picks the class with the smallest class loss `l^k`.

use serde::{Deserialize, Serialize};

use crate::data::MultimodalBatch;
use crate::error::{Error, Result};
use crate::models::{AddCombine, HeadInput, ModelBundle};
use crate::tensor::{NodeId, Tape, Tensor};

/// Default cap on the number of modalities a mixture bundle may enumerate.
pub const DEFAULT_MAX_MODALITIES: usize = 8;

pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    Early,
    Late,
    Add,
    Mul,
    #[serde(rename = "mulmix")]
    MulMix,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Early => "early",
            Self::Late => "late",
            Self::Add => "add",
            Self::Mul => "mul",
            Self::MulMix => "mulmix",
        }
    }

    /// Kinds whose prediction is the argmin over class losses.
    pub fn is_multiplicative(self) -> bool {
        matches!(self, Self::Mul | Self::MulMix)
    }
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether gradients flow through the down-weighting factors `q`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QGradientMode {
    #[default]
    Full,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub kind: FusionKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub boosted: bool,
    /// Per-modality multipliers on the class losses; empty means all 1.0.
    #[serde(default)]
    pub modality_loss_weights: Vec<f64>,
    #[serde(default)]
    pub q_gradient: QGradientMode,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl FusionConfig {
    pub fn new(kind: FusionKind) -> Self {
        Self {
            kind,
            beta: DEFAULT_BETA,
            delta: 0.0,
            boosted: false,
            modality_loss_weights: Vec::new(),
            q_gradient: QGradientMode::Full,
        }
    }

    /// Every violated constraint, for a bundle with `modalities` inputs.
    pub fn violations(&self, modalities: usize, max_modalities: usize) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.beta) {
            v.push(format!("fusion.beta = {} is outside the range [0, 1]", self.beta));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            v.push(format!("fusion.delta = {} must be finite and >= 0", self.delta));
        }
        if self.boosted && !self.kind.is_multiplicative() {
            v.push(format!(
                "fusion.boosted requires kind mul or mulmix, got {}",
                self.kind
            ));
        }
        if !self.modality_loss_weights.is_empty() {
            if self.modality_loss_weights.len() != modalities {
                v.push(format!(
                    "fusion.modality_loss_weights has {} entries for {} modalities",
                    self.modality_loss_weights.len(),
                    modalities
                ));
            }
            if self
                .modality_loss_weights
                .iter()
                .any(|w| !w.is_finite() || *w < 0.0)
            {
                v.push("fusion.modality_loss_weights must be finite and >= 0".into());
            }
        }
        if self.kind == FusionKind::MulMix && modalities > max_modalities {
            v.push(format!(
                "mulmix with {modalities} modalities exceeds the cap of {max_modalities}: \
                 it would enumerate 2^{modalities} - 1 = {} mixture candidates",
                (1u128 << modalities.min(127)) - 1
            ));
        }
        if modalities == 0 {
            v.push("at least one modality is required".into());
        }
        v
    }

    pub fn validate(&self, modalities: usize, max_modalities: usize) -> Result<()> {
        let v = self.violations(modalities, max_modalities);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    fn weights(&self, m: usize) -> Vec<f64> {
        if self.modality_loss_weights.is_empty() {
            vec![1.0; m]
        } else {
            self.modality_loss_weights.clone()
        }
    }
}

/// Per-class losses `l^k`, computable without the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLossVector(pub Vec<f64>);

impl ClassLossVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A non-empty subset of modalities (0-based indices, ascending).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixtureCandidate {
    pub id: usize,
    pub members: Vec<usize>,
}

impl MixtureCandidate {
    pub fn contains(&self, m: usize) -> bool {
        self.members.contains(&m)
    }
}

/// All non-empty subsets of `{0..m}`, ordered by size then lexicographically.
pub fn enumerate_candidates(m: usize, max_modalities: usize) -> Result<Vec<MixtureCandidate>> {
    if m == 0 {
        return Err(Error::Config("mixture enumeration needs at least one modality".into()));
    }
    if m > max_modalities {
        return Err(Error::Config(format!(
            "{m} modalities exceed the mixture cap of {max_modalities}; \
             the power set would hold 2^{m} - 1 candidates"
        )));
    }
    let mut subsets: Vec<Vec<usize>> = (1u32..(1u32 << m))
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(subsets
        .into_iter()
        .enumerate()
        .map(|(id, members)| MixtureCandidate { id, members })
        .collect())
}

/// Down-weighting factor for modality `i` on class `k`.
///
/// `q = 1` when `M == 1` or `beta == 0`.
pub fn q_factor(probabilities: &[Vec<f64>], k: usize, i: usize, beta: f64) -> f64 {
    let m = probabilities.len();
    if m <= 1 || beta == 0.0 {
        return 1.0;
    }
    let prod: f64 = probabilities
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, p)| 1.0 - p[k])
        .product();
    prod.powf(beta / (m - 1) as f64)
}

/// Batched class losses `[n, K]` on the tape from per-branch probabilities.
///
/// The product over the other branches is formed in log space as
/// `sum_j ln(1 - p_j) - ln(1 - p_i)`, which keeps large candidate sets from
/// underflowing.
pub fn mul_class_losses_on_tape(
    tape: &mut Tape,
    probs: &[NodeId],
    beta: f64,
    weights: &[f64],
    mode: QGradientMode,
) -> Result<NodeId> {
    let m = probs.len();
    if m == 0 {
        return Err(Error::Contract("class losses need at least one branch".into()));
    }
    if weights.len() != m {
        return Err(Error::Contract(format!(
            "{} loss weights for {m} branches",
            weights.len()
        )));
    }
    let logp: Vec<NodeId> = probs.iter().map(|&p| tape.ln(p)).collect();
    let mut terms = Vec::with_capacity(m);
    if m == 1 || beta == 0.0 {
        for (lp, w) in logp.iter().zip(weights) {
            terms.push(tape.scale(*lp, -w));
        }
    } else {
        let exponent = beta / (m - 1) as f64;
        let log1m: Vec<NodeId> = probs
            .iter()
            .map(|&p| {
                let om = tape.one_minus(p);
                tape.ln(om)
            })
            .collect();
        let total = tape.add_n(&log1m)?;
        for i in 0..m {
            let others = tape.sub(total, log1m[i])?;
            let scaled = tape.scale(others, exponent);
            let mut q = tape.exp(scaled);
            if mode == QGradientMode::Stop {
                q = tape.detach(q);
            }
            let t = tape.mul(q, logp[i])?;
            terms.push(tape.scale(t, -weights[i]));
        }
    }
    tape.add_n(&terms)
}

/// Class losses for one sample given each branch's probability vector.
pub fn mul_class_losses(
    probabilities: &[Vec<f64>],
    beta: f64,
    weights: &[f64],
) -> Result<ClassLossVector> {
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = probabilities
        .iter()
        .map(|p| tape.constant(Tensor::row(p)))
        .collect();
    let unit;
    let w = if weights.is_empty() {
        unit = vec![1.0; probabilities.len()];
        &unit
    } else {
        weights
    };
    let l = mul_class_losses_on_tape(&mut tape, &nodes, beta, w, QGradientMode::Full)?;
    Ok(ClassLossVector(tape.value(l).data().to_vec()))
}

/// Index of the smallest class loss, lowest index on ties.
pub fn predict_argmin(losses: &ClassLossVector) -> usize {
    argmin(losses.values())
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// True when the correct class beats every other class loss by more than
/// `delta`; such samples contribute nothing to the boosted objective.
pub fn boosted_gate(losses: &ClassLossVector, y: usize, delta: f64) -> bool {
    let l = losses.values();
    l.iter()
        .enumerate()
        .filter(|(k, _)| *k != y)
        .all(|(_, other)| l[y] + delta < *other)
}

fn check_kind(bundle: &ModelBundle, expected: &[FusionKind], op: &str) -> Result<()> {
    if !expected.contains(&bundle.kind()) {
        return Err(Error::Contract(format!(
            "{op} requires a {expected:?} bundle, got {}",
            bundle.kind()
        )));
    }
    Ok(())
}

fn inputs(tape: &mut Tape, bundle: &ModelBundle, batch: &MultimodalBatch) -> Result<Vec<NodeId>> {
    let dims = bundle.modality_dims();
    if batch.modalities.len() != dims.len() {
        return Err(Error::Contract(format!(
            "batch has {} modalities, bundle expects {}",
            batch.modalities.len(),
            dims.len()
        )));
    }
    batch
        .modalities
        .iter()
        .zip(&dims)
        .map(|(t, &d)| {
            if t.cols() != d {
                return Err(Error::Shape {
                    op: "modality input",
                    left: vec![t.rows(), d],
                    right: t.shape().to_vec(),
                });
            }
            Ok(tape.constant(t.clone()))
        })
        .collect()
}

/// Single head over the concatenated raw modality vectors.
pub fn early_fusion_forward(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
) -> Result<NodeId> {
    check_kind(bundle, &[FusionKind::Early], "early fusion")?;
    let xs = inputs(tape, bundle, batch)?;
    let joint = if xs.len() == 1 { xs[0] } else { tape.concat_cols(&xs)? };
    bundle.predict_head(tape, 0, joint)
}

/// Probabilities of each per-modality head (late and mul bundles).
pub fn branch_probabilities(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
) -> Result<Vec<NodeId>> {
    check_kind(bundle, &[FusionKind::Late, FusionKind::Mul], "per-modality heads")?;
    let xs = inputs(tape, bundle, batch)?;
    let mut out = Vec::with_capacity(xs.len());
    for (m, x) in xs.into_iter().enumerate() {
        let h = match bundle.options().head_input {
            HeadInput::Embedding => bundle.encode(tape, m, x)?,
            HeadInput::Raw => x,
        };
        out.push(bundle.predict_head(tape, m, h)?);
    }
    Ok(out)
}

/// Arithmetic mean of the per-modality probability vectors.
pub fn late_fusion_forward(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
) -> Result<NodeId> {
    check_kind(bundle, &[FusionKind::Late], "late fusion")?;
    let probs = branch_probabilities(tape, bundle, batch)?;
    let sum = tape.add_n(&probs)?;
    Ok(tape.scale(sum, 1.0 / probs.len() as f64))
}

/// Combined embedding `u`: the sum (or concatenation) of encoder outputs.
pub fn additive_embedding(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
) -> Result<NodeId> {
    check_kind(bundle, &[FusionKind::Add], "additive fusion")?;
    let xs = inputs(tape, bundle, batch)?;
    let mut embs = Vec::with_capacity(xs.len());
    for (m, x) in xs.into_iter().enumerate() {
        embs.push(bundle.encode(tape, m, x)?);
    }
    match bundle.options().add_combine {
        AddCombine::Sum => tape.add_n(&embs),
        AddCombine::Concat => tape.concat_cols(&embs),
    }
}

pub fn additive_forward(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
) -> Result<NodeId> {
    let u = additive_embedding(tape, bundle, batch)?;
    bundle.predict_head(tape, 0, u)
}

fn mixture_embedding_from(
    tape: &mut Tape,
    bundle: &ModelBundle,
    xs: &[NodeId],
    candidate: &MixtureCandidate,
) -> Result<NodeId> {
    let mut embs = Vec::with_capacity(candidate.members.len());
    for &m in &candidate.members {
        let x = *xs.get(m).ok_or_else(|| {
            Error::Contract(format!("candidate {} references modality {m}", candidate.id))
        })?;
        embs.push(bundle.encode_for(tape, candidate.id, m, x)?);
    }
    tape.add_n(&embs)
}

/// `u_c`: sum of the encoder outputs of the candidate's modalities.
pub fn mixture_embedding(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
    candidate: &MixtureCandidate,
) -> Result<NodeId> {
    check_kind(bundle, &[FusionKind::MulMix], "mixture forward")?;
    let xs = inputs(tape, bundle, batch)?;
    mixture_embedding_from(tape, bundle, &xs, candidate)
}

/// `p_c = g_c(u_c)` for one candidate.
pub fn mixture_forward(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
    candidate: &MixtureCandidate,
) -> Result<NodeId> {
    let u = mixture_embedding(tape, bundle, batch, candidate)?;
    bundle.predict_head(tape, candidate.id, u)
}

/// Probabilities of every mixture candidate, in candidate order.
pub fn candidate_probabilities(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
) -> Result<Vec<NodeId>> {
    check_kind(bundle, &[FusionKind::MulMix], "mixture forward")?;
    let xs = inputs(tape, bundle, batch)?;
    let mut out = Vec::with_capacity(bundle.candidates().len());
    for c in bundle.candidates() {
        let u = mixture_embedding_from(tape, bundle, &xs, c)?;
        out.push(bundle.predict_head(tape, c.id, u)?);
    }
    Ok(out)
}

/// Multiplicative selection over all mixture candidates, `[n, K]`.
/// Candidates carry unit loss weights.
pub fn mulmix_class_losses(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
    beta: f64,
    mode: QGradientMode,
) -> Result<NodeId> {
    let probs = candidate_probabilities(tape, bundle, batch)?;
    let w = vec![1.0; probs.len()];
    mul_class_losses_on_tape(tape, &probs, beta, &w, mode)
}

/// Class losses `[n, K]` for late, mul and mulmix bundles.
pub fn class_losses(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
    config: &FusionConfig,
) -> Result<NodeId> {
    match bundle.kind() {
        FusionKind::Late => {
            let probs = branch_probabilities(tape, bundle, batch)?;
            let w = config.weights(probs.len());
            mul_class_losses_on_tape(tape, &probs, 0.0, &w, QGradientMode::Full)
        }
        FusionKind::Mul => {
            let probs = branch_probabilities(tape, bundle, batch)?;
            let w = config.weights(probs.len());
            mul_class_losses_on_tape(tape, &probs, config.beta, &w, config.q_gradient)
        }
        FusionKind::MulMix => {
            mulmix_class_losses(tape, bundle, batch, config.beta, config.q_gradient)
        }
        other => Err(Error::Contract(format!("{other} fusion has no class losses"))),
    }
}

/// Mean over the batch of the per-sample objective selected by `config`.
pub fn training_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
    config: &FusionConfig,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::Contract("training loss of an empty batch".into()));
    }
    if config.kind != bundle.kind() {
        return Err(Error::Contract(format!(
            "config kind {} does not match bundle kind {}",
            config.kind,
            bundle.kind()
        )));
    }
    let per_sample = match bundle.kind() {
        FusionKind::Early | FusionKind::Add => {
            let p = if bundle.kind() == FusionKind::Early {
                early_fusion_forward(tape, bundle, batch)?
            } else {
                additive_forward(tape, bundle, batch)?
            };
            let lp = tape.ln(p);
            let picked = tape.gather(lp, &batch.labels)?;
            tape.scale(picked, -1.0)
        }
        _ => {
            let l = class_losses(tape, bundle, batch, config)?;
            let picked = tape.gather(l, &batch.labels)?;
            if config.boosted && bundle.kind().is_multiplicative() {
                let lv = tape.value(l);
                let mask: Vec<f64> = batch
                    .labels
                    .iter()
                    .enumerate()
                    .map(|(r, &y)| {
                        let row = ClassLossVector(lv.row_slice(r).to_vec());
                        if boosted_gate(&row, y, config.delta) {
                            0.0
                        } else {
                            1.0
                        }
                    })
                    .collect();
                tape.mask_mul(picked, mask)?
            } else {
                picked
            }
        }
    };
    Ok(tape.mean(per_sample))
}

/// Predicted classes and a ranking score for class 1 (binary tasks).
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub classes: Vec<usize>,
    /// Higher means more confidence in class 1. Probability of class 1 for
    /// probabilistic kinds, `l^0 - l^1` for multiplicative kinds.
    pub scores: Vec<f64>,
}

pub fn predict(
    bundle: &ModelBundle,
    batch: &MultimodalBatch,
    config: &FusionConfig,
) -> Result<Predictions> {
    let mut tape = Tape::new();
    let (out, minimize) = match bundle.kind() {
        FusionKind::Early => (early_fusion_forward(&mut tape, bundle, batch)?, false),
        FusionKind::Add => (additive_forward(&mut tape, bundle, batch)?, false),
        FusionKind::Late => (late_fusion_forward(&mut tape, bundle, batch)?, false),
        FusionKind::Mul | FusionKind::MulMix => {
            (class_losses(&mut tape, bundle, batch, config)?, true)
        }
    };
    let v = tape.value(out);
    let n = v.rows();
    let mut classes = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for r in 0..n {
        let row = v.row_slice(r);
        if minimize {
            classes.push(argmin(row));
            scores.push(row[0] - row[1]);
        } else {
            classes.push(argmax(row));
            scores.push(row[1]);
        }
    }
    Ok(Predictions { classes, scores })
}
