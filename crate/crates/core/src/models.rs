//! Per-modality encoders, prediction heads and the bundle that ties them to
//! a fusion layout.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{enumerate_candidates, FusionKind, MixtureCandidate, DEFAULT_MAX_MODALITIES};
use crate::tensor::{NodeId, ParamId, ParamStore, Tape, Tensor};

/// Probabilities leaving a head are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub classes: usize,
}

/// What the per-modality heads of late/mul bundles consume.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadInput {
    #[default]
    Embedding,
    Raw,
}

/// How additive fusion combines encoder outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AddCombine {
    #[default]
    Sum,
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    #[serde(default)]
    pub head_input: HeadInput,
    #[serde(default)]
    pub add_combine: AddCombine,
    /// Mixture candidates share one encoder per modality unless disabled.
    #[serde(default = "default_true")]
    pub shared_encoders: bool,
    #[serde(default = "default_max_modalities")]
    pub max_modalities: usize,
}

fn default_true() -> bool {
    true
}

fn default_max_modalities() -> usize {
    DEFAULT_MAX_MODALITIES
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            head_input: HeadInput::Embedding,
            add_combine: AddCombine::Sum,
            shared_encoders: true,
            max_modalities: DEFAULT_MAX_MODALITIES,
        }
    }
}

/// Architecture request: one encoder per modality plus a head template
/// (hidden sizes and class count). Head input sizes follow from the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub encoders: Vec<EncoderSpec>,
    pub head_hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub options: BundleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

/// Fully connected stack. Hidden layers always use the activation; the
/// output layer uses it only when `activate_output` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
    activate_output: bool,
    input_dim: usize,
    output_dim: usize,
}

impl Mlp {
    fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        sizes: &[usize],
        activation: Activation,
        activate_output: bool,
    ) -> Result<Self> {
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!(
                "{prefix}: layer {pos} has zero width (sizes {sizes:?})"
            )));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let weight = store.register(
                format!("{prefix}.{l}.weight"),
                Tensor::matrix(fan_in, fan_out, w)?,
                true,
            );
            let bias = store.register(
                format!("{prefix}.{l}.bias"),
                Tensor::zeros(vec![1, fan_out]),
                false,
            );
            layers.push(Linear { weight, bias });
        }
        Ok(Self {
            layers,
            activation,
            activate_output,
            input_dim: sizes[0],
            output_dim: *sizes.last().unwrap(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `(weight, bias)` ids of every layer, input side first.
    pub fn layer_params(&self) -> Vec<(ParamId, ParamId)> {
        self.layers.iter().map(|l| (l.weight, l.bias)).collect()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim {
            return Err(Error::Shape {
                op: "mlp input",
                left: vec![self.input_dim],
                right: tape.value(x).shape().to_vec(),
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if (i < last || self.activate_output) && self.activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Encoders, heads and parameters for one fusion layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    kind: FusionKind,
    arch: ArchitectureSpec,
    encoders: Vec<Mlp>,
    /// `encoder_slots[c][m]` is the encoder used for modality `m` by consumer
    /// `c`. Consumers are candidates for mulmix and modalities otherwise.
    encoder_slots: Vec<Vec<Option<usize>>>,
    heads: Vec<Mlp>,
    head_specs: Vec<HeadSpec>,
    candidates: Vec<MixtureCandidate>,
    params: ParamStore,
}

impl ModelBundle {
    pub fn kind(&self) -> FusionKind {
        self.kind
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn options(&self) -> &BundleOptions {
        &self.arch.options
    }

    pub fn modality_count(&self) -> usize {
        self.arch.encoders.len()
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.arch.encoders.iter().map(|e| e.input_dim).collect()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_specs(&self) -> &[HeadSpec] {
        &self.head_specs
    }

    pub fn encoder_count(&self) -> usize {
        self.encoders.len()
    }

    pub fn encoder(&self, idx: usize) -> &Mlp {
        &self.encoders[idx]
    }

    pub fn head(&self, idx: usize) -> &Mlp {
        &self.heads[idx]
    }

    pub fn candidates(&self) -> &[MixtureCandidate] {
        &self.candidates
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Whether heads of this bundle read encoder embeddings.
    pub fn uses_encoders(&self) -> bool {
        !self.encoders.is_empty()
    }

    fn check_modality(&self, m: usize) -> Result<()> {
        if m >= self.modality_count() {
            return Err(Error::Contract(format!(
                "modality index {m} out of range for a bundle with {} modalities",
                self.modality_count()
            )));
        }
        Ok(())
    }

    /// Encoder output `f_m(v_m)` for a batch `[n, d_m]`, using the encoder
    /// slot of `consumer` (a candidate index for mulmix, else ignored).
    pub fn encode_for(
        &self,
        tape: &mut Tape,
        consumer: usize,
        m: usize,
        v: NodeId,
    ) -> Result<NodeId> {
        self.check_modality(m)?;
        let row = if self.encoder_slots.len() == 1 { 0 } else { consumer };
        let slot = self
            .encoder_slots
            .get(row)
            .and_then(|r| r[m])
            .ok_or_else(|| {
                Error::Contract(format!(
                    "{:?} bundle has no encoder for modality {m} (consumer {consumer})",
                    self.kind
                ))
            })?;
        self.encoders[slot].forward(tape, &self.params, v)
    }

    pub fn encode(&self, tape: &mut Tape, m: usize, v: NodeId) -> Result<NodeId> {
        self.encode_for(tape, 0, m, v)
    }

    /// Embedding of a single modality vector.
    pub fn encode_vector(&self, m: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.check_modality(m)?;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(v));
        let out = self.encode(&mut tape, m, x)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Clamped softmax probabilities of head `idx` for inputs `[n, input_dim]`.
    pub fn predict_head(&self, tape: &mut Tape, idx: usize, u: NodeId) -> Result<NodeId> {
        let head = self.heads.get(idx).ok_or_else(|| {
            Error::Contract(format!(
                "head index {idx} out of range ({} heads)",
                self.heads.len()
            ))
        })?;
        let logits = head.forward(tape, &self.params, u)?;
        let p = tape.softmax(logits)?;
        Ok(tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS))
    }

    pub fn predict_head_vector(&self, idx: usize, u: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(u));
        let p = self.predict_head(&mut tape, idx, x)?;
        Ok(tape.value(p).data().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            bundle: self.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck.bundle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }
}

const CHECKPOINT_FORMAT: &str = "mmfuse-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    bundle: ModelBundle,
}

fn validate(arch: &ArchitectureSpec, kind: FusionKind) -> Result<()> {
    if arch.encoders.is_empty() {
        return Err(Error::Config("at least one modality is required".into()));
    }
    if arch.classes < 2 {
        return Err(Error::Config(format!(
            "class count must be at least 2, got {}",
            arch.classes
        )));
    }
    for (m, e) in arch.encoders.iter().enumerate() {
        if e.input_dim == 0 || e.output_dim == 0 || e.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "encoder {m} has a zero-dimension layer: input {} hidden {:?} output {}",
                e.input_dim, e.hidden, e.output_dim
            )));
        }
    }
    if arch.head_hidden.contains(&0) {
        return Err(Error::Config(format!(
            "head has a zero-dimension hidden layer: {:?}",
            arch.head_hidden
        )));
    }
    let d = arch.encoders[0].output_dim;
    if kind != FusionKind::Early
        && arch.encoders.iter().any(|e| e.output_dim != d)
    {
        let dims: Vec<usize> = arch.encoders.iter().map(|e| e.output_dim).collect();
        return Err(Error::Config(format!(
            "encoder output dims must agree across modalities, got {dims:?}"
        )));
    }
    Ok(())
}

fn build_encoder(
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    spec: &EncoderSpec,
) -> Result<Mlp> {
    let mut sizes = vec![spec.input_dim];
    sizes.extend(&spec.hidden);
    sizes.push(spec.output_dim);
    Mlp::build(params, rng, name, &sizes, spec.activation, true)
}

/// Builds a bundle for `kind` with He-style uniform weights and zero biases.
/// Identical `(arch, kind, seed)` yields bit-identical parameters.
pub fn init_bundle(arch: &ArchitectureSpec, kind: FusionKind, seed: u64) -> Result<ModelBundle> {
    validate(arch, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let m_count = arch.encoders.len();
    let d = arch.encoders[0].output_dim;
    let opts = &arch.options;

    let candidates = if kind == FusionKind::MulMix {
        enumerate_candidates(m_count, opts.max_modalities)?
    } else {
        Vec::new()
    };

    let mut encoders = Vec::new();
    let encoder_slots = match kind {
        FusionKind::Early => vec![vec![None; m_count]],
        FusionKind::Late | FusionKind::Mul if opts.head_input == HeadInput::Raw => {
            vec![vec![None; m_count]]
        }
        FusionKind::MulMix if !opts.shared_encoders => {
            let mut slots = Vec::with_capacity(candidates.len());
            for c in &candidates {
                let mut row = vec![None; m_count];
                for &m in &c.members {
                    let name = format!("candidate{}.encoder{m}", c.id);
                    encoders.push(build_encoder(&mut params, &mut rng, &name, &arch.encoders[m])?);
                    row[m] = Some(encoders.len() - 1);
                }
                slots.push(row);
            }
            slots
        }
        _ => {
            let mut row = Vec::with_capacity(m_count);
            for (m, spec) in arch.encoders.iter().enumerate() {
                encoders.push(build_encoder(&mut params, &mut rng, &format!("encoder{m}"), spec)?);
                row.push(Some(encoders.len() - 1));
            }
            vec![row]
        }
    };

    let head_inputs: Vec<usize> = match kind {
        FusionKind::Early => vec![arch.encoders.iter().map(|e| e.input_dim).sum()],
        FusionKind::Add => match opts.add_combine {
            AddCombine::Sum => vec![d],
            AddCombine::Concat => vec![m_count * d],
        },
        FusionKind::Late | FusionKind::Mul => match opts.head_input {
            HeadInput::Embedding => vec![d; m_count],
            HeadInput::Raw => arch.encoders.iter().map(|e| e.input_dim).collect(),
        },
        FusionKind::MulMix => vec![d; candidates.len()],
    };

    let mut heads = Vec::with_capacity(head_inputs.len());
    let mut head_specs = Vec::with_capacity(head_inputs.len());
    for (h, &input_dim) in head_inputs.iter().enumerate() {
        let mut sizes = vec![input_dim];
        sizes.extend(&arch.head_hidden);
        sizes.push(arch.classes);
        heads.push(Mlp::build(
            &mut params,
            &mut rng,
            &format!("head{h}"),
            &sizes,
            Activation::Relu,
            false,
        )?);
        head_specs.push(HeadSpec {
            input_dim,
            hidden: arch.head_hidden.clone(),
            classes: arch.classes,
        });
    }

    Ok(ModelBundle {
        kind,
        arch: arch.clone(),
        encoders,
        encoder_slots,
        heads,
        head_specs,
        candidates,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn arch(dims: &[usize], d: usize, head_hidden: &[usize], classes: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            encoders: dims
                .iter()
                .map(|&i| EncoderSpec {
                    input_dim: i,
                    hidden: vec![],
                    output_dim: d,
                    activation: Activation::Relu,
                })
                .collect(),
            head_hidden: head_hidden.to_vec(),
            classes,
            options: BundleOptions::default(),
        }
    }

    fn fill(b: &mut ModelBundle, value: f64) {
        let ids: Vec<_> = b.params().ids().collect();
        for id in ids {
            b.params_mut().get_mut(id).data_mut().fill(value);
        }
    }

    #[test]
    fn head_counts_follow_layout() {
        let a = arch(&[3, 4, 2], 5, &[6], 2);
        assert_eq!(init_bundle(&a, FusionKind::Early, 0).unwrap().head_count(), 1);
        assert_eq!(init_bundle(&a, FusionKind::Add, 0).unwrap().head_count(), 1);
        assert_eq!(init_bundle(&a, FusionKind::Late, 0).unwrap().head_count(), 3);
        assert_eq!(init_bundle(&a, FusionKind::Mul, 0).unwrap().head_count(), 3);
        assert_eq!(init_bundle(&a, FusionKind::MulMix, 0).unwrap().head_count(), 7);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = arch(&[3, 4], 5, &[6], 2);
        let b1 = init_bundle(&a, FusionKind::Mul, 17).unwrap();
        let b2 = init_bundle(&a, FusionKind::Mul, 17).unwrap();
        for ((_, x), (_, y)) in b1.params().iter().zip(b2.params().iter()) {
            let bx: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let by: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bx, by);
        }
        let b3 = init_bundle(&a, FusionKind::Mul, 18).unwrap();
        assert_ne!(b1.params(), b3.params());
    }

    #[test]
    fn zero_dimension_layer_is_config_error() {
        let mut a = arch(&[3, 4], 5, &[6], 2);
        a.encoders[1].hidden = vec![0];
        assert!(matches!(init_bundle(&a, FusionKind::Add, 0), Err(Error::Config(_))));
        let a = arch(&[3, 0], 5, &[6], 2);
        assert!(matches!(init_bundle(&a, FusionKind::Add, 0), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_embedding_dims_rejected() {
        let mut a = arch(&[3, 4], 5, &[], 2);
        a.encoders[1].output_dim = 6;
        assert!(init_bundle(&a, FusionKind::Add, 0).is_err());
        assert!(init_bundle(&a, FusionKind::Early, 0).is_ok());
    }

    #[test]
    fn zero_encoder_gives_zero_embedding() {
        let a = arch(&[3], 4, &[], 2);
        let mut b = init_bundle(&a, FusionKind::Add, 1).unwrap();
        fill(&mut b, 0.0);
        let e = b.encode_vector(0, &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(e, vec![0.0; 4]);
    }

    #[test]
    fn identity_encoder_returns_input() {
        let mut a = arch(&[3], 3, &[], 2);
        a.encoders[0].activation = Activation::Identity;
        let mut b = init_bundle(&a, FusionKind::Add, 1).unwrap();
        let (w, bias) = b.encoder(0).layer_params()[0];
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        *b.params_mut().get_mut(w) = eye;
        b.params_mut().get_mut(bias).data_mut().fill(0.0);
        let v = [0.5, -1.5, 2.0];
        assert_eq!(b.encode_vector(0, &v).unwrap(), v.to_vec());
    }

    #[test]
    fn encode_matches_hand_matmul() {
        let mut a = arch(&[3], 2, &[], 2);
        a.encoders[0].hidden = vec![4];
        let b = init_bundle(&a, FusionKind::Add, 5).unwrap();
        let v = [0.3, -0.7, 1.1];
        let layers = b.encoder(0).layer_params();
        let mut h = v.to_vec();
        for (w, bias) in layers {
            let w = b.params().get(w);
            let bias = b.params().get(bias);
            let (rows, cols) = w.as_rank2();
            let mut out = vec![0.0; cols];
            for j in 0..cols {
                let mut acc = bias.data()[j];
                for i in 0..rows {
                    acc += h[i] * w.get(i, j);
                }
                out[j] = acc.max(0.0);
            }
            h = out;
        }
        let got = b.encode_vector(0, &v).unwrap();
        for (x, y) in got.iter().zip(&h) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_errors() {
        let a = arch(&[3, 2], 2, &[], 2);
        let b = init_bundle(&a, FusionKind::Add, 0).unwrap();
        assert!(b.encode_vector(2, &[0.0; 3]).is_err());
        assert!(b.encode_vector(0, &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_head_is_uniform() {
        let a = arch(&[3], 4, &[5], 2);
        let mut b = init_bundle(&a, FusionKind::Add, 2).unwrap();
        fill(&mut b, 0.0);
        assert_eq!(b.predict_head_vector(0, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn head_output_is_clamped() {
        let a = arch(&[2], 2, &[], 3);
        let mut b = init_bundle(&a, FusionKind::Add, 2).unwrap();
        fill(&mut b, 50.0);
        let (w, _) = b.head(0).layer_params()[0];
        b.params_mut().get_mut(w).data_mut()[0] = 500.0;
        let p = b.predict_head_vector(0, &[1.0, 1.0]).unwrap();
        for v in &p {
            assert!(*v >= PROB_EPS && *v <= 1.0 - PROB_EPS);
        }
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() <= 2.0 * 3.0 * PROB_EPS);
    }

    #[test]
    fn head_matches_composition() {
        let a = arch(&[2], 3, &[4], 3);
        let b = init_bundle(&a, FusionKind::Add, 9).unwrap();
        let u = [0.2, -0.4, 0.9];
        let mut h = u.to_vec();
        let layers = b.head(0).layer_params();
        let n = layers.len();
        for (l, (w, bias)) in layers.into_iter().enumerate() {
            let w = b.params().get(w);
            let bias = b.params().get(bias);
            let (rows, cols) = w.as_rank2();
            h = (0..cols)
                .map(|j| {
                    let z = bias.data()[j] + (0..rows).map(|i| h[i] * w.get(i, j)).sum::<f64>();
                    if l + 1 < n { z.max(0.0) } else { z }
                })
                .collect();
        }
        let z: f64 = h.iter().map(|x| x.exp()).sum();
        let expect: Vec<f64> = h.iter().map(|x| x.exp() / z).collect();
        let got = b.predict_head_vector(0, &u).unwrap();
        for (x, y) in got.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_sample_mean_is_centered() {
        // 10^5 draws from U(-b, b); standard error is b / sqrt(3 n)
        let a = arch(&[400], 250, &[], 2);
        let b = init_bundle(&a, FusionKind::Add, 3).unwrap();
        let (w, _) = b.encoder(0).layer_params()[0];
        let data = b.params().get(w).data();
        assert_eq!(data.len(), 100_000);
        let bound = (6.0f64 / 400.0).sqrt();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let se = bound / (3.0 * data.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
        assert!(data.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn per_candidate_encoders_for_ablation() {
        let mut a = arch(&[2, 3], 4, &[], 2);
        a.options.shared_encoders = false;
        let b = init_bundle(&a, FusionKind::MulMix, 0).unwrap();
        // {0}, {1}, {0,1}: four member slots
        assert_eq!(b.encoder_count(), 4);
        let a = arch(&[2, 3], 4, &[], 2);
        let b = init_bundle(&a, FusionKind::MulMix, 0).unwrap();
        assert_eq!(b.encoder_count(), 2);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let a = arch(&[3, 2], 4, &[3], 2);
        let b = init_bundle(&a, FusionKind::MulMix, 11).unwrap();
        let text = b.to_checkpoint_json().unwrap();
        let back = ModelBundle::from_checkpoint_json(&text).unwrap();
        assert_eq!(b, back);
        for ((_, x), (_, y)) in b.params().iter().zip(back.params().iter()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }
}
