use mmfuse::data::MultimodalBatch;
use mmfuse::fusion::{self, FusionConfig, FusionKind, QGradientMode};
use mmfuse::models::{init_bundle, Activation, ArchitectureSpec, BundleOptions, EncoderSpec, ModelBundle};
use mmfuse::tensor::{finite_difference_check, NodeId, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch(dims: &[usize]) -> ArchitectureSpec {
    ArchitectureSpec {
        encoders: dims
            .iter()
            .map(|&d| EncoderSpec { input_dim: d, hidden: vec![4], output_dim: 3, activation: Activation::Relu })
            .collect(),
        head_hidden: vec![3],
        classes: 3,
        options: BundleOptions::default(),
    }
}

fn batch(dims: &[usize], n: usize, classes: usize, seed: u64) -> MultimodalBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MultimodalBatch {
        modalities: dims
            .iter()
            .map(|&d| Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap())
            .collect(),
        labels: (0..n).map(|_| rng.gen_range(0..classes)).collect(),
        ids: (0..n).collect(),
    }
}

/// Random biases keep pre-activations off the ReLU kink at exactly zero,
/// which zero-initialised biases hit whenever a whole layer is inactive.
fn randomized(kind: FusionKind, dims: &[usize], seed: u64) -> ModelBundle {
    let mut b = init_bundle(&arch(dims), kind, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let store = b.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.name(id).ends_with("bias") {
            for v in store.get_mut(id).data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    b
}

fn with_params(bundle: &ModelBundle, store: &ParamStore) -> ModelBundle {
    let mut b = bundle.clone();
    *b.params_mut() = store.clone();
    b
}

#[test]
fn full_gradient_matches_central_differences() {
    let dims = [3, 2];
    for kind in [FusionKind::Early, FusionKind::Late, FusionKind::Add, FusionKind::Mul, FusionKind::MulMix] {
        for seed in 0..3 {
            let bundle = randomized(kind, &dims, seed);
            let b = batch(&dims, 5, 3, 100 + seed);
            let mut cfg = FusionConfig::new(kind);
            cfg.beta = 0.7;
            let report = finite_difference_check(
                bundle.params(),
                |t, s| fusion::training_loss(t, &with_params(&bundle, s), &b, &cfg),
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{kind} seed {seed}: {:?}", report.worst());
        }
    }
}

/// With `q` detached the gradient is that of the surrogate in which every
/// `q` is frozen at its current value.
#[test]
fn stop_gradient_matches_frozen_q_surrogate() {
    let dims = [2, 3, 2];
    for seed in 0..3 {
        let bundle = randomized(FusionKind::Mul, &dims, seed);
        let b = batch(&dims, 4, 3, 7 + seed);
        let beta = 0.6;
        let probs: Vec<Vec<Vec<f64>>> = {
            let mut t = Tape::new();
            let p = fusion::branch_probabilities(&mut t, &bundle, &b).unwrap();
            p.iter()
                .map(|&id| (0..b.len()).map(|r| t.value(id).row_slice(r).to_vec()).collect())
                .collect()
        };
        // q[r][i] at the true label
        let q: Vec<Vec<f64>> = (0..b.len())
            .map(|r| {
                let pr: Vec<Vec<f64>> = probs.iter().map(|p| p[r].clone()).collect();
                (0..dims.len()).map(|i| fusion::q_factor(&pr, b.labels[r], i, beta)).collect()
            })
            .collect();

        let surrogate = |t: &mut Tape, s: &ParamStore| -> mmfuse::Result<NodeId> {
            let bb = with_params(&bundle, s);
            let p = fusion::branch_probabilities(t, &bb, &b)?;
            let mut terms = Vec::new();
            for (i, &pi) in p.iter().enumerate() {
                let lp = t.ln(pi);
                let picked = t.gather(lp, &b.labels)?;
                let qi = t.constant(Tensor::matrix(b.len(), 1, q.iter().map(|row| row[i]).collect())?);
                terms.push(t.mul(picked, qi)?);
            }
            let total = t.add_n(&terms)?;
            let m = t.mean(total);
            Ok(t.scale(m, -1.0))
        };

        let mut cfg = FusionConfig::new(FusionKind::Mul);
        cfg.beta = beta;
        cfg.q_gradient = QGradientMode::Stop;
        let mut t1 = Tape::new();
        let l1 = fusion::training_loss(&mut t1, &bundle, &b, &cfg).unwrap();
        let mut t2 = Tape::new();
        let l2 = surrogate(&mut t2, bundle.params()).unwrap();
        assert!((t1.value(l1).data()[0] - t2.value(l2).data()[0]).abs() < 1e-12);

        let mut s1 = bundle.params().clone();
        t1.backward(l1, &mut s1).unwrap();
        let report = finite_difference_check(bundle.params(), surrogate, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.worst());
        let mut s2 = bundle.params().clone();
        t2.backward(l2, &mut s2).unwrap();
        for id in s1.ids() {
            for (a, b) in s1.get(id).grad().unwrap().iter().zip(s2.get(id).grad().unwrap()) {
                assert!((a - b).abs() < 1e-12, "{}", s1.name(id));
            }
        }
    }
}

#[test]
fn boosted_loss_vanishes_on_margin_correct_samples() {
    let dims = [2, 2];
    let bundle = init_bundle(&arch(&dims), FusionKind::Mul, 5).unwrap();
    let mut b = batch(&dims, 6, 3, 9);
    let cfg = FusionConfig { boosted: true, delta: 0.0, ..FusionConfig::new(FusionKind::Mul) };
    // relabel every sample with its predicted class so all are correct
    let pred = fusion::predict(&bundle, &b, &cfg).unwrap();
    b.labels = pred.classes.clone();
    let mut t = Tape::new();
    let loss = fusion::training_loss(&mut t, &bundle, &b, &cfg).unwrap();
    assert_eq!(t.value(loss).data()[0], 0.0);
    let mut s = bundle.params().clone();
    t.backward(loss, &mut s).unwrap();
    for id in s.ids() {
        assert!(s.get(id).grad().unwrap().iter().all(|g| *g == 0.0), "{}", s.name(id));
    }
}
