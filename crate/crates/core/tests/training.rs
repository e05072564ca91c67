//! Training loops on small synthetic traces: convergence, determinism and the
//! equivalences that pin down how the losses are wired.

use gprda_core::arch::{ArchConfig, Model, ModelKind};
use gprda_core::nn::{Group, Tape, Tensor};
use gprda_core::train::{
    train_cnn, train_dann, train_phydann, train_source_only, Supervised, TrainConfig, TrainReport,
};
use gprda_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 400;

/// Two echoes whose delay and width follow the two scaled labels; the target
/// domain shifts and smears them and adds a noise floor.
fn trace(len: usize, label: &[f64], target: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = len as f64 / N as f64;
    let (shift, floor) = if target { (6.0, 0.08) } else { (0.0, 0.0) };
    let c1 = (40.0 + shift) * s;
    let c2 = (90.0 + 220.0 * label[0] + shift) * s;
    let w = (6.0 + 14.0 * label[1] + if target { 3.0 } else { 0.0 }) * s;
    let mut x: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64;
            let bump = |c: f64, a: f64| a * (-((t - c) / w).powi(2)).exp();
            bump(c1, 1.0) + bump(c2, 0.6) + floor * rng.gen::<f64>()
        })
        .collect();
    let m = x.iter().copied().fold(0.0, f64::max);
    x.iter_mut().for_each(|v| *v /= m);
    x
}

struct Toy {
    inputs: Vec<Vec<f64>>,
    labels: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
}

impl Toy {
    fn new(n: usize, n_target: usize) -> Self {
        Self::with_len(N, n, n_target)
    }

    fn with_len(len: usize, n: usize, n_target: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let labels: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let inputs = labels.iter().map(|l| trace(len, l, false, &mut rng)).collect();
        let target = (0..n_target)
            .map(|_| {
                let l = [rng.gen(), rng.gen()];
                trace(len, &l, true, &mut rng)
            })
            .collect();
        Self { inputs, labels, target }
    }

    fn source(&self) -> Supervised<'_> {
        Supervised {
            inputs: &self.inputs,
            targets: &self.labels,
        }
    }
}

fn arch() -> ArchConfig {
    ArchConfig::new(N, 2).with_width_divisor(8)
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn group_values(m: &Model, group: Group) -> Vec<(String, Vec<f64>)> {
    m.store
        .indices_of(group)
        .into_iter()
        .map(|i| (m.store.params()[i].name.clone(), m.store.value(i).data().to_vec()))
        .collect()
}

fn losses(r: &TrainReport) -> Vec<(f64, Option<f64>)> {
    r.epochs.iter().map(|e| (e.regression, e.adversarial)).collect()
}

#[test]
fn cnn_fits_a_toy_grid() {
    let toy = Toy::new(200, 0);
    let mut m = Model::build(ModelKind::Cnn, arch(), 1).unwrap();
    let r = train_cnn(&mut m, toy.source(), &cfg(30)).unwrap();
    assert_eq!(r.epochs.len(), 30);
    let last = r.final_regression().unwrap();
    assert!(last < 0.05, "final training MSE {last}");
    assert!(r.epochs.iter().all(|e| e.regression.is_finite()));
}

#[test]
fn same_seed_reruns_are_bit_identical() {
    let toy = Toy::new(64, 40);
    let run = || {
        let mut m = Model::build(ModelKind::PhyDann2, arch(), 2).unwrap();
        let r = train_phydann(&mut m, toy.source(), &toy.target, &cfg(2)).unwrap();
        (r.epochs, r.lambdas, m.store)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    for (p, q) in a.2.params().iter().zip(b.2.params()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn zero_epochs_leaves_the_model_unchanged() {
    let toy = Toy::new(32, 16);
    let mut m = Model::build(ModelKind::Dann, arch(), 3).unwrap();
    let before = m.store.clone();
    let r = train_dann(&mut m, toy.source(), &toy.target, &cfg(0)).unwrap();
    assert!(r.epochs.is_empty());
    for (p, q) in before.params().iter().zip(m.store.params()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn zero_lambda_dann_equals_supervised_training() {
    let toy = Toy::new(64, 48);
    let c = TrainConfig {
        lambda_override: Some(0.0),
        ..cfg(3)
    };
    let mut dann = Model::build(ModelKind::Dann, arch(), 4).unwrap();
    let disc_before = group_values(&dann, Group::Discriminator);
    train_dann(&mut dann, toy.source(), &toy.target, &c).unwrap();
    let mut cnn = Model::build(ModelKind::Cnn, arch(), 4).unwrap();
    train_cnn(&mut cnn, toy.source(), &c).unwrap();
    for g in [Group::Extractor, Group::Estimator] {
        assert_eq!(group_values(&dann, g), group_values(&cnn, g));
    }
    assert_eq!(group_values(&dann, Group::Discriminator), disc_before);
}

#[test]
fn source_only_training_touches_only_shared_blocks() {
    let toy = Toy::new(32, 0);
    let mut m = Model::build(ModelKind::PhyDann1, arch(), 6).unwrap();
    let disc = group_values(&m, Group::Discriminator);
    let rec = group_values(&m, Group::Reconstructor);
    let est = group_values(&m, Group::Estimator);
    train_source_only(&mut m, toy.source(), &cfg(1)).unwrap();
    assert_eq!(group_values(&m, Group::Discriminator), disc);
    assert_eq!(group_values(&m, Group::Reconstructor), rec);
    assert_ne!(group_values(&m, Group::Estimator), est);
}

#[test]
fn unweighted_reconstruction_reduces_to_dann() {
    let toy = Toy::new(64, 48);
    let c = TrainConfig {
        recon_weight: 0.0,
        ..cfg(3)
    };
    let mut dann = Model::build(ModelKind::Dann, arch(), 7).unwrap();
    let a = train_dann(&mut dann, toy.source(), &toy.target, &c).unwrap();
    let mut phy = Model::build(ModelKind::PhyDann1, arch(), 7).unwrap();
    let b = train_phydann(&mut phy, toy.source(), &toy.target, &c).unwrap();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.lambdas, b.lambdas);
    for g in [Group::Extractor, Group::Estimator, Group::Discriminator] {
        assert_eq!(group_values(&dann, g), group_values(&phy, g));
    }
}

#[test]
fn lambda_trace_runs_from_zero_to_one() {
    let toy = Toy::new(64, 30);
    let mut m = Model::build(ModelKind::Dann, arch(), 8).unwrap();
    let r = train_dann(&mut m, toy.source(), &toy.target, &cfg(3)).unwrap();
    assert_eq!(r.lambdas.len(), r.iterations);
    assert_eq!(r.lambdas[0], 0.0);
    assert!(*r.lambdas.last().unwrap() > 0.999, "{:?}", r.lambdas.last());
    assert!(r.lambdas.windows(2).all(|w| w[1] > w[0]));
    assert!(r.epochs.iter().all(|e| e.domain_accuracy.is_some()));
}

#[test]
fn reconstruction_error_halves() {
    // Long enough traces that the echoes are wider than the final
    // upsampling step.
    let len = 1640;
    let toy = Toy::with_len(len, 256, 128);
    let c = TrainConfig {
        batch_size: 4,
        ..cfg(12)
    };
    for kind in [ModelKind::PhyDann1, ModelKind::PhyDann2] {
        let mut m = Model::build(kind, ArchConfig::new(len, 2).with_width_divisor(8), 9).unwrap();
        let r = train_phydann(&mut m, toy.source(), &toy.target, &c).unwrap();
        let first = r.epochs[0].reconstruction.unwrap();
        let last = r.epochs.last().unwrap().reconstruction.unwrap();
        assert!(last <= 0.5 * first, "{kind:?}: {first} -> {last}");
    }
}

#[test]
fn variant_two_reconstruction_follows_the_estimator() {
    let toy = Toy::new(4, 0);
    let x = &toy.inputs[..2];
    for (kind, depends) in [(ModelKind::PhyDann2, true), (ModelKind::PhyDann1, false)] {
        let m = Model::build(kind, arch(), 10).unwrap();
        let mut reinit = m.clone();
        let fresh = Model::build(kind, arch(), 99).unwrap();
        for i in reinit.store.indices_of(Group::Estimator) {
            *reinit.store.value_mut(i) = fresh.store.value(i).clone();
        }
        let changed = m.reconstruct_batch(x, None).unwrap() != reinit.reconstruct_batch(x, None).unwrap();
        assert_eq!(changed, depends, "{kind:?}");
    }
}

#[test]
fn adversarial_loss_sends_nothing_to_the_estimator() {
    let toy = Toy::new(4, 4);
    let m = Model::build(ModelKind::Dann, arch(), 11).unwrap();
    let mut tape = Tape::new();
    let p = tape.bind(&m.store);
    let xs = tape.constant(Tensor::from_traces(&toy.inputs).unwrap());
    let xt = tape.constant(Tensor::from_traces(&toy.target).unwrap());
    let fs = m.features(&mut tape, &p, xs).unwrap();
    let ft = m.features(&mut tape, &p, xt).unwrap();
    let _ = m.estimate(&mut tape, &p, fs).unwrap();
    let ds = m.discriminate(&mut tape, &p, fs, 0.7).unwrap();
    let dt = m.discriminate(&mut tape, &p, ft, 0.7).unwrap();
    let ls = tape.cross_entropy(ds, &[0; 4]).unwrap();
    let lt = tape.cross_entropy(dt, &[1; 4]).unwrap();
    let l = tape.add(ls, lt).unwrap();
    let g = tape.backward(l).unwrap();
    let pg = tape.param_grads(&g, &m.store);
    for i in m.store.indices_of(Group::Estimator) {
        assert!(pg[i].data().iter().all(|&v| v == 0.0));
    }
    let reaches_extractor = m
        .store
        .indices_of(Group::Extractor)
        .into_iter()
        .any(|i| pg[i].data().iter().any(|&v| v != 0.0));
    assert!(reaches_extractor);
}

#[test]
fn invalid_inputs_are_rejected() {
    let toy = Toy::new(8, 0);
    let mut m = Model::build(ModelKind::Dann, arch(), 12).unwrap();
    assert!(matches!(
        train_dann(&mut m, toy.source(), &[], &cfg(1)),
        Err(Error::Config(_))
    ));
    let big = TrainConfig {
        batch_size: 9,
        ..cfg(1)
    };
    assert!(matches!(
        train_dann(&mut m, toy.source(), &toy.inputs, &big),
        Err(Error::Config(_))
    ));
    let mut cnn = Model::build(ModelKind::Cnn, arch(), 12).unwrap();
    assert!(train_dann(&mut cnn, toy.source(), &toy.inputs, &cfg(1)).is_err());
}
