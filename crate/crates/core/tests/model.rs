use epl_core::datagen::{generate_dataset, SceneKind, SceneSpec};
use epl_core::field::{AcConfig, Conversion, SplitterKind};
use epl_core::losses::{cross_entropy_loss, LossConfig};
use epl_core::model::{backward, train, MonitorConfig, TinyNet, TrainConfig, HIDDEN};
use epl_core::{Error, Image};

fn ac7() -> Conversion {
    Conversion::Anisotropic(AcConfig::new(7, SplitterKind::A).unwrap())
}

fn small_spec(count: usize) -> SceneSpec {
    SceneSpec {
        kind: SceneKind::Mixed,
        height: 24,
        width: 24,
        count,
        noise_sigma: 0.1,
        seed: 4,
        ..SceneSpec::default()
    }
}

fn cfg(epochs: usize, loss: LossConfig) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 0.1,
        momentum: 0.9,
        seed: 1,
        loss,
        conversion: ac7(),
        monitor: MonitorConfig::default(),
    }
}

#[test]
fn parameter_count_and_cost_do_not_depend_on_the_loss() {
    let n = TinyNet::param_count(1, 3);
    assert_eq!(n, 9 * HIDDEN + HIDDEN + 9 * HIDDEN * HIDDEN + HIDDEN + HIDDEN * 3 + 3);
    let net = TinyNet::init(1, 3, 0).unwrap();
    assert_eq!(net.params().len(), n);
    assert_eq!(net.forward_macs(64, 64), 64 * 64 * (9 * HIDDEN + 9 * HIDDEN * HIDDEN + HIDDEN * 3));

    let data = generate_dataset(&small_spec(4)).unwrap();
    let base = LossConfig { lambda1: 0.0, lambda2: 0.0, ..LossConfig::default() };
    let a = train(&data, &[], &cfg(1, base), |_| {}).unwrap();
    let b = train(&data, &[], &cfg(1, LossConfig::default()), |_| {}).unwrap();
    assert_eq!(a.net.params().len(), b.net.params().len());
    assert_eq!(a.net.forward_macs(64, 64), b.net.forward_macs(64, 64));
}

#[test]
fn zero_weights_give_the_cross_entropy_gradient() {
    let data = generate_dataset(&small_spec(1)).unwrap();
    let s = &data[0];
    let net = TinyNet::init(1, 3, 7).unwrap();
    let zero = LossConfig { lambda1: 0.0, lambda2: 0.0, ..LossConfig::default() };
    let (parts, g) = backward(&net, &s.image, &s.labels, &ac7(), &zero, None).unwrap();
    let acts = net.forward_cached(&s.image).unwrap();
    let ce = cross_entropy_loss(&acts.probs, &s.labels).unwrap();
    assert_eq!(parts.total, ce.value);
    let expected = net.backward_from_probs(&s.image, &acts, &ce.gradient.unwrap());
    assert_eq!(g, expected);
    // the potential terms are still reported
    assert!(parts.point > 0.0 && parts.line.is_finite());
}

#[test]
fn training_is_deterministic() {
    let data = generate_dataset(&small_spec(8)).unwrap();
    let c = cfg(2, LossConfig::default());
    let a = train(&data, &[], &c, |_| {}).unwrap();
    let b = train(&data, &[], &c, |_| {}).unwrap();
    assert_eq!(a.net.params(), b.net.params());
    assert_eq!(a.history, b.history);
    let other = train(&data, &[], &TrainConfig { seed: 2, ..c }, |_| {}).unwrap();
    assert_ne!(a.net.params(), other.net.params());
}

#[test]
fn overfits_a_single_sample() {
    let data = generate_dataset(&SceneSpec {
        kind: SceneKind::AdjacentRects,
        count: 1,
        height: 16,
        width: 16,
        ..small_spec(1)
    }).unwrap();
    let c = TrainConfig {
        batch_size: 1,
        learning_rate: 0.2,
        ..cfg(200, LossConfig::default())
    };
    let mut seen = 0;
    let out = train(&data, &[], &c, |_| seen += 1).unwrap();
    assert_eq!(seen, 200);
    let last = out.history.last().unwrap();
    assert!(last.ce < 0.1, "{last:?}");
    assert!(out.history[0].ce > last.ce);
}

#[test]
fn divergence_is_reported() {
    let data = generate_dataset(&small_spec(2)).unwrap();
    let c = TrainConfig { learning_rate: 1e300, momentum: 0.0, ..cfg(3, LossConfig::default()) };
    match train(&data, &[], &c, |_| {}) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn rejects_bad_configs_and_inputs() {
    let data = generate_dataset(&small_spec(2)).unwrap();
    for bad in [
        TrainConfig { epochs: 0, ..cfg(1, LossConfig::default()) },
        TrainConfig { batch_size: 0, ..cfg(1, LossConfig::default()) },
        TrainConfig { learning_rate: -1.0, ..cfg(1, LossConfig::default()) },
        TrainConfig { momentum: 1.0, ..cfg(1, LossConfig::default()) },
        cfg(1, LossConfig { mu_exp: 3, ..LossConfig::default() }),
    ] {
        assert!(train(&data, &[], &bad, |_| {}).is_err());
    }
    assert!(train(&[], &[], &cfg(1, LossConfig::default()), |_| {}).is_err());
    let net = TinyNet::init(1, 3, 0).unwrap();
    assert!(net.forward(&Image::zeros(2, 8, 8)).is_err());
}
