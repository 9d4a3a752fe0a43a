use super::*;
use crate::gnn::{build_model, ModelKind, ModelSpec};
use crate::graphkit::{build_graph, ConstructionParams};
use crate::pipeline::generate_synthetic;

fn blob_context(samples: usize, separation: f64, seed: u64) -> (GraphContext, Vec<usize>) {
    let ds = generate_synthetic(samples, 2, 4, separation, 1.0, seed).unwrap();
    let params = ConstructionParams {
        k: 3,
        ..Default::default()
    };
    let g = build_graph(&ds.features, &ds.labels, &params).unwrap();
    (GraphContext::from_graph(&g).unwrap(), g.y)
}

fn spec(kind: ModelKind, hidden: usize) -> ModelSpec {
    ModelSpec {
        hidden_dim: hidden,
        binary_head: true,
        seed: 1,
        ..ModelSpec::new(kind, 2)
    }
}

#[test]
fn single_class_task_is_learned_quickly() {
    let (ctx, _) = blob_context(40, 2.0, 3);
    let labels = vec![0; 40];
    let mut model = build_model(&spec(ModelKind::Gcn, 8), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        lr: 0.1,
        ..Default::default()
    };
    let idx: Vec<usize> = (0..40).collect();
    let h = train(model.as_mut(), &ctx, &labels, &idx, &cfg).unwrap();
    assert_eq!(h.records.len(), 10);
    assert!(h.records[9].loss < 0.05, "{:?}", h.losses());
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let (ctx, labels) = blob_context(30, 2.0, 4);
    let mut model = build_model(&spec(ModelKind::Sage, 8), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        lr: 0.0,
        ..Default::default()
    };
    let idx: Vec<usize> = (0..30).collect();
    let h = train(model.as_mut(), &ctx, &labels, &idx, &cfg).unwrap();
    assert!(h.losses().windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn separable_blobs_reach_full_training_accuracy() {
    let (ctx, labels) = blob_context(200, 10.0, 5);
    let mut model = build_model(&spec(ModelKind::Gcn, 64), 4).unwrap();
    let idx: Vec<usize> = (0..200).collect();
    let h = train(model.as_mut(), &ctx, &labels, &idx, &TrainConfig::default()).unwrap();
    assert!(h.records.last().unwrap().loss <= h.records[0].loss);
    let m = evaluate(model.as_ref(), &ctx, &labels, &idx, 2).unwrap();
    assert!(m.accuracy >= 0.99, "{m:?}");
}

#[test]
fn schedule_follows_cosine_and_is_recorded() {
    let (ctx, labels) = blob_context(20, 2.0, 6);
    let mut model = build_model(&spec(ModelKind::LogisticRegression, 4), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        scheduler_t_max: 2,
        ..Default::default()
    };
    let h = train(model.as_mut(), &ctx, &labels, &[0, 1, 2, 3, 10, 11], &cfg).unwrap();
    let lrs: Vec<f64> = h.records.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[0], 0.001);
    assert!((lrs[1] - 0.0005).abs() < 1e-15);
    assert_eq!(&lrs[2..], &[0.0, 0.0]);
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("epoch,lr,loss\n0,0.001,"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn runs_are_deterministic() {
    let (ctx, labels) = blob_context(40, 3.0, 7);
    let idx: Vec<usize> = (0..30).collect();
    let test: Vec<usize> = (30..40).collect();
    let cfg = TrainConfig {
        epochs: 15,
        lr: 0.01,
        ..Default::default()
    };
    let run = || {
        let mut s = spec(ModelKind::CagnGatFusion, 4);
        s.cagn_heads = [2, 2, 1];
        let mut model = build_model(&s, 4).unwrap();
        let h = train(model.as_mut(), &ctx, &labels, &idx, &cfg).unwrap();
        (h, evaluate(model.as_ref(), &ctx, &labels, &test, 2).unwrap())
    };
    let (h1, m1) = run();
    let (h2, m2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
}

#[test]
fn loss_and_output_width_must_agree() {
    let (ctx, labels) = blob_context(20, 2.0, 8);
    let mut model = build_model(&ModelSpec::new(ModelKind::Mlp, 2), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    assert!(train(model.as_mut(), &ctx, &labels, &[0, 1], &cfg).is_err());
    let ce = TrainConfig {
        loss: LossKind::CrossEntropy,
        ..cfg
    };
    assert!(train(model.as_mut(), &ctx, &labels, &[0, 1], &ce).is_ok());
}

#[test]
fn empty_masks_are_rejected() {
    let (ctx, labels) = blob_context(10, 2.0, 9);
    let mut model = build_model(&spec(ModelKind::Gcn, 4), 4).unwrap();
    assert!(matches!(
        train(model.as_mut(), &ctx, &labels, &[], &TrainConfig::default()),
        Err(TrainError::EmptyMask(_))
    ));
    assert!(matches!(
        evaluate(model.as_ref(), &ctx, &labels, &[], 2),
        Err(TrainError::EmptyMask(_))
    ));
}

#[test]
fn measure_examples() {
    let ((), secs, mb) = measure_run(|| ());
    assert!(secs < 0.01);
    assert_eq!(mb, 0.0);
    let (_, _, mb) = measure_run(|| Tensor::zeros(vec![1000, 1000]).numel());
    assert!(mb >= 7.63, "{mb}");
    let (_, _, mb) = measure_run(|| {
        let a = Tensor::zeros(vec![1000, 1000]);
        drop(a);
        let b = Tensor::zeros(vec![1000, 1000]);
        b.numel()
    });
    assert_eq!(mb, 7.63);
}

#[test]
fn loss_kind_resolution() {
    assert_eq!(LossKind::Auto.resolve(2).unwrap(), LossKind::Binary);
    assert_eq!(LossKind::Auto.resolve(5).unwrap(), LossKind::CrossEntropy);
    assert_eq!(LossKind::CrossEntropy.resolve(2).unwrap(), LossKind::CrossEntropy);
    assert!(LossKind::Binary.resolve(3).is_err());
}
