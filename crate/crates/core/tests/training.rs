mod common;

use common::*;
use proptest::prelude::*;
use tgraphx::model::Target;
use tgraphx::nn::loss::PredictionBundle;
use tgraphx::tensor::{ParamStore, Shape, Tensor};
use tgraphx::train::adam::{Adam, AdamConfig};
use tgraphx::train::report::EvalReport;
use tgraphx::train::{fit, load_checkpoint, read_checkpoint, save_checkpoint, FitOptions, MetricsLog, TrainConfig, TrainState};
use tgraphx::{ErrorKind, GraphDataset, Model};

/// Scalar Adam written out step by step.
fn adam_oracle(cfg: &AdamConfig, p0: f64, grads: &[f64]) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, &g) in grads.iter().enumerate() {
        let g = g + cfg.weight_decay * p;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mhat = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
        let vhat = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
        p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    p
}

fn one_param(values: Vec<f64>) -> (ParamStore<f64>, tgraphx::tensor::ParamId) {
    let mut p = ParamStore::new();
    let id = p.add("w", Tensor::vector(values), true).unwrap();
    (p, id)
}

proptest! {
    #[test]
    fn adam_matches_scalar_oracle(
        grads in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..12),
        p0 in proptest::collection::vec(-2.0f64..2.0, 3),
        lr in 1e-4f64..1e-1,
        wd in prop_oneof![Just(0.0), 1e-4f64..1e-1],
    ) {
        let cfg = AdamConfig { lr, weight_decay: wd, ..AdamConfig::default() };
        let (mut params, id) = one_param(p0.clone());
        let mut adam = Adam::new(cfg, &params);
        for g in &grads {
            let map = [(id, Tensor::vector(g.clone()))].into_iter().collect();
            adam.step(&mut params, &map).unwrap();
        }
        for i in 0..3 {
            let series: Vec<f64> = grads.iter().map(|g| g[i]).collect();
            let want = adam_oracle(&cfg, p0[i], &series);
            prop_assert!((params.get(id).data()[i] - want).abs() < 1e-12 * (1.0 + want.abs()));
        }
        prop_assert_eq!(adam.t, grads.len() as u64);
    }
}

#[test]
fn adam_fixed_points() {
    let cfg = AdamConfig { lr: 1e-2, ..AdamConfig::default() };
    let (mut params, id) = one_param(vec![1.0, -1.0]);
    let mut adam = Adam::new(cfg, &params);
    let zero = [(id, Tensor::zeros(Shape::vector(2)))].into_iter().collect();
    adam.step(&mut params, &zero).unwrap();
    assert_eq!(params.get(id).data(), &[1.0, -1.0]);

    let mut adam = Adam::new(cfg, &params);
    let g = [(id, Tensor::vector(vec![0.3, -7.0]))].into_iter().collect();
    let mut prev = params.get(id).clone();
    for step in 0..2000 {
        adam.step(&mut params, &g).unwrap();
        let now = params.get(id).clone();
        if step > 1500 {
            let d0 = now.data()[0] - prev.data()[0];
            let d1 = now.data()[1] - prev.data()[1];
            assert!((d0 + 1e-2).abs() < 1e-8 && (d1 - 1e-2).abs() < 1e-8, "{d0} {d1}");
        }
        prev = now;
    }
}

#[test]
fn adam_rejects_bad_gradients() {
    let (mut params, id) = one_param(vec![0.5]);
    let mut adam = Adam::new(AdamConfig::default(), &params);
    let before = (params.clone(), adam.clone());
    let nan = [(id, Tensor::vector(vec![f64::NAN]))].into_iter().collect();
    let err = adam.step(&mut params, &nan).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Numeric);
    assert!(err.to_string().contains('w'));
    assert!(params_equal(&params, &before.0));
    assert_eq!(adam, before.1);
    assert!(AdamConfig { lr: 0.0, ..AdamConfig::default() }.validate().is_err());
    assert!(AdamConfig { beta2: 1.0, ..AdamConfig::default() }.validate().is_err());
}

fn micro_setup(lr: f64) -> (Model, TrainConfig, TrainState<f64>, GraphDataset<f64>, GraphDataset<f64>) {
    let (model, params) = Model::new::<f64>(micro_detection_config()).unwrap();
    let train = TrainConfig {
        epochs: 5,
        batch_size: 8,
        adam: AdamConfig { lr, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let state = TrainState::new(params, train.adam);
    let data = GraphDataset::new(micro_detection(40, 1)).unwrap();
    let val = GraphDataset::new(micro_detection(12, 2)).unwrap();
    (model, train, state, data, val)
}

#[test]
fn micro_task_loss_strictly_decreases() {
    let (model, cfg, mut state, data, val) = micro_setup(3e-3);
    let summary = fit(&model, &cfg, &mut state, &data, &FitOptions { val: Some(&val), checkpoint_dir: None }, |_| Ok(())).unwrap();
    let losses: Vec<f64> = summary.records.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    assert_eq!(summary.records.iter().filter(|r| r.split == "val").count(), 5);
    assert_eq!(state.epoch, 5);
    assert_eq!(state.step, 5 * 5);
}

#[test]
fn zero_epochs_changes_nothing() {
    let (model, mut cfg, mut state, data, _) = micro_setup(3e-3);
    cfg.epochs = 0;
    let before = state.params.clone();
    let summary = fit(&model, &cfg, &mut state, &data, &FitOptions::default(), |_| Ok(())).unwrap();
    assert!(summary.records.is_empty());
    assert!(params_equal(&before, &state.params));
    assert_eq!((state.epoch, state.step, state.adam.t), (0, 0, 0));
}

fn run_logged(dir: &std::path::Path, name: &str, epochs: usize) -> (Vec<u8>, ParamStore<f64>) {
    let (model, mut cfg, mut state, data, val) = micro_setup(3e-3);
    cfg.epochs = epochs;
    let path = dir.join(name);
    let mut log = MetricsLog::create(&path, false).unwrap();
    fit(&model, &cfg, &mut state, &data, &FitOptions { val: Some(&val), checkpoint_dir: None }, |r| log.write(r)).unwrap();
    (std::fs::read(&path).unwrap(), state.params)
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, pa) = run_logged(dir.path(), "a.jsonl", 3);
    let (b, pb) = run_logged(dir.path(), "b.jsonl", 3);
    assert_eq!(a, b);
    assert!(params_equal(&pa, &pb));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["epoch", "split", "loss", "accuracy"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let (model, mut cfg, mut full, data, val) = micro_setup(3e-3);
    cfg.epochs = 4;
    let opts = FitOptions { val: Some(&val), checkpoint_dir: None };
    let whole = fit(&model, &cfg, &mut full, &data, &opts, |_| Ok(())).unwrap();

    let (_, mut first_cfg, mut part, _, _) = micro_setup(3e-3);
    first_cfg.epochs = 2;
    let ckpt_opts = FitOptions { val: Some(&val), checkpoint_dir: Some(dir.path().to_path_buf()) };
    let head = fit(&model, &first_cfg, &mut part, &data, &ckpt_opts, |_| Ok(())).unwrap();
    drop(part);

    let (model2, mut cfg2, mut resumed) = load_checkpoint::<f64>(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(model2.cfg, model.cfg);
    assert_eq!(resumed.epoch, 2);
    cfg2.epochs = 4;
    let tail = fit(&model2, &cfg2, &mut resumed, &data, &opts, |_| Ok(())).unwrap();

    let joined: Vec<_> = head.records.into_iter().chain(tail.records).collect();
    assert_eq!(joined, whole.records);
    assert!(params_equal(&resumed.params, &full.params));
    assert_eq!(resumed.adam, full.adam);
    assert_eq!(resumed.best_epoch, full.best_epoch);
    assert_eq!(resumed.best_val_accuracy, full.best_val_accuracy);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (model, cfg, mut state, data, val) = micro_setup(3e-3);
    let cfg = TrainConfig { epochs: 2, ..cfg };
    fit(&model, &cfg, &mut state, &data, &FitOptions { val: Some(&val), checkpoint_dir: None }, |_| Ok(())).unwrap();
    let path = dir.path().join("state.ckpt");
    save_checkpoint(&path, &model, &cfg, &state).unwrap();
    let (m2, c2, s2) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(m2.cfg, model.cfg);
    assert_eq!(c2, cfg);
    assert!(params_equal(&s2.params, &state.params));
    assert_eq!(s2.adam, state.adam);
    for id in state.params.trainable_ids() {
        assert_eq!(s2.adam.moments(id), state.adam.moments(id));
    }
    assert!(params_equal(s2.best_params.as_ref().unwrap(), state.best_params.as_ref().unwrap()));
    assert_eq!((s2.epoch, s2.step), (state.epoch, state.step));

    let (meta, ck) = read_checkpoint(&path).unwrap();
    assert_eq!(meta.precision, "f64");
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"TGXCKPT\0");
    assert!(ck.tensors.iter().any(|(n, _)| n.starts_with("adam.v.")));

    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
}

#[test]
fn non_finite_parameters_fail_numerically() {
    let (model, cfg, mut state, data, _) = micro_setup(3e-3);
    let id = state.params.id("classifier.weight").unwrap();
    state.params.get_mut(id).data_mut()[0] = f64::NAN;
    let err = fit(&model, &cfg, &mut state, &data, &FitOptions::default(), |_| Ok(())).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Numeric, "{err}");
}

#[test]
fn empty_evaluation_is_an_error() {
    let (model, _, state, _, _) = micro_setup(3e-3);
    let empty = GraphDataset::<f64>::new(vec![]).unwrap();
    assert!(tgraphx::train::predict_dataset(&model, &state.params, &empty, 8).is_err());
}

#[test]
fn perfect_predictions_report_identity() {
    let graphs = micro_detection(30, 3);
    let targets: Vec<usize> = graphs.iter().map(|g| g.graph_label.unwrap()).collect();
    let logits = targets.iter().flat_map(|&t| (0..3).map(move |k| if k == t { 5.0 } else { -5.0 })).collect();
    let bundle = PredictionBundle { logits, classes: 3, targets, ..Default::default() };
    let names = tgraphx::train::report::default_class_names(3);
    let r = EvalReport::new("test", &bundle, 0.0, &graphs, Target::Graph, names).unwrap();
    assert_eq!(r.accuracy, 1.0);
    for (i, row) in r.normalized.iter().enumerate() {
        let present = r.confusion[i].iter().sum::<usize>() > 0;
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v, if i == j && present { 1.0 } else { 0.0 });
        }
    }
    let iou = r.iou.as_ref().unwrap();
    let best: f64 = graphs.iter().map(|g| g.node_values.as_ref().unwrap().iter().cloned().fold(0.0, f64::max)).sum::<f64>() / 30.0;
    assert!((iou.get("TGraphX").unwrap() - best).abs() < 1e-12);
    let jsonl = r.to_jsonl();
    assert!(jsonl.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert_eq!(jsonl.lines().filter(|l| l.contains("\"kind\":\"iou\"")).count(), 3);
    assert_eq!(EvalReport::from_jsonl(&jsonl).unwrap(), r);
    assert!(EvalReport::from_jsonl("{\"kind\":\"iou\"}").is_err());
    let table = r.table();
    assert!(table.contains("Test Avg IoU") && table.contains("True: Union"));
}
