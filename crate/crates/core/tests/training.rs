mod common;

use hetmotion::config::{Dataset, RunConfig};
use hetmotion::eval::{evaluate, query_mse, size_cap_ablation, Reduction, HORIZONS_MS};
use hetmotion::model::{Forecaster, Trainable, ZeroVelocity};
use hetmotion::optim::{Adam, AdamConfig};
use hetmotion::train::{meta_train, meta_train_validated};
use hetmotion::{Dims, GraphHetNet, Tensor3};

fn desk(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        hidden: 4,
        ds_inner_depth: 1,
        gcn_depth: 1,
        gru_depth: 1,
        residual: true,
        lr: 3e-3,
        epochs: 20,
        batches_per_epoch: 10,
        train_actions: vec!["directions".into(), "greeting".into(), "phoning".into()],
        input_len: 20,
        max_vertices: Some(5),
        eval_tasks: 5,
        ..RunConfig::default()
    }
}

#[test]
fn desk_training_reduces_loss() {
    let cfg = desk(1);
    let data = Dataset::prepare(&cfg).unwrap();
    let mut model = GraphHetNet::new(cfg.model_config(), cfg.seed).unwrap();
    let report = meta_train(&mut model, &data.train_source(&cfg), &cfg.train_actions, &cfg.train_config()).unwrap();
    assert_eq!(report.epoch_losses.len(), 20);
    assert_eq!(report.batch_losses.len(), 200);
    assert_eq!(report.tasks_seen, 600);
    let first = report.epoch_losses[0];
    let last = *report.epoch_losses.last().unwrap();
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn adam_two_steps_on_quadratic() {
    // f(x) = x², gradient 2x
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut p = vec![Tensor3::scalar(1.0)];
    let mut opt = Adam::new(cfg, &p);
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
    let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
    for t in 1..=2 {
        let g = 2.0 * x;
        opt.step(&mut p, &[Tensor3::scalar(g)]).unwrap();
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        let before = x;
        x -= 0.1 * mh / (vh.sqrt() + eps);
        assert!((p[0].item() - x).abs() < 1e-15);
        assert!(x * x < before * before);
    }
    assert!((p[0].item() - 0.8).abs() < 1e-3);
    assert_eq!(opt.steps(), 2);
}

#[test]
fn adam_rejects_non_finite_gradient_untouched() {
    let mut p = vec![Tensor3::scalar(1.0)];
    let mut opt = Adam::new(AdamConfig::default(), &p);
    assert!(opt.step(&mut p, &[Tensor3::scalar(f64::NAN)]).is_err());
    assert_eq!(p[0].item(), 1.0);
    assert_eq!(opt.steps(), 0);
}

fn small_eval() -> (RunConfig, Dataset) {
    let cfg = RunConfig { eval_tasks: 4, input_len: 20, max_vertices: Some(6), hidden: 4, ..desk(3) };
    let data = Dataset::prepare(&cfg).unwrap();
    (cfg, data)
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let (cfg, data) = small_eval();
    let model = GraphHetNet::new(cfg.model_config(), 5).unwrap();
    let before = model.params().checksum();
    let eps = data.test_episodes(&cfg, 0).unwrap();
    evaluate(&model, &eps, Some(&data.normalizer), Reduction::L2Scaled, &HORIZONS_MS).unwrap();
    evaluate(&model, &eps, None, Reduction::MeanAbsolute, &HORIZONS_MS).unwrap();
    assert_eq!(model.params().checksum(), before);
}

#[test]
fn report_averages_are_consistent() {
    let (cfg, data) = small_eval();
    let eps = data.test_episodes(&cfg, 1).unwrap();
    let report = evaluate(&ZeroVelocity, &eps, Some(&data.normalizer), cfg.reduction, &HORIZONS_MS).unwrap();
    assert_eq!(report.rows.len(), cfg.test_actions.len());
    for row in &report.rows {
        assert_eq!(row.episodes, cfg.eval_tasks);
        let mean = row.errors.iter().sum::<f64>() / row.errors.len() as f64;
        assert!((row.average - mean).abs() < 1e-12);
    }
    for k in 0..HORIZONS_MS.len() {
        let col = report.rows.iter().map(|r| r.errors[k]).sum::<f64>() / report.rows.len() as f64;
        assert!((report.overall.errors[k] - col).abs() < 1e-12);
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 1 + (report.rows.len() + 1) * (HORIZONS_MS.len() + 1));
    assert!(report.table().contains("average"));
}

#[test]
fn forecasts_have_query_target_shape() {
    let (cfg, data) = small_eval();
    let model = GraphHetNet::new(cfg.model_config(), 0).unwrap();
    for ep in data.test_episodes(&cfg, 2).unwrap().iter().take(4) {
        let y = model.forecast_episode(ep).unwrap();
        assert_eq!(y.dims(), Dims::new(ep.query_len(), cfg.horizon, ep.sensors()));
    }
}

#[test]
fn larger_training_caps_hold_up_on_large_graphs() {
    let caps = [5usize, 20, 35];
    let base = RunConfig {
        epochs: 4,
        batches_per_epoch: 10,
        support: 3,
        query: 2,
        eval_tasks: 8,
        ..desk(4)
    };
    let data = Dataset::prepare(&base).unwrap();
    let models: Vec<GraphHetNet> = caps
        .iter()
        .map(|&cap| {
            let cfg = RunConfig { max_vertices: Some(cap), min_vertices: cap.min(5), ..base.clone() };
            let mut m = GraphHetNet::new(cfg.model_config(), cfg.seed).unwrap();
            meta_train(&mut m, &data.train_source(&cfg), &cfg.train_actions, &cfg.train_config()).unwrap();
            m
        })
        .collect();
    let tests: Vec<(usize, Vec<_>)> = caps
        .iter()
        .map(|&cap| {
            let cfg = RunConfig { max_vertices: Some(cap), min_vertices: cap, ..base.clone() };
            (cap, data.test_episodes(&cfg, 100).unwrap())
        })
        .collect();
    let refs: Vec<(usize, &dyn Forecaster)> = caps.iter().zip(&models).map(|(&c, m)| (c, m as &dyn Forecaster)).collect();
    let ab = size_cap_ablation(&refs, &tests).unwrap();
    assert_eq!(ab.matrix.len(), 3);
    assert!(ab.matrix.iter().all(|r| r.len() == 3 && r.iter().all(|v| v.is_finite() && *v > 0.0)));
    let at35 = |a: usize| ab.matrix[a][2];
    assert!(at35(1) <= at35(0) * 1.05, "cap 20 {} vs cap 5 {}", at35(1), at35(0));
    assert!(at35(2) <= at35(0) * 1.05, "cap 35 {} vs cap 5 {}", at35(2), at35(0));
}

#[test]
fn validated_training_keeps_best_epoch() {
    let cfg = RunConfig {
        epochs: 6,
        batches_per_epoch: 3,
        lr: 3e-2,
        val_actions: vec!["greeting".into()],
        val_tasks: 6,
        ..desk(5)
    };
    cfg.validate().unwrap();
    let data = Dataset::prepare(&cfg).unwrap();
    let val = data.validation_episodes(&cfg).unwrap();
    assert_eq!(val.len(), 6);
    assert!(val.iter().all(|e| e.action == "greeting"));
    let mut model = GraphHetNet::new(cfg.model_config(), cfg.seed).unwrap();
    let mut seen = Vec::new();
    let report = meta_train_validated(
        &mut model,
        &data.train_source(&cfg),
        &cfg.fitting_actions(),
        &cfg.train_config(),
        &val,
        |e, _, v| seen.push((e, v)),
    )
    .unwrap();
    assert_eq!(report.tasks_seen, 6 * 3 * 2);
    assert_eq!(report.val_losses, seen.iter().map(|s| s.1).collect::<Vec<_>>());
    let best = report.best_epoch.unwrap();
    let min = report.val_losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(report.val_losses[best - 1], min);
    assert_eq!(query_mse(&model, &val).unwrap(), min);
    assert!(report.losses_csv().starts_with("epoch,loss,val\n"));
}

#[test]
fn validation_actions_must_come_from_meta_train() {
    let cfg = RunConfig { val_actions: vec!["walking".into()], ..desk(0) };
    assert!(cfg.validate().is_err());
    let all = desk(0).train_actions;
    let cfg = RunConfig { val_actions: all, ..desk(0) };
    assert!(cfg.validate().is_err());
}
