use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{ModelConfig, ModelKind};
use crate::tensor::Tensor;

fn one_param(v: f64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert("x", Tensor::vector(vec![v])).unwrap();
    p
}

fn grad(store: &ParamStore<f64>, v: f64) -> Gradients<f64> {
    let mut g = Gradients::zeros_like(store);
    g.get_mut(store.id("x").unwrap()).data_mut()[0] = v;
    g
}

#[test]
fn zero_gradient_step() {
    let mut s = AveragedState::new(one_param(1.5));
    let g = grad(&s.params, 0.0);
    asgd_step(&mut s, &g, 0.1, true).unwrap();
    assert_eq!(s.params, one_param(1.5));
    assert_eq!(s.count(), 1);
}

#[test]
fn average_of_two_iterates() {
    let mut s = AveragedState::new(one_param(0.0));
    let g = grad(&s.params, -1.0);
    asgd_step(&mut s, &g, 1.0, true).unwrap();
    let g = grad(&s.params, -2.0);
    asgd_step(&mut s, &g, 1.0, true).unwrap();
    assert_eq!(s.average().unwrap().by_name("x").unwrap().data(), &[2.0]);
}

#[test]
fn averaging_disabled_uses_raw_params() {
    let mut s = AveragedState::new(one_param(0.3));
    for k in 0..5 {
        let g = grad(&s.params, k as f64 - 2.0);
        asgd_step(&mut s, &g, 0.05, false).unwrap();
    }
    assert_eq!(s.count(), 0);
    assert_eq!(s.eval_params(), s.params);
}

#[test]
fn zero_rate_changes_only_counters() {
    let mut s = AveragedState::new(one_param(0.7));
    let g = grad(&s.params, 123.0);
    asgd_step(&mut s, &g, 0.0, true).unwrap();
    assert_eq!(s.params, one_param(0.7));
    assert_eq!(s.count(), 1);
}

#[test]
fn non_finite_gradient_aborts() {
    let mut s = AveragedState::new(one_param(0.7));
    let g = grad(&s.params, f64::NAN);
    let err = asgd_step(&mut s, &g, 0.1, true).unwrap_err();
    assert!(matches!(err, Error::Divergence(_)));
    assert!(err.to_string().contains('x'));
    assert_eq!(s.count(), 0);
    assert_eq!(s.params, one_param(0.7));
}

#[test]
fn average_is_mean_of_iterates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    store
        .insert("a", Tensor::from_fn(&[2, 3], |_| rng.gen_range(-1.0..1.0)))
        .unwrap();
    store
        .insert("b", Tensor::from_fn(&[4], |_| rng.gen_range(-1.0..1.0)))
        .unwrap();
    let mut s = AveragedState::new(store);
    let mut iterates = Vec::new();
    for _ in 0..3 {
        let mut g = Gradients::zeros_like(&s.params);
        for id in s.params.ids().collect::<Vec<_>>() {
            g.get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        asgd_step(&mut s, &g, 0.3, true).unwrap();
        iterates.push(s.params.clone());
    }
    let avg = s.average().unwrap();
    for (id, _, t) in avg.iter() {
        for (k, &v) in t.data().iter().enumerate() {
            let sum: f64 = iterates.iter().map(|p| p.get(id).data()[k]).sum();
            assert_eq!(v, sum / 3.0);
        }
    }
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        context_len: 2,
        embed_dim: 6,
        filter_widths: vec![1, 2],
        maps_per_width: 3,
        hidden_dim: 4,
        dropout: 0.0,
        average_start_epoch: 2,
        ..TrainConfig::default()
    }
}

/// Dialogs whose label is determined by the first token.
fn toy_dialogs(seed: u64, dialogs: usize) -> Vec<PreparedDialog<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dialogs)
        .map(|d| PreparedDialog {
            id: format!("d{d}"),
            utterances: (0..4)
                .map(|_| {
                    let label = rng.gen_range(0..3);
                    let mut ids = vec![2 + label];
                    ids.extend((0..rng.gen_range(0..3)).map(|_| rng.gen_range(5..9)));
                    PreparedUtterance {
                        ids,
                        acoustic: None,
                        label,
                    }
                })
                .collect(),
        })
        .collect()
}

fn toy_model(cfg: &TrainConfig) -> Model<f64> {
    let mc: ModelConfig = cfg.model_config(ModelKind::Lexical, 3, 9);
    Model::new(mc, cfg.seed).unwrap()
}

#[test]
fn identical_seeds_identical_logs() {
    let cfg = toy_config();
    let (tr, va) = (toy_dialogs(1, 6), toy_dialogs(2, 2));
    let a = train(toy_model(&cfg), &tr, &va, &cfg, |_| {}).unwrap();
    let b = train(toy_model(&cfg), &tr, &va, &cfg, |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.log.len(), 4);
    assert_eq!(a.log[0].updates, 0);
    assert_eq!(a.log[1].updates, 6);
    let other = TrainConfig { seed: 2, ..cfg };
    let c = train(toy_model(&other), &tr, &va, &other, |_| {}).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn rejects_empty_splits() {
    let cfg = toy_config();
    let tr = toy_dialogs(1, 2);
    let err = train(toy_model(&cfg), &tr, &[], &cfg, |_| {}).unwrap_err();
    assert!(err.to_string().contains("validation split is empty"));
    let err = train(toy_model(&cfg), &[], &tr, &cfg, |_| {}).unwrap_err();
    assert!(err.to_string().contains("training split is empty"));
}

#[test]
fn full_batch_loss_non_increasing() {
    let cfg = toy_config();
    let data = toy_dialogs(4, 3);
    let model = toy_model(&cfg);
    let batch = all_windows(&data, cfg.context_len);
    let mut state = AveragedState::new(model.params().clone());
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let mut g = Gradients::zeros_like(&state.params);
        let loss = model
            .batch_loss(&state.params, &batch, None, Some(&mut g))
            .unwrap();
        assert!(loss <= prev + 1e-12, "{loss} > {prev}");
        prev = loss;
        asgd_step(&mut state, &g, 0.001, false).unwrap();
    }
}

#[test]
fn shared_windows_match_separate_passes() {
    let cfg = toy_config();
    let data = toy_dialogs(5, 2);
    let model = toy_model(&cfg);
    let batch = all_windows(&data, cfg.context_len);
    let mut joint = Gradients::zeros_like(model.params());
    let loss = model
        .batch_loss(model.params(), &batch, None, Some(&mut joint))
        .unwrap();
    let mut separate = Gradients::zeros_like(model.params());
    let mut total = 0.0;
    for w in &batch {
        let mut g = Gradients::zeros_like(model.params());
        total += model
            .batch_loss(model.params(), &[*w], None, Some(&mut g))
            .unwrap();
        for (id, t) in g.iter() {
            for (a, b) in separate.get_mut(id).data_mut().iter_mut().zip(t.data()) {
                *a += b / batch.len() as f64;
            }
        }
    }
    assert!((loss - total / batch.len() as f64).abs() < 1e-12);
    for (id, t) in joint.iter() {
        assert!(t.max_abs_diff(separate.get(id)) < 1e-12);
    }
}

#[test]
fn frozen_embeddings_stay_put() {
    let cfg = TrainConfig {
        tune_embeddings: false,
        averaging: false,
        ..toy_config()
    };
    let model = toy_model(&cfg);
    let before = model.params().by_name("lex.embed").unwrap().clone();
    let out = train(model, &toy_dialogs(1, 4), &toy_dialogs(2, 1), &cfg, |_| {}).unwrap();
    assert_eq!(out.model.params().by_name("lex.embed").unwrap(), &before);
}

#[test]
fn pad_row_stays_zero_through_training() {
    let cfg = toy_config();
    let mut data = toy_dialogs(6, 4);
    data[0].utterances[0].ids.push(crate::text::PAD_ID);
    let out = train(toy_model(&cfg), &data, &toy_dialogs(2, 1), &cfg, |_| {}).unwrap();
    let table = out.model.params().by_name("lex.embed").unwrap();
    assert!(table.row(crate::text::PAD_ID).iter().all(|&v| v == 0.0));
}

#[test]
fn log_line_format() {
    let line = EpochLog {
        epoch: 2,
        updates: 4000,
        lr: lr_at(4000),
        train_loss: 0.5,
        val_acc: 0.75,
    };
    assert_eq!(line.to_string(), "2\t4000\t0.0891\t0.500000\t0.7500");
    assert_eq!(format_lr(lr_at(0)), "0.11");
    assert_eq!(format_lr(lr_at(2000)), "0.099");
    assert_eq!(format_lr(1e-7), "0.0000001");
}
