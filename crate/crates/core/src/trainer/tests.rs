use super::*;
use crate::episodes::split_by_counts;

fn toy_dataset(seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let rows = (0..10)
        .flat_map(|c| {
            let centre: Vec<f64> = (0..6).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            (0..12)
                .map(|_| (format!("c{c}"), centre.iter().map(|m| m + rng.uniform_range(-0.3, 0.3)).collect()))
                .collect::<Vec<_>>()
        })
        .collect();
    let raw = Dataset::from_labeled(6, rows).unwrap();
    split_by_counts(&raw, 6, 2, 2, false).unwrap()
}

fn small_model(ds: &Dataset, seed: u64) -> ModelState {
    let cfg = ModelConfig {
        input_dim: ds.dim(),
        hidden: vec![12],
        feature_dim: 8,
        latent_dim: 10,
        ..Default::default()
    };
    ModelState::init(&cfg, ds.classes_in(Split::Train).len(), &mut SeededRng::new(seed)).unwrap()
}

fn episode_cfg(h_gen: usize) -> EpisodeConfig {
    EpisodeConfig {
        n_way: 2,
        k_shot: 1,
        queries: 3,
        h_gen,
    }
}

#[test]
fn auxiliary_epoch_touches_only_extractor_and_head() {
    let ds = toy_dataset(1);
    let mut model = small_model(&ds, 2);
    let before = model.clone();
    let mut opt = OptimizerState::new(0.9);
    let loss = run_auxiliary_epoch(&mut model, &mut opt, &ds, 8, 5, 0.05, &mut SeededRng::new(3)).unwrap();
    assert!(loss.unwrap().is_finite());
    assert_eq!(model.generator, before.generator);
    assert_eq!(model.meta_alpha, before.meta_alpha);
    assert_ne!(model.extractor, before.extractor);
    assert_ne!(model.aux_head.weights, before.aux_head.weights);
    assert_eq!(model.step_count, 5);
}

#[test]
fn meta_epoch_touches_only_extractor_generator_and_alpha() {
    let ds = toy_dataset(1);
    let mut model = small_model(&ds, 2);
    let before = model.clone();
    let mut opt = OptimizerState::new(0.9);
    let stats = run_meta_epoch(
        &mut model,
        &mut opt,
        &ds,
        &episode_cfg(3),
        4,
        0.01,
        0.01,
        &mut SeededRng::new(4),
        &mut SeededRng::new(5),
    )
    .unwrap();
    assert_eq!(stats.skipped, 0);
    assert_eq!(model.aux_head, before.aux_head);
    assert_ne!(model.generator, before.generator);
    assert_ne!(model.extractor, before.extractor);
    assert_ne!(model.meta_alpha, before.meta_alpha);
}

#[test]
fn meta_epoch_without_generation_leaves_generator() {
    let ds = toy_dataset(1);
    let mut model = small_model(&ds, 2);
    let before = model.clone();
    let mut opt = OptimizerState::new(0.9);
    run_meta_epoch(
        &mut model,
        &mut opt,
        &ds,
        &episode_cfg(0),
        3,
        0.01,
        0.01,
        &mut SeededRng::new(4),
        &mut SeededRng::new(5),
    )
    .unwrap();
    assert_eq!(model.generator, before.generator);
    assert!(!opt.velocity.keys().any(|k| k.starts_with("generator")));
}

#[test]
fn zero_learning_rate_keeps_parameters_bitwise() {
    let ds = toy_dataset(1);
    let mut model = small_model(&ds, 2);
    let before = model.clone();
    let mut opt = OptimizerState::new(0.9);
    run_auxiliary_epoch(&mut model, &mut opt, &ds, 8, 3, 0.0, &mut SeededRng::new(3)).unwrap();
    run_meta_epoch(
        &mut model,
        &mut opt,
        &ds,
        &episode_cfg(2),
        3,
        0.0,
        0.01,
        &mut SeededRng::new(4),
        &mut SeededRng::new(5),
    )
    .unwrap();
    for ((name, a), (_, b)) in model.named_tensors().iter().zip(before.named_tensors()) {
        let same = a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{name} changed");
    }
}

#[test]
fn momentum_update_matches_hand_computation() {
    let mut opt = OptimizerState::new(0.9);
    let mut p = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
    opt.step("p", &mut p, &[0.5, 1.0], 0.1);
    assert_eq!(p.values(), &[1.0 - 0.05, -1.0 - 0.1]);
    opt.step("p", &mut p, &[0.5, 1.0], 0.1);
    // v = 0.9·g + g = 1.9·g
    let expected = [0.95 - 0.1 * 0.95, -1.1 - 0.1 * 1.9];
    assert!(p.values().iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn non_finite_parameters_abort() {
    let ds = toy_dataset(1);
    let mut model = small_model(&ds, 2);
    model.extractor.layers[0].weight.values_mut()[0] = f64::NAN;
    let mut opt = OptimizerState::new(0.9);
    let err = run_auxiliary_epoch(&mut model, &mut opt, &ds, 8, 1, 0.05, &mut SeededRng::new(3)).unwrap_err();
    assert!(matches!(err, Error::Aborted { step: 0, .. }), "{err}");
}

#[test]
fn learning_rate_halves_at_milestones() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.learning_rate(EpochKind::Auxiliary, 0), 0.05);
    assert_eq!(cfg.learning_rate(EpochKind::Auxiliary, 19), 0.05);
    assert_eq!(cfg.learning_rate(EpochKind::Auxiliary, 20), 0.025);
    assert_eq!(cfg.learning_rate(EpochKind::Meta, 25), 0.0025);
}

#[test]
fn eval_report_statistics() {
    let r = EvalReport::from_accuracies(vec![0.5]);
    assert_eq!((r.mean_accuracy, r.ci95), (0.5, None));
    let r = EvalReport::from_accuracies(vec![0.0, 1.0, 0.5, 0.5]);
    assert_eq!(r.mean_accuracy, 0.5);
    // s² = (0.25 + 0.25) / 3
    let expected = 1.96 * (0.5f64 / 3.0).sqrt() / 2.0;
    assert!((r.ci95.unwrap() - expected).abs() < 1e-15);
}

#[test]
fn evaluation_ignores_worker_count() {
    let ds = toy_dataset(1);
    let model = small_model(&ds, 2);
    let cfg = episode_cfg(4);
    let one = evaluate(&model, &ds, &cfg, Split::Test, 9, 11, 1).unwrap();
    let three = evaluate(&model, &ds, &cfg, Split::Test, 9, 11, 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.episode_count, 9);
    let other = evaluate(&model, &ds, &cfg, Split::Test, 9, 12, 1).unwrap();
    assert_ne!(one.per_episode, other.per_episode);
}

#[test]
fn named_tensors_rebuild_the_model() {
    let ds = toy_dataset(1);
    let model = small_model(&ds, 2);
    let named = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let back = ModelState::from_named(named, 0.3, 0.2, true, 0).unwrap();
    assert_eq!(back, model);
    let mut missing: BTreeMap<String, Tensor> = BTreeMap::new();
    missing.insert("aux.alpha".into(), Tensor::scalar(1.0));
    assert!(matches!(ModelState::from_named(missing, 0.3, 0.2, true, 0), Err(Error::Corrupt(_))));
}

#[test]
fn schedule_runs_resume_identically() {
    let ds = toy_dataset(1);
    let cfg = TrainConfig {
        episode: episode_cfg(2),
        batch_size: 8,
        aux_steps: 3,
        meta_episodes: 3,
        ..Default::default()
    };
    let schedule: Schedule = "AMAM".parse().unwrap();
    let mut full = Trainer::new(small_model(&ds, 2), 0.9, 7);
    full.run_schedule(&schedule, &ds, &cfg, None).unwrap();
    let mut split = Trainer::new(small_model(&ds, 2), 0.9, 7);
    split.run_schedule(&schedule, &ds, &cfg, Some(2)).unwrap();
    assert_eq!(split.next_epoch, 2);
    let mut resumed = split.clone();
    resumed.run_schedule(&schedule, &ds, &cfg, None).unwrap();
    assert_eq!(resumed, full);
    assert_eq!(full.log.len(), 4);
    assert_eq!(full.log[1].kind, EpochKind::Meta);
}

#[test]
fn zero_steps_is_a_no_op() {
    let ds = toy_dataset(1);
    let mut model = small_model(&ds, 2);
    let before = model.clone();
    let mut opt = OptimizerState::new(0.9);
    let loss = run_auxiliary_epoch(&mut model, &mut opt, &ds, 8, 0, 0.05, &mut SeededRng::new(3)).unwrap();
    assert_eq!(loss, None);
    assert_eq!(model, before);
}

#[test]
fn empty_schedule_is_a_no_op() {
    let ds = toy_dataset(1);
    let mut t = Trainer::new(small_model(&ds, 2), 0.9, 7);
    let before = t.clone();
    t.run_schedule(&Schedule::default(), &ds, &TrainConfig::default(), None).unwrap();
    assert_eq!(t, before);
}

#[test]
fn interval_examples() {
    let r = EvalReport::from_accuracies(vec![1.0; 5]);
    assert_eq!(r.ci95, Some(0.0));
    let r = EvalReport::from_accuracies(vec![0.6, 0.8]);
    assert!((r.mean_accuracy - 0.7).abs() < 1e-15);
    let expected = 1.96 * 0.02f64.sqrt() / 2f64.sqrt();
    assert!((r.ci95.unwrap() - expected).abs() < 1e-12);
    assert!((r.ci95.unwrap() - 0.196).abs() < 1e-3);
}

#[test]
fn evaluation_is_idempotent() {
    let ds = toy_dataset(1);
    let model = small_model(&ds, 2);
    let cfg = episode_cfg(2);
    let a = evaluate(&model, &ds, &cfg, Split::Test, 5, 3, 1).unwrap();
    let b = evaluate(&model, &ds, &cfg, Split::Test, 5, 3, 1).unwrap();
    assert_eq!(a, b);
    assert!(matches!(evaluate(&model, &ds, &cfg, Split::Test, 0, 3, 1), Err(Error::Config(_))));
}

#[test]
fn metrics_csv_round_trip() {
    let log = vec![
        EpochRecord {
            epoch_index: 0,
            kind: EpochKind::Auxiliary,
            mean_loss: Some(0.1 + 0.2),
            val_accuracy: None,
            val_ci95: None,
        },
        EpochRecord {
            epoch_index: 1,
            kind: EpochKind::Meta,
            mean_loss: None,
            val_accuracy: Some(0.75),
            val_ci95: Some(1e-17),
        },
    ];
    let text = metrics_csv(&log);
    assert_eq!(text.lines().nth(1), Some("0,A,0.30000000000000004,,"));
    assert_eq!(parse_metrics_csv(&text).unwrap(), log);
    assert!(parse_metrics_csv("epoch_index,kind,mean_loss,val_accuracy,val_ci95\n0,X,,,\n").is_err());
}
