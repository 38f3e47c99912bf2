use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{holdout_split, synth_low_rank, Rating, RatingDataset};
use crate::numerics::grad_check;

fn toy(backbone: Backbone, feedback: Feedback) -> (MfParams, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mf = MfParams::init(backbone, 4, 6, (0..5).collect(), 5, feedback, &mut rng);
    // larger embeddings so every path carries signal
    mf.user_emb.value.as_mut_slice().iter_mut().for_each(|v| *v *= 10.0);
    mf.item_emb.value.as_mut_slice().iter_mut().for_each(|v| *v *= 10.0);
    let mut samples = Vec::new();
    for u in 0..5 {
        for i in 0..5 {
            if (u * 3 + i) % 2 == 0 {
                let target = match feedback {
                    Feedback::Explicit => 1.0 + ((u + 2 * i) % 5) as f64,
                    Feedback::Implicit => ((u + i) % 3 == 0) as u8 as f64,
                };
                samples.push(Sample { row: u, item: i, target });
            }
        }
    }
    if backbone == Backbone::Gc {
        let edges = samples.iter().map(|s| (s.row, s.item, s.target));
        mf.graph = Some(BipartiteGraph::build(edges, 5, 5, feedback, 50, 3));
    }
    mf.global_bias.value.as_mut_slice()[0] = 0.3;
    // keep ReLU pre-activations away from the kink at zero
    mf.predictor.visit_params_mut(&mut |p| {
        if p.name.ends_with("bias") {
            p.value.fill(0.1);
        }
    });
    (mf, samples)
}

#[test]
fn dot_prediction_by_hand() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mf = MfParams::init(Backbone::Dot, 2, 0, vec![0], 1, Feedback::Explicit, &mut rng);
    mf.user_emb.value = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
    mf.item_emb.value = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
    mf.user_bias.value.as_mut_slice()[0] = 0.5;
    mf.item_bias.value.as_mut_slice()[0] = -0.5;
    assert_eq!(mf.predict(0, 0, None).unwrap(), 11.0);

    mf.user_emb.value.fill(0.0);
    mf.item_emb.value.fill(0.0);
    mf.user_bias.value.fill(0.0);
    mf.item_bias.value.fill(0.0);
    assert_eq!(mf.predict(0, 0, None).unwrap(), 0.0);
}

#[test]
fn zeroed_network_halves_the_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mf = MfParams::init(Backbone::Nn, 3, 4, vec![0, 1], 2, Feedback::Explicit, &mut rng);
    mf.predictor = Predictor::Nn(NnPredictor::zeros(3, 4));
    mf.user_bias.value.as_mut_slice()[1] = 0.25;
    mf.item_bias.value.as_mut_slice()[0] = -1.5;
    let p = mf.user_emb.value.row(1).to_vec();
    let q = mf.item_emb.value.row(0).to_vec();
    let expected = crate::numerics::dot(&p, &q) / 2.0 + 0.25 - 1.5;
    assert_eq!(mf.predict(1, 0, None).unwrap(), expected);
}

#[test]
fn override_replaces_the_user_row() {
    let (mf, _) = toy(Backbone::Nn, Feedback::Explicit);
    let own = mf.user_emb.value.row(2).to_vec();
    assert_eq!(mf.predict(2, 1, Some(&own)).unwrap(), mf.predict(2, 1, None).unwrap());
    let other = mf.user_emb.value.row(3).to_vec();
    assert_ne!(mf.predict(2, 1, Some(&other)).unwrap(), mf.predict(2, 1, None).unwrap());
}

#[test]
fn range_errors() {
    let (mf, _) = toy(Backbone::Dot, Feedback::Explicit);
    assert!(matches!(mf.predict(0, 9, None), Err(ModelError::OutOfRange { kind: "item", .. })));
    assert!(matches!(mf.predict(42, 0, None), Err(ModelError::OutOfRange { .. })));
    assert!(mf.predict(42, 0, Some(&[0.0; 4])).is_ok());
}

#[test]
fn pointwise_losses() {
    assert_eq!(pointwise_loss(3.0, 3.0, Feedback::Explicit), 0.0);
    assert_eq!(pointwise_loss(5.0, 1.0, Feedback::Explicit), 16.0);
    assert!((pointwise_loss(0.0, 1.0, Feedback::Implicit) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(pointwise_loss(-800.0, 1.0, Feedback::Implicit).is_finite());
    assert!((pointwise_loss(-800.0, 1.0, Feedback::Implicit) - 800.0).abs() < 1e-9);
    assert!(pointwise_loss(800.0, 0.0, Feedback::Implicit).is_finite());
}

#[test]
fn backbone_gradients_match_finite_differences() {
    for feedback in [Feedback::Explicit, Feedback::Implicit] {
        for backbone in [Backbone::Dot, Backbone::Nn, Backbone::Gc] {
            let (mut mf, samples) = toy(backbone, feedback);
            mf.zero_grads();
            mf.accumulate_gradients(&samples, 0.05);
            let report = grad_check(&mut mf, |m| m.regularized_loss(&samples, 0.05), 64, 1e-4, 17);
            assert!(report.max_relative_error < 1e-4, "{backbone} {feedback:?}: {report:?}");
        }
    }
}

#[test]
fn graph_aggregation_ignores_neighbor_order() {
    let (mf, _) = toy(Backbone::Gc, Feedback::Explicit);
    let mut shuffled = mf.clone();
    let g = shuffled.graph.as_mut().unwrap();
    for lists in g.user_neighbors.iter_mut().chain(g.item_neighbors.iter_mut()) {
        for list in lists.iter_mut() {
            list.reverse();
        }
    }
    for u in 0..5 {
        for i in 0..5 {
            assert_eq!(mf.predict(u, i, None).unwrap().to_bits(), shuffled.predict(u, i, None).unwrap().to_bits());
        }
    }
}

#[test]
fn isolated_graph_user_gets_zero_aggregates() {
    let (mut mf, _) = toy(Backbone::Gc, Feedback::Explicit);
    mf.graph.as_mut().unwrap().user_neighbors[0] = vec![Vec::new(); EXPLICIT_LEVELS];
    assert!(mf.predict(0, 1, None).unwrap().is_finite());
}

fn small_dataset() -> RatingDataset {
    let ratings = (0..30)
        .flat_map(|u| (0..20).filter(move |i| (u + i) % 3 != 0).map(move |i| (u, i)))
        .map(|(u, i)| Rating { user: u, item: i, value: 1.0 + ((u * 7 + i * 3) % 5) as f64, timestamp: None })
        .collect();
    RatingDataset::from_triples(30, 20, ratings, Feedback::Explicit).unwrap()
}

#[test]
fn zero_epochs_return_the_initialization() {
    let ds = small_dataset();
    let split = holdout_split(&ds, 0.1, 1).unwrap();
    let cfg = PretrainConfig { max_epochs: 0, dim: 4, hidden: 8, ..Default::default() };
    let (mf, report) = pretrain(&ds, &split, &(0..30).collect::<Vec<_>>(), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let fresh = MfParams::init(Backbone::Nn, 4, 8, (0..30).collect(), 20, Feedback::Explicit, &mut rng);
    assert_eq!(mf.user_emb.value, fresh.user_emb.value);
    assert_eq!(mf.predictor, fresh.predictor);
    assert_eq!(report.epochs_run, 0);
}

#[test]
fn returned_snapshot_has_the_best_validation_loss() {
    let ds = small_dataset();
    let split = holdout_split(&ds, 0.1, 2).unwrap();
    let mut cfg = PretrainConfig { max_epochs: 40, patience: 3, dim: 4, hidden: 8, batch_size: 32, ..Default::default() };
    cfg.adam.learning_rate = 0.01;
    let key: Vec<usize> = (0..30).collect();
    let (mf, report) = pretrain(&ds, &split, &key, &cfg).unwrap();
    let best = report.validation_loss[report.best_epoch];
    assert!(report.validation_loss.iter().all(|&v| best <= v));
    let validation: Vec<Sample> =
        split.validation.iter().map(|&k| ds.ratings[k]).map(|r| Sample { row: r.user, item: r.item, target: r.value }).collect();
    assert_eq!(mf.mean_loss(&validation), best);
}

#[test]
fn pretraining_is_seeded() {
    let ds = small_dataset();
    let split = holdout_split(&ds, 0.1, 2).unwrap();
    let cfg = PretrainConfig { max_epochs: 3, dim: 4, hidden: 8, backbone: Backbone::Gc, ..Default::default() };
    let key: Vec<usize> = (0..30).collect();
    let a = pretrain(&ds, &split, &key, &cfg).unwrap();
    let b = pretrain(&ds, &split, &key, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dimension_larger_than_key_set_rejected() {
    let ds = small_dataset();
    let split = holdout_split(&ds, 0.1, 2).unwrap();
    let cfg = PretrainConfig { dim: 8, ..Default::default() };
    assert!(pretrain(&ds, &split, &[0, 1, 2], &cfg).is_err());
}

#[test]
fn divergence_is_reported() {
    let (ds, _) = synth_low_rank(20, 20, 4, 0.5, 0.0, 1).unwrap();
    let split = holdout_split(&ds, 0.1, 2).unwrap();
    let mut cfg = PretrainConfig { dim: 4, backbone: Backbone::Dot, max_epochs: 50, ..Default::default() };
    cfg.adam.learning_rate = 1e300;
    let err = pretrain(&ds, &split, &(0..20).collect::<Vec<_>>(), &cfg).unwrap_err();
    assert!(matches!(err, crate::Error::Train(_)), "{err}");
}
