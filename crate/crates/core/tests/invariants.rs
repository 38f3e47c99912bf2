use idcf_core::data::Feedback;
use idcf_core::mf::{Backbone, BipartiteGraph, MfParams, NnPredictor, Predictor};
use idcf_core::numerics::{dot, least_squares_solve, residual_norm, AdamConfig, Matrix, ParamTensor};
use idcf_core::relation::{InductiveModel, Normalization, RelationInit, RelationParams, ScoreActivation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

/// `(rows, cols)` with `rows >= cols`, then a matrix of that shape.
fn tall_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..6).prop_flat_map(|d| (d..d + 12).prop_flat_map(move |m| matrix(m, d)))
}

fn relation(dim: usize, heads: usize, keys: usize, norm: Normalization, act: ScoreActivation, seed: u64) -> RelationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RelationParams::init(dim, heads, keys.min(6), keys, norm, act, RelationInit::Xavier, &mut rng).unwrap()
}

fn graph_model(seed: u64) -> MfParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (users, items) = (6, 7);
    let mut mf = MfParams::init(Backbone::Gc, 3, 5, (0..users).collect(), items, Feedback::Explicit, &mut rng);
    mf.user_emb.value = mf.user_emb.value.scale(10.0);
    mf.item_emb.value = mf.item_emb.value.scale(10.0);
    let edges = (0..users).flat_map(|u| (0..items).filter(move |i| (u * 5 + i * 3 + seed as usize) % 3 != 0).map(move |i| (u, i)));
    let edges: Vec<_> = edges.map(|(u, i)| (u, i, 1.0 + ((u + 2 * i) % 5) as f64)).collect();
    mf.graph = Some(BipartiteGraph::build(edges, users, items, Feedback::Explicit, 50, seed));
    mf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adam_with_zero_gradient_leaves_values_alone(value in matrix(3, 4), steps in 1usize..20, lr in 1e-4f64..1.0) {
        let mut p = ParamTensor::embedding("P", value.clone());
        let cfg = AdamConfig::with_learning_rate(lr);
        for _ in 0..steps {
            p.adam_step(&cfg).unwrap();
        }
        prop_assert_eq!(p.value, value);
    }

    #[test]
    fn any_target_is_reachable_from_full_rank_keys(keys in tall_matrix(), seed in any::<u64>()) {
        let d = keys.cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<f64> = (0..d).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let sol = least_squares_solve(&keys, &target).unwrap();
        prop_assume!(!sol.degenerate);
        prop_assert!(residual_norm(&keys, &sol.coefficients, &target) < 1e-6);
    }

    #[test]
    fn softmax_attention_is_a_distribution_that_ignores_score_shifts(
        keys in matrix(9, 3),
        ctx in prop::collection::vec(-5.0f64..5.0, 3),
        other in prop::collection::vec(-5.0f64..5.0, 3),
        seed in any::<u64>(),
    ) {
        let rel = relation(3, 3, 9, Normalization::Softmax, ScoreActivation::Identity, seed);
        let w = rel.attention(&keys, &ctx).unwrap();
        for head in &w.heads {
            prop_assert!(head.iter().all(|&(_, x)| x >= 0.0));
            prop_assert!((head.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted = rel.attention(&keys, &other).unwrap();
        for (a, b) in w.heads.iter().zip(&shifted.heads) {
            for (x, y) in a.iter().zip(b) {
                prop_assert_eq!(x.0, y.0);
                prop_assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embedding_scales_with_keys_when_scores_ignore_them(
        keys in matrix(8, 3),
        ctx in prop::collection::vec(-2.0f64..2.0, 3),
        factor in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut rel = relation(3, 2, 8, Normalization::Softmax, ScoreActivation::Identity, seed);
        for head in &mut rel.heads {
            head.e.value.as_mut_slice()[3..].fill(0.0);
        }
        let base = rel.inductive_embedding(&keys, &ctx).unwrap();
        let scaled = rel.inductive_embedding(&keys.scale(factor), &ctx).unwrap();
        for (a, b) in base.iter().zip(scaled) {
            prop_assert!((factor * a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zeroed_network_scores_half_the_dot_product(
        p in prop::collection::vec(-2.0f64..2.0, 4),
        q in prop::collection::vec(-2.0f64..2.0, 4),
        bu in -1.0f64..1.0,
        bi in -1.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mf = MfParams::init(Backbone::Nn, 4, 6, vec![0], 1, Feedback::Explicit, &mut rng);
        mf.predictor = Predictor::Nn(NnPredictor::zeros(4, 6));
        mf.user_emb.value = Matrix::from_vec(1, 4, p.clone()).unwrap();
        mf.item_emb.value = Matrix::from_vec(1, 4, q.clone()).unwrap();
        mf.user_bias.value.as_mut_slice()[0] = bu;
        mf.item_bias.value.as_mut_slice()[0] = bi;
        prop_assert_eq!(mf.predict(0, 0, None).unwrap(), dot(&p, &q) / 2.0 + bu + bi);
    }

    #[test]
    fn graph_predictions_ignore_neighbor_order(seed in 0u64..1000, shuffle in any::<u64>()) {
        let mf = graph_model(seed);
        let mut shuffled = mf.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        let g = shuffled.graph.as_mut().unwrap();
        for lists in g.user_neighbors.iter_mut().chain(g.item_neighbors.iter_mut()) {
            for list in lists.iter_mut() {
                rand::seq::SliceRandom::shuffle(list.as_mut_slice(), &mut rng);
            }
        }
        for u in 0..mf.num_key_users() {
            for i in 0..mf.num_items() {
                prop_assert_eq!(mf.predict(u, i, None).unwrap().to_bits(), shuffled.predict(u, i, None).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn inference_is_pure(
        seed in 0u64..1000,
        history in prop::collection::btree_map(0usize..7, 1u8..=5, 0..6),
    ) {
        let mf = graph_model(seed);
        let rel = relation(3, 2, mf.num_key_users(), Normalization::Softmax, ScoreActivation::LeakyRelu, seed);
        let model = InductiveModel::new(mf, rel, 3, 50, seed);
        let history: Vec<(usize, f64)> = history.into_iter().map(|(i, r)| (i, f64::from(r))).collect();
        let a = model.infer_user(&history).unwrap();
        let b = model.infer_user(&history).unwrap();
        prop_assert!(a.embedding.iter().zip(&b.embedding).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(&a, &b);
        for item in 0..7 {
            prop_assert_eq!(model.score(&a, item).unwrap().to_bits(), model.score(&b, item).unwrap().to_bits());
        }
    }
}
