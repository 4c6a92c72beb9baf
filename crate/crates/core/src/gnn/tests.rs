use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::graph_data::{generate_synthetic, split_dataset, Adjacency, Graph, GraphDataset, SyntheticGraphSpec};
use crate::nn::{softmax_cross_entropy, Mat};
use crate::seed;

/// 6-node toy graph: a triangle, a path and an isolated node.
pub(crate) fn toy_dataset(feature_dim: usize) -> GraphDataset {
    let adj = Adjacency::from_edges(6, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)]).unwrap();
    let mut rng = seed::rng(11);
    let features = Array2::from_shape_fn((6, feature_dim), |_| rng.random_range(-1.0..1.0));
    GraphDataset::new(Graph::new(adj, features).unwrap(), vec![0, 1, 2, 0, 1, 2], 3).unwrap()
}

fn toy_config(arch: Architecture) -> GnnConfig {
    let mut cfg = GnnConfig::new(arch).with_hidden_dim(8).with_seed(5);
    cfg.neighbor_samples = vec![0; cfg.num_layers];
    cfg.attention_heads = 2;
    cfg.dropout = 0.0;
    cfg
}

fn model_loss(model: &GnnModel, ds: &GraphDataset) -> f64 {
    let nodes: Vec<usize> = (0..6).collect();
    let (_, logits) = model.forward(ds.graph(), &nodes, 0).unwrap();
    softmax_cross_entropy(&logits, ds.labels()).0
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter entry.
fn max_gradient_error(model: &GnnModel, ds: &GraphDataset) -> f64 {
    let nodes: Vec<usize> = (0..6).collect();
    let (_, grads) = model
        .loss_and_grads(ds.graph(), &nodes, ds.labels(), 0, None::<&mut rand_chacha::ChaCha8Rng>)
        .unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    let count = grads.len();
    for pi in 0..count {
        let shape = grads[pi].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = probe.params_mut()[pi][[r, c]];
                probe.params_mut()[pi][[r, c]] = orig + h;
                let up = model_loss(&probe, ds);
                probe.params_mut()[pi][[r, c]] = orig - h;
                let down = model_loss(&probe, ds);
                probe.params_mut()[pi][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[pi][[r, c]];
                let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-7);
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[test]
fn gradient_check_every_architecture() {
    let ds = toy_dataset(4);
    for arch in Architecture::ALL {
        let mut model = GnnModel::init(&toy_config(arch), 4, 3).unwrap();
        if let GnnLayer::Gin(l) = &mut model.layers[0] {
            l.eps[[0, 0]] = 0.3;
        }
        let err = max_gradient_error(&model, &ds);
        assert!(err <= 1e-4, "{arch}: relative gradient error {err}");
    }
}

#[test]
fn gradient_check_single_layer_models() {
    let ds = toy_dataset(4);
    for arch in Architecture::ALL {
        let mut cfg = toy_config(arch);
        cfg.num_layers = 1;
        cfg.neighbor_samples = vec![0];
        let model = GnnModel::init(&cfg, 4, 3).unwrap();
        let err = max_gradient_error(&model, &ds);
        assert!(err <= 1e-4, "{arch}: relative gradient error {err}");
    }
}

#[test]
fn gradient_check_with_output_transform() {
    let ds = toy_dataset(4);
    let mut model = GnnModel::init(&toy_config(Architecture::GraphSage), 4, 3).unwrap();
    model.output_transform = Some(crate::nn::Dense::init(8, 8, &mut seed::rng(2)));
    assert!(max_gradient_error(&model, &ds) <= 1e-4);
}

fn random_layer(arch: Architecture, input: usize, output: usize, heads: usize) -> GnnLayer {
    let mut rng = seed::rng(3);
    let mut layer = GnnLayer::init(arch, input, output, heads, &mut rng);
    // non-trivial biases and eps
    for p in layer.params_mut() {
        p.mapv_inplace(|x| x + 0.05);
    }
    layer
}

fn random_rows(n: usize, d: usize, s: u64) -> Mat {
    let mut rng = seed::rng(s);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn gin_with_zero_eps_and_zero_neighbors_is_mlp_of_self() {
    let mut layer = random_layer(Architecture::Gin, 3, 4, 1);
    let GnnLayer::Gin(l) = &mut layer else { unreachable!() };
    l.eps[[0, 0]] = 0.0;
    let mut x = random_rows(3, 3, 1);
    x.row_mut(1).fill(0.0);
    x.row_mut(2).fill(0.0);
    let out = layer_forward(&layer, &x, &[vec![1, 2]]).unwrap();
    let GnnLayer::Gin(l) = &layer else { unreachable!() };
    let hidden = (x.slice(ndarray::s![0..1, ..]).dot(&l.w1) + &l.b1).mapv(|v: f64| v.max(0.0));
    let expected = (hidden.dot(&l.w2) + &l.b2).mapv(|v: f64| v.max(0.0));
    assert_eq!(out, expected);
}

#[test]
fn gat_single_neighbor_gets_full_attention() {
    let layer = random_layer(Architecture::Gat, 3, 8, 4);
    let x = random_rows(2, 3, 4);
    let attn = layer.attention(&x, &[vec![1]]).unwrap().unwrap();
    for head in &attn[0] {
        assert_eq!(head, &vec![1.0]);
    }
}

#[test]
fn gat_isolated_node_keeps_finite_output() {
    let layer = random_layer(Architecture::Gat, 3, 8, 2);
    let x = random_rows(1, 3, 4);
    let out = layer_forward(&layer, &x, &[vec![]]).unwrap();
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn layer_rejects_bad_shapes() {
    let layer = random_layer(Architecture::GraphSage, 3, 4, 1);
    assert!(layer_forward(&layer, &random_rows(2, 5, 0), &[vec![1]]).is_err());
    assert!(layer_forward(&layer, &random_rows(2, 3, 0), &[vec![7]]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gat_attention_rows_sum_to_one(
        lists in prop::collection::vec(prop::collection::vec(0usize..12, 1..9), 1..6),
        s in 0u64..1000,
    ) {
        let layer = random_layer(Architecture::Gat, 5, 12, 3);
        let x = random_rows(12, 5, s);
        let attn = layer.attention(&x, &lists).unwrap().unwrap();
        for (node, heads) in attn.iter().enumerate() {
            prop_assert_eq!(heads.len(), 3);
            for coeffs in heads {
                prop_assert_eq!(coeffs.len(), lists[node].len());
                prop_assert!(coeffs.iter().all(|&a| a >= 0.0));
                prop_assert!((coeffs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn sage_and_gin_ignore_neighbor_order(
        list in prop::collection::vec(0usize..10, 0..12),
        s in 0u64..1000,
    ) {
        let x = random_rows(10, 4, s);
        let mut rng = seed::rng(s);
        let mut shuffled = list.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        for arch in [Architecture::GraphSage, Architecture::Gin] {
            let layer = random_layer(arch, 4, 6, 1);
            let a = layer_forward(&layer, &x, &[list.clone()]).unwrap();
            let b = layer_forward(&layer, &x, &[shuffled.clone()]).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                prop_assert!((u - v).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn forward_shapes_and_determinism() {
    let ds = toy_dataset(4);
    for arch in Architecture::ALL {
        let mut cfg = GnnConfig::new(arch).with_seed(1);
        cfg.batch_size = 4;
        let model = GnnModel::init(&cfg, 4, 3).unwrap();
        let nodes = [5, 0, 3];
        let (h, logits) = model.forward(ds.graph(), &nodes, 9).unwrap();
        assert_eq!(h.dim(), (3, 256));
        assert_eq!(logits.dim(), (3, 3));
        let (h2, logits2) = model.forward(ds.graph(), &nodes, 9).unwrap();
        assert_eq!(h, h2);
        assert_eq!(logits, logits2);
        // chunking into batches does not change results
        let single = model.embed(ds.graph(), &[3], 9).unwrap();
        assert_eq!(single.row(0), h.row(2));
    }
}

#[test]
fn single_isolated_node_graph() {
    let graph = Graph::new(Adjacency::empty(1), Array2::ones((1, 4))).unwrap();
    for arch in Architecture::ALL {
        let model = GnnModel::init(&GnnConfig::new(arch), 4, 2).unwrap();
        let (h, logits) = model.forward(&graph, &[0], 0).unwrap();
        assert!(h.iter().chain(logits.iter()).all(|v| v.is_finite()));
    }
}

#[test]
fn forward_rejects_empty_and_unknown_nodes() {
    let ds = toy_dataset(4);
    let model = GnnModel::init(&toy_config(Architecture::Gin), 4, 3).unwrap();
    assert!(matches!(model.forward(ds.graph(), &[], 0), Err(crate::Error::Empty(_))));
    assert!(model.forward(ds.graph(), &[6], 0).is_err());
}

#[test]
fn serialization_round_trips_exactly() {
    for arch in Architecture::ALL {
        let mut model = GnnModel::init(&toy_config(arch), 4, 3).unwrap();
        model.output_transform = Some(crate::nn::Dense::init(8, 8, &mut seed::rng(2)));
        model.snap_to_f32();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = GnnModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn deserialization_rejects_garbage() {
    assert!(GnnModel::from_bytes(&[]).is_err());
    assert!(GnnModel::from_bytes(b"GNNFPMDL\x01\x00\x00\x00").is_err());
    let bytes = GnnModel::init(&toy_config(Architecture::Gat), 4, 3).unwrap().to_bytes();
    assert!(GnnModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(GnnModel::from_bytes(&extra).is_err());
}

#[test]
fn prune_boundaries() {
    let model = GnnModel::init(&toy_config(Architecture::Gat), 4, 3).unwrap();
    assert_eq!(prune(&model, 0.0).unwrap(), model);
    let all = prune(&model, 1.0).unwrap();
    for (name, p) in all.named_params() {
        if is_prunable(&name) {
            assert!(p.iter().all(|&w| w == 0.0), "{name}");
        }
    }
    assert!(prune(&model, 1.5).is_err());
    assert!(prune(&model, -0.1).is_err());
}

#[test]
fn prune_zeroes_smallest_of_ten_weights() {
    // one SAGE layer 1 -> 5 holds 10 weights; the 5 head weights are large
    // so a third of all 15 weights means the 5 smallest layer weights
    let mut cfg = toy_config(Architecture::GraphSage);
    cfg.num_layers = 1;
    cfg.neighbor_samples = vec![0];
    cfg.hidden_dim = 5;
    let mut model = GnnModel::init(&cfg, 1, 1).unwrap();
    let values = [0.9, -0.1, 0.5, 0.05, -0.7, 0.3, -0.2, 0.8, 0.6, -0.4];
    let GnnLayer::Sage(l) = &mut model.layers[0] else { unreachable!() };
    l.self_weight = Array2::from_shape_vec((1, 5), values[..5].to_vec()).unwrap();
    l.neigh_weight = Array2::from_shape_vec((1, 5), values[5..].to_vec()).unwrap();
    model.head.layers[0].weight.fill(10.0);

    let pruned = prune(&model, 0.5 * 10.0 / 15.0).unwrap();
    let GnnLayer::Sage(p) = &pruned.layers[0] else { unreachable!() };
    let flat: Vec<f64> = p.self_weight.iter().chain(p.neigh_weight.iter()).copied().collect();

    let mut order: Vec<usize> = (0..10).collect();
    order.sort_by(|&a, &b| values[a].abs().partial_cmp(&values[b].abs()).unwrap());
    for (rank, &i) in order.iter().enumerate() {
        if rank < 5 {
            assert_eq!(flat[i], 0.0);
        } else {
            assert_eq!(flat[i], values[i]);
        }
    }
    assert!(pruned.head.layers[0].weight.iter().all(|&w| w == 10.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn prune_zeroes_exactly_floor_r_w(ratio in 0.0f64..=1.0) {
        let mut model = GnnModel::init(&toy_config(Architecture::Gin), 4, 3).unwrap();
        // pre-existing zeros count toward the total
        model.head.layers[0].weight.row_mut(0).fill(0.0);
        let total = weight_count(&model);
        let pruned = prune(&model, ratio).unwrap();
        let zeros: usize = pruned
            .named_params()
            .into_iter()
            .filter(|(n, _)| is_prunable(n))
            .map(|(_, p)| p.iter().filter(|&&w| w == 0.0).count())
            .sum();
        let k = (ratio * total as f64 + 1e-9).floor() as usize;
        let already: usize = model.head.layers[0].weight.ncols();
        prop_assert_eq!(zeros, k.max(already));
    }
}

fn small_synthetic() -> (GraphDataset, crate::graph_data::DataSplit) {
    let spec = SyntheticGraphSpec {
        nodes_per_class: 60,
        num_classes: 2,
        intra_edge_prob: 0.08,
        inter_edge_prob: 0.01,
        feature_dim: 8,
        feature_noise: 0.5,
        seed: 0,
    };
    let ds = generate_synthetic(&spec).unwrap();
    let split = split_dataset(ds.node_count(), crate::graph_data::DEFAULT_FRACTIONS, 1).unwrap();
    (ds, split)
}

fn fast_config(arch: Architecture) -> GnnConfig {
    let mut cfg = GnnConfig::new(arch).with_hidden_dim(16).with_seed(3);
    cfg.max_epochs = 30;
    cfg.attention_heads = 2;
    // a few dozen nodes make one batch, so one step per epoch
    cfg.learning_rate = 0.01;
    cfg
}

#[test]
fn training_learns_and_is_deterministic() {
    let (ds, split) = small_synthetic();
    let cfg = fast_config(Architecture::GraphSage);
    let (model, report) = train(&cfg, &ds, &split.target_train).unwrap();
    let (again, report2) = train(&cfg, &ds, &split.target_train).unwrap();
    assert_eq!(model, again);
    assert_eq!(report.final_train_loss, report2.final_train_loss);
    assert!(report.epochs_run <= cfg.max_epochs);
    let pred = model.predict(ds.graph(), &split.test, 0).unwrap();
    let acc = pred.iter().zip(&split.test).filter(|(a, &v)| **a == ds.labels()[v]).count() as f64 / pred.len() as f64;
    assert!(acc >= 0.9, "accuracy {acc}");
    // stored at f32 precision, so bytes round-trip
    assert_eq!(GnnModel::from_bytes(&model.to_bytes()).unwrap(), model);
}

#[test]
fn zero_patience_runs_every_epoch() {
    let (ds, split) = small_synthetic();
    let mut cfg = fast_config(Architecture::Gin);
    cfg.max_epochs = 7;
    cfg.early_stop_patience = 0;
    let (_, report) = train(&cfg, &ds, &split.target_train).unwrap();
    assert_eq!(report.epochs_run, 7);
    assert!(report.final_train_loss.is_finite());
    assert!((0.0..=1.0).contains(&report.validation_accuracy));
}

#[test]
fn single_class_training_is_rejected() {
    let (ds, _) = small_synthetic();
    let class0: Vec<usize> = (0..ds.node_count()).filter(|&v| ds.labels()[v] == 0).collect();
    assert!(matches!(
        train(&fast_config(Architecture::Gat), &ds, &class0),
        Err(crate::Error::SingleClass)
    ));
}

#[test]
fn fine_tune_updates_all_parameters() {
    let (ds, split) = small_synthetic();
    let (model, _) = train(&fast_config(Architecture::Gat), &ds, &split.target_train).unwrap();
    let tuned = fine_tune(&model, &ds, &split.surrogate_train, 1).unwrap();
    assert_ne!(tuned.layers, model.layers);
    assert_ne!(tuned.head, model.head);
    assert!(fine_tune(&model, &ds, &split.surrogate_train, 0).is_err());
    assert!(fine_tune(&model, &ds, &[], 1).is_err());
}

#[test]
fn short_fine_tune_keeps_predictions() {
    use crate::extraction::{run_extraction, AttackConfig, AttackType, LocalOracle};
    let ds = generate_synthetic(&SyntheticGraphSpec {
        nodes_per_class: 400,
        ..SyntheticGraphSpec::default()
    })
    .unwrap();
    let split = split_dataset(ds.node_count(), crate::graph_data::DEFAULT_FRACTIONS, 2).unwrap();
    let mut cfg = GnnConfig::new(Architecture::GraphSage).with_hidden_dim(32).with_seed(4);
    cfg.max_epochs = 40;
    let (target, _) = train(&cfg, &ds, &split.target_train).unwrap();
    let attacker = ds.induced(&split.surrogate_train).unwrap();
    let mut attack = AttackConfig::new(AttackType::TypeII, Architecture::GraphSage, 5);
    attack.epochs = 60;
    let model = run_extraction(&LocalOracle::new(target), &attacker, &attack).unwrap().model;
    let all: Vec<usize> = (0..attacker.node_count()).collect();
    let tuned = fine_tune(&model, &attacker, &all, 1).unwrap();
    let g = ds.graph();
    let before = model.predict(g, &split.test, 0).unwrap();
    let after = tuned.predict(g, &split.test, 0).unwrap();
    let same = before.iter().zip(&after).filter(|(a, b)| a == b).count() as f64 / before.len() as f64;
    assert!(same > 0.95, "fidelity to self after one epoch {same}");
    assert_ne!(model.embed(g, &split.test, 0).unwrap(), tuned.embed(g, &split.test, 0).unwrap());
    let acc = |p: &[usize]| p.iter().zip(&split.test).filter(|(y, &v)| **y == ds.labels()[v]).count() as f64 / p.len() as f64;
    assert!((acc(&after) - acc(&before)).abs() <= 0.05);
}
