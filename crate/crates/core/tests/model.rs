mod common;

use common::*;
use cprgcn::geometry::FEATURE_DIM;
use cprgcn::harness::ablation_configs;
use cprgcn::model::*;
use cprgcn::tensor::{Tape, Tensor};
use cprgcn::{AnatomicalLabel, Error, NUM_CLASSES};
use rand::seq::SliceRandom;
use rand::Rng;

fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

fn run_block(h: &Tensor, a: &Tensor, w: &Tensor) -> cprgcn::Result<Tensor> {
    let tape = Tape::new();
    let out = gcn_block(&tape, tape.constant(h.clone()), tape.constant(a.clone()), tape.constant(w.clone()))?;
    let v = out.value().clone();
    Ok(v)
}

#[test]
fn gcn_block_with_identity_propagation() {
    let mut r = rng(40);
    let h = Tensor::uniform(&[4, 4], 1.0, &mut r).map(f64::abs);
    let out = run_block(&h, &Tensor::eye(4), &Tensor::eye(4)).unwrap();
    assert_eq!(out, h);
}

#[test]
fn gcn_block_with_zero_weights() {
    let mut r = rng(41);
    let h = Tensor::uniform(&[3, 5], 1.0, &mut r);
    let a = normalize_adjacency(&adjacency_of(&[None, Some(0), Some(1)]), true).unwrap();
    let out = run_block(&h, &a, &Tensor::zeros(&[5, 7])).unwrap();
    assert_eq!(out.shape(), &[3, 7]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gcn_block_on_a_path_matches_hand_evaluation() {
    let mut r = rng(42);
    let h = Tensor::uniform(&[3, 2], 1.0, &mut r);
    let w = Tensor::uniform(&[2, 3], 1.0, &mut r);
    // Undirected path 0 - 1 - 2: degrees 2, 3, 2.
    let s6 = 1.0 / 6f64.sqrt();
    let a_hand = Tensor::from_rows(&[
        vec![0.5, s6, 0.0],
        vec![s6, 1.0 / 3.0, s6],
        vec![0.0, s6, 0.5],
    ])
    .unwrap();
    let a = normalize_adjacency(&adjacency_of(&[None, Some(0), Some(1)]), false).unwrap();
    assert!(a.max_abs_diff(&a_hand) < 1e-15);
    let mut expected = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        for o in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                for c in 0..2 {
                    acc += a_hand.at(i, j) * h.at(j, c) * w.at(c, o);
                }
            }
            expected.data_mut()[i * 3 + o] = acc.max(0.0);
        }
    }
    assert!(run_block(&h, &a, &w).unwrap().max_abs_diff(&expected) < 1e-12);
}

#[test]
fn gcn_block_dimension_mismatch() {
    let r = run_block(&Tensor::zeros(&[2, 3]), &Tensor::eye(2), &Tensor::zeros(&[4, 3]));
    assert!(matches!(r, Err(Error::Dimension { .. })));
}

fn residual_output(model: &CprGcnModel, x: &Tensor, y: &Tensor, a_hat: &Tensor) -> Tensor {
    let tape = Tape::new();
    let params = model.params.bind(&tape);
    let out = model
        .partial_residual_forward(&tape, &params, tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(a_hat.clone()))
        .unwrap();
    let v = out.value().clone();
    v
}

#[test]
fn zero_gcn_weights_leave_only_the_shortcut() {
    let config = tiny_model(3);
    let mut model = CprGcnModel::new(config.clone(), 1).unwrap();
    for &w in model.gcn_weights().to_vec().iter() {
        let shape = model.params.get(w).shape().to_vec();
        *model.params.get_mut(w) = Tensor::zeros(&shape);
    }
    let hidden = config.gcn_hidden;
    let last = *model.shortcut_weights().last().unwrap();
    let mut ws = Tensor::zeros(&[FEATURE_DIM, hidden]);
    for i in 0..hidden {
        ws.data_mut()[i * hidden + i] = 1.0;
    }
    *model.params.get_mut(last) = ws.clone();

    let mut r = rng(43);
    let x = Tensor::uniform(&[4, FEATURE_DIM], 1.0, &mut r);
    let a_hat = normalize_adjacency(&adjacency_of(&[None, Some(0), Some(0), Some(2)]), true).unwrap();
    let expected = x.matmul(&ws).unwrap();
    // Conditions cannot reach the output in this configuration.
    for seed in 0..3 {
        let y = Tensor::uniform(&[4, config.condition.output_dim()], 5.0, &mut rng(seed));
        assert_eq!(residual_output(&model, &x, &y, &a_hat), expected);
    }
}

#[test]
fn one_node_graph_matches_hand_composition() {
    let config = tiny_model(3);
    let model = CprGcnModel::new(config.clone(), 2).unwrap();
    let mut r = rng(44);
    let x = Tensor::uniform(&[1, FEATURE_DIM], 1.0, &mut r);
    let y = Tensor::uniform(&[1, config.condition.output_dim()], 1.0, &mut r);
    let mut h = Tensor::new(vec![1, x.len() + y.len()], [x.data(), y.data()].concat()).unwrap();
    for (w, ws) in model.gcn_weights().iter().zip(model.shortcut_weights()) {
        let conv = relu(&h.matmul(model.params.get(*w)).unwrap());
        h = add(&conv, &x.matmul(model.params.get(*ws)).unwrap());
    }
    let got = residual_output(&model, &x, &y, &Tensor::eye(1));
    assert!(got.max_abs_diff(&h) < 1e-12);
}

#[test]
fn shortcut_modes_control_parameters() {
    let base = tiny_model(3);
    let count = |shortcut| CprGcnModel::new(ModelConfig { shortcut, ..base.clone() }, 0).unwrap().shortcut_weights().len();
    assert_eq!(count(ShortcutMode::PerBlock), 3);
    assert_eq!(count(ShortcutMode::Single), 1);
    assert_eq!(count(ShortcutMode::None), 0);
    let no_cond = CprGcnModel::new(ModelConfig { use_conditions: false, ..base.clone() }, 0).unwrap();
    assert!(no_cond.params.iter().all(|(name, _)| !name.starts_with("condition.")));
}

#[test]
fn default_layer_sizes() {
    let config = ModelConfig::default();
    assert_eq!(config.blocks, 3);
    assert_eq!(config.input_dim(), 291);
    assert_eq!(config.condition.cnn_feature_dim(), 1728);
    let model = CprGcnModel::new(config, 0).unwrap();
    let shape = |name: &str| model.params.get(model.params.find(name).unwrap()).shape().to_vec();
    assert_eq!(shape("gcn0.weight"), vec![291, 256]);
    assert_eq!(shape("gcn1.weight"), vec![256, 256]);
    assert_eq!(shape("gcn2.weight"), vec![256, 256]);
    assert_eq!(shape("shortcut0.weight"), vec![35, 256]);
    assert_eq!(shape("head.fc1.weight"), vec![256, 128]);
    assert_eq!(shape("head.fc2.weight"), vec![128, NUM_CLASSES]);
}

#[test]
fn ablation_grid_is_selectable_by_configuration() {
    let cells = ablation_configs(&ModelConfig::default());
    let names: Vec<&str> = cells.iter().map(|(n, _)| n.as_str()).collect();
    for required in ["full-3", "no-conditions", "no-residual", "undirected", "full-1", "full-2", "full-4"] {
        assert!(names.contains(&required), "{required}");
    }
    for (name, c) in &cells {
        match name.as_str() {
            "no-conditions" => assert!(!c.use_conditions),
            "no-residual" => assert_eq!(c.shortcut, ShortcutMode::None),
            "undirected" => assert!(!c.directed),
            n => assert_eq!(format!("full-{}", c.blocks), n),
        }
    }
}

fn toy_tree(seed: u64, n: usize) -> TreeInput {
    let mut r = rng(seed);
    let parents = random_parents(&mut r, n, 0.15);
    let steps: Vec<usize> = (0..n).map(|_| r.random_range(1..4)).collect();
    random_tree(&mut r, &parents, &steps, 16)
}

fn zero_head(model: &mut CprGcnModel) {
    for name in ["head.fc2.weight", "head.fc2.bias"] {
        let id = model.params.find(name).unwrap();
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = Tensor::zeros(&shape);
    }
}

#[test]
fn uniform_logits_give_ln_11_loss() {
    let mut model = CprGcnModel::new(tiny_model(3), 3).unwrap();
    zero_head(&mut model);
    let tree = toy_tree(1, 5);
    assert!((model.loss(&[&tree]).unwrap() - 11f64.ln()).abs() < 1e-12);
    let pred = model.predict(&tree).unwrap();
    assert!(pred.classes.iter().all(|&c| c == 0));
}

#[test]
fn argmax_and_label_names() {
    let mut logits = Tensor::zeros(&[2, NUM_CLASSES]);
    logits.data_mut()[4] = 5.0;
    logits.data_mut()[NUM_CLASSES + 10] = 1.0;
    logits.data_mut()[NUM_CLASSES + 2] = 1.0;
    let p = LabelPrediction::from_logits(logits);
    assert_eq!(p.classes, vec![4, 2]);
    assert_eq!(p.labels(), vec![AnatomicalLabel::Lm, AnatomicalLabel::RPlb]);
}

#[test]
fn labels_must_cover_every_node() {
    let model = CprGcnModel::new(tiny_model(1), 0).unwrap();
    let mut tree = toy_tree(2, 3);
    tree.labels.pop();
    assert!(matches!(model.loss(&[&tree]), Err(Error::Contract(_))));
}

#[test]
fn two_identical_trees_have_the_single_tree_loss() {
    let model = CprGcnModel::new(tiny_model(3), 4).unwrap();
    let tree = toy_tree(3, 6);
    let single = model.loss(&[&tree]).unwrap();
    let double = model.loss(&[&tree, &tree]).unwrap();
    assert!((single - double).abs() < 1e-12);
}

#[test]
fn batched_loss_is_the_node_weighted_mean() {
    let model = CprGcnModel::new(tiny_model(2), 5).unwrap();
    let trees: Vec<TreeInput> = (0..8).map(|i| toy_tree(10 + i, 2 + i as usize % 4)).collect();
    let refs: Vec<&TreeInput> = trees.iter().collect();
    let batched = model.loss(&refs).unwrap();
    let nodes: usize = trees.iter().map(|t| t.len()).sum();
    let mean: f64 = trees.iter().map(|t| model.loss(&[t]).unwrap() * t.len() as f64).sum::<f64>() / nodes as f64;
    assert!((batched - mean).abs() < 1e-10);
}

#[test]
fn permuting_nodes_permutes_logits() {
    let model = CprGcnModel::new(tiny_model(3), 6).unwrap();
    let tree = toy_tree(20, 7);
    let base = model.predict(&tree).unwrap();
    let base_loss = model.loss(&[&tree]).unwrap();
    let mut r = rng(21);
    for _ in 0..5 {
        let mut perm: Vec<usize> = (0..7).collect();
        perm.shuffle(&mut r);
        let p = permute_tree(&tree, &perm);
        let out = model.predict(&p).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            for c in 0..NUM_CLASSES {
                assert!((out.logits.at(k, c) - base.logits.at(old, c)).abs() < 1e-10);
            }
        }
        assert!((model.loss(&[&p]).unwrap() - base_loss).abs() < 1e-10);
    }
}

/// Undirected hop distance from `from` to every node.
fn hops(parents: &[Option<usize>], from: usize) -> Vec<usize> {
    let n = parents.len();
    let mut dist = vec![usize::MAX; n];
    dist[from] = 0;
    let mut frontier = vec![from];
    while let Some(i) = frontier.pop() {
        for j in 0..n {
            let linked = parents[j] == Some(i) || parents[i] == Some(j);
            if linked && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                frontier.insert(0, j);
            }
        }
    }
    dist
}

#[test]
fn messages_travel_at_most_one_hop_per_block() {
    // A path long enough that the ends are out of each other's reach.
    let n: usize = 9;
    let parents: Vec<Option<usize>> = (0..n).map(|j| j.checked_sub(1)).collect();
    let mut r = rng(50);
    let steps = vec![2; n];
    let tree = random_tree(&mut r, &parents, &steps, 16);
    for blocks in [1, 3] {
        let model = CprGcnModel::new(ModelConfig { directed: false, ..tiny_model(blocks) }, 7).unwrap();
        let base = model.predict(&tree).unwrap();
        let dist = hops(&parents, 0);
        let mut far = tree.clone();
        for j in (0..n).filter(|&j| dist[j] > blocks) {
            for v in &mut far.features.data_mut()[j * FEATURE_DIM..(j + 1) * FEATURE_DIM] {
                *v = 0.0;
            }
            let side = far.cubes[j].side();
            far.cubes[j] = cprgcn::condition::CubeSequence::new(j, side, vec![0.0; side.pow(3)]).unwrap();
        }
        let out = model.predict(&far).unwrap();
        for c in 0..NUM_CLASSES {
            assert_eq!(out.logits.at(0, c), base.logits.at(0, c));
        }
        // A node just inside the changed region does see the change.
        let edge = blocks + 1;
        assert!((0..NUM_CLASSES).any(|c| out.logits.at(edge, c) != base.logits.at(edge, c)));
    }
}

#[test]
fn disabled_conditions_feed_zeros() {
    let model = CprGcnModel::new(ModelConfig { use_conditions: false, ..tiny_model(2) }, 8).unwrap();
    let tree = toy_tree(30, 4);
    let tape = Tape::new();
    let params = model.params.bind(&tape);
    let y = model.conditions(&tape, &params, &[&tree]).unwrap();
    assert_eq!(y.shape(), vec![4, 6]);
    assert!(y.value().data().iter().all(|&v| v == 0.0));
    // Changing the cubes leaves the prediction untouched.
    let mut other = tree.clone();
    other.cubes = toy_tree(31, 4).cubes;
    assert_eq!(model.predict(&tree).unwrap(), model.predict(&other).unwrap());
}

#[test]
fn fixed_seed_gives_identical_models_and_losses() {
    let tree = toy_tree(40, 5);
    let a = CprGcnModel::new(tiny_model(3), 9).unwrap();
    let b = CprGcnModel::new(tiny_model(3), 9).unwrap();
    assert_eq!(a.params.values(), b.params.values());
    assert_eq!(a.loss(&[&tree]).unwrap().to_bits(), b.loss(&[&tree]).unwrap().to_bits());
    let (_, ga) = a.loss_and_gradients(&[&tree]).unwrap();
    let (_, gb) = b.loss_and_gradients(&[&tree]).unwrap();
    assert_eq!(ga, gb);
    let c = CprGcnModel::new(tiny_model(3), 10).unwrap();
    assert_ne!(a.params.values(), c.params.values());
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = CprGcnModel::new(ModelConfig { shortcut: ShortcutMode::Single, ..tiny_model(2) }, 11).unwrap();
    model.save(&path).unwrap();
    let loaded = CprGcnModel::load(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.params.values(), model.params.values());
    let tree = toy_tree(41, 4);
    assert_eq!(loaded.predict(&tree).unwrap(), model.predict(&tree).unwrap());
    let doc: ModelDocument = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc.config.blocks, 2);
    assert_eq!(doc.classes.len(), NUM_CLASSES);
}
