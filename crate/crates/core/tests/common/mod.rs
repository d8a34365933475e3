#![allow(dead_code)]

pub mod fixtures;

use cprgcn::condition::{ConditionConfig, CubeSequence};
use cprgcn::geometry::FEATURE_DIM;
use cprgcn::model::{ModelConfig, ShortcutMode, TreeInput};
use cprgcn::tensor::Tensor;
use cprgcn::NUM_CLASSES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite difference of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut g = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Largest relative error between two gradients.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_err(a, n, floor))
        .fold(0.0, f64::max)
}

/// Tiny-width model used by gradient and equivariance checks.
pub fn tiny_model(blocks: usize) -> ModelConfig {
    ModelConfig {
        condition: ConditionConfig {
            gamma: 8,
            channels: [2, 2, 2],
            lstm_layers: 2,
            lstm_hidden: 3,
        },
        use_conditions: true,
        blocks,
        gcn_hidden: 6,
        fc_hidden: 5,
        directed: true,
        shortcut: ShortcutMode::PerBlock,
    }
}

/// Random parent vector describing a forest on `n` nodes in which every
/// parent precedes its child.
pub fn random_parents(rng: &mut impl Rng, n: usize, root_prob: f64) -> Vec<Option<usize>> {
    (0..n)
        .map(|j| (j > 0 && !rng.random_bool(root_prob)).then(|| rng.random_range(0..j)))
        .collect()
}

pub fn adjacency_of(parents: &[Option<usize>]) -> Tensor {
    let n = parents.len();
    let mut a = Tensor::zeros(&[n, n]);
    for (j, p) in parents.iter().enumerate() {
        if let Some(i) = *p {
            a.data_mut()[i * n + j] = 1.0;
        }
    }
    a
}

/// Random labeled tree with cube sequences of the given lengths.
pub fn random_tree(rng: &mut impl Rng, parents: &[Option<usize>], steps: &[usize], side: usize) -> TreeInput {
    let n = parents.len();
    assert_eq!(steps.len(), n);
    let cubes = steps
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let data = (0..len * side.pow(3)).map(|_| rng.random_range(-1.0..1.0)).collect();
            CubeSequence::new(i, side, data).unwrap()
        })
        .collect();
    TreeInput {
        adjacency: adjacency_of(parents),
        features: Tensor::uniform(&[n, FEATURE_DIM], 1.0, rng),
        cubes,
        labels: (0..n).map(|_| rng.random_range(0..NUM_CLASSES)).collect(),
    }
}

/// Reorders every node-aligned part of a tree so that new node `k` is old
/// node `perm[k]`.
pub fn permute_tree(tree: &TreeInput, perm: &[usize]) -> TreeInput {
    let n = tree.len();
    let mut adjacency = Tensor::zeros(&[n, n]);
    for a in 0..n {
        for b in 0..n {
            adjacency.data_mut()[a * n + b] = tree.adjacency.at(perm[a], perm[b]);
        }
    }
    let mut features = Vec::with_capacity(n * FEATURE_DIM);
    for &p in perm {
        features.extend_from_slice(tree.features.row(p));
    }
    TreeInput {
        adjacency,
        features: Tensor::new(vec![n, FEATURE_DIM], features).unwrap(),
        cubes: perm
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let c = &tree.cubes[p];
                CubeSequence::new(k, c.side(), c.data().to_vec()).unwrap()
            })
            .collect(),
        labels: perm.iter().map(|&p| tree.labels[p]).collect(),
    }
}
