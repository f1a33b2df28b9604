#![allow(dead_code)]

use glt::graph::sample_weights_simplex;
use glt::{Graph, GltModel, NodeSet, ThresholdSpec};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random simple digraph: each ordered pair is an edge with probability `p`.
pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges.shuffle(rng);
    Graph::new(n, &edges).unwrap()
}

/// Random bipartite digraph with `parents` sources feeding the rest.
pub fn random_bipartite<R: Rng>(parents: usize, children: usize, p: f64, rng: &mut R) -> Graph {
    let n = parents + children;
    let mut edges = Vec::new();
    for v in parents..n {
        for u in 0..parents {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
        if !edges.iter().any(|&(_, c)| c == v) {
            edges.push((rng.random_range(0..parents), v));
        }
    }
    Graph::new(n, &edges).unwrap()
}

pub fn model_with<R: Rng>(graph: Graph, spec: ThresholdSpec, d_max: f64, rng: &mut R) -> GltModel {
    let bound = spec.support_bound().min(d_max);
    let w = sample_weights_simplex(&graph, bound, rng).unwrap();
    GltModel::with_common_threshold(graph, w, spec).unwrap()
}

pub fn families() -> Vec<ThresholdSpec> {
    vec![
        ThresholdSpec::uniform(),
        ThresholdSpec::exponential(),
        ThresholdSpec::beta(2.0, 2.0).unwrap(),
    ]
}

pub fn concave_families() -> Vec<ThresholdSpec> {
    vec![
        ThresholdSpec::uniform(),
        ThresholdSpec::exponential(),
        ThresholdSpec::beta(1.0, 2.0).unwrap(),
    ]
}

pub fn all_nonempty_subsets(n: usize) -> Vec<NodeSet> {
    (1u32..(1 << n))
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}
