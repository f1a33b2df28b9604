mod common;

use std::collections::HashMap;

use glt::model::enumerate_feasible_traces;
use glt::{GltError, GltModel, Graph, NodeSet, SeedTree, ThresholdSpec, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn probability(model: &GltModel, trace: &Trace) -> f64 {
    match model.trace_log_probability(trace, 0.0) {
        Ok(lp) => lp.exp(),
        Err(GltError::ZeroProbability { .. }) => 0.0,
        Err(e) => panic!("{e}"),
    }
}

/// Independent cascade trace probability: every newly active node gets one
/// attempt on each inactive child.
fn ic_probability(graph: &Graph, p: &[f64], trace: &Trace) -> f64 {
    let n = graph.node_count();
    let prob = |u: usize, v: usize| p[graph.in_edge_range(v).start + graph.parent_position(v, u).unwrap()];
    let mut active = vec![false; n];
    let mut total = 1.0;
    let steps = &trace.steps;
    for v in steps[0].iter() {
        active[v] = true;
    }
    for t in 1..=steps.len() {
        let fresh = &steps[t - 1];
        let next = steps.get(t).cloned().unwrap_or_default();
        for v in 0..n {
            if active[v] {
                continue;
            }
            let miss: f64 = fresh
                .iter()
                .filter(|&u| graph.parent_position(v, u).is_some())
                .map(|u| 1.0 - prob(u, v))
                .product();
            total *= if next.contains(v) { 1.0 - miss } else { miss };
        }
        for v in next.iter() {
            active[v] = true;
        }
    }
    total
}

#[test]
fn ic_matches_product_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let g = random_graph(5, 0.4, &mut rng);
        let p: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(0.1..0.9)).collect();
        let m = GltModel::from_ic(g.clone(), &p).unwrap();
        for seed in all_nonempty_subsets(5) {
            for tr in enumerate_feasible_traces(&g, &seed, 1_000_000).unwrap() {
                let a = probability(&m, &tr);
                let b = ic_probability(&g, &p, &tr);
                assert!((a - b).abs() < 1e-10, "{tr:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn feasible_traces_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..20 {
        let n = rng.random_range(4..=7);
        let g = random_graph(n, 0.35, &mut rng);
        let spec = families()[i % 3];
        let m = model_with(g.clone(), spec, 1.0, &mut rng);
        for seed in [NodeSet::singleton(0), NodeSet::from([1, 2])] {
            let total: f64 = enumerate_feasible_traces(&g, &seed, 1_000_000)
                .unwrap()
                .iter()
                .map(|t| probability(&m, t))
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "{total}");
        }
    }
}

#[test]
fn exact_spread_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..10 {
        let g = random_graph(6, 0.35, &mut rng);
        let m = model_with(g.clone(), families()[i % 3], 1.0, &mut rng);
        let seed = NodeSet::singleton(i % 6);
        let direct: f64 = enumerate_feasible_traces(&g, &seed, 1_000_000)
            .unwrap()
            .iter()
            .map(|t| probability(&m, t) * t.final_size() as f64)
            .sum();
        let s = m.exact_spread(&seed, 1_000_000).unwrap();
        assert!((s - direct).abs() < 1e-9, "{s} vs {direct}");
    }
}

fn frequencies(traces: &[Trace]) -> HashMap<Vec<NodeSet>, usize> {
    let mut out = HashMap::new();
    for t in traces {
        *out.entry(t.steps.clone()).or_insert(0) += 1;
    }
    out
}

/// Both simulators against the exact trace law, by a per-trace z bound.
#[test]
fn simulators_follow_trace_law() {
    let g = Graph::new(4, &[(0, 1), (0, 2), (1, 2), (2, 3), (1, 3)]).unwrap();
    let m = GltModel::with_common_threshold(g.clone(), vec![0.4, 0.3, 0.5, 0.6, 0.2], ThresholdSpec::beta(2.0, 2.0).unwrap())
        .unwrap();
    let seed = NodeSet::singleton(0);
    let n = 40_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fast: Vec<Trace> = (0..n).map(|_| m.simulate_trace(&seed, &mut rng).unwrap()).collect();
    let slow: Vec<Trace> = (0..n).map(|_| m.simulate_trace_sequential(&seed, &mut rng).unwrap()).collect();
    for sample in [frequencies(&fast), frequencies(&slow)] {
        for tr in enumerate_feasible_traces(&g, &seed, 10_000).unwrap() {
            let p = probability(&m, &tr);
            let k = *sample.get(&tr.steps).unwrap_or(&0) as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!((k - n as f64 * p).abs() < 5.0 * sd, "{tr:?}: {k} vs {}", n as f64 * p);
        }
    }
}

#[test]
fn simulated_traces_are_feasible_and_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = random_graph(12, 0.2, &mut rng);
    let m = model_with(g.clone(), ThresholdSpec::uniform(), 1.0, &mut rng);
    let seeds = glt::SeedDistribution::uniform_by_size(3);
    let a = m.simulate_traces(&seeds, 200, SeedTree::new(5)).unwrap();
    let b = m.simulate_traces(&seeds, 200, SeedTree::new(5)).unwrap();
    assert_eq!(a, b);
    for t in &a {
        t.validate(&g).unwrap();
        assert!(probability(&m, t) > 0.0);
    }
}
