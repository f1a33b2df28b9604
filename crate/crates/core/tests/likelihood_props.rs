mod common;

use glt::likelihood::{build_all_node_data, build_node_data, evaluate, node_gradient, node_log_likelihood, NodeData};
use glt::{GltModel, Graph, SeedDistribution, SeedTree, ThresholdSpec};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn graph() -> Graph {
    Graph::new(5, &[(0, 3), (1, 3), (2, 3), (0, 1), (1, 2), (3, 4), (2, 4)]).unwrap()
}

fn data_for(spec: ThresholdSpec, seed: u64) -> NodeData {
    let g = graph();
    let m = GltModel::with_common_threshold(g.clone(), vec![0.5, 0.4, 0.2, 0.3, 0.3, 0.4, 0.5], spec).unwrap();
    let traces = m
        .simulate_traces(&SeedDistribution::uniform_by_size(2), 1500, SeedTree::new(seed))
        .unwrap();
    build_node_data(&traces, &g, 3).unwrap()
}

/// Point strictly inside the truncated set, away from its faces.
fn interior_point<R: Rng>(bound: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.02..0.5)).collect();
        let s: f64 = x.iter().sum();
        if s < 0.95 * bound.min(1.0) {
            return x;
        }
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(1.0, f64::max);
    diff / scale
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for spec in families() {
        let data = data_for(spec, 7);
        assert!(data.activations() > 50);
        for _ in 0..20 {
            let x = interior_point(spec.support_bound(), &mut rng);
            let ev = evaluate(&data, &x, &spec, true).unwrap();
            let h = 1e-6;
            let mut fd_grad = vec![0.0; 3];
            let mut fd_hess = DMatrix::zeros(3, 3);
            for i in 0..3 {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = node_log_likelihood(&data, &up, &spec).unwrap();
                let fd = node_log_likelihood(&data, &dn, &spec).unwrap();
                fd_grad[i] = (fu - fd) / (2.0 * h);
                let gu = node_gradient(&data, &up, &spec).unwrap();
                let gd = node_gradient(&data, &dn, &spec).unwrap();
                fd_hess.set_column(i, &((gu - gd) / (2.0 * h)));
            }
            let e = rel_err(ev.gradient.as_slice(), &fd_grad);
            assert!(e < 1e-5, "{spec}: gradient error {e}");
            let e = rel_err(ev.hessian.as_slice(), fd_hess.as_slice());
            assert!(e < 1e-4, "{spec}: hessian error {e}");
        }
    }
}

#[test]
fn log_concave_families_give_concave_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for spec in families() {
        assert!(spec.has_log_concave_density());
        let data = data_for(spec, 8);
        for _ in 0..20 {
            let x = interior_point(spec.support_bound(), &mut rng);
            let hess = evaluate(&data, &x, &spec, true).unwrap().hessian;
            let top = SymmetricEigen::new(hess.clone()).eigenvalues.max();
            assert!(top <= 1e-9 * hess.norm().max(1.0), "{spec}: {top}");
            // midpoint concavity along a random chord
            let y = interior_point(spec.support_bound(), &mut rng);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let f = |p: &[f64]| node_log_likelihood(&data, p, &spec).unwrap();
            assert!(f(&mid) >= 0.5 * (f(&x) + f(&y)) - 1e-9);
        }
    }
}

#[test]
fn trace_likelihood_decomposes_by_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..6 {
        let g = random_graph(8, 0.3, &mut rng);
        let spec = families()[i % 3];
        let m = model_with(g.clone(), spec, 1.0, &mut rng);
        let traces = m
            .simulate_traces(&SeedDistribution::uniform_by_size(3), 300, SeedTree::new(i as u64))
            .unwrap();
        let total: f64 = traces.iter().map(|t| m.trace_log_probability(t, 0.0).unwrap()).sum();
        let by_node: f64 = build_all_node_data(&traces, &g)
            .unwrap()
            .iter()
            .filter(|d| d.dim() > 0)
            .map(|d| node_log_likelihood(d, m.node_weights(d.node), &spec).unwrap())
            .sum();
        assert!((total - by_node).abs() < 1e-8 * total.abs().max(1.0), "{total} vs {by_node}");
    }
}

#[test]
fn uninformative_node_is_flat() {
    let g = graph();
    let data = build_node_data(&[], &g, 3).unwrap();
    let ev = evaluate(&data, &[0.1, 0.1, 0.1], &ThresholdSpec::uniform(), true).unwrap();
    assert_eq!(ev.value, 0.0);
    assert_eq!(ev.gradient, DVector::zeros(3));
}
