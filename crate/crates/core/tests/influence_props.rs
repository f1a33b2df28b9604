mod common;

use glt::diagnostics::check_submodularity_exact;
use glt::graph::sample_weights_simplex;
use glt::influence::{
    estimate_spread_mc, exhaustive_im, greedy_im, im_solution_gap, lipschitz_at_zero, spread_bipartite_closed_form,
    ImSolver, SpreadEvaluator,
};
use glt::{GltModel, Graph, NodeSet, SeedTree, ThresholdSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const CAP: usize = 5_000_000;

fn battery() -> Vec<GltModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    (0..20)
        .map(|i| {
            let n = rng.random_range(5..=8);
            let g = random_graph(n, 0.25, &mut rng);
            model_with(g, concave_families()[i % 3], 1.0, &mut rng)
        })
        .collect()
}

#[test]
fn concave_instances_are_submodular() {
    for m in battery() {
        let r = check_submodularity_exact(&m, m.graph().node_count(), CAP).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations.first());
        assert!(r.monotonicity_violations.is_empty());
        assert!(r.checked > 0);
    }
}

#[test]
fn greedy_is_near_optimal() {
    let bound = 1.0 - (-1.0f64).exp();
    let ev = SpreadEvaluator::Exact { cap: CAP };
    for m in battery() {
        for k in 1..=3 {
            let greedy = greedy_im(&m, k, &ev).unwrap();
            let best = exhaustive_im(&m, k, &ev).unwrap();
            assert!(greedy.spread >= bound * best.spread - 1e-9);
            assert!(greedy.spread <= best.spread + 1e-9);
            assert!(greedy.gains.iter().all(|&g| g >= -1e-12));
        }
    }
}

#[test]
fn fixed_node_gains_do_not_grow_along_greedy_path() {
    let ev = SpreadEvaluator::Exact { cap: CAP };
    for m in battery() {
        let n = m.graph().node_count();
        let sol = greedy_im(&m, n.min(4), &ev).unwrap();
        let spread = |s: &NodeSet| ev.spread(&m, s).unwrap().mean;
        for v in 0..n {
            let mut s = NodeSet::new();
            let mut last = f64::INFINITY;
            for &pick in &sol.seeds {
                if s.contains(v) {
                    break;
                }
                let mut with = s.clone();
                with.insert(v);
                let gain = spread(&with) - spread(&s);
                assert!(gain <= last + 1e-9);
                last = gain;
                s.insert(pick);
            }
        }
    }
}

fn bipartite_model<R: Rng>(rng: &mut R) -> GltModel {
    let p = rng.random_range(2..=4);
    let g = random_bipartite(p, 8 - p, 0.5, rng);
    let specs: Vec<ThresholdSpec> = (0..8).map(|_| concave_families()[rng.random_range(0..3)]).collect();
    let w = sample_weights_simplex(&g, 1.0, rng).unwrap();
    GltModel::new(g, w, specs).unwrap()
}

#[test]
fn closed_form_matches_exact_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let m = bipartite_model(&mut rng);
        for s in all_nonempty_subsets(8).into_iter().step_by(7) {
            let a = spread_bipartite_closed_form(&m, &s).unwrap();
            let b = m.exact_spread(&s, CAP).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn closed_form_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let m = bipartite_model(&mut rng);
    let s = NodeSet::from([0, 1]);
    let e = estimate_spread_mc(&m, &s, 100_000, &SeedTree::new(1)).unwrap();
    let exact = spread_bipartite_closed_form(&m, &s).unwrap();
    assert!((e.mean - exact).abs() < 4.0 * e.stderr, "{e:?} vs {exact}");
}

#[test]
fn standard_error_scales_with_replicates() {
    let g = Graph::new(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
    let m = GltModel::from_lt(g, vec![0.5, 0.5, 0.4, 0.4]).unwrap();
    let s = NodeSet::singleton(0);
    let mut ratios = Vec::new();
    for r in 0..10u64 {
        let a = estimate_spread_mc(&m, &s, 2000, &SeedTree::new(r)).unwrap();
        let b = estimate_spread_mc(&m, &s, 4000, &SeedTree::new(100 + r)).unwrap();
        ratios.push(a.stderr / b.stderr);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((1.3..=1.6).contains(&mean), "{ratios:?}");
}

fn perturbed<R: Rng>(m: &GltModel, rng: &mut R) -> GltModel {
    let g = m.graph();
    let mut w = m.weights().to_vec();
    for v in 0..g.node_count() {
        let block = &mut w[g.in_edge_range(v)];
        for x in block.iter_mut() {
            *x = (*x + rng.random_range(-0.1..0.1)).max(0.0);
        }
        let total: f64 = block.iter().sum();
        if total > 1.0 {
            block.iter_mut().for_each(|x| *x /= total);
        }
    }
    m.with_weights(w).unwrap()
}

#[test]
fn estimation_error_bounds_solution_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..100 {
        let m = bipartite_model(&mut rng);
        let est = perturbed(&m, &mut rng);
        let k = rng.random_range(1..=3);
        let gap = im_solution_gap(&m, &est, k, &SpreadEvaluator::Bipartite, ImSolver::Exhaustive).unwrap();
        let l1: f64 = m.weights().iter().zip(est.weights()).map(|(a, b)| (a - b).abs()).sum();
        assert!(gap >= -1e-12);
        assert!(gap <= 2.0 * lipschitz_at_zero(&m) * l1 + 1e-9, "{gap} vs {l1}");
    }
}

#[test]
fn gap_is_label_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let m = bipartite_model(&mut rng);
    let est = perturbed(&m, &mut rng);
    let perm: Vec<usize> = (0..8).rev().collect();
    let relabel = |x: &GltModel| {
        let edges: Vec<(usize, usize)> = x.graph().edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let g = Graph::new(8, &edges).unwrap();
        let mut w = vec![0.0; edges.len()];
        for (e, &(u, v)) in edges.iter().enumerate() {
            let pos = g.parent_position(v, u).unwrap();
            w[g.in_edge_range(v).start + pos] = x.weights()[e];
        }
        let mut specs = vec![ThresholdSpec::uniform(); 8];
        for v in 0..8 {
            specs[perm[v]] = *x.threshold(v);
        }
        GltModel::new(g, w, specs).unwrap()
    };
    for k in 1..=3 {
        let a = im_solution_gap(&m, &est, k, &SpreadEvaluator::Bipartite, ImSolver::Exhaustive).unwrap();
        let b = im_solution_gap(&relabel(&m), &relabel(&est), k, &SpreadEvaluator::Bipartite, ImSolver::Exhaustive).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_greedy_is_deterministic_across_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let g = random_graph(12, 0.2, &mut rng);
    let m = model_with(g, ThresholdSpec::uniform(), 1.0, &mut rng);
    let ev = SpreadEvaluator::MonteCarlo { replicates: 300, seed: 9 };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| greedy_im(&m, 3, &ev).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a.seeds.len(), 3);
}

#[test]
fn engineered_star_breaks_submodularity() {
    let g = Graph::new(4, &[(0, 3), (1, 3), (2, 3)]).unwrap();
    let m = GltModel::with_common_threshold(g, vec![0.1, 0.4, 0.3], ThresholdSpec::beta(2.0, 1.0).unwrap()).unwrap();
    let r = check_submodularity_exact(&m, 3, CAP).unwrap();
    assert!(!r.violations.is_empty());
}
