//! Spread estimation and greedy influence maximization.

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GltError, Result};
use crate::graph::NodeSet;
use crate::model::GltModel;
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadEstimate {
    pub mean: f64,
    #[serde(rename = "se")]
    pub stderr: f64,
    pub replicates: usize,
}

impl SpreadEstimate {
    fn exact(value: f64) -> Self {
        SpreadEstimate {
            mean: value,
            stderr: 0.0,
            replicates: 0,
        }
    }

    fn from_sizes(sizes: &[f64]) -> Self {
        let r = sizes.len();
        let mean = sizes.iter().sum::<f64>() / r as f64;
        let stderr = if r > 1 {
            let ss: f64 = sizes.iter().map(|x| (x - mean).powi(2)).sum();
            (ss / (r - 1) as f64 / r as f64).sqrt()
        } else {
            0.0
        };
        SpreadEstimate {
            mean,
            stderr,
            replicates: r,
        }
    }
}

fn draw_uniforms(root: &SeedTree, replicate: usize, n: usize) -> Vec<f64> {
    let mut rng = root.stream(replicate as u64);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Monte Carlo spread; replicate `i` uses stream `i` of `root`.
pub fn estimate_spread_mc(model: &GltModel, seed: &NodeSet, replicates: usize, root: &SeedTree) -> Result<SpreadEstimate> {
    if replicates == 0 {
        return Err(GltError::InvalidArgument("replicates must be at least 1".into()));
    }
    let n = model.graph().node_count();
    let sizes = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let u = draw_uniforms(root, i, n);
            model.simulate_with_uniforms(seed, &u).map(|t| t.final_size() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpreadEstimate::from_sizes(&sizes))
}

/// Child nodes of a bipartite model, or the first node that is both a
/// parent and a child.
fn bipartite_children(model: &GltModel) -> Result<Vec<usize>> {
    let g = model.graph();
    let mut children = Vec::new();
    for v in 0..g.node_count() {
        if g.in_degree(v) > 0 {
            if !g.child_slice(v).is_empty() {
                return Err(GltError::NotBipartite(v));
            }
            children.push(v);
        }
    }
    Ok(children)
}

/// `|S| + sum over children v outside S of F_v(B_v(S))`.
pub fn spread_bipartite_closed_form(model: &GltModel, seed: &NodeSet) -> Result<f64> {
    let children = bipartite_children(model)?;
    let n = model.graph().node_count();
    if let Some(v) = seed.iter().find(|&v| v >= n) {
        return Err(GltError::NodeOutOfRange { index: v, node_count: n });
    }
    let reached: f64 = children
        .into_iter()
        .filter(|&v| !seed.contains(v))
        .map(|v| model.threshold(v).cdf(model.influence(v, seed)))
        .sum();
    Ok(seed.len() as f64 + reached)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpreadEvaluator {
    MonteCarlo { replicates: usize, seed: u64 },
    Exact { cap: usize },
    Bipartite,
}

impl SpreadEvaluator {
    pub fn is_exact(&self) -> bool {
        !matches!(self, SpreadEvaluator::MonteCarlo { .. })
    }

    pub fn spread(&self, model: &GltModel, seed: &NodeSet) -> Result<SpreadEstimate> {
        match self {
            SpreadEvaluator::MonteCarlo { replicates, seed: root } => {
                estimate_spread_mc(model, seed, *replicates, &SeedTree::new(*root).child("spread"))
            }
            SpreadEvaluator::Exact { cap } => {
                if seed.is_empty() {
                    return Ok(SpreadEstimate::exact(0.0));
                }
                model.exact_spread(seed, *cap).map(SpreadEstimate::exact)
            }
            SpreadEvaluator::Bipartite => spread_bipartite_closed_form(model, seed).map(SpreadEstimate::exact),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImSolution {
    pub seeds: Vec<usize>,
    pub gains: Vec<f64>,
    pub spread: f64,
    pub se: f64,
}

fn check_budget(model: &GltModel, budget: usize) -> Result<()> {
    let n = model.graph().node_count();
    if budget > n {
        return Err(GltError::InvalidArgument(format!("budget {budget} exceeds node count {n}")));
    }
    Ok(())
}

/// Index of the largest value; ties go to the earliest entry.
fn argmax(values: &[(usize, f64)]) -> (usize, f64) {
    let mut best = values[0];
    for &(c, g) in &values[1..] {
        if g > best.1 {
            best = (c, g);
        }
    }
    best
}

/// Greedy seed selection. The Monte Carlo evaluator shares the replicate
/// streams of each step across all candidates.
pub fn greedy_im(model: &GltModel, budget: usize, evaluator: &SpreadEvaluator) -> Result<ImSolution> {
    check_budget(model, budget)?;
    let n = model.graph().node_count();
    let mut chosen = NodeSet::new();
    let mut seeds = Vec::with_capacity(budget);
    let mut gains = Vec::with_capacity(budget);
    let mut current = 0.0;
    for step in 0..budget {
        let candidates: Vec<usize> = (0..n).filter(|&v| !chosen.contains(v)).collect();
        let scored: Vec<(usize, f64)> = match evaluator {
            SpreadEvaluator::MonteCarlo { replicates, seed } => {
                if *replicates == 0 {
                    return Err(GltError::InvalidArgument("replicates must be at least 1".into()));
                }
                let stream = SeedTree::new(*seed).child("greedy").index(step as u64);
                let draws: Vec<Vec<f64>> = (0..*replicates)
                    .into_par_iter()
                    .map(|r| draw_uniforms(&stream, r, n))
                    .collect();
                let mean = |set: &NodeSet| -> Result<f64> {
                    let mut total = 0usize;
                    for u in &draws {
                        total += model.simulate_with_uniforms(set, u)?.final_size();
                    }
                    Ok(total as f64 / draws.len() as f64)
                };
                let base = if chosen.is_empty() { 0.0 } else { mean(&chosen)? };
                candidates
                    .par_iter()
                    .map(|&c| {
                        let mut s = chosen.clone();
                        s.insert(c);
                        mean(&s).map(|m| (c, m - base))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            _ => candidates
                .par_iter()
                .map(|&c| {
                    let mut s = chosen.clone();
                    s.insert(c);
                    evaluator.spread(model, &s).map(|e| (c, e.mean - current))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let (pick, gain) = argmax(&scored);
        chosen.insert(pick);
        seeds.push(pick);
        gains.push(gain);
        if evaluator.is_exact() {
            current += gain;
        }
    }
    let final_estimate = match evaluator {
        SpreadEvaluator::MonteCarlo { replicates, seed } => {
            estimate_spread_mc(model, &chosen, *replicates, &SeedTree::new(*seed).child("final"))?
        }
        _ => evaluator.spread(model, &chosen)?,
    };
    Ok(ImSolution {
        seeds,
        gains,
        spread: final_estimate.mean,
        se: final_estimate.stderr,
    })
}

/// Best seed set of size `budget` over all subsets; ties go to the
/// lexicographically first set.
pub fn exhaustive_im(model: &GltModel, budget: usize, evaluator: &SpreadEvaluator) -> Result<ImSolution> {
    check_budget(model, budget)?;
    let n = model.graph().node_count();
    let sets: Vec<Vec<usize>> = (0..n).combinations(budget).collect();
    let spreads = sets
        .par_iter()
        .map(|s| evaluator.spread(model, &NodeSet::from_sorted_unchecked(s.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, e) in spreads.iter().enumerate() {
        if e.mean > spreads[best].mean {
            best = i;
        }
    }
    Ok(ImSolution {
        seeds: sets[best].clone(),
        gains: Vec::new(),
        spread: spreads[best].mean,
        se: spreads[best].stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImSolver {
    Exhaustive,
    Greedy,
}

/// `sigma_true(S*(true)) - sigma_true(S*(est))`, both sets chosen by `solver`
/// and scored under the true model.
pub fn im_solution_gap(
    true_model: &GltModel,
    est_model: &GltModel,
    budget: usize,
    evaluator: &SpreadEvaluator,
    solver: ImSolver,
) -> Result<f64> {
    if true_model.graph() != est_model.graph() {
        return Err(GltError::InvalidArgument("models are defined on different graphs".into()));
    }
    let solve = |m: &GltModel| match solver {
        ImSolver::Exhaustive => exhaustive_im(m, budget, evaluator),
        ImSolver::Greedy => greedy_im(m, budget, evaluator),
    };
    let best = solve(true_model)?;
    let est = solve(est_model)?;
    let est_set: NodeSet = est.seeds.iter().copied().collect();
    let best_set: NodeSet = best.seeds.iter().copied().collect();
    Ok(evaluator.spread(true_model, &best_set)?.mean - evaluator.spread(true_model, &est_set)?.mean)
}

/// `max_v F_v'(0)` over child nodes.
pub fn lipschitz_at_zero(model: &GltModel) -> f64 {
    model
        .graph()
        .child_nodes()
        .map(|v| model.threshold(v).density_at_zero())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::thresholds::ThresholdSpec;

    fn path() -> GltModel {
        GltModel::from_lt(Graph::new(3, &[(0, 1), (1, 2)]).unwrap(), vec![0.5, 0.4]).unwrap()
    }

    #[test]
    fn zero_weights_spread_is_seed_size() {
        let m = GltModel::from_lt(Graph::new(3, &[(0, 1), (1, 2)]).unwrap(), vec![0.0, 0.0]).unwrap();
        let e = estimate_spread_mc(&m, &NodeSet::from([0, 2]), 50, &SeedTree::new(1)).unwrap();
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn path_spread_mc() {
        let e = estimate_spread_mc(&path(), &NodeSet::singleton(0), 100_000, &SeedTree::new(7)).unwrap();
        assert!((e.mean - 1.7).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn mc_is_deterministic() {
        let a = estimate_spread_mc(&path(), &NodeSet::singleton(0), 1000, &SeedTree::new(3)).unwrap();
        let b = estimate_spread_mc(&path(), &NodeSet::singleton(0), 1000, &SeedTree::new(3)).unwrap();
        assert_eq!(a, b);
    }

    fn bipartite() -> GltModel {
        // parents 0, 1; children 2, 3, 4
        let g = Graph::new(5, &[(0, 2), (0, 3), (1, 3), (1, 4)]).unwrap();
        GltModel::from_lt(g, vec![0.6, 0.6, 0.3, 0.7]).unwrap()
    }

    #[test]
    fn closed_form_all_parents() {
        let m = bipartite();
        let s = spread_bipartite_closed_form(&m, &NodeSet::from([0, 1])).unwrap();
        assert!((s - (2.0 + 0.6 + 0.9 + 0.7)).abs() < 1e-12);
        let exact = m.exact_spread(&NodeSet::from([0, 1]), 1000).unwrap();
        assert!((s - exact).abs() < 1e-12);
    }

    #[test]
    fn closed_form_rejects_paths() {
        assert!(matches!(
            spread_bipartite_closed_form(&path(), &NodeSet::singleton(0)),
            Err(GltError::NotBipartite(1))
        ));
    }

    #[test]
    fn greedy_picks_larger_cover() {
        // parent 0 reaches 0.6 + 0.6 = 1.2, parent 1 reaches 0.3 + 0.4 = 0.7
        let g = Graph::new(5, &[(0, 2), (0, 3), (1, 3), (1, 4)]).unwrap();
        let m = GltModel::from_lt(g, vec![0.6, 0.6, 0.3, 0.4]).unwrap();
        let sol = greedy_im(&m, 1, &SpreadEvaluator::Bipartite).unwrap();
        assert_eq!(sol.seeds, vec![0]);
        assert!((sol.spread - 2.2).abs() < 1e-12);
    }

    #[test]
    fn full_budget() {
        let m = path();
        for ev in [SpreadEvaluator::Exact { cap: 10_000 }, SpreadEvaluator::MonteCarlo { replicates: 20, seed: 1 }] {
            let sol = greedy_im(&m, 3, &ev).unwrap();
            let mut s = sol.seeds.clone();
            s.sort();
            assert_eq!(s, vec![0, 1, 2]);
            assert_eq!(sol.spread, 3.0);
        }
        assert!(greedy_im(&m, 4, &SpreadEvaluator::Bipartite).is_err());
    }

    #[test]
    fn ties_break_low() {
        let m = GltModel::from_lt(Graph::new(3, &[(0, 1)]).unwrap(), vec![0.0]).unwrap();
        let sol = greedy_im(&m, 2, &SpreadEvaluator::Exact { cap: 100 }).unwrap();
        assert_eq!(sol.seeds, vec![0, 1]);
        let best = exhaustive_im(&m, 2, &SpreadEvaluator::Exact { cap: 100 }).unwrap();
        assert_eq!(best.seeds, vec![0, 1]);
    }

    #[test]
    fn self_gap_is_zero() {
        let m = bipartite();
        let gap = im_solution_gap(&m, &m, 1, &SpreadEvaluator::Bipartite, ImSolver::Exhaustive).unwrap();
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn lipschitz_constants() {
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let m = GltModel::with_common_threshold(g, vec![0.5], ThresholdSpec::exponential()).unwrap();
        assert_eq!(lipschitz_at_zero(&m), 1.0);
        assert_eq!(lipschitz_at_zero(&path()), 1.0);
    }
}
