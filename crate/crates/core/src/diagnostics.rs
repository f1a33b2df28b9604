//! Structural diagnostics: identifiability of the edge weights, exhaustive
//! submodularity checks of the spread function, and the triggering-model
//! embedding system for in-stars.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GltError, Result};
use crate::graph::{Graph, NodeSet, SeedDistribution};
use crate::model::GltModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Identifiable {
        /// Achievable newly-active parent sets `S_1, ..., S_m`.
        witnesses: Vec<NodeSet>,
        /// `X[i][j] = 1(u_i in S_j)`.
        matrix: Vec<Vec<u8>>,
        determinant: String,
    },
    NotIdentifiable {
        rank: usize,
        deficiency: usize,
        achievable: Vec<NodeSet>,
    },
    /// The forward search hit the state cap before reaching full rank.
    Unknown { rank: usize, states: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeIdentifiability {
    pub node: usize,
    pub parents: Vec<usize>,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityReport {
    pub nodes: Vec<NodeIdentifiability>,
}

impl IdentifiabilityReport {
    pub fn identifiable(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| matches!(n.verdict, Verdict::Identifiable { .. }))
    }

    pub fn verdict(&self, v: usize) -> Option<&Verdict> {
        self.nodes.iter().find(|n| n.node == v).map(|n| &n.verdict)
    }
}

/// Incremental row echelon form over the integers.
#[derive(Default)]
struct ExactBasis {
    rows: Vec<(usize, Vec<BigInt>)>,
}

impl ExactBasis {
    /// Adds `x` if it is independent of the current rows.
    fn insert(&mut self, x: &[u8]) -> bool {
        let mut x: Vec<BigInt> = x.iter().map(|&b| BigInt::from(b)).collect();
        for (pc, row) in &self.rows {
            if x[*pc].is_zero() {
                continue;
            }
            let (a, b) = (row[*pc].clone(), x[*pc].clone());
            for (xi, ri) in x.iter_mut().zip(row) {
                *xi = &a * &*xi - &b * ri;
            }
            let g = x.iter().fold(BigInt::zero(), |g, v| g.gcd(v));
            if !g.is_zero() {
                x.iter_mut().for_each(|v| *v /= &g);
            }
        }
        match x.iter().position(|v| !v.is_zero()) {
            Some(pc) => {
                self.rows.push((pc, x));
                true
            }
            None => false,
        }
    }

    fn rank(&self) -> usize {
        self.rows.len()
    }
}

/// Determinant by fraction-free (Bareiss) elimination.
pub fn exact_determinant(matrix: &[Vec<u8>]) -> BigInt {
    let n = matrix.len();
    let mut a: Vec<Vec<BigInt>> = matrix
        .iter()
        .map(|r| r.iter().map(|&x| BigInt::from(x)).collect())
        .collect();
    let mut sign = 1;
    let mut prev = BigInt::from(1);
    for k in 0..n {
        if a[k][k].is_zero() {
            match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                Some(i) => {
                    a.swap(k, i);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (&a[i][j] * &a[k][k] - &a[i][k] * &a[k][j]) / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    if n == 0 {
        return BigInt::from(1);
    }
    a[n - 1][n - 1].clone() * sign
}

/// Checks, for every child node, whether its newly-active parent sets over
/// feasible traces that keep it inactive span the parent space.
pub fn check_identifiability(graph: &Graph, seeds: &SeedDistribution, state_cap: usize) -> Result<IdentifiabilityReport> {
    let n = graph.node_count();
    seeds.validate(n)?;
    let support = seeds.support(n, state_cap)?;
    let nodes = graph
        .child_nodes()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|v| node_identifiability(graph, &support, v, state_cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(IdentifiabilityReport { nodes })
}

fn node_identifiability(graph: &Graph, support: &[NodeSet], v: usize, cap: usize) -> Result<NodeIdentifiability> {
    let parents: Vec<usize> = graph.parent_slice(v).collect();
    let m = parents.len();
    let mut basis = ExactBasis::default();
    let mut witnesses = Vec::new();
    let mut achievable = BTreeSet::new();
    // states are (A_t, D_t) with v kept inactive
    let mut seen: HashSet<(NodeSet, NodeSet)> = HashSet::new();
    let mut stack: Vec<(NodeSet, NodeSet)> = support
        .iter()
        .filter(|s| !s.contains(v))
        .map(|s| (s.clone(), s.clone()))
        .collect();
    let mut full = false;
    let mut capped = false;
    while let Some((active, newest)) = stack.pop() {
        if !seen.insert((active.clone(), newest.clone())) {
            continue;
        }
        if seen.len() > cap {
            capped = true;
            break;
        }
        let s: NodeSet = parents.iter().copied().filter(|&u| newest.contains(u)).collect();
        if !s.is_empty() && achievable.insert(s.clone()) {
            let column: Vec<u8> = parents.iter().map(|&u| s.contains(u) as u8).collect();
            if basis.insert(&column) {
                witnesses.push(s);
                if basis.rank() == m {
                    full = true;
                    break;
                }
            }
        }
        let cand: Vec<usize> = graph
            .children_of_set(&newest)?
            .iter()
            .filter(|&c| c != v && !active.contains(c))
            .collect();
        if cand.len() >= usize::BITS as usize - 1 {
            capped = true;
            break;
        }
        for mask in 1usize..(1usize << cand.len()) {
            let next: NodeSet = cand
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &c)| c)
                .collect();
            let grown = active.union(&next);
            if !seen.contains(&(grown.clone(), next.clone())) {
                stack.push((grown, next));
            }
            if stack.len() > cap {
                capped = true;
                break;
            }
        }
        if capped {
            break;
        }
    }
    let verdict = if full {
        let matrix: Vec<Vec<u8>> = parents
            .iter()
            .map(|&u| witnesses.iter().map(|s| s.contains(u) as u8).collect())
            .collect();
        let det = exact_determinant(&matrix);
        debug_assert!(!det.is_zero());
        Verdict::Identifiable {
            witnesses,
            matrix,
            determinant: det.to_string(),
        }
    } else if capped {
        Verdict::Unknown {
            rank: basis.rank(),
            states: seen.len(),
        }
    } else {
        Verdict::NotIdentifiable {
            rank: basis.rank(),
            deficiency: m - basis.rank(),
            achievable: achievable.into_iter().collect(),
        }
    };
    Ok(NodeIdentifiability {
        node: v,
        parents,
        verdict,
    })
}

/// A violated instance of `sigma(v + S') - sigma(S') >= sigma(v + S) - sigma(S)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmodularityViolation {
    pub smaller: NodeSet,
    pub larger: NodeSet,
    pub node: usize,
    pub gain_smaller: f64,
    pub gain_larger: f64,
}

/// A violated instance of `sigma(S') <= sigma(S)` for `S' ⊂ S`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub smaller: NodeSet,
    pub larger: NodeSet,
    pub spread_smaller: f64,
    pub spread_larger: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmodularityReport {
    pub checked: usize,
    pub violations: Vec<SubmodularityViolation>,
    pub monotonicity_violations: Vec<MonotonicityViolation>,
}

pub const SUBMODULARITY_TOLERANCE: f64 = 1e-9;

/// Exact spread with memoization over seed sets; `sigma(empty) = 0`.
struct SpreadTable<'a> {
    model: &'a GltModel,
    cap: usize,
    memo: HashMap<u64, f64>,
}

impl SpreadTable<'_> {
    fn get(&mut self, mask: u64) -> Result<f64> {
        if mask == 0 {
            return Ok(0.0);
        }
        if let Some(&s) = self.memo.get(&mask) {
            return Ok(s);
        }
        let set: NodeSet = (0..64).filter(|i| mask >> i & 1 == 1).collect();
        let s = self.model.exact_spread(&set, self.cap)?;
        self.memo.insert(mask, s);
        Ok(s)
    }
}

fn mask_set(mask: u64) -> NodeSet {
    (0..64).filter(|i| mask >> i & 1 == 1).collect()
}

/// Checks the diminishing-returns inequality for every `S' ⊂ S` with
/// `|S| <= max_budget` and every `v` outside `S`, plus monotonicity.
pub fn check_submodularity_exact(model: &GltModel, max_budget: usize, cap: usize) -> Result<SubmodularityReport> {
    let n = model.graph().node_count();
    if n > 20 {
        return Err(GltError::InvalidArgument(format!(
            "exhaustive submodularity check supports at most 20 nodes, got {n}"
        )));
    }
    let mut table = SpreadTable {
        model,
        cap,
        memo: HashMap::new(),
    };
    let mut violations = Vec::new();
    let mut monotonicity_violations = Vec::new();
    let mut checked = 0;
    let full = 1u64 << n;
    for large in 0..full {
        if large.count_ones() as usize > max_budget {
            continue;
        }
        let sigma_large = table.get(large)?;
        // proper subsets of `large`
        let mut small = large;
        loop {
            small = small.wrapping_sub(1) & large;
            let sigma_small = table.get(small)?;
            if sigma_small > sigma_large + SUBMODULARITY_TOLERANCE {
                monotonicity_violations.push(MonotonicityViolation {
                    smaller: mask_set(small),
                    larger: mask_set(large),
                    spread_smaller: sigma_small,
                    spread_larger: sigma_large,
                });
            }
            for v in (0..n).filter(|&v| large >> v & 1 == 0) {
                let bit = 1u64 << v;
                let gain_small = table.get(small | bit)? - sigma_small;
                let gain_large = table.get(large | bit)? - sigma_large;
                checked += 1;
                if gain_small < gain_large - SUBMODULARITY_TOLERANCE {
                    violations.push(SubmodularityViolation {
                        smaller: mask_set(small),
                        larger: mask_set(large),
                        node: v,
                        gain_smaller: gain_small,
                        gain_larger: gain_large,
                    });
                }
            }
            if small == 0 {
                break;
            }
        }
    }
    Ok(SubmodularityReport {
        checked,
        violations,
        monotonicity_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggeringEmbedding {
    /// Probability of each parent subset being the triggering set, keyed by
    /// the subset (positions among the parents).
    pub probabilities: BTreeMap<NodeSet, f64>,
    /// Subsets with negative probability; empty iff a valid distribution exists.
    pub negative: Vec<NodeSet>,
}

impl TriggeringEmbedding {
    pub fn feasible(&self) -> bool {
        self.negative.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }
}

const MAX_EMBEDDING_PARENTS: usize = 12;

/// Solves for triggering-set probabilities `P_S` reproducing a GLT in-star:
/// `sum_{S meets T} P_S = F(B(T))` for every nonempty `T`, and `sum_S P_S = 1`.
/// Subsets are indexed by parent position `0..m`.
pub fn solve_triggering_embedding(weights: &[f64], cdf: &dyn Fn(f64) -> f64) -> Result<TriggeringEmbedding> {
    let m = weights.len();
    if m == 0 || m > MAX_EMBEDDING_PARENTS {
        return Err(GltError::InvalidArgument(format!(
            "embedding needs between 1 and {MAX_EMBEDDING_PARENTS} parents, got {m}"
        )));
    }
    let k = 1usize << m;
    // unknown j is P_S for the subset with bit mask j; equation 0 is the total
    let mut a = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for j in 0..k {
        a[(0, j)] = 1.0;
    }
    rhs[0] = 1.0;
    for t in 1..k {
        for s in 0..k {
            if s & t != 0 {
                a[(t, s)] = 1.0;
            }
        }
        let load: f64 = (0..m).filter(|i| t >> i & 1 == 1).map(|i| weights[i]).sum();
        rhs[t] = cdf(load);
    }
    let x = a.lu().solve(&rhs).ok_or(GltError::SingularSystem)?;
    let mut probabilities = BTreeMap::new();
    let mut negative = Vec::new();
    for (j, &p) in x.iter().enumerate() {
        let set = mask_set(j as u64);
        if p < -1e-12 {
            negative.push(set.clone());
        }
        probabilities.insert(set, p);
    }
    Ok(TriggeringEmbedding {
        probabilities,
        negative,
    })
}

/// Embedding system for the in-star of `center` in a model.
pub fn triggering_embedding_for(model: &GltModel, center: usize) -> Result<TriggeringEmbedding> {
    let spec = *model.threshold(center);
    solve_triggering_embedding(model.node_weights(center), &|x| spec.cdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thresholds::ThresholdSpec;

    fn set<const N: usize>(v: [usize; N]) -> NodeSet {
        NodeSet::from(v)
    }

    fn star(m: usize) -> Graph {
        let edges: Vec<_> = (0..m).map(|i| (i, m)).collect();
        Graph::new(m + 1, &edges).unwrap()
    }

    #[test]
    fn determinants() {
        assert_eq!(exact_determinant(&[vec![1, 1], vec![0, 1]]), BigInt::from(1));
        assert_eq!(exact_determinant(&[vec![1, 1], vec![1, 1]]), BigInt::from(0));
        assert_eq!(
            exact_determinant(&[vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]),
            BigInt::from(2)
        );
        assert_eq!(exact_determinant(&[vec![0, 1], vec![1, 0]]), BigInt::from(-1));
    }

    #[test]
    fn star_examples() {
        let g = star(2);
        let point = SeedDistribution::explicit(vec![(set([0, 1]), 1.0)]).unwrap();
        let r = check_identifiability(&g, &point, 1000).unwrap();
        assert!(matches!(r.verdict(2), Some(Verdict::NotIdentifiable { rank: 1, deficiency: 1, .. })));

        let two = SeedDistribution::explicit(vec![(set([0]), 0.5), (set([0, 1]), 0.5)]).unwrap();
        let r = check_identifiability(&g, &two, 1000).unwrap();
        match r.verdict(2).unwrap() {
            Verdict::Identifiable {
                witnesses, determinant, ..
            } => {
                let w: BTreeSet<_> = witnesses.iter().cloned().collect();
                assert_eq!(w, BTreeSet::from([set([0]), set([0, 1])]));
                assert_eq!(determinant.trim_start_matches('-'), "1");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_parent() {
        let g = Graph::new(3, &[(0, 2), (1, 2)]).unwrap();
        let seeds = SeedDistribution::explicit(vec![(set([0]), 1.0)]).unwrap();
        let r = check_identifiability(&g, &seeds, 1000).unwrap();
        assert!(matches!(r.verdict(2), Some(Verdict::NotIdentifiable { rank: 1, .. })));
    }

    #[test]
    fn propagation_creates_witnesses() {
        // seed {0}; 1 is reached through 0, so node 2 sees {0} and {1}
        let g = Graph::new(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let seeds = SeedDistribution::explicit(vec![(set([0]), 1.0)]).unwrap();
        let r = check_identifiability(&g, &seeds, 1000).unwrap();
        assert!(r.identifiable());
    }

    #[test]
    fn cap_gives_unknown() {
        let g = Graph::new(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let seeds = SeedDistribution::explicit(vec![(set([0]), 1.0)]).unwrap();
        let r = check_identifiability(&g, &seeds, 1).unwrap();
        assert!(matches!(r.verdict(2), Some(Verdict::Unknown { .. })));
    }

    #[test]
    fn appendix_counterexample() {
        let cdf = |x: f64| {
            if x >= 1.0 - 1e-12 {
                1.0
            } else if x >= 2.0 / 3.0 - 1e-12 {
                0.85
            } else if x >= 1.0 / 3.0 - 1e-12 {
                0.5
            } else {
                0.0
            }
        };
        let e = solve_triggering_embedding(&[1.0 / 3.0; 3], &cdf).unwrap();
        assert!((e.probabilities[&set([0, 1, 2])] + 0.05).abs() < 1e-12);
        assert!(!e.feasible());
        assert!((e.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lt_star_embeds() {
        let spec = ThresholdSpec::uniform();
        let e = solve_triggering_embedding(&[1.0 / 3.0; 3], &|x| spec.cdf(x)).unwrap();
        assert!(e.feasible());
        assert!((e.total() - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((e.probabilities[&set([i])] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn engineered_violation() {
        // F(x) = x^2 with weights (x, y - x, b) = (0.1, 0.4, 0.3)
        let g = star(3);
        let m = GltModel::with_common_threshold(g, vec![0.1, 0.4, 0.3], ThresholdSpec::beta(2.0, 1.0).unwrap()).unwrap();
        let r = check_submodularity_exact(&m, 3, 100_000).unwrap();
        assert!(r.monotonicity_violations.is_empty());
        let hit = r
            .violations
            .iter()
            .find(|x| x.smaller == set([0]) && x.larger == set([0, 1]) && x.node == 2)
            .expect("violation reported");
        assert!((hit.gain_smaller - (1.0 + 0.15)).abs() < 1e-12);
        assert!((hit.gain_larger - (1.0 + 0.39)).abs() < 1e-12);
    }
}
