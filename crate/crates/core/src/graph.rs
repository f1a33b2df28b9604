//! Simple directed graphs with canonical edge order, plus the synthetic
//! generators used by the experiments.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{GltError, Result};

/// Sorted, duplicate-free set of node indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "NodeList", into = "Vec<usize>")]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new() -> Self {
        NodeSet(Vec::new())
    }

    pub fn singleton(v: usize) -> Self {
        NodeSet(vec![v])
    }

    pub fn from_sorted_unchecked(nodes: Vec<usize>) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        NodeSet(nodes)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn insert(&mut self, v: usize) -> bool {
        match self.0.binary_search(&v) {
            Ok(_) => false,
            Err(pos) => {
                self.0.insert(pos, v);
                true
            }
        }
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        self.iter().chain(other.iter()).collect()
    }

    pub fn is_disjoint(&self, other: &NodeSet) -> bool {
        self.iter().all(|v| !other.contains(v))
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.iter().all(|v| other.contains(v))
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut v: Vec<usize> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        NodeSet(v)
    }
}

impl From<Vec<usize>> for NodeSet {
    fn from(v: Vec<usize>) -> Self {
        v.into_iter().collect()
    }
}

impl From<NodeSet> for Vec<usize> {
    fn from(s: NodeSet) -> Self {
        s.0
    }
}

#[derive(Deserialize)]
#[serde(transparent)]
struct NodeList(Vec<usize>);

// Wire input may be unsorted but must not repeat a node.
impl TryFrom<NodeList> for NodeSet {
    type Error = String;

    fn try_from(NodeList(mut v): NodeList) -> std::result::Result<Self, String> {
        v.sort_unstable();
        if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("node {} listed twice", w[0]));
        }
        Ok(NodeSet(v))
    }
}

impl<const N: usize> From<[usize; N]> for NodeSet {
    fn from(v: [usize; N]) -> Self {
        v.into_iter().collect()
    }
}

/// Simple directed graph. Edges are kept sorted by child, then parent, so the
/// incoming edges of each child form a contiguous block of the edge list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    // edges[in_offsets[v]..in_offsets[v + 1]] are the parent edges of v
    in_offsets: Vec<usize>,
    children: Vec<Vec<usize>>,
}

/// Wire form: `{"n": 3, "edges": [[0, 1], [1, 2]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl Graph {
    pub fn new(node_count: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(p, c) in edge_list {
            for idx in [p, c] {
                if idx >= node_count {
                    return Err(GltError::NodeOutOfRange {
                        index: idx,
                        node_count,
                    });
                }
            }
            if p == c {
                return Err(GltError::SelfLoop(p));
            }
            edges.push((p, c));
        }
        edges.sort_unstable_by_key(|&(p, c)| (c, p));
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GltError::DuplicateEdge {
                parent: w[0].0,
                child: w[0].1,
            });
        }
        let mut in_offsets = vec![0usize; node_count + 1];
        for &(_, c) in &edges {
            in_offsets[c + 1] += 1;
        }
        for v in 0..node_count {
            in_offsets[v + 1] += in_offsets[v];
        }
        let mut children = vec![Vec::new(); node_count];
        for &(p, c) in &edges {
            children[p].push(c);
        }
        for ch in &mut children {
            ch.sort_unstable();
        }
        Ok(Graph {
            node_count,
            edges,
            in_offsets,
            children,
        })
    }

    pub fn from_doc(doc: &GraphDoc) -> Result<Self> {
        let edges: Vec<(usize, usize)> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::new(doc.n, &edges)
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            n: self.node_count,
            edges: self.edges.iter().map(|&(p, c)| [p, c]).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in canonical order as (parent, child).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Position range of `v`'s parent edges in the canonical edge order.
    pub fn in_edge_range(&self, v: usize) -> std::ops::Range<usize> {
        self.in_offsets[v]..self.in_offsets[v + 1]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_offsets[v + 1] - self.in_offsets[v]
    }

    /// Parents of `v` in ascending order (aligned with the edge order).
    pub fn parent_slice(&self, v: usize) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.edges[self.in_edge_range(v)].iter().map(|&(p, _)| p)
    }

    pub fn child_slice(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// Position of `parent` among the parents of `child`.
    pub fn parent_position(&self, child: usize, parent: usize) -> Option<usize> {
        self.edges[self.in_edge_range(child)]
            .binary_search_by_key(&parent, |&(p, _)| p)
            .ok()
    }

    fn check(&self, v: usize) -> Result<()> {
        if v >= self.node_count {
            Err(GltError::NodeOutOfRange {
                index: v,
                node_count: self.node_count,
            })
        } else {
            Ok(())
        }
    }

    pub fn parents(&self, v: usize) -> Result<NodeSet> {
        self.check(v)?;
        Ok(NodeSet::from_sorted_unchecked(self.parent_slice(v).collect()))
    }

    pub fn children(&self, v: usize) -> Result<NodeSet> {
        self.check(v)?;
        Ok(NodeSet::from_sorted_unchecked(self.children[v].clone()))
    }

    /// Nodes outside `s` with a child in `s`.
    pub fn parents_of_set(&self, s: &NodeSet) -> Result<NodeSet> {
        for v in s.iter() {
            self.check(v)?;
        }
        Ok(s
            .iter()
            .flat_map(|v| self.parent_slice(v))
            .filter(|u| !s.contains(*u))
            .collect())
    }

    /// Nodes outside `s` with a parent in `s`.
    pub fn children_of_set(&self, s: &NodeSet) -> Result<NodeSet> {
        for v in s.iter() {
            self.check(v)?;
        }
        Ok(s
            .iter()
            .flat_map(|v| self.children[v].iter().copied())
            .filter(|u| !s.contains(*u))
            .collect())
    }

    /// Nodes with at least one parent.
    pub fn child_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count).filter(move |&v| self.in_degree(v) > 0)
    }

    /// Connectivity of the undirected skeleton.
    pub fn is_weakly_connected(&self) -> bool {
        if self.node_count == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.node_count];
        for &(p, c) in &self.edges {
            adj[p].push(c);
            adj[c].push(p);
        }
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.node_count
    }
}

const CWS_MAX_ATTEMPTS: usize = 100;

/// Connected Watts-Strogatz graph with every undirected edge doubled.
///
/// Rewiring follows the usual ring-lattice construction: each lattice edge
/// `(u, u + j)` is replaced with probability `p` by `(u, w)` for a uniformly
/// drawn `w` that is neither `u` nor an existing neighbour.
pub fn generate_cws<R: Rng + ?Sized>(n: usize, k: usize, p: f64, rng: &mut R) -> Result<Graph> {
    if k < 2 || k % 2 != 0 || n <= k {
        return Err(GltError::InvalidArgument(format!(
            "CWS requires n > k >= 2 with k even (n={n}, k={k})"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GltError::InvalidArgument(format!(
            "rewiring probability {p} outside [0, 1]"
        )));
    }
    for _ in 0..CWS_MAX_ATTEMPTS {
        let adj = watts_strogatz(n, k, p, rng);
        let mut edges = Vec::with_capacity(n * k);
        for (u, nbrs) in adj.iter().enumerate() {
            for &w in nbrs {
                edges.push((u, w));
            }
        }
        let g = Graph::new(n, &edges)?;
        if g.is_weakly_connected() {
            return Ok(g);
        }
    }
    Err(GltError::RetryBudgetExhausted {
        attempts: CWS_MAX_ATTEMPTS,
    })
}

fn watts_strogatz<R: Rng + ?Sized>(n: usize, k: usize, p: f64, rng: &mut R) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); n];
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.random::<f64>() < p {
                let mut w = rng.random_range(0..n);
                let mut saturated = false;
                while w == u || adj[u].contains(&w) {
                    w = rng.random_range(0..n);
                    if adj[u].len() >= n - 1 {
                        saturated = true;
                        break;
                    }
                }
                if !saturated {
                    adj[u].remove(&v);
                    adj[v].remove(&u);
                    adj[u].insert(w);
                    adj[w].insert(u);
                }
            }
        }
    }
    adj
}

/// Draws each child's parent weights uniformly from the scaled simplex
/// `{w >= 0, |w|_1 <= d_max}`. Output follows the canonical edge order.
pub fn sample_weights_simplex<R: Rng + ?Sized>(graph: &Graph, d_max: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(GltError::InvalidArgument(format!("d_max must be positive, got {d_max}")));
    }
    let mut weights = vec![0.0; graph.edge_count()];
    let mut draws = Vec::new();
    for v in 0..graph.node_count() {
        let range = graph.in_edge_range(v);
        let m = range.len();
        if m == 0 {
            continue;
        }
        // m + 1 exponentials normalised form a flat Dirichlet; dropping the
        // slack coordinate leaves a uniform point of the simplex interior.
        draws.clear();
        draws.extend((0..=m).map(|_| -> f64 { Exp1.sample(rng) }));
        let total: f64 = draws.iter().sum();
        let block = &mut weights[range];
        for (w, e) in block.iter_mut().zip(&draws) {
            *w = d_max * (e / total);
        }
        clamp_l1(block, d_max);
    }
    Ok(weights)
}

// Rounding can push the sum a few ulps past the bound; shave it off.
fn clamp_l1(block: &mut [f64], bound: f64) {
    while block.iter().sum::<f64>() > bound {
        let (i, _) = block
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty block");
        let excess = block.iter().sum::<f64>() - bound;
        let lowered = (block[i] - excess.max(f64::EPSILON * bound)).max(0.0);
        block[i] = if lowered < block[i] { lowered } else { block[i].next_down() };
    }
}

/// How uniform-by-size seed sets are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeLaw {
    /// Size uniform on `1..=s_max`, then a uniform subset of that size.
    #[default]
    SizeThenSubset,
    /// Uniform over the union of all subsets with `1 <= |S| <= s_max`.
    UniformOverSets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SeedDistribution {
    Explicit { support: Vec<(NodeSet, f64)> },
    UniformBySize {
        s_max: usize,
        #[serde(default)]
        law: SizeLaw,
    },
}

impl SeedDistribution {
    pub fn explicit(support: Vec<(NodeSet, f64)>) -> Result<Self> {
        let d = SeedDistribution::Explicit { support };
        d.validate(usize::MAX)?;
        Ok(d)
    }

    pub fn uniform_by_size(s_max: usize) -> Self {
        SeedDistribution::UniformBySize {
            s_max,
            law: SizeLaw::SizeThenSubset,
        }
    }

    pub fn validate(&self, node_count: usize) -> Result<()> {
        match self {
            SeedDistribution::Explicit { support } => {
                if support.is_empty() {
                    return Err(GltError::InvalidSeedDistribution("empty support".into()));
                }
                let mut total = 0.0;
                for (set, prob) in support {
                    if set.is_empty() {
                        return Err(GltError::InvalidSeedDistribution(
                            "support contains the empty set".into(),
                        ));
                    }
                    if let Some(v) = set.max() {
                        if v >= node_count {
                            return Err(GltError::NodeOutOfRange { index: v, node_count });
                        }
                    }
                    if !(*prob >= 0.0) {
                        return Err(GltError::InvalidSeedDistribution(format!(
                            "negative probability {prob}"
                        )));
                    }
                    total += prob;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(GltError::InvalidSeedDistribution(format!(
                        "probabilities sum to {total}"
                    )));
                }
                Ok(())
            }
            SeedDistribution::UniformBySize { s_max, .. } => {
                if *s_max == 0 || (node_count != usize::MAX && *s_max > node_count) {
                    Err(GltError::InvalidSeedDistribution(format!(
                        "s_max={s_max} must lie in 1..={node_count}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Seed sets with positive probability. Uniform-by-size laws are expanded
    /// when the support has at most `cap` members.
    pub fn support(&self, node_count: usize, cap: usize) -> Result<Vec<NodeSet>> {
        self.validate(node_count)?;
        match self {
            SeedDistribution::Explicit { support } => Ok(support
                .iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(s, _)| s.clone())
                .collect()),
            SeedDistribution::UniformBySize { s_max, .. } => {
                let total: f64 = (1..=*s_max).map(|s| binomial(node_count, s)).sum();
                if total > cap as f64 {
                    return Err(GltError::CapExceeded { cap });
                }
                let mut out = Vec::with_capacity(total as usize);
                for size in 1..=*s_max {
                    out.extend((0..node_count).combinations(size).map(NodeSet::from_sorted_unchecked));
                }
                Ok(out)
            }
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn sample_seed<R: Rng + ?Sized>(dist: &SeedDistribution, graph: &Graph, rng: &mut R) -> Result<NodeSet> {
    let n = graph.node_count();
    dist.validate(n)?;
    match dist {
        SeedDistribution::Explicit { support } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (set, p) in support {
                acc += p;
                if u < acc {
                    return Ok(set.clone());
                }
            }
            // u landed in the rounding gap above the cumulative sum
            Ok(support
                .iter()
                .rev()
                .find(|(_, p)| *p > 0.0)
                .map(|(s, _)| s.clone())
                .expect("validated support has positive mass"))
        }
        SeedDistribution::UniformBySize { s_max, law } => {
            let size = match law {
                SizeLaw::SizeThenSubset => rng.random_range(1..=*s_max),
                SizeLaw::UniformOverSets => {
                    let weights: Vec<f64> = (1..=*s_max).map(|s| binomial(n, s)).collect();
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut size = *s_max;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            size = i + 1;
                            break;
                        }
                        u -= w;
                    }
                    size
                }
            };
            Ok(index::sample(rng, n, size).into_iter().collect())
        }
    }
}
