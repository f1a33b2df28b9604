//! The GLT model: weights, thresholds, transition kernel, simulation and the
//! exact enumeration oracles.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GltError, Result};
use crate::graph::{sample_seed, Graph, GraphDoc, NodeSet, SeedDistribution};
use crate::rng::SeedTree;
use crate::thresholds::ThresholdSpec;

pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Upper bound on `||theta_v||_1` used for unbounded threshold supports.
pub const DEFAULT_GAMMA_UNBOUNDED: f64 = 10.0;
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Truncation constants of the parameter space `{theta >= eps, ||theta||_1 <= gamma}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub epsilon: f64,
    pub gamma: f64,
}

impl Truncation {
    pub fn default_for(spec: &ThresholdSpec) -> Self {
        let h = spec.support_bound();
        let gamma = if h.is_finite() {
            h - DEFAULT_EPSILON
        } else {
            DEFAULT_GAMMA_UNBOUNDED
        };
        Truncation {
            epsilon: DEFAULT_EPSILON,
            gamma,
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().all(|&b| b >= self.epsilon) && theta.iter().sum::<f64>() <= self.gamma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GltModel {
    graph: Graph,
    weights: Vec<f64>,
    thresholds: Vec<ThresholdSpec>,
}

/// Wire form: graph fields plus `weights` (canonical edge order) and
/// per-node `thresholds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
    pub thresholds: Vec<ThresholdSpec>,
}

impl GltModel {
    pub fn new(graph: Graph, weights: Vec<f64>, thresholds: Vec<ThresholdSpec>) -> Result<Self> {
        if weights.len() != graph.edge_count() {
            return Err(GltError::InvalidModel(format!(
                "{} weights for {} edges",
                weights.len(),
                graph.edge_count()
            )));
        }
        if thresholds.len() != graph.node_count() {
            return Err(GltError::InvalidModel(format!(
                "{} threshold specs for {} nodes",
                thresholds.len(),
                graph.node_count()
            )));
        }
        if let Some(i) = weights.iter().position(|b| !(b.is_finite() && *b >= 0.0)) {
            let (u, v) = graph.edges()[i];
            return Err(GltError::InvalidModel(format!(
                "weight of edge ({u}, {v}) is {}",
                weights[i]
            )));
        }
        for v in 0..graph.node_count() {
            let total: f64 = weights[graph.in_edge_range(v)].iter().sum();
            let h = thresholds[v].support_bound();
            // slack for round-off in weights that were normalized to sum to h
            if total > h * (1.0 + 1e-12) {
                return Err(GltError::InvalidModel(format!(
                    "incoming weights of node {v} sum to {total}, above the threshold support bound {h}"
                )));
            }
        }
        Ok(GltModel {
            graph,
            weights,
            thresholds,
        })
    }

    /// Same threshold spec on every node.
    pub fn with_common_threshold(graph: Graph, weights: Vec<f64>, spec: ThresholdSpec) -> Result<Self> {
        let n = graph.node_count();
        GltModel::new(graph, weights, vec![spec; n])
    }

    /// Accepts edges in any order; each weight stays attached to the edge
    /// listed at the same position.
    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        if doc.weights.len() != doc.edges.len() {
            return Err(GltError::InvalidModel(format!(
                "{} weights for {} edges",
                doc.weights.len(),
                doc.edges.len()
            )));
        }
        let graph = Graph::from_doc(&GraphDoc {
            n: doc.n,
            edges: doc.edges.clone(),
        })?;
        let mut weights = vec![0.0; doc.weights.len()];
        for (e, &w) in doc.edges.iter().zip(&doc.weights) {
            let pos = graph.in_edge_range(e[1]).start + graph.parent_position(e[1], e[0]).expect("edge present");
            weights[pos] = w;
        }
        GltModel::new(graph, weights, doc.thresholds.clone())
    }

    pub fn to_doc(&self) -> ModelDoc {
        let g = self.graph.to_doc();
        ModelDoc {
            n: g.n,
            edges: g.edges,
            weights: self.weights.clone(),
            thresholds: self.thresholds.clone(),
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn thresholds(&self) -> &[ThresholdSpec] {
        &self.thresholds
    }

    pub fn threshold(&self, v: usize) -> &ThresholdSpec {
        &self.thresholds[v]
    }

    /// `theta_v`: weights of `v`'s parent edges in ascending parent order.
    pub fn node_weights(&self, v: usize) -> &[f64] {
        &self.weights[self.graph.in_edge_range(v)]
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        GltModel::new(self.graph.clone(), weights, self.thresholds.clone())
    }

    /// Whether every child node satisfies `theta_v >= eps` and
    /// `||theta_v||_1 <= gamma` under its default truncation.
    pub fn is_truncated_feasible(&self) -> bool {
        self.graph
            .child_nodes()
            .all(|v| Truncation::default_for(&self.thresholds[v]).contains(self.node_weights(v)))
    }

    /// `B_v(S)`: summed weight from the members of `set` among `v`'s parents.
    pub fn influence(&self, v: usize, set: &NodeSet) -> f64 {
        self.graph
            .parent_slice(v)
            .zip(self.node_weights(v))
            .filter(|(u, _)| set.contains(*u))
            .map(|(_, b)| *b)
            .sum()
    }

    fn influence_mask(&self, v: usize, active: &[bool]) -> f64 {
        self.graph
            .parent_slice(v)
            .zip(self.node_weights(v))
            .filter(|(u, _)| active[*u])
            .map(|(_, b)| *b)
            .sum()
    }

    /// Probability that `v` activates at time `t = history.len()` given the
    /// prefix `history = (D_0, ..., D_{t-1})`.
    pub fn transition_probability(&self, history: &[NodeSet], v: usize) -> Result<f64> {
        if history.is_empty() {
            return Err(GltError::InvalidArgument("history must contain the seed set".into()));
        }
        let n = self.graph.node_count();
        if v >= n {
            return Err(GltError::NodeOutOfRange { index: v, node_count: n });
        }
        validate_steps(&self.graph, history)?;
        let t = history.len();
        if let Some(time) = history.iter().position(|d| d.contains(v)) {
            return Err(GltError::AlreadyActive { node: v, time });
        }
        let mut active = vec![false; n];
        for d in &history[..t - 1] {
            for u in d.iter() {
                active[u] = true;
            }
        }
        let before = self.influence_mask(v, &active);
        for u in history[t - 1].iter() {
            active[u] = true;
        }
        let now = self.influence_mask(v, &active);
        if now == before {
            return Ok(0.0);
        }
        let spec = &self.thresholds[v];
        let survive = spec.sf(before);
        if survive <= 0.0 {
            return Err(GltError::ZeroProbability { node: v, time: t - 1 });
        }
        Ok(((spec.cdf(now) - spec.cdf(before)) / survive).clamp(0.0, 1.0))
    }

    /// `log P(trace | D_0)`, plus the externally supplied seed term.
    pub fn trace_log_probability(&self, trace: &Trace, seed_log_prob: f64) -> Result<f64> {
        trace.validate(&self.graph)?;
        let n = self.graph.node_count();
        let mut active = vec![false; n];
        let mut total = seed_log_prob;
        for u in trace.steps[0].iter() {
            active[u] = true;
        }
        // active = A_{t-1}, prev = A_{t-2}
        let mut prev = vec![false; n];
        for (t, step) in trace.steps.iter().enumerate().skip(1) {
            for v in step.iter() {
                let spec = &self.thresholds[v];
                let hi = self.influence_mask(v, &active);
                let lo = self.influence_mask(v, &prev);
                let term = if hi > lo { spec.ln_cdf_diff(hi, lo) } else { f64::NEG_INFINITY };
                if !term.is_finite() {
                    return Err(GltError::ZeroProbability { node: v, time: t });
                }
                total += term;
            }
            prev.clone_from(&active);
            for v in step.iter() {
                active[v] = true;
            }
        }
        let t_end = trace.steps.len();
        let final_set: NodeSet = (0..n).filter(|&u| active[u]).collect();
        for v in self.graph.children_of_set(&final_set)?.iter() {
            let term = self.thresholds[v].ln_sf(self.influence_mask(v, &active));
            if !term.is_finite() {
                return Err(GltError::ZeroProbability { node: v, time: t_end });
            }
            total += term;
        }
        Ok(total)
    }

    /// Simulates one trace by drawing each node's threshold once.
    pub fn simulate_trace<R: Rng + ?Sized>(&self, seed: &NodeSet, rng: &mut R) -> Result<Trace> {
        let uniforms: Vec<f64> = (0..self.graph.node_count()).map(|_| rng.random::<f64>()).collect();
        self.simulate_with_uniforms(seed, &uniforms)
    }

    /// Simulation with supplied threshold quantiles: node `v` is reached once
    /// `F_v(B_v(A_{t-1})) > uniforms[v]`. Sharing `uniforms` across calls gives
    /// common random numbers.
    pub fn simulate_with_uniforms(&self, seed: &NodeSet, uniforms: &[f64]) -> Result<Trace> {
        let n = self.graph.node_count();
        self.check_seed(seed)?;
        if uniforms.len() != n {
            return Err(GltError::InvalidArgument(format!(
                "{} uniforms for {n} nodes",
                uniforms.len()
            )));
        }
        let mut active = vec![false; n];
        for v in seed.iter() {
            active[v] = true;
        }
        let mut steps = vec![seed.clone()];
        loop {
            let last = steps.last().expect("nonempty");
            let exposed = self.graph.children_of_set(last)?;
            let next: NodeSet = exposed
                .iter()
                .filter(|&v| !active[v])
                .filter(|&v| self.thresholds[v].cdf(self.influence_mask(v, &active)) > uniforms[v])
                .collect();
            if next.is_empty() {
                break;
            }
            for v in next.iter() {
                active[v] = true;
            }
            steps.push(next);
        }
        Ok(Trace { steps })
    }

    /// Simulation through the sequential transition kernel, drawing a fresh
    /// Bernoulli at every exposure.
    pub fn simulate_trace_sequential<R: Rng + ?Sized>(&self, seed: &NodeSet, rng: &mut R) -> Result<Trace> {
        let n = self.graph.node_count();
        self.check_seed(seed)?;
        let mut active = vec![false; n];
        for v in seed.iter() {
            active[v] = true;
        }
        let mut prev = vec![false; n];
        let mut steps = vec![seed.clone()];
        loop {
            let last = steps.last().expect("nonempty");
            let exposed = self.graph.children_of_set(last)?;
            let mut next = Vec::new();
            for v in exposed.iter().filter(|&v| !active[v]) {
                let spec = &self.thresholds[v];
                let lo = spec.cdf(self.influence_mask(v, &prev));
                let hi = spec.cdf(self.influence_mask(v, &active));
                let p = if lo >= 1.0 { 0.0 } else { (hi - lo) / (1.0 - lo) };
                if rng.random::<f64>() < p {
                    next.push(v);
                }
            }
            if next.is_empty() {
                break;
            }
            prev.clone_from(&active);
            for &v in &next {
                active[v] = true;
            }
            steps.push(NodeSet::from_sorted_unchecked(next));
        }
        Ok(Trace { steps })
    }

    /// `count` traces with seeds drawn from `seeds`; trace `i` uses its own
    /// stream so the output does not depend on the thread count.
    pub fn simulate_traces(&self, seeds: &SeedDistribution, count: usize, root: SeedTree) -> Result<Vec<Trace>> {
        seeds.validate(self.graph.node_count())?;
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = root.stream(i as u64);
                let seed = sample_seed(seeds, &self.graph, &mut rng)?;
                self.simulate_trace(&seed, &mut rng)
            })
            .collect()
    }

    fn check_seed(&self, seed: &NodeSet) -> Result<()> {
        if seed.is_empty() {
            return Err(GltError::InvalidArgument("seed set must be nonempty".into()));
        }
        let n = self.graph.node_count();
        match seed.max() {
            Some(m) if m >= n => Err(GltError::NodeOutOfRange { index: m, node_count: n }),
            _ => Ok(()),
        }
    }

    /// `sigma(S)`: expected final number of active nodes, computed exactly by
    /// recursing over the product-form distribution of each next step.
    pub fn exact_spread(&self, seed: &NodeSet, cap: usize) -> Result<f64> {
        self.check_seed(seed)?;
        let mut search = SpreadSearch {
            model: self,
            memo: HashMap::new(),
            visited: 0,
            cap,
        };
        search.expected_size(seed.clone(), NodeSet::new())
    }

    /// IC model with edge probabilities in canonical edge order.
    pub fn from_ic(graph: Graph, probabilities: &[f64]) -> Result<Self> {
        let mut weights = Vec::with_capacity(probabilities.len());
        for &p in probabilities {
            if !(0.0..1.0).contains(&p) {
                return Err(GltError::InvalidArgument(format!(
                    "IC probabilities must lie in [0, 1), got {p}"
                )));
            }
            weights.push(-(-p).ln_1p());
        }
        GltModel::with_common_threshold(graph, weights, ThresholdSpec::exponential())
    }

    /// LT model: uniform thresholds, incoming weights summing to at most 1.
    pub fn from_lt(graph: Graph, weights: Vec<f64>) -> Result<Self> {
        GltModel::with_common_threshold(graph, weights, ThresholdSpec::uniform())
    }
}

struct SpreadSearch<'a> {
    model: &'a GltModel,
    // (A_{t-1}, A_{t-2}) -> expected final size
    memo: HashMap<(NodeSet, NodeSet), f64>,
    visited: usize,
    cap: usize,
}

impl SpreadSearch<'_> {
    fn expected_size(&mut self, active: NodeSet, before: NodeSet) -> Result<f64> {
        let key = (active, before);
        if let Some(&s) = self.memo.get(&key) {
            return Ok(s);
        }
        let (active, before) = key;
        let model = self.model;
        let newest: NodeSet = active.iter().filter(|u| !before.contains(*u)).collect();
        // candidates with their activation probabilities
        let mut cand = Vec::new();
        for v in model.graph.children_of_set(&newest)?.iter() {
            if active.contains(v) {
                continue;
            }
            let spec = &model.thresholds[v];
            let lo = spec.cdf(model.influence(v, &before));
            let hi = spec.cdf(model.influence(v, &active));
            let p = if lo >= 1.0 { 0.0 } else { ((hi - lo) / (1.0 - lo)).clamp(0.0, 1.0) };
            if p > 0.0 {
                cand.push((v, p));
            }
        }
        let c = cand.len();
        if c >= usize::BITS as usize - 1 {
            return Err(GltError::CapExceeded { cap: self.cap });
        }
        let mut total = 0.0;
        for mask in 0usize..(1usize << c) {
            self.visited += 1;
            if self.visited > self.cap {
                return Err(GltError::CapExceeded { cap: self.cap });
            }
            let mut prob = 1.0;
            for (i, &(_, p)) in cand.iter().enumerate() {
                prob *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
            }
            if prob == 0.0 {
                continue;
            }
            if mask == 0 {
                total += prob * active.len() as f64;
            } else {
                let mut next = active.clone();
                for (i, &(v, _)) in cand.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        next.insert(v);
                    }
                }
                total += prob * self.expected_size(next, active.clone())?;
            }
        }
        self.memo.insert((active, before), total);
        Ok(total)
    }
}

/// A propagation trace `(D_0, ..., D_T)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<NodeSet>,
}

impl Trace {
    pub fn new(steps: Vec<NodeSet>) -> Self {
        Trace { steps }
    }

    pub fn seed(&self) -> &NodeSet {
        &self.steps[0]
    }

    /// `A(D)`: all nodes active at the end.
    pub fn active_set(&self) -> NodeSet {
        self.steps.iter().flat_map(|d| d.iter()).collect()
    }

    pub fn final_size(&self) -> usize {
        self.steps.iter().map(NodeSet::len).sum()
    }

    /// Time step at which `v` activated, if it did.
    pub fn activation_time(&self, v: usize) -> Option<usize> {
        self.steps.iter().position(|d| d.contains(v))
    }

    /// Checks feasibility: nonempty disjoint steps, every node activated at
    /// `t >= 1` having a parent in `D_{t-1}`.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.steps.is_empty() {
            return Err(GltError::InfeasibleTrace("trace has no seed set".into()));
        }
        validate_steps(graph, &self.steps)
    }
}

fn validate_steps(graph: &Graph, steps: &[NodeSet]) -> Result<()> {
    let n = graph.node_count();
    let mut seen = vec![false; n];
    for (t, step) in steps.iter().enumerate() {
        if step.is_empty() {
            return Err(GltError::InfeasibleTrace(format!("step {t} is empty")));
        }
        if let Some(m) = step.max().filter(|&m| m >= n) {
            return Err(GltError::NodeOutOfRange { index: m, node_count: n });
        }
        for v in step.iter() {
            if seen[v] {
                return Err(GltError::InfeasibleTrace(format!("node {v} activates twice (again at step {t})")));
            }
            if t > 0 && !graph.parent_slice(v).any(|u| steps[t - 1].contains(u)) {
                return Err(GltError::InfeasibleTrace(format!(
                    "node {v} activates at step {t} without a parent in step {}",
                    t - 1
                )));
            }
        }
        for v in step.iter() {
            seen[v] = true;
        }
    }
    Ok(())
}

/// Every feasible trace starting at `seed`. `cap` bounds the number of
/// partial traces explored.
pub fn enumerate_feasible_traces(graph: &Graph, seed: &NodeSet, cap: usize) -> Result<Vec<Trace>> {
    if seed.is_empty() {
        return Err(GltError::InvalidArgument("seed set must be nonempty".into()));
    }
    validate_steps(graph, std::slice::from_ref(seed))?;
    let mut out = Vec::new();
    let mut steps = vec![seed.clone()];
    let mut visited = 0usize;
    extend_traces(graph, &mut steps, &seed.clone(), &mut out, &mut visited, cap)?;
    Ok(out)
}

fn extend_traces(
    graph: &Graph,
    steps: &mut Vec<NodeSet>,
    active: &NodeSet,
    out: &mut Vec<Trace>,
    visited: &mut usize,
    cap: usize,
) -> Result<()> {
    *visited += 1;
    if *visited > cap {
        return Err(GltError::CapExceeded { cap });
    }
    out.push(Trace { steps: steps.clone() });
    let cand: Vec<usize> = graph
        .children_of_set(steps.last().expect("nonempty"))?
        .iter()
        .filter(|&v| !active.contains(v))
        .collect();
    if cand.len() >= usize::BITS as usize - 1 {
        return Err(GltError::CapExceeded { cap });
    }
    for mask in 1usize..(1usize << cand.len()) {
        let next: NodeSet = cand
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &v)| v)
            .collect();
        let grown = active.union(&next);
        steps.push(next);
        extend_traces(graph, steps, &grown, out, visited, cap)?;
        steps.pop();
    }
    Ok(())
}
