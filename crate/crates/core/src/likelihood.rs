//! Per-node sufficient data and the node log-likelihood with its analytic
//! gradient and Hessian.
//!
//! For a trace in which `v` is informative, one row is recorded at every time
//! `v` gains a newly active parent, up to and including its activation. Only
//! two kinds of row carry a likelihood factor:
//!
//! * the activation row: `log[F(theta'z_curr) - F(theta'z_prev)]`;
//! * the last row of a trace where `v` never activates:
//!   `log[1 - F(theta'z_curr)]`.
//!
//! Intermediate rows contribute nothing: the survival factors of consecutive
//! steps telescope into the terminal one. They are kept so that `N_v` counts
//! every exposure.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GltError, Result};
use crate::graph::{Graph, NodeSet};
use crate::model::Trace;
use crate::thresholds::ThresholdSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    /// `v` activates at the step after this exposure.
    Activated,
    /// Exposure followed by further exposures; no likelihood factor.
    Exposed,
    /// Last exposure of a trace in which `v` never activates.
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Index of the source trace (or pseudo-trace).
    pub trace: usize,
    /// Indicator of `A_{t-2}` over the parents.
    pub prev: Vec<bool>,
    /// Indicator of `A_{t-1}` over the parents.
    pub curr: Vec<bool>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
struct Group {
    prev: DVector<f64>,
    curr: DVector<f64>,
    prev_empty: bool,
    activated: bool,
    count: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub node: usize,
    pub parents: Vec<usize>,
    pub rows: Vec<Row>,
    pub informative_traces: usize,
    groups: Vec<Group>,
}

impl NodeData {
    fn new(node: usize, parents: Vec<usize>, rows: Vec<Row>, informative_traces: usize) -> Self {
        let mut counts: BTreeMap<(&[bool], &[bool], bool), usize> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.outcome != Outcome::Exposed) {
            *counts
                .entry((&r.prev, &r.curr, r.outcome == Outcome::Activated))
                .or_default() += 1;
        }
        let to_vec = |z: &[bool]| DVector::from_iterator(z.len(), z.iter().map(|&b| b as u8 as f64));
        let groups = counts
            .into_iter()
            .map(|((prev, curr, activated), count)| Group {
                prev: to_vec(prev),
                curr: to_vec(curr),
                prev_empty: !prev.iter().any(|&b| b),
                activated,
                count: count as f64,
            })
            .collect();
        NodeData {
            node,
            parents,
            rows,
            informative_traces,
            groups,
        }
    }

    /// `N_v`.
    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.parents.len()
    }

    /// Whether any row carries a likelihood factor.
    pub fn has_information(&self) -> bool {
        !self.groups.is_empty()
    }

    pub fn activations(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome == Outcome::Activated).count()
    }
}

/// Per-trace activation times; `usize::MAX` marks nodes that never activate.
fn activation_times(trace: &Trace, n: usize) -> Vec<usize> {
    let mut times = vec![usize::MAX; n];
    for (t, step) in trace.steps.iter().enumerate() {
        for v in step.iter() {
            times[v] = t;
        }
    }
    times
}

fn node_rows(graph: &Graph, v: usize, times: &[Vec<usize>]) -> NodeData {
    let parents: Vec<usize> = graph.parent_slice(v).collect();
    let mut rows = Vec::new();
    let mut informative = 0;
    let mut parent_times = Vec::with_capacity(parents.len());
    for (n, tv) in times.iter().enumerate() {
        let t_v = tv[v];
        if t_v == 0 {
            continue;
        }
        parent_times.clear();
        parent_times.extend(parents.iter().map(|&u| tv[u]));
        // times tau at which a parent joined, restricted to tau < t_v
        let mut taus: Vec<usize> = parent_times.iter().copied().filter(|&s| s != usize::MAX && s < t_v).collect();
        taus.sort_unstable();
        taus.dedup();
        if taus.is_empty() {
            continue;
        }
        informative += 1;
        let last = taus.len() - 1;
        for (k, &tau) in taus.iter().enumerate() {
            let prev = parent_times.iter().map(|&s| s < tau).collect();
            let curr = parent_times.iter().map(|&s| s <= tau).collect();
            let outcome = if tau + 1 == t_v {
                Outcome::Activated
            } else if k == last && t_v == usize::MAX {
                Outcome::Terminal
            } else {
                Outcome::Exposed
            };
            rows.push(Row {
                trace: n,
                prev,
                curr,
                outcome,
            });
        }
    }
    NodeData::new(v, parents, rows, informative)
}

/// Sufficient data for node `v`.
pub fn build_node_data(traces: &[Trace], graph: &Graph, v: usize) -> Result<NodeData> {
    if v >= graph.node_count() {
        return Err(GltError::NodeOutOfRange {
            index: v,
            node_count: graph.node_count(),
        });
    }
    let times = validated_times(traces, graph)?;
    Ok(node_rows(graph, v, &times))
}

/// Sufficient data for every node, indexed by node.
pub fn build_all_node_data(traces: &[Trace], graph: &Graph) -> Result<Vec<NodeData>> {
    let times = validated_times(traces, graph)?;
    Ok((0..graph.node_count())
        .into_par_iter()
        .map(|v| node_rows(graph, v, &times))
        .collect())
}

fn validated_times(traces: &[Trace], graph: &Graph) -> Result<Vec<Vec<usize>>> {
    traces
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            t.validate(graph).map_err(|e| match e {
                GltError::InfeasibleTrace(msg) => GltError::InfeasibleTrace(format!("trace {i}: {msg}")),
                other => other,
            })?;
            Ok(activation_times(t, graph.node_count()))
        })
        .collect()
}

/// A partial observation: whether exposure to `active_parents` activated `node`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PseudoTraceDoc", into = "PseudoTraceDoc")]
pub struct PseudoTrace {
    pub node: usize,
    pub active_parents: NodeSet,
    pub activated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PseudoTraceDoc {
    node: usize,
    active_parents: NodeSet,
    y: u8,
}

impl TryFrom<PseudoTraceDoc> for PseudoTrace {
    type Error = String;

    fn try_from(doc: PseudoTraceDoc) -> std::result::Result<Self, String> {
        if doc.y > 1 {
            return Err(format!("y must be 0 or 1, got {}", doc.y));
        }
        Ok(PseudoTrace {
            node: doc.node,
            active_parents: doc.active_parents,
            activated: doc.y == 1,
        })
    }
}

impl From<PseudoTrace> for PseudoTraceDoc {
    fn from(p: PseudoTrace) -> Self {
        PseudoTraceDoc {
            node: p.node,
            active_parents: p.active_parents,
            y: p.activated as u8,
        }
    }
}

/// Sufficient data for `v` from the pseudo-traces that concern it; others are
/// ignored. Each becomes a row `(0, 1[A_v], y)`.
pub fn build_pseudo_node_data(pseudo: &[PseudoTrace], graph: &Graph, v: usize) -> Result<NodeData> {
    if v >= graph.node_count() {
        return Err(GltError::NodeOutOfRange {
            index: v,
            node_count: graph.node_count(),
        });
    }
    let parents: Vec<usize> = graph.parent_slice(v).collect();
    let mut rows = Vec::new();
    for (i, p) in pseudo.iter().enumerate().filter(|(_, p)| p.node == v) {
        if p.active_parents.is_empty() {
            return Err(GltError::InvalidArgument(format!(
                "pseudo-trace {i} for node {v} has no active parents"
            )));
        }
        if let Some(u) = p.active_parents.iter().find(|&u| graph.parent_position(v, u).is_none()) {
            return Err(GltError::NotAParent { node: u, child: v });
        }
        rows.push(Row {
            trace: i,
            prev: vec![false; parents.len()],
            curr: parents.iter().map(|&u| p.active_parents.contains(u)).collect(),
            outcome: if p.activated {
                Outcome::Activated
            } else {
                Outcome::Terminal
            },
        });
    }
    let informative = rows.len();
    Ok(NodeData::new(v, parents, rows, informative))
}

/// Pseudo-trace data for every node, indexed by node.
pub fn build_all_pseudo_node_data(pseudo: &[PseudoTrace], graph: &Graph) -> Result<Vec<NodeData>> {
    if let Some(p) = pseudo.iter().find(|p| p.node >= graph.node_count()) {
        return Err(GltError::NodeOutOfRange {
            index: p.node,
            node_count: graph.node_count(),
        });
    }
    (0..graph.node_count())
        .map(|v| build_pseudo_node_data(pseudo, graph, v))
        .collect()
}

/// Value, gradient and Hessian of the node log-likelihood.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn check_theta(data: &NodeData, theta: &[f64]) -> Result<DVector<f64>> {
    if theta.len() != data.dim() {
        return Err(GltError::InvalidArgument(format!(
            "node {} has {} parents, got {} weights",
            data.node,
            data.dim(),
            theta.len()
        )));
    }
    Ok(DVector::from_column_slice(theta))
}

pub fn node_log_likelihood(data: &NodeData, theta: &[f64], spec: &ThresholdSpec) -> Result<f64> {
    let theta = check_theta(data, theta)?;
    let mut total = 0.0;
    for g in &data.groups {
        let a = theta.dot(&g.curr);
        let term = if g.activated {
            let b = theta.dot(&g.prev);
            if a > b {
                spec.ln_cdf_diff(a, b)
            } else {
                f64::NEG_INFINITY
            }
        } else {
            spec.ln_sf(a)
        };
        if !term.is_finite() {
            return Err(GltError::NonPositiveLikelihood { node: data.node });
        }
        total += g.count * term;
    }
    Ok(total)
}

pub fn node_gradient(data: &NodeData, theta: &[f64], spec: &ThresholdSpec) -> Result<DVector<f64>> {
    Ok(evaluate(data, theta, spec, false)?.gradient)
}

pub fn node_hessian(data: &NodeData, theta: &[f64], spec: &ThresholdSpec) -> Result<DMatrix<f64>> {
    Ok(evaluate(data, theta, spec, true)?.hessian)
}

/// Log-likelihood with its derivatives in one pass. The Hessian is left at
/// zero unless `with_hessian` is set.
pub fn evaluate(data: &NodeData, theta: &[f64], spec: &ThresholdSpec, with_hessian: bool) -> Result<Evaluation> {
    let th = check_theta(data, theta)?;
    let m = data.dim();
    let mut value = 0.0;
    let mut gradient = DVector::zeros(m);
    let mut hessian = DMatrix::zeros(m, m);
    let bad = || GltError::NonPositiveLikelihood { node: data.node };
    for g in &data.groups {
        let a = th.dot(&g.curr);
        if g.activated {
            let b = th.dot(&g.prev);
            if a <= b {
                return Err(bad());
            }
            let log_d = spec.ln_cdf_diff(a, b);
            if !log_d.is_finite() {
                return Err(bad());
            }
            let d = log_d.exp();
            value += g.count * log_d;
            // d log D = (f(a) z_c - f(b) z_p) / D
            let mut grad = &g.curr * (spec.density(a) / d);
            if !g.prev_empty {
                grad.axpy(-spec.density(b) / d, &g.prev, 1.0);
            }
            if with_hessian {
                hessian.ger(g.count * spec.density_derivative(a) / d, &g.curr, &g.curr, 1.0);
                if !g.prev_empty {
                    hessian.ger(-g.count * spec.density_derivative(b) / d, &g.prev, &g.prev, 1.0);
                }
                hessian.ger(-g.count, &grad, &grad, 1.0);
            }
            gradient.axpy(g.count, &grad, 1.0);
        } else {
            let log_s = spec.ln_sf(a);
            if !log_s.is_finite() {
                return Err(bad());
            }
            let s = log_s.exp();
            let f = spec.density(a);
            value += g.count * log_s;
            gradient.axpy(-g.count * f / s, &g.curr, 1.0);
            if with_hessian {
                let r = f / s;
                let coef = -spec.density_derivative(a) / s - r * r;
                hessian.ger(g.count * coef, &g.curr, &g.curr, 1.0);
            }
        }
    }
    Ok(Evaluation {
        value,
        gradient,
        hessian,
    })
}
