//! Constrained maximum likelihood per child node, the threshold grid search,
//! and the WC / PTP heuristic baselines.
//!
//! The feasible set is the polytope `{theta >= eps, sum(theta) <= gamma}`.
//! The solver is a projected Newton method: a working set of active
//! constraints is read off the tangent-cone projection of the gradient, a
//! Newton step is taken on the remaining face, and the trial point is pulled
//! back by exact Euclidean projection. A projected-gradient step with
//! backtracking is the fallback whenever the Newton step fails to ascend.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GltError, Result};
use crate::graph::Graph;
use crate::likelihood::{build_all_node_data, evaluate, node_log_likelihood, NodeData};
use crate::model::{Trace, Truncation, DEFAULT_EPSILON};
use crate::thresholds::ThresholdSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub epsilon: f64,
    /// `None` selects `h - eps` for bounded supports and 10 otherwise.
    pub gamma: Option<f64>,
    /// Bound on the norm of the gradient projected onto the tangent cone.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epsilon: DEFAULT_EPSILON,
            gamma: None,
            tolerance: 1e-8,
            max_iterations: 500,
        }
    }
}

impl FitOptions {
    pub fn truncation(&self, spec: &ThresholdSpec) -> Truncation {
        let default = Truncation::default_for(spec);
        Truncation {
            epsilon: self.epsilon,
            gamma: self.gamma.unwrap_or(if spec.support_bound().is_finite() {
                spec.support_bound() - self.epsilon
            } else {
                default.gamma
            }),
        }
    }

    fn validate(&self, spec: &ThresholdSpec, m: usize) -> Result<Truncation> {
        let tr = self.truncation(spec);
        if !(tr.epsilon > 0.0) || !(self.tolerance > 0.0) {
            return Err(GltError::InvalidArgument(
                "epsilon and tolerance must be positive".into(),
            ));
        }
        if !(m as f64 * tr.epsilon < tr.gamma) {
            return Err(GltError::InvalidArgument(format!(
                "need {m} * epsilon < gamma, got epsilon = {}, gamma = {}",
                tr.epsilon, tr.gamma
            )));
        }
        if tr.gamma > spec.support_bound() {
            return Err(GltError::InvalidArgument(format!(
                "gamma = {} exceeds the threshold support bound {}",
                tr.gamma,
                spec.support_bound()
            )));
        }
        Ok(tr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFitResult {
    pub node: usize,
    pub parents: Vec<usize>,
    pub weights: Vec<f64>,
    pub converged: bool,
    pub loglik: f64,
    pub n_obs: usize,
    pub informative_traces: usize,
    #[serde(rename = "phi")]
    pub threshold: ThresholdSpec,
    /// Some coordinate sits on `eps` or the weights sum to `gamma`.
    pub on_boundary: bool,
    /// The threshold density is not log-concave, so the optimum may be local.
    pub local_only: bool,
    pub iterations: usize,
    /// Norm of the projected gradient at the returned point.
    pub certificate: f64,
}

/// Exact Euclidean projection onto `{theta >= eps, sum(theta) <= gamma}`.
pub fn project(point: &[f64], tr: &Truncation) -> Vec<f64> {
    let m = point.len();
    let cap = tr.gamma - m as f64 * tr.epsilon;
    let mut y: Vec<f64> = point.iter().map(|x| (x - tr.epsilon).max(0.0)).collect();
    if y.iter().sum::<f64>() > cap {
        // onto the simplex {y >= 0, sum y = cap}
        let mut sorted: Vec<f64> = point.iter().map(|x| x - tr.epsilon).collect();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let mut acc = 0.0;
        let mut tau = 0.0;
        for (k, s) in sorted.iter().enumerate() {
            acc += s;
            let t = (acc - cap) / (k + 1) as f64;
            if s - t > 0.0 {
                tau = t;
            }
        }
        for (yi, x) in y.iter_mut().zip(point) {
            *yi = (x - tr.epsilon - tau).max(0.0);
        }
    }
    let mut theta: Vec<f64> = y.iter().map(|v| v + tr.epsilon).collect();
    enforce_sum(&mut theta, tr);
    theta
}

// Removes the few ulps by which rounding can push the sum over gamma.
fn enforce_sum(theta: &mut [f64], tr: &Truncation) {
    loop {
        let total: f64 = theta.iter().sum();
        if total <= tr.gamma {
            return;
        }
        let (i, _) = theta
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        let lowered = (theta[i] - (total - tr.gamma)).max(tr.epsilon);
        theta[i] = if lowered < theta[i] { lowered } else { theta[i].next_down().max(tr.epsilon) };
    }
}

const ACTIVE_TOL: f64 = 1e-12;

struct Cone {
    direction: Vec<f64>,
    mu: f64,
    lower: Vec<bool>,
    sum_active: bool,
}

/// Projection of `g` onto the tangent cone of the polytope at `theta`.
fn cone_projection(theta: &[f64], g: &[f64], tr: &Truncation) -> Cone {
    let lower: Vec<bool> = theta.iter().map(|&x| x - tr.epsilon <= ACTIVE_TOL).collect();
    let sum_active = tr.gamma - theta.iter().sum::<f64>() <= ACTIVE_TOL * tr.gamma.max(1.0);
    let dir = |mu: f64| -> Vec<f64> {
        g.iter()
            .zip(&lower)
            .map(|(&gi, &lo)| if lo { (gi - mu).max(0.0) } else { gi - mu })
            .collect()
    };
    let mut mu = 0.0;
    if sum_active && dir(0.0).iter().sum::<f64>() > 0.0 {
        let mut lo = 0.0;
        let mut hi = g.iter().fold(0.0f64, |a, &b| a.max(b.abs())) + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if dir(mid).iter().sum::<f64>() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        mu = hi;
    }
    Cone {
        direction: dir(mu),
        mu,
        lower,
        sum_active,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton direction on the face left free by the working set, or `None`
/// when the reduced Hessian is not negative definite.
fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>, cone: &Cone) -> Option<Vec<f64>> {
    let m = g.len();
    let free: Vec<usize> = (0..m)
        .filter(|&i| !(cone.lower[i] && g[i] - cone.mu <= 0.0))
        .collect();
    let mut d = vec![0.0; m];
    if free.is_empty() {
        return Some(d);
    }
    let k = free.len();
    let neg_h = DMatrix::from_fn(k, k, |a, b| -h[(free[a], free[b])]);
    let chol = neg_h.cholesky()?;
    let gf = DVector::from_iterator(k, free.iter().map(|&i| g[i]));
    let mut step = chol.solve(&gf);
    if cone.sum_active && cone.mu > 0.0 {
        // stay on the face sum(theta) = gamma
        let ones = DVector::from_element(k, 1.0);
        let w = chol.solve(&ones);
        let nu = step.sum() / w.sum();
        step.axpy(-nu, &w, 1.0);
    }
    if step.iter().any(|x| !x.is_finite()) {
        return None;
    }
    for (a, &i) in free.iter().enumerate() {
        d[i] = step[a];
    }
    Some(d)
}

/// Fits `theta_v` by maximizing the node log-likelihood over the truncated
/// parameter space.
pub fn fit_node(data: &NodeData, spec: &ThresholdSpec, options: &FitOptions) -> Result<NodeFitResult> {
    let m = data.dim();
    if m == 0 || !data.has_information() {
        return Err(GltError::NoData { node: data.node });
    }
    let tr = options.validate(spec, m)?;
    let start = (tr.gamma - m as f64 * tr.epsilon) / (2.0 * m as f64) + tr.epsilon;
    let mut theta = project(&vec![start; m], &tr);
    let mut eval = evaluate(data, &theta, spec, true)?;
    let value_at = |t: &[f64]| node_log_likelihood(data, t, spec).unwrap_or(f64::NEG_INFINITY);

    let mut iterations = 0;
    let mut certificate;
    loop {
        let g: Vec<f64> = eval.gradient.iter().copied().collect();
        let cone = cone_projection(&theta, &g, &tr);
        certificate = norm(&cone.direction);
        if certificate <= options.tolerance || iterations >= options.max_iterations {
            break;
        }
        iterations += 1;

        let mut accepted = None;
        if let Some(d) = newton_direction(&eval.gradient, &eval.hessian, &cone) {
            accepted = arc_search(&theta, &d, 1.0, &g, eval.value, &tr, &value_at);
        }
        if accepted.is_none() {
            let scale = eval.hessian.norm().max(f64::MIN_POSITIVE);
            accepted = arc_search(&theta, &g, 1.0 / scale, &g, eval.value, &tr, &value_at);
        }
        let Some(next) = accepted else { break };
        let moved = norm(&next.iter().zip(&theta).map(|(a, b)| a - b).collect::<Vec<_>>());
        theta = next;
        eval = evaluate(data, &theta, spec, true)?;
        if moved <= 1e-15 * (1.0 + norm(&theta)) {
            let g: Vec<f64> = eval.gradient.iter().copied().collect();
            certificate = norm(&cone_projection(&theta, &g, &tr).direction);
            break;
        }
    }
    let total: f64 = theta.iter().sum();
    let on_boundary = theta.iter().any(|&x| x - tr.epsilon <= 1e-9) || tr.gamma - total <= 1e-9;
    Ok(NodeFitResult {
        node: data.node,
        parents: data.parents.clone(),
        weights: theta,
        converged: certificate <= options.tolerance,
        loglik: eval.value,
        n_obs: data.n_obs(),
        informative_traces: data.informative_traces,
        threshold: *spec,
        on_boundary,
        local_only: !spec.has_log_concave_density(),
        iterations,
        certificate,
    })
}

/// Backtracking along the projection arc `P(theta + a d)` with an Armijo test.
fn arc_search(
    theta: &[f64],
    d: &[f64],
    initial: f64,
    g: &[f64],
    value: f64,
    tr: &Truncation,
    value_at: &dyn Fn(&[f64]) -> f64,
) -> Option<Vec<f64>> {
    // near the optimum the predicted gain drops below the rounding error of the value
    let slack = 16.0 * f64::EPSILON * value.abs().max(1.0);
    let mut alpha = initial;
    for _ in 0..60 {
        let trial: Vec<f64> = theta.iter().zip(d).map(|(t, di)| t + alpha * di).collect();
        let trial = project(&trial, tr);
        let step: Vec<f64> = trial.iter().zip(theta).map(|(a, b)| a - b).collect();
        let gain = dot(g, &step);
        if gain <= 0.0 && norm(&step) == 0.0 {
            return None;
        }
        let v = value_at(&trial);
        if gain > 0.0 && v >= value + 1e-4 * gain - slack {
            return Some(trial);
        }
        alpha *= 0.5;
    }
    None
}

/// Result of fitting every child node: `Err(NoData)` marks nodes that were
/// not estimated.
pub type FitReport = BTreeMap<usize, Result<NodeFitResult>>;

/// Fits every node with parents from prepared node data (indexed by node).
pub fn fit_all_data(data: &[NodeData], specs: &[ThresholdSpec], options: &FitOptions) -> Result<FitReport> {
    if specs.len() != data.len() {
        return Err(GltError::InvalidArgument(format!(
            "{} threshold specs for {} nodes",
            specs.len(),
            data.len()
        )));
    }
    Ok(data
        .par_iter()
        .filter(|d| d.dim() > 0)
        .map(|d| (d.node, fit_node(d, &specs[d.node], options)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect())
}

pub fn fit_all(traces: &[Trace], graph: &Graph, specs: &[ThresholdSpec], options: &FitOptions) -> Result<FitReport> {
    let data = build_all_node_data(traces, graph)?;
    fit_all_data(&data, specs, options)
}

/// Fits under every threshold spec on the grid and keeps the one with the
/// largest log-likelihood; ties go to the earliest grid point.
pub fn fit_with_threshold_grid(data: &NodeData, grid: &[ThresholdSpec], options: &FitOptions) -> Result<NodeFitResult> {
    if grid.is_empty() {
        return Err(GltError::InvalidArgument("threshold grid is empty".into()));
    }
    let fits: Vec<Result<NodeFitResult>> = grid.iter().map(|spec| fit_node(data, spec, options)).collect();
    if let Some(Err(e @ GltError::NoData { .. })) = fits.first() {
        return Err(e.clone());
    }
    let mut best: Option<NodeFitResult> = None;
    for fit in fits.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    best.ok_or(GltError::GridFailed { node: data.node })
}

/// Grid search for every child node.
pub fn fit_all_with_grid(data: &[NodeData], grid: &[ThresholdSpec], options: &FitOptions) -> FitReport {
    data.par_iter()
        .filter(|d| d.dim() > 0)
        .map(|d| (d.node, fit_with_threshold_grid(d, grid, options)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Beta grid `{beta(a, b)}` over the given parameter values, `alpha` outer.
pub fn beta_grid(alphas: &[f64], betas: &[f64]) -> Result<Vec<ThresholdSpec>> {
    let mut grid = Vec::with_capacity(alphas.len() * betas.len());
    for &a in alphas {
        for &b in betas {
            grid.push(ThresholdSpec::beta_fit_safe(a, b)?);
        }
    }
    Ok(grid)
}

/// Weight vector in canonical edge order from per-node fits; edges of nodes
/// without an estimate get `fill`.
pub fn assemble_weights(graph: &Graph, fits: &FitReport, fill: f64) -> Vec<f64> {
    let mut weights = vec![fill; graph.edge_count()];
    for fit in fits.values().flatten() {
        weights[graph.in_edge_range(fit.node)].copy_from_slice(&fit.weights);
    }
    weights
}

/// Weighted cascade: `b_uv = 1 / |P(v)|`.
pub fn baseline_wc(graph: &Graph) -> Vec<f64> {
    let mut weights = vec![0.0; graph.edge_count()];
    for v in 0..graph.node_count() {
        let range = graph.in_edge_range(v);
        let w = 1.0 / range.len() as f64;
        weights[range].fill(w);
    }
    weights
}

/// PTP baseline: share of traces containing `u` in which `u` activates
/// strictly before `v`, normalized to sum to one over `v`'s parents.
pub fn baseline_ptp(traces: &[Trace], graph: &Graph) -> Result<Vec<f64>> {
    for t in traces {
        t.validate(graph)?;
    }
    let n = graph.node_count();
    let mut before = vec![0usize; graph.edge_count()];
    let mut present = vec![0usize; n];
    let mut times = vec![usize::MAX; n];
    for t in traces {
        times.fill(usize::MAX);
        for (s, step) in t.steps.iter().enumerate() {
            for v in step.iter() {
                times[v] = s;
                present[v] += 1;
            }
        }
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            if times[u] != usize::MAX && times[v] != usize::MAX && times[u] < times[v] {
                before[e] += 1;
            }
        }
    }
    let mut weights: Vec<f64> = graph
        .edges()
        .iter()
        .zip(&before)
        .map(|(&(u, _), &k)| if present[u] == 0 { 0.0 } else { k as f64 / present[u] as f64 })
        .collect();
    for v in 0..n {
        let block = &mut weights[graph.in_edge_range(v)];
        if block.is_empty() {
            continue;
        }
        let total: f64 = block.iter().sum();
        if total > 0.0 {
            block.iter_mut().for_each(|w| *w /= total);
        } else {
            let w = 1.0 / block.len() as f64;
            block.fill(w);
        }
    }
    Ok(weights)
}

/// Counts of fit outcomes, for logging.
pub fn summarize(report: &FitReport) -> (usize, usize, usize) {
    let fitted = report.values().filter(|r| r.is_ok()).count();
    let missing = report
        .values()
        .filter(|r| matches!(r, Err(GltError::NoData { .. })))
        .count();
    (fitted, missing, report.len() - fitted - missing)
}
