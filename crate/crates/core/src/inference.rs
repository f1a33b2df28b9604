//! Observed-information covariance, Wald intervals, the weight-difference
//! test and delta-method intervals for activation probabilities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{GltError, Result};
use crate::estimation::NodeFitResult;
use crate::graph::{Graph, NodeSet};
use crate::likelihood::{node_hessian, NodeData};
use crate::model::Trace;
use crate::thresholds::ThresholdSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceResult {
    pub node: usize,
    /// `[-H]^{-1}`; `None` when `-H` is not positive definite.
    pub covariance: Option<DMatrix<f64>>,
    /// Smallest eigenvalue of `-H`.
    pub min_eigenvalue: f64,
}

impl CovarianceResult {
    pub fn valid(&self) -> bool {
        self.covariance.is_some()
    }

    fn matrix(&self) -> Result<&DMatrix<f64>> {
        self.covariance.as_ref().ok_or(GltError::InvalidCovariance {
            node: self.node,
            min_eigenvalue: self.min_eigenvalue,
        })
    }

    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let c = self.matrix()?;
        Ok((0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightInterval {
    pub parent: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub interval: Interval,
    /// False when the estimate sits on the boundary of the parameter space,
    /// where the normal approximation does not apply.
    pub reliable: bool,
}

pub fn node_covariance(data: &NodeData, theta: &[f64], spec: &ThresholdSpec) -> Result<CovarianceResult> {
    let h = node_hessian(data, theta, spec)?;
    let info = -(&h + h.transpose()) * 0.5;
    let min_eigenvalue = if info.nrows() == 0 {
        f64::INFINITY
    } else {
        info.clone().symmetric_eigenvalues().min()
    };
    let covariance = if min_eigenvalue > 0.0 {
        info.cholesky().map(|c| {
            let inv = c.inverse();
            (&inv + inv.transpose()) * 0.5
        })
    } else {
        None
    };
    Ok(CovarianceResult {
        node: data.node,
        covariance,
        min_eigenvalue,
    })
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(GltError::InvalidArgument(format!("level must lie in (0, 1), got {level}")))
    }
}

/// `b +/- z * se` per parent, truncated to `[0, h]`.
pub fn weight_intervals(fit: &NodeFitResult, cov: &CovarianceResult, level: f64) -> Result<Vec<WeightInterval>> {
    check_level(level)?;
    let se = cov.standard_errors()?;
    let z = normal_quantile(0.5 * (1.0 + level));
    let h = fit.threshold.support_bound();
    Ok(fit
        .parents
        .iter()
        .zip(&fit.weights)
        .zip(se)
        .map(|((&parent, &b), s)| WeightInterval {
            parent,
            estimate: b,
            stderr: s,
            interval: Interval {
                lower: (b - z * s).clamp(0.0, h),
                upper: (b + z * s).clamp(0.0, h),
                level,
            },
            reliable: !fit.on_boundary,
        })
        .collect())
}

/// Wald test of `b_u = b_w`; returns the z statistic and two-sided p-value.
pub fn weight_difference_test(fit: &NodeFitResult, cov: &CovarianceResult, u: usize, w: usize) -> Result<(f64, f64)> {
    let pos = |p: usize| {
        fit.parents
            .iter()
            .position(|&q| q == p)
            .ok_or(GltError::NotAParent { node: p, child: fit.node })
    };
    let (i, j) = (pos(u)?, pos(w)?);
    let c = cov.matrix()?;
    let diff = fit.weights[i] - fit.weights[j];
    let var = c[(i, i)] + c[(j, j)] - 2.0 * c[(i, j)];
    if diff == 0.0 {
        return Ok((0.0, 1.0));
    }
    if !(var > 0.0) {
        return Err(GltError::NonPositiveVariance(var));
    }
    let z = diff / var.sqrt();
    Ok((z, erfc(z.abs() / std::f64::consts::SQRT_2)))
}

/// Indicators of `A_{t-2}` and `A_{t-1}` over `v`'s parents, where
/// `history = (D_0, ..., D_{t-1})`.
fn exposure(graph: &Graph, history: &[NodeSet], v: usize, parents: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if history.is_empty() {
        return Err(GltError::InvalidArgument("history must contain the seed set".into()));
    }
    Trace::new(history.to_vec()).validate(graph)?;
    if let Some(time) = history.iter().position(|d| d.contains(v)) {
        return Err(GltError::AlreadyActive { node: v, time });
    }
    let t = history.len();
    let earlier: NodeSet = history[..t - 1].iter().flat_map(|d| d.iter()).collect();
    let z0 = parents.iter().map(|&u| earlier.contains(u) as u8 as f64).collect();
    let z1 = parents
        .iter()
        .map(|&u| (earlier.contains(u) || history[t - 1].contains(u)) as u8 as f64)
        .collect();
    Ok((z0, z1))
}

/// Transition probability under the fitted weights with its gradient.
pub fn activation_probability_gradient(
    spec: &ThresholdSpec,
    theta: &[f64],
    z0: &[f64],
    z1: &[f64],
) -> (f64, DVector<f64>) {
    let th = DVector::from_column_slice(theta);
    let (z0, z1) = (DVector::from_column_slice(z0), DVector::from_column_slice(z1));
    let (b, a) = (th.dot(&z0), th.dot(&z1));
    if a == b {
        return (0.0, DVector::zeros(theta.len()));
    }
    let (sa, sb) = (spec.sf(a), spec.sf(b));
    let g = if sb > 0.0 { (1.0 - sa / sb).clamp(0.0, 1.0) } else { 1.0 };
    // grad = (f(a) S(b) z1 - S(a) f(b) z0) / S(b)^2
    let mut grad = z1 * (spec.density(a) / sb);
    if b > 0.0 {
        grad.axpy(-sa * spec.density(b) / (sb * sb), &z0, 1.0);
    }
    (g, grad)
}

/// Delta-method interval for the probability that `fit.node` activates at
/// `t = history.len()`.
pub fn activation_probability_interval(
    fit: &NodeFitResult,
    cov: &CovarianceResult,
    graph: &Graph,
    history: &[NodeSet],
    level: f64,
) -> Result<(f64, Interval)> {
    check_level(level)?;
    let (z0, z1) = exposure(graph, history, fit.node, &fit.parents)?;
    let (g, grad) = activation_probability_gradient(&fit.threshold, &fit.weights, &z0, &z1);
    if grad.iter().all(|&x| x == 0.0) {
        return Ok((g, Interval { lower: g, upper: g, level }));
    }
    let c = cov.matrix()?;
    let var = grad.dot(&(c * &grad));
    if var < 0.0 {
        return Err(GltError::NonPositiveVariance(var));
    }
    let half = normal_quantile(0.5 * (1.0 + level)) * var.sqrt();
    Ok((
        g,
        Interval {
            lower: (g - half).clamp(0.0, 1.0),
            upper: (g + half).clamp(0.0, 1.0),
            level,
        },
    ))
}

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.02425;
    let x = if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
