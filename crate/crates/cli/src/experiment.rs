//! Synthetic studies: raw per-replication rows plus summary tables.

use std::collections::BTreeMap;
use std::path::Path;

use clap::ValueEnum;
use glt::estimation::{baseline_ptp, baseline_wc, fit_all_data, fit_all_with_grid, FitOptions, FitReport};
use glt::graph::{generate_cws, sample_seed, sample_weights_simplex};
use glt::influence::{estimate_spread_mc, greedy_im, SpreadEvaluator};
use glt::inference::{activation_probability_interval, node_covariance, weight_intervals, CovarianceResult};
use glt::likelihood::{build_all_node_data, NodeData};
use glt::{GltModel, Graph, NodeSet, SeedDistribution, SeedTree, ThresholdSpec, Trace};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{fitted_model, ExperimentArgs};
use crate::io::{csv_bytes, json_bytes, read_json, write_atomic, CliError, CliResult};
use crate::metrics::{rmae, summarize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    RmaeVsN,
    RmaeVsTraces,
    CiCoverage,
    ActivationPrediction,
    ImComparison,
    SpreadComparison,
}

impl ExperimentName {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentName::RmaeVsN => "rmae-vs-n",
            ExperimentName::RmaeVsTraces => "rmae-vs-traces",
            ExperimentName::CiCoverage => "ci-coverage",
            ExperimentName::ActivationPrediction => "activation-prediction",
            ExperimentName::ImComparison => "im-comparison",
            ExperimentName::SpreadComparison => "spread-comparison",
        }
    }
}

/// Overrides of the per-experiment defaults; absent fields keep the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: Option<Vec<usize>>,
    pub k: Option<Vec<usize>>,
    pub p: Option<f64>,
    pub d_max: Option<Vec<f64>>,
    pub traces: Option<Vec<usize>>,
    pub test_size: Option<usize>,
    pub s_max: Option<usize>,
    pub replications: Option<usize>,
    pub fits_per_network: Option<usize>,
    pub replicates: Option<usize>,
    pub budgets: Option<Vec<usize>>,
    pub beta_grid: Option<Vec<f64>>,
}

/// Effective settings, written next to the tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub experiment: ExperimentName,
    pub seed: u64,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub p: f64,
    pub d_max: Vec<f64>,
    pub traces: Vec<usize>,
    pub test_size: usize,
    pub s_max: usize,
    pub replications: usize,
    pub fits_per_network: usize,
    pub replicates: usize,
    pub budgets: Vec<usize>,
    pub beta_grid: Vec<f64>,
}

impl Settings {
    pub fn resolve(experiment: ExperimentName, seed: u64, c: &ExperimentConfig) -> CliResult<Self> {
        use ExperimentName::*;
        let (n, k, traces, d_max, s_max) = match experiment {
            RmaeVsN => (vec![25, 50, 100, 200], vec![4, 8], vec![2000], vec![1.0], 5),
            RmaeVsTraces => (vec![100], vec![10], vec![500, 1000, 2000, 4000], vec![0.2, 0.4, 0.6, 0.8, 1.0], 5),
            CiCoverage => (vec![50], vec![5], vec![2000], vec![1.0], 5),
            ActivationPrediction => (vec![100], vec![5], vec![1500], vec![1.0], 10),
            ImComparison => (vec![100], vec![10], vec![2000], vec![1.0], 5),
            SpreadComparison => (vec![100], vec![10], vec![1000], vec![1.0], 20),
        };
        let replications = match experiment {
            ActivationPrediction | SpreadComparison => 1,
            _ => 10,
        };
        let s = Settings {
            experiment,
            seed,
            n: c.n.clone().unwrap_or(n),
            k: c.k.clone().unwrap_or(k),
            p: c.p.unwrap_or(0.2),
            d_max: c.d_max.clone().unwrap_or(d_max),
            traces: c.traces.clone().unwrap_or(traces),
            test_size: c.test_size.unwrap_or(500),
            s_max: c.s_max.unwrap_or(s_max),
            replications: c.replications.unwrap_or(replications),
            fits_per_network: c.fits_per_network.unwrap_or(5),
            replicates: c.replicates.unwrap_or(1000),
            budgets: c.budgets.clone().unwrap_or_else(|| vec![1, 4, 7, 10, 13]),
            beta_grid: c.beta_grid.clone().unwrap_or_else(|| (1..=10).map(f64::from).collect()),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> CliResult<()> {
        let lists = [
            ("n", self.n.is_empty()),
            ("k", self.k.is_empty()),
            ("d_max", self.d_max.is_empty()),
            ("traces", self.traces.is_empty()),
            ("budgets", self.budgets.is_empty()),
            ("beta_grid", self.beta_grid.is_empty()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, empty)| *empty) {
            return Err(CliError::usage(format!("config list '{name}' is empty")));
        }
        let counts = [
            self.test_size,
            self.s_max,
            self.replications,
            self.fits_per_network,
            self.replicates,
        ];
        if counts.contains(&0) || self.n.contains(&0) || self.traces.contains(&0) || self.budgets.contains(&0) {
            return Err(CliError::usage("all counts must be positive"));
        }
        Ok(())
    }
}

pub fn run_experiment(a: &ExperimentArgs) -> CliResult<()> {
    let mut config: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if a.replicates.is_some() {
        config.replicates = a.replicates;
    }
    let s = Settings::resolve(a.experiment, a.seed, &config)?;
    let root = SeedTree::new(a.seed).child(a.experiment.label());
    let (raw, summary) = match a.experiment {
        ExperimentName::RmaeVsN => tables(rmae_vs_n(&s, &root)?, summarize_rmae)?,
        ExperimentName::RmaeVsTraces => tables(rmae_vs_traces(&s, &root)?, summarize_rmae)?,
        ExperimentName::CiCoverage => tables(ci_coverage(&s, &root)?, summarize_coverage)?,
        ExperimentName::ActivationPrediction => tables(activation_prediction(&s, &root)?, summarize_activation)?,
        ExperimentName::ImComparison => tables(im_comparison(&s, &root)?, summarize_im)?,
        ExperimentName::SpreadComparison => tables(spread_comparison(&s, &root)?, summarize_spread)?,
    };
    let dir = &a.out;
    std::fs::create_dir_all(dir)?;
    let label = a.experiment.label();
    write_atomic(&dir.join(format!("{label}.csv")), &raw)?;
    write_atomic(&dir.join(format!("{label}_summary.csv")), &summary)?;
    write_atomic(&dir.join(format!("{label}_config.json")), &json_bytes(&s)?)?;
    Ok(())
}

fn tables<R: Serialize, S: Serialize>(rows: Vec<R>, sum: fn(&[R]) -> Vec<S>) -> CliResult<(Vec<u8>, Vec<u8>)> {
    let summary = sum(&rows);
    Ok((csv_bytes(&rows)?, csv_bytes(&summary)?))
}

/// Paths of the raw and summary tables written by `run_experiment`.
pub fn table_paths(dir: &Path, name: ExperimentName) -> (std::path::PathBuf, std::path::PathBuf) {
    let label = name.label();
    (dir.join(format!("{label}.csv")), dir.join(format!("{label}_summary.csv")))
}

struct Instance {
    graph: Graph,
    weights: Vec<f64>,
}

fn instance(root: &SeedTree, n: usize, k: usize, p: f64, d_max: f64, rep: usize) -> glt::Result<Instance> {
    let key = format!("{n}-{k}");
    let graph = generate_cws(n, k, p, &mut root.child("graph").child(&key).index(rep as u64).rng())?;
    // the weight stream ignores d_max, so designs differing only in d_max are scaled copies
    let weights = sample_weights_simplex(&graph, d_max, &mut root.child("weights").child(&key).index(rep as u64).rng())?;
    Ok(Instance { graph, weights })
}

fn fit_common(data: &[NodeData], spec: ThresholdSpec) -> glt::Result<FitReport> {
    let report = fit_all_data(data, &vec![spec; data.len()], &FitOptions::default())?;
    for r in report.values() {
        match r {
            Ok(_) | Err(glt::GltError::NoData { .. }) => {}
            Err(e) => return Err(e.clone()),
        }
    }
    Ok(report)
}

fn seeds_law(s: &Settings) -> SeedDistribution {
    SeedDistribution::uniform_by_size(s.s_max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmaeRow {
    pub n: usize,
    pub k: usize,
    pub d_max: f64,
    pub traces: usize,
    pub replication: usize,
    pub rmae: f64,
    pub fitted_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmaeSummary {
    pub n: usize,
    pub k: usize,
    pub d_max: f64,
    pub traces: usize,
    pub count: usize,
    pub mean: f64,
    pub two_se: f64,
    pub median: f64,
}

fn rmae_rows(s: &Settings, root: &SeedTree, n: usize, k: usize, d_max: f64, rep: usize) -> glt::Result<Vec<RmaeRow>> {
    let inst = instance(root, n, k, s.p, d_max, rep)?;
    let model = GltModel::from_lt(inst.graph.clone(), inst.weights.clone())?;
    let longest = *s.traces.iter().max().expect("nonempty");
    let stream = root.child("traces").child(&format!("{n}-{k}-{d_max}")).index(rep as u64);
    let traces = model.simulate_traces(&seeds_law(s), longest, stream)?;
    s.traces
        .iter()
        .map(|&count| {
            let data = build_all_node_data(&traces[..count], &inst.graph)?;
            let report = fit_common(&data, ThresholdSpec::uniform())?;
            let est = glt::estimation::assemble_weights(&inst.graph, &report, 0.0);
            Ok(RmaeRow {
                n,
                k,
                d_max,
                traces: count,
                replication: rep,
                rmae: rmae(&inst.weights, &est)?,
                fitted_nodes: report.values().filter(|r| r.is_ok()).count(),
            })
        })
        .collect()
}

fn rmae_grid(s: &Settings, root: &SeedTree) -> CliResult<Vec<RmaeRow>> {
    let mut jobs = Vec::new();
    for &n in &s.n {
        for &k in &s.k {
            for &d in &s.d_max {
                for rep in 0..s.replications {
                    jobs.push((n, k, d, rep));
                }
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(n, k, d, rep)| rmae_rows(s, root, n, k, d, rep))
        .collect::<glt::Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn rmae_vs_n(s: &Settings, root: &SeedTree) -> CliResult<Vec<RmaeRow>> {
    rmae_grid(s, root)
}

fn rmae_vs_traces(s: &Settings, root: &SeedTree) -> CliResult<Vec<RmaeRow>> {
    rmae_grid(s, root)
}

fn summarize_rmae(rows: &[RmaeRow]) -> Vec<RmaeSummary> {
    let mut groups: BTreeMap<(usize, usize, u64, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.n, r.k, r.d_max.to_bits(), r.traces))
            .or_default()
            .push(r.rmae);
    }
    groups
        .into_iter()
        .map(|((n, k, d, traces), v)| {
            let m = summarize(&v);
            RmaeSummary {
                n,
                k,
                d_max: f64::from_bits(d),
                traces,
                count: m.count,
                mean: m.mean,
                two_se: 2.0 * m.se,
                median: m.median,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageRow {
    pub replication: usize,
    pub node: usize,
    pub parent: usize,
    pub truth: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    /// Estimate off the boundary with a positive definite information matrix.
    pub interior: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub rows: usize,
    pub interior: usize,
    pub coverage: f64,
    pub mean_length: f64,
}

fn ci_coverage(s: &Settings, root: &SeedTree) -> CliResult<Vec<CoverageRow>> {
    let (n, k, d_max, count) = (s.n[0], s.k[0], s.d_max[0], s.traces[0]);
    let rows = (0..s.replications)
        .into_par_iter()
        .map(|rep| -> glt::Result<Vec<CoverageRow>> {
            let inst = instance(root, n, k, s.p, d_max, rep)?;
            let model = GltModel::from_lt(inst.graph.clone(), inst.weights.clone())?;
            let traces = model.simulate_traces(&seeds_law(s), count, root.child("traces").index(rep as u64))?;
            let data = build_all_node_data(&traces, &inst.graph)?;
            let report = fit_common(&data, ThresholdSpec::uniform())?;
            let mut rows = Vec::new();
            for fit in report.values().flatten() {
                let cov = node_covariance(&data[fit.node], &fit.weights, &fit.threshold)?;
                let truth = &inst.weights[inst.graph.in_edge_range(fit.node)];
                if !cov.valid() {
                    for ((&parent, &est), &t) in fit.parents.iter().zip(&fit.weights).zip(truth) {
                        rows.push(CoverageRow {
                            replication: rep,
                            node: fit.node,
                            parent,
                            truth: t,
                            estimate: est,
                            stderr: f64::NAN,
                            lower: f64::NAN,
                            upper: f64::NAN,
                            covered: false,
                            interior: false,
                        });
                    }
                    continue;
                }
                for (w, &t) in weight_intervals(fit, &cov, 0.95)?.iter().zip(truth) {
                    rows.push(CoverageRow {
                        replication: rep,
                        node: fit.node,
                        parent: w.parent,
                        truth: t,
                        estimate: w.estimate,
                        stderr: w.stderr,
                        lower: w.interval.lower,
                        upper: w.interval.upper,
                        covered: w.interval.lower <= t && t <= w.interval.upper,
                        interior: !fit.on_boundary,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<glt::Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn summarize_coverage(rows: &[CoverageRow]) -> Vec<CoverageSummary> {
    let inner: Vec<&CoverageRow> = rows.iter().filter(|r| r.interior).collect();
    let covered = inner.iter().filter(|r| r.covered).count();
    let length: f64 = inner.iter().map(|r| r.upper - r.lower).sum();
    vec![CoverageSummary {
        rows: rows.len(),
        interior: inner.len(),
        coverage: covered as f64 / inner.len() as f64,
        mean_length: length / inner.len() as f64,
    }]
}

fn candidate_name(spec: &ThresholdSpec) -> String {
    spec.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationRow {
    pub replication: usize,
    pub candidate: String,
    pub trace: usize,
    pub node: usize,
    pub time: usize,
    pub truth: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub has_interval: bool,
    pub covered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationSummary {
    pub candidate: String,
    pub count: usize,
    pub rmae: f64,
    pub coverage: f64,
    pub mean_length: f64,
}

/// Informative nodes of a trace with the history before their prediction
/// time: activated nodes at their activation, exposed nodes after the end.
fn prediction_points(trace: &Trace, graph: &Graph) -> glt::Result<Vec<(usize, usize)>> {
    let active = trace.active_set();
    let mut out = Vec::new();
    for (t, step) in trace.steps.iter().enumerate().skip(1) {
        out.extend(step.iter().map(|v| (v, t)));
    }
    let last = trace.steps.len();
    for v in graph.children_of_set(&active)?.iter().filter(|&v| !active.contains(v)) {
        out.push((v, last));
    }
    out.sort_unstable();
    Ok(out)
}

fn activation_prediction(s: &Settings, root: &SeedTree) -> CliResult<Vec<ActivationRow>> {
    let truth_spec = ThresholdSpec::beta(2.0, 1.0)?;
    let candidates = [
        truth_spec,
        ThresholdSpec::beta(3.0, 1.0)?,
        ThresholdSpec::uniform(),
        ThresholdSpec::exponential(),
    ];
    let (n, k, d_max, count) = (s.n[0], s.k[0], s.d_max[0], s.traces[0]);
    let rows = (0..s.replications)
        .into_par_iter()
        .map(|rep| -> glt::Result<Vec<ActivationRow>> {
            let inst = instance(root, n, k, s.p, d_max, rep)?;
            let g = &inst.graph;
            let truth = GltModel::with_common_threshold(g.clone(), inst.weights.clone(), truth_spec)?;
            let train = truth.simulate_traces(&seeds_law(s), count, root.child("train").index(rep as u64))?;
            let test = truth.simulate_traces(&seeds_law(s), s.test_size, root.child("test").index(rep as u64))?;
            let data = build_all_node_data(&train, g)?;
            let mut rows = Vec::new();
            for spec in &candidates {
                let report = fit_common(&data, *spec)?;
                let model = fitted_model(g, &report, *spec)?;
                let covs: BTreeMap<usize, CovarianceResult> = report
                    .values()
                    .flatten()
                    .map(|f| node_covariance(&data[f.node], &f.weights, &f.threshold).map(|c| (f.node, c)))
                    .collect::<glt::Result<_>>()?;
                for (ti, trace) in test.iter().enumerate() {
                    for (v, t) in prediction_points(trace, g)? {
                        let history = &trace.steps[..t];
                        let p_true = truth.transition_probability(history, v)?;
                        let mut row = ActivationRow {
                            replication: rep,
                            candidate: candidate_name(spec),
                            trace: ti,
                            node: v,
                            time: t,
                            truth: p_true,
                            estimate: model.transition_probability(history, v)?,
                            lower: f64::NAN,
                            upper: f64::NAN,
                            has_interval: false,
                            covered: false,
                        };
                        if let (Some(Ok(fit)), Some(cov)) = (report.get(&v), covs.get(&v)) {
                            if cov.valid() {
                                let (p, ci) = activation_probability_interval(fit, cov, g, history, 0.95)?;
                                row.estimate = p;
                                row.lower = ci.lower;
                                row.upper = ci.upper;
                                row.has_interval = true;
                                row.covered = ci.lower <= p_true && p_true <= ci.upper;
                            }
                        }
                        rows.push(row);
                    }
                }
            }
            Ok(rows)
        })
        .collect::<glt::Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn summarize_activation(rows: &[ActivationRow]) -> Vec<ActivationSummary> {
    let mut groups: Vec<(String, Vec<&ActivationRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(c, _)| *c == r.candidate) {
            Some((_, v)) => v.push(r),
            None => groups.push((r.candidate.clone(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(candidate, v)| {
            let truth: Vec<f64> = v.iter().map(|r| r.truth).collect();
            let est: Vec<f64> = v.iter().map(|r| r.estimate).collect();
            let with: Vec<&&ActivationRow> = v.iter().filter(|r| r.has_interval).collect();
            ActivationSummary {
                candidate,
                count: v.len(),
                rmae: rmae(&truth, &est).unwrap_or(f64::NAN),
                coverage: with.iter().filter(|r| r.covered).count() as f64 / with.len() as f64,
                mean_length: with.iter().map(|r| r.upper - r.lower).sum::<f64>() / with.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImRow {
    pub network: usize,
    pub fit: usize,
    pub model: String,
    pub k: usize,
    pub spread: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImSummary {
    pub model: String,
    pub k: usize,
    pub networks: usize,
    pub mean: f64,
    pub two_se: f64,
    pub median: f64,
}

pub const IM_MODELS: [&str; 6] = ["oracle", "glt", "lt", "ic", "wc", "ptp"];

fn im_comparison(s: &Settings, root: &SeedTree) -> CliResult<Vec<ImRow>> {
    let (n, k, d_max, count) = (s.n[0], s.k[0], s.d_max[0], s.traces[0]);
    let kmax = *s.budgets.iter().max().expect("nonempty");
    let grid = s
        .beta_grid
        .iter()
        .map(|&b| ThresholdSpec::beta_fit_safe(1.0, b))
        .collect::<glt::Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..s.replications)
        .flat_map(|net| (0..s.fits_per_network).map(move |f| (net, f)))
        .collect();
    let truths = (0..s.replications)
        .into_par_iter()
        .map(|net| -> glt::Result<GltModel> {
            let inst = instance(root, n, k, s.p, d_max, net)?;
            let mut rng = root.child("beta").index(net as u64).rng();
            let specs = (0..n)
                .map(|_| ThresholdSpec::beta(1.0, rng.random_range(1..=5) as f64))
                .collect::<glt::Result<Vec<_>>>()?;
            GltModel::new(inst.graph, inst.weights, specs)
        })
        .collect::<glt::Result<Vec<_>>>()?;
    let spreads = |truth: &GltModel, net: usize, seeds: &[usize]| -> glt::Result<Vec<(usize, f64, f64)>> {
        // every model of a network is scored on the same replicate streams
        let eval = root.child("eval").index(net as u64);
        let mut budgets = s.budgets.clone();
        budgets.sort_unstable();
        budgets.dedup();
        budgets
            .into_iter()
            .map(|b| {
                let set: NodeSet = seeds[..b.min(seeds.len())].iter().copied().collect();
                estimate_spread_mc(truth, &set, s.replicates, &eval).map(|e| (b, e.mean, e.stderr))
            })
            .collect()
    };
    let greedy = |model: &GltModel, key: SeedTree| -> glt::Result<Vec<usize>> {
        let ev = SpreadEvaluator::MonteCarlo {
            replicates: s.replicates,
            seed: key.key(),
        };
        Ok(greedy_im(model, kmax.min(model.graph().node_count()), &ev)?.seeds)
    };
    let oracle_rows = (0..s.replications)
        .into_par_iter()
        .map(|net| -> glt::Result<Vec<ImRow>> {
            let truth = &truths[net];
            let seeds = greedy(truth, root.child("greedy").child("oracle").index(net as u64))?;
            Ok(spreads(truth, net, &seeds)?
                .into_iter()
                .map(|(b, mean, se)| ImRow {
                    network: net,
                    fit: 0,
                    model: "oracle".into(),
                    k: b,
                    spread: mean,
                    se,
                })
                .collect())
        })
        .collect::<glt::Result<Vec<_>>>()?;
    let fitted_rows = jobs
        .par_iter()
        .map(|&(net, f)| -> glt::Result<Vec<ImRow>> {
            let truth = &truths[net];
            let g = truth.graph();
            let traces = truth.simulate_traces(
                &seeds_law(s),
                count,
                root.child("traces").index(net as u64).index(f as u64),
            )?;
            let data = build_all_node_data(&traces, g)?;
            let glt_report = fit_all_with_grid(&data, &grid, &FitOptions::default());
            if let Some(Err(e)) = glt_report.values().find(|r| !matches!(r, Ok(_) | Err(glt::GltError::NoData { .. }))) {
                return Err(e.clone());
            }
            let models: Vec<(&str, GltModel)> = vec![
                ("glt", fitted_model(g, &glt_report, grid[0])?),
                ("lt", fitted_model(g, &fit_common(&data, ThresholdSpec::uniform())?, ThresholdSpec::uniform())?),
                (
                    "ic",
                    fitted_model(g, &fit_common(&data, ThresholdSpec::exponential())?, ThresholdSpec::exponential())?,
                ),
                ("wc", GltModel::from_lt(g.clone(), baseline_wc(g))?),
                ("ptp", GltModel::from_lt(g.clone(), baseline_ptp(&traces, g)?)?),
            ];
            let mut rows = Vec::new();
            for (name, model) in &models {
                let key = root.child("greedy").child(name).index(net as u64).index(f as u64);
                let seeds = greedy(model, key)?;
                for (b, mean, se) in spreads(truth, net, &seeds)? {
                    rows.push(ImRow {
                        network: net,
                        fit: f,
                        model: name.to_string(),
                        k: b,
                        spread: mean,
                        se,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<glt::Result<Vec<_>>>()?;
    Ok(oracle_rows.into_iter().chain(fitted_rows).flatten().collect())
}

fn summarize_im(rows: &[ImRow]) -> Vec<ImSummary> {
    // average over fits within a network, then across networks
    let mut per_net: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let m = IM_MODELS.iter().position(|x| *x == r.model).unwrap_or(IM_MODELS.len());
        per_net.entry((m, r.k, r.network)).or_default().push(r.spread);
    }
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for ((m, k, _), v) in per_net {
        groups.entry((m, k)).or_default().push(v.iter().sum::<f64>() / v.len() as f64);
    }
    groups
        .into_iter()
        .map(|((m, k), v)| {
            let s = summarize(&v);
            ImSummary {
                model: IM_MODELS.get(m).unwrap_or(&"other").to_string(),
                k,
                networks: s.count,
                mean: s.mean,
                two_se: 2.0 * s.se,
                median: s.median,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpreadRow {
    pub replication: usize,
    pub seed_set: usize,
    pub size: usize,
    pub candidate: String,
    pub truth: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpreadSummary {
    pub candidate: String,
    pub count: usize,
    pub rmae: f64,
    pub mean_truth: f64,
    pub mean_estimate: f64,
}

fn spread_comparison(s: &Settings, root: &SeedTree) -> CliResult<Vec<SpreadRow>> {
    let truth_spec = ThresholdSpec::beta(2.0, 2.0)?;
    let candidates = [
        truth_spec,
        ThresholdSpec::beta(1.0, 2.0)?,
        ThresholdSpec::beta(2.0, 1.0)?,
        ThresholdSpec::uniform(),
    ];
    let (n, k, d_max, count) = (s.n[0], s.k[0], s.d_max[0], s.traces[0]);
    let rows = (0..s.replications)
        .into_par_iter()
        .map(|rep| -> glt::Result<Vec<SpreadRow>> {
            let inst = instance(root, n, k, s.p, d_max, rep)?;
            let g = &inst.graph;
            let truth = GltModel::with_common_threshold(g.clone(), inst.weights.clone(), truth_spec)?;
            let train = truth.simulate_traces(&seeds_law(s), count, root.child("train").index(rep as u64))?;
            let data = build_all_node_data(&train, g)?;
            let models = candidates
                .iter()
                .map(|spec| fit_common(&data, *spec).and_then(|r| fitted_model(g, &r, *spec)))
                .collect::<glt::Result<Vec<_>>>()?;
            let mut rng = root.child("test").index(rep as u64).rng();
            let sets = (0..s.test_size)
                .map(|_| sample_seed(&seeds_law(s), g, &mut rng))
                .collect::<glt::Result<Vec<_>>>()?;
            let rows = sets
                .par_iter()
                .enumerate()
                .map(|(j, set)| -> glt::Result<Vec<SpreadRow>> {
                    let stream = root.child("mc").index(rep as u64).index(j as u64);
                    let t = estimate_spread_mc(&truth, set, s.replicates, &stream)?.mean;
                    candidates
                        .iter()
                        .zip(&models)
                        .map(|(spec, m)| {
                            Ok(SpreadRow {
                                replication: rep,
                                seed_set: j,
                                size: set.len(),
                                candidate: candidate_name(spec),
                                truth: t,
                                estimate: estimate_spread_mc(m, set, s.replicates, &stream)?.mean,
                            })
                        })
                        .collect()
                })
                .collect::<glt::Result<Vec<_>>>()?;
            Ok(rows.into_iter().flatten().collect())
        })
        .collect::<glt::Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn summarize_spread(rows: &[SpreadRow]) -> Vec<SpreadSummary> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.candidate) {
            order.push(r.candidate.clone());
        }
    }
    order
        .into_iter()
        .map(|c| {
            let v: Vec<&SpreadRow> = rows.iter().filter(|r| r.candidate == c).collect();
            let truth: Vec<f64> = v.iter().map(|r| r.truth).collect();
            let est: Vec<f64> = v.iter().map(|r| r.estimate).collect();
            SpreadSummary {
                candidate: c,
                count: v.len(),
                rmae: rmae(&truth, &est).unwrap_or(f64::NAN),
                mean_truth: truth.iter().sum::<f64>() / v.len() as f64,
                mean_estimate: est.iter().sum::<f64>() / v.len() as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_overrides_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"n": [10], "replications": 3}"#).unwrap();
        let s = Settings::resolve(ExperimentName::RmaeVsTraces, 1, &c).unwrap();
        assert_eq!(s.n, vec![10]);
        assert_eq!(s.replications, 3);
        assert_eq!(s.traces, vec![500, 1000, 2000, 4000]);
        assert_eq!(s.d_max.len(), 5);
        let bad = ExperimentConfig {
            traces: Some(vec![]),
            ..Default::default()
        };
        assert!(Settings::resolve(ExperimentName::RmaeVsN, 1, &bad).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"nodes": 3}"#).is_err());
    }

    #[test]
    fn prediction_points_cover_activated_and_exposed_nodes() {
        // 0 -> 1 -> 2, 0 -> 3; 1 activates, 2 and 3 stay exposed
        let g = Graph::new(5, &[(0, 1), (1, 2), (0, 3)]).unwrap();
        let trace = Trace::new(vec![NodeSet::from([0]), NodeSet::from([1])]);
        assert_eq!(prediction_points(&trace, &g).unwrap(), vec![(1, 1), (2, 2), (3, 2)]);
    }
}
