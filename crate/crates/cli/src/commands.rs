//! Subcommands of the `glt` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use glt::diagnostics::{check_identifiability, check_submodularity_exact, triggering_embedding_for, TriggeringEmbedding};
use glt::estimation::{assemble_weights, fit_all_data, fit_all_with_grid, FitOptions, FitReport, NodeFitResult};
use glt::graph::{generate_cws, sample_weights_simplex, GraphDoc, SizeLaw};
use glt::influence::{greedy_im, SpreadEvaluator};
use glt::inference::{node_covariance, weight_intervals};
use glt::likelihood::{build_all_node_data, build_all_pseudo_node_data, NodeData, PseudoTrace};
use glt::model::ModelDoc;
use glt::{GltError, GltModel, Graph, NodeSet, SeedDistribution, SeedTree, ThresholdSpec, Trace};
use serde::Serialize;

use crate::experiment::{run_experiment, ExperimentName};
use crate::io::{check_lines, emit, json_bytes, jsonl_bytes, read_json, read_jsonl, CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "glt", version, about = "General linear threshold diffusion models")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a CWS graph (or load one) and edge weights from the scaled simplex.
    Generate(GenerateArgs),
    /// Simulate propagation traces from a model.
    Simulate(SimulateArgs),
    /// Maximum-likelihood edge weights from traces or pseudo-traces.
    Fit(FitArgs),
    /// Fit plus standard errors and Wald intervals.
    Infer(InferArgs),
    /// Identifiability, submodularity or triggering-embedding checks.
    Diagnose(DiagnoseArgs),
    /// Greedy influence maximization.
    Im(ImArgs),
    /// Spread of a given seed set.
    Spread(SpreadArgs),
    /// Synthetic experiment tables.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Node count of the CWS graph.
    #[arg(long)]
    pub n: Option<usize>,
    /// Initial degree of the CWS graph.
    #[arg(long)]
    pub k: Option<usize>,
    /// Rewiring probability.
    #[arg(long, default_value_t = 0.2)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub d_max: f64,
    /// uniform, exponential or beta:a,b
    #[arg(long, default_value = "uniform")]
    pub family: ThresholdSpec,
    /// Use this graph instead of sampling one.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SizeLawArg {
    SizeThenSubset,
    UniformOverSets,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Number of traces.
    #[arg(long)]
    pub count: usize,
    /// Largest seed set size.
    #[arg(long, default_value_t = 5)]
    pub s_max: usize,
    #[arg(long, value_enum, default_value = "size-then-subset")]
    pub size_law: SizeLawArg,
    /// Seed distribution document, overriding --s-max.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Take the graph from a model document.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitFlags {
    /// Threshold family assumed for every node.
    #[arg(long)]
    pub family: Option<ThresholdSpec>,
    /// Candidate families; each node keeps the best.
    #[arg(long, num_args = 1..)]
    pub grid: Vec<ThresholdSpec>,
    #[arg(long, default_value_t = glt::model::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the fitted model; edges of unestimated nodes get weight 0.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Check {
    Identifiability,
    Submodularity,
    Embedding,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long, value_enum, default_value = "identifiability")]
    pub check: Check,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Seeds uniform over sets of size 1..=s_max (identifiability).
    #[arg(long, default_value_t = 1)]
    pub s_max: usize,
    /// Seed distribution document, overriding --s-max.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// State budget for searches and enumeration.
    #[arg(long, default_value_t = 1_000_000)]
    pub cap: usize,
    /// Largest seed set checked for submodularity.
    #[arg(long)]
    pub k: Option<usize>,
    /// Restrict the embedding check to one node.
    #[arg(long)]
    pub node: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EvaluatorArg {
    Mc,
    Exact,
    Bipartite,
}

#[derive(Args, Debug)]
pub struct EvaluatorFlags {
    #[arg(long, value_enum, default_value = "mc")]
    pub evaluator: EvaluatorArg,
    /// Monte Carlo replicates.
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    /// State budget of the exact evaluator.
    #[arg(long, default_value_t = 1_000_000)]
    pub cap: usize,
    #[arg(long)]
    pub seed: u64,
}

impl EvaluatorFlags {
    fn evaluator(&self) -> SpreadEvaluator {
        match self.evaluator {
            EvaluatorArg::Mc => SpreadEvaluator::MonteCarlo {
                replicates: self.replicates,
                seed: self.seed,
            },
            EvaluatorArg::Exact => SpreadEvaluator::Exact { cap: self.cap },
            EvaluatorArg::Bipartite => SpreadEvaluator::Bipartite,
        }
    }
}

#[derive(Args, Debug)]
pub struct ImArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Seed set size.
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub eval: EvaluatorFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SpreadArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated seed nodes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub set: Vec<usize>,
    #[command(flatten)]
    pub eval: EvaluatorFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub experiment: ExperimentName,
    /// JSON overrides of the experiment defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Monte Carlo replicates, overriding the config.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::new("internal", e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Im(a) => cmd_im(&a),
        Command::Spread(a) => cmd_spread(&a),
        Command::Experiment(a) => run_experiment(&a),
    })
}

fn with_file(path: &Path) -> impl Fn(GltError) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        err.file = Some(path.to_path_buf());
        err
    }
}

pub fn load_model(path: &Path) -> CliResult<GltModel> {
    let doc: ModelDoc = read_json(path)?;
    GltModel::from_doc(&doc).map_err(with_file(path))
}

fn load_graph(graph: Option<&Path>, model: Option<&Path>) -> CliResult<Graph> {
    match (graph, model) {
        (Some(g), None) => {
            let doc: GraphDoc = read_json(g)?;
            Graph::from_doc(&doc).map_err(with_file(g))
        }
        (None, Some(m)) => Ok(load_model(m)?.graph().clone()),
        _ => Err(CliError::usage("give exactly one of --graph and --model")),
    }
}

pub fn load_traces(path: &Path, graph: &Graph) -> CliResult<Vec<Trace>> {
    let traces: Vec<Trace> = read_jsonl(path)?;
    check_lines(path, &traces, |t| t.validate(graph))?;
    Ok(traces)
}

fn load_pseudo(path: &Path, graph: &Graph) -> CliResult<Vec<PseudoTrace>> {
    let pseudo: Vec<PseudoTrace> = read_jsonl(path)?;
    let n = graph.node_count();
    check_lines(path, &pseudo, |p| {
        if p.node >= n {
            return Err(GltError::NodeOutOfRange { index: p.node, node_count: n });
        }
        if p.active_parents.is_empty() {
            return Err(GltError::InvalidArgument("empty active parent set".into()));
        }
        match p.active_parents.iter().find(|&u| graph.parent_position(p.node, u).is_none()) {
            Some(u) => Err(GltError::NotAParent { node: u, child: p.node }),
            None => Ok(()),
        }
    })?;
    Ok(pseudo)
}

fn load_seed_distribution(path: Option<&Path>, s_max: usize, law: SizeLaw, n: usize) -> CliResult<SeedDistribution> {
    let dist = match path {
        Some(p) => read_json(p)?,
        None => SeedDistribution::UniformBySize { s_max, law },
    };
    dist.validate(n)?;
    Ok(dist)
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let tree = SeedTree::new(a.seed).child("generate");
    let graph = match (&a.graph, a.n, a.k) {
        (Some(path), None, None) => load_graph(Some(path), None)?,
        (None, Some(n), Some(k)) => generate_cws(n, k, a.p, &mut tree.child("graph").rng())?,
        _ => return Err(CliError::usage("give either --graph or both --n and --k")),
    };
    let weights = sample_weights_simplex(&graph, a.d_max, &mut tree.child("weights").rng())?;
    let model = GltModel::with_common_threshold(graph, weights, a.family)?;
    emit(a.out.as_deref(), &json_bytes(&model.to_doc())?)
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let law = match a.size_law {
        SizeLawArg::SizeThenSubset => SizeLaw::SizeThenSubset,
        SizeLawArg::UniformOverSets => SizeLaw::UniformOverSets,
    };
    let dist = load_seed_distribution(a.seeds.as_deref(), a.s_max, law, model.graph().node_count())?;
    let traces = model.simulate_traces(&dist, a.count, SeedTree::new(a.seed).child("simulate"))?;
    emit(a.out.as_deref(), &jsonl_bytes(&traces)?)
}

struct Loaded {
    graph: Graph,
    data: Vec<NodeData>,
}

fn load_data(d: &DataArgs) -> CliResult<Loaded> {
    let graph = load_graph(d.graph.as_deref(), d.model.as_deref())?;
    let data = match (&d.traces, &d.pseudo) {
        (Some(t), None) => build_all_node_data(&load_traces(t, &graph)?, &graph)?,
        (None, Some(p)) => build_all_pseudo_node_data(&load_pseudo(p, &graph)?, &graph)?,
        _ => return Err(CliError::usage("give exactly one of --traces and --pseudo")),
    };
    Ok(Loaded { graph, data })
}

impl FitFlags {
    fn options(&self) -> FitOptions {
        FitOptions {
            epsilon: self.epsilon,
            gamma: self.gamma,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }

    /// Threshold given to nodes that are not estimated.
    fn default_spec(&self) -> ThresholdSpec {
        self.grid.first().copied().or(self.family).unwrap_or_else(ThresholdSpec::uniform)
    }

    fn fit(&self, data: &[NodeData]) -> CliResult<FitReport> {
        let options = self.options();
        let report = if self.grid.is_empty() {
            let spec = self.family.unwrap_or_else(ThresholdSpec::uniform);
            fit_all_data(data, &vec![spec; data.len()], &options)?
        } else {
            if self.family.is_some() {
                return Err(CliError::usage("--family and --grid are exclusive"));
            }
            fit_all_with_grid(data, &self.grid, &options)
        };
        for (v, r) in &report {
            match r {
                Ok(_) | Err(GltError::NoData { .. }) => {}
                Err(e) => {
                    let mut err = CliError::from(e.clone());
                    err.message = format!("node {v}: {}", err.message);
                    return Err(err);
                }
            }
        }
        Ok(report)
    }
}

#[derive(Serialize)]
struct Skipped {
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct InferenceFields {
    stderr: Vec<Option<f64>>,
    ci: Vec<[f64; 2]>,
    reliable: Vec<bool>,
    valid: bool,
    min_eigenvalue: f64,
}

#[derive(Serialize)]
struct NodeEntry {
    #[serde(flatten)]
    fit: NodeFitResult,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    inference: Option<InferenceFields>,
}

#[derive(Serialize)]
struct FitOutput {
    nodes: BTreeMap<usize, NodeEntry>,
    skipped: BTreeMap<usize, Skipped>,
}

fn skipped(report: &FitReport) -> BTreeMap<usize, Skipped> {
    report
        .iter()
        .filter_map(|(v, r)| {
            r.as_ref().err().map(|e| {
                (
                    *v,
                    Skipped {
                        kind: e.kind(),
                        message: e.to_string(),
                    },
                )
            })
        })
        .collect()
}

/// Model from a fit report; unestimated nodes keep `fallback` and zero weights.
pub fn fitted_model(graph: &Graph, report: &FitReport, fallback: ThresholdSpec) -> glt::Result<GltModel> {
    let weights = assemble_weights(graph, report, 0.0);
    let mut specs = vec![fallback; graph.node_count()];
    for fit in report.values().flatten() {
        specs[fit.node] = fit.threshold;
    }
    GltModel::new(graph.clone(), weights, specs)
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let loaded = load_data(&a.data)?;
    let report = a.fit.fit(&loaded.data)?;
    let out = FitOutput {
        nodes: report
            .values()
            .flatten()
            .map(|f| {
                (
                    f.node,
                    NodeEntry {
                        fit: f.clone(),
                        inference: None,
                    },
                )
            })
            .collect(),
        skipped: skipped(&report),
    };
    if let Some(path) = &a.model_out {
        let model = fitted_model(&loaded.graph, &report, a.fit.default_spec())?;
        emit(Some(path), &json_bytes(&model.to_doc())?)?;
    }
    emit(a.out.as_deref(), &json_bytes(&out)?)
}

fn cmd_infer(a: &InferArgs) -> CliResult<()> {
    let loaded = load_data(&a.data)?;
    let report = a.fit.fit(&loaded.data)?;
    let mut nodes = BTreeMap::new();
    for fit in report.values().flatten() {
        let cov = node_covariance(&loaded.data[fit.node], &fit.weights, &fit.threshold)?;
        let fields = if cov.valid() {
            let intervals = weight_intervals(fit, &cov, a.level)?;
            InferenceFields {
                stderr: intervals.iter().map(|w| Some(w.stderr)).collect(),
                ci: intervals.iter().map(|w| [w.interval.lower, w.interval.upper]).collect(),
                reliable: intervals.iter().map(|w| w.reliable).collect(),
                valid: true,
                min_eigenvalue: cov.min_eigenvalue,
            }
        } else {
            InferenceFields {
                stderr: vec![None; fit.weights.len()],
                ci: Vec::new(),
                reliable: vec![false; fit.weights.len()],
                valid: false,
                min_eigenvalue: cov.min_eigenvalue,
            }
        };
        nodes.insert(
            fit.node,
            NodeEntry {
                fit: fit.clone(),
                inference: Some(fields),
            },
        );
    }
    let out = FitOutput {
        nodes,
        skipped: skipped(&report),
    };
    emit(a.out.as_deref(), &json_bytes(&out)?)
}

fn cmd_diagnose(a: &DiagnoseArgs) -> CliResult<()> {
    let bytes = match a.check {
        Check::Identifiability => {
            let graph = load_graph(a.graph.as_deref(), a.model.as_deref())?;
            let dist = load_seed_distribution(a.seeds.as_deref(), a.s_max, SizeLaw::default(), graph.node_count())?;
            json_bytes(&check_identifiability(&graph, &dist, a.cap)?)?
        }
        Check::Submodularity => {
            let path = a.model.as_deref().ok_or_else(|| CliError::usage("--model is required"))?;
            let model = load_model(path)?;
            let k = a.k.unwrap_or(model.graph().node_count());
            json_bytes(&check_submodularity_exact(&model, k, a.cap)?)?
        }
        Check::Embedding => {
            let path = a.model.as_deref().ok_or_else(|| CliError::usage("--model is required"))?;
            let model = load_model(path)?;
            let nodes: Vec<usize> = match a.node {
                Some(v) => vec![v],
                None => model.graph().child_nodes().collect(),
            };
            let mut out: BTreeMap<usize, EmbeddingEntry> = BTreeMap::new();
            for v in nodes {
                if v >= model.graph().node_count() {
                    return Err(GltError::NodeOutOfRange {
                        index: v,
                        node_count: model.graph().node_count(),
                    }
                    .into());
                }
                let e = triggering_embedding_for(&model, v)?;
                out.insert(v, EmbeddingEntry::new(&model, v, e));
            }
            json_bytes(&out)?
        }
    };
    emit(a.out.as_deref(), &bytes)
}

#[derive(Serialize)]
struct EmbeddingEntry {
    parents: Vec<usize>,
    feasible: bool,
    /// `(subset of parents, probability)`, subsets by node id.
    probabilities: Vec<(Vec<usize>, f64)>,
    negative: Vec<Vec<usize>>,
}

impl EmbeddingEntry {
    fn new(model: &GltModel, v: usize, e: TriggeringEmbedding) -> Self {
        let parents: Vec<usize> = model.graph().parent_slice(v).collect();
        let ids = |s: &NodeSet| s.iter().map(|i| parents[i]).collect::<Vec<_>>();
        EmbeddingEntry {
            feasible: e.feasible(),
            probabilities: e.probabilities.iter().map(|(s, p)| (ids(s), *p)).collect(),
            negative: e.negative.iter().map(ids).collect(),
            parents,
        }
    }
}

fn cmd_im(a: &ImArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let sol = greedy_im(&model, a.k, &a.eval.evaluator())?;
    emit(a.out.as_deref(), &json_bytes(&sol)?)
}

#[derive(Serialize)]
struct SpreadOutput {
    seeds: NodeSet,
    mean: f64,
    se: f64,
    replicates: usize,
}

fn cmd_spread(a: &SpreadArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let mut seeds = NodeSet::new();
    for &v in &a.set {
        if !seeds.insert(v) {
            return Err(CliError::usage(format!("node {v} listed twice in --set")));
        }
    }
    let e = a.eval.evaluator().spread(&model, &seeds)?;
    let out = SpreadOutput {
        seeds,
        mean: e.mean,
        se: e.stderr,
        replicates: e.replicates,
    };
    emit(a.out.as_deref(), &json_bytes(&out)?)
}
