//! Command implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ccg_core::cfs::{run_cfs_evaluation, CfsConfig, CfsReport, TargetMethod};
use ccg_core::graph::{select_top_concepts, train_graph, ConceptGraph, GraphStats, GraphTrainConfig};
use ccg_core::io::{self, format_float, round_sig6};
use ccg_core::sae::{encode_matrix, train_sae, SaeTrainConfig};
use ccg_core::stats::{significance_row, PairedSample, SignificanceResult};
use ccg_core::synth::{self, SynthConfig};
use ccg_core::types::{ActivationMatrix, ConceptMatrix};
use ndarray::Array2;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;

/// Which summary formats a command writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
    Both,
}

impl OutputFormat {
    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(CliError::input(format!(
                "unknown format '{other}' (expected json or csv)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    let bundle = synth::generate(cfg)?;
    let mut manifest = ManifestBuilder::new(out_dir, cfg)?;
    let files = synth::write_bundle(out_dir, &bundle)?;
    manifest.stage("synth", &files)?;
    manifest.write()?;
    eprintln!(
        "wrote bundle: {} nodes, {} planted edges, {} examples -> {}",
        cfg.m,
        bundle.truth.w_star.iter().filter(|v| **v != 0.0).count(),
        cfg.n_examples,
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-sae
// ---------------------------------------------------------------------------

pub fn load_activations(path: &Path) -> Result<ActivationMatrix> {
    let data = io::read_matrix_auto(path)?;
    Ok(ActivationMatrix::new(data)?)
}

pub fn cmd_train_sae(
    input: &Path,
    cfg: &SaeTrainConfig,
    out_dir: &Path,
    emit_concepts: bool,
) -> Result<()> {
    let acts = load_activations(input)?;
    let mut manifest = ManifestBuilder::new(out_dir, cfg)?;
    let (model, log) = train_sae(&acts, cfg)?;
    std::fs::create_dir_all(out_dir)?;

    let model_path = out_dir.join("model.ccgm");
    io::write_ccgm(&model_path, &model)?;
    let log_path = out_dir.join("sae_train_log.json");
    io::write_json_atomic(&log_path, &log)?;
    let mut artifacts = vec![model_path, log_path];

    if emit_concepts {
        let codes = encode_matrix(&acts, &model)?;
        let concepts_path = out_dir.join("concepts.ccga");
        io::write_ccga(&concepts_path, codes.data())?;
        artifacts.push(concepts_path);

        // correlation matrix of the 30 most active concepts, with the
        // degenerate-column guard in place of the usual NaNs
        let q = 30.min(codes.n_concepts());
        let (_, c_top) = select_top_concepts(&codes, q)?;
        let corr = ccg_core::stats::pearson_corr_matrix(&c_top)?;
        let mut csv = (0..q)
            .map(|j| format!("c{j}"))
            .collect::<Vec<_>>()
            .join(",");
        csv.push('\n');
        for row in corr.rows() {
            let line: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
            csv.push_str(&line.join(","));
            csv.push('\n');
        }
        let corr_path = out_dir.join("concept_corr.csv");
        io::atomic_write(&corr_path, csv.as_bytes())?;
        artifacts.push(corr_path);
    }

    // separability summary of the raw activations (layer-depth ablations
    // compare this value across per-layer files)
    let (cosine, excluded) =
        ccg_core::stats::mean_pairwise_cosine_distance(&acts, 200, cfg.seed)?;
    if excluded > 0 {
        eprintln!("warning: {excluded} zero-norm activation rows excluded from cosine distance");
    }
    let stats_path = out_dir.join("activation_stats.json");
    io::write_json_atomic(
        &stats_path,
        &serde_json::json!({
            "mean_pairwise_cosine_distance": round_sig6(cosine),
            "excluded_rows": excluded,
            "sample_cap": 200
        }),
    )?;
    artifacts.push(stats_path);
    manifest.stage("train-sae", &artifacts)?;
    manifest.write()?;
    let last = log.last().expect("at least one epoch");
    eprintln!(
        "trained SAE: K={}, k={}, final mse {:.4}, l0 {:.5}",
        cfg.dict_size, cfg.k, last.mse, last.l0_rate
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-graph
// ---------------------------------------------------------------------------

/// Load a concept matrix either directly or by encoding activations through
/// a checkpoint.
pub fn load_concepts(
    concepts: Option<&Path>,
    model: Option<&Path>,
    activations: Option<&Path>,
) -> Result<ConceptMatrix> {
    match (concepts, model, activations) {
        (Some(path), _, _) => {
            let data = io::read_matrix_auto(path)?;
            Ok(ConceptMatrix::from_data(data)?)
        }
        (None, Some(model_path), Some(acts_path)) => {
            let model = io::read_ccgm(model_path)?;
            let acts = load_activations(acts_path)?;
            Ok(encode_matrix(&acts, &model)?)
        }
        _ => Err(CliError::input(
            "need either --concepts or both --model and --activations",
        )),
    }
}

pub fn cmd_train_graph(
    concepts: &ConceptMatrix,
    cfg: &GraphTrainConfig,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new(out_dir, cfg)?;
    let (graph, stats, log) = run_graph_stage(concepts, cfg)?;
    std::fs::create_dir_all(out_dir)?;

    let graph_path = out_dir.join("graph.json");
    io::write_graph_json(&graph_path, &graph, &stats)?;
    let log_path = out_dir.join("graph_train_log.csv");
    let mut csv = String::from("epoch,sem_loss,l1,dag_violation,total,lr\n");
    for r in &log {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            format_float(r.sem_loss),
            format_float(r.l1),
            format_float(r.dag_violation),
            format_float(r.total),
            format_float(r.lr)
        ));
    }
    io::atomic_write(&log_path, csv.as_bytes())?;
    let edges_path = out_dir.join("edges.csv");
    io::write_edges_csv(&edges_path, &graph)?;

    manifest.stage("train-graph", &[graph_path, log_path, edges_path])?;
    manifest.write()?;
    eprintln!(
        "trained graph: {} edges, density {:.4}, dag violation {:.3e}, sem loss {:.4}",
        stats.edge_count, stats.density, stats.dag_violation, stats.sem_loss
    );
    if cfg.lambda1 >= 0.1 && stats.edge_count < 50 {
        eprintln!(
            "warning: lambda1={} over-sparsifies the graph ({} edges)",
            cfg.lambda1, stats.edge_count
        );
    }
    Ok(())
}

/// Select the top-m concepts and fit the graph. Warns (and pads by frequency
/// order) when fewer than m concepts ever fire.
pub fn run_graph_stage(
    concepts: &ConceptMatrix,
    cfg: &GraphTrainConfig,
) -> Result<(ConceptGraph, GraphStats, Vec<ccg_core::graph::GraphEpochRecord>)> {
    let m = cfg.m.min(concepts.n_concepts());
    if m < cfg.m {
        eprintln!(
            "warning: dictionary has only {} concepts, selecting m={m} instead of {}",
            concepts.n_concepts(),
            cfg.m
        );
    }
    let active = (0..concepts.n_concepts())
        .filter(|&j| concepts.data().column(j).iter().any(|v| *v > 0.0))
        .count();
    if active < m {
        eprintln!(
            "warning: only {active} concepts ever fire; selection padded by frequency order to m={m}"
        );
    }
    let (ids, c_sub) = select_top_concepts(concepts, m)?;
    let effective = GraphTrainConfig { m, ..cfg.clone() };
    Ok(train_graph(&c_sub, &ids, &effective)?)
}

// ---------------------------------------------------------------------------
// eval-cfs
// ---------------------------------------------------------------------------

/// Restrict a full concept matrix to the graph's node columns, in node order.
pub fn slice_node_columns(concepts: &ConceptMatrix, graph: &ConceptGraph) -> Result<Array2<f64>> {
    let k_total = concepts.n_concepts();
    if let Some(&bad) = graph.node_ids.iter().find(|id| **id >= k_total) {
        return Err(CliError::input(format!(
            "graph node id {bad} is out of range for a concept matrix with {k_total} columns"
        )));
    }
    let data = concepts.data();
    let mut c_sub = Array2::zeros((concepts.n_rows(), graph.node_ids.len()));
    for (dst, &src) in graph.node_ids.iter().enumerate() {
        c_sub.column_mut(dst).assign(&data.column(src));
    }
    Ok(c_sub)
}

/// Round the report's floats to the fixed report precision.
fn rounded_report(mut report: CfsReport) -> CfsReport {
    report.cfs = round_sig6(report.cfs);
    for r in &mut report.ratios {
        *r = round_sig6(*r);
    }
    for rec in report.causal.iter_mut().chain(report.random.iter_mut()) {
        rec.delta_value = round_sig6(rec.delta_value);
    }
    report
}

pub struct CfsRunOutput {
    pub reports: Vec<CfsReport>,
    pub artifacts: Vec<PathBuf>,
}

pub fn run_cfs_stage(
    c_sub: &Array2<f64>,
    graph: &ConceptGraph,
    methods: &[TargetMethod],
    seeds: &[u64],
    base: &CfsConfig,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<CfsRunOutput> {
    std::fs::create_dir_all(out_dir)?;
    let mut reports = Vec::new();
    let mut artifacts = Vec::new();
    let mut histogram = String::from("method,seed,role,node,out_degree,delta\n");

    let mut methods_sorted = methods.to_vec();
    methods_sorted.sort();
    methods_sorted.dedup();
    for &method in &methods_sorted {
        for &seed in seeds {
            let cfg = CfsConfig {
                seed,
                ..base.clone()
            };
            let report = rounded_report(run_cfs_evaluation(c_sub, graph, method, &cfg)?);
            let path = out_dir.join(format!("cfs_{}_{}.json", method.name(), seed));
            io::write_json_atomic(&path, &report)?;
            for rec in &report.causal {
                histogram.push_str(&format!(
                    "{},{},causal,{},{},{}\n",
                    method.name(),
                    seed,
                    rec.target_node,
                    rec.downstream_set_size,
                    format_float(rec.delta_value)
                ));
            }
            for rec in &report.random {
                histogram.push_str(&format!(
                    "{},{},random,{},{},{}\n",
                    method.name(),
                    seed,
                    rec.target_node,
                    rec.downstream_set_size,
                    format_float(rec.delta_value)
                ));
            }
            artifacts.push(path);
            reports.push(report);
        }
    }

    let deltas_path = out_dir.join("deltas.csv");
    io::atomic_write(&deltas_path, histogram.as_bytes())?;
    artifacts.push(deltas_path);

    artifacts.extend(write_cfs_summary(&reports, out_dir, format)?);
    Ok(CfsRunOutput { reports, artifacts })
}

#[derive(Debug, Serialize)]
struct CfsSummaryRow {
    method: String,
    mean_cfs: f64,
    std_cfs: f64,
    seeds: usize,
}

fn summarize(reports: &[CfsReport]) -> Vec<CfsSummaryRow> {
    let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        by_method
            .entry(r.method.name().to_string())
            .or_default()
            .push(r.cfs);
    }
    by_method
        .into_iter()
        .map(|(method, values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CfsSummaryRow {
                method,
                mean_cfs: round_sig6(mean),
                std_cfs: round_sig6(std),
                seeds: values.len(),
            }
        })
        .collect()
}

fn write_cfs_summary(
    reports: &[CfsReport],
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    let rows = summarize(reports);
    let mut artifacts = Vec::new();
    if format.json() {
        let path = out_dir.join("cfs_summary.json");
        io::write_json_atomic(&path, &rows)?;
        artifacts.push(path);
    }
    if format.csv() {
        let mut csv = String::from("method,mean_cfs,std_cfs,seeds\n");
        for row in &rows {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                row.method,
                format_float(row.mean_cfs),
                format_float(row.std_cfs),
                row.seeds
            ));
        }
        let path = out_dir.join("cfs_summary.csv");
        io::atomic_write(&path, csv.as_bytes())?;
        artifacts.push(path);
    }
    Ok(artifacts)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval_cfs(
    graph_path: &Path,
    concepts: &ConceptMatrix,
    methods: &[TargetMethod],
    seeds: &[u64],
    base: &CfsConfig,
    eval_split: Option<f64>,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<()> {
    let (graph, _) = io::read_graph_json(graph_path)?;
    let mut c_sub = slice_node_columns(concepts, &graph)?;
    if let Some(split) = eval_split {
        let n = c_sub.nrows();
        let eval_rows = ((n as f64) * split).ceil() as usize;
        let start = n.saturating_sub(eval_rows.max(1));
        c_sub = c_sub.slice(ndarray::s![start.., ..]).to_owned();
        eprintln!("evaluating on the held-out last {} rows", c_sub.nrows());
    }
    let mut manifest = ManifestBuilder::new(out_dir, base)?;
    let output = run_cfs_stage(&c_sub, &graph, methods, seeds, base, out_dir, format)?;
    manifest.stage("eval-cfs", &output.artifacts)?;
    manifest.write()?;
    for row in summarize(&output.reports) {
        eprintln!(
            "{}: cfs {:.4} +- {:.4} over {} seed(s)",
            row.method, row.mean_cfs, row.std_cfs, row.seeds
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

/// Scores keyed by (dataset, seed) for one method.
type ScoreTable = BTreeMap<String, BTreeMap<(String, u64), f64>>;

fn collect_scores(report_dirs: &[PathBuf]) -> Result<ScoreTable> {
    let mut table: ScoreTable = BTreeMap::new();
    for dir in report_dirs {
        let dataset = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        let mut found = false;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            if !name.starts_with("cfs_") || !name.ends_with(".json") || name == "cfs_summary.json"
            {
                continue;
            }
            let report: CfsReport = serde_json::from_reader(std::fs::File::open(&path)?)?;
            table
                .entry(report.method.name().to_string())
                .or_default()
                .insert((dataset.clone(), report.seed), report.cfs);
            found = true;
        }
        if !found {
            return Err(CliError::input(format!(
                "{}: no cfs_*.json reports found",
                dir.display()
            )));
        }
    }
    Ok(table)
}

pub fn cmd_stats(
    report_dirs: &[PathBuf],
    reference: TargetMethod,
    replicates: usize,
    alpha: f64,
    seed: u64,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<()> {
    let table = collect_scores(report_dirs)?;
    let reference_scores = table
        .get(reference.name())
        .ok_or_else(|| CliError::input(format!("no reports for reference method {reference}")))?;
    let comparisons = table.len().saturating_sub(1);
    if comparisons == 0 {
        return Err(CliError::input(
            "need at least one non-reference method to compare",
        ));
    }

    let mut rows: Vec<SignificanceResult> = Vec::new();
    for (method, scores) in &table {
        if method == reference.name() {
            continue;
        }
        let keys: Vec<&(String, u64)> = reference_scores.keys().collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut labels = Vec::new();
        for key in keys {
            match scores.get(key) {
                Some(v) => {
                    x.push(reference_scores[key]);
                    y.push(*v);
                    labels.push(format!("{}#{}", key.0, key.1));
                }
                None => {
                    return Err(CliError::input(format!(
                        "method {method} is missing a report for dataset '{}' seed {}",
                        key.0, key.1
                    )));
                }
            }
        }
        if scores.len() != x.len() {
            return Err(CliError::input(format!(
                "method {method} has reports for pairs the reference lacks"
            )));
        }
        let sample = PairedSample::with_labels(x, y, labels).map_err(CliError::from)?;
        let comparison = format!("{} vs. {}", reference.name(), method);
        let row = match significance_row(&comparison, &sample, comparisons, replicates, alpha, seed)
        {
            Ok(mut row) => {
                row.t_stat = round_sig6(row.t_stat);
                row.p_raw = round_sig6(row.p_raw);
                row.p_corrected = round_sig6(row.p_corrected);
                row.cohens_d = round_sig6(row.cohens_d);
                row.ci.low = round_sig6(row.ci.low);
                row.ci.high = round_sig6(row.ci.high);
                row
            }
            // Identical score vectors: the test statistic is undefined, which
            // the table records as a non-significant zero row.
            Err(ccg_core::CcgError::InvalidArgument(_)) => SignificanceResult {
                comparison,
                t_stat: 0.0,
                p_raw: 1.0,
                p_corrected: 1.0,
                significant: false,
                cohens_d: 0.0,
                ci: ccg_core::stats::CiPair { low: 0.0, high: 0.0 },
                n: sample.n(),
                comparisons,
                replicates,
            },
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }

    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ManifestBuilder::new(out_dir, &(reference.name(), replicates, alpha, seed))?;
    let mut artifacts = Vec::new();
    if format.json() {
        let path = out_dir.join("stats.json");
        io::write_json_atomic(&path, &rows)?;
        artifacts.push(path);
    }
    if format.csv() {
        let mut csv = String::from(
            "comparison,t_stat,p_raw,p_corrected,significant,cohens_d,ci_low,ci_high,n,replicates\n",
        );
        for row in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.comparison,
                format_float(row.t_stat),
                format_float(row.p_raw),
                format_float(row.p_corrected),
                row.significant,
                format_float(row.cohens_d),
                format_float(row.ci.low),
                format_float(row.ci.high),
                row.n,
                row.replicates
            ));
        }
        let path = out_dir.join("stats.csv");
        io::atomic_write(&path, csv.as_bytes())?;
        artifacts.push(path);
    }
    manifest.stage("stats", &artifacts)?;
    manifest.write()?;
    for row in &rows {
        eprintln!(
            "{}: t={:.3} p_corrected={:.3e} d={:.3} ci=[{:.3}, {:.3}] {}",
            row.comparison,
            row.t_stat,
            row.p_corrected,
            row.cohens_d,
            row.ci.low,
            row.ci.high,
            if row.significant { "significant" } else { "not significant" }
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report (re-aggregation)
// ---------------------------------------------------------------------------

pub fn cmd_report(out_dir: &Path, format: OutputFormat) -> Result<()> {
    let mut reports = Vec::new();
    for entry in std::fs::read_dir(out_dir)? {
        let path = entry?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        if name.starts_with("cfs_") && name.ends_with(".json") && name != "cfs_summary.json" {
            let report: CfsReport = serde_json::from_reader(std::fs::File::open(&path)?)?;
            reports.push(report);
        }
    }
    if reports.is_empty() {
        return Err(CliError::input(format!(
            "{}: nothing to aggregate (no cfs_*.json)",
            out_dir.display()
        )));
    }
    reports.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));
    let files = write_cfs_summary(&reports, out_dir, format)?;
    for f in files {
        eprintln!("rebuilt {}", f.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum GridAxis {
    K(Vec<usize>),
    Lambda1(Vec<f64>),
    Lambda2(Vec<f64>),
    Beta(Vec<f64>),
    Method(Vec<TargetMethod>),
}

pub fn parse_grid_axis(spec: &str) -> Result<GridAxis> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::input(format!("grid spec '{spec}' must look like name=v1,v2")))?;
    let parts: Vec<&str> = values.split(',').filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        return Err(CliError::input(format!("grid spec '{spec}' has no values")));
    }
    let parse_f64 = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| CliError::input(format!("bad numeric value '{s}' in grid spec")))
    };
    match name.trim() {
        "k" => Ok(GridAxis::K(
            parts
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::input(format!("bad k value '{s}'")))
                })
                .collect::<Result<_>>()?,
        )),
        "lambda1" => Ok(GridAxis::Lambda1(
            parts.iter().map(|s| parse_f64(s)).collect::<Result<_>>()?,
        )),
        "lambda2" => Ok(GridAxis::Lambda2(
            parts.iter().map(|s| parse_f64(s)).collect::<Result<_>>()?,
        )),
        "beta" => Ok(GridAxis::Beta(
            parts.iter().map(|s| parse_f64(s)).collect::<Result<_>>()?,
        )),
        "method" => Ok(GridAxis::Method(
            parts
                .iter()
                .map(|s| s.trim().parse::<TargetMethod>().map_err(CliError::from))
                .collect::<Result<_>>()?,
        )),
        other => Err(CliError::input(format!(
            "unknown grid axis '{other}' (expected k, lambda1, lambda2, beta or method)"
        ))),
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub method: TargetMethod,
}

impl SweepCell {
    pub fn id(&self) -> String {
        format!(
            "k{}_l1-{}_l2-{}_beta-{}_{}",
            self.k,
            format_float(self.lambda1),
            format_float(self.lambda2),
            format_float(self.beta),
            self.method.name()
        )
    }
}

pub fn expand_grid(axes: &[GridAxis], base: &ExperimentConfig) -> Vec<SweepCell> {
    let mut cells = vec![SweepCell {
        k: base.sae.k,
        lambda1: base.graph.lambda1,
        lambda2: base.graph.lambda2,
        beta: base.sae.beta,
        method: TargetMethod::Graph,
    }];
    for axis in axes {
        let mut next = Vec::new();
        for cell in &cells {
            match axis {
                GridAxis::K(values) => {
                    for &k in values {
                        next.push(SweepCell { k, ..cell.clone() });
                    }
                }
                GridAxis::Lambda1(values) => {
                    for &lambda1 in values {
                        next.push(SweepCell {
                            lambda1,
                            ..cell.clone()
                        });
                    }
                }
                GridAxis::Lambda2(values) => {
                    for &lambda2 in values {
                        next.push(SweepCell {
                            lambda2,
                            ..cell.clone()
                        });
                    }
                }
                GridAxis::Beta(values) => {
                    for &beta in values {
                        next.push(SweepCell {
                            beta,
                            ..cell.clone()
                        });
                    }
                }
                GridAxis::Method(values) => {
                    for &method in values {
                        next.push(SweepCell {
                            method,
                            ..cell.clone()
                        });
                    }
                }
            }
        }
        cells = next;
    }
    cells
}

#[derive(Debug, Serialize)]
struct CellResult {
    cell: SweepCell,
    status: String,
    mean_cfs: f64,
    std_cfs: f64,
    mean_density: f64,
    mean_dag_violation: f64,
    seeds: usize,
    error: Option<String>,
}

/// Run the pipeline for one cell over all seeds.
fn run_cell(
    cell: &SweepCell,
    config: &ExperimentConfig,
    acts: &ActivationMatrix,
    planted: Option<&ConceptMatrix>,
    cell_dir: &Path,
    format: OutputFormat,
) -> Result<(f64, f64, f64, f64, usize)> {
    std::fs::create_dir_all(cell_dir)?;
    let mut cfs_values = Vec::new();
    let mut densities = Vec::new();
    let mut violations = Vec::new();
    let mut reports = Vec::new();
    for &seed in &config.seeds {
        let concepts = match planted {
            Some(c) => c.clone(),
            None => {
                let sae_cfg = SaeTrainConfig {
                    k: cell.k,
                    beta: cell.beta,
                    seed,
                    ..config.sae.clone()
                };
                let (model, _) = train_sae(acts, &sae_cfg)?;
                encode_matrix(acts, &model)?
            }
        };
        let graph_cfg = GraphTrainConfig {
            lambda1: cell.lambda1,
            lambda2: cell.lambda2,
            seed,
            ..config.graph.clone()
        };
        let (graph, stats, _) = run_graph_stage(&concepts, &graph_cfg)?;
        densities.push(stats.density);
        violations.push(stats.dag_violation);

        let mut c_sub = slice_node_columns(&concepts, &graph)?;
        if let Some(split) = config.eval_split {
            let n = c_sub.nrows();
            let eval_rows = ((n as f64) * split).ceil() as usize;
            let start = n.saturating_sub(eval_rows.max(1));
            c_sub = c_sub.slice(ndarray::s![start.., ..]).to_owned();
        }
        let cfs_cfg = CfsConfig {
            seed,
            ..config.cfs.clone()
        };
        let report = rounded_report(run_cfs_evaluation(&c_sub, &graph, cell.method, &cfs_cfg)?);
        let path = cell_dir.join(format!("cfs_{}_{}.json", cell.method.name(), seed));
        io::write_json_atomic(&path, &report)?;
        cfs_values.push(report.cfs);
        reports.push(report);
    }
    write_cfs_summary(&reports, cell_dir, format)?;
    let n = cfs_values.len() as f64;
    let mean = cfs_values.iter().sum::<f64>() / n;
    let std = if cfs_values.len() > 1 {
        (cfs_values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((
        mean,
        std,
        densities.iter().sum::<f64>() / n,
        violations.iter().sum::<f64>() / n,
        cfs_values.len(),
    ))
}

pub fn cmd_sweep(
    config: &ExperimentConfig,
    axes: &[GridAxis],
    out_dir: &Path,
    threads: usize,
    format: OutputFormat,
) -> Result<()> {
    if axes.is_empty() {
        return Err(CliError::input("sweep needs at least one --grid axis"));
    }
    config.require_source()?;
    if config.datasets.len() > 1 {
        return Err(CliError::input(
            "sweep currently runs on a single data source",
        ));
    }

    // Shared data source across every cell.
    let (acts, planted) = match (&config.synth, config.datasets.first()) {
        (Some(synth_cfg), None) => {
            let bundle = synth::generate(synth_cfg)?;
            let planted = if config.use_planted_concepts {
                Some(ConceptMatrix::from_data(bundle.truth.c_star.clone())?)
            } else {
                None
            };
            (bundle.activations, planted)
        }
        (None, Some(dataset)) => (load_activations(&dataset.path)?, None),
        (Some(_), Some(dataset)) => (load_activations(&dataset.path)?, None),
        (None, None) => unreachable!("require_source checked above"),
    };

    let cells = expand_grid(axes, config);
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ManifestBuilder::new(out_dir, &(config, axes.len()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::input(e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|cell| {
                let cell_dir = out_dir.join("cells").join(cell.id());
                match run_cell(cell, config, &acts, planted.as_ref(), &cell_dir, format) {
                    Ok((mean, std, density, violation, seeds)) => CellResult {
                        cell: cell.clone(),
                        status: "ok".to_string(),
                        mean_cfs: round_sig6(mean),
                        std_cfs: round_sig6(std),
                        mean_density: round_sig6(density),
                        mean_dag_violation: round_sig6(violation),
                        seeds,
                        error: None,
                    },
                    Err(e) => CellResult {
                        cell: cell.clone(),
                        status: "failed".to_string(),
                        mean_cfs: f64::NAN,
                        std_cfs: f64::NAN,
                        mean_density: f64::NAN,
                        mean_dag_violation: f64::NAN,
                        seeds: 0,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    let mut csv = String::from(
        "k,lambda1,lambda2,beta,method,status,mean_cfs,std_cfs,mean_density,mean_dag_violation,seeds\n",
    );
    for r in &results {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.cell.k,
            format_float(r.cell.lambda1),
            format_float(r.cell.lambda2),
            format_float(r.cell.beta),
            r.cell.method.name(),
            r.status,
            format_float(r.mean_cfs),
            format_float(r.std_cfs),
            format_float(r.mean_density),
            format_float(r.mean_dag_violation),
            r.seeds
        ));
    }
    let mut artifacts = Vec::new();
    if format.csv() {
        let path = out_dir.join("aggregate.csv");
        io::atomic_write(&path, csv.as_bytes())?;
        artifacts.push(path);
    }
    if format.json() {
        let path = out_dir.join("aggregate.json");
        io::write_json_atomic(&path, &results)?;
        artifacts.push(path);
    }
    manifest.stage("sweep", &artifacts)?;
    manifest.write()?;

    let failed = results.iter().filter(|r| r.status == "failed").count();
    for r in &results {
        match &r.error {
            None => eprintln!("cell {}: cfs {:.4} +- {:.4}", r.cell.id(), r.mean_cfs, r.std_cfs),
            Some(e) => eprintln!("cell {}: FAILED ({e})", r.cell.id()),
        }
    }
    if failed > 0 {
        return Err(CliError::PartialSweep {
            failed,
            total: results.len(),
        });
    }
    Ok(())
}
