//! Benchmark presets and the experiments they drive.
//!
//! A preset bundles a synthetic workload, queries, mock-oracle settings, the
//! cost model and one experiment. Every experiment produces rows written as
//! CSV plus a JSON summary whose aggregates recompute from those rows.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use semplan_core::cost::{OptimizerConfig, SelectivityModel, Statistics};
use semplan_core::dp;
use semplan_core::optimize::{Optimized, Strategy};
use semplan_core::placement::{apply_placement, PlacementContext, Skeleton};
use semplan_core::rewrite::simplify_to_fixed_point;
use semplan_core::{NodeId, NodeKind, PlanTree};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::compare::accuracy;
use crate::exec::{ExecOptions, ExecutionMetrics};
use crate::oracle::MockOracle;
use crate::pipeline::{Pipeline, PipelineError, QueryRun, StatsMode};
use crate::workload::{WorkloadError, WorkloadSpec};

pub const PRESETS: [&str; 5] = ["fig1", "chain5", "alpha-sweep", "sel-grid", "overhead"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub workload: WorkloadSpec,
    pub queries: Vec<QuerySpec>,
    #[serde(default)]
    pub oracle: MockSettings,
    #[serde(default)]
    pub model: SelectivityModel,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub statistics: StatsMode,
    /// Optimizer selectivity hints keyed by bound predicate template.
    #[serde(default)]
    pub hints: BTreeMap<String, f64>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuerySpec {
    pub name: String,
    pub sql: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub seed: u64,
    pub selectivity: f64,
    pub per_template: BTreeMap<String, f64>,
    pub latency_ms: f64,
}

impl Default for MockSettings {
    fn default() -> Self {
        MockSettings {
            seed: 42,
            selectivity: 0.2,
            per_template: BTreeMap::new(),
            latency_ms: 0.0,
        }
    }
}

impl MockSettings {
    pub fn build(&self) -> MockOracle {
        let mut m = MockOracle::new(self.seed, self.selectivity)
            .with_latency(Duration::from_secs_f64(self.latency_ms.max(0.0) / 1e3));
        m.per_template = self.per_template.clone();
        m
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    /// Every query under every strategy; ratios against `baseline`
    /// (the first strategy when omitted).
    Compare {
        strategies: Vec<Strategy>,
        #[serde(default)]
        baseline: Option<Strategy>,
    },
    /// Cost-based placement of the first query across `alphas`.
    AlphaSweep { alphas: Vec<f64> },
    /// Cost-based placement of the first query across assumed filter and
    /// join selectivities. The oracle itself is unchanged.
    SelectivityGrid { filter: Vec<f64>, join: Vec<f64> },
    /// Optimizer time against execution time for every query.
    Overhead,
}

#[derive(Clone, Debug, Default)]
pub struct BenchOptions {
    /// Replaces the preset's mock latency.
    pub latency_ms: Option<f64>,
    pub parallel: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("unknown preset `{0}` (expected one of fig1, chain5, alpha-sweep, sel-grid, overhead or a JSON file)")]
    UnknownPreset(String),
    #[error("invalid preset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("query `{query}`: {source}")]
    Query {
        query: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Preset {
    /// A preset shipped with the crate.
    pub fn builtin(name: &str) -> Result<Preset, BenchError> {
        let text = match name {
            "fig1" => include_str!("../presets/fig1.json"),
            "chain5" => include_str!("../presets/chain5.json"),
            "alpha-sweep" => include_str!("../presets/alpha-sweep.json"),
            "sel-grid" => include_str!("../presets/sel-grid.json"),
            "overhead" => include_str!("../presets/overhead.json"),
            other => return Err(BenchError::UnknownPreset(other.to_string())),
        };
        Ok(serde_json::from_str(text)?)
    }

    /// A builtin name or a path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Preset, BenchError> {
        if PRESETS.contains(&name_or_path) {
            return Preset::builtin(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?);
        }
        Err(BenchError::UnknownPreset(name_or_path.to_string()))
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.queries.is_empty() {
            return Err(BenchError::Invalid("no queries".into()));
        }
        let bad_grid = |g: &[f64]| g.is_empty() || g.iter().any(|x| !(*x > 0.0 && *x <= 1.0));
        match &self.experiment {
            Experiment::Compare { strategies, .. } if strategies.is_empty() => {
                Err(BenchError::Invalid("no strategies".into()))
            }
            Experiment::AlphaSweep { alphas }
                if alphas.is_empty() || alphas.iter().any(|a| a.is_nan() || *a <= 0.0) =>
            {
                Err(BenchError::Invalid("alpha grid must be non-empty and positive".into()))
            }
            Experiment::SelectivityGrid { filter, join } if bad_grid(filter) || bad_grid(join) => Err(
                BenchError::Invalid("selectivity grids must be non-empty within (0, 1]".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Rows of one experiment.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum BenchReport {
    Compare(CompareReport),
    Alpha(AlphaReport),
    Grid(GridReport),
    Overhead(OverheadReport),
}

pub fn run_preset(preset: &Preset, opts: &BenchOptions) -> Result<BenchReport, BenchError> {
    preset.validate()?;
    let data = preset.workload.generate()?;
    let mut settings = preset.oracle.clone();
    if let Some(ms) = opts.latency_ms {
        settings.latency_ms = ms;
    }
    let oracle = settings.build();
    let mut pipeline = Pipeline::new(&data, &oracle);
    pipeline.model = preset.model.clone();
    pipeline.config = preset.optimizer.clone();
    pipeline.stats_mode = preset.statistics;
    pipeline.template_selectivity = preset.hints.clone();
    pipeline.exec = ExecOptions {
        parallel: opts.parallel,
        ..ExecOptions::default()
    };
    let first = &preset.queries[0];
    Ok(match &preset.experiment {
        Experiment::Compare { strategies, baseline } => BenchReport::Compare(compare(
            &pipeline,
            &preset.queries,
            strategies,
            baseline.unwrap_or(strategies[0]),
        )?),
        Experiment::AlphaSweep { alphas } => BenchReport::Alpha(sweep_alpha(&pipeline, first, alphas)?),
        Experiment::SelectivityGrid { filter, join } => {
            BenchReport::Grid(sweep_selectivity(&pipeline, first, filter, join)?)
        }
        Experiment::Overhead => BenchReport::Overhead(measure_overhead(&pipeline, &preset.queries)?),
    })
}

fn query_err(q: &QuerySpec) -> impl Fn(PipelineError) -> BenchError + '_ {
    move |source| BenchError::Query {
        query: q.name.clone(),
        source,
    }
}

fn parse_and_stats(p: &Pipeline<'_>, q: &QuerySpec) -> Result<(PlanTree, Statistics), BenchError> {
    let tree = p.parse(&q.sql).map_err(|e| query_err(q)(e.into()))?;
    let stats = p.statistics(&tree).map_err(query_err(q))?;
    Ok((tree, stats))
}

/// Rows read by relational operators during execution.
pub fn relational_rows(tree: &PlanTree, metrics: &ExecutionMetrics) -> u64 {
    metrics
        .rows_per_node
        .iter()
        .filter(|(id, _)| {
            tree.node(**id)
                .map(|n| !matches!(n.kind, NodeKind::SemFilter { .. } | NodeKind::SemProject { .. }))
                .unwrap_or(false)
        })
        .map(|(_, r)| *r)
        .sum()
}

/// First non-filter node below `id`.
fn anchor_of(tree: &PlanTree, mut id: NodeId) -> NodeId {
    loop {
        let n = tree.node(id).expect("node exists");
        match n.kind {
            NodeKind::SemFilter { .. } => id = n.children[0],
            _ => return id,
        }
    }
}

/// Where each semantic filter sits and in which order, as text. Two trees
/// derived from the same simplified plan share a signature exactly when
/// they place every filter identically.
pub fn placement_signature(tree: &PlanTree) -> String {
    let mut parts: Vec<String> = tree
        .semantic_filters()
        .into_iter()
        .map(|f| {
            let child = tree.node(f).map(|n| n.children[0]).unwrap_or(f);
            format!("{f}>{child}")
        })
        .collect();
    parts.sort();
    parts.join(" ")
}

/// Number of filters that sit above a different operator in `placed` than
/// in `reference`.
pub fn filters_moved(reference: &PlanTree, placed: &PlanTree) -> usize {
    reference
        .semantic_filters()
        .into_iter()
        .filter(|&f| {
            let Ok(n) = reference.node(f) else { return false };
            let before = anchor_of(reference, n.children[0]);
            match placed.node(f) {
                Ok(m) => anchor_of(placed, m.children[0]) != before,
                Err(_) => false,
            }
        })
        .count()
}

pub fn regime(moved: usize, filters: usize) -> &'static str {
    if moved == 0 {
        "down"
    } else if moved == filters {
        "up"
    } else {
        "split"
    }
}

pub fn geometric_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 1.0;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl BenchReport {
    pub fn summary(&self) -> serde_json::Value {
        match self {
            BenchReport::Compare(r) => r.summary(),
            BenchReport::Alpha(r) => r.summary(),
            BenchReport::Grid(r) => r.summary(),
            BenchReport::Overhead(r) => r.summary(),
        }
    }

    /// Writes `<name>.csv` and `<name>.summary.json` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{name}.csv"));
        match self {
            BenchReport::Compare(r) => write_rows(&csv_path, &r.rows)?,
            BenchReport::Alpha(r) => write_rows(&csv_path, &r.rows)?,
            BenchReport::Grid(r) => write_rows(&csv_path, &r.rows)?,
            BenchReport::Overhead(r) => write_rows(&csv_path, &r.rows)?,
        }
        let mut text = serde_json::to_string_pretty(&self.summary())?;
        text.push('\n');
        std::fs::write(dir.join(format!("{name}.summary.json")), text)?;
        Ok(())
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

// ---------------------------------------------------------------------------
// Strategy comparison

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CompareRow {
    pub query: String,
    pub strategy: Strategy,
    pub llm_calls: u64,
    pub cache_hits: u64,
    pub rel_rows: u64,
    pub est_llm: Option<f64>,
    pub est_rel: Option<f64>,
    pub est_total: Option<f64>,
    /// Calls of the baseline divided by calls of this row, both floored at 1.
    pub cost_reduction: f64,
    pub f1: f64,
    pub plan: String,
    pub optimize_ms: f64,
    pub exec_ms: f64,
    pub total_ms: f64,
    /// Baseline end-to-end time divided by this row's.
    pub speedup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub baseline: Strategy,
    pub rows: Vec<CompareRow>,
}

pub fn compare(
    p: &Pipeline<'_>,
    queries: &[QuerySpec],
    strategies: &[Strategy],
    baseline: Strategy,
) -> Result<CompareReport, BenchError> {
    let mut order = vec![baseline];
    order.extend(strategies.iter().copied().filter(|s| *s != baseline));
    let mut rows = Vec::new();
    for q in queries {
        let (tree, stats) = parse_and_stats(p, q)?;
        let runs: Vec<QueryRun> = order
            .iter()
            .map(|&s| p.run(&tree, s, &stats))
            .collect::<Result<_, _>>()
            .map_err(query_err(q))?;
        let base = &runs[0];
        let base_ms = base.optimize_ms + base.execution.metrics.timing.wall_ms;
        for run in &runs {
            if !strategies.contains(&run.optimized.strategy) {
                continue;
            }
            let m = &run.execution.metrics;
            let est = run.optimized.placement.as_ref().map(|pl| pl.estimate);
            let total_ms = run.optimize_ms + m.timing.wall_ms;
            rows.push(CompareRow {
                query: q.name.clone(),
                strategy: run.optimized.strategy,
                llm_calls: m.llm_calls,
                cache_hits: m.cache_hits,
                rel_rows: relational_rows(&run.optimized.tree, m),
                est_llm: est.map(|e| e.llm_rows),
                est_rel: est.map(|e| e.rel_rows),
                est_total: est.map(|e| e.total),
                cost_reduction: base.execution.metrics.llm_calls.max(1) as f64 / m.llm_calls.max(1) as f64,
                f1: accuracy(&base.execution.relation, &run.execution.relation).f1,
                plan: placement_signature(&run.optimized.tree),
                optimize_ms: run.optimize_ms,
                exec_ms: m.timing.wall_ms,
                total_ms,
                speedup: if total_ms > 0.0 { base_ms / total_ms } else { 1.0 },
            });
        }
    }
    Ok(CompareReport { baseline, rows })
}

impl CompareReport {
    pub fn rows_for(&self, s: Strategy) -> impl Iterator<Item = &CompareRow> {
        self.rows.iter().filter(move |r| r.strategy == s)
    }

    pub fn summary(&self) -> serde_json::Value {
        let mut per = serde_json::Map::new();
        let mut seen: Vec<Strategy> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.strategy) {
                seen.push(r.strategy);
            }
        }
        for s in seen {
            let rows: Vec<&CompareRow> = self.rows_for(s).collect();
            let n = rows.len() as f64;
            per.insert(
                s.name().to_string(),
                json!({
                    "queries": rows.len(),
                    "llm_calls": rows.iter().map(|r| r.llm_calls).sum::<u64>(),
                    "geomean_cost_reduction": geometric_mean(&rows.iter().map(|r| r.cost_reduction).collect::<Vec<_>>()),
                    "mean_f1": rows.iter().map(|r| r.f1).sum::<f64>() / n,
                    "timing": {
                        "geomean_speedup": geometric_mean(&rows.iter().map(|r| r.speedup).collect::<Vec<_>>()),
                        "total_ms": rows.iter().map(|r| r.total_ms).sum::<f64>(),
                    },
                }),
            );
        }
        json!({ "experiment": "compare", "baseline": self.baseline.name(), "strategies": per })
    }
}

// ---------------------------------------------------------------------------
// Alpha sweep

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AlphaRow {
    pub alpha: f64,
    pub plan: String,
    pub moved: usize,
    pub regime: String,
    pub est_llm: f64,
    pub est_rel: f64,
    pub est_total: f64,
    pub llm_calls: u64,
    pub rel_rows: u64,
    pub exec_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AlphaReport {
    pub query: String,
    pub filters: usize,
    pub rows: Vec<AlphaRow>,
}

fn cost_model_run(
    p: &Pipeline<'_>,
    q: &QuerySpec,
    tree: &PlanTree,
    stats: &Statistics,
) -> Result<(Optimized, QueryRun), BenchError> {
    let run = p.run(tree, Strategy::CostModel, stats).map_err(query_err(q))?;
    if run.optimized.placement.is_none() {
        return Err(BenchError::Invalid(format!(
            "query `{}` has too many filters for cost-based placement",
            q.name
        )));
    }
    Ok((run.optimized.clone(), run))
}

pub fn sweep_alpha(p: &Pipeline<'_>, q: &QuerySpec, alphas: &[f64]) -> Result<AlphaReport, BenchError> {
    let (tree, stats) = parse_and_stats(p, q)?;
    let simple = simplify_to_fixed_point(&tree)
        .map_err(|e| query_err(q)(PipelineError::Optimize(e.into())))?
        .0;
    let filters = simple.semantic_filters().len();
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for alpha in sorted {
        let sweep = Pipeline {
            config: OptimizerConfig {
                alpha,
                ..p.config.clone()
            },
            model: p.model.clone(),
            template_selectivity: p.template_selectivity.clone(),
            ..*p
        };
        let (opt, run) = cost_model_run(&sweep, q, &tree, &stats)?;
        let est = opt.placement.as_ref().map(|pl| pl.estimate).unwrap_or_default();
        let moved = filters_moved(&simple, &opt.tree);
        let m = &run.execution.metrics;
        rows.push(AlphaRow {
            alpha,
            plan: placement_signature(&opt.tree),
            moved,
            regime: regime(moved, filters).to_string(),
            est_llm: est.llm_rows,
            est_rel: est.rel_rows,
            est_total: est.total,
            llm_calls: m.llm_calls,
            rel_rows: relational_rows(&opt.tree, m),
            exec_ms: m.timing.wall_ms,
        });
    }
    Ok(AlphaReport {
        query: q.name.clone(),
        filters,
        rows,
    })
}

impl AlphaReport {
    /// Alphas at which the chosen plan changes.
    pub fn boundaries(&self) -> Vec<(f64, f64)> {
        self.rows
            .windows(2)
            .filter(|w| w[0].plan != w[1].plan)
            .map(|w| (w[0].alpha, w[1].alpha))
            .collect()
    }

    pub fn summary(&self) -> serde_json::Value {
        let mut regimes: Vec<&str> = Vec::new();
        for r in &self.rows {
            if regimes.last() != Some(&r.regime.as_str()) {
                regimes.push(&r.regime);
            }
        }
        let monotone = self
            .rows
            .windows(2)
            .all(|w| w[0].est_llm <= w[1].est_llm && w[0].est_rel >= w[1].est_rel && w[0].llm_calls <= w[1].llm_calls);
        json!({
            "experiment": "alpha_sweep",
            "query": self.query,
            "filters": self.filters,
            "points": self.rows.len(),
            "regimes": regimes,
            "boundaries": self.boundaries().iter().map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
            "monotone": monotone,
        })
    }
}

// ---------------------------------------------------------------------------
// Selectivity grid

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridRow {
    pub filter_selectivity: f64,
    pub join_selectivity: f64,
    pub plan: String,
    pub moved: usize,
    pub est_total: f64,
    pub llm_calls: u64,
    pub rel_rows: u64,
    pub exec_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridReport {
    pub query: String,
    pub rows: Vec<GridRow>,
}

pub fn sweep_selectivity(
    p: &Pipeline<'_>,
    q: &QuerySpec,
    filter: &[f64],
    join: &[f64],
) -> Result<GridReport, BenchError> {
    let (tree, stats) = parse_and_stats(p, q)?;
    let simple = simplify_to_fixed_point(&tree)
        .map_err(|e| query_err(q)(PipelineError::Optimize(e.into())))?
        .0;
    let mut rows = Vec::new();
    for &sf in filter {
        for &sj in join {
            let cell = Pipeline {
                model: SelectivityModel {
                    default_sf_selectivity: sf,
                    join_distinct_selectivity: sj,
                    ..p.model.clone()
                },
                config: p.config.clone(),
                template_selectivity: BTreeMap::new(),
                ..*p
            };
            let (opt, run) = cost_model_run(&cell, q, &tree, &stats)?;
            let m = &run.execution.metrics;
            rows.push(GridRow {
                filter_selectivity: sf,
                join_selectivity: sj,
                plan: placement_signature(&opt.tree),
                moved: filters_moved(&simple, &opt.tree),
                est_total: opt.placement.map(|pl| pl.estimate.total).unwrap_or_default(),
                llm_calls: m.llm_calls,
                rel_rows: relational_rows(&opt.tree, m),
                exec_ms: m.timing.wall_ms,
            });
        }
    }
    Ok(GridReport {
        query: q.name.clone(),
        rows,
    })
}

impl GridReport {
    pub fn distinct_plans(&self) -> Vec<String> {
        let mut plans: Vec<String> = self.rows.iter().map(|r| r.plan.clone()).collect();
        plans.sort();
        plans.dedup();
        plans
    }

    /// True when two cells with the same filter selectivity and different
    /// join selectivities choose different plans.
    pub fn has_join_boundary(&self) -> bool {
        self.rows.iter().any(|a| {
            self.rows
                .iter()
                .any(|b| a.filter_selectivity == b.filter_selectivity && a.plan != b.plan)
        })
    }

    /// True when cells sharing a plan share executed call counts.
    pub fn consistent(&self) -> bool {
        let mut calls: BTreeMap<&str, u64> = BTreeMap::new();
        self.rows
            .iter()
            .all(|r| *calls.entry(&r.plan).or_insert(r.llm_calls) == r.llm_calls)
    }

    pub fn summary(&self) -> serde_json::Value {
        json!({
            "experiment": "selectivity_grid",
            "query": self.query,
            "cells": self.rows.len(),
            "distinct_plans": self.distinct_plans(),
            "join_boundary": self.has_join_boundary(),
            "consistent": self.consistent(),
        })
    }
}

// ---------------------------------------------------------------------------
// Optimizer overhead

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OverheadRow {
    pub query: String,
    pub filters: usize,
    pub nodes: usize,
    pub simplify_ms: f64,
    pub placement_ms: f64,
    pub exec_ms: f64,
    pub llm_calls: u64,
    /// Optimizer time as a fraction of optimizer plus execution time.
    pub share: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OverheadReport {
    pub rows: Vec<OverheadRow>,
}

pub fn measure_overhead(p: &Pipeline<'_>, queries: &[QuerySpec]) -> Result<OverheadReport, BenchError> {
    let mut rows = Vec::new();
    for q in queries {
        let (tree, stats) = parse_and_stats(p, q)?;
        let err = query_err(q);
        let start = Instant::now();
        let (simple, _) = simplify_to_fixed_point(&tree).map_err(|e| err(PipelineError::Optimize(e.into())))?;
        let simplify_ms = ms(start.elapsed());

        let model = p.model_for(&simple);
        let start = Instant::now();
        let placed = PlacementContext::new(&simple, &model, &stats, &p.config)
            .and_then(|ctx| {
                let result = dp::place(&ctx)?;
                apply_placement(&simple, &ctx, &result.placement)
            })
            .map_err(|e| err(PipelineError::Optimize(e.into())))?;
        let placement_ms = ms(start.elapsed());

        let execution = p.execute(&placed).map_err(|e| err(e.into()))?;
        let exec_ms = execution.metrics.timing.wall_ms;
        let optimizer = simplify_ms + placement_ms;
        rows.push(OverheadRow {
            query: q.name.clone(),
            filters: simple.semantic_filters().len(),
            nodes: Skeleton::new(&simple).len(),
            simplify_ms,
            placement_ms,
            exec_ms,
            llm_calls: execution.metrics.llm_calls,
            share: if optimizer + exec_ms > 0.0 {
                optimizer / (optimizer + exec_ms)
            } else {
                0.0
            },
        });
    }
    Ok(OverheadReport { rows })
}

impl OverheadReport {
    pub fn summary(&self) -> serde_json::Value {
        let mut by_n: BTreeMap<usize, Vec<&OverheadRow>> = BTreeMap::new();
        for r in &self.rows {
            by_n.entry(r.filters).or_default().push(r);
        }
        let groups: Vec<serde_json::Value> = by_n
            .iter()
            .map(|(n, rows)| {
                let k = rows.len() as f64;
                json!({
                    "filters": n,
                    "queries": rows.len(),
                    "max_nodes": rows.iter().map(|r| r.nodes).max(),
                    "timing": {
                        "mean_simplify_ms": rows.iter().map(|r| r.simplify_ms).sum::<f64>() / k,
                        "mean_placement_ms": rows.iter().map(|r| r.placement_ms).sum::<f64>() / k,
                        "max_placement_ms": rows.iter().map(|r| r.placement_ms).fold(0.0, f64::max),
                        "mean_share": rows.iter().map(|r| r.share).sum::<f64>() / k,
                    },
                })
            })
            .collect();
        json!({ "experiment": "overhead", "groups": groups })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_mean_of_ratios() {
        assert!((geometric_mean(&[2.0, 8.0]) - 4.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[]), 1.0);
    }

    #[test]
    fn builtin_presets_parse() {
        for name in PRESETS {
            let p = Preset::builtin(name).unwrap();
            p.validate().unwrap();
            p.workload.validate().unwrap();
        }
        assert!(matches!(Preset::resolve("nope"), Err(BenchError::UnknownPreset(_))));
    }

    #[test]
    fn regimes_are_named_by_moved_filters() {
        assert_eq!(regime(0, 2), "down");
        assert_eq!(regime(1, 2), "split");
        assert_eq!(regime(2, 2), "up");
    }
}
