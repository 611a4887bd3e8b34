//! The `semplan` command line.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 SQL syntax error, 3 bind
//! or invalid plan, 4 optimizer error, 5 execution error.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use semplan_core::cost::{Estimator, Statistics};
use semplan_core::explain::explain;
use semplan_core::ir::Catalog;
use semplan_core::optimize::{OptimizeError, Optimized, Strategy};
use semplan_core::sql::{render_sql, ErrorKind, ParseError};
use semplan_core::{validate, PlanTree};
use serde_json::json;

use crate::bench::{self, BenchOptions, Preset};
use crate::compare::{accuracy, same_multiset};
use crate::config::{FileConfig, Flags, RunConfig};
use crate::data::Dataset;
use crate::exec::{output_names, ExecError, ExecOptions};
use crate::oracle::{OracleSpec, SemanticOracle};
use crate::pipeline::{Pipeline, PipelineError, StatsMode};
use crate::workload::WorkloadSpec;

#[derive(Debug, Parser)]
#[command(
    name = "semplan",
    version,
    about = "Plan and run SQL queries with LLM-evaluated predicates"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Weight of relational rows against LLM calls.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Oracle description, e.g. `mock:seed=42,sel=0.2,latency_ms=10`,
    /// `recorded:path=answers.json` or `remote:timeout_ms=30000`.
    #[arg(long, global = true)]
    pub oracle: Option<String>,
    /// Seed of the mock oracle.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset: a directory of CSV files with schema sidecars, a workload
    /// JSON file, `preset:<name>` or `corpus`.
    #[arg(long, global = true)]
    pub data: Option<String>,
    /// Catalog JSON (table name to schema), used when no data is given.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Statistics JSON overriding anything measured.
    #[arg(long, global = true)]
    pub stats: Option<PathBuf>,
    /// How statistics are gathered from data: `exact` or `tables`.
    #[arg(long, global = true, value_parser = parse_stats_mode)]
    pub statistics: Option<StatsMode>,
    /// Output file (or directory for run, bench and generate).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Evaluate semantic operators in parallel.
    #[arg(long, global = true)]
    pub parallel: bool,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Args)]
pub struct Input {
    /// SQL text, or a path to a file holding it.
    #[arg(long, conflicts_with = "plan")]
    pub sql: Option<String>,
    /// Plan JSON as printed by `parse`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and bind a query; print the plan.
    Parse(Input),
    /// Optimize a query and print the plan with its trace.
    Optimize {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "cost_model", value_parser = parse_strategy)]
        strategy: Strategy,
    },
    /// Optimize a query and print the plan as an indented tree.
    Explain {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "cost_model", value_parser = parse_strategy)]
        strategy: Strategy,
    },
    /// Optimize and execute a query.
    Run {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "cost_model", value_parser = parse_strategy)]
        strategy: Strategy,
    },
    /// Execute a query under several strategies and compare the results.
    Compare {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_delimiter = ',', default_value = "none,pullup,cost_model", value_parser = parse_strategy)]
        strategies: Vec<Strategy>,
    },
    /// Run a benchmark preset and write CSV plus a JSON summary.
    Bench {
        /// fig1, chain5, alpha-sweep, sel-grid, overhead or a preset file.
        #[arg(long)]
        preset: String,
        /// Replace the preset's per-call oracle latency.
        #[arg(long)]
        latency_ms: Option<f64>,
    },
    /// Write a synthetic dataset to a directory.
    Generate {
        /// Workload JSON file, `preset:<name>` or `corpus`.
        #[arg(long)]
        workload: String,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_stats_mode(s: &str) -> Result<StatsMode, String> {
    match s {
        "exact" => Ok(StatsMode::Exact),
        "tables" => Ok(StatsMode::Tables),
        other => Err(format!("unknown statistics mode `{other}` (expected exact or tables)")),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(ParseError),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("optimizer: {0}")]
    Optimize(String),
    #[error("execution: {0}")]
    Execute(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Parse(e) if e.kind == ErrorKind::Syntax => 2,
            CliError::Parse(_) | CliError::Plan(_) => 3,
            CliError::Optimize(_) => 4,
            CliError::Execute(_) => 5,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Parse(p) => CliError::Parse(p),
            PipelineError::Optimize(o) => optimize_error(o),
            PipelineError::Exec(x) => CliError::Execute(x.to_string()),
        }
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        CliError::Execute(e.to_string())
    }
}

fn optimize_error(e: OptimizeError) -> CliError {
    match e {
        OptimizeError::Invalid(v) => CliError::Plan(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")),
        other => CliError::Optimize(other.to_string()),
    }
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Context {
    config: RunConfig,
    data: Option<Dataset>,
    oracle: Box<dyn SemanticOracle>,
}

impl Context {
    fn new(g: &GlobalArgs) -> Result<Context, CliError> {
        let file = match &g.config {
            Some(p) => FileConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
            None => FileConfig::default(),
        };
        let flags = Flags {
            alpha: g.alpha,
            oracle: g.oracle.clone(),
            seed: g.seed,
            data: g.data.clone(),
            catalog: g.catalog.clone(),
            stats: g.stats.clone(),
            out: g.out.clone(),
            verbose: (g.verbose > 0).then_some(g.verbose),
            statistics: g.statistics,
            parallel: g.parallel.then_some(true),
        };
        let oracle_given = flags.oracle.is_some() || file.oracle.is_some();
        let seed = flags.seed.or(file.seed);
        let mut config = RunConfig::resolve(file, flags).map_err(|e| CliError::Usage(e.to_string()))?;
        // A preset dataset brings its own mock oracle unless one is named.
        if let Some(name) = config.data.as_deref().and_then(|d| d.strip_prefix("preset:")) {
            if !oracle_given {
                let mut mock = Preset::builtin(name)
                    .map_err(|e| CliError::Usage(e.to_string()))?
                    .oracle
                    .build();
                if let Some(seed) = seed {
                    mock.seed = seed;
                }
                config.oracle = OracleSpec::Mock(mock);
            }
        }
        let data = config.data.as_deref().map(load_data).transpose()?;
        let oracle = config.oracle.build().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Context { config, data, oracle })
    }

    fn catalog(&self) -> Result<Catalog, CliError> {
        if let Some(d) = &self.data {
            return Ok(d.catalog());
        }
        match &self.config.catalog {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(io)?)
                .map_err(|e| CliError::Usage(format!("invalid catalog {}: {e}", p.display()))),
            None => Err(CliError::Usage("give --data or --catalog".into())),
        }
    }

    fn data(&self) -> Result<&Dataset, CliError> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --data".into()))
    }

    fn input(&self, input: &Input) -> Result<PlanTree, CliError> {
        match (&input.sql, &input.plan) {
            (Some(sql), None) => {
                let text = if Path::new(sql).is_file() {
                    std::fs::read_to_string(sql).map_err(io)?
                } else {
                    sql.clone()
                };
                let tree = semplan_core::sql::parse(&text, &self.catalog()?).map_err(CliError::Parse)?;
                log::info!("parsed query into {} nodes", tree.nodes.len());
                Ok(tree)
            }
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(io)?;
                let tree: PlanTree = serde_json::from_str(&text).map_err(|e| CliError::Plan(e.to_string()))?;
                let violations = validate(&tree);
                if !violations.is_empty() {
                    return Err(CliError::Plan(
                        violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
                    ));
                }
                Ok(tree)
            }
            _ => Err(CliError::Usage("give exactly one of --sql or --plan".into())),
        }
    }

    fn pipeline(&self) -> Result<Pipeline<'_>, CliError> {
        let mut p = Pipeline::new(self.data()?, self.oracle.as_ref());
        self.configure(&mut p);
        Ok(p)
    }

    fn configure(&self, p: &mut Pipeline<'_>) {
        p.model = self.config.model.clone();
        p.config = self.config.optimizer.clone();
        p.stats_mode = self.config.statistics;
        p.template_selectivity = self.config.selectivities.clone();
        p.exec = ExecOptions {
            parallel: self.config.parallel,
            ..ExecOptions::default()
        };
    }

    fn statistics(&self, tree: &PlanTree) -> Result<Statistics, CliError> {
        if let Some(p) = &self.config.stats {
            let text = std::fs::read_to_string(p).map_err(io)?;
            return serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid statistics {}: {e}", p.display())));
        }
        match &self.data {
            Some(_) => Ok(self.pipeline()?.statistics(tree)?),
            None => {
                log::warn!("no data or statistics given; assuming {DEFAULT_ROWS} rows per table");
                let mut s = Statistics::default();
                for t in tree.catalog.keys() {
                    s = s.with_table(t, DEFAULT_ROWS);
                }
                Ok(s)
            }
        }
    }

    fn optimize(&self, tree: &PlanTree, strategy: Strategy) -> Result<(Optimized, Statistics, f64), CliError> {
        let stats = self.statistics(tree)?;
        let mut p = Pipeline::new(self.data.as_ref().unwrap_or(&EMPTY), self.oracle.as_ref());
        self.configure(&mut p);
        let (opt, ms) = p.optimize(tree, strategy, &stats)?;
        for w in &opt.warnings {
            log::warn!("{w}");
        }
        log::info!("optimized with {strategy} in {ms:.3} ms");
        Ok((opt, stats, ms))
    }

    fn emit(&self, text: &str) -> Result<(), CliError> {
        match &self.config.out {
            Some(p) => std::fs::write(p, text).map_err(io),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes()).map_err(io)?;
                out.flush().map_err(io)
            }
        }
    }
}

const DEFAULT_ROWS: f64 = 1000.0;
static EMPTY: Dataset = Dataset {
    tables: std::collections::BTreeMap::new(),
};

/// Resolves a `--data` value to a dataset.
pub fn load_data(spec: &str) -> Result<Dataset, CliError> {
    let workload = if spec == "corpus" {
        crate::corpus::workload()
    } else if let Some(name) = spec.strip_prefix("preset:") {
        Preset::builtin(name)
            .map_err(|e| CliError::Usage(e.to_string()))?
            .workload
    } else {
        let path = Path::new(spec);
        if path.is_dir() {
            return Dataset::load_dir(path).map_err(|e| CliError::Usage(e.to_string()));
        }
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read data {spec}: {e}")))?;
        serde_json::from_str::<WorkloadSpec>(&text)
            .map_err(|e| CliError::Usage(format!("invalid workload {spec}: {e}")))?
    };
    workload.generate().map_err(|e| CliError::Usage(e.to_string()))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn plan_json(tree: &PlanTree) -> serde_json::Value {
    json!({
        "sql": render_sql(tree).ok(),
        "explain": explain(tree, None),
        "plan": tree,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::new(&cli.global)?;
    match &cli.command {
        Command::Parse(input) => {
            let tree = ctx.input(input)?;
            ctx.emit(&pretty(&plan_json(&tree)))
        }
        Command::Optimize { input, strategy } => {
            let tree = ctx.input(input)?;
            let (opt, _, ms) = ctx.optimize(&tree, *strategy)?;
            let mut v = plan_json(&opt.tree);
            let obj = v.as_object_mut().expect("object");
            obj.insert("strategy".into(), json!(opt.strategy.name()));
            obj.insert("trace".into(), json!(opt.trace));
            obj.insert("placement".into(), json!(opt.placement));
            obj.insert("pullup".into(), json!(opt.pullup));
            obj.insert("dp".into(), json!(opt.dp));
            obj.insert("warnings".into(), json!(opt.warnings));
            obj.insert("timing".into(), json!({ "optimize_ms": ms }));
            ctx.emit(&pretty(&v))
        }
        Command::Explain { input, strategy } => {
            let tree = ctx.input(input)?;
            let (opt, stats, _) = ctx.optimize(&tree, *strategy)?;
            let model = ctx.config.model.clone();
            let est = Estimator::new(&opt.tree, &model, &stats).ok();
            let mut text = format!("strategy: {}\n", opt.strategy);
            if let Some(p) = &opt.placement {
                text.push_str(&format!(
                    "estimate: llm={} rel={} total={}\n",
                    p.estimate.llm_rows, p.estimate.rel_rows, p.estimate.total
                ));
            }
            text.push_str(&explain(&opt.tree, est.as_ref()));
            ctx.emit(&text)
        }
        Command::Run { input, strategy } => {
            let tree = ctx.input(input)?;
            let p = ctx.pipeline()?;
            let (opt, _, ms) = ctx.optimize(&tree, *strategy)?;
            let exec = p.execute(&opt.tree)?;
            let csv = exec.relation.to_csv(&output_names(&opt.tree));
            let mut metrics = serde_json::to_value(&exec.metrics).expect("metrics serialize");
            metrics["strategy"] = json!(opt.strategy.name());
            metrics["rows"] = json!(exec.relation.len());
            metrics["timing"]["optimize_ms"] = json!(ms);
            match &ctx.config.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(io)?;
                    std::fs::write(dir.join("result.csv"), csv).map_err(io)?;
                    std::fs::write(dir.join("metrics.json"), pretty(&metrics)).map_err(io)
                }
                None => {
                    print!("{csv}");
                    eprint!("{}", pretty(&metrics));
                    Ok(())
                }
            }
        }
        Command::Compare { input, strategies } => {
            if strategies.len() < 2 {
                return Err(CliError::Usage("compare needs at least two strategies".into()));
            }
            let tree = ctx.input(input)?;
            let p = ctx.pipeline()?;
            let stats = ctx.statistics(&tree)?;
            let runs = strategies
                .iter()
                .map(|&s| p.run(&tree, s, &stats))
                .collect::<Result<Vec<_>, _>>()?;
            let first = &runs[0].execution.relation;
            let rows: Vec<serde_json::Value> = runs
                .iter()
                .map(|r| {
                    let m = &r.execution.metrics;
                    json!({
                        "strategy": r.optimized.strategy.name(),
                        "llm_calls": m.llm_calls,
                        "cache_hits": m.cache_hits,
                        "cache_probes": m.cache_probes,
                        "malformed_answers": m.malformed_answers,
                        "rows": r.execution.relation.len(),
                        "equal_to_first": same_multiset(first, &r.execution.relation),
                        "accuracy": accuracy(first, &r.execution.relation),
                        "estimate": r.optimized.placement.as_ref().map(|p| p.estimate),
                        "plan": bench::placement_signature(&r.optimized.tree),
                        "timing": { "optimize_ms": r.optimize_ms, "exec_ms": m.timing.wall_ms },
                    })
                })
                .collect();
            ctx.emit(&pretty(
                &json!({ "reference": strategies[0].name(), "strategies": rows }),
            ))
        }
        Command::Bench { preset, latency_ms } => {
            let preset = Preset::resolve(preset).map_err(|e| CliError::Usage(e.to_string()))?;
            let opts = BenchOptions {
                latency_ms: *latency_ms,
                parallel: ctx.config.parallel,
            };
            let report = bench::run_preset(&preset, &opts).map_err(|e| match e {
                bench::BenchError::Query { source, .. } => CliError::from(source),
                other => CliError::Usage(other.to_string()),
            })?;
            let dir = ctx.config.out.clone().unwrap_or_else(|| PathBuf::from("bench-out"));
            report.write(&dir, &preset.name).map_err(io)?;
            log::info!("wrote {}", dir.join(format!("{}.csv", preset.name)).display());
            print!("{}", pretty(&report.summary()));
            Ok(())
        }
        Command::Generate { workload } => {
            let data = load_data(workload)?;
            let dir = ctx
                .config
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("generate needs --out <dir>".into()))?;
            data.write_dir(&dir).map_err(io)
        }
    }
}
