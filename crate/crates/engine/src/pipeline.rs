//! Parse, gather statistics, optimize and execute in one place.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use semplan_core::cost::{OptimizerConfig, SelectivityModel, Statistics, TableStats};
use semplan_core::optimize::{optimize, OptimizeError, Optimized, Strategy};
use semplan_core::rewrite::simplify_to_fixed_point;
use semplan_core::sql::{self, ParseError};
use semplan_core::{NodeId, NodeKind, PlanTree, Value};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::exec::{ExecError, ExecOptions, Execution, Executor};
use crate::oracle::SemanticOracle;
use crate::stats::collect_exact_statistics;

/// Where the estimator's statistics come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    /// Measured per operator on the data, so estimates match execution.
    #[default]
    Exact,
    /// Base-table row counts and distinct values only.
    Tables,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// One strategy applied to one query.
#[derive(Clone, Debug)]
pub struct QueryRun {
    pub optimized: Optimized,
    pub execution: Execution,
    /// Wall time of `optimize`, statistics collection excluded.
    pub optimize_ms: f64,
}

pub struct Pipeline<'a> {
    pub data: &'a Dataset,
    pub oracle: &'a dyn SemanticOracle,
    pub model: SelectivityModel,
    pub config: OptimizerConfig,
    pub stats_mode: StatsMode,
    /// Selectivity hints keyed by bound predicate template. They become
    /// per-filter overrides for every query planned here.
    pub template_selectivity: BTreeMap<String, f64>,
    pub exec: ExecOptions,
}

impl<'a> Pipeline<'a> {
    pub fn new(data: &'a Dataset, oracle: &'a dyn SemanticOracle) -> Self {
        Pipeline {
            data,
            oracle,
            model: SelectivityModel::default(),
            config: OptimizerConfig::default(),
            stats_mode: StatsMode::default(),
            template_selectivity: BTreeMap::new(),
            exec: ExecOptions::default(),
        }
    }

    pub fn parse(&self, sql: &str) -> Result<PlanTree, ParseError> {
        sql::parse(sql, &self.data.catalog())
    }

    /// Statistics for `tree`. Exact statistics are measured on the
    /// simplified tree, whose node ids are the ones placement sees.
    pub fn statistics(&self, tree: &PlanTree) -> Result<Statistics, PipelineError> {
        match self.stats_mode {
            StatsMode::Tables => Ok(table_statistics(self.data)),
            StatsMode::Exact => {
                let (simple, _) = simplify_to_fixed_point(tree).map_err(OptimizeError::from)?;
                Ok(collect_exact_statistics(&simple, self.data, self.oracle)?)
            }
        }
    }

    pub fn model_for(&self, tree: &PlanTree) -> SelectivityModel {
        let mut model = self.model.clone();
        model
            .per_filter_overrides
            .extend(template_overrides(tree, &self.template_selectivity));
        model
    }

    pub fn optimize(
        &self,
        tree: &PlanTree,
        strategy: Strategy,
        stats: &Statistics,
    ) -> Result<(Optimized, f64), PipelineError> {
        let model = self.model_for(tree);
        let start = Instant::now();
        let optimized = optimize(tree, strategy, &model, stats, &self.config)?;
        Ok((optimized, start.elapsed().as_secs_f64() * 1e3))
    }

    pub fn execute(&self, tree: &PlanTree) -> Result<Execution, ExecError> {
        Executor::new(self.oracle)
            .with_options(self.exec)
            .execute(tree, self.data)
    }

    pub fn run(&self, tree: &PlanTree, strategy: Strategy, stats: &Statistics) -> Result<QueryRun, PipelineError> {
        let (optimized, optimize_ms) = self.optimize(tree, strategy, stats)?;
        let execution = self.execute(&optimized.tree)?;
        Ok(QueryRun {
            optimized,
            execution,
            optimize_ms,
        })
    }

    /// Runs every strategy on the same statistics.
    pub fn run_all(&self, tree: &PlanTree, strategies: &[Strategy]) -> Result<Vec<QueryRun>, PipelineError> {
        let stats = self.statistics(tree)?;
        strategies.iter().map(|&s| self.run(tree, s, &stats)).collect()
    }
}

/// Row counts and per-column distinct values of every table in `data`.
pub fn table_statistics(data: &Dataset) -> Statistics {
    let mut stats = Statistics::default();
    for (name, table) in &data.tables {
        let mut ndv = BTreeMap::new();
        for (i, col) in table.schema.columns.iter().enumerate() {
            let distinct: HashSet<&Value> = table.rows.iter().map(|r| &r[i]).filter(|v| !v.is_null()).collect();
            ndv.insert(col.name.clone(), distinct.len().max(1) as f64);
        }
        stats.tables.insert(
            name.clone(),
            TableStats {
                rows: table.rows.len() as f64,
                ndv,
            },
        );
    }
    stats
}

/// Maps template hints onto the semantic filters of `tree`.
pub fn template_overrides(tree: &PlanTree, hints: &BTreeMap<String, f64>) -> BTreeMap<NodeId, f64> {
    let mut out = BTreeMap::new();
    for id in tree.semantic_filters() {
        if let Ok(node) = tree.node(id) {
            if let NodeKind::SemFilter { predicate, .. } = &node.kind {
                if let Some(&s) = hints.get(&predicate.template) {
                    out.insert(id, s);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Table;
    use crate::oracle::MockOracle;
    use semplan_core::ir::TableSchema;
    use semplan_core::ColumnType;

    fn data() -> Dataset {
        let mut a = Table::new(TableSchema::new([("k", ColumnType::Integer), ("v", ColumnType::Text)]));
        let mut b = Table::new(TableSchema::new([("k", ColumnType::Integer), ("w", ColumnType::Text)]));
        for i in 0..40 {
            a.rows.push(vec![Value::Integer(i % 10), format!("a{i}").into()]);
            b.rows.push(vec![Value::Integer(i % 5), format!("b{}", i % 7).into()]);
        }
        let mut d = Dataset::default();
        d.insert("a", a);
        d.insert("b", b);
        d
    }

    #[test]
    fn strategies_agree_on_results() {
        let d = data();
        let oracle = MockOracle::new(1, 0.4);
        let p = Pipeline::new(&d, &oracle);
        let tree = p
            .parse("SELECT a.v, b.w FROM a JOIN b ON a.k = b.k WHERE SEMANTIC('{a.v} ok?') AND SEMANTIC('{b.w} ok?')")
            .unwrap();
        let runs = p.run_all(&tree, &Strategy::ALL).unwrap();
        for r in &runs[1..] {
            assert!(crate::compare::same_multiset(
                &runs[0].execution.relation,
                &r.execution.relation
            ));
        }
    }

    #[test]
    fn template_hints_become_overrides() {
        let d = data();
        let oracle = MockOracle::new(1, 0.4);
        let mut p = Pipeline::new(&d, &oracle);
        let tree = p.parse("SELECT a.v FROM a WHERE SEMANTIC('{a.v} ok?')").unwrap();
        let f = tree.semantic_filters()[0];
        let template = tree.kind(f).semantic_predicate().unwrap().template.clone();
        p.template_selectivity.insert(template, 0.9);
        assert_eq!(p.model_for(&tree).filter_selectivity(f), 0.9);
    }

    #[test]
    fn table_statistics_count_distinct_values() {
        let s = table_statistics(&data());
        assert_eq!(s.tables["a"].rows, 40.0);
        assert_eq!(s.tables["a"].ndv["k"], 10.0);
        assert_eq!(s.tables["b"].ndv["w"], 7.0);
    }
}
