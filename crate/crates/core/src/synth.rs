//! Seeded random plans and cost inputs for property tests and synthetic
//! workloads.
//!
//! Tables are `t0, t1, ...`, each with columns `k` (join key), `g` (small
//! integer) and `v` (text). Joins are equi-joins on `k` or cross joins,
//! combined in random (possibly bushy) shapes. Semantic filters are inserted
//! above random non-root nodes and read `v` columns or derived columns
//! visible there.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{OptimizerConfig, SelectivityModel, Statistics};
use crate::ir::{
    tables_under, Catalog, ColumnRef, CompareOp, JoinKey, NodeId, NodeKind, OutputColumn, OutputType, PlanTree,
    RelPredicate, SemanticPredicate, SortKey, TableSchema,
};
use crate::value::{ColumnType, Value};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub min_tables: usize,
    pub max_tables: usize,
    pub min_filters: usize,
    pub max_filters: usize,
    /// Insert `Limit` and `Sort` operators.
    pub blocks: bool,
    pub sem_projects: bool,
    pub cross_joins: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            min_tables: 1,
            max_tables: 3,
            min_filters: 0,
            max_filters: 4,
            blocks: true,
            sem_projects: true,
            cross_joins: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub tree: PlanTree,
    pub stats: Statistics,
    pub model: SelectivityModel,
    pub config: OptimizerConfig,
}

pub fn table_name(i: usize) -> alloc::string::String {
    format!("t{i}")
}

pub fn catalog(tables: usize) -> Catalog {
    (0..tables)
        .map(|i| {
            (
                table_name(i),
                TableSchema::new([
                    ("k", ColumnType::Integer),
                    ("g", ColumnType::Integer),
                    ("v", ColumnType::Text),
                ]),
            )
        })
        .collect()
}

fn pick_table(rng: &mut ChaCha8Rng, tree: &PlanTree, node: NodeId) -> alloc::string::String {
    let tables: Vec<_> = tables_under(tree, node).expect("node exists").into_iter().collect();
    tables.choose(rng).expect("every subtree scans a table").clone()
}

/// A random valid plan.
pub fn random_plan(seed: u64, opts: &SynthOptions) -> PlanTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(opts.min_tables..=opts.max_tables.max(opts.min_tables));
    let mut tree = PlanTree {
        root: NodeId(0),
        nodes: BTreeMap::new(),
        catalog: catalog(k),
    };
    let mut subtrees = Vec::new();
    for i in 0..k {
        let t = table_name(i);
        let mut n = tree.add_node(NodeKind::TableScan { table: t.clone() }, vec![]);
        if rng.random_bool(0.35) {
            let predicate = RelPredicate::Compare {
                column: ColumnRef::new(t.clone(), "g"),
                op: CompareOp::Ge,
                value: Value::Integer(rng.random_range(0..5)),
            };
            n = tree.add_node(NodeKind::RelFilter { predicate }, vec![n]);
        }
        if opts.sem_projects && rng.random_bool(0.15) {
            let output = format!("s{i}");
            let predicate =
                SemanticPredicate::from_template(format!("score of {{{t}.v}}"), OutputType::Integer).expect("template");
            n = tree.add_node(
                NodeKind::SemProject {
                    predicate,
                    output: output.clone(),
                },
                vec![n],
            );
            if rng.random_bool(0.5) {
                let predicate = RelPredicate::Compare {
                    column: ColumnRef::derived(output),
                    op: CompareOp::Ge,
                    value: Value::Integer(3),
                };
                n = tree.add_node(NodeKind::RelFilter { predicate }, vec![n]);
            }
        }
        subtrees.push(n);
    }
    while subtrees.len() > 1 {
        let i = rng.random_range(0..subtrees.len() - 1);
        let (l, r) = (subtrees[i], subtrees.remove(i + 1));
        let mut n = if opts.cross_joins && rng.random_bool(0.25) {
            tree.add_node(
                NodeKind::CrossJoin {
                    from_semantic_join: false,
                },
                vec![l, r],
            )
        } else {
            let key = JoinKey {
                left: ColumnRef::new(pick_table(&mut rng, &tree, l), "k"),
                right: ColumnRef::new(pick_table(&mut rng, &tree, r), "k"),
            };
            tree.add_node(NodeKind::InnerJoin { keys: vec![key] }, vec![l, r])
        };
        if rng.random_bool(0.2) {
            let predicate = RelPredicate::CompareColumns {
                left: ColumnRef::new(pick_table(&mut rng, &tree, l), "g"),
                op: CompareOp::Le,
                right: ColumnRef::new(pick_table(&mut rng, &tree, r), "g"),
            };
            n = tree.add_node(NodeKind::RelFilter { predicate }, vec![n]);
        }
        if rng.random_bool(0.15) {
            let columns = tree
                .output_columns(n)
                .expect("valid subtree")
                .into_iter()
                .map(OutputColumn::plain)
                .collect();
            n = tree.add_node(NodeKind::Project { columns }, vec![n]);
        }
        if opts.blocks && rng.random_bool(0.1) {
            let count = rng.random_range(50..500);
            n = tree.add_node(NodeKind::Limit { count }, vec![n]);
        }
        subtrees[i] = n;
    }
    let mut top = subtrees[0];
    if opts.blocks && rng.random_bool(0.15) {
        let keys = vec![SortKey {
            column: ColumnRef::new(table_name(0), "k"),
            descending: false,
        }];
        top = tree.add_node(NodeKind::Sort { keys }, vec![top]);
    }
    let columns = vec![OutputColumn::plain(ColumnRef::new(table_name(0), "v"))];
    tree.root = tree.add_node(NodeKind::Project { columns }, vec![top]);

    let n = rng.random_range(opts.min_filters..=opts.max_filters.max(opts.min_filters));
    for j in 0..n {
        let candidates: Vec<NodeId> = tree.nodes.keys().copied().filter(|&id| id != tree.root).collect();
        let u = *candidates.choose(&mut rng).expect("plan has a non-root node");
        let visible: Vec<ColumnRef> = tree
            .output_columns(u)
            .expect("valid subtree")
            .into_iter()
            .filter(|c| c.is_derived() || c.column == "v")
            .collect();
        let want = if rng.random_bool(0.1) {
            0
        } else if visible.len() > 1 && rng.random_bool(0.3) {
            2
        } else {
            1
        };
        let chosen: Vec<&ColumnRef> = visible.choose_multiple(&mut rng, want).collect();
        let mut template = format!("condition {j}");
        for c in chosen {
            template.push_str(&format!(" {{{c}}}"));
        }
        let predicate = SemanticPredicate::from_template(template, OutputType::Boolean).expect("template");
        let sf = tree.add_node(
            NodeKind::SemFilter {
                predicate,
                join_condition: false,
            },
            vec![],
        );
        tree.insert_above(sf, u).expect("insertion above a non-root node");
    }
    tree
}

/// A random plan with random statistics, selectivities and weights.
pub fn random_instance(seed: u64, opts: &SynthOptions) -> Instance {
    let tree = random_plan(seed, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_c057);
    let mut stats = Statistics::default();
    for t in tree.catalog.keys() {
        stats = stats.with_table(t, rng.random_range(1..=5000) as f64);
    }
    for &id in tree.nodes.keys() {
        if rng.random_bool(0.1) {
            stats.node_cardinality.insert(id, rng.random_range(1..=20_000) as f64);
        }
    }
    let mut model = SelectivityModel {
        join_distinct_selectivity: *[0.05, 0.1, 0.3, 1.0].choose(&mut rng).expect("non-empty"),
        ..Default::default()
    };
    for id in tree.semantic_filters() {
        if rng.random_bool(0.6) {
            let s = *[0.01, 0.05, 0.2, 0.5, 0.9, 1.0].choose(&mut rng).expect("non-empty");
            model.per_filter_overrides.insert(id, s);
        }
    }
    let config = OptimizerConfig {
        alpha: *[1e-7, 1e-4, 1e-2, 0.1, 1.0, 10.0].choose(&mut rng).expect("non-empty"),
        cache_probe_cost: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        ..Default::default()
    };
    Instance {
        tree,
        stats,
        model,
        config,
    }
}

/// Short text summary of an instance's shape, for failure messages.
pub fn describe(tree: &PlanTree) -> alloc::string::String {
    crate::explain::explain(tree, None).to_string()
}
