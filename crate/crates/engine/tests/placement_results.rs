//! Moving semantic filters must never change what a query returns.

use proptest::prelude::*;
use semplan_core::dp;
use semplan_core::optimize::Strategy;
use semplan_core::placement::{apply_placement, PlacementContext};
use semplan_core::rewrite::simplify_to_fixed_point;
use semplan_core::synth::{random_instance, SynthOptions};
use semplan_core::{ColumnType, PlanTree};
use semplan_engine::compare::same_multiset;
use semplan_engine::pipeline::Pipeline;
use semplan_engine::workload::{ColumnSpec, Gen, Segment, TableSpec, WorkloadSpec};
use semplan_engine::{corpus, Dataset, Executor, MockOracle};

fn data_for(tree: &PlanTree, seed: u64, rows: usize) -> Dataset {
    let tables = tree
        .catalog
        .keys()
        .map(|name| TableSpec {
            name: name.clone(),
            rows,
            shuffle: true,
            columns: vec![
                ColumnSpec {
                    name: "k".into(),
                    ty: ColumnType::Integer,
                    generator: Gen::Uniform { min: 0, max: 4 },
                },
                ColumnSpec {
                    name: "g".into(),
                    ty: ColumnType::Integer,
                    generator: Gen::Uniform { min: 0, max: 9 },
                },
                ColumnSpec {
                    name: "v".into(),
                    ty: ColumnType::Text,
                    generator: Gen::Segments {
                        parts: vec![
                            Segment {
                                rows: rows - rows / 5,
                                generator: Gen::Pick {
                                    prefix: format!("{name} v"),
                                    distinct: 5,
                                },
                            },
                            Segment {
                                rows: rows / 5,
                                generator: Gen::Null,
                            },
                        ],
                    },
                },
            ],
        })
        .collect();
    WorkloadSpec { seed, tables }.generate().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_placement_returns_the_same_rows(seed in 0u64..100_000, oracle_seed in 0u64..1000, sel in 0.1f64..0.9) {
        let opts = SynthOptions { max_tables: 3, min_filters: 1, max_filters: 4, ..Default::default() };
        let inst = random_instance(seed, &opts);
        let data = data_for(&inst.tree, seed, 12);
        let oracle = MockOracle::new(oracle_seed, sel);
        let exec = |t: &PlanTree| Executor::new(&oracle).execute(t, &data).unwrap().relation;
        let reference = exec(&inst.tree);

        let (simple, _) = simplify_to_fixed_point(&inst.tree).unwrap();
        prop_assert!(same_multiset(&reference, &exec(&simple)));
        let ctx = PlacementContext::new(&simple, &inst.model, &inst.stats, &inst.config).unwrap();
        let placed = apply_placement(&simple, &ctx, &dp::place(&ctx).unwrap().placement).unwrap();
        prop_assert!(same_multiset(&reference, &exec(&placed)));
        for s in Strategy::ALL {
            let opt = semplan_core::optimize::optimize(&inst.tree, s, &inst.model, &inst.stats, &inst.config).unwrap();
            prop_assert!(same_multiset(&reference, &exec(&opt.tree)), "strategy {}", s);
        }
    }

    #[test]
    fn corpus_results_do_not_depend_on_alpha(alpha_exp in -8i32..2, oracle_seed in 0u64..50) {
        let data = corpus::workload().generate().unwrap();
        let oracle = MockOracle::new(oracle_seed, 0.5);
        let mut p = Pipeline::new(&data, &oracle);
        p.config.alpha = 10f64.powi(alpha_exp);
        for (name, sql) in corpus::QUERIES.iter().take(6) {
            let tree = p.parse(sql).unwrap();
            let runs = p.run_all(&tree, &[Strategy::None, Strategy::CostModel]).unwrap();
            prop_assert!(same_multiset(&runs[0].execution.relation, &runs[1].execution.relation), "{}", name);
        }
    }
}
