use semplan_core::ir::{isomorphic, validate, NodeKind, OperatorKind};
use semplan_core::is_block_operator;
use semplan_core::pullup::pull_up;
use semplan_core::rewrite::simplify_to_fixed_point;
use semplan_core::sql::{parse, render_sql};
use semplan_core::synth::{catalog, describe, random_plan, SynthOptions};

fn opts() -> SynthOptions {
    SynthOptions {
        max_tables: 4,
        max_filters: 8,
        ..Default::default()
    }
}

#[test]
fn pullup_passes_are_bounded_and_final() {
    for seed in 0..500 {
        let tree = random_plan(seed, &opts());
        let n = tree.semantic_filters().len();
        let d = tree.depth();
        let (out, stats) = pull_up(&tree).unwrap();
        assert!(validate(&out).is_empty(), "seed {seed}");
        if n == 0 {
            assert_eq!(stats.passes, 0);
            continue;
        }
        assert!(
            stats.passes <= n * d.saturating_sub(2) + 1,
            "seed {seed}: {} passes, n={n} d={d}\n{}",
            stats.passes,
            describe(&tree)
        );
        assert!(stats.passes <= n * d);
        for f in out.semantic_filters() {
            let p = out.parent_of(f).unwrap();
            let op = out.kind(p).op();
            let stuck = p == out.root
                || is_block_operator(op)
                || op == OperatorKind::SemFilter
                || out
                    .parent_of(p)
                    .is_some_and(|g| out.kind(g).op() == OperatorKind::Union);
            assert!(stuck, "seed {seed}: {f} can still move over {p}");
        }
        let (again, more) = pull_up(&out).unwrap();
        assert_eq!(more.swaps, 0);
        assert_eq!(again, out);
    }
}

#[test]
fn simplification_is_idempotent_and_valid() {
    for seed in 0..500 {
        let tree = random_plan(seed, &opts());
        let (once, trace) = simplify_to_fixed_point(&tree).unwrap();
        assert!(validate(&once).is_empty(), "seed {seed}");
        let sp = tree.nodes_of(OperatorKind::SemProject).len();
        assert!(trace.len() <= tree.nodes.len() * sp + 1, "seed {seed}");
        let (twice, trace) = simplify_to_fixed_point(&once).unwrap();
        assert!(trace.is_empty(), "seed {seed}: {trace:?}");
        assert!(isomorphic(&once, &twice));
        for id in once.semantic_filters() {
            assert!(!matches!(
                once.kind(id),
                NodeKind::SemFilter {
                    join_condition: true,
                    ..
                }
            ));
        }
    }
}

#[test]
fn json_round_trip() {
    for seed in 0..200 {
        let tree = random_plan(seed, &opts());
        let text = serde_json::to_string(&tree).unwrap();
        let back: semplan_core::PlanTree = serde_json::from_str(&text).unwrap();
        assert_eq!(back, tree, "seed {seed}");
    }
    let inst = semplan_core::synth::random_instance(7, &opts());
    let text = serde_json::to_string(&inst.stats).unwrap();
    let back: semplan_core::cost::Statistics = serde_json::from_str(&text).unwrap();
    assert_eq!(back, inst.stats);
}

#[test]
fn parse_render_parse_is_idempotent() {
    // Rendered random plans serve as random SQL; parsing normalizes it once.
    let mut rendered = 0;
    for seed in 0..500 {
        let tree = random_plan(seed, &opts());
        let Ok(sql) = render_sql(&tree) else { continue };
        rendered += 1;
        let cat = catalog(tree.catalog.len());
        let first = parse(&sql, &cat).unwrap_or_else(|e| panic!("seed {seed}: {sql}\n{e}"));
        let text = render_sql(&first).unwrap();
        let second = parse(&text, &cat).unwrap();
        assert!(isomorphic(&first, &second), "seed {seed}: {text}");
        assert_eq!(render_sql(&second).unwrap(), text, "seed {seed}");
    }
    assert!(rendered >= 150, "only {rendered} plans rendered");
}
