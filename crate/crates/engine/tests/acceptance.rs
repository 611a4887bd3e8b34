//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semplan_core::brute;
use semplan_core::dp;
use semplan_core::ir::{validate, NodeId, OperatorKind};
use semplan_core::optimize::Strategy;
use semplan_core::placement::PlacementContext;
use semplan_core::pullup::pull_up;
use semplan_core::rewrite::simplify_to_fixed_point;
use semplan_core::sql;
use semplan_core::synth::{random_instance, random_plan, SynthOptions};
use semplan_core::{is_block_operator, ColumnType, PlanTree};
use semplan_engine::bench::{run_preset, BenchOptions, BenchReport, Preset};
use semplan_engine::compare::{accuracy, same_multiset};
use semplan_engine::pipeline::Pipeline;
use semplan_engine::stats::{count_distinct_inputs, distinct_prompts};
use semplan_engine::workload::{ColumnSpec, Gen, Segment, TableSpec, WorkloadSpec};
use semplan_engine::{corpus, Dataset, ExecOptions, Executor, MockOracle};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn zero_latency() -> BenchOptions {
    BenchOptions {
        latency_ms: Some(0.0),
        parallel: false,
    }
}

fn call_counts() -> Outcome {
    let start = Instant::now();
    let preset = Preset::builtin("fig1").map_err(|e| e.to_string())?;
    ensure(preset.optimizer.alpha == 1e-7, || {
        format!("fig1 alpha is {}", preset.optimizer.alpha)
    })?;
    let report = run_preset(&preset, &zero_latency()).map_err(|e| e.to_string())?;
    let BenchReport::Compare(report) = report else {
        return Err("fig1 is not a comparison".into());
    };
    let calls = |s: Strategy| report.rows_for(s).map(|r| r.llm_calls).sum::<u64>();
    let (none, pullup, cost) = (
        calls(Strategy::None),
        calls(Strategy::Pullup),
        calls(Strategy::CostModel),
    );
    let secs = start.elapsed().as_secs_f64();
    ensure(none == 4000 && pullup == 3300 && cost <= 3300, || {
        format!("calls none={none} pullup={pullup} cost_model={cost}")
    })?;
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("none={none} pullup={pullup} cost_model={cost} in {secs:.2}s"))
}

fn dp_matches_exhaustive() -> Outcome {
    let start = Instant::now();
    let opts = SynthOptions {
        min_tables: 1,
        max_tables: 3,
        min_filters: 1,
        max_filters: 6,
        ..Default::default()
    };
    let (mut checked, mut seed) = (0, 0u64);
    while checked < 500 {
        let inst = random_instance(seed, &opts);
        let ctx = PlacementContext::new(&inst.tree, &inst.model, &inst.stats, &inst.config)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        if ctx.filter_count() <= 6 && ctx.skeleton.len() <= 12 {
            let d = dp::place(&ctx).map_err(|e| format!("seed {seed}: {e}"))?;
            let b = brute::place(&ctx).map_err(|e| format!("seed {seed}: {e}"))?;
            let (dt, bt) = (d.placement.estimate.total, b.placement.estimate.total);
            ensure(dt.to_bits() == bt.to_bits(), || {
                format!("seed {seed}: dp {dt} vs exhaustive {bt}")
            })?;
            checked += 1;
        }
        seed += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{checked} instances equal bit for bit in {secs:.2}s"))
}

/// Small random data for the synthetic catalog: few distinct values and
/// some NULLs, so filters see plenty of duplicate inputs.
fn synth_data(tree: &PlanTree, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_nulls = |rng: &mut ChaCha8Rng, rows: usize, g: Gen| {
        let nulls = rng.random_range(0..=rows / 4);
        Gen::Segments {
            parts: vec![
                Segment {
                    rows: rows - nulls,
                    generator: g,
                },
                Segment {
                    rows: nulls,
                    generator: Gen::Null,
                },
            ],
        }
    };
    let tables = tree
        .catalog
        .keys()
        .map(|name| {
            let rows = rng.random_range(4..=30);
            let k = with_nulls(&mut rng, rows, Gen::Uniform { min: 0, max: 5 });
            let g = Gen::Uniform { min: 0, max: 9 };
            let distinct = rng.random_range(2..8);
            let v = with_nulls(
                &mut rng,
                rows,
                Gen::Pick {
                    prefix: format!("{name}v"),
                    distinct,
                },
            );
            TableSpec {
                name: name.clone(),
                rows,
                shuffle: true,
                columns: vec![
                    ColumnSpec {
                        name: "k".into(),
                        ty: ColumnType::Integer,
                        generator: k,
                    },
                    ColumnSpec {
                        name: "g".into(),
                        ty: ColumnType::Integer,
                        generator: g,
                    },
                    ColumnSpec {
                        name: "v".into(),
                        ty: ColumnType::Text,
                        generator: v,
                    },
                ],
            }
        })
        .collect();
    WorkloadSpec { seed, tables }.generate().expect("valid workload")
}

fn calls_at(tree: &PlanTree, filter: NodeId, data: &Dataset, oracle: &MockOracle) -> Result<u64, String> {
    let exec = Executor::new(oracle).execute(tree, data).map_err(|e| e.to_string())?;
    Ok(exec.metrics.calls_per_node.get(&filter).copied().unwrap_or(0))
}

fn monotone_along_paths() -> Outcome {
    let opts = SynthOptions {
        max_tables: 3,
        min_filters: 1,
        max_filters: 3,
        ..Default::default()
    };
    let oracle = MockOracle::new(7, 0.5);
    let mut samples = 0;
    let mut seed = 0u64;
    while samples < 200 {
        if seed > 20_000 {
            return Err(format!("only {samples} samples found"));
        }
        let tree = random_plan(seed, &opts);
        let data = synth_data(&tree, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seed += 1;
        let filters = tree.semantic_filters();
        let f = filters[rng.random_range(0..filters.len())];
        let anchor = tree.children(f)[0];
        // Ancestors the filter may legally reach without crossing a block
        // operator, the root excluded.
        let mut reachable = Vec::new();
        let mut cur = f;
        while let Some(p) = tree.parent_of(cur) {
            if p == tree.root || is_block_operator(tree.kind(p).op()) {
                break;
            }
            if tree.kind(p).op() != OperatorKind::SemFilter {
                reachable.push(p);
            }
            cur = p;
        }
        if reachable.is_empty() {
            continue;
        }
        let target = reachable[rng.random_range(0..reachable.len())];
        let mut moved = tree.clone();
        if moved.detach(f).is_err() || moved.insert_above(f, target).is_err() || !validate(&moved).is_empty() {
            continue;
        }
        let low = calls_at(&tree, f, &data, &oracle)?;
        let high = calls_at(&moved, f, &data, &oracle)?;
        ensure(high <= low, || {
            format!(
                "seed {}: {high} calls above {target} but {low} above {anchor}",
                seed - 1
            )
        })?;
        samples += 1;
    }
    Ok(format!("{samples} samples, calls never grow along the path"))
}

fn corpus_results_agree() -> Outcome {
    let data = corpus::workload().generate().map_err(|e| e.to_string())?;
    let oracle = MockOracle::new(42, 0.5);
    let p = Pipeline::new(&data, &oracle);
    let mut runs_checked = 0;
    for (name, text) in corpus::QUERIES {
        let tree = p.parse(text).map_err(|e| format!("{name}: {e}"))?;
        let runs = p.run_all(&tree, &Strategy::ALL).map_err(|e| format!("{name}: {e}"))?;
        let reference = &runs[0].execution.relation;
        for r in &runs {
            let f1 = accuracy(reference, &r.execution.relation).f1;
            ensure(same_multiset(reference, &r.execution.relation) && f1 == 1.0, || {
                format!("{name}: {} differs (F1 {f1})", r.optimized.strategy)
            })?;
            runs_checked += 1;
        }
    }
    Ok(format!(
        "{} queries x 3 strategies, {runs_checked} runs with F1 = 1.0",
        corpus::QUERIES.len()
    ))
}

fn alpha_order() -> Outcome {
    let preset = Preset::builtin("alpha-sweep").map_err(|e| e.to_string())?;
    let report = run_preset(&preset, &zero_latency()).map_err(|e| e.to_string())?;
    let BenchReport::Alpha(report) = report else {
        return Err("alpha-sweep is not a sweep".into());
    };
    let rows = &report.rows;
    ensure(rows.len() == 8, || format!("{} grid points", rows.len()))?;
    let ratio_ok = rows.windows(2).all(|w| {
        let r = (w[1].alpha / w[0].alpha).log10();
        (r - 1.0).abs() < 1e-9
    });
    ensure(rows[0].alpha == 1e-7 && rows[7].alpha == 1.0 && ratio_ok, || {
        "grid is not 1e-7..1 log-spaced".into()
    })?;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        ensure(b.est_llm >= a.est_llm, || {
            format!("est_llm falls from {} to {} at alpha {}", a.est_llm, b.est_llm, b.alpha)
        })?;
        ensure(b.est_rel <= a.est_rel, || {
            format!("est_rel rises from {} to {} at alpha {}", a.est_rel, b.est_rel, b.alpha)
        })?;
        ensure(b.llm_calls >= a.llm_calls, || {
            format!(
                "llm_calls fall from {} to {} at alpha {}",
                a.llm_calls, b.llm_calls, b.alpha
            )
        })?;
    }
    let mut regimes: Vec<&str> = rows.iter().map(|r| r.regime.as_str()).collect();
    regimes.dedup();
    ensure(regimes == ["up", "split", "down"], || format!("regimes {regimes:?}"))?;
    let calls: Vec<u64> = rows.iter().map(|r| r.llm_calls).collect();
    Ok(format!("regimes up/split/down, calls {calls:?}"))
}

fn selectivity_grid() -> Outcome {
    let preset = Preset::builtin("sel-grid").map_err(|e| e.to_string())?;
    let report = run_preset(&preset, &zero_latency()).map_err(|e| e.to_string())?;
    let BenchReport::Grid(report) = report else {
        return Err("sel-grid is not a grid".into());
    };
    let plans = report.distinct_plans().len();
    ensure(plans >= 2, || format!("{plans} distinct plans"))?;
    ensure(report.has_join_boundary(), || {
        "no plan boundary along the join selectivity".into()
    })?;
    ensure(report.consistent(), || "equal plans with different call counts".into())?;
    Ok(format!(
        "{plans} plans over {} cells, boundary in join selectivity",
        report.rows.len()
    ))
}

fn optimizer_overhead() -> Outcome {
    let preset = Preset::builtin("overhead").map_err(|e| e.to_string())?;
    ensure(preset.oracle.latency_ms == 10.0, || {
        format!("latency {} ms", preset.oracle.latency_ms)
    })?;
    let report = run_preset(&preset, &BenchOptions::default()).map_err(|e| e.to_string())?;
    let BenchReport::Overhead(report) = report else {
        return Err("overhead is not an overhead run".into());
    };
    let largest = report.rows.iter().max_by_key(|r| r.filters).ok_or("no rows")?;
    ensure(largest.filters == 8 && largest.nodes >= 30, || {
        format!("largest query has n={} |V|={}", largest.filters, largest.nodes)
    })?;
    ensure(largest.placement_ms < 1000.0, || {
        format!("placement took {:.1} ms", largest.placement_ms)
    })?;
    for r in &report.rows {
        ensure(r.share < 0.02, || {
            format!("{}: optimizer share {:.4}", r.query, r.share)
        })?;
    }
    let worst = report.rows.iter().map(|r| r.share).fold(0.0, f64::max);
    Ok(format!(
        "n=8 |V|={} placement {:.2} ms, largest share {:.4}",
        largest.nodes, largest.placement_ms, worst
    ))
}

fn pullup_bound() -> Outcome {
    let data = corpus::workload().generate().map_err(|e| e.to_string())?;
    let catalog = data.catalog();
    let mut trees = Vec::new();
    for (name, text) in corpus::QUERIES {
        let tree = sql::parse(text, &catalog).map_err(|e| format!("{name}: {e}"))?;
        let (simple, _) = simplify_to_fixed_point(&tree).map_err(|e| format!("{name}: {e}"))?;
        trees.push((name.to_string(), tree));
        trees.push((format!("{name} simplified"), simple));
    }
    let opts = SynthOptions {
        max_tables: 4,
        max_filters: 8,
        ..Default::default()
    };
    for seed in 0..1000 {
        trees.push((format!("seed {seed}"), random_plan(seed, &opts)));
    }
    let mut worst = 0.0f64;
    for (name, tree) in &trees {
        let n = tree.semantic_filters().len();
        let d = tree.depth();
        let (_, stats) = pull_up(tree).map_err(|e| format!("{name}: {e}"))?;
        ensure(stats.passes <= n * d, || {
            format!("{name}: {} passes with n={n} d={d}", stats.passes)
        })?;
        if n * d > 0 {
            worst = worst.max(stats.passes as f64 / (n * d) as f64);
        }
    }
    Ok(format!("{} plans, passes at most {:.2} of n*d", trees.len(), worst))
}

/// Checks one executed plan: per semantic operator, executed calls equal the
/// distinct rendered prompts and, for filters, the distinct inputs.
fn cache_counts_match(label: &str, tree: &PlanTree, data: &Dataset, oracle: &MockOracle) -> Result<usize, String> {
    let serial = Executor::new(oracle)
        .execute(tree, data)
        .map_err(|e| format!("{label}: {e}"))?;
    let parallel = Executor::new(oracle)
        .with_options(ExecOptions {
            parallel: true,
            ..ExecOptions::default()
        })
        .execute(tree, data)
        .map_err(|e| format!("{label}: {e}"))?;
    ensure(
        serial.metrics.calls_per_node == parallel.metrics.calls_per_node
            && serial.metrics.llm_calls == parallel.metrics.llm_calls,
        || format!("{label}: parallel counts differ"),
    )?;
    let mut checked = 0;
    let mut total = 0u64;
    for (&id, node) in &tree.nodes {
        let op = node.kind.op();
        if !matches!(op, OperatorKind::SemFilter | OperatorKind::SemProject) {
            continue;
        }
        let calls = serial.metrics.calls_per_node.get(&id).copied().unwrap_or(0);
        total += calls;
        let prompts = distinct_prompts(tree, id, data, oracle)
            .map_err(|e| format!("{label}: {e}"))?
            .len() as u64;
        ensure(calls == prompts, || {
            format!("{label}: node {id} made {calls} calls for {prompts} prompts")
        })?;
        if op == OperatorKind::SemFilter {
            let inputs = count_distinct_inputs(tree, id, id, data, oracle).map_err(|e| format!("{label}: {e}"))? as u64;
            ensure(calls == inputs, || {
                format!("{label}: node {id} made {calls} calls for {inputs} inputs")
            })?;
        }
        checked += 1;
    }
    ensure(total == serial.metrics.llm_calls, || {
        format!(
            "{label}: per-node calls sum to {total}, run made {}",
            serial.metrics.llm_calls
        )
    })?;
    Ok(checked)
}

fn cache_exactness() -> Outcome {
    let data = corpus::workload().generate().map_err(|e| e.to_string())?;
    let oracle = MockOracle::new(42, 0.5);
    let p = Pipeline::new(&data, &oracle);
    let mut operators = 0;
    let mut plans = 0;
    for (name, text) in corpus::QUERIES {
        let tree = p.parse(text).map_err(|e| format!("{name}: {e}"))?;
        let stats = p.statistics(&tree).map_err(|e| format!("{name}: {e}"))?;
        for s in Strategy::ALL {
            let (opt, _) = p.optimize(&tree, s, &stats).map_err(|e| format!("{name}: {e}"))?;
            operators += cache_counts_match(&format!("{name} {s}"), &opt.tree, &data, &oracle)?;
            plans += 1;
        }
    }
    let opts = SynthOptions {
        max_tables: 3,
        max_filters: 4,
        sem_projects: true,
        ..Default::default()
    };
    let synth_oracle = MockOracle::new(3, 0.5);
    for seed in 0..100 {
        let tree = random_plan(seed, &opts);
        let data = synth_data(&tree, seed);
        operators += cache_counts_match(&format!("seed {seed}"), &tree, &data, &synth_oracle)?;
        plans += 1;
    }
    Ok(format!(
        "{plans} plans, {operators} semantic operators, serial and parallel agree"
    ))
}

const NOISE: &[&str] = &[
    "'",
    "\"",
    "(",
    ")",
    ",",
    ".",
    ";",
    "*",
    "=",
    "<",
    ">",
    "!",
    "-",
    "--",
    "{",
    "}",
    " ",
    "\n",
    "SELECT",
    "FROM",
    "WHERE",
    "JOIN",
    "ON",
    "AND",
    "OR",
    "NOT",
    "SEMANTIC(",
    "LIMIT",
    "GROUP BY",
    "ORDER BY",
    "IN (",
    "BETWEEN",
    "NULL",
    "1e999",
    "99999999999999999999",
    "é",
    "\u{0}",
    "`",
    "\\",
];

fn mutate(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    for _ in 0..rng.random_range(1..=4) {
        let at = rng.random_range(0..=chars.len());
        match rng.random_range(0..5) {
            0 if !chars.is_empty() => {
                let end = (at + rng.random_range(1..=8)).min(chars.len());
                chars.drain(at.min(chars.len())..end);
            }
            1 => {
                let noise = NOISE[rng.random_range(0..NOISE.len())];
                chars.splice(at..at, noise.chars());
            }
            2 if chars.len() > 1 => {
                let i = rng.random_range(0..chars.len() - 1);
                chars.swap(i, i + 1);
            }
            3 => chars.truncate(at),
            _ => {
                let end = (at + rng.random_range(1..=12)).min(chars.len());
                let copy: Vec<char> = chars[at..end].to_vec();
                chars.splice(at..at, copy);
            }
        }
    }
    chars.into_iter().collect()
}

fn parser_robustness() -> Outcome {
    let data = corpus::workload().generate().map_err(|e| e.to_string())?;
    let catalog = data.catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut rejected, mut crashes) = (0, 0);
    let mut unpositioned = BTreeSet::new();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for i in 0..10_000 {
        let base = corpus::QUERIES[i % corpus::QUERIES.len()].1;
        let text = mutate(&mut rng, base);
        match catch_unwind(AssertUnwindSafe(|| sql::parse(&text, &catalog))) {
            Err(_) => crashes += 1,
            Ok(Ok(_)) => {}
            Ok(Err(e)) => {
                rejected += 1;
                if e.line < 1 || e.column < 1 || e.offset > text.len() {
                    unpositioned.insert(format!("{:?} at {}:{} offset {}", text, e.line, e.column, e.offset));
                }
            }
        }
    }
    std::panic::set_hook(hook);
    ensure(crashes == 0, || format!("{crashes} crashes"))?;
    ensure(unpositioned.is_empty(), || {
        format!(
            "{} unpositioned errors, first {}",
            unpositioned.len(),
            unpositioned.first().unwrap()
        )
    })?;
    Ok(format!(
        "10000 mutations, {rejected} rejected with positions, 0 crashes"
    ))
}

fn main() {
    let checks: [Check; 10] = [
        ("call counts on the books/reviews example", call_counts),
        ("dp equals exhaustive placement", dp_matches_exhaustive),
        ("calls never grow when a filter moves up", monotone_along_paths),
        ("all strategies return the same results", corpus_results_agree),
        ("alpha trades llm cost for relational cost", alpha_order),
        ("selectivity grid has a join boundary", selectivity_grid),
        ("optimizer overhead", optimizer_overhead),
        ("pull-up pass bound", pullup_bound),
        ("function cache counts are exact", cache_exactness),
        ("parser survives mutated input", parser_robustness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
