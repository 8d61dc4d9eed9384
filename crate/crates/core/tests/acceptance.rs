//! One line per acceptance criterion, `[PASS]` or `[FAIL]`, with the
//! measured numbers. Tolerances are the constants below.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use common::launch::{brute_forest, plan, t, td, Red, Tree};
use common::{build_fixture, fixture, inputs, CASES};
use hsc::backend::Role;
use hsc::pipeline::build;
use hsc::runtime::{RunOptions, Value};

const ORACLE_BUDGET_S: f64 = 60.0;
const FLOAT_REL_TOL: f64 = 1e-4;
const SUM_LEN_LOG2: u32 = 24;
const SUM_BUDGET_S: f64 = 30.0;
const MATMUL_N: u64 = 512;
const MATMUL_BUDGET_S: f64 = 120.0;
const SPEEDUP_MIN: f64 = 3.0;
const PAR_WORKERS: usize = 8;

/// Written straight to stdout so the line shows without `--nocapture`.
fn report(name: &str, ok: bool, detail: String) {
    let line = format!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(ok, "criterion `{name}` not met");
}

fn opts(workers: usize) -> RunOptions {
    RunOptions { workers, race_check: false }
}

#[test]
fn oracle_equivalence_suite() {
    let start = Instant::now();
    let mut runs = 0;
    let mut bad = vec![];
    for case in CASES {
        for &sch in case.schedules {
            let b = build_fixture(case.program, sch);
            for seed in 0..3 {
                let args = inputs(case.program, case.dcs, seed);
                let want = b.oracle(None, case.dcs, &args).unwrap();
                let got = b.run(None, case.dcs, &args, RunOptions { workers: 4, race_check: true });
                runs += 1;
                let ok = match &got {
                    Ok((v, _)) if case.reassociated.contains(&sch) => v.approx_eq(&want, FLOAT_REL_TOL),
                    Ok((v, _)) => *v == want,
                    Err(_) => false,
                };
                if !ok {
                    bad.push(format!("{sch}/{seed}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let programs = CASES.len();
    let ok = bad.is_empty() && secs < ORACLE_BUDGET_S && programs == 7 && CASES.iter().all(|c| c.schedules.len() >= 2);
    report(
        "oracle-equivalence",
        ok,
        format!("{programs} programs, {runs} runs, mismatches {bad:?}, {secs:.1}s (budget {ORACLE_BUDGET_S}s)"),
    );
}

/// Flattened fork dimensions of every perfectly nested chain, per function,
/// read back from an IR dump.
fn nests(ir: &str) -> Vec<Vec<String>> {
    let mut out = vec![];
    for func in ir.split("\n@").filter(|s| !s.trim().is_empty()) {
        let mut forks: BTreeMap<u64, (Vec<String>, u64)> = BTreeMap::new();
        for line in func.lines() {
            let Some((id, rest)) = line.trim().split_once(" = fork<") else { continue };
            let (facs, rest) = rest.split_once(">(").unwrap();
            let ctrl: u64 = rest.split_once(')').unwrap().0.parse().unwrap();
            forks.insert(id.parse().unwrap(), (facs.split(", ").map(String::from).collect(), ctrl));
        }
        for (&id, (_, ctrl)) in &forks {
            if forks.contains_key(ctrl) {
                continue;
            }
            let mut dims = vec![];
            let mut cur = Some(id);
            while let Some(k) = cur {
                dims.extend(forks[&k].0.iter().cloned());
                cur = forks.iter().find(|(_, v)| v.1 == k).map(|(&c, _)| c);
            }
            out.push(dims);
        }
    }
    out
}

#[test]
fn matmul_schedule_loop_structure() {
    let b = build("matmul.jn", &fixture("matmul.jn"), "matmul.sch", &fixture("matmul.sch"), Some("all")).unwrap();
    let after = |line: usize| {
        let s = b.snapshots.iter().rfind(|s| s.line == line).unwrap_or_else(|| panic!("no snapshot for line {line}"));
        let mut ns = nests(&s.ir);
        ns.sort();
        ns.concat().join(" ")
    };
    let steps = [
        ("chunk", 3, "4 n/4 4 l/4 m"),
        ("block reshape", 4, "4 4 n/4 l/4 m"),
        ("tile", 9, "4 4 n/64 16 l/64 16 m/16 16"),
        ("tile reshape", 10, "4 4 n/64 l/64 m/16 16 16 16"),
    ];
    let mut bad = vec![];
    for (step, line, want) in steps {
        let got = after(line);
        if got != want {
            bad.push(format!("{step} (line {line}): got `{got}`, want `{want}`"));
        }
    }
    report(
        "matmul-nest-structure",
        bad.is_empty(),
        if bad.is_empty() { "chunk, block reshape, tile and tile reshape nests match".into() } else { bad.join("; ") },
    );
}

#[test]
fn spill_counts() {
    let mut nonzero = vec![];
    let mut builds = 0;
    for case in CASES {
        for &sch in case.schedules {
            let s = build_fixture(case.program, sch).exe.total_spills();
            builds += 1;
            if s != 0 {
                nonzero.push(format!("{sch}={s}"));
            }
        }
    }
    let sp = build_fixture("pipeline", "pipeline").exe.total_spills();
    builds += 1;
    if sp != 0 {
        nonzero.push(format!("pipeline={sp}"));
    }
    let dw = build_fixture("double_write", "double_write").exe.total_spills();
    report(
        "zero-spill",
        nonzero.is_empty() && dw == 1,
        format!("{builds} builds with spills {nonzero:?}; double-write spills {dw} (want 1)"),
    );
}

fn hand_nests() -> Vec<(&'static str, Vec<Tree>)> {
    use Red::*;
    vec![
        ("rule1 leaf", vec![t(64, Sequential, vec![])]),
        ("rule1 over children", vec![t(8, Sequential, vec![t(16, None, vec![]), t(32, Parallel, vec![])])]),
        ("rule1 mixed reduces", vec![t(8, Mixed, vec![t(4, None, vec![])])]),
        ("rule2 leaf", vec![t(64, Monoid, vec![])]),
        ("rule2 factor 1", vec![t(1, Monoid, vec![])]),
        ("rule2 under parallel", vec![t(4, Parallel, vec![t(128, Monoid, vec![])])]),
        ("rule2 inner node", vec![t(8, Monoid, vec![t(16, None, vec![])])]),
        ("rule3 16x32", vec![t(16, None, vec![t(32, Parallel, vec![])])]),
        ("rule3 symbolic", vec![td(0, Parallel, vec![td(1, None, vec![]), t(3, Sequential, vec![t(5, None, vec![])])])]),
        ("rule3 deep", vec![t(2, None, vec![t(3, None, vec![t(5, Parallel, vec![t(7, Monoid, vec![])])])])]),
        ("synthetic root", vec![t(16, None, vec![]), t(8, Sequential, vec![t(64, None, vec![])]), t(40, Monoid, vec![])]),
        ("synthetic root symbolic", vec![td(0, None, vec![t(2, None, vec![])]), td(1, Parallel, vec![])]),
    ]
}

#[test]
fn launch_plan_rules() {
    let nests = hand_nests();
    let mut bad = vec![];
    for (name, ts) in &nests {
        for dcs in [[1u64, 1], [7, 3], [64, 100]] {
            let p = plan(ts, &dcs);
            let want = brute_forest(ts, &dcs);
            let root_parallel = ts.len() == 1 && matches!(ts[0].red, Red::None | Red::Parallel);
            let block_level = p.root_role == Some(Role::BlockLevel);
            if p.size != want || block_level != root_parallel {
                bad.push(format!("{name} at {dcs:?}: planned {} want {want}", p.size));
            }
        }
    }
    report("launch-plan", nests.len() == 12 && bad.is_empty(), format!("{} nests x 3 bindings, mismatches {bad:?}", nests.len()));
}

#[test]
fn reduction_tree_speedup() {
    let start = Instant::now();
    let n = 1u64 << SUM_LEN_LOG2;
    let xs: Vec<i64> = (1..=n as i64).collect();
    let args = [Value::i64_array(vec![n], &xs)];
    drop(xs);
    let seq = build_fixture("array_sum", "array_sum_seq");
    let tree = build_fixture("array_sum", "array_sum_tree");
    let (a, ma) = seq.run(None, &[n], &args, opts(1)).unwrap();
    let (b, mb) = tree.run(None, &[n], &args, opts(PAR_WORKERS)).unwrap();
    let want = Value::i64((n * (n + 1) / 2) as i64);
    let speedup = ma.wall_ms / mb.wall_ms;
    let secs = start.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    report(
        "reduction-tree-speedup",
        a == want && b == want && speedup >= SPEEDUP_MIN && secs < SUM_BUDGET_S,
        format!(
            "2^{SUM_LEN_LOG2} sum exact={}, sequential {:.0}ms, tree at {PAR_WORKERS} workers {:.0}ms, speedup {speedup:.2}x (need {SPEEDUP_MIN}x), {secs:.1}s (budget {SUM_BUDGET_S}s), {cores} core(s) available",
            a == want && b == want,
            ma.wall_ms,
            mb.wall_ms
        ),
    );
}

#[test]
fn multicore_matmul_speedup() {
    let start = Instant::now();
    let n = MATMUL_N;
    let dcs = [n, n, n];
    let args = inputs("matmul", &dcs, 5);
    let mc = build_fixture("matmul", "matmul_mc");
    let (one, m1) = mc.run(None, &dcs, &args, opts(1)).unwrap();
    let (many, m8) = mc.run(None, &dcs, &args, opts(PAR_WORKERS)).unwrap();
    let speedup = m1.wall_ms / m8.wall_ms;
    let secs = start.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    report(
        "multicore-speedup",
        one == many && speedup >= SPEEDUP_MIN && secs < MATMUL_BUDGET_S,
        format!(
            "{n}^3 f32 matmul bit-equal={}, 1 worker {:.0}ms, {PAR_WORKERS} workers {:.0}ms, speedup {speedup:.2}x (need {SPEEDUP_MIN}x), {secs:.1}s (budget {MATMUL_BUDGET_S}s), {cores} core(s) available",
            one == many,
            m1.wall_ms,
            m8.wall_ms
        ),
    );
}

#[test]
fn determinism() {
    let programs = [
        ("array_sum", "array_sum_tree", vec![4096u64]),
        ("mapmap", "mapmap_fused", vec![512]),
        ("frontier", "frontier_mc", vec![24]),
        ("matmul", "matmul", vec![64, 16, 64]),
    ];
    let mut bad = vec![];
    let mut compared = 0;
    for (p, s, dcs) in &programs {
        let dumps = |b: &hsc::pipeline::Build| ["ir", "dot", "exec"].map(|f| b.emit(f).unwrap());
        let b0 = build_fixture(p, s);
        let d0 = dumps(&b0);
        for _ in 0..2 {
            if dumps(&build_fixture(p, s)) != d0 {
                bad.push(format!("{s} dumps"));
            }
        }
        let args = inputs(p, dcs, 11);
        let (first, _) = b0.run(None, dcs, &args, opts(1)).unwrap();
        for workers in [1, 2, 8] {
            for _ in 0..3 {
                let (v, _) = b0.run(None, dcs, &args, opts(workers)).unwrap();
                compared += 1;
                if v != first {
                    bad.push(format!("{s} at {workers} workers"));
                }
            }
        }
    }
    report("determinism", bad.is_empty(), format!("{} programs, {compared} runs compared, differences {bad:?}", programs.len()));
}

#[test]
fn pipeline_copies() {
    let b = build_fixture("pipeline", "pipeline");
    let n = 1000u64;
    let tensor = n * 4;
    let planned = b.exe.planned_copies();
    let planned_bytes: u64 =
        b.exe.plan.functions.iter().flat_map(|p| &p.copies).map(|c| c.bytes.eval(&[n]).unwrap()).sum();
    let args = inputs("pipeline", &[n], 2);
    let (v, m) = b.run(None, &[n], &args, opts(2)).unwrap();
    let want = b.oracle(None, &[n], &args).unwrap();
    report(
        "inter-device-copies",
        planned == 2 && planned_bytes == 2 * tensor && m.copies == 2 && m.copy_bytes == 2 * tensor && v == want,
        format!(
            "planned {planned} copies of {planned_bytes} bytes, executed {} copies of {} bytes (want 2 and {})",
            m.copies,
            m.copy_bytes,
            2 * tensor
        ),
    );
}
