mod common;

use common::launch::{brute_forest, plan, Factor, Red, Tree};
use hsc::gcm::MemSpace;
use hsc::pipeline::{build, build_unscheduled};
use hsc::runtime::{RunOptions, Value};
use proptest::prelude::*;

fn red() -> impl Strategy<Value = Red> {
    prop_oneof![Just(Red::None), Just(Red::Parallel), Just(Red::Monoid), Just(Red::Sequential), Just(Red::Mixed)]
}

fn factor() -> impl Strategy<Value = Factor> {
    prop_oneof![(1u64..70).prop_map(Factor::Lit), (0usize..2).prop_map(Factor::Dc)]
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = (factor(), red()).prop_map(|(factor, red)| Tree { factor, red, kids: vec![] });
    leaf.prop_recursive(3, 16, 3, |inner| {
        (factor(), red(), prop::collection::vec(inner, 0..3)).prop_map(|(factor, red, kids)| Tree { factor, red, kids })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn launch_size_matches_the_rules(ts in prop::collection::vec(tree(), 0..4), d0 in 1u64..50, d1 in 1u64..50) {
        let dcs = [d0, d1];
        prop_assert_eq!(plan(&ts, &dcs).size, brute_forest(&ts, &dcs));
    }
}

/// Source with one or two writers of copies of the same parameter.
fn writers_src(writers: &[(u64, i64)]) -> String {
    let mut body = String::new();
    let mut ret = vec!["a[0]".to_string()];
    for (w, (idx, val)) in writers.iter().enumerate() {
        body += &format!("  let c{w} = a;\n  c{w}[{idx}] = {val};\n");
        ret.push(format!("c{w}[{idx}]"));
    }
    format!("#[entry] fn f<n>(a: i64[n]) -> i64 {{\n{body}  return {};\n}}\n", ret.join(" + "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn second_writer_adds_exactly_one_spill(i0 in 0u64..4, v0 in -50i64..50, i1 in 0u64..4, v1 in -50i64..50) {
        let one = build_unscheduled("t.jn", &writers_src(&[(i0, v0)])).unwrap();
        let two = build_unscheduled("t.jn", &writers_src(&[(i0, v0), (i1, v1)])).unwrap();
        prop_assert_eq!(two.exe.total_spills(), one.exe.total_spills() + 1);
        let a = Value::i64_array(vec![4], &[3, 1, 4, 1]);
        let (got, _) = two.run(None, &[4], std::slice::from_ref(&a), RunOptions { workers: 1, race_check: false }).unwrap();
        prop_assert_eq!(got, two.oracle(None, &[4], &[a]).unwrap());
    }

    #[test]
    fn allocations_never_overlap(
        arrays in prop::collection::vec((prop::sample::select(vec!["i8", "i32", "f64", "i64"]), 1u64..5), 1..6),
        n in 1u64..9,
    ) {
        let mut body = String::new();
        let mut uses = vec![];
        for (i, (ty, mult)) in arrays.iter().enumerate() {
            body += &format!("  let x{i} : {ty}[n * {mult}];\n  x{i}[0] = 1 as {ty};\n");
            uses.push(format!("x{i}[0] as i64"));
        }
        let src = format!(
            "fn g<n>(k: i64) -> i64 {{ let t : i16[n]; t[0] = 2; return t[0] as i64 + k; }}\n#[entry] fn f<n>() -> i64 {{\n{body}  let y = g::<n>({});\n  return y;\n}}\n",
            uses.join(" + ")
        );
        let b = build("t.jn", &src, "t.sch", "host(*);", None).unwrap();
        for p in &b.exe.plan.functions {
            for mem in [MemSpace::Host, MemSpace::GpuSim] {
                let frame = p.frame[mem.index()].eval(&[n]).unwrap();
                let mut spans: Vec<(u64, u64)> = p
                    .allocations
                    .iter()
                    .filter(|a| a.mem == mem)
                    .map(|a| {
                        let o = a.offset.eval(&[n]).unwrap();
                        (o, o + a.size.eval(&[n]).unwrap() * a.instances.eval(&[n]).unwrap())
                    })
                    .collect();
                spans.sort();
                for w in spans.windows(2) {
                    prop_assert!(w[0].1 <= w[1].0, "{:?} in {}", spans, p.name);
                }
                prop_assert!(spans.iter().all(|s| s.1 <= frame));
            }
        }
        let (v, _) = b.run(None, &[n], &[], RunOptions { workers: 1, race_check: false }).unwrap();
        prop_assert_eq!(v, Value::i64(arrays.len() as i64 + 2));
    }

    #[test]
    fn any_chunk_count_preserves_the_sum(k in 1u32..5, per in 1u64..40, seed in any::<u64>(), workers in 1usize..5) {
        let chunks = 1u64 << k;
        let n = chunks * per;
        let sch = format!(
            "forkify(*); infer-attributes(*);
fork-chunk![{chunks}](array_sum@sum);
let (outer, inner) = fork-reshape[[0], [1]](array_sum@sum);
monoid-reassociate(inner);
let (top, bottom) = fork-fission(outer);
host(array_sum);"
        );
        let b = build("array_sum.jn", &common::fixture("array_sum.jn"), "t.sch", &sch, None).unwrap();
        let args = common::inputs("array_sum", &[n], seed);
        let want = args[0].scalars().iter().fold(0i64, |s, &(_, x)| s.wrapping_add(x as i64));
        let (got, _) = b.run(None, &[n], &args, RunOptions { workers, race_check: true }).unwrap();
        prop_assert_eq!(got, Value::i64(want));
    }

    #[test]
    fn outputs_do_not_depend_on_worker_count(seed in any::<u64>(), workers in 2usize..6) {
        for (program, schedule, dcs) in [("mapmap", "mapmap_fused", vec![96u64]), ("outer", "outer_mc", vec![12, 8])] {
            let b = common::build_fixture(program, schedule);
            let args = common::inputs(program, &dcs, seed);
            let (one, _) = b.run(None, &dcs, &args, RunOptions { workers: 1, race_check: false }).unwrap();
            let (many, _) = b.run(None, &dcs, &args, RunOptions { workers, race_check: false }).unwrap();
            prop_assert_eq!(one, many);
        }
    }
}
