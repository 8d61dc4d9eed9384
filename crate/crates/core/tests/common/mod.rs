#![allow(dead_code)]

pub mod launch;

use std::path::PathBuf;

use hsc::pipeline::{build, Build};
use hsc::runtime::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn build_fixture(program: &str, schedule: &str) -> Build {
    let src = fixture(&format!("{program}.jn"));
    let sch = fixture(&format!("{schedule}.sch"));
    build(&format!("{program}.jn"), &src, &format!("{schedule}.sch"), &sch, None)
        .unwrap_or_else(|e| panic!("{program} under {schedule}: {e}"))
}

pub struct Case {
    pub program: &'static str,
    pub schedules: &'static [&'static str],
    pub dcs: &'static [u64],
    /// Schedules that reassociate float reductions.
    pub reassociated: &'static [&'static str],
}

pub const CASES: &[Case] = &[
    Case { program: "matmul", schedules: &["matmul_seq", "matmul_mc", "matmul"], dcs: &[64, 16, 64], reassociated: &[] },
    Case {
        program: "array_sum",
        schedules: &["array_sum_seq", "array_sum_tree", "array_sum_gpu"],
        dcs: &[4096],
        reassociated: &[],
    },
    Case { program: "stencil", schedules: &["stencil_seq", "stencil_mc"], dcs: &[66], reassociated: &[] },
    Case { program: "frontier", schedules: &["frontier_seq", "frontier_mc"], dcs: &[24], reassociated: &[] },
    Case { program: "outer", schedules: &["outer_seq", "outer_mc", "outer_gpu"], dcs: &[32, 24], reassociated: &[] },
    Case { program: "dot", schedules: &["dot_seq", "dot_tree"], dcs: &[1024], reassociated: &["dot_tree"] },
    Case { program: "mapmap", schedules: &["mapmap_seq", "mapmap_fused", "mapmap_gpu"], dcs: &[256], reassociated: &[] },
];

fn f32s(rng: &mut ChaCha8Rng, n: u64) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-4.0f32..4.0)).collect()
}

/// Pseudo-random arguments for a fixture program.
pub fn inputs(program: &str, dcs: &[u64], seed: u64) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match program {
        "matmul" => {
            let (n, m, l) = (dcs[0], dcs[1], dcs[2]);
            vec![Value::f32_array(vec![n, m], &f32s(&mut rng, n * m)), Value::f32_array(vec![m, l], &f32s(&mut rng, m * l))]
        }
        "array_sum" | "double_write" => {
            let xs: Vec<i64> = (0..dcs[0]).map(|_| rng.gen_range(-1_000_000..1_000_000)).collect();
            vec![Value::i64_array(vec![dcs[0]], &xs)]
        }
        "stencil" | "pipeline" => vec![Value::f32_array(vec![dcs[0]], &f32s(&mut rng, dcs[0]))],
        "frontier" => {
            let n = dcs[0];
            let adj: Vec<Value> = (0..n * n).map(|_| Value::Scalar(hsc::ir::ScalarKind::U8, rng.gen_bool(0.12) as u64)).collect();
            vec![Value::array(vec![n, n], adj)]
        }
        "outer" => vec![
            Value::f32_array(vec![dcs[0]], &f32s(&mut rng, dcs[0])),
            Value::f32_array(vec![dcs[1]], &f32s(&mut rng, dcs[1])),
        ],
        "dot" => vec![
            Value::f32_array(vec![dcs[0]], &f32s(&mut rng, dcs[0])),
            Value::f32_array(vec![dcs[0]], &f32s(&mut rng, dcs[0])),
        ],
        "mapmap" => {
            let xs: Vec<i32> = (0..dcs[0]).map(|_| rng.gen_range(-100_000..100_000)).collect();
            vec![Value::i32_array(vec![dcs[0]], &xs)]
        }
        p => panic!("no input generator for {p}"),
    }
}
