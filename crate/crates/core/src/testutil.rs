use crate::frontend::compile_source;
use crate::ir::{IrModule, NodeKind};
use crate::runtime::{oracle_execute, Value};
use crate::sched::{parse_schedule, run_schedule};

/// Source lowered as is, and after running `sch`.
pub fn scheduled(src: &str, sch: &str) -> Result<(IrModule, IrModule), String> {
    let m0 = compile_source("t.jn", src).map_err(|e| e.to_string())?;
    let mut m = m0.clone();
    let stmts = parse_schedule("t.sch", sch).map_err(|e| e.to_string())?;
    run_schedule(&mut m, &stmts, &mut |_, _, _| Ok(())).map_err(|e| e.to_string())?;
    Ok((m0, m))
}

pub fn run(m: &IrModule, name: &str, dcs: &[u64], args: Vec<Value>) -> Value {
    oracle_execute(m, m.find(name).unwrap(), dcs, args).unwrap()
}

/// Factor lists of a chain of perfectly nested forks, outermost first.
pub fn factor_lists(m: &IrModule, name: &str) -> Vec<Vec<String>> {
    let f = &m.functions[m.find(name).unwrap().idx()];
    let mut out = vec![];
    let mut cur = f
        .forks()
        .into_iter()
        .find(|&k| !matches!(f.kind(k), NodeKind::Fork { control, .. } if f.kind(*control).is_fork()));
    while let Some(k) = cur {
        let (_, fs) = f.kind(k).try_fork().unwrap();
        out.push(fs.iter().map(|d| f.dc_display(d)).collect());
        cur = f.forks().into_iter().find(|&x| matches!(f.kind(x), NodeKind::Fork { control, .. } if *control == k));
    }
    out
}

/// Factor list of every fork of a function, in id order.
pub fn all_factors(m: &IrModule, name: &str) -> Vec<Vec<String>> {
    let f = &m.functions[m.find(name).unwrap().idx()];
    f.forks()
        .into_iter()
        .map(|k| f.kind(k).try_fork().unwrap().1.iter().map(|d| f.dc_display(d)).collect())
        .collect()
}

pub fn ints(xs: &[i64]) -> Value {
    Value::i64_array(vec![xs.len() as u64], xs)
}

pub fn mat(rows: u64, cols: u64, seed: u32) -> Value {
    let xs: Vec<f32> =
        (0..rows * cols).map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 17) as f32 - 8.0).collect();
    Value::f32_array(vec![rows, cols], &xs)
}
