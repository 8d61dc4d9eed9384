use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::Executable;
use crate::gcm::MemSpace;
use crate::ir::{DynConst, ScalarKind, Type};

use super::exec::{Machine, Space};
use super::ops;
use super::value::{eval_dims, ArrayVal, Value};

type R<T> = Result<T, String>;

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub workers: usize,
    pub race_check: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { workers: rayon::current_num_threads(), race_check: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub wall_ms: f64,
    pub copies: u64,
    pub copy_bytes: u64,
    pub spills: usize,
    pub tasks: u64,
    pub calls: u64,
    pub host_bytes: u64,
    pub gpusim_bytes: u64,
}

impl RunMetrics {
    pub fn trailer(&self) -> String {
        format!(
            "metrics: wall_ms={:.3} copies={} copy_bytes={} spills={} tasks={} calls={} host_bytes={} gpusim_bytes={}",
            self.wall_ms, self.copies, self.copy_bytes, self.spills, self.tasks, self.calls, self.host_bytes, self.gpusim_bytes
        )
    }
}

fn ev(d: &DynConst, dcs: &[u64]) -> R<u64> {
    d.eval(dcs).map_err(|e| e.to_string())
}

fn align_up(x: u64, a: u64) -> u64 {
    x.div_ceil(a.max(1)) * a.max(1)
}

pub fn write_value(sp: &Space, addr: u64, v: &Value, t: &Type, dcs: &[u64]) -> R<()> {
    match (v, t) {
        (Value::Scalar(_, bits), Type::Scalar(k)) => sp.store(addr, k.bytes(), *bits),
        (Value::Product(vs), Type::Product(fs)) if vs.len() == fs.len() => {
            for (i, (x, ft)) in vs.iter().zip(fs).enumerate() {
                write_value(sp, addr + ev(&Type::field_offset(fs, i), dcs)?, x, ft, dcs)?;
            }
            Ok(())
        }
        (Value::Summation(tag, x), Type::Summation(vs)) if *tag < vs.len() => {
            sp.store(addr, 8, *tag as u64)?;
            write_value(sp, addr + 8, x, &vs[*tag], dcs)
        }
        (Value::Array(a), Type::Array(e, ext)) => {
            if a.dims != eval_dims(ext, dcs)? {
                return Err(format!("array of shape {:?} does not match type {t}", a.dims));
            }
            let es = ev(&e.size(), dcs)?;
            for (i, x) in a.data.iter().enumerate() {
                write_value(sp, addr + i as u64 * es, x, e, dcs)?;
            }
            Ok(())
        }
        _ => Err(format!("value {v} does not match type {t}")),
    }
}

pub fn read_value(sp: &Space, addr: u64, t: &Type, dcs: &[u64]) -> R<Value> {
    Ok(match t {
        Type::Control => return Err("cannot read a control value".into()),
        Type::Scalar(k) => Value::Scalar(*k, ops::canon(*k, sp.load(addr, k.bytes())?)),
        Type::Product(fs) => {
            let mut out = vec![];
            for (i, ft) in fs.iter().enumerate() {
                out.push(read_value(sp, addr + ev(&Type::field_offset(fs, i), dcs)?, ft, dcs)?);
            }
            Value::Product(out)
        }
        Type::Summation(vs) => {
            let tag = sp.load(addr, 8)? as usize;
            let vt = vs.get(tag).ok_or_else(|| format!("invalid summation tag {tag}"))?;
            Value::Summation(tag, Box::new(read_value(sp, addr + 8, vt, dcs)?))
        }
        Type::Array(e, ext) => {
            let dims = eval_dims(ext, dcs)?;
            let n: u64 = dims.iter().product();
            let es = ev(&e.size(), dcs)?;
            let mut data = Vec::with_capacity(n as usize);
            for i in 0..n {
                data.push(read_value(sp, addr + i * es, e, dcs)?);
            }
            Value::Array(Arc::new(ArrayVal { dims, data }))
        }
    })
}

/// Runs an executable; device buffers are kept between runs and only
/// reallocated when a run needs more memory.
pub struct Runner {
    pub exe: Arc<Executable>,
    pub opts: RunOptions,
    machine: Option<Arc<Machine>>,
    pool: rayon::ThreadPool,
    grown: usize,
}

impl Runner {
    pub fn new(exe: Executable, opts: RunOptions) -> R<Runner> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers.max(1))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Runner { exe: Arc::new(exe), opts, machine: None, pool, grown: 0 })
    }

    fn machine(&mut self, sizes: [u64; 2]) -> Arc<Machine> {
        let fits = self.machine.as_ref().is_some_and(|m| {
            (m.mem[0].len() as u64) >= sizes[0] && (m.mem[1].len() as u64) >= sizes[1] && Arc::strong_count(m) == 1
        });
        if !fits {
            self.grown += 1;
            self.machine = Some(Arc::new(Machine::new(
                self.exe.clone(),
                [sizes[0] as usize, sizes[1] as usize],
                self.opts.workers,
                self.opts.race_check,
            )));
        }
        let m = self.machine.clone().unwrap();
        for c in [&m.counters.copies, &m.counters.copy_bytes, &m.counters.tasks, &m.counters.calls] {
            c.store(0, Ordering::Relaxed);
        }
        m
    }

    /// How many times device buffers have been (re)allocated.
    pub fn buffer_allocations(&self) -> usize {
        self.grown
    }

    pub fn run(&mut self, entry: Option<&str>, dcs: &[u64], args: &[Value]) -> R<(Value, RunMetrics)> {
        let fi = match entry {
            Some(name) => self.exe.find(name).ok_or_else(|| format!("no function named `{name}`"))?,
            None => self.exe.entry().ok_or("no entry function")?,
        };
        let exe = self.exe.clone();
        let ef = &exe.functions[fi];
        if dcs.len() != ef.dc_params.len() {
            return Err(format!(
                "`{}` takes {} dynamic constants ({}), got {}",
                ef.name,
                ef.dc_params.len(),
                ef.dc_params.join(", "),
                dcs.len()
            ));
        }
        if args.len() != ef.param_types.len() {
            return Err(format!("`{}` takes {} arguments, got {}", ef.name, ef.param_types.len(), args.len()));
        }
        super::exec::check_constraints(ef, dcs)?;
        for (i, (a, t)) in args.iter().zip(&ef.param_types).enumerate() {
            if !a.conforms(t, dcs) {
                return Err(format!("argument {i} of `{}` does not match type {t}", ef.name));
            }
        }
        let mem = ef.mem;
        let mut cursor = 0u64;
        let mut staged = vec![];
        for t in &ef.param_types {
            if t.is_collection() {
                cursor = align_up(cursor, t.align());
                staged.push(Some(cursor));
                cursor += ev(&t.size(), dcs)?;
            } else {
                staged.push(None);
            }
        }
        let mut base = [0u64; 2];
        base[mem.index()] = align_up(cursor, 8);
        let sizes = [base[0] + ev(&ef.frame[0], dcs)?, base[1] + ev(&ef.frame[1], dcs)?];
        let m = self.machine(sizes);
        for sp in &m.mem {
            sp.fill_zero(0, sp.len() as u64)?;
        }
        let space = &m.mem[mem.index()];
        let mut regs = vec![];
        for ((a, t), at) in args.iter().zip(&ef.param_types).zip(&staged) {
            match at {
                Some(addr) => {
                    write_value(space, *addr, a, t, dcs)?;
                    regs.push(*addr);
                }
                None => regs.push(a.scalar_bits()?),
            }
        }
        let start = Instant::now();
        let r = self.pool.install(|| m.call(fi, dcs, &regs, base))?;
        let wall = start.elapsed();
        let out = if ef.return_type.is_collection() {
            read_value(space, r, &ef.return_type, dcs)?
        } else {
            let k = ef.return_type.as_scalar().ok_or("unsupported return type")?;
            Value::Scalar(k, r)
        };
        let metrics = RunMetrics {
            wall_ms: wall.as_secs_f64() * 1e3,
            copies: m.counters.copies.load(Ordering::Relaxed),
            copy_bytes: m.counters.copy_bytes.load(Ordering::Relaxed),
            spills: exe.total_spills(),
            tasks: m.counters.tasks.load(Ordering::Relaxed),
            calls: m.counters.calls.load(Ordering::Relaxed),
            host_bytes: sizes[MemSpace::Host.index()],
            gpusim_bytes: sizes[MemSpace::GpuSim.index()],
        };
        Ok((out, metrics))
    }
}

fn dtype(k: ScalarKind) -> &'static str {
    k.name()
}

fn kind_of(name: &str) -> R<ScalarKind> {
    use ScalarKind::*;
    [Bool, I8, I16, I32, I64, U8, U16, U32, U64, F32, F64]
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| format!("unknown dtype `{name}`"))
}

fn scalar_json(k: ScalarKind, b: u64) -> serde_json::Value {
    match k {
        ScalarKind::Bool => json!(b != 0),
        k if k.is_float() => json!(ops::to_f64(k, b)),
        k if k.is_signed() => json!(b as i64),
        _ => json!(b),
    }
}

fn scalar_from_json(k: ScalarKind, v: &serde_json::Value) -> R<u64> {
    let bad = || format!("`{v}` is not a valid {}", k.name());
    Ok(match k {
        ScalarKind::Bool => v.as_bool().ok_or_else(bad)? as u64,
        k if k.is_float() => ops::from_f64(k, v.as_f64().ok_or_else(bad)?),
        k if k.is_signed() => ops::canon(k, v.as_i64().ok_or_else(bad)? as u64),
        k => ops::canon(k, v.as_u64().ok_or_else(bad)?),
    })
}

/// Tensor form `{"dtype", "shape", "data"}`; scalars have an empty shape.
pub fn value_to_json(v: &Value) -> R<serde_json::Value> {
    match v {
        Value::Scalar(k, b) => Ok(json!({"dtype": dtype(*k), "shape": [], "data": [scalar_json(*k, *b)]})),
        Value::Array(a) => {
            let mut kind = None;
            let mut data = vec![];
            for x in &a.data {
                match x {
                    Value::Scalar(k, b) => {
                        kind = Some(*k);
                        data.push(scalar_json(*k, *b));
                    }
                    _ => return Err("only arrays of scalars convert to tensors".into()),
                }
            }
            let k = kind.map_or("f32", dtype);
            Ok(json!({"dtype": k, "shape": a.dims, "data": data}))
        }
        _ => Err(format!("{v} has no tensor form")),
    }
}

pub fn value_from_json(j: &serde_json::Value) -> R<Value> {
    let k = kind_of(j["dtype"].as_str().ok_or("tensor without dtype")?)?;
    let shape: Vec<u64> = j["shape"]
        .as_array()
        .ok_or("tensor without shape")?
        .iter()
        .map(|x| x.as_u64().ok_or_else(|| format!("bad extent {x}")))
        .collect::<R<_>>()?;
    let data = j["data"].as_array().ok_or("tensor without data")?;
    let n: u64 = shape.iter().product();
    if data.len() as u64 != n {
        return Err(format!("tensor of shape {shape:?} has {} elements", data.len()));
    }
    let vals: Vec<Value> = data.iter().map(|x| Ok(Value::Scalar(k, scalar_from_json(k, x)?))).collect::<R<_>>()?;
    if shape.is_empty() {
        return Ok(vals.into_iter().next().unwrap());
    }
    Ok(Value::array(shape, vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::build;

    fn exe(program: &str, schedule: &str) -> Executable {
        let src = std::fs::read_to_string(format!("{}/fixtures/{program}.jn", env!("CARGO_MANIFEST_DIR"))).unwrap();
        let sch = std::fs::read_to_string(format!("{}/fixtures/{schedule}.sch", env!("CARGO_MANIFEST_DIR"))).unwrap();
        build(program, &src, schedule, &sch, None).unwrap().exe
    }

    fn runner(program: &str, schedule: &str, workers: usize) -> Runner {
        Runner::new(exe(program, schedule), RunOptions { workers, race_check: false }).unwrap()
    }

    fn grid(n: u64, seed: u64) -> Value {
        let xs: Vec<f32> = (0..n * n).map(|i| ((i * 31 + seed * 7) % 23) as f32 * 0.25 - 2.0).collect();
        Value::f32_array(vec![n, n], &xs)
    }

    #[test]
    fn small_matmul_runs_sequentially() {
        let mut r = runner("matmul", "matmul_seq", 1);
        let a = Value::f32_array(vec![4, 4], &(0..16).map(|x| x as f32).collect::<Vec<_>>());
        let mut id = vec![0f32; 16];
        for i in 0..4 {
            id[i * 5] = 1.0;
        }
        let (v, m) = r.run(None, &[4, 4, 4], &[a.clone(), Value::f32_array(vec![4, 4], &id)]).unwrap();
        assert_eq!(v, a);
        assert_eq!(m.copies, 0);
    }

    #[test]
    fn unmet_divisibility_is_reported_before_running() {
        let mut r = runner("matmul", "matmul", 1);
        let a = Value::f32_array(vec![6, 6], &[0.0; 36]);
        let err = r.run(None, &[6, 6, 6], &[a.clone(), a]).unwrap_err();
        assert!(err.contains("violated") && err.contains("does not divide 6"), "{err}");
        assert_eq!(r.buffer_allocations(), 0);
    }

    #[test]
    fn multicore_stencil_is_bit_equal_across_workers() {
        let a = Value::f32_array(vec![66], &(0..66).map(|i| ((i * 37) % 19) as f32 * 0.5).collect::<Vec<_>>());
        let (one, _) = runner("stencil", "stencil_seq", 1).run(None, &[66], std::slice::from_ref(&a)).unwrap();
        let (four, m) = runner("stencil", "stencil_mc", 4).run(None, &[66], &[a]).unwrap();
        assert_eq!(one, four);
        assert!(m.tasks > 0);
    }

    #[test]
    fn reduction_tree_sums_two_to_the_sixteen() {
        let n = 1u64 << 16;
        let xs: Vec<i64> = (0..n as i64).collect();
        let (v, _) = runner("array_sum", "array_sum_tree", 4).run(None, &[n], &[Value::i64_array(vec![n], &xs)]).unwrap();
        assert_eq!(v, Value::i64((n * (n - 1) / 2) as i64));
    }

    #[test]
    fn independent_async_calls_both_complete() {
        let src = "fn tri<n>() -> i64 { let s: i64 = 0; for i in 0..n { s += i as i64; } return s; }
#[entry] fn f<n, m>() -> i64 { let x = tri::<n>(); let y = tri::<m>(); return x * 1000 + y; }";
        let b = build("t.jn", src, "t.sch", "async-call(f); host(f); cpu(tri);", None).unwrap();
        let calls = b.exe.functions[b.exe.entry().unwrap()]
            .blocks
            .iter()
            .flat_map(|bl| &bl.insts)
            .filter(|i| matches!(i, crate::backend::Inst::Call(c) if c.is_async))
            .count();
        assert_eq!(calls, 2);
        let mut r = Runner::new(b.exe, RunOptions { workers: 2, race_check: false }).unwrap();
        let (v, m) = r.run(None, &[5, 9], &[]).unwrap();
        assert_eq!(v, Value::i64(10 * 1000 + 36));
        // The entry invocation counts as well.
        assert_eq!(m.calls, 3);
    }

    #[test]
    fn buffers_are_reused_until_a_run_needs_more() {
        let mut r = runner("mapmap", "mapmap_seq", 1);
        let arg = |n: u64| Value::i32_array(vec![n], &(0..n as i32).collect::<Vec<_>>());
        r.run(None, &[64], &[arg(64)]).unwrap();
        r.run(None, &[64], &[arg(64)]).unwrap();
        r.run(None, &[16], &[arg(16)]).unwrap();
        assert_eq!(r.buffer_allocations(), 1);
        let (v, _) = r.run(None, &[256], &[arg(256)]).unwrap();
        assert_eq!(r.buffer_allocations(), 2);
        assert_eq!(v.scalars()[255].1, (255 * 3 + 7) as u64);
    }

    #[test]
    fn tensors_round_trip_through_json() {
        for v in [Value::i64(-3), Value::f32(2.5), grid(3, 1), Value::i32_array(vec![2, 2], &[1, -2, 3, -4])] {
            assert_eq!(value_from_json(&value_to_json(&v).unwrap()).unwrap(), v);
        }
        let bad = serde_json::json!({"dtype": "i64", "shape": [3], "data": [1, 2]});
        assert!(value_from_json(&bad).is_err());
    }
}
