//! Whole-program compilation: source and schedule text to an executable.

use serde::{Deserialize, Serialize};

use crate::backend::{lower_module, text, Executable};
use crate::error::{Error, Result};
use crate::gcm::{place::dump_plan, run_gcm};
use crate::ir::{dot::module_dot, dump::dump_module, IrModule};
use crate::runtime::{oracle_execute, RunMetrics, RunOptions, Runner, Value};
use crate::sched::{parse_schedule, run_schedule, ScheduleLog};

/// IR and dot text captured after one schedule statement.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub line: usize,
    pub pass: String,
    pub ir: String,
    pub dot: String,
}

impl Snapshot {
    pub fn stem(&self) -> String {
        format!("{:02}_{}", self.line, self.pass)
    }
}

/// What gets written to disk: the scheduled IR (for the oracle) and the
/// lowered executable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub module: IrModule,
    pub exe: Executable,
}

pub struct Build {
    /// Scheduled module, before GCM adds copies.
    pub scheduled: IrModule,
    /// Module after GCM legalization.
    pub module: IrModule,
    pub exe: Executable,
    pub snapshots: Vec<Snapshot>,
    pub log: ScheduleLog,
    pub plan_text: String,
}

/// `dump_after` selects snapshots: a schedule line number, a pass name, or
/// `all`.
fn wanted(sel: &str, line: usize, pass: &str) -> bool {
    sel == "all" || sel == pass || sel.parse::<usize>().is_ok_and(|l| l == line)
}

pub fn build(src_name: &str, src: &str, sched_name: &str, sched_src: &str, dump_after: Option<&str>) -> Result<Build> {
    let mut m = crate::frontend::compile_source(src_name, src)?;
    let stmts = parse_schedule(sched_name, sched_src)?;
    let mut snapshots = vec![];
    let log = run_schedule(&mut m, &stmts, &mut |line, pass, m| {
        if dump_after.is_some_and(|s| wanted(s, line, pass)) {
            snapshots.push(Snapshot { line, pass: pass.to_string(), ir: dump_module(m), dot: module_dot(m) });
        }
        Ok(())
    })?;
    let scheduled = m.clone();
    let gcm = run_gcm(&mut m).map_err(Error::Gcm)?;
    let exe = lower_module(&m, &gcm).map_err(Error::Gcm)?;
    let plan_text = dump_plan(&m, &gcm.plan);
    Ok(Build { scheduled, module: m, exe, snapshots, log, plan_text })
}

/// Build without a schedule beyond what the source implies.
pub fn build_unscheduled(src_name: &str, src: &str) -> Result<Build> {
    build(src_name, src, "<none>", "", None)
}

impl Build {
    pub fn artifact(&self) -> Artifact {
        Artifact { module: self.scheduled.clone(), exe: self.exe.clone() }
    }

    pub fn emit(&self, format: &str) -> Result<String> {
        Ok(match format {
            "ir" => dump_module(&self.module),
            "dot" => module_dot(&self.module),
            "exec" => text::exec_text(&self.exe),
            "c" => text::c_text(&self.exe),
            other => return Err(Error::Pass(format!("unknown emit format `{other}` (expected ir, dot, exec, or c)"))),
        })
    }

    /// One line per function and one per planned copy.
    pub fn spill_report(&self) -> String {
        let mut s = String::new();
        for p in &self.exe.plan.functions {
            s += &format!("spills {} {}\n", p.name, p.spills);
            s += &format!("copies {} {}\n", p.name, p.copies.len());
        }
        s += &format!("total spills {} copies {}\n", self.exe.total_spills(), self.exe.planned_copies());
        s
    }

    pub fn run(&self, entry: Option<&str>, dcs: &[u64], args: &[Value], opts: RunOptions) -> Result<(Value, RunMetrics)> {
        let mut r = Runner::new(self.exe.clone(), opts).map_err(Error::Runtime)?;
        r.run(entry, dcs, args).map_err(Error::Runtime)
    }

    pub fn oracle(&self, entry: Option<&str>, dcs: &[u64], args: &[Value]) -> Result<Value> {
        run_oracle(&self.scheduled, entry, dcs, args)
    }
}

pub fn run_oracle(m: &IrModule, entry: Option<&str>, dcs: &[u64], args: &[Value]) -> Result<Value> {
    let fid = match entry {
        Some(n) => m.func_ids().find(|&f| m.func(f).name == n),
        None => m.func_ids().find(|&f| m.func(f).entry),
    }
    .ok_or_else(|| Error::Runtime("no such entry function".into()))?;
    oracle_execute(m, fid, dcs, args.to_vec()).map_err(Error::Runtime)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: u64, cols: u64, seed: u64) -> Value {
        let xs: Vec<f32> = (0..rows * cols).map(|i| ((i * 7 + seed * 13) % 11) as f32 - 5.0).collect();
        Value::f32_array(vec![rows, cols], &xs)
    }

    #[test]
    fn matmul_schedule_matches_oracle() {
        let src = include_str!("../fixtures/matmul.jn");
        let sch = include_str!("../fixtures/matmul.sch");
        let b = build("matmul.jn", src, "matmul.sch", sch, None).unwrap();
        let dcs = [64, 32, 64];
        let args = [matrix(64, 32, 1), matrix(32, 64, 2)];
        let (got, metrics) = b.run(None, &dcs, &args, RunOptions { workers: 2, race_check: true }).unwrap();
        let want = b.oracle(None, &dcs, &args).unwrap();
        assert_eq!(got, want);
        assert_eq!(metrics.spills, 0);
    }
}
