use std::collections::{BTreeMap, BTreeSet};

use super::ast::{Expr, Macro, Pattern, StaticArg, Stmt};
use super::region::RegionValue;
use crate::error::{Error, Result};
use crate::ir::verify::verify;
use crate::ir::{FuncId, IrModule};
use crate::passes::{run_pass, PASS_NAMES};

/// Messages produced while running a schedule (pass diagnostics and
/// unsafe-attribute notes), each prefixed by its schedule line.
#[derive(Debug, Default, Clone)]
pub struct ScheduleLog {
    pub lines: Vec<String>,
}

struct Runner<'a> {
    m: &'a mut IrModule,
    frames: Vec<BTreeMap<String, RegionValue>>,
    macros: BTreeMap<String, Macro>,
    expanding: Vec<String>,
    log: ScheduleLog,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Schedule { line, msg: msg.into() }
}

/// Run a schedule. `after` is called after each top-level statement with
/// its line and the name of the pass it invoked.
pub fn run_schedule(
    m: &mut IrModule,
    stmts: &[Stmt],
    after: &mut dyn FnMut(usize, &str, &IrModule) -> Result<()>,
) -> Result<ScheduleLog> {
    let mut r = Runner { m, frames: vec![BTreeMap::new()], macros: BTreeMap::new(), expanding: vec![], log: ScheduleLog::default() };
    for s in stmts {
        r.stmt(s)?;
        let name = stmt_name(s);
        after(s.line(), &name, r.m)?;
    }
    let diags = verify(r.m);
    if let Some(d) = diags.first() {
        return Err(Error::Verify(format!("after schedule: {d}")));
    }
    Ok(r.log)
}

pub fn stmt_name(s: &Stmt) -> String {
    fn top(e: &Expr) -> String {
        match e {
            Expr::Call { name, .. } => name.clone(),
            _ => "let".into(),
        }
    }
    match s {
        Stmt::Let { value, .. } | Stmt::Expr { value, .. } => top(value),
        Stmt::Macro(m) => format!("macro-{}", m.name),
        Stmt::DeviceAssign { device, .. } => device.name().into(),
    }
}

fn subst_static(a: &StaticArg, env: &BTreeMap<String, StaticArg>, line: usize) -> Result<StaticArg> {
    Ok(match a {
        StaticArg::Ident(n) => env.get(n).cloned().ok_or_else(|| err(line, format!("unknown static parameter `{n}`")))?,
        StaticArg::List(xs) => StaticArg::List(xs.iter().map(|x| subst_static(x, env, line)).collect::<Result<_>>()?),
        StaticArg::Int(v) => StaticArg::Int(*v),
    })
}

fn subst_expr(e: &Expr, env: &BTreeMap<String, StaticArg>) -> Result<Expr> {
    Ok(match e {
        Expr::SetOp(op, a, b) => Expr::SetOp(*op, Box::new(subst_expr(a, env)?), Box::new(subst_expr(b, env)?)),
        Expr::Call { name, statics, args, line: l } => Expr::Call {
            name: name.clone(),
            statics: statics.iter().map(|s| subst_static(s, env, *l)).collect::<Result<_>>()?,
            args: args.iter().map(|a| subst_expr(a, env)).collect::<Result<_>>()?,
            line: *l,
        },
        other => other.clone(),
    })
}

fn subst_stmt(s: &Stmt, env: &BTreeMap<String, StaticArg>) -> Result<Stmt> {
    Ok(match s {
        Stmt::Let { pat, value, line } => Stmt::Let { pat: pat.clone(), value: subst_expr(value, env)?, line: *line },
        Stmt::Expr { value, line } => Stmt::Expr { value: subst_expr(value, env)?, line: *line },
        Stmt::DeviceAssign { device, region, line } => {
            Stmt::DeviceAssign { device: *device, region: subst_expr(region, env)?, line: *line }
        }
        Stmt::Macro(m) => return Err(err(m.line, "macros cannot be nested")),
    })
}

impl Runner<'_> {
    fn stmt(&mut self, s: &Stmt) -> Result<()> {
        match s {
            Stmt::Macro(mac) => {
                if PASS_NAMES.contains(&mac.name.as_str()) || self.macros.contains_key(&mac.name) {
                    return Err(err(mac.line, format!("macro `{}` is already defined", mac.name)));
                }
                self.macros.insert(mac.name.clone(), mac.clone());
            }
            Stmt::Let { pat, value, line } => {
                let vals = self.eval(value, *line)?;
                match pat {
                    Pattern::Name(n) => {
                        if vals.len() != 1 {
                            return Err(err(*line, format!("expression yields {} results, cannot bind to `{n}`", vals.len())));
                        }
                        self.bind(n, vals.into_iter().next().unwrap());
                    }
                    Pattern::Tuple(names) => {
                        if names.len() != vals.len() {
                            return Err(err(
                                *line,
                                format!("destructuring {} names from {} results", names.len(), vals.len()),
                            ));
                        }
                        for (n, v) in names.iter().zip(vals) {
                            if let Some(n) = n {
                                self.bind(n, v);
                            }
                        }
                    }
                }
            }
            Stmt::Expr { value, line } => {
                self.eval(value, *line)?;
            }
            Stmt::DeviceAssign { device, region, line } => {
                let r = self.eval_one(region, *line)?;
                let funcs: Vec<FuncId> = r.resolve(self.m).into_iter().filter(|(_, s)| !s.is_empty()).map(|(f, _)| f).collect();
                if funcs.is_empty() {
                    return Err(err(*line, "device assignment on an empty region"));
                }
                for f in funcs {
                    self.m.func_mut(f).device = *device;
                }
            }
        }
        Ok(())
    }

    fn bind(&mut self, n: &str, v: RegionValue) {
        self.frames.last_mut().unwrap().insert(n.to_string(), v);
    }

    fn eval_one(&mut self, e: &Expr, line: usize) -> Result<RegionValue> {
        let mut v = self.eval(e, line)?;
        if v.len() != 1 {
            return Err(err(line, format!("expected a single region, expression yields {}", v.len())));
        }
        Ok(v.pop().unwrap())
    }

    fn eval(&mut self, e: &Expr, line: usize) -> Result<Vec<RegionValue>> {
        match e {
            Expr::Star => Ok(vec![RegionValue::star(self.m)]),
            Expr::Ident(n) => {
                if let Some(v) = self.frames.last().unwrap().get(n) {
                    return Ok(vec![v.clone()]);
                }
                match self.m.find(n) {
                    Some(f) => Ok(vec![RegionValue::function(f)]),
                    None => Err(err(line, format!("unknown variable or function `{n}`"))),
                }
            }
            Expr::Label { func, label } => {
                let q = format!("{func}@{label}");
                let mut out = RegionValue::empty();
                for fid in self.m.func_ids() {
                    let f = self.m.func(fid);
                    let nodes: BTreeSet<_> = f.live_ids().filter(|&i| f.node(i).labels.contains(&q)).collect();
                    if !nodes.is_empty() {
                        out.0.insert(fid, super::Selection::Nodes(nodes));
                    }
                }
                if out.0.is_empty() {
                    return Err(err(line, format!("unknown label `{q}`")));
                }
                Ok(vec![out])
            }
            Expr::SetOp(op, a, b) => {
                let a = self.eval_one(a, line)?;
                let b = self.eval_one(b, line)?;
                Ok(vec![a.combine(*op, &b, self.m).map_err(|m| err(line, m))?])
            }
            Expr::Call { name, statics, args, line } => {
                let mut regions = vec![];
                for a in args {
                    regions.push(self.eval_one(a, *line)?);
                }
                if let Some(mac) = self.macros.get(name).cloned() {
                    return self.expand(&mac, statics, regions, *line);
                }
                if !PASS_NAMES.contains(&name.as_str()) {
                    return Err(err(*line, format!("unknown pass or macro `{name}`")));
                }
                let res = run_pass(self.m, name, statics, &regions).map_err(|m| err(*line, format!("{name}: {m}")))?;
                for d in &res.diagnostics {
                    self.log.lines.push(format!("line {line}: {name}: {d}"));
                }
                if let Some(u) = &res.unsafe_note {
                    self.log.lines.push(format!("line {line}: unsafe: {u}"));
                }
                for frame in &mut self.frames {
                    for v in frame.values_mut() {
                        v.remap(&res.remap);
                    }
                }
                let diags = verify(self.m);
                if let Some(d) = diags.first() {
                    return Err(err(*line, format!("{name} produced invalid IR: {d}")));
                }
                Ok(res.results)
            }
        }
    }

    fn expand(&mut self, mac: &Macro, statics: &[StaticArg], regions: Vec<RegionValue>, line: usize) -> Result<Vec<RegionValue>> {
        if self.expanding.contains(&mac.name) {
            return Err(err(line, format!("recursive use of macro `{}`", mac.name)));
        }
        if statics.len() != mac.statics.len() {
            return Err(err(
                line,
                format!("macro `{}` expects {} static argument(s), got {}", mac.name, mac.statics.len(), statics.len()),
            ));
        }
        if regions.len() != mac.params.len() {
            return Err(err(
                line,
                format!("macro `{}` expects {} region argument(s), got {}", mac.name, mac.params.len(), regions.len()),
            ));
        }
        let env: BTreeMap<String, StaticArg> = mac.statics.iter().cloned().zip(statics.iter().cloned()).collect();
        let frame: BTreeMap<String, RegionValue> = mac.params.iter().cloned().zip(regions).collect();
        self.expanding.push(mac.name.clone());
        self.frames.push(frame);
        let result = (|| {
            for s in &mac.body {
                self.stmt(&subst_stmt(s, &env)?)?;
            }
            match &mac.ret {
                Some(e) => self.eval(&subst_expr(e, &env)?, mac.line),
                None => Ok(vec![]),
            }
        })();
        self.frames.pop();
        self.expanding.pop();
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compile_source;
    use crate::ir::{NodeKind, Type};
    use crate::runtime::{oracle_execute, Value};
    use crate::sched::parse_schedule;

    const MATMUL: &str = include_str!("../../fixtures/matmul.jn");
    const BLOCKED: &str = include_str!("../../fixtures/matmul.sch");

    fn run(src: &str, sch: &str) -> (IrModule, IrModule, ScheduleLog) {
        let m0 = compile_source("t.jn", src).unwrap();
        let mut m = m0.clone();
        let stmts = parse_schedule("t.sch", sch).unwrap();
        let log = run_schedule(&mut m, &stmts, &mut |_, _, _| Ok(())).unwrap();
        (m0, m, log)
    }

    fn factor_lists(m: &IrModule, name: &str) -> Vec<Vec<String>> {
        let f = &m.functions[m.find(name).unwrap().idx()];
        let mut out = vec![];
        let mut cur = f.forks().into_iter().find(|&k| !matches!(f.kind(k), NodeKind::Fork { control, .. } if f.kind(*control).is_fork()));
        while let Some(k) = cur {
            let (_, fs) = f.kind(k).try_fork().unwrap();
            out.push(fs.iter().map(|d| f.dc_display(d)).collect());
            cur = f.forks().into_iter().find(|&x| matches!(f.kind(x), NodeKind::Fork { control, .. } if *control == k));
        }
        out
    }

    fn mat(rows: u64, cols: u64, seed: u32) -> Value {
        let xs: Vec<f32> = (0..rows * cols).map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 17) as f32 - 8.0).collect();
        Value::f32_array(vec![rows, cols], &xs)
    }

    #[test]
    fn blocked_schedule_yields_tiled_block_body() {
        let (m0, m, _) = run(MATMUL, BLOCKED);
        assert_eq!(m.functions.len(), 2);
        assert_eq!(factor_lists(&m, "matmul"), vec![vec!["4".to_string(), "4".into()]]);
        let body = &m.functions[1];
        assert_eq!(
            factor_lists(&m, &body.name),
            vec![vec!["n/64".to_string(), "l/64".into(), "m/16".into(), "16".into(), "16".into()], vec!["16".to_string()]]
        );
        assert_eq!(body.device, crate::ir::Device::CpuSequential);
        let arrays = body.param_types.iter().filter(|t| matches!(t, Type::Array(..))).count();
        assert_eq!(arrays, 3);
        let (a, b) = (mat(64, 16, 1), mat(16, 64, 2));
        let want = oracle_execute(&m0, crate::ir::FuncId(0), &[64, 16, 64], vec![a.clone(), b.clone()]).unwrap();
        let got = oracle_execute(&m, crate::ir::FuncId(0), &[64, 16, 64], vec![a, b]).unwrap();
        assert_eq!(want, got);
    }

    #[test]
    fn empty_schedule_leaves_module_unchanged() {
        let (m0, m, log) = run(MATMUL, "");
        assert_eq!(m0, m);
        assert!(log.lines.is_empty());
    }

    #[test]
    fn errors_name_the_schedule_line() {
        let m0 = compile_source("t.jn", MATMUL).unwrap();
        for (sch, want) in [
            ("forkify(*);\nfoo(*);", "schedule line 2: unknown pass or macro `foo`"),
            ("let x = matmul@nope;", "schedule line 1: unknown label `matmul@nope`"),
            ("dce(y);", "schedule line 1: unknown variable or function `y`"),
            ("forkify(*);\n\nparallelize(matmul@inner);", "schedule line 3: parallelize"),
            ("let (a, b) = forkify(*);", "schedule line 1: destructuring 2 names from 1 results"),
        ] {
            let mut m = m0.clone();
            let stmts = parse_schedule("t.sch", sch).unwrap();
            let e = run_schedule(&mut m, &stmts, &mut |_, _, _| Ok(())).unwrap_err().to_string();
            assert!(e.starts_with(want), "{e}");
        }
    }

    #[test]
    fn macros_expand_with_static_arguments() {
        let src = "#[entry] fn sum<n>(a: i64[n]) -> i64 { let s: i64 = 0; for i in 0..n { s += a[i]; } return s; }";
        let sch = "forkify(*); infer-attributes(*);
macro reduction_tree![N](F) {
  fork-chunk![N](F);
  let (outer, inner) = fork-reshape[[0], [1]](F);
  monoid-reassociate(inner);
  let (top, bottom) = fork-fission(outer);
  bottom
}
let b = reduction_tree![4](sum);
reduction_tree![2](b);";
        let (m0, m, _) = run(src, sch);
        let f = &m.functions[0];
        assert_eq!(f.forks().len(), 5);
        let xs: Vec<i64> = (1..=32).collect();
        let a = Value::i64_array(vec![32], &xs);
        let want = oracle_execute(&m0, crate::ir::FuncId(0), &[32], vec![a.clone()]).unwrap();
        assert_eq!(want, Value::i64(528));
        assert_eq!(oracle_execute(&m, crate::ir::FuncId(0), &[32], vec![a]).unwrap(), want);
    }

    #[test]
    fn missing_static_argument_is_an_error() {
        let src = "#[entry] fn sum<n>(a: i64[n]) -> i64 { let s: i64 = 0; for i in 0..n { s += a[i]; } return s; }";
        let m0 = compile_source("t.jn", src).unwrap();
        let sch = "macro reduction_tree![N](F) { fork-chunk![N](F); }\nreduction_tree!(sum);";
        let mut m = m0.clone();
        let e = run_schedule(&mut m, &parse_schedule("s", sch).unwrap(), &mut |_, _, _| Ok(())).unwrap_err().to_string();
        assert!(e.contains("expects 1 static argument"), "{e}");
    }
}
