//! Reference interpreter with pure value semantics. Control tokens walk the
//! control graph; data nodes are evaluated on demand and memoized until a
//! phi, reduce, or thread id they depend on changes.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::sync::Arc;

use super::ops;
use super::value::Value;
use crate::ir::analysis::{self, control_succs};
use crate::ir::{FuncId, Index, IrFunction, IrModule, NodeId, NodeKind, UnaryOp};

type R<T> = Result<T, String>;

struct FnInfo {
    succs: Vec<Vec<NodeId>>,
    fork_join: BTreeMap<NodeId, NodeId>,
    /// Reduces attached to each join.
    reduces: BTreeMap<NodeId, Vec<NodeId>>,
    /// Thread ids of each fork.
    tids: BTreeMap<NodeId, Vec<NodeId>>,
    /// Phis of each region.
    phis: BTreeMap<NodeId, Vec<NodeId>>,
    /// Memoized nodes to drop when a pinned node changes.
    dependents: Vec<Vec<NodeId>>,
    users: Vec<Vec<NodeId>>,
}

impl FnInfo {
    fn new(f: &IrFunction) -> R<FnInfo> {
        let users = analysis::def_use(f);
        let mut reduces: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut tids: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut phis: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for id in f.live_ids() {
            match f.kind(id) {
                NodeKind::Reduce { join, .. } => reduces.entry(*join).or_default().push(id),
                NodeKind::ThreadId { fork, .. } => tids.entry(*fork).or_default().push(id),
                NodeKind::Phi { region, .. } => phis.entry(*region).or_default().push(id),
                _ => {}
            }
        }
        let mut dependents = vec![vec![]; f.nodes.len()];
        for id in f.live_ids() {
            let k = f.kind(id);
            if !(k.is_phi() || k.is_reduce() || matches!(k, NodeKind::ThreadId { .. })) {
                continue;
            }
            let mut seen = vec![false; f.nodes.len()];
            let mut work = vec![id];
            let mut out = vec![];
            while let Some(n) = work.pop() {
                for &u in &users[n.idx()] {
                    let uk = f.kind(u);
                    if uk.is_control() || uk.is_phi() || uk.is_reduce() || seen[u.idx()] {
                        continue;
                    }
                    seen[u.idx()] = true;
                    out.push(u);
                    work.push(u);
                }
            }
            dependents[id.idx()] = out;
        }
        Ok(FnInfo { succs: control_succs(f), fork_join: analysis::fork_join_map(f)?, reduces, tids, phis, dependents, users })
    }
}

pub struct Oracle<'m> {
    m: &'m IrModule,
    infos: HashMap<FuncId, Rc<FnInfo>>,
    pub steps: u64,
    pub step_limit: u64,
}

struct Frame<'a> {
    f: &'a IrFunction,
    info: Rc<FnInfo>,
    dcs: Vec<u64>,
    args: Vec<Value>,
    memo: Vec<Option<Value>>,
}

enum Exit {
    Returned(Value),
    Joined,
}

/// Position of `idx` (row-major) inside an array with `dims`.
pub fn linear_index(dims: &[u64], idx: &[u64]) -> R<usize> {
    let mut lin = 0u64;
    for (d, (&i, &n)) in idx.iter().zip(dims).enumerate() {
        if i >= n {
            return Err(format!("index {i} out of bounds for dimension {d} of extent {n}"));
        }
        lin = lin * n + i;
    }
    Ok(lin as usize)
}

enum Step {
    Field(usize),
    Variant(usize),
    Pos(Vec<u64>),
}

fn read_path(v: &Value, path: &[Step]) -> R<Value> {
    let Some((first, rest)) = path.split_first() else { return Ok(v.clone()) };
    let inner = match (first, v) {
        (Step::Field(i), Value::Product(fs)) => &fs[*i],
        (Step::Variant(i), Value::Summation(t, x)) => {
            if t != i {
                return Err(format!("read of summation variant {i} while variant {t} is active"));
            }
            &**x
        }
        (Step::Pos(ps), Value::Array(a)) => &a.data[linear_index(&a.dims, ps)?],
        _ => return Err("index path does not match value".into()),
    };
    read_path(inner, rest)
}

fn write_path(v: &mut Value, path: &[Step], new: Value) -> R<()> {
    let Some((first, rest)) = path.split_first() else {
        *v = new;
        return Ok(());
    };
    match (first, v) {
        (Step::Field(i), Value::Product(fs)) => write_path(&mut fs[*i], rest, new),
        (Step::Variant(i), Value::Summation(t, x)) => {
            if rest.is_empty() {
                *t = *i;
                **x = new;
                Ok(())
            } else if t != i {
                Err(format!("write into summation variant {i} while variant {t} is active"))
            } else {
                write_path(x, rest, new)
            }
        }
        (Step::Pos(ps), Value::Array(a)) => {
            let lin = linear_index(&a.dims, ps)?;
            write_path(&mut Arc::make_mut(a).data[lin], rest, new)
        }
        _ => Err("index path does not match value".into()),
    }
}

impl<'m> Oracle<'m> {
    pub fn new(m: &'m IrModule) -> Self {
        Oracle { m, infos: HashMap::new(), steps: 0, step_limit: u64::MAX }
    }

    fn info(&mut self, fid: FuncId) -> R<Rc<FnInfo>> {
        if let Some(i) = self.infos.get(&fid) {
            return Ok(i.clone());
        }
        let i = Rc::new(FnInfo::new(self.m.func(fid))?);
        self.infos.insert(fid, i.clone());
        Ok(i)
    }

    pub fn call(&mut self, fid: FuncId, dcs: &[u64], args: Vec<Value>) -> R<Value> {
        let f = self.m.func(fid);
        if dcs.len() != f.num_dc_params() {
            return Err(format!("`{}` expects {} dynamic constants", f.name, f.num_dc_params()));
        }
        if args.len() != f.param_types.len() {
            return Err(format!("`{}` expects {} arguments", f.name, f.param_types.len()));
        }
        for c in &f.constraints {
            let (a, b) = (c.divisor.eval(dcs).map_err(|e| e.to_string())?, c.dividend.eval(dcs).map_err(|e| e.to_string())?);
            if a == 0 || b % a != 0 {
                return Err(format!(
                    "constraint {} | {} (from {}) violated: {a} does not divide {b}",
                    f.dc_display(&c.divisor),
                    f.dc_display(&c.dividend),
                    c.origin
                ));
            }
        }
        for (i, (a, t)) in args.iter().zip(&f.param_types).enumerate() {
            if !a.conforms(t, dcs) {
                return Err(format!("argument {i} of `{}` does not match {}", f.name, f.type_display(t)));
            }
        }
        let info = self.info(fid)?;
        let mut fr = Frame { f, info, dcs: dcs.to_vec(), args, memo: vec![None; f.nodes.len()] };
        match self.walk(&mut fr, f.start(), None)? {
            Exit::Returned(v) => Ok(v),
            Exit::Joined => Err("control reached a join outside its fork".into()),
        }
    }

    fn set(&self, fr: &mut Frame, vals: Vec<(NodeId, Value)>) {
        for (n, _) in &vals {
            for d in &fr.info.dependents[n.idx()] {
                fr.memo[d.idx()] = None;
            }
        }
        for (n, v) in vals {
            fr.memo[n.idx()] = Some(v);
        }
    }

    /// Walk control starting by executing `node`. Returns on Return, or
    /// when `stop` (a join) is reached.
    fn walk(&mut self, fr: &mut Frame, mut node: NodeId, stop: Option<NodeId>) -> R<Exit> {
        let mut pred: Option<NodeId> = None;
        loop {
            self.steps += 1;
            if self.steps > self.step_limit {
                return Err("step limit exceeded".into());
            }
            let f = fr.f;
            match f.kind(node).clone() {
                NodeKind::Return { value, .. } => return Ok(Exit::Returned(self.eval(fr, value)?)),
                NodeKind::Join { .. } if Some(node) == stop => return Ok(Exit::Joined),
                NodeKind::Region { preds } => {
                    let k = preds.iter().position(|&p| Some(p) == pred).ok_or("region entered from unknown edge")?;
                    let phis = fr.info.phis.get(&node).cloned().unwrap_or_default();
                    let mut vals = vec![];
                    for p in phis {
                        let NodeKind::Phi { inputs, .. } = f.kind(p) else { unreachable!() };
                        vals.push((p, self.eval(fr, inputs[k])?));
                    }
                    self.set(fr, vals);
                }
                NodeKind::Fork { factors, .. } => {
                    let join = fr.info.fork_join[&node];
                    self.run_fork(fr, node, join, &factors)?;
                    pred = Some(join);
                    node = fr.info.succs[join.idx()][0];
                    continue;
                }
                _ => {}
            }
            let next = match f.kind(node) {
                NodeKind::If { cond, .. } => {
                    let c = self.eval(fr, *cond)?.scalar_bits()?;
                    fr.info.succs[node.idx()][if c != 0 { 1 } else { 0 }]
                }
                _ => *fr.info.succs[node.idx()].first().ok_or("control node without successor")?,
            };
            pred = Some(node);
            node = next;
        }
    }

    fn run_fork(&mut self, fr: &mut Frame, fork: NodeId, join: NodeId, factors: &[crate::ir::DynConst]) -> R<()> {
        let dims: Vec<u64> =
            factors.iter().map(|d| d.eval(&fr.dcs).map_err(|e| e.to_string())).collect::<R<_>>()?;
        let reduces = fr.info.reduces.get(&join).cloned().unwrap_or_default();
        let tids = fr.info.tids.get(&fork).cloned().unwrap_or_default();
        let mut vals = vec![];
        for &r in &reduces {
            let NodeKind::Reduce { init, .. } = fr.f.kind(r) else { unreachable!() };
            vals.push((r, self.eval(fr, *init)?));
        }
        self.set(fr, vals);
        let total: u64 = dims.iter().product();
        let body = fr.info.succs[fork.idx()][0];
        let mut idx = vec![0u64; dims.len()];
        for _ in 0..total {
            let mut tv = vec![];
            for &t in &tids {
                let NodeKind::ThreadId { dim, .. } = fr.f.kind(t) else { unreachable!() };
                tv.push((t, Value::u64(idx[*dim])));
            }
            self.set(fr, tv);
            match self.walk(fr, body, Some(join))? {
                Exit::Joined => {}
                Exit::Returned(_) => return Err("return inside a fork-join".into()),
            }
            let mut vals = vec![];
            for &r in &reduces {
                let NodeKind::Reduce { reduct, .. } = fr.f.kind(r) else { unreachable!() };
                vals.push((r, self.eval(fr, *reduct)?));
            }
            self.set(fr, vals);
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(())
    }

    fn path(&mut self, fr: &mut Frame, indices: &[Index]) -> R<Vec<Step>> {
        let mut out = vec![];
        for i in indices {
            out.push(match i {
                Index::Field(k) => Step::Field(*k),
                Index::Variant(k) => Step::Variant(*k),
                Index::Position(ps) => {
                    let mut v = vec![];
                    for &p in ps {
                        let x = self.eval(fr, p)?;
                        let Value::Scalar(k, b) = x else { return Err("non-scalar index".into()) };
                        if k.is_signed() && (b as i64) < 0 {
                            return Err(format!("negative index {}", b as i64));
                        }
                        v.push(b);
                    }
                    Step::Pos(v)
                }
            });
        }
        Ok(out)
    }

    fn eval(&mut self, fr: &mut Frame, n: NodeId) -> R<Value> {
        if let Some(v) = &fr.memo[n.idx()] {
            return Ok(v.clone());
        }
        let f = fr.f;
        let v = match f.kind(n) {
            NodeKind::Parameter { index } => fr.args[*index].clone(),
            NodeKind::Constant(c) => Value::from_constant(c, &fr.dcs)?,
            NodeKind::DynamicConstant(d) => Value::u64(d.eval(&fr.dcs).map_err(|e| e.to_string())?),
            NodeKind::Binary { op, left, right } => {
                let (a, b) = (self.eval(fr, *left)?, self.eval(fr, *right)?);
                let (Value::Scalar(k, a), Value::Scalar(_, b)) = (a, b) else {
                    return Err(format!("node {n}: binary operands must be scalars"));
                };
                let r = ops::binary(*op, k, a, b).map_err(|e| format!("node {n}: {e}"))?;
                let rk = if op.is_comparison() { crate::ir::ScalarKind::Bool } else { k };
                Value::Scalar(rk, r)
            }
            NodeKind::Unary { op, input } => {
                let Value::Scalar(k, a) = self.eval(fr, *input)? else {
                    return Err(format!("node {n}: unary operand must be a scalar"));
                };
                match op {
                    UnaryOp::Neg => Value::Scalar(k, ops::neg(k, a)),
                    UnaryOp::Not => Value::Scalar(k, ops::not(k, a)),
                    UnaryOp::Cast(t) => Value::Scalar(*t, ops::cast(k, *t, a)),
                }
            }
            NodeKind::Read { collection, indices } => {
                let c = self.eval(fr, *collection)?;
                let p = self.path(fr, indices)?;
                read_path(&c, &p).map_err(|e| format!("node {n}: {e}"))?
            }
            NodeKind::Write { collection, indices, value } => {
                let p = self.path(fr, indices)?;
                let v = self.eval(fr, *value)?;
                let mut c = self.eval(fr, *collection)?;
                if can_take(fr, *collection, n) {
                    fr.memo[collection.idx()] = None;
                }
                write_path(&mut c, &p, v).map_err(|e| format!("node {n}: {e}"))?;
                c
            }
            NodeKind::Copy { collection } => self.eval(fr, *collection)?,
            NodeKind::Call { callee, dyn_args, args, .. } => {
                let dcs: Vec<u64> =
                    dyn_args.iter().map(|d| d.eval(&fr.dcs).map_err(|e| e.to_string())).collect::<R<_>>()?;
                let mut vals = vec![];
                for &a in args {
                    vals.push(self.eval(fr, a)?);
                }
                self.call(*callee, &dcs, vals)?
            }
            NodeKind::Phi { .. } | NodeKind::Reduce { .. } | NodeKind::ThreadId { .. } => {
                return Err(format!("node {n} ({}) used before it has a value", f.kind(n).name()))
            }
            k => return Err(format!("node {n}: cannot evaluate {}", k.name())),
        };
        fr.memo[n.idx()] = Some(v.clone());
        Ok(v)
    }
}

/// A write may update its collection in place when no other user will ask
/// for the old value again: every other user is a data node that already
/// holds its result, or an outer reduce taking `c` as its reduct.
fn can_take(fr: &Frame, c: NodeId, writer: NodeId) -> bool {
    fr.info.users[c.idx()].iter().all(|&u| {
        if u == writer {
            return true;
        }
        let k = fr.f.kind(u);
        if let NodeKind::Reduce { init, reduct, .. } = k {
            // The reduct is read at the end of an iteration, after the
            // pinned value has been set again.
            return *reduct == c && *init != c && fr.f.kind(c).is_reduce();
        }
        !(k.is_control() || k.is_phi() || k.is_call()) && fr.memo[u.idx()].is_some()
    })
}

/// Evaluate `fid` with pure value semantics.
pub fn oracle_execute(m: &IrModule, fid: FuncId, dcs: &[u64], args: Vec<Value>) -> R<Value> {
    Oracle::new(m).call(fid, dcs, args)
}
