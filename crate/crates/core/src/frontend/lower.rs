use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use crate::error::{Error, Result};
use crate::ir::{
    BinaryOp, Constant, DynConst, FuncId, Index, IrFunction, IrModule, NodeId, NodeKind, ScalarKind, Type, UnaryOp,
};
use crate::passes::cleanup;
use crate::runtime::ops;

/// Map from (function, label) to the nodes the label covers.
pub type LabelMap = BTreeMap<(String, String), BTreeSet<NodeId>>;

/// Collect the label map carried on the nodes of a module.
pub fn label_map(m: &IrModule) -> LabelMap {
    let mut out = LabelMap::new();
    for f in &m.functions {
        for id in f.live_ids() {
            for l in &f.node(id).labels {
                let (func, label) = l.split_once('@').unwrap_or((&f.name, l));
                out.entry((func.to_string(), label.to_string())).or_default().insert(id);
            }
        }
    }
    out
}

struct Sig {
    id: FuncId,
    dcs: usize,
    params: Vec<Type>,
    ret: Type,
}

type VarId = usize;

struct Lower<'a> {
    sigs: &'a BTreeMap<String, Sig>,
    f: IrFunction,
    scopes: Vec<BTreeMap<String, VarId>>,
    var_types: Vec<Type>,
    var_names: Vec<String>,
    var_local: Vec<bool>,
    readonly: BTreeSet<VarId>,
    state: BTreeMap<VarId, NodeId>,
    ctrl: Option<NodeId>,
    returns: Vec<(NodeId, NodeId)>,
    labels: BTreeSet<String>,
    line: usize,
}

fn u64t() -> Type {
    Type::Scalar(ScalarKind::U64)
}

fn is_int_like(t: &Type) -> bool {
    t.as_scalar().is_some_and(|k| k.is_integer())
}

fn is_literal(e: &Expr) -> bool {
    match e {
        Expr::Int(_) | Expr::Float(_) => true,
        Expr::Neg(e) => is_literal(e),
        _ => false,
    }
}

impl Lower<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Lower(format!("{}: line {}: {}", self.f.name, self.line, msg.into())))
    }

    fn add(&mut self, kind: NodeKind, ty: Type) -> NodeId {
        self.f.add_labeled(kind, ty, &self.labels)
    }

    fn ctrl(&self) -> NodeId {
        self.ctrl.expect("lowering in unreachable code")
    }

    fn lookup(&self, name: &str) -> Option<VarId> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn declare(&mut self, name: &str, ty: Type, value: NodeId, local: bool) -> VarId {
        let id = self.var_types.len();
        self.var_types.push(ty);
        self.var_names.push(name.to_string());
        self.var_local.push(local);
        self.scopes.last_mut().unwrap().insert(name.to_string(), id);
        self.state.insert(id, value);
        id
    }

    fn push_scope(&mut self) {
        self.scopes.push(BTreeMap::new());
    }

    fn pop_scope(&mut self) {
        let s = self.scopes.pop().unwrap();
        for v in s.values() {
            self.state.remove(v);
        }
    }

    fn dc_index(&self, name: &str) -> Option<usize> {
        self.f.dc_params.iter().position(|d| d == name)
    }

    fn dyn_const(&self, e: &Expr) -> Result<DynConst> {
        Ok(match e {
            Expr::Int(v) => DynConst::lit(*v),
            Expr::Var(n) => match self.dc_index(n) {
                Some(i) => DynConst::param(i),
                None => return self.err(format!("`{n}` is not a dynamic constant")),
            },
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.dyn_const(a)?, self.dyn_const(b)?);
                match op {
                    BinOp::Add => DynConst::add(a, b),
                    BinOp::Sub => DynConst::sub(a, b),
                    BinOp::Mul => DynConst::mul(a, b),
                    BinOp::Div => DynConst::div(a, b),
                    _ => return self.err("unsupported operator in dynamic constant expression"),
                }
            }
            _ => return self.err("expected a dynamic constant expression"),
        })
    }

    fn is_dyn_const_expr(&self, e: &Expr) -> bool {
        match e {
            Expr::Int(_) => true,
            Expr::Var(n) => self.lookup(n).is_none() && self.dc_index(n).is_some(),
            Expr::Binary(BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div, a, b) => {
                self.is_dyn_const_expr(a) && self.is_dyn_const_expr(b)
            }
            _ => false,
        }
    }

    fn ty(&self, t: &TypeExpr) -> Result<Type> {
        Ok(match t {
            TypeExpr::Scalar(k) => Type::Scalar(*k),
            TypeExpr::Tuple(fs) => Type::Product(fs.iter().map(|f| self.ty(f)).collect::<Result<_>>()?),
            TypeExpr::Array(e, ext) => {
                Type::array(self.ty(e)?, ext.iter().map(|x| self.dyn_const(x)).collect::<Result<_>>()?)
            }
        })
    }

    fn zero(&mut self, t: &Type) -> NodeId {
        match t {
            Type::Scalar(k) => self.add(NodeKind::Constant(Constant::Scalar(*k, 0)), t.clone()),
            _ => self.add(NodeKind::Constant(Constant::Zero(t.clone())), t.clone()),
        }
    }

    fn literal(&mut self, e: &Expr, hint: Option<&Type>) -> Result<NodeId> {
        let (neg, inner) = match e {
            Expr::Neg(x) => (true, &**x),
            x => (false, x),
        };
        let k = match (inner, hint.and_then(Type::as_scalar)) {
            (_, Some(k)) if !k.is_bool() => k,
            (Expr::Int(_), _) => ScalarKind::I64,
            _ => ScalarKind::F32,
        };
        let bits = match inner {
            Expr::Int(v) if k.is_float() => ops::from_f64(k, *v as f64),
            Expr::Int(v) => ops::canon(k, *v),
            Expr::Float(x) if k.is_float() => ops::from_f64(k, *x),
            Expr::Float(_) => return self.err(format!("float literal used as {}", k.name())),
            Expr::Neg(_) => return self.lower_neg(inner, hint),
            _ => unreachable!(),
        };
        let bits = if neg {
            if k.is_unsigned() {
                return self.err("negative literal of unsigned type");
            }
            ops::neg(k, bits)
        } else {
            bits
        };
        Ok(self.add(NodeKind::Constant(Constant::Scalar(k, bits)), Type::Scalar(k)))
    }

    fn lower_neg(&mut self, e: &Expr, hint: Option<&Type>) -> Result<NodeId> {
        let v = self.expr(e, hint)?;
        let t = self.f.ty(v).clone();
        Ok(self.add(NodeKind::Unary { op: UnaryOp::Neg, input: v }, t))
    }

    /// Lower the operands of a binary expression so that literal operands
    /// take the type of the other side.
    fn operands(&mut self, a: &Expr, b: &Expr, hint: Option<&Type>) -> Result<(NodeId, NodeId)> {
        if is_literal(a) && !is_literal(b) {
            let y = self.expr(b, hint)?;
            let t = self.f.ty(y).clone();
            let x = self.expr(a, Some(&t))?;
            Ok((x, y))
        } else {
            let x = self.expr(a, hint)?;
            let t = self.f.ty(x).clone();
            let y = self.expr(b, Some(&t))?;
            Ok((x, y))
        }
    }

    /// Resolve `var` followed by accesses into a collection and index list.
    fn indices(&mut self, path: &[Access]) -> Result<Vec<Index>> {
        let mut out = vec![];
        for a in path {
            match a {
                Access::Field(k) => out.push(Index::Field(*k)),
                Access::Index(es) => {
                    let mut ps = vec![];
                    for e in es {
                        let n = self.expr(e, Some(&u64t()))?;
                        if !is_int_like(self.f.ty(n)) {
                            return self.err("array index must be an integer");
                        }
                        ps.push(n);
                    }
                    out.push(Index::Position(ps));
                }
            }
        }
        Ok(out)
    }

    fn flatten_access<'e>(e: &'e Expr, path: &mut Vec<&'e Access>) -> &'e Expr {
        match e {
            Expr::Access(base, a) => {
                let root = Self::flatten_access(base, path);
                path.push(a);
                root
            }
            _ => e,
        }
    }

    fn var_value(&self, name: &str) -> Option<NodeId> {
        self.lookup(name).map(|v| self.state[&v])
    }

    fn expr(&mut self, e: &Expr, hint: Option<&Type>) -> Result<NodeId> {
        Ok(match e {
            Expr::Int(_) | Expr::Float(_) => self.literal(e, hint)?,
            Expr::Neg(x) if is_literal(x) && !matches!(**x, Expr::Neg(_)) => self.literal(e, hint)?,
            Expr::Bool(b) => self.add(NodeKind::Constant(Constant::Scalar(ScalarKind::Bool, *b as u64)), Type::Scalar(ScalarKind::Bool)),
            Expr::Var(n) => match self.var_value(n) {
                Some(v) => v,
                None => match self.dc_index(n) {
                    Some(i) => self.add(NodeKind::DynamicConstant(DynConst::param(i)), u64t()),
                    None => return self.err(format!("unknown variable `{n}`")),
                },
            },
            Expr::Binary(_, a, b)
                if self.is_dyn_const_expr(e) && !(matches!(**a, Expr::Int(_)) && matches!(**b, Expr::Int(_))) =>
            {
                let d = self.dyn_const(e)?;
                let v = self.add(NodeKind::DynamicConstant(d), u64t());
                match hint.and_then(Type::as_scalar) {
                    Some(k) if k.is_integer() && k != ScalarKind::U64 => {
                        self.add(NodeKind::Unary { op: UnaryOp::Cast(k), input: v }, Type::Scalar(k))
                    }
                    _ => v,
                }
            }
            Expr::Neg(x) => self.lower_neg(x, hint)?,
            Expr::Not(x) => {
                let v = self.expr(x, hint)?;
                let t = self.f.ty(v).clone();
                if t.as_scalar().is_none_or(|k| k.is_float()) {
                    return self.err("`!` needs an integer or boolean operand");
                }
                self.add(NodeKind::Unary { op: UnaryOp::Not, input: v }, t)
            }
            Expr::Binary(op, a, b) => {
                let cmp = matches!(op, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne);
                let logical = matches!(op, BinOp::And | BinOp::Or);
                let h = if cmp { None } else if logical { Some(Type::Scalar(ScalarKind::Bool)) } else { hint.cloned() };
                let (x, y) = self.operands(a, b, h.as_ref())?;
                let (tx, ty) = (self.f.ty(x).clone(), self.f.ty(y).clone());
                if tx != ty || tx.as_scalar().is_none() {
                    return self.err(format!(
                        "operand types differ: {} and {}",
                        self.f.type_display(&tx),
                        self.f.type_display(&ty)
                    ));
                }
                let k = tx.as_scalar().unwrap();
                let bop = match op {
                    BinOp::Add => BinaryOp::Add,
                    BinOp::Sub => BinaryOp::Sub,
                    BinOp::Mul => BinaryOp::Mul,
                    BinOp::Div => BinaryOp::Div,
                    BinOp::Rem => BinaryOp::Rem,
                    BinOp::Lt => BinaryOp::Lt,
                    BinOp::Le => BinaryOp::Le,
                    BinOp::Gt => BinaryOp::Gt,
                    BinOp::Ge => BinaryOp::Ge,
                    BinOp::Eq => BinaryOp::Eq,
                    BinOp::Ne => BinaryOp::Ne,
                    BinOp::And | BinOp::BitAnd => BinaryOp::And,
                    BinOp::Or | BinOp::BitOr => BinaryOp::Or,
                    BinOp::BitXor => BinaryOp::Xor,
                };
                if logical && !k.is_bool() {
                    return self.err("`&&`/`||` need boolean operands");
                }
                if matches!(bop, BinaryOp::And | BinaryOp::Or | BinaryOp::Xor) && k.is_float() {
                    return self.err("bitwise operator on floats");
                }
                if !cmp && !matches!(bop, BinaryOp::And | BinaryOp::Or | BinaryOp::Xor) && k.is_bool() {
                    return self.err("arithmetic on booleans");
                }
                let rt = if cmp { Type::Scalar(ScalarKind::Bool) } else { tx };
                self.add(NodeKind::Binary { op: bop, left: x, right: y }, rt)
            }
            Expr::Cast(x, k) => {
                let v = self.expr(x, None)?;
                if self.f.ty(v).as_scalar().is_none() {
                    return self.err("cast of a non-scalar");
                }
                self.add(NodeKind::Unary { op: UnaryOp::Cast(*k), input: v }, Type::Scalar(*k))
            }
            Expr::Access(..) => {
                let mut path = vec![];
                let root = Self::flatten_access(e, &mut path);
                let coll = self.expr(root, None)?;
                let path: Vec<Access> = path.into_iter().cloned().collect();
                let idx = self.indices(&path)?;
                let ct = self.f.ty(coll).clone();
                let rt = match crate::ir::verify::index_type(&ct, &idx) {
                    Ok(t) => t,
                    Err(m) => return self.err(m),
                };
                self.add(NodeKind::Read { collection: coll, indices: idx }, rt)
            }
            Expr::Tuple(es) => {
                let vals: Vec<NodeId> = es.iter().map(|x| self.expr(x, None)).collect::<Result<_>>()?;
                let t = Type::Product(vals.iter().map(|v| self.f.ty(*v).clone()).collect());
                let mut cur = self.zero(&t);
                for (i, v) in vals.into_iter().enumerate() {
                    cur = self.add(NodeKind::Write { collection: cur, indices: vec![Index::Field(i)], value: v }, t.clone());
                }
                cur
            }
            Expr::Call { name, dcs, args } => match (name.as_str(), args.len()) {
                ("min" | "max", 2) if self.sigs.get(name).is_none() => {
                    let (x, y) = self.operands(&args[0], &args[1], hint)?;
                    let t = self.f.ty(x).clone();
                    if &t != self.f.ty(y) || t.as_scalar().is_none_or(|k| k.is_bool()) {
                        return self.err(format!("`{name}` needs two numeric operands of one type"));
                    }
                    let op = if name == "min" { BinaryOp::Min } else { BinaryOp::Max };
                    self.add(NodeKind::Binary { op, left: x, right: y }, t)
                }
                _ => {
                    let Some(sig) = self.sigs.get(name) else {
                        return self.err(format!("unknown function `{name}`"));
                    };
                    if dcs.len() != sig.dcs {
                        return self.err(format!("`{name}` expects {} dynamic constant arguments", sig.dcs));
                    }
                    if args.len() != sig.params.len() {
                        return self.err(format!("`{name}` expects {} arguments", sig.params.len()));
                    }
                    let dyn_args: Vec<DynConst> = dcs.iter().map(|d| self.dyn_const(d)).collect::<Result<_>>()?;
                    let params: Vec<Type> = sig.params.iter().map(|p| p.substitute(&dyn_args)).collect();
                    let (callee, ret) = (sig.id, sig.ret.substitute(&dyn_args));
                    let mut vals = vec![];
                    for (a, pt) in args.iter().zip(&params) {
                        let v = self.expr(a, Some(pt))?;
                        if self.f.ty(v) != pt {
                            return self.err(format!("argument type mismatch in call to `{name}`"));
                        }
                        vals.push(v);
                    }
                    let control = self.ctrl();
                    self.add(NodeKind::Call { control, callee, dyn_args, args: vals }, ret)
                }
            },
        })
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<()> {
        self.push_scope();
        for s in stmts {
            if self.ctrl.is_none() {
                break;
            }
            self.stmt(s)?;
        }
        self.pop_scope();
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<()> {
        self.line = s.line;
        let saved = self.labels.clone();
        for l in &s.labels {
            self.labels.insert(format!("{}@{}", self.f.name, l));
        }
        let r = self.stmt_inner(s);
        self.labels = saved;
        r
    }

    fn stmt_inner(&mut self, s: &Stmt) -> Result<()> {
        match &s.kind {
            StmtKind::Let { name, ty, init } => {
                let ty = ty.as_ref().map(|t| self.ty(t)).transpose()?;
                let v = match (init, &ty) {
                    (Some(e), _) => self.expr(e, ty.as_ref())?,
                    (None, Some(t)) => self.zero(t),
                    (None, None) => unreachable!(),
                };
                let vt = self.f.ty(v).clone();
                if ty.as_ref().is_some_and(|t| t != &vt) {
                    return self.err(format!("`{name}` initializer has type {}", self.f.type_display(&vt)));
                }
                self.declare(name, vt, v, true);
            }
            StmtKind::Assign { var, path, op, value } => {
                let Some(vid) = self.lookup(var) else {
                    return self.err(format!("assignment to unknown variable `{var}`"));
                };
                if self.readonly.contains(&vid) {
                    return self.err(format!("loop variable `{var}` cannot be assigned"));
                }
                let coll = self.state[&vid];
                let idx = self.indices(path)?;
                let target_ty = match crate::ir::verify::index_type(&self.var_types[vid], &idx) {
                    Ok(t) => t,
                    Err(m) => return self.err(m),
                };
                let rhs = self.expr(value, Some(&target_ty))?;
                if self.f.ty(rhs) != &target_ty {
                    return self.err(format!(
                        "assigned value has type {}, expected {}",
                        self.f.type_display(self.f.ty(rhs)),
                        self.f.type_display(&target_ty)
                    ));
                }
                let new = if *op == AssignOp::Set {
                    rhs
                } else {
                    let cur = if idx.is_empty() {
                        coll
                    } else {
                        self.add(NodeKind::Read { collection: coll, indices: idx.clone() }, target_ty.clone())
                    };
                    let bop = match op {
                        AssignOp::Add => BinaryOp::Add,
                        AssignOp::Sub => BinaryOp::Sub,
                        AssignOp::Mul => BinaryOp::Mul,
                        AssignOp::Div => BinaryOp::Div,
                        AssignOp::Set => unreachable!(),
                    };
                    if target_ty.as_scalar().is_none_or(|k| k.is_bool()) {
                        return self.err("compound assignment needs a numeric target");
                    }
                    self.add(NodeKind::Binary { op: bop, left: cur, right: rhs }, target_ty)
                };
                let result = if idx.is_empty() {
                    new
                } else {
                    let t = self.var_types[vid].clone();
                    self.add(NodeKind::Write { collection: coll, indices: idx, value: new }, t)
                };
                self.state.insert(vid, result);
            }
            StmtKind::Block(b) => self.block(b)?,
            StmtKind::Return(e) => {
                let rt = self.f.return_type.clone();
                let v = self.expr(e, Some(&rt))?;
                if self.f.ty(v) != &rt {
                    return self.err("returned value has the wrong type");
                }
                self.returns.push((self.ctrl(), v));
                self.ctrl = None;
            }
            StmtKind::If { cond, then, els } => {
                let c = self.expr(cond, None)?;
                if !self.f.ty(c).is_bool() {
                    return self.err("`if` condition must be boolean");
                }
                let iff = self.add(NodeKind::If { control: self.ctrl(), cond: c }, Type::Control);
                let t_proj = self.add(NodeKind::Projection { control: iff, index: 1 }, Type::Control);
                let f_proj = self.add(NodeKind::Projection { control: iff, index: 0 }, Type::Control);
                let before = self.state.clone();
                self.ctrl = Some(t_proj);
                self.block(then)?;
                let t_out = (self.ctrl, std::mem::replace(&mut self.state, before));
                self.ctrl = Some(f_proj);
                if let Some(e) = els {
                    self.block(e)?;
                }
                let f_out = (self.ctrl, self.state.clone());
                match (t_out.0, f_out.0) {
                    (None, None) => self.ctrl = None,
                    (Some(c), None) => {
                        self.ctrl = Some(c);
                        self.state = t_out.1;
                    }
                    (None, Some(c)) => {
                        self.ctrl = Some(c);
                        self.state = f_out.1;
                    }
                    (Some(a), Some(b)) => {
                        let region = self.add(NodeKind::Region { preds: vec![a, b] }, Type::Control);
                        for (vid, &tv) in &t_out.1 {
                            let fv = f_out.1[vid];
                            let v = if tv == fv {
                                tv
                            } else {
                                let t = self.var_types[*vid].clone();
                                self.add(NodeKind::Phi { region, inputs: vec![tv, fv] }, t)
                            };
                            self.state.insert(*vid, v);
                        }
                        self.ctrl = Some(region);
                    }
                }
            }
            StmtKind::While { cond, body } => self.lower_loop(None, Some(cond), body)?,
            StmtKind::For { var, lo, hi, body } => {
                let hi_hint = if is_literal(hi) && is_literal(lo) { Some(u64t()) } else { None };
                let (lo_n, hi_n) = if is_literal(hi) {
                    let l = self.expr(lo, hi_hint.as_ref())?;
                    let t = self.f.ty(l).clone();
                    (l, self.expr(hi, Some(&t))?)
                } else {
                    let h = self.expr(hi, hi_hint.as_ref())?;
                    let t = self.f.ty(h).clone();
                    (self.expr(lo, Some(&t))?, h)
                };
                let t = self.f.ty(lo_n).clone();
                if &t != self.f.ty(hi_n) || !is_int_like(&t) {
                    return self.err("`for` bounds must be integers of one type");
                }
                self.push_scope();
                let vid = self.declare(var, t, lo_n, false);
                self.readonly.insert(vid);
                self.lower_loop(Some((vid, hi_n)), None, body)?;
                self.pop_scope();
            }
        }
        Ok(())
    }

    /// Condition-first loop: header region, phis for every live variable,
    /// `if` with projection 1 entering the body and projection 0 exiting.
    fn lower_loop(&mut self, counter: Option<(VarId, NodeId)>, cond: Option<&Expr>, body: &[Stmt]) -> Result<()> {
        let entry = self.ctrl();
        let header = self.add(NodeKind::Region { preds: vec![entry] }, Type::Control);
        let entry_state = self.state.clone();
        let mut phis = BTreeMap::new();
        for (&vid, &v) in &entry_state {
            let t = self.var_types[vid].clone();
            let p = self.add(NodeKind::Phi { region: header, inputs: vec![v] }, t);
            phis.insert(vid, p);
        }
        self.state = phis.clone();
        let c = match counter {
            Some((vid, hi)) => {
                let i = self.state[&vid];
                self.add(NodeKind::Binary { op: BinaryOp::Lt, left: i, right: hi }, Type::Scalar(ScalarKind::Bool))
            }
            None => self.expr(cond.unwrap(), None)?,
        };
        if !self.f.ty(c).is_bool() {
            return self.err("loop condition must be boolean");
        }
        let iff = self.add(NodeKind::If { control: header, cond: c }, Type::Control);
        let exit = self.add(NodeKind::Projection { control: iff, index: 0 }, Type::Control);
        let body_proj = self.add(NodeKind::Projection { control: iff, index: 1 }, Type::Control);
        self.ctrl = Some(body_proj);
        self.block(body)?;
        if let Some(latch) = self.ctrl {
            if let Some((vid, _)) = counter {
                let i = self.state[&vid];
                let t = self.var_types[vid].clone();
                let k = t.as_scalar().unwrap();
                let one = self.add(NodeKind::Constant(Constant::Scalar(k, 1)), t.clone());
                let next = self.add(NodeKind::Binary { op: BinaryOp::Add, left: i, right: one }, t);
                self.state.insert(vid, next);
            }
            self.f.node_mut(header).kind = NodeKind::Region { preds: vec![entry, latch] };
            for (vid, &p) in &phis {
                let back = self.state[vid];
                if let NodeKind::Phi { inputs, .. } = &mut self.f.node_mut(p).kind {
                    inputs.push(back);
                }
            }
        }
        self.state = phis;
        self.ctrl = Some(exit);
        Ok(())
    }

    fn finish(mut self) -> Result<IrFunction> {
        if let Some(c) = self.ctrl {
            // Implicit return: the unique live value of the return type,
            // preferring function-local declarations over parameters.
            let rt = self.f.return_type.clone();
            let cands: Vec<VarId> = self.state.keys().copied().filter(|&v| self.var_types[v] == rt).collect();
            let locals: Vec<VarId> = cands.iter().copied().filter(|&v| self.var_local[v]).collect();
            let pick = if locals.len() == 1 {
                locals[0]
            } else if cands.len() == 1 {
                cands[0]
            } else {
                return self.err("function ends without `return` and no unique value of the return type is live");
            };
            self.returns.push((c, self.state[&pick]));
        }
        let rt = self.f.return_type.clone();
        let (control, value) = match self.returns.len() {
            0 => return self.err("function never returns"),
            1 => self.returns[0],
            _ => {
                let preds: Vec<NodeId> = self.returns.iter().map(|r| r.0).collect();
                let vals: Vec<NodeId> = self.returns.iter().map(|r| r.1).collect();
                let region = self.f.add(NodeKind::Region { preds }, Type::Control);
                let phi = self.f.add(NodeKind::Phi { region, inputs: vals }, rt);
                (region, phi)
            }
        };
        self.f.add(NodeKind::Return { control, value }, Type::Control);
        cleanup::remove_trivial_phis(&mut self.f);
        cleanup::dce_function(&mut self.f);
        Ok(self.f)
    }
}

/// Lower a parsed program into IR. Labels are recorded on the nodes as
/// `function@label`; see [`label_map`].
pub fn lower(prog: &Program) -> Result<IrModule> {
    let mut sigs = BTreeMap::new();
    for (i, fd) in prog.functions.iter().enumerate() {
        if sigs.contains_key(&fd.name) {
            return Err(Error::Lower(format!("function `{}` defined twice", fd.name)));
        }
        let probe = Lower {
            sigs: &BTreeMap::new(),
            f: IrFunction::new(fd.name.clone(), fd.dc_params.clone(), vec![], Type::Control),
            scopes: vec![],
            var_types: vec![],
            var_names: vec![],
            var_local: vec![],
            readonly: BTreeSet::new(),
            state: BTreeMap::new(),
            ctrl: None,
            returns: vec![],
            labels: BTreeSet::new(),
            line: fd.line,
        };
        let params = fd.params.iter().map(|(_, t)| probe.ty(t)).collect::<Result<Vec<_>>>()?;
        let ret = probe.ty(&fd.ret)?;
        sigs.insert(fd.name.clone(), Sig { id: FuncId(i as u32), dcs: fd.dc_params.len(), params, ret });
    }
    let mut module = IrModule::default();
    for fd in &prog.functions {
        let sig = &sigs[&fd.name];
        let mut f = IrFunction::new(fd.name.clone(), fd.dc_params.clone(), sig.params.clone(), sig.ret.clone());
        f.entry = fd.entry;
        let mut l = Lower {
            sigs: &sigs,
            f,
            scopes: vec![BTreeMap::new()],
            var_types: vec![],
            var_names: vec![],
            var_local: vec![],
            readonly: BTreeSet::new(),
            state: BTreeMap::new(),
            ctrl: None,
            returns: vec![],
            labels: BTreeSet::new(),
            line: fd.line,
        };
        l.ctrl = Some(l.f.start());
        for (i, (name, _)) in fd.params.iter().enumerate() {
            let t = sig.params[i].clone();
            let p = l.f.add(NodeKind::Parameter { index: i }, t.clone());
            l.declare(name, t, p, false);
        }
        for s in &fd.body {
            if l.ctrl.is_none() {
                break;
            }
            l.stmt(s)?;
        }
        module.functions.push(l.finish()?);
    }
    if let Err(e) = crate::ir::analysis::call_graph_postorder(&module) {
        return Err(Error::Lower(e));
    }
    Ok(module)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::ir::analysis::{natural_loops, DomTree};
    use crate::ir::verify::verify;
    use crate::runtime::{oracle_execute, Value};

    const MATMUL: &str = "#[entry]
fn matmul<n, m, l: usize>(a: f32[n, m], b: f32[m, l]) -> f32[n, l] {
  let res : f32[n, l];
  @outer for i in 0..n {
    @middle for j in 0..l {
      @inner for k in 0..m {
        res[i, j] += a[i, k] * b[k, j];
      }
    }
  }
}";

    fn lower_src(src: &str) -> IrModule {
        lower(&parse("t.jn", src).unwrap()).unwrap()
    }

    #[test]
    fn matmul_lowers_to_three_loops_and_one_zero_array() {
        let m = lower_src(MATMUL);
        assert_eq!(verify(&m), vec![]);
        let f = &m.functions[0];
        let dom = DomTree::compute(f);
        assert_eq!(natural_loops(f, &dom).len(), 3);
        let zeros = f.live_ids().filter(|&i| matches!(f.kind(i), NodeKind::Constant(Constant::Zero(_)))).count();
        assert_eq!(zeros, 1);
        assert!(f.live_ids().any(|i| matches!(f.kind(i), NodeKind::Read { .. })));
        assert!(f.live_ids().any(|i| matches!(f.kind(i), NodeKind::Write { .. })));
    }

    #[test]
    fn middle_minus_inner_is_the_j_loop_skeleton() {
        let m = lower_src(MATMUL);
        let labels = label_map(&m);
        let key = |l: &str| ("matmul".to_string(), l.to_string());
        let diff: BTreeSet<NodeId> = labels[&key("middle")].difference(&labels[&key("inner")]).copied().collect();
        let f = &m.functions[0];
        let kinds: Vec<&str> = diff.iter().map(|&i| f.kind(i).name()).collect();
        // header region, if, two projections, induction and res phis, bound,
        // comparison, initial 0, increment and its constant 1
        let mut sorted = kinds.clone();
        sorted.sort();
        assert_eq!(
            sorted,
            vec!["binary", "binary", "constant", "constant", "dyn_const", "if", "phi", "phi", "proj", "proj", "region"],
            "{kinds:?}"
        );
        assert!(diff.iter().all(|&i| !matches!(f.kind(i), NodeKind::Read { .. } | NodeKind::Write { .. })));
    }

    #[test]
    fn scalar_function_has_no_collection_ops() {
        let m = lower_src("fn f(x: i64) -> i64 { let y = x * 2; if y > 10 { y = y - 10; } return y + 1; }");
        assert_eq!(verify(&m), vec![]);
        let f = &m.functions[0];
        assert!(!f.live_ids().any(|i| matches!(f.kind(i), NodeKind::Read { .. } | NodeKind::Write { .. })));
        let r = oracle_execute(&m, FuncId(0), &[], vec![Value::i64(7)]).unwrap();
        assert_eq!(r, Value::i64(5));
    }

    #[test]
    fn matmul_identity_through_oracle() {
        let m = lower_src(MATMUL);
        let id = Value::f32_array(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let a = Value::f32_array(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let r = oracle_execute(&m, FuncId(0), &[2, 2, 2], vec![id, a.clone()]).unwrap();
        assert_eq!(r, a);
    }

    #[test]
    fn rejects_type_errors_and_recursion() {
        let e = lower(&parse("t", "fn f(x: i64) -> f32 { return x; }").unwrap()).unwrap_err();
        assert!(e.to_string().contains("wrong type"), "{e}");
        let e = lower(&parse("t", "fn f(x: i64) -> i64 { return f(x); }").unwrap()).unwrap_err();
        assert!(e.to_string().contains("cycle"), "{e}");
        let e = lower(&parse("t", "fn f<n: usize>(x: f32[n]) -> f32 { return x[0, 1]; }").unwrap()).unwrap_err();
        assert!(e.to_string().contains("rank"), "{e}");
    }

    #[test]
    fn calls_and_multiple_returns() {
        let src = "fn sq(x: i64) -> i64 { return x * x; }
fn f(x: i64) -> i64 { if x < 0 { return 0 - x; } let y = sq(x); return y; }";
        let m = lower_src(src);
        assert_eq!(verify(&m), vec![]);
        assert_eq!(oracle_execute(&m, FuncId(1), &[], vec![Value::i64(-3)]).unwrap(), Value::i64(3));
        assert_eq!(oracle_execute(&m, FuncId(1), &[], vec![Value::i64(4)]).unwrap(), Value::i64(16));
    }
}
