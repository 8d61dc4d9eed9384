use std::collections::BTreeSet;
use std::fmt;

use super::analysis::{self, DomTree};
use super::{BinaryOp, Constant, FuncId, Index, IrFunction, IrModule, NodeId, NodeKind, ScalarKind, Type, UnaryOp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: String,
    pub node: Option<NodeId>,
    pub rule: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "{}: node {}: {}", self.function, n, self.rule),
            None => write!(f, "{}: {}", self.function, self.rule),
        }
    }
}

/// Type reached by applying `indices` to a value of type `base`.
pub fn index_type(base: &Type, indices: &[Index]) -> Result<Type, String> {
    let mut cur = base.clone();
    for idx in indices {
        cur = match (idx, &cur) {
            (Index::Field(i), Type::Product(fs)) => fs.get(*i).cloned().ok_or(format!("field {i} out of range"))?,
            (Index::Variant(i), Type::Summation(vs)) => {
                vs.get(*i).cloned().ok_or(format!("variant {i} out of range"))?
            }
            (Index::Position(ps), Type::Array(e, ext)) => {
                if ps.len() != ext.len() {
                    return Err(format!("array of rank {} indexed with {} positions", ext.len(), ps.len()));
                }
                (**e).clone()
            }
            (i, t) => return Err(format!("index {i:?} does not apply to {t}")),
        };
    }
    Ok(cur)
}

struct Checker<'a> {
    m: &'a IrModule,
    f: &'a IrFunction,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn err(&mut self, node: Option<NodeId>, rule: impl Into<String>) {
        self.out.push(Diagnostic { function: self.f.name.clone(), node, rule: rule.into() });
    }

    fn check_type_dcs(&mut self, node: Option<NodeId>, t: &Type) {
        let mut dcs = vec![];
        t.dyn_consts(&mut dcs);
        for d in dcs {
            if d.max_param().is_some_and(|p| p >= self.f.num_dc_params()) {
                self.err(node, format!("dynamic constant `{d}` references a missing parameter"));
            }
        }
        if let Type::Array(_, ext) = t {
            if ext.is_empty() {
                self.err(node, "array type has no extents");
            }
        }
    }

    fn ty(&self, n: NodeId) -> &Type {
        self.f.ty(n)
    }

    fn is_ctrl(&self, n: NodeId) -> bool {
        self.f.kind(n).is_control()
    }

    fn check_node(&mut self, id: NodeId) {
        let f = self.f;
        let node = f.node(id);
        for i in node.kind.inputs() {
            if i.idx() >= f.nodes.len() || !f.is_live(i) {
                self.err(Some(id), format!("input {i} is not a live node"));
                return;
            }
        }
        self.check_type_dcs(Some(id), &node.ty);
        for d in node.kind.dyn_consts() {
            let limit = match &node.kind {
                NodeKind::Call { .. } => usize::MAX,
                _ => f.num_dc_params(),
            };
            if d.max_param().is_some_and(|p| p >= limit) {
                self.err(Some(id), format!("dynamic constant `{d}` references a missing parameter"));
            }
        }
        let ty = &node.ty;
        if node.kind.is_control() != ty.is_control() {
            self.err(Some(id), "control nodes must have control type and data nodes must not");
        }
        let want_ctrl = |c: &mut Self, n: NodeId, what: &str| {
            if !c.is_ctrl(n) {
                c.err(Some(id), format!("{what} input {n} is not a control node"));
            }
        };
        let want_data = |c: &mut Self, n: NodeId, what: &str| {
            if c.is_ctrl(n) {
                c.err(Some(id), format!("{what} input {n} is a control node"));
            }
        };
        match &node.kind {
            NodeKind::Tombstone | NodeKind::Start => {}
            NodeKind::Region { preds } => {
                if preds.is_empty() {
                    self.err(Some(id), "region has no predecessors");
                }
                for &p in preds {
                    want_ctrl(self, p, "region");
                }
            }
            NodeKind::If { control, cond } => {
                want_ctrl(self, *control, "if");
                want_data(self, *cond, "if condition");
                if !self.ty(*cond).is_bool() {
                    self.err(Some(id), "if condition is not boolean");
                }
            }
            NodeKind::Projection { control, index } => {
                if !matches!(f.kind(*control), NodeKind::If { .. }) {
                    self.err(Some(id), "projection of a non-if node");
                }
                if *index > 1 {
                    self.err(Some(id), "projection index must be 0 or 1");
                }
            }
            NodeKind::Return { control, value } => {
                want_ctrl(self, *control, "return");
                want_data(self, *value, "return value");
                if self.ty(*value) != &f.return_type {
                    self.err(Some(id), "return value type differs from the function return type");
                }
            }
            NodeKind::Fork { control, factors } => {
                want_ctrl(self, *control, "fork");
                if factors.is_empty() {
                    self.err(Some(id), "fork has no factors");
                }
            }
            NodeKind::Join { control } => want_ctrl(self, *control, "join"),
            NodeKind::ThreadId { fork, dim } => match f.kind(*fork) {
                NodeKind::Fork { factors, .. } => {
                    if *dim >= factors.len() {
                        self.err(Some(id), format!("thread id dimension {dim} >= fork factor count {}", factors.len()));
                    }
                    if ty != &Type::Scalar(ScalarKind::U64) {
                        self.err(Some(id), "thread id must be u64");
                    }
                }
                _ => self.err(Some(id), "thread id does not reference a fork"),
            },
            NodeKind::Reduce { join, init, reduct } => {
                if !f.kind(*join).is_join() {
                    self.err(Some(id), "reduce does not reference a join");
                }
                want_data(self, *init, "reduce init");
                want_data(self, *reduct, "reduce reduct");
                if self.ty(*init) != ty || self.ty(*reduct) != ty {
                    self.err(Some(id), "reduce inputs differ in type from the reduce");
                }
            }
            NodeKind::Phi { region, inputs } => match f.kind(*region) {
                NodeKind::Region { preds } => {
                    if preds.len() != inputs.len() {
                        self.err(
                            Some(id),
                            format!("phi has {} inputs but its region has {} predecessors", inputs.len(), preds.len()),
                        );
                    }
                    for &i in inputs {
                        want_data(self, i, "phi");
                        if self.ty(i) != ty {
                            self.err(Some(id), format!("phi input {i} differs in type"));
                        }
                    }
                }
                _ => self.err(Some(id), "phi does not reference a region"),
            },
            NodeKind::Parameter { index } => match f.param_types.get(*index) {
                Some(t) if t == ty => {}
                Some(_) => self.err(Some(id), "parameter type differs from the signature"),
                None => self.err(Some(id), format!("parameter {index} out of range")),
            },
            NodeKind::Constant(c) => match c {
                Constant::Scalar(k, _) => {
                    if ty != &Type::Scalar(*k) {
                        self.err(Some(id), "constant type mismatch");
                    }
                }
                Constant::Zero(t) => {
                    if t != ty {
                        self.err(Some(id), "constant type mismatch");
                    }
                }
            },
            NodeKind::DynamicConstant(_) => {
                if ty != &Type::Scalar(ScalarKind::U64) {
                    self.err(Some(id), "dynamic constant node must be u64");
                }
            }
            NodeKind::Binary { op, left, right } => {
                want_data(self, *left, "binary");
                want_data(self, *right, "binary");
                let (lt, rt) = (self.ty(*left), self.ty(*right));
                match lt.as_scalar() {
                    Some(k) if lt == rt => {
                        let want = if op.is_comparison() { Type::Scalar(ScalarKind::Bool) } else { lt.clone() };
                        if ty != &want {
                            self.err(Some(id), "binary result type mismatch");
                        }
                        let bitwise = matches!(op, BinaryOp::And | BinaryOp::Or | BinaryOp::Xor);
                        if bitwise && k.is_float() {
                            self.err(Some(id), "bitwise operation on floats");
                        }
                        let arith = !bitwise && !matches!(op, BinaryOp::Eq | BinaryOp::Ne);
                        if arith && k.is_bool() {
                            self.err(Some(id), "arithmetic on booleans");
                        }
                    }
                    _ => self.err(Some(id), "binary operands must be equal scalar types"),
                }
            }
            NodeKind::Unary { op, input } => {
                want_data(self, *input, "unary");
                match (op, self.ty(*input).as_scalar()) {
                    (UnaryOp::Cast(k), Some(_)) => {
                        if ty != &Type::Scalar(*k) {
                            self.err(Some(id), "cast result type mismatch");
                        }
                    }
                    (UnaryOp::Neg, Some(k)) if !k.is_bool() => {
                        if ty != &Type::Scalar(k) {
                            self.err(Some(id), "negation type mismatch");
                        }
                    }
                    (UnaryOp::Not, Some(k)) if !k.is_float() => {
                        if ty != &Type::Scalar(k) {
                            self.err(Some(id), "not type mismatch");
                        }
                    }
                    _ => self.err(Some(id), "unary operand type invalid"),
                }
            }
            NodeKind::Read { collection, indices } | NodeKind::Write { collection, indices, .. } => {
                want_data(self, *collection, "collection");
                let ct = self.ty(*collection).clone();
                if !ct.is_collection() {
                    self.err(Some(id), "read/write of a non-collection");
                }
                for i in indices {
                    if let Index::Position(ps) = i {
                        for &p in ps {
                            if !self.ty(p).as_scalar().is_some_and(|k| k.is_integer()) {
                                self.err(Some(id), format!("array index {p} is not an integer"));
                            }
                        }
                    }
                }
                match index_type(&ct, indices) {
                    Ok(elem) => match &node.kind {
                        NodeKind::Read { .. } => {
                            if &elem != ty {
                                self.err(Some(id), "read result type mismatch");
                            }
                        }
                        NodeKind::Write { value, .. } => {
                            if self.ty(*value) != &elem {
                                self.err(Some(id), "written value type mismatch");
                            }
                            if ty != &ct {
                                self.err(Some(id), "write result type must equal the collection type");
                            }
                        }
                        _ => unreachable!(),
                    },
                    Err(e) => self.err(Some(id), e),
                }
            }
            NodeKind::Call { control, callee, dyn_args, args } => {
                want_ctrl(self, *control, "call");
                if callee.idx() >= self.m.functions.len() {
                    self.err(Some(id), "call to unknown function");
                    return;
                }
                let g = self.m.func(*callee);
                if dyn_args.len() != g.num_dc_params() {
                    self.err(Some(id), "dynamic constant argument count mismatch");
                }
                for d in dyn_args {
                    if d.max_param().is_some_and(|p| p >= f.num_dc_params()) {
                        self.err(Some(id), format!("dynamic constant `{d}` references a missing parameter"));
                    }
                }
                if args.len() != g.param_types.len() {
                    self.err(Some(id), "argument count mismatch");
                } else {
                    for (a, pt) in args.iter().zip(&g.param_types) {
                        if self.ty(*a) != &pt.substitute(dyn_args) {
                            self.err(Some(id), format!("argument {a} type mismatch"));
                        }
                    }
                }
                if ty != &g.return_type.substitute(dyn_args) {
                    self.err(Some(id), "call result type mismatch");
                }
            }
            NodeKind::Copy { collection } => {
                if self.ty(*collection) != ty || !ty.is_collection() {
                    self.err(Some(id), "copy type mismatch");
                }
            }
        }
    }

    fn check_structure(&mut self) {
        let f = self.f;
        let returns: Vec<NodeId> = f.live_ids().filter(|&i| f.kind(i).is_return()).collect();
        if returns.len() != 1 {
            self.err(None, format!("function has {} return nodes", returns.len()));
        }
        if !f.nodes.first().is_some_and(|n| n.kind.is_start()) {
            self.err(None, "node 0 is not start");
            return;
        }
        if f.live_ids().filter(|&i| f.kind(i).is_start()).count() != 1 {
            self.err(None, "function has more than one start node");
        }
        let dom = DomTree::compute(f);
        for id in f.live_ids() {
            if f.kind(id).is_control() && !dom.is_reachable(id) {
                self.err(Some(id), "control node unreachable from start");
            }
        }
        let succs = analysis::control_succs(f);
        for id in f.live_ids() {
            let k = f.kind(id);
            let n = succs[id.idx()].len();
            let ok = match k {
                NodeKind::Return { .. } => n == 0,
                NodeKind::If { .. } => n == 2,
                _ if k.is_control() => n == 1,
                _ => true,
            };
            if !ok {
                self.err(Some(id), format!("{} has {n} control successors", k.name()));
            }
            if let NodeKind::Call { control, .. } = k {
                if succs[control.idx()].len() != 1 || f.kind(*control).is_if() {
                    self.err(Some(id), "call is attached to a control node without a single successor");
                }
            }
        }
        if !self.out.is_empty() {
            return;
        }
        match analysis::fork_join_map(f) {
            Ok(fj) => {
                for id in f.live_ids() {
                    if let NodeKind::Reduce { join, .. } = f.kind(id) {
                        if !fj.values().any(|j| j == join) {
                            self.err(Some(id), "reduce references an unmatched join");
                        }
                    }
                }
                if let Err(e) = analysis::fork_parents(f) {
                    self.err(None, e);
                }
            }
            Err(e) => self.err(None, e),
        }
    }
}

pub fn verify_function(m: &IrModule, fid: FuncId) -> Vec<Diagnostic> {
    let f = m.func(fid);
    let mut c = Checker { m, f, out: vec![] };
    for t in f.param_types.iter().chain(std::iter::once(&f.return_type)) {
        c.check_type_dcs(None, t);
    }
    if f.entry {
        for t in f.param_types.iter().chain(std::iter::once(&f.return_type)) {
            let ok = match t {
                Type::Scalar(_) => true,
                Type::Array(e, _) => e.as_scalar().is_some(),
                _ => false,
            };
            if !ok {
                c.err(None, format!("entry signature type {t} is not a scalar or scalar array"));
            }
        }
    }
    for id in f.live_ids() {
        c.check_node(id);
    }
    if c.out.is_empty() {
        c.check_structure();
    }
    c.out
}

pub fn verify(m: &IrModule) -> Vec<Diagnostic> {
    let mut out = vec![];
    let mut names = BTreeSet::new();
    for fid in m.func_ids() {
        if !names.insert(m.func(fid).name.clone()) {
            out.push(Diagnostic { function: m.func(fid).name.clone(), node: None, rule: "duplicate function name".into() });
        }
        out.extend(verify_function(m, fid));
    }
    if let Err(e) = analysis::call_graph_postorder(m) {
        out.push(Diagnostic { function: String::new(), node: None, rule: e });
    }
    out
}
