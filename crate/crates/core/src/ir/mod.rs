//! The sea-of-nodes IR.
//!
//! A module is a list of functions; each function owns a flat arena of nodes
//! addressed by dense [`NodeId`]s. Control and data nodes share the arena.
//! Removed nodes are tombstoned in place so ids held by schedule variables
//! stay meaningful while a pass runs.

pub mod analysis;
pub mod dot;
pub mod dump;
pub mod dynconst;
pub mod types;
pub mod verify;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use dynconst::DynConst;
pub use types::{ScalarKind, Type};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FuncId(pub u32);

impl FuncId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    Xor,
    Min,
    Max,
}

impl BinaryOp {
    pub fn is_comparison(self) -> bool {
        use BinaryOp::*;
        matches!(self, Lt | Le | Gt | Ge | Eq | Ne)
    }

    pub fn name(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            Rem => "rem",
            Lt => "lt",
            Le => "le",
            Gt => "gt",
            Ge => "ge",
            Eq => "eq",
            Ne => "ne",
            And => "and",
            Or => "or",
            Xor => "xor",
            Min => "min",
            Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Not,
    Cast(ScalarKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Index {
    Field(usize),
    Variant(usize),
    Position(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constant {
    /// Scalar stored as raw bits (integers sign/zero extended, floats as IEEE bits).
    Scalar(ScalarKind, u64),
    /// The all-zero value of a (usually collection) type.
    Zero(Type),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attr {
    ParallelReduce,
    MonoidReduce,
    NoResetConstant,
    AsyncCall,
    /// Fork marked for parallel lowering by the `parallelize` pass.
    ParallelFork,
}

impl Attr {
    pub fn name(self) -> &'static str {
        match self {
            Attr::ParallelReduce => "ParallelReduce",
            Attr::MonoidReduce => "MonoidReduce",
            Attr::NoResetConstant => "NoResetConstant",
            Attr::AsyncCall => "AsyncCall",
            Attr::ParallelFork => "Parallel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Tombstone,
    Start,
    Region { preds: Vec<NodeId> },
    If { control: NodeId, cond: NodeId },
    Projection { control: NodeId, index: usize },
    Return { control: NodeId, value: NodeId },
    Fork { control: NodeId, factors: Vec<DynConst> },
    Join { control: NodeId },
    ThreadId { fork: NodeId, dim: usize },
    Reduce { join: NodeId, init: NodeId, reduct: NodeId },
    Phi { region: NodeId, inputs: Vec<NodeId> },
    Parameter { index: usize },
    Constant(Constant),
    DynamicConstant(DynConst),
    Binary { op: BinaryOp, left: NodeId, right: NodeId },
    Unary { op: UnaryOp, input: NodeId },
    Read { collection: NodeId, indices: Vec<Index> },
    Write { collection: NodeId, indices: Vec<Index>, value: NodeId },
    /// A call executes on the control edge leaving `control`, which must be a
    /// control node with a single control successor.
    Call { control: NodeId, callee: FuncId, dyn_args: Vec<DynConst>, args: Vec<NodeId> },
    /// Explicit collection copy, inserted when implicit clones are spilled
    /// and for inter-device transfers.
    Copy { collection: NodeId },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        use NodeKind::*;
        match self {
            Tombstone => "tombstone",
            Start => "start",
            Region { .. } => "region",
            If { .. } => "if",
            Projection { .. } => "proj",
            Return { .. } => "return",
            Fork { .. } => "fork",
            Join { .. } => "join",
            ThreadId { .. } => "thread_id",
            Reduce { .. } => "reduce",
            Phi { .. } => "phi",
            Parameter { .. } => "param",
            Constant(_) => "constant",
            DynamicConstant(_) => "dyn_const",
            Binary { .. } => "binary",
            Unary { .. } => "unary",
            Read { .. } => "read",
            Write { .. } => "write",
            Call { .. } => "call",
            Copy { .. } => "copy",
        }
    }

    pub fn is_control(&self) -> bool {
        use NodeKind::*;
        matches!(
            self,
            Start | Region { .. } | If { .. } | Projection { .. } | Return { .. } | Fork { .. } | Join { .. }
        )
    }

    pub fn is_tombstone(&self) -> bool {
        matches!(self, NodeKind::Tombstone)
    }

    /// All node inputs, control first, in a fixed order.
    pub fn inputs(&self) -> Vec<NodeId> {
        use NodeKind::*;
        let idx_inputs = |indices: &[Index], out: &mut Vec<NodeId>| {
            for i in indices {
                if let Index::Position(ps) = i {
                    out.extend(ps.iter().copied());
                }
            }
        };
        match self {
            Tombstone | Start | Parameter { .. } | Constant(_) | DynamicConstant(_) => vec![],
            Region { preds } => preds.clone(),
            If { control, cond } => vec![*control, *cond],
            Projection { control, .. } | Join { control } | Fork { control, .. } => vec![*control],
            Return { control, value } => vec![*control, *value],
            ThreadId { fork, .. } => vec![*fork],
            Reduce { join, init, reduct } => vec![*join, *init, *reduct],
            Phi { region, inputs } => {
                let mut v = vec![*region];
                v.extend(inputs.iter().copied());
                v
            }
            Binary { left, right, .. } => vec![*left, *right],
            Unary { input, .. } => vec![*input],
            Read { collection, indices } => {
                let mut v = vec![*collection];
                idx_inputs(indices, &mut v);
                v
            }
            Write { collection, indices, value } => {
                let mut v = vec![*collection];
                idx_inputs(indices, &mut v);
                v.push(*value);
                v
            }
            Call { control, args, .. } => {
                let mut v = vec![*control];
                v.extend(args.iter().copied());
                v
            }
            Copy { collection } => vec![*collection],
        }
    }

    /// Apply `f` to every input id in place.
    pub fn map_inputs(&mut self, mut f: impl FnMut(NodeId) -> NodeId) {
        use NodeKind::*;
        let map_idx = |indices: &mut Vec<Index>, f: &mut dyn FnMut(NodeId) -> NodeId| {
            for i in indices {
                if let Index::Position(ps) = i {
                    for p in ps {
                        *p = f(*p);
                    }
                }
            }
        };
        match self {
            Tombstone | Start | Parameter { .. } | Constant(_) | DynamicConstant(_) => {}
            Region { preds } => preds.iter_mut().for_each(|p| *p = f(*p)),
            If { control, cond } => {
                *control = f(*control);
                *cond = f(*cond);
            }
            Projection { control, .. } | Join { control } | Fork { control, .. } => *control = f(*control),
            Return { control, value } => {
                *control = f(*control);
                *value = f(*value);
            }
            ThreadId { fork, .. } => *fork = f(*fork),
            Reduce { join, init, reduct } => {
                *join = f(*join);
                *init = f(*init);
                *reduct = f(*reduct);
            }
            Phi { region, inputs } => {
                *region = f(*region);
                inputs.iter_mut().for_each(|p| *p = f(*p));
            }
            Binary { left, right, .. } => {
                *left = f(*left);
                *right = f(*right);
            }
            Unary { input, .. } => *input = f(*input),
            Read { collection, indices } => {
                *collection = f(*collection);
                map_idx(indices, &mut f);
            }
            Write { collection, indices, value } => {
                *collection = f(*collection);
                map_idx(indices, &mut f);
                *value = f(*value);
            }
            Call { control, args, .. } => {
                *control = f(*control);
                args.iter_mut().for_each(|p| *p = f(*p));
            }
            Copy { collection } => *collection = f(*collection),
        }
    }

    /// Control predecessors of a control node.
    pub fn control_preds(&self) -> Vec<NodeId> {
        use NodeKind::*;
        match self {
            Region { preds } => preds.clone(),
            If { control, .. } | Projection { control, .. } | Return { control, .. } | Fork { control, .. } | Join { control } => {
                vec![*control]
            }
            _ => vec![],
        }
    }

    /// Every dynamic constant expression the node mentions directly.
    pub fn dyn_consts(&self) -> Vec<&DynConst> {
        match self {
            NodeKind::Fork { factors, .. } => factors.iter().collect(),
            NodeKind::DynamicConstant(d) => vec![d],
            NodeKind::Call { dyn_args, .. } => dyn_args.iter().collect(),
            _ => vec![],
        }
    }

    pub fn is_phi(&self) -> bool {
        matches!(self, NodeKind::Phi { .. })
    }
    pub fn is_reduce(&self) -> bool {
        matches!(self, NodeKind::Reduce { .. })
    }
    pub fn is_fork(&self) -> bool {
        matches!(self, NodeKind::Fork { .. })
    }
    pub fn is_join(&self) -> bool {
        matches!(self, NodeKind::Join { .. })
    }
    pub fn is_region(&self) -> bool {
        matches!(self, NodeKind::Region { .. })
    }
    pub fn is_start(&self) -> bool {
        matches!(self, NodeKind::Start)
    }
    pub fn is_return(&self) -> bool {
        matches!(self, NodeKind::Return { .. })
    }
    pub fn is_if(&self) -> bool {
        matches!(self, NodeKind::If { .. })
    }
    pub fn is_call(&self) -> bool {
        matches!(self, NodeKind::Call { .. })
    }

    pub fn try_fork(&self) -> Option<(NodeId, &[DynConst])> {
        match self {
            NodeKind::Fork { control, factors } => Some((*control, factors)),
            _ => None,
        }
    }

    pub fn try_reduce(&self) -> Option<(NodeId, NodeId, NodeId)> {
        match self {
            NodeKind::Reduce { join, init, reduct } => Some((*join, *init, *reduct)),
            _ => None,
        }
    }

    pub fn try_thread_id(&self) -> Option<(NodeId, usize)> {
        match self {
            NodeKind::ThreadId { fork, dim } => Some((*fork, *dim)),
            _ => None,
        }
    }

    pub fn try_binary(&self, want: BinaryOp) -> Option<(NodeId, NodeId)> {
        match self {
            NodeKind::Binary { op, left, right } if *op == want => Some((*left, *right)),
            _ => None,
        }
    }

    pub fn try_phi(&self) -> Option<(NodeId, &[NodeId])> {
        match self {
            NodeKind::Phi { region, inputs } => Some((*region, inputs)),
            _ => None,
        }
    }

    /// The control node a pinned data node is attached to.
    pub fn pinned_control(&self) -> Option<NodeId> {
        match self {
            NodeKind::Phi { region, .. } => Some(*region),
            NodeKind::ThreadId { fork, .. } => Some(*fork),
            NodeKind::Reduce { join, .. } => Some(*join),
            NodeKind::Call { control, .. } => Some(*control),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub ty: Type,
    #[serde(default)]
    pub attrs: BTreeSet<Attr>,
    /// Qualified label names (`function@label`) covering this node.
    #[serde(default)]
    pub labels: BTreeSet<String>,
}

impl Node {
    pub fn new(kind: NodeKind, ty: Type) -> Self {
        Node { kind, ty, attrs: BTreeSet::new(), labels: BTreeSet::new() }
    }

    pub fn has_attr(&self, a: Attr) -> bool {
        self.attrs.contains(&a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    Unassigned,
    CpuSequential,
    HostOrchestration,
    GpuSimulated,
}

impl Device {
    pub fn name(self) -> &'static str {
        match self {
            Device::Unassigned => "unassigned",
            Device::CpuSequential => "cpu",
            Device::HostOrchestration => "host",
            Device::GpuSimulated => "gpu",
        }
    }
}

/// A divisibility requirement `divisor | dividend` recorded by a pass and
/// checked when the function is invoked.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    pub divisor: DynConst,
    pub dividend: DynConst,
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrFunction {
    pub name: String,
    /// Names of the dynamic-constant parameters; the count is the length.
    pub dc_params: Vec<String>,
    pub param_types: Vec<Type>,
    pub return_type: Type,
    pub nodes: Vec<Node>,
    pub entry: bool,
    pub device: Device,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

impl IrFunction {
    pub fn new(name: impl Into<String>, dc_params: Vec<String>, param_types: Vec<Type>, return_type: Type) -> Self {
        IrFunction {
            name: name.into(),
            dc_params,
            param_types,
            return_type,
            nodes: vec![Node::new(NodeKind::Start, Type::Control)],
            entry: false,
            device: Device::Unassigned,
            constraints: vec![],
        }
    }

    pub fn num_dc_params(&self) -> usize {
        self.dc_params.len()
    }

    pub fn start(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.idx()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.idx()]
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.idx()].kind
    }

    pub fn ty(&self, id: NodeId) -> &Type {
        &self.nodes[id.idx()].ty
    }

    pub fn add(&mut self, kind: NodeKind, ty: Type) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node::new(kind, ty));
        id
    }

    /// Add a node carrying the given labels.
    pub fn add_labeled(&mut self, kind: NodeKind, ty: Type, labels: &BTreeSet<String>) -> NodeId {
        let id = self.add(kind, ty);
        self.nodes[id.idx()].labels = labels.clone();
        id
    }

    pub fn kill(&mut self, id: NodeId) {
        let n = &mut self.nodes[id.idx()];
        n.kind = NodeKind::Tombstone;
        n.attrs.clear();
        n.labels.clear();
    }

    pub fn is_live(&self, id: NodeId) -> bool {
        !self.nodes[id.idx()].kind.is_tombstone()
    }

    pub fn live_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.kind.is_tombstone())
            .map(|(i, _)| NodeId(i as u32))
    }

    pub fn forks(&self) -> Vec<NodeId> {
        self.live_ids().filter(|&i| self.kind(i).is_fork()).collect()
    }

    pub fn return_node(&self) -> Option<NodeId> {
        self.live_ids().find(|&i| self.kind(i).is_return())
    }

    /// Replace every use of `old` by `new` (excluding the node `new` itself
    /// when it is among the users, to allow rewiring through a replacement).
    pub fn replace_uses(&mut self, old: NodeId, new: NodeId) {
        for (i, n) in self.nodes.iter_mut().enumerate() {
            if i == new.idx() {
                continue;
            }
            n.kind.map_inputs(|x| if x == old { new } else { x });
        }
    }

    /// Replace every use of `old` by `new`, including inside `new`.
    pub fn replace_all_uses(&mut self, old: NodeId, new: NodeId) {
        for n in self.nodes.iter_mut() {
            n.kind.map_inputs(|x| if x == old { new } else { x });
        }
    }

    /// Replace uses of `old` by `new` only in the given users.
    pub fn replace_uses_in(&mut self, users: &[NodeId], old: NodeId, new: NodeId) {
        for u in users {
            self.nodes[u.idx()].kind.map_inputs(|x| if x == old { new } else { x });
        }
    }

    pub fn add_constraint(&mut self, divisor: DynConst, dividend: DynConst, origin: &str) {
        let c = Constraint { divisor, dividend, origin: origin.to_string() };
        if !self.constraints.contains(&c) {
            self.constraints.push(c);
        }
    }

    pub fn dc_display(&self, d: &DynConst) -> String {
        d.display_with(&self.dc_params).to_string()
    }

    pub fn type_display(&self, t: &Type) -> String {
        t.display_with(&self.dc_params).to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IrModule {
    pub functions: Vec<IrFunction>,
}

impl IrModule {
    pub fn func(&self, id: FuncId) -> &IrFunction {
        &self.functions[id.idx()]
    }

    pub fn func_mut(&mut self, id: FuncId) -> &mut IrFunction {
        &mut self.functions[id.idx()]
    }

    pub fn func_ids(&self) -> impl Iterator<Item = FuncId> {
        (0..self.functions.len() as u32).map(FuncId)
    }

    pub fn find(&self, name: &str) -> Option<FuncId> {
        self.functions.iter().position(|f| f.name == name).map(|i| FuncId(i as u32))
    }

    pub fn add_function(&mut self, f: IrFunction) -> FuncId {
        self.functions.push(f);
        FuncId(self.functions.len() as u32 - 1)
    }

    /// Pick a function name not yet used in the module.
    pub fn fresh_name(&self, base: &str) -> String {
        (0..)
            .map(|i| format!("{base}_{i}"))
            .find(|n| self.find(n).is_none())
            .unwrap()
    }
}
