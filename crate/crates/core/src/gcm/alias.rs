use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{Constant, Device, FuncId, IrFunction, IrModule, NodeId, NodeKind};

/// Memory a function's collections live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MemSpace {
    Host,
    GpuSim,
}

impl MemSpace {
    pub fn of(d: Device) -> MemSpace {
        match d {
            Device::GpuSimulated => MemSpace::GpuSim,
            _ => MemSpace::Host,
        }
    }

    pub fn index(self) -> usize {
        match self {
            MemSpace::Host => 0,
            MemSpace::GpuSim => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MemSpace::Host => "host",
            MemSpace::GpuSim => "gpusim",
        }
    }
}

/// How a function treats the collections handed to it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CalleeSummary {
    pub mutated_params: Vec<bool>,
    /// Parameters the returned collection may alias.
    pub returned_params: BTreeSet<usize>,
}

pub type Summaries = BTreeMap<FuncId, CalleeSummary>;

/// True when a call shares memory with its callee, so collections pass by
/// reference. Calls across memories copy arguments and results.
pub fn same_memory(m: &IrModule, caller: FuncId, callee: FuncId) -> bool {
    MemSpace::of(m.func(caller).device) == MemSpace::of(m.func(callee).device)
}

/// Alias classes of the collection values of one function: values that may
/// share storage because one is produced from the other in place.
pub struct Aliases {
    parent: Vec<usize>,
    mutated: BTreeSet<usize>,
}

impl Aliases {
    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    pub fn class(&self, n: NodeId) -> usize {
        self.find(n.idx())
    }

    pub fn same(&self, a: NodeId, b: NodeId) -> bool {
        self.class(a) == self.class(b)
    }

    pub fn is_mutated(&self, n: NodeId) -> bool {
        self.mutated.contains(&self.class(n))
    }

    pub fn compute(m: &IrModule, fid: FuncId, summaries: &Summaries) -> Aliases {
        let f = m.func(fid);
        let mut parent: Vec<usize> = (0..f.nodes.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let union = |p: &mut Vec<usize>, a: NodeId, b: NodeId| {
            let (ra, rb) = (find(p, a.idx()), find(p, b.idx()));
            if ra != rb {
                p[ra.max(rb)] = ra.min(rb);
            }
        };
        let coll = |n: NodeId| f.ty(n).is_collection();
        let mut mutating_args = vec![];
        for id in f.live_ids() {
            if !coll(id) && !f.kind(id).is_call() {
                continue;
            }
            match f.kind(id) {
                NodeKind::Write { collection, .. } => union(&mut parent, id, *collection),
                NodeKind::Read { collection, .. } => union(&mut parent, id, *collection),
                NodeKind::Phi { inputs, .. } => {
                    for &i in inputs {
                        union(&mut parent, id, i);
                    }
                }
                NodeKind::Reduce { init, reduct, .. } => {
                    union(&mut parent, id, *init);
                    union(&mut parent, id, *reduct);
                }
                NodeKind::Call { callee, args, .. } if same_memory(m, fid, *callee) => {
                    if let Some(s) = summaries.get(callee) {
                        if coll(id) {
                            for &p in &s.returned_params {
                                union(&mut parent, id, args[p]);
                            }
                        }
                        for (i, &a) in args.iter().enumerate() {
                            if s.mutated_params.get(i).copied().unwrap_or(false) {
                                mutating_args.push(a);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let mut mutated = BTreeSet::new();
        for id in f.live_ids() {
            if matches!(f.kind(id), NodeKind::Write { .. }) {
                mutated.insert(find(&mut parent, id.idx()));
            }
        }
        for a in mutating_args {
            mutated.insert(find(&mut parent, a.idx()));
        }
        Aliases { parent, mutated }
    }
}

/// Nodes that own fresh storage: zero constants, explicit copies, and calls
/// whose result does not alias an argument.
pub fn is_allocation(m: &IrModule, fid: FuncId, n: NodeId, summaries: &Summaries) -> bool {
    let f = m.func(fid);
    if !f.ty(n).is_collection() {
        return false;
    }
    match f.kind(n) {
        NodeKind::Constant(Constant::Zero(_)) | NodeKind::Copy { .. } => true,
        NodeKind::Call { callee, .. } => {
            !same_memory(m, fid, *callee) || summaries.get(callee).is_none_or(|s| s.returned_params.is_empty())
        }
        _ => false,
    }
}

pub fn summarize(m: &IrModule, fid: FuncId, summaries: &Summaries) -> CalleeSummary {
    let f: &IrFunction = m.func(fid);
    let al = Aliases::compute(m, fid, summaries);
    let params: Vec<Option<NodeId>> = (0..f.param_types.len())
        .map(|i| f.live_ids().find(|&n| matches!(f.kind(n), NodeKind::Parameter { index } if *index == i)))
        .collect();
    let mutated_params = params
        .iter()
        .map(|p| p.is_some_and(|p| f.ty(p).is_collection() && al.is_mutated(p)))
        .collect();
    let mut returned_params = BTreeSet::new();
    if let Some(r) = f.return_node() {
        if let NodeKind::Return { value, .. } = f.kind(r) {
            if f.ty(*value).is_collection() {
                for (i, p) in params.iter().enumerate() {
                    if p.is_some_and(|p| al.same(p, *value)) {
                        returned_params.insert(i);
                    }
                }
            }
        }
    }
    CalleeSummary { mutated_params, returned_params }
}

/// Summaries of every function, callees first.
pub fn summarize_module(m: &IrModule) -> Result<Summaries, String> {
    let mut s = Summaries::new();
    for fid in crate::ir::analysis::call_graph_postorder(m)? {
        let sum = summarize(m, fid, &s);
        s.insert(fid, sum);
    }
    Ok(s)
}
