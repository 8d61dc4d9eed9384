use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ir::analysis;
use crate::ir::{Attr, Device, DynConst, FuncId, IrFunction, IrModule, NodeId, NodeKind};

use super::alias::{is_allocation, MemSpace, Summaries};
use super::schedule::FunctionSchedule;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocKind {
    Zero,
    Copy,
    /// Frame of a callee, reserved at the call site.
    CallFrame,
    /// Argument staged in the callee's memory before a cross-device call.
    ArgCopy(usize),
    /// Result brought back after a cross-device call.
    ResultCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub node: NodeId,
    pub kind: AllocKind,
    pub mem: MemSpace,
    pub offset: DynConst,
    pub size: DynConst,
    /// Copies kept side by side, one per iteration of the enclosing
    /// parallel fork (1 outside parallel forks).
    pub instances: DynConst,
    pub align: u64,
    /// Enclosing parallel fork whose iteration selects the instance.
    pub parallel_fork: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedCopy {
    pub call: NodeId,
    /// `Some(i)` for argument `i`, `None` for the result.
    pub arg: Option<usize>,
    pub from: MemSpace,
    pub to: MemSpace,
    pub bytes: DynConst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionPlan {
    pub name: String,
    pub mem: MemSpace,
    /// Frame size in each memory space, indexed by [`MemSpace::index`].
    pub frame: [DynConst; 2],
    pub allocations: Vec<Allocation>,
    pub copies: Vec<PlannedCopy>,
    pub parallel_forks: BTreeSet<NodeId>,
    pub spills: usize,
}

impl FunctionPlan {
    pub fn allocation(&self, node: NodeId, kind: &AllocKind, mem: MemSpace) -> Option<&Allocation> {
        self.allocations.iter().find(|a| a.node == node && &a.kind == kind && a.mem == mem)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub functions: Vec<FunctionPlan>,
}

impl AllocationPlan {
    pub fn func(&self, fid: FuncId) -> &FunctionPlan {
        &self.functions[fid.idx()]
    }

    pub fn total_spills(&self) -> usize {
        self.functions.iter().map(|f| f.spills).sum()
    }

    pub fn total_copies(&self) -> usize {
        self.functions.iter().map(|f| f.copies.len()).sum()
    }
}

/// Forks whose iterations run concurrently: on the host and the simulated
/// GPU, an outermost fork whose reductions are all parallel (or that was
/// explicitly parallelized). CPU functions are sequential.
pub fn parallel_forks(f: &IrFunction) -> Result<BTreeSet<NodeId>, String> {
    if !matches!(f.device, Device::HostOrchestration | Device::GpuSimulated) {
        return Ok(BTreeSet::new());
    }
    let fj = analysis::fork_join_map(f)?;
    let parents = analysis::fork_parents(f)?;
    let mut eligible = BTreeSet::new();
    for (&fk, &j) in &fj {
        let all_parallel = f.live_ids().all(|r| match f.kind(r) {
            NodeKind::Reduce { join, .. } if *join == j => f.node(r).has_attr(Attr::ParallelReduce),
            _ => true,
        });
        if all_parallel || f.node(fk).has_attr(Attr::ParallelFork) {
            eligible.insert(fk);
        }
    }
    let mut out = BTreeSet::new();
    for &fk in &eligible {
        let mut p = parents[&fk];
        let mut nested = false;
        while let Some(q) = p {
            if eligible.contains(&q) {
                nested = true;
                break;
            }
            p = parents[&q];
        }
        if !nested {
            out.insert(fk);
        }
    }
    Ok(out)
}

/// The parallel fork (if any) whose body contains `block`.
pub fn enclosing_parallel(f: &IrFunction, sched: &FunctionSchedule, par: &BTreeSet<NodeId>, block: NodeId) -> Option<NodeId> {
    par.iter().copied().find(|&fk| {
        let j = sched.fork_join[&fk];
        block != j && analysis::fork_body(f, fk, j).contains(&block)
    })
}

struct Layout {
    cursor: [DynConst; 2],
    out: Vec<Allocation>,
}

impl Layout {
    fn push(&mut self, node: NodeId, kind: AllocKind, mem: MemSpace, size: DynConst, align: u64, par: Option<(NodeId, DynConst)>) {
        let align = align.max(1).next_power_of_two();
        let cur = &mut self.cursor[mem.index()];
        let offset = DynConst::align_up(cur.clone(), align).normalize();
        let (instances, parallel_fork) = match par {
            Some((fk, n)) => (n, Some(fk)),
            None => (DynConst::lit(1), None),
        };
        *cur = DynConst::add(offset.clone(), DynConst::mul(size.clone(), instances.clone())).normalize();
        self.out.push(Allocation { node, kind, mem, offset, size, instances, align, parallel_fork });
    }
}

/// Lay out the frame of every function, callees first, so call sites can
/// reserve their callee's frame.
pub fn place_collections(
    m: &IrModule,
    scheds: &BTreeMap<FuncId, FunctionSchedule>,
    summaries: &Summaries,
    spills: &BTreeMap<FuncId, usize>,
) -> Result<AllocationPlan, String> {
    let mut plans: BTreeMap<FuncId, FunctionPlan> = BTreeMap::new();
    for fid in analysis::call_graph_postorder(m)? {
        let f = m.func(fid);
        let sched = &scheds[&fid];
        let mem = MemSpace::of(f.device);
        let par = parallel_forks(f)?;
        let par_of = |block: NodeId| -> Option<(NodeId, DynConst)> {
            enclosing_parallel(f, sched, &par, block).map(|fk| {
                let factors = f.kind(fk).try_fork().unwrap().1;
                (fk, DynConst::product(factors.iter()).normalize())
            })
        };
        let mut lay = Layout { cursor: [DynConst::lit(0), DynConst::lit(0)], out: vec![] };
        let mut copies = vec![];
        for &b in &sched.blocks {
            for &n in &sched.order[&b] {
                let ty = f.ty(n);
                match f.kind(n) {
                    NodeKind::Call { callee, dyn_args, args, .. } => {
                        let cf = m.func(*callee);
                        let cmem = MemSpace::of(cf.device);
                        let cplan = &plans[callee];
                        for sp in [MemSpace::Host, MemSpace::GpuSim] {
                            let size = cplan.frame[sp.index()].substitute(dyn_args).normalize();
                            if size != DynConst::lit(0) {
                                lay.push(n, AllocKind::CallFrame, sp, size, 8, par_of(b));
                            }
                        }
                        if cmem != mem {
                            for (i, &a) in args.iter().enumerate() {
                                if f.ty(a).is_collection() {
                                    let size = f.ty(a).size().normalize();
                                    lay.push(n, AllocKind::ArgCopy(i), cmem, size.clone(), f.ty(a).align(), par_of(b));
                                    copies.push(PlannedCopy { call: n, arg: Some(i), from: mem, to: cmem, bytes: size });
                                }
                            }
                            if ty.is_collection() {
                                let size = ty.size().normalize();
                                lay.push(n, AllocKind::ResultCopy, mem, size.clone(), ty.align(), par_of(b));
                                copies.push(PlannedCopy { call: n, arg: None, from: cmem, to: mem, bytes: size });
                            }
                        }
                    }
                    NodeKind::Constant(_) | NodeKind::Copy { .. } if is_allocation(m, fid, n, summaries) => {
                        let kind = if matches!(f.kind(n), NodeKind::Copy { .. }) { AllocKind::Copy } else { AllocKind::Zero };
                        lay.push(n, kind, mem, ty.size().normalize(), ty.align(), par_of(b));
                    }
                    _ => {}
                }
            }
        }
        let frame = [
            DynConst::align_up(lay.cursor[0].clone(), 8).normalize(),
            DynConst::align_up(lay.cursor[1].clone(), 8).normalize(),
        ];
        plans.insert(
            fid,
            FunctionPlan {
                name: f.name.clone(),
                mem,
                frame,
                allocations: lay.out,
                copies,
                parallel_forks: par,
                spills: spills.get(&fid).copied().unwrap_or(0),
            },
        );
    }
    Ok(AllocationPlan { functions: plans.into_values().collect() })
}

pub fn dump_plan(m: &IrModule, plan: &AllocationPlan) -> String {
    let mut s = String::new();
    for (i, p) in plan.functions.iter().enumerate() {
        let f = &m.functions[i];
        let d = |x: &DynConst| f.dc_display(x);
        let _ = writeln!(
            s,
            "fn {} ({}): frame host={} gpusim={} spills={}",
            p.name,
            p.mem.name(),
            d(&p.frame[0]),
            d(&p.frame[1]),
            p.spills
        );
        for a in &p.allocations {
            let _ = writeln!(
                s,
                "  alloc {:?} node {} in {} at {} size {} x {}",
                a.kind,
                a.node,
                a.mem.name(),
                d(&a.offset),
                d(&a.size),
                d(&a.instances)
            );
        }
        for c in &p.copies {
            let what = match c.arg {
                Some(i) => format!("arg {i}"),
                None => "result".into(),
            };
            let _ = writeln!(s, "  copy {what} of call {} {} -> {} ({} bytes)", c.call, c.from.name(), c.to.name(), d(&c.bytes));
        }
    }
    s
}
