use std::collections::BTreeMap;

use crate::gcm::alias::same_memory;
use crate::gcm::schedule::use_blocks;
use crate::gcm::{AllocKind, FunctionPlan, FunctionSchedule, GcmOutput, MemSpace, Summaries};
use crate::ir::analysis;
use crate::ir::{Attr, Constant, DynConst, FuncId, Index, IrFunction, IrModule, NodeId, NodeKind, Type};

use super::{launch_plan, Block, CallInst, ExecFunction, Executable, ForkInfo, Inst, Reg, Slot, Step, Term};

struct Lowerer<'a> {
    m: &'a IrModule,
    fid: FuncId,
    f: &'a IrFunction,
    plan: &'a FunctionPlan,
    summaries: &'a Summaries,
    slots: BTreeMap<DynConst, Slot>,
    table: Vec<DynConst>,
    next_reg: usize,
}

impl Lowerer<'_> {
    fn slot(&mut self, d: &DynConst) -> Slot {
        let d = d.normalize();
        if let Some(&s) = self.slots.get(&d) {
            return s;
        }
        let s = self.table.len() as Slot;
        self.table.push(d.clone());
        self.slots.insert(d, s);
        s
    }

    fn temp(&mut self) -> Reg {
        self.next_reg += 1;
        (self.next_reg - 1) as Reg
    }

    fn steps(&mut self, mut ty: &Type, indices: &[Index], write: bool) -> Result<Vec<Step>, String> {
        let mut out = vec![];
        for (k, i) in indices.iter().enumerate() {
            match (i, ty) {
                (Index::Field(j), Type::Product(fs)) => {
                    let off = Type::field_offset(fs, *j);
                    if off != DynConst::lit(0) {
                        out.push(Step::Offset(self.slot(&off)));
                    }
                    ty = &fs[*j];
                }
                (Index::Variant(j), Type::Summation(vs)) => {
                    out.push(Step::Variant { tag: *j as u64, set: write && k + 1 == indices.len() });
                    ty = &vs[*j];
                }
                (Index::Position(ps), Type::Array(e, ext)) => {
                    let esize = e.size();
                    for (d, &p) in ps.iter().enumerate() {
                        let stride = DynConst::mul(esize.clone(), DynConst::product(ext[d + 1..].iter()));
                        let (extent, stride) = (self.slot(&ext[d]), self.slot(&stride));
                        out.push(Step::Index { idx: p.0, extent, stride });
                    }
                    ty = e;
                }
                _ => return Err(format!("`{}`: index does not match type {}", self.f.name, ty)),
            }
        }
        Ok(out)
    }

    fn alloc(&mut self, n: NodeId, kind: AllocKind, mem: MemSpace) -> Result<(Slot, Slot, bool), String> {
        let a = self
            .plan
            .allocation(n, &kind, mem)
            .ok_or_else(|| format!("`{}`: node {n} has no {kind:?} allocation", self.f.name))?
            .clone();
        Ok((self.slot(&a.offset), self.slot(&a.size), a.parallel_fork.is_some()))
    }

    fn node(&mut self, n: NodeId, out: &mut Vec<Inst>) -> Result<(), String> {
        let f = self.f;
        let r = n.0;
        match f.kind(n) {
            NodeKind::Constant(Constant::Scalar(_, bits)) => out.push(Inst::Const { dst: r, bits: *bits }),
            NodeKind::Constant(Constant::Zero(t)) => {
                if t.is_collection() {
                    let (offset, size, per_iteration) = self.alloc(n, AllocKind::Zero, self.plan.mem)?;
                    out.push(Inst::Alloc { dst: r, mem: self.plan.mem, offset, size, per_iteration });
                    if !f.node(n).has_attr(Attr::NoResetConstant) {
                        out.push(Inst::Zero { addr: r, bytes: size });
                    }
                } else {
                    out.push(Inst::Const { dst: r, bits: 0 });
                }
            }
            NodeKind::DynamicConstant(d) => {
                let slot = self.slot(d);
                out.push(Inst::Dc { dst: r, slot });
            }
            NodeKind::Binary { op, left, right } => {
                let kind = f.ty(*left).as_scalar().ok_or("binary operand is not a scalar")?;
                out.push(Inst::Bin { op: *op, kind, dst: r, a: left.0, b: right.0 });
            }
            NodeKind::Unary { op, input } => {
                let kind = f.ty(*input).as_scalar().ok_or("unary operand is not a scalar")?;
                out.push(Inst::Un { op: *op, kind, dst: r, a: input.0 });
            }
            NodeKind::Read { collection, indices } => {
                let steps = self.steps(f.ty(*collection), indices, false)?;
                match f.ty(n).as_scalar() {
                    Some(kind) => {
                        let t = self.temp();
                        out.push(Inst::Addr { dst: t, base: collection.0, steps });
                        out.push(Inst::Load { dst: r, addr: t, kind });
                    }
                    None => out.push(Inst::Addr { dst: r, base: collection.0, steps }),
                }
            }
            NodeKind::Write { collection, indices, value } => {
                let steps = self.steps(f.ty(*collection), indices, true)?;
                let t = self.temp();
                out.push(Inst::Addr { dst: t, base: collection.0, steps });
                match f.ty(*value).as_scalar() {
                    Some(kind) => out.push(Inst::Store { addr: t, src: value.0, kind }),
                    None => {
                        let bytes = self.slot(&f.ty(*value).size());
                        out.push(Inst::MemCopy { dst: t, src: value.0, bytes });
                    }
                }
                out.push(Inst::Move { dst: r, src: collection.0 });
            }
            NodeKind::Copy { collection } => {
                let (offset, size, per_iteration) = self.alloc(n, AllocKind::Copy, self.plan.mem)?;
                out.push(Inst::Alloc { dst: r, mem: self.plan.mem, offset, size, per_iteration });
                out.push(Inst::MemCopy { dst: r, src: collection.0, bytes: size });
            }
            NodeKind::Call { callee, dyn_args, args, .. } => {
                let mut frames = [None, None];
                let mut per_iteration = false;
                for sp in [MemSpace::Host, MemSpace::GpuSim] {
                    if let Some(a) = self.plan.allocation(n, &AllocKind::CallFrame, sp).cloned() {
                        per_iteration |= a.parallel_fork.is_some();
                        frames[sp.index()] = Some((self.slot(&a.offset), self.slot(&a.size)));
                    }
                }
                let mut arg_copies = vec![];
                let mut result_copy = None;
                for a in self.plan.allocations.clone() {
                    if a.node != n {
                        continue;
                    }
                    per_iteration |= a.parallel_fork.is_some();
                    match a.kind {
                        AllocKind::ArgCopy(i) => arg_copies.push((i, self.slot(&a.offset), self.slot(&a.size))),
                        AllocKind::ResultCopy => result_copy = Some((self.slot(&a.offset), self.slot(&a.size))),
                        _ => {}
                    }
                }
                let mutates = same_memory(self.m, self.fid, *callee)
                    && self.summaries.get(callee).is_some_and(|s| s.mutated_params.iter().any(|&b| b));
                let dyn_args = dyn_args.iter().map(|d| self.slot(d)).collect();
                out.push(Inst::Call(Box::new(CallInst {
                    node: n,
                    callee: callee.idx(),
                    dyn_args,
                    args: args.iter().map(|a| a.0).collect(),
                    dst: r,
                    frames,
                    arg_copies,
                    result_copy,
                    per_iteration,
                    is_async: f.node(n).has_attr(Attr::AsyncCall) && !mutates,
                })));
            }
            NodeKind::Phi { .. } | NodeKind::Reduce { .. } | NodeKind::ThreadId { .. } | NodeKind::Parameter { .. } => {}
            k => return Err(format!("`{}`: cannot lower {}", f.name, k.name())),
        }
        Ok(())
    }
}

/// Registers an instruction reads.
pub fn inst_reads(i: &Inst) -> Vec<Reg> {
    match i {
        Inst::Const { .. } | Inst::Dc { .. } | Inst::Alloc { .. } => vec![],
        Inst::Bin { a, b, .. } => vec![*a, *b],
        Inst::Un { a, .. } => vec![*a],
        Inst::Zero { addr, .. } => vec![*addr],
        Inst::Addr { base, steps, .. } => {
            let mut v = vec![*base];
            for s in steps {
                if let Step::Index { idx, .. } = s {
                    v.push(*idx);
                }
            }
            v
        }
        Inst::Load { addr, .. } => vec![*addr],
        Inst::Store { addr, src, .. } => vec![*addr, *src],
        Inst::MemCopy { dst, src, .. } => vec![*dst, *src],
        Inst::Move { src, .. } => vec![*src],
        Inst::Call(c) => c.args.clone(),
        Inst::Await { reg } => vec![*reg],
    }
}

/// Group control nodes into basic blocks: a node joins its predecessor's
/// block when it is that predecessor's only successor and is neither a
/// merge point, a fork, nor a join.
fn block_heads(f: &IrFunction, sched: &FunctionSchedule) -> BTreeMap<NodeId, NodeId> {
    let succs = analysis::control_succs(f);
    let mut head = BTreeMap::new();
    for &c in &sched.blocks {
        let k = f.kind(c);
        let preds = k.control_preds();
        let starts = k.is_start()
            || k.is_fork()
            || k.is_join()
            || k.is_region()
            || preds.len() != 1
            || succs[preds[0].idx()].len() != 1
            || !sched.dom.is_reachable(preds[0]);
        let h = if starts { c } else { head[&preds[0]] };
        head.insert(c, h);
    }
    head
}

fn lower_function(m: &IrModule, fid: FuncId, sched: &FunctionSchedule, plan: &FunctionPlan, summaries: &Summaries) -> Result<ExecFunction, String> {
    let f = m.func(fid);
    let mut lw = Lowerer {
        m,
        fid,
        f,
        plan,
        summaries,
        slots: BTreeMap::new(),
        table: vec![],
        next_reg: f.nodes.len(),
    };
    let succs = analysis::control_succs(f);
    let heads = block_heads(f, sched);
    let head_list: Vec<NodeId> = sched.blocks.iter().copied().filter(|c| heads[c] == *c).collect();
    let index: BTreeMap<NodeId, usize> = head_list.iter().enumerate().map(|(i, &h)| (h, i)).collect();
    let block_index = |c: NodeId| index[&heads[&c]];

    // Chain of control nodes per block, in execution order.
    let mut chains: Vec<Vec<NodeId>> = vec![vec![]; head_list.len()];
    for &c in &sched.blocks {
        chains[block_index(c)].push(c);
    }
    for ch in &mut chains {
        ch.sort_by_key(|&c| sched.dom.depth(c));
    }

    let mut blocks = vec![];
    for (bi, chain) in chains.iter().enumerate() {
        let mut insts = vec![];
        for &c in chain {
            for &n in &sched.order[&c] {
                lw.node(n, &mut insts)?;
            }
        }
        let tail = *chain.last().unwrap();
        let term = match f.kind(tail) {
            NodeKind::Return { value, .. } => Term::Return { value: value.0 },
            NodeKind::If { cond, .. } => {
                let s = &succs[tail.idx()];
                Term::Branch { cond: cond.0, on_false: block_index(s[0]), on_true: block_index(s[1]) }
            }
            _ => {
                let s = *succs[tail.idx()]
                    .first()
                    .ok_or_else(|| format!("`{}`: control node {tail} has no successor", f.name))?;
                match f.kind(s) {
                    NodeKind::Join { .. } => Term::EndIter,
                    NodeKind::Region { preds } => {
                        let k = preds.iter().position(|&p| p == tail).unwrap();
                        let moves = f
                            .live_ids()
                            .filter_map(|p| match f.kind(p) {
                                NodeKind::Phi { region, inputs } if *region == s => Some((p.0, inputs[k].0)),
                                _ => None,
                            })
                            .collect();
                        Term::Jump { to: block_index(s), moves }
                    }
                    _ => Term::Jump { to: block_index(s), moves: vec![] },
                }
            }
        };
        blocks.push(Block { node: head_list[bi], insts, term, fork: None });
    }

    let mut forks = vec![];
    for (&fk, &j) in &sched.fork_join {
        if !sched.dom.is_reachable(fk) {
            continue;
        }
        let factors = f.kind(fk).try_fork().unwrap().1.to_vec();
        let factors = factors.iter().map(|d| lw.slot(d)).collect();
        let mut tids = vec![];
        let mut reduces = vec![];
        for id in f.live_ids() {
            match f.kind(id) {
                NodeKind::ThreadId { fork, dim } if *fork == fk => tids.push((id.0, *dim)),
                NodeKind::Reduce { join, init, reduct } if *join == j => reduces.push((id.0, init.0, reduct.0)),
                _ => {}
            }
        }
        let bi = block_index(fk);
        blocks[bi].fork = Some(forks.len());
        forks.push(ForkInfo {
            node: fk,
            block: bi,
            join_block: block_index(j),
            factors,
            tids,
            reduces,
            parallel: plan.parallel_forks.contains(&fk),
        });
    }

    // Await asynchronous results where all their uses are dominated.
    let jf = sched.join_fork();
    let users = analysis::def_use(f);
    for (bi, chain) in chains.iter().enumerate() {
        for &c in chain {
            for &n in &sched.order[&c] {
                let is_async = matches!(
                    blocks[bi].insts.iter().find(|i| matches!(i, Inst::Call(ci) if ci.node == n)),
                    Some(Inst::Call(ci)) if ci.is_async
                );
                if !is_async {
                    continue;
                }
                let mut lca: Option<NodeId> = None;
                for &u in &users[n.idx()] {
                    for b in use_blocks(f, n, u, &sched.block_of, &jf) {
                        let b = heads[&b];
                        lca = Some(lca.map_or(b, |l| sched.dom.lca(l, b)));
                    }
                }
                let Some(l) = lca else { continue };
                let target = block_index(l);
                let aw = Inst::Await { reg: n.0 };
                if target == bi {
                    let insts = &mut blocks[bi].insts;
                    let call_pos = insts.iter().position(|i| matches!(i, Inst::Call(ci) if ci.node == n)).unwrap();
                    let at = insts[call_pos + 1..]
                        .iter()
                        .position(|i| inst_reads(i).contains(&n.0))
                        .map(|p| p + call_pos + 1)
                        .unwrap_or(insts.len());
                    insts.insert(at, aw);
                } else {
                    blocks[target].insts.insert(0, aw);
                }
            }
        }
    }

    let mut params = vec![None; f.param_types.len()];
    for id in f.live_ids() {
        if let NodeKind::Parameter { index } = f.kind(id) {
            params[*index] = Some(id.0);
        }
    }
    let launch = if matches!(f.device, crate::ir::Device::GpuSimulated) { Some(launch_plan(f)?) } else { None };
    Ok(ExecFunction {
        name: f.name.clone(),
        device: f.device,
        mem: plan.mem,
        dc_params: f.dc_params.clone(),
        param_types: f.param_types.clone(),
        return_type: f.return_type.clone(),
        constraints: f.constraints.clone(),
        num_regs: lw.next_reg,
        dc_table: lw.table,
        params,
        blocks,
        forks,
        frame: plan.frame.clone(),
        entry: f.entry,
        launch,
    })
}

pub fn lower_module(m: &IrModule, gcm: &GcmOutput) -> Result<Executable, String> {
    let mut functions = vec![];
    for fid in m.func_ids() {
        functions.push(lower_function(m, fid, &gcm.schedules[&fid], gcm.plan.func(fid), &gcm.summaries)?);
    }
    Ok(Executable { functions, plan: gcm.plan.clone() })
}
