use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{DynConst, IrFunction, NodeId, NodeKind};

/// Users of every node, indexed by node id. Each list is sorted and free of
/// duplicates.
pub fn def_use(f: &IrFunction) -> Vec<Vec<NodeId>> {
    let mut users = vec![Vec::new(); f.nodes.len()];
    for id in f.live_ids() {
        for i in f.kind(id).inputs() {
            users[i.idx()].push(id);
        }
    }
    for u in &mut users {
        u.sort();
        u.dedup();
    }
    users
}

/// Control successors of every control node. If successors are ordered by
/// projection index.
pub fn control_succs(f: &IrFunction) -> Vec<Vec<NodeId>> {
    let mut succs = vec![Vec::new(); f.nodes.len()];
    for id in f.live_ids() {
        let k = f.kind(id);
        if !k.is_control() {
            continue;
        }
        for p in k.control_preds() {
            succs[p.idx()].push(id);
        }
    }
    for (i, s) in succs.iter_mut().enumerate() {
        if matches!(f.nodes[i].kind, NodeKind::If { .. }) {
            s.sort_by_key(|&p| match f.kind(p) {
                NodeKind::Projection { index, .. } => *index,
                _ => usize::MAX,
            });
        } else {
            s.sort();
        }
    }
    succs
}

/// Reverse post-order of the control nodes reachable from Start.
pub fn control_rpo(f: &IrFunction) -> Vec<NodeId> {
    let succs = control_succs(f);
    let mut seen = vec![false; f.nodes.len()];
    let mut post = Vec::new();
    let mut stack = vec![(f.start(), 0usize)];
    seen[0] = true;
    while let Some((n, i)) = stack.pop() {
        if i < succs[n.idx()].len() {
            stack.push((n, i + 1));
            let s = succs[n.idx()][i];
            if !seen[s.idx()] {
                seen[s.idx()] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(n);
        }
    }
    post.reverse();
    post
}

/// Dominator tree over the control subgraph.
#[derive(Debug, Clone)]
pub struct DomTree {
    idom: Vec<Option<NodeId>>,
    rpo_index: Vec<usize>,
    pub rpo: Vec<NodeId>,
}

impl DomTree {
    pub fn compute(f: &IrFunction) -> DomTree {
        let rpo = control_rpo(f);
        let mut rpo_index = vec![usize::MAX; f.nodes.len()];
        for (i, n) in rpo.iter().enumerate() {
            rpo_index[n.idx()] = i;
        }
        let mut idom: Vec<Option<NodeId>> = vec![None; f.nodes.len()];
        idom[0] = Some(f.start());
        let intersect = |idom: &[Option<NodeId>], mut a: NodeId, mut b: NodeId| {
            while a != b {
                while rpo_index[a.idx()] > rpo_index[b.idx()] {
                    a = idom[a.idx()].unwrap();
                }
                while rpo_index[b.idx()] > rpo_index[a.idx()] {
                    b = idom[b.idx()].unwrap();
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &n in rpo.iter().skip(1) {
                let mut new: Option<NodeId> = None;
                for p in f.kind(n).control_preds() {
                    if rpo_index[p.idx()] == usize::MAX || idom[p.idx()].is_none() {
                        continue;
                    }
                    new = Some(match new {
                        None => p,
                        Some(c) => intersect(&idom, p, c),
                    });
                }
                if new.is_some() && idom[n.idx()] != new {
                    idom[n.idx()] = new;
                    changed = true;
                }
            }
        }
        DomTree { idom, rpo_index, rpo }
    }

    pub fn idom(&self, n: NodeId) -> Option<NodeId> {
        if n.idx() == 0 {
            None
        } else {
            self.idom.get(n.idx()).copied().flatten()
        }
    }

    pub fn is_reachable(&self, n: NodeId) -> bool {
        self.rpo_index.get(n.idx()).is_some_and(|&i| i != usize::MAX)
    }

    pub fn rpo_index(&self, n: NodeId) -> usize {
        self.rpo_index[n.idx()]
    }

    pub fn dominates(&self, a: NodeId, b: NodeId) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    pub fn depth(&self, n: NodeId) -> usize {
        let mut d = 0;
        let mut cur = n;
        while let Some(p) = self.idom(cur) {
            d += 1;
            cur = p;
        }
        d
    }

    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        let (mut da, mut db) = (self.depth(a), self.depth(b));
        while da > db {
            a = self.idom(a).unwrap();
            da -= 1;
        }
        while db > da {
            b = self.idom(b).unwrap();
            db -= 1;
        }
        while a != b {
            a = self.idom(a).unwrap();
            b = self.idom(b).unwrap();
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaturalLoop {
    pub header: NodeId,
    pub latches: Vec<NodeId>,
    pub body: BTreeSet<NodeId>,
}

/// Natural loops of the control subgraph, one per header, outermost first.
pub fn natural_loops(f: &IrFunction, dom: &DomTree) -> Vec<NaturalLoop> {
    let mut by_header: BTreeMap<NodeId, NaturalLoop> = BTreeMap::new();
    for &n in &dom.rpo {
        for p in f.kind(n).control_preds() {
            if dom.is_reachable(p) && dom.dominates(n, p) {
                let l = by_header.entry(n).or_insert_with(|| NaturalLoop {
                    header: n,
                    latches: vec![],
                    body: BTreeSet::from([n]),
                });
                l.latches.push(p);
                let mut work = vec![p];
                while let Some(x) = work.pop() {
                    if l.body.insert(x) {
                        work.extend(f.kind(x).control_preds());
                    }
                }
            }
        }
    }
    let mut loops: Vec<NaturalLoop> = by_header.into_values().collect();
    loops.sort_by_key(|l| (std::cmp::Reverse(l.body.len()), dom.rpo_index(l.header)));
    loops
}

/// Match every fork with its join by walking spawned control paths and
/// counting nested forks. Errors name the offending fork.
pub fn fork_join_map(f: &IrFunction) -> Result<BTreeMap<NodeId, NodeId>, String> {
    let succs = control_succs(f);
    let mut map = BTreeMap::new();
    for fork in f.forks() {
        let mut found: Option<NodeId> = None;
        let mut seen = BTreeSet::new();
        let mut work: VecDeque<(NodeId, usize)> = succs[fork.idx()].iter().map(|&s| (s, 0)).collect();
        while let Some((n, depth)) = work.pop_front() {
            if !seen.insert((n, depth)) {
                continue;
            }
            if depth > f.nodes.len() {
                return Err(format!("fork {fork} has unbounded nesting"));
            }
            let next_depth = match f.kind(n) {
                NodeKind::Join { .. } if depth == 0 => {
                    if found.is_some_and(|j| j != n) {
                        return Err(format!("fork {fork} reaches two joins"));
                    }
                    found = Some(n);
                    continue;
                }
                NodeKind::Join { .. } => depth - 1,
                NodeKind::Fork { .. } => depth + 1,
                NodeKind::Return { .. } => return Err(format!("fork {fork} reaches return without a join")),
                _ => depth,
            };
            for &s in &succs[n.idx()] {
                work.push_back((s, next_depth));
            }
        }
        match found {
            Some(j) => {
                map.insert(fork, j);
            }
            None => return Err(format!("fork {fork} has no join")),
        }
    }
    let mut joins = BTreeSet::new();
    for j in map.values() {
        if !joins.insert(*j) {
            return Err(format!("join {j} matches two forks"));
        }
    }
    for id in f.live_ids() {
        if f.kind(id).is_join() && !joins.contains(&id) {
            return Err(format!("join {id} has no fork"));
        }
    }
    Ok(map)
}

pub fn join_fork_map(fj: &BTreeMap<NodeId, NodeId>) -> BTreeMap<NodeId, NodeId> {
    fj.iter().map(|(&f, &j)| (j, f)).collect()
}

/// Control nodes strictly between a fork and its join, plus the fork and
/// join themselves.
pub fn fork_body(f: &IrFunction, fork: NodeId, join: NodeId) -> BTreeSet<NodeId> {
    let succs = control_succs(f);
    let mut body = BTreeSet::from([fork, join]);
    let mut work = succs[fork.idx()].clone();
    while let Some(n) = work.pop() {
        if n == join || !body.insert(n) {
            continue;
        }
        work.extend(succs[n.idx()].iter().copied());
    }
    body
}

/// A node of the fork-join nest. `fork` is `None` for the synthetic root of
/// factor 1 that is added when several top-level forks exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestNode {
    pub fork: Option<NodeId>,
    pub factors: Vec<DynConst>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForkNest {
    pub nodes: Vec<NestNode>,
    pub root: Option<usize>,
}

impl ForkNest {
    pub fn parent_of(&self, idx: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.children.contains(&idx))
    }

    pub fn index_of(&self, fork: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.fork == Some(fork))
    }
}

/// Immediate enclosing fork of every fork (None at top level).
pub fn fork_parents(f: &IrFunction) -> Result<BTreeMap<NodeId, Option<NodeId>>, String> {
    let fj = fork_join_map(f)?;
    let bodies: BTreeMap<NodeId, BTreeSet<NodeId>> =
        fj.iter().map(|(&fk, &j)| (fk, fork_body(f, fk, j))).collect();
    let mut parents = BTreeMap::new();
    for &g in fj.keys() {
        let mut best: Option<(usize, NodeId)> = None;
        for (&fk, body) in &bodies {
            if fk != g && body.contains(&g) {
                let sz = body.len();
                if best.is_none_or(|(b, _)| sz < b) {
                    best = Some((sz, fk));
                }
            }
        }
        parents.insert(g, best.map(|(_, fk)| fk));
    }
    for (&g, &p) in &parents {
        if let Some(p) = p {
            if !bodies[&p].contains(&fj[&g]) {
                return Err(format!("fork {g} is not properly nested in fork {p}"));
            }
        }
    }
    Ok(parents)
}

pub fn fork_join_nest(f: &IrFunction) -> Result<ForkNest, String> {
    let parents = fork_parents(f)?;
    let mut nest = ForkNest::default();
    let mut index = BTreeMap::new();
    for &fk in parents.keys() {
        index.insert(fk, nest.nodes.len());
        let factors = f.kind(fk).try_fork().unwrap().1.to_vec();
        nest.nodes.push(NestNode { fork: Some(fk), factors, children: vec![] });
    }
    let mut tops = vec![];
    for (&fk, &p) in &parents {
        match p {
            Some(p) => {
                let pi = index[&p];
                nest.nodes[pi].children.push(index[&fk]);
            }
            None => tops.push(index[&fk]),
        }
    }
    nest.root = match tops.len() {
        0 => None,
        1 => Some(tops[0]),
        _ => {
            nest.nodes.push(NestNode { fork: None, factors: vec![DynConst::lit(1)], children: tops });
            Some(nest.nodes.len() - 1)
        }
    };
    Ok(nest)
}

/// Data nodes that belong to the inside of a set of control nodes: pinned
/// nodes attached to that control, everything computed from them, and
/// reduction-carried values feeding sinks inside the region.
pub fn inside_data(f: &IrFunction, control: &BTreeSet<NodeId>, users: &[Vec<NodeId>]) -> BTreeSet<NodeId> {
    let mut inside = BTreeSet::new();
    let mut reduces = vec![];
    let mut work = vec![];
    for id in f.live_ids() {
        let k = f.kind(id);
        if let Some(c) = k.pinned_control() {
            if control.contains(&c) {
                inside.insert(id);
                if k.is_reduce() {
                    reduces.push(id);
                } else {
                    work.push(id);
                }
            }
        }
    }
    while let Some(n) = work.pop() {
        for &u in &users[n.idx()] {
            if !f.kind(u).is_control() && !f.kind(u).is_reduce() && !f.kind(u).is_phi() && inside.insert(u) {
                work.push(u);
            }
        }
    }
    // Values derived only from reduces are inside when they feed an inside sink.
    let mut from_reduce = BTreeSet::new();
    let mut work = reduces.clone();
    while let Some(n) = work.pop() {
        for &u in &users[n.idx()] {
            let k = f.kind(u);
            if !k.is_control() && !k.is_reduce() && !k.is_phi() && from_reduce.insert(u) {
                work.push(u);
            }
        }
    }
    let mut sinks: Vec<NodeId> = vec![];
    for &n in &inside {
        match f.kind(n) {
            NodeKind::Reduce { reduct, .. } => sinks.push(*reduct),
            NodeKind::Phi { inputs, .. } => sinks.extend(inputs.iter().copied()),
            NodeKind::Call { args, .. } => sinks.extend(args.iter().copied()),
            _ => {}
        }
    }
    for &c in control {
        if let NodeKind::If { cond, .. } = f.kind(c) {
            sinks.push(*cond);
        }
    }
    let mut seen = BTreeSet::new();
    while let Some(s) = sinks.pop() {
        if !seen.insert(s) {
            continue;
        }
        if from_reduce.contains(&s) {
            inside.insert(s);
            sinks.extend(f.kind(s).inputs());
        } else if inside.contains(&s) && !f.kind(s).is_reduce() && !f.kind(s).is_phi() {
            sinks.extend(f.kind(s).inputs());
        }
    }
    inside
}

/// Node operands of an index step.
pub fn index_nodes(i: &super::Index) -> Vec<NodeId> {
    match i {
        super::Index::Position(ps) => ps.clone(),
        _ => vec![],
    }
}

/// All functions reachable through calls, callees before callers.
pub fn call_graph_postorder(m: &super::IrModule) -> Result<Vec<super::FuncId>, String> {
    use super::FuncId;
    let n = m.functions.len();
    let mut callees: Vec<BTreeSet<FuncId>> = vec![BTreeSet::new(); n];
    for fid in m.func_ids() {
        let f = m.func(fid);
        for id in f.live_ids() {
            if let NodeKind::Call { callee, .. } = f.kind(id) {
                callees[fid.idx()].insert(*callee);
            }
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut order = vec![];
    fn visit(
        v: usize,
        callees: &[BTreeSet<FuncId>],
        state: &mut [u8],
        order: &mut Vec<FuncId>,
        m: &super::IrModule,
    ) -> Result<(), String> {
        match state[v] {
            1 => return Err(format!("call graph cycle through `{}`", m.functions[v].name)),
            2 => return Ok(()),
            _ => {}
        }
        state[v] = 1;
        for c in &callees[v] {
            if c.idx() >= callees.len() {
                return Err(format!("call to unknown function {}", c.0));
            }
            visit(c.idx(), callees, state, order, m)?;
        }
        state[v] = 2;
        order.push(FuncId(v as u32));
        Ok(())
    }
    for v in 0..n {
        visit(v, &callees, &mut state, &mut order, m)?;
    }
    Ok(order)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ir::{BinaryOp, Constant, Index, IrModule, ScalarKind, Type};

    fn f32t() -> Type {
        Type::Scalar(ScalarKind::F32)
    }
    fn u64t() -> Type {
        Type::Scalar(ScalarKind::U64)
    }

    /// Array sum as a while-style loop.
    pub(crate) fn sum_loop() -> IrFunction {
        let arr = Type::array(f32t(), vec![DynConst::param(0)]);
        let mut f = IrFunction::new("sum", vec!["n".into()], vec![arr.clone()], f32t());
        let a = f.add(NodeKind::Parameter { index: 0 }, arr);
        let n = f.add(NodeKind::DynamicConstant(DynConst::param(0)), u64t());
        let zero = f.add(NodeKind::Constant(Constant::Scalar(ScalarKind::U64, 0)), u64t());
        let one = f.add(NodeKind::Constant(Constant::Scalar(ScalarKind::U64, 1)), u64t());
        let fz = f.add(NodeKind::Constant(Constant::Scalar(ScalarKind::F32, 0)), f32t());
        let header = f.add(NodeKind::Region { preds: vec![f.start()] }, Type::Control);
        let i = f.add(NodeKind::Phi { region: header, inputs: vec![zero] }, u64t());
        let s = f.add(NodeKind::Phi { region: header, inputs: vec![fz] }, f32t());
        let c = f.add(NodeKind::Binary { op: BinaryOp::Lt, left: i, right: n }, Type::Scalar(ScalarKind::Bool));
        let iff = f.add(NodeKind::If { control: header, cond: c }, Type::Control);
        let exit = f.add(NodeKind::Projection { control: iff, index: 0 }, Type::Control);
        let body = f.add(NodeKind::Projection { control: iff, index: 1 }, Type::Control);
        let x = f.add(NodeKind::Read { collection: a, indices: vec![Index::Position(vec![i])] }, f32t());
        let s2 = f.add(NodeKind::Binary { op: BinaryOp::Add, left: s, right: x }, f32t());
        let i2 = f.add(NodeKind::Binary { op: BinaryOp::Add, left: i, right: one }, u64t());
        f.node_mut(header).kind = NodeKind::Region { preds: vec![f.start(), body] };
        f.node_mut(i).kind = NodeKind::Phi { region: header, inputs: vec![zero, i2] };
        f.node_mut(s).kind = NodeKind::Phi { region: header, inputs: vec![fz, s2] };
        f.add(NodeKind::Return { control: exit, value: s }, Type::Control);
        f.entry = true;
        f
    }

    /// Array sum as a fork-join.
    pub(crate) fn sum_fork() -> IrFunction {
        let arr = Type::array(f32t(), vec![DynConst::param(0)]);
        let mut f = IrFunction::new("sum", vec!["n".into()], vec![arr.clone()], f32t());
        let a = f.add(NodeKind::Parameter { index: 0 }, arr);
        let fork = f.add(NodeKind::Fork { control: f.start(), factors: vec![DynConst::param(0)] }, Type::Control);
        let join = f.add(NodeKind::Join { control: fork }, Type::Control);
        let tid = f.add(NodeKind::ThreadId { fork, dim: 0 }, u64t());
        let fz = f.add(NodeKind::Constant(Constant::Scalar(ScalarKind::F32, 0)), f32t());
        let red = f.add(NodeKind::Reduce { join, init: fz, reduct: fz }, f32t());
        let x = f.add(NodeKind::Read { collection: a, indices: vec![Index::Position(vec![tid])] }, f32t());
        let add = f.add(NodeKind::Binary { op: BinaryOp::Add, left: red, right: x }, f32t());
        f.node_mut(red).kind = NodeKind::Reduce { join, init: fz, reduct: add };
        f.add(NodeKind::Return { control: join, value: red }, Type::Control);
        f.entry = true;
        f
    }

    fn module(f: IrFunction) -> IrModule {
        IrModule { functions: vec![f] }
    }

    #[test]
    fn array_sum_graphs_verify() {
        assert_eq!(crate::ir::verify::verify(&module(sum_loop())), vec![]);
        assert_eq!(crate::ir::verify::verify(&module(sum_fork())), vec![]);
    }

    #[test]
    fn def_use_includes_reduce_cycle() {
        let f = sum_fork();
        let users = def_use(&f);
        let red = f.live_ids().find(|&i| f.kind(i).is_reduce()).unwrap();
        let add = f.live_ids().find(|&i| f.kind(i).try_binary(BinaryOp::Add).is_some()).unwrap();
        let ret = f.return_node().unwrap();
        assert!(users[red.idx()].contains(&ret));
        assert!(users[red.idx()].contains(&add));
        assert!(users[add.idx()].contains(&red));
        assert!(users[ret.idx()].is_empty());
    }

    #[test]
    fn loop_detection_and_dominators() {
        let f = sum_loop();
        let dom = DomTree::compute(&f);
        let loops = natural_loops(&f, &dom);
        assert_eq!(loops.len(), 1);
        let header = f.live_ids().find(|&i| f.kind(i).is_region()).unwrap();
        assert_eq!(loops[0].header, header);
        assert_eq!(loops[0].body.len(), 3);
        let ret = f.return_node().unwrap();
        assert!(dom.dominates(header, ret));
        assert!(dom.dominates(f.start(), ret));
    }

    #[test]
    fn straight_line_dominators_form_a_chain() {
        let mut f = IrFunction::new("c", vec![], vec![], u64t());
        let r1 = f.add(NodeKind::Region { preds: vec![f.start()] }, Type::Control);
        let r2 = f.add(NodeKind::Region { preds: vec![r1] }, Type::Control);
        let k = f.add(NodeKind::Constant(Constant::Scalar(ScalarKind::U64, 3)), u64t());
        let ret = f.add(NodeKind::Return { control: r2, value: k }, Type::Control);
        let dom = DomTree::compute(&f);
        assert_eq!(dom.idom(ret), Some(r2));
        assert_eq!(dom.idom(r2), Some(r1));
        assert_eq!(dom.idom(r1), Some(f.start()));
    }

    #[test]
    fn sibling_forks_get_synthetic_root() {
        let mut f = IrFunction::new("s", vec!["n".into()], vec![], u64t());
        let f1 = f.add(NodeKind::Fork { control: f.start(), factors: vec![DynConst::param(0)] }, Type::Control);
        let j1 = f.add(NodeKind::Join { control: f1 }, Type::Control);
        let f2 = f.add(NodeKind::Fork { control: j1, factors: vec![DynConst::lit(8)] }, Type::Control);
        let j2 = f.add(NodeKind::Join { control: f2 }, Type::Control);
        let k = f.add(NodeKind::Constant(Constant::Scalar(ScalarKind::U64, 3)), u64t());
        f.add(NodeKind::Return { control: j2, value: k }, Type::Control);
        let nest = fork_join_nest(&f).unwrap();
        let root = &nest.nodes[nest.root.unwrap()];
        assert_eq!(root.fork, None);
        assert_eq!(root.factors, vec![DynConst::lit(1)]);
        assert_eq!(root.children.len(), 2);
        assert!(fork_join_nest(&sum_loop()).unwrap().root.is_none());
    }

    #[test]
    fn bad_thread_id_and_phi_arity_are_diagnosed() {
        let mut f = sum_fork();
        let tid = f.live_ids().find(|&i| f.kind(i).try_thread_id().is_some()).unwrap();
        let fork = f.forks()[0];
        f.node_mut(tid).kind = NodeKind::ThreadId { fork, dim: 1 };
        let d = crate::ir::verify::verify(&module(f));
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].node, Some(tid));

        let mut f = sum_loop();
        let phi = f.live_ids().find(|&i| f.kind(i).is_phi()).unwrap();
        if let NodeKind::Phi { inputs, .. } = &mut f.node_mut(phi).kind {
            inputs.pop();
        }
        let d = crate::ir::verify::verify(&module(f));
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].node, Some(phi));
    }
}
