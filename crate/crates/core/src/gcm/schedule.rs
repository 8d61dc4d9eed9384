use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::ir::analysis::{self, DomTree};
use crate::ir::{Constant, IrFunction, NodeId, NodeKind};

/// Basic-block schedule of one function. Every reachable control node heads
/// its own block; data nodes are assigned to blocks and ordered inside them.
#[derive(Debug, Clone)]
pub struct FunctionSchedule {
    /// Reachable control nodes in reverse post-order.
    pub blocks: Vec<NodeId>,
    pub block_of: Vec<Option<NodeId>>,
    /// Data nodes executed in each block, in order. Phis, reduces, thread
    /// ids and parameters carry values but have no slot here.
    pub order: BTreeMap<NodeId, Vec<NodeId>>,
    pub loop_depth: BTreeMap<NodeId, usize>,
    pub fork_join: BTreeMap<NodeId, NodeId>,
    pub dom: DomTree,
}

/// Where inside a block an operation happens. `END` marks the block's
/// outgoing edge (phi moves, reduce updates, branch conditions).
pub const END: usize = usize::MAX;

impl FunctionSchedule {
    pub fn position(&self, n: NodeId) -> Option<(NodeId, usize)> {
        let b = self.block_of[n.idx()]?;
        let i = self.order.get(&b).and_then(|o| o.iter().position(|&x| x == n)).unwrap_or(0);
        Some((b, i))
    }

    pub fn join_fork(&self) -> BTreeMap<NodeId, NodeId> {
        analysis::join_fork_map(&self.fork_join)
    }

    /// Control successors plus a back edge from the end of every fork body
    /// to its fork, modelling the next iteration.
    pub fn block_succs(&self, f: &IrFunction) -> BTreeMap<NodeId, Vec<NodeId>> {
        let succs = analysis::control_succs(f);
        let mut out: BTreeMap<NodeId, Vec<NodeId>> =
            self.blocks.iter().map(|&b| (b, succs[b.idx()].clone())).collect();
        for (&fk, &j) in &self.fork_join {
            if let NodeKind::Join { control } = f.kind(j) {
                out.entry(*control).or_default().push(fk);
            }
        }
        out
    }
}

fn is_valueless(k: &NodeKind) -> bool {
    matches!(
        k,
        NodeKind::Phi { .. } | NodeKind::Reduce { .. } | NodeKind::ThreadId { .. } | NodeKind::Parameter { .. }
    )
}

/// Nodes kept where their users are instead of being hoisted: fresh
/// collection constants and explicit copies must be recreated per iteration.
fn is_unhoistable(k: &NodeKind) -> bool {
    matches!(k, NodeKind::Constant(Constant::Zero(_)) | NodeKind::Copy { .. })
}

/// Blocks in which `user` consumes `n`.
pub fn use_blocks(f: &IrFunction, n: NodeId, user: NodeId, final_block: &[Option<NodeId>], jf: &BTreeMap<NodeId, NodeId>) -> Vec<NodeId> {
    let mut out = vec![];
    match f.kind(user) {
        NodeKind::Phi { region, inputs } => {
            let preds = f.kind(*region).control_preds();
            for (k, &i) in inputs.iter().enumerate() {
                if i == n {
                    out.push(preds[k]);
                }
            }
        }
        NodeKind::Reduce { join, init, reduct } => {
            let fork = jf[join];
            if *init == n {
                out.push(f.kind(fork).control_preds()[0]);
            }
            if *reduct == n {
                out.push(f.kind(*join).control_preds()[0]);
            }
        }
        k if k.is_control() => out.push(user),
        _ => {
            if let Some(b) = final_block[user.idx()] {
                out.push(b);
            }
        }
    }
    out
}

pub fn schedule_function(f: &IrFunction) -> Result<FunctionSchedule, String> {
    let dom = DomTree::compute(f);
    let fork_join = analysis::fork_join_map(f)?;
    let jf = analysis::join_fork_map(&fork_join);
    let users = analysis::def_use(f);
    let blocks = dom.rpo.clone();

    let mut loop_depth: BTreeMap<NodeId, usize> = blocks.iter().map(|&b| (b, 0)).collect();
    for l in analysis::natural_loops(f, &dom) {
        for b in &l.body {
            *loop_depth.entry(*b).or_default() += 1;
        }
    }
    for (&fk, &j) in &fork_join {
        for b in analysis::fork_body(f, fk, j) {
            if b != j {
                *loop_depth.entry(b).or_default() += 1;
            }
        }
    }

    // Data nodes in dependency order; pinned merges are sources.
    let data: Vec<NodeId> = f.live_ids().filter(|&i| !f.kind(i).is_control()).collect();
    let deps = |n: NodeId| -> Vec<NodeId> {
        let k = f.kind(n);
        if k.is_phi() || k.is_reduce() {
            return vec![];
        }
        k.inputs().into_iter().filter(|&i| !f.kind(i).is_control()).collect()
    };
    let mut indeg: BTreeMap<NodeId, usize> = data.iter().map(|&n| (n, 0)).collect();
    let mut dependents: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &n in &data {
        for d in deps(n) {
            *indeg.get_mut(&n).unwrap() += 1;
            dependents.entry(d).or_default().push(n);
        }
    }
    let mut topo = vec![];
    let mut ready: Vec<NodeId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
    while let Some(n) = ready.pop() {
        topo.push(n);
        for &u in dependents.get(&n).into_iter().flatten() {
            let d = indeg.get_mut(&u).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(u);
            }
        }
    }
    if topo.len() != data.len() {
        return Err(format!("`{}`: data dependence cycle outside phis and reduces", f.name));
    }

    let pinned = |n: NodeId| -> Option<NodeId> {
        match f.kind(n) {
            NodeKind::Phi { region, .. } => Some(*region),
            NodeKind::ThreadId { fork, .. } => Some(*fork),
            NodeKind::Reduce { join, .. } => jf.get(join).copied(),
            NodeKind::Call { control, .. } => Some(*control),
            NodeKind::Parameter { .. } => Some(f.start()),
            _ => None,
        }
    };

    let mut early: Vec<Option<NodeId>> = vec![None; f.nodes.len()];
    for &n in &topo {
        early[n.idx()] = Some(match pinned(n) {
            Some(b) => b,
            None => {
                let mut best = f.start();
                for d in deps(n) {
                    let b = early[d.idx()].unwrap_or(f.start());
                    if dom.depth(b) > dom.depth(best) {
                        best = b;
                    }
                }
                best
            }
        });
    }

    let mut block_of: Vec<Option<NodeId>> = vec![None; f.nodes.len()];
    for &b in &blocks {
        block_of[b.idx()] = Some(b);
    }
    for &n in topo.iter().rev() {
        let e = early[n.idx()].unwrap();
        if let Some(p) = pinned(n) {
            block_of[n.idx()] = Some(p);
            continue;
        }
        let mut lca: Option<NodeId> = None;
        for &u in &users[n.idx()] {
            for b in use_blocks(f, n, u, &block_of, &jf) {
                if !dom.is_reachable(b) {
                    continue;
                }
                lca = Some(match lca {
                    None => b,
                    Some(l) => dom.lca(l, b),
                });
            }
        }
        let Some(late) = lca else {
            block_of[n.idx()] = Some(e);
            continue;
        };
        if is_unhoistable(f.kind(n)) || !dom.dominates(e, late) {
            block_of[n.idx()] = Some(late);
            continue;
        }
        let (mut best, mut cur) = (late, late);
        loop {
            if loop_depth[&cur] < loop_depth[&best] {
                best = cur;
            }
            if cur == e {
                break;
            }
            match dom.idom(cur) {
                Some(p) => cur = p,
                None => break,
            }
        }
        block_of[n.idx()] = Some(best);
    }

    let mut sched = FunctionSchedule { blocks, block_of, order: BTreeMap::new(), loop_depth, fork_join, dom };
    for &b in &sched.blocks.clone() {
        let nodes: Vec<NodeId> = data
            .iter()
            .copied()
            .filter(|&n| sched.block_of[n.idx()] == Some(b) && !is_valueless(f.kind(n)))
            .collect();
        let order = order_block(f, &nodes, &users, true).or_else(|| order_block(f, &nodes, &users, false));
        sched.order.insert(b, order.ok_or_else(|| format!("`{}`: cannot order block {b}", f.name))?);
    }
    Ok(sched)
}

/// Topological order of one block's nodes, smallest id first among ready
/// nodes. With `anti`, readers of a collection run before the node that
/// mutates it in place.
fn order_block(f: &IrFunction, nodes: &[NodeId], users: &[Vec<NodeId>], anti: bool) -> Option<Vec<NodeId>> {
    let set: BTreeSet<NodeId> = nodes.iter().copied().collect();
    let mut edges: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for &n in nodes {
        for i in f.kind(n).inputs() {
            if set.contains(&i) && i != n {
                edges.entry(i).or_default().insert(n);
            }
        }
    }
    if anti {
        let depends_on = |a: NodeId, b: NodeId| -> bool {
            let mut seen = BTreeSet::new();
            let mut work = vec![a];
            while let Some(x) = work.pop() {
                if x == b {
                    return true;
                }
                if !seen.insert(x) {
                    continue;
                }
                work.extend(f.kind(x).inputs().into_iter().filter(|i| set.contains(i)));
            }
            false
        };
        for &w in nodes {
            let mutated: Vec<NodeId> = match f.kind(w) {
                NodeKind::Write { collection, .. } => vec![*collection],
                NodeKind::Call { args, .. } => args.iter().copied().filter(|&a| f.ty(a).is_collection()).collect(),
                _ => continue,
            };
            for c in mutated {
                for &u in &users[c.idx()] {
                    if u != w && set.contains(&u) && !depends_on(u, w) && !depends_on(w, u) {
                        edges.entry(u).or_default().insert(w);
                    }
                }
            }
        }
    }
    let mut indeg: BTreeMap<NodeId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    for outs in edges.values() {
        for o in outs {
            *indeg.get_mut(o).unwrap() += 1;
        }
    }
    let mut heap: BinaryHeap<Reverse<NodeId>> =
        indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| Reverse(n)).collect();
    let mut out = vec![];
    while let Some(Reverse(n)) = heap.pop() {
        out.push(n);
        for o in edges.get(&n).into_iter().flatten() {
            let d = indeg.get_mut(o).unwrap();
            *d -= 1;
            if *d == 0 {
                heap.push(Reverse(*o));
            }
        }
    }
    (out.len() == nodes.len()).then_some(out)
}
