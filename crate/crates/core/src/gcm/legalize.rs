use std::collections::{BTreeMap, BTreeSet};

use crate::ir::analysis::{self, DomTree};
use crate::ir::{FuncId, IrModule, NodeId, NodeKind};

use super::alias::{is_allocation, same_memory, Aliases, Summaries};
use super::schedule::{schedule_function, use_blocks, FunctionSchedule, END};

/// One consumption of a collection value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Use {
    user: NodeId,
    /// Which operand slot of `user`; used to redirect a spilled mutation.
    slot: Slot,
    block: NodeId,
    idx: usize,
    mutating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Collection,
    Other,
    PhiInput(usize),
    Init,
    Reduct,
    Arg(usize),
}

fn uses_of(m: &IrModule, fid: FuncId, c: NodeId, users: &[NodeId], s: &FunctionSchedule, al: &Aliases, summaries: &Summaries) -> Vec<Use> {
    let f = m.func(fid);
    let jf = s.join_fork();
    let mut out = vec![];
    let pos = |n: NodeId| s.position(n);
    for &u in users {
        match f.kind(u) {
            NodeKind::Write { collection, value, .. } => {
                let Some((b, i)) = pos(u) else { continue };
                if *collection == c {
                    out.push(Use { user: u, slot: Slot::Collection, block: b, idx: i, mutating: true });
                }
                if *value == c {
                    out.push(Use { user: u, slot: Slot::Other, block: b, idx: i, mutating: false });
                }
            }
            NodeKind::Read { collection, .. } if *collection == c => {
                let Some((b, i)) = pos(u) else { continue };
                let sub_mut = f.ty(u).is_collection() && sub_mutated(f, u);
                out.push(Use { user: u, slot: Slot::Collection, block: b, idx: i, mutating: sub_mut });
            }
            NodeKind::Phi { region, inputs } => {
                let preds = f.kind(*region).control_preds();
                for (k, &i) in inputs.iter().enumerate() {
                    if i == c {
                        out.push(Use {
                            user: u,
                            slot: Slot::PhiInput(k),
                            block: preds[k],
                            idx: END,
                            mutating: al.is_mutated(u),
                        });
                    }
                }
            }
            NodeKind::Reduce { join, init, reduct } => {
                let fork = jf[join];
                if *init == c {
                    let b = f.kind(fork).control_preds()[0];
                    out.push(Use { user: u, slot: Slot::Init, block: b, idx: END, mutating: al.is_mutated(u) });
                }
                if *reduct == c {
                    let b = f.kind(*join).control_preds()[0];
                    out.push(Use { user: u, slot: Slot::Reduct, block: b, idx: END, mutating: al.is_mutated(u) });
                }
            }
            NodeKind::Call { callee, args, .. } => {
                let Some((b, i)) = pos(u) else { continue };
                for (k, &a) in args.iter().enumerate() {
                    if a == c {
                        let mutating = same_memory(m, fid, *callee)
                            && summaries.get(callee).is_some_and(|s| s.mutated_params.get(k).copied().unwrap_or(false));
                        out.push(Use { user: u, slot: Slot::Arg(k), block: b, idx: i, mutating });
                    }
                }
            }
            k if k.is_control() => {
                for b in use_blocks(f, c, u, &s.block_of, &jf) {
                    out.push(Use { user: u, slot: Slot::Other, block: b, idx: END, mutating: false });
                }
            }
            _ => {
                let Some((b, i)) = pos(u) else { continue };
                out.push(Use { user: u, slot: Slot::Other, block: b, idx: i, mutating: false });
            }
        }
    }
    out
}

/// A sub-collection read is mutated when a write targets it directly or
/// through further sub-collection reads.
fn sub_mutated(f: &crate::ir::IrFunction, r: NodeId) -> bool {
    f.live_ids().any(|u| match f.kind(u) {
        NodeKind::Write { collection, .. } => *collection == r,
        NodeKind::Read { collection, .. } => *collection == r && f.ty(u).is_collection() && sub_mutated(f, u),
        _ => false,
    })
}

/// Blocks reachable from the successors of `from` without entering any of
/// `stops` (points where the value is defined afresh).
fn reach(succs: &BTreeMap<NodeId, Vec<NodeId>>, from: NodeId, stops: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::new();
    let mut work: Vec<NodeId> = succs.get(&from).cloned().unwrap_or_default();
    while let Some(b) = work.pop() {
        if stops.contains(&b) || !seen.insert(b) {
            continue;
        }
        work.extend(succs.get(&b).into_iter().flatten().copied());
    }
    seen
}

/// The first mutation of `c` that clobbers a value another use still needs.
fn find_conflict(m: &IrModule, fid: FuncId, s: &FunctionSchedule, al: &Aliases, summaries: &Summaries) -> Option<(NodeId, Use)> {
    let f = m.func(fid);
    let users = analysis::def_use(f);
    let succs = s.block_succs(f);
    for c in f.live_ids() {
        if !f.ty(c).is_collection() || f.kind(c).is_control() || s.block_of[c.idx()].is_none() {
            continue;
        }
        let uses = uses_of(m, fid, c, &users[c.idx()], s, al, summaries);
        if !uses.iter().any(|u| u.mutating) {
            continue;
        }
        let stops: BTreeSet<NodeId> = match f.kind(c) {
            NodeKind::Reduce { join, .. } => [s.join_fork()[join], *join].into(),
            _ => [s.block_of[c.idx()].unwrap()].into(),
        };
        /* A use is clobbered when it runs after the mutation: later in the
        same block, or in any block reachable before control returns to the
        definition. */
        for w in uses.iter().filter(|u| u.mutating) {
            let later = reach(&succs, w.block, &stops);
            for u in &uses {
                let same = u == w;
                let after = if u.block == w.block && !same && u.idx > w.idx && w.idx != END {
                    true
                } else {
                    later.contains(&u.block)
                };
                if after {
                    return Some((c, *w));
                }
            }
        }
    }
    None
}

fn redirect(f: &mut crate::ir::IrFunction, w: &Use, c: NodeId, copy: NodeId) {
    match (&mut f.node_mut(w.user).kind, w.slot) {
        (NodeKind::Write { collection, .. }, Slot::Collection) | (NodeKind::Read { collection, .. }, Slot::Collection) => {
            *collection = copy
        }
        (NodeKind::Phi { inputs, .. }, Slot::PhiInput(k)) => inputs[k] = copy,
        (NodeKind::Reduce { init, .. }, Slot::Init) => *init = copy,
        (NodeKind::Reduce { reduct, .. }, Slot::Reduct) => *reduct = copy,
        (NodeKind::Call { args, .. }, Slot::Arg(k)) => args[k] = copy,
        (k, _) => {
            debug_assert!(false, "cannot redirect {} of {c}", k.name());
        }
    }
}

/// Make in-place mutation legal in one function: whenever a collection value
/// is still needed after a mutating user would clobber it, that user is
/// redirected to an explicit copy. Returns the number of copies inserted.
pub fn legalize_mutation(m: &mut IrModule, fid: FuncId, summaries: &Summaries) -> Result<usize, String> {
    let mut spills = 0;
    loop {
        let f = m.func(fid);
        let s = schedule_function(f)?;
        let al = Aliases::compute(m, fid, summaries);
        let Some((c, w)) = find_conflict(m, fid, &s, &al, summaries) else { break };
        if spills > f.nodes.len() {
            return Err(format!("`{}`: mutation legalization does not converge", f.name));
        }
        /* Only the mutating user moves to the copy; everything else keeps
        reading the original. */
        let f = m.func_mut(fid);
        let ty = f.ty(c).clone();
        let labels = f.node(w.user).labels.clone();
        let copy = f.add_labeled(NodeKind::Copy { collection: c }, ty, &labels);
        redirect(f, &w, c, copy);
        spills += 1;
    }
    check_carried_allocations(m, fid, summaries)?;
    Ok(spills)
}

/// Storage reused by every iteration of a loop cannot also carry a value
/// into the next iteration.
fn check_carried_allocations(m: &IrModule, fid: FuncId, summaries: &Summaries) -> Result<(), String> {
    let f = m.func(fid);
    let s = schedule_function(f)?;
    let al = Aliases::compute(m, fid, summaries);
    let dom = DomTree::compute(f);
    let mut loops: Vec<(BTreeSet<NodeId>, Vec<NodeId>)> = vec![];
    for l in analysis::natural_loops(f, &dom) {
        let carried = f
            .live_ids()
            .filter(|&p| matches!(f.kind(p), NodeKind::Phi { region, .. } if *region == l.header))
            .collect();
        loops.push((l.body, carried));
    }
    for (&fk, &j) in &s.fork_join {
        let mut body = analysis::fork_body(f, fk, j);
        body.remove(&j);
        let carried = f
            .live_ids()
            .filter(|&r| matches!(f.kind(r), NodeKind::Reduce { join, .. } if *join == j))
            .collect();
        loops.push((body, carried));
    }
    for n in f.live_ids() {
        if !is_allocation(m, fid, n, summaries) {
            continue;
        }
        let Some(b) = s.block_of[n.idx()] else { continue };
        for (body, carried) in &loops {
            if body.contains(&b) && carried.iter().any(|&p| al.same(p, n)) {
                return Err(format!(
                    "`{}`: collection {n} is allocated inside a loop and carried to the next iteration",
                    f.name
                ));
            }
        }
    }
    Ok(())
}
