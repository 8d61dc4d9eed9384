use std::collections::BTreeSet;

use crate::ir::analysis::{control_succs, def_use, fork_body, inside_data, natural_loops, DomTree, NaturalLoop};
use crate::ir::{BinaryOp, Constant, DynConst, FuncId, IrFunction, IrModule, NodeId, NodeKind, Type};
use crate::sched::RegionValue;

use super::{cleanup, PassResult};

/// Recognized shape of a canonical counted loop.
struct Canonical {
    header: NodeId,
    entry: NodeId,
    latch: NodeId,
    branch: NodeId,
    body_proj: NodeId,
    exit_proj: NodeId,
    iv: NodeId,
    bound: DynConst,
    carried: Vec<NodeId>,
}

fn const_u64(f: &IrFunction, id: NodeId) -> Option<u64> {
    match f.kind(id) {
        NodeKind::Constant(Constant::Scalar(k, b)) if k.is_integer() => Some(*b),
        _ => None,
    }
}

fn bound_of(f: &IrFunction, id: NodeId) -> Option<DynConst> {
    match f.kind(id) {
        NodeKind::DynamicConstant(d) => Some(d.clone()),
        NodeKind::Constant(Constant::Scalar(k, b)) if k.is_unsigned() => Some(DynConst::lit(*b)),
        _ => None,
    }
}

fn match_loop(f: &IrFunction, l: &NaturalLoop, succs: &[Vec<NodeId>]) -> Result<Canonical, String> {
    let header = l.header;
    let NodeKind::Region { preds } = f.kind(header) else {
        return Err(format!("loop header {header} is not a region"));
    };
    if preds.len() != 2 || l.latches.len() != 1 {
        return Err(format!("loop at {header} does not have exactly one entry and one back edge"));
    }
    let latch = l.latches[0];
    let entry_pos = preds.iter().position(|&p| p != latch).ok_or("loop has no entry edge")?;
    if preds[1 - entry_pos] != latch {
        return Err(format!("loop at {header} has a malformed back edge"));
    }
    let entry = preds[entry_pos];
    let latch_pos = 1 - entry_pos;
    let hs = &succs[header.idx()];
    if hs.len() != 1 || !f.kind(hs[0]).is_if() {
        return Err(format!("loop at {header} does not test its condition first"));
    }
    let branch = hs[0];
    let NodeKind::If { cond, .. } = f.kind(branch) else { unreachable!() };
    let projs = &succs[branch.idx()];
    let (exit_proj, body_proj) = (projs[0], projs[1]);
    if l.body.contains(&exit_proj) || !l.body.contains(&body_proj) {
        return Err(format!("loop at {header} does not exit through its condition"));
    }
    for &n in &l.body {
        if n == branch {
            continue;
        }
        if f.kind(n).is_return() || succs[n.idx()].iter().any(|s| !l.body.contains(s)) {
            return Err(format!("loop at {header} has more than one exit"));
        }
    }
    let Some((iv, bound_node)) = f.kind(*cond).try_binary(BinaryOp::Lt) else {
        return Err(format!("loop at {header} is not bounded by a `<` comparison"));
    };
    let Some((region, ivin)) = f.kind(iv).try_phi() else {
        return Err(format!("loop at {header} has no induction variable"));
    };
    if region != header {
        return Err(format!("loop at {header} has no induction variable"));
    }
    if const_u64(f, ivin[entry_pos]) != Some(0) {
        return Err(format!("induction variable of loop at {header} does not start at 0"));
    }
    let step_ok = match f.kind(ivin[latch_pos]).try_binary(BinaryOp::Add) {
        Some((a, b)) => (a == iv && const_u64(f, b) == Some(1)) || (b == iv && const_u64(f, a) == Some(1)),
        None => false,
    };
    if !step_ok {
        return Err(format!("induction variable of loop at {header} does not step by 1"));
    }
    let bound = bound_of(f, bound_node)
        .ok_or_else(|| format!("bound of loop at {header} is not a dynamic constant"))?;
    let mut carried = vec![];
    for id in f.live_ids() {
        if let Some((r, _)) = f.kind(id).try_phi() {
            if r == header && id != iv {
                carried.push(id);
            }
        }
    }
    let _ = entry;
    Ok(Canonical { header, entry, latch, branch, body_proj, exit_proj, iv, bound, carried })
}

fn phi_input(f: &IrFunction, phi: NodeId, pred: NodeId, header: NodeId) -> NodeId {
    let NodeKind::Region { preds } = f.kind(header) else { unreachable!() };
    let pos = preds.iter().position(|&p| p == pred).unwrap();
    let Some((_, ins)) = f.kind(phi).try_phi() else { unreachable!() };
    ins[pos]
}

fn rewrite(f: &mut IrFunction, fid: FuncId, c: &Canonical, res: &mut PassResult) -> (NodeId, NodeId) {
    let carried: Vec<(NodeId, NodeId, NodeId)> =
        c.carried.iter().map(|&p| (p, phi_input(f, p, c.entry, c.header), phi_input(f, p, c.latch, c.header))).collect();
    let labels = f.node(c.header).labels.clone();
    let fork = f.add_labeled(
        NodeKind::Fork { control: c.entry, factors: vec![c.bound.clone()] },
        Type::Control,
        &labels,
    );
    let join_ctrl = if c.latch == c.body_proj { fork } else { c.latch };
    let join = f.add_labeled(NodeKind::Join { control: join_ctrl }, Type::Control, &labels);
    let iv_ty = f.ty(c.iv).clone();
    let iv_labels = f.node(c.iv).labels.clone();
    let tid = f.add_labeled(NodeKind::ThreadId { fork, dim: 0 }, iv_ty, &iv_labels);
    f.replace_all_uses(c.body_proj, fork);
    f.replace_all_uses(c.exit_proj, join);
    // Calls pinned on the header run once per iteration.
    for id in f.live_ids().collect::<Vec<_>>() {
        if let NodeKind::Call { control, .. } = f.kind(id) {
            if *control == c.header {
                let k = &mut f.node_mut(id).kind;
                if let NodeKind::Call { control, .. } = k {
                    *control = fork;
                }
            }
        }
    }
    let mut reduces = vec![];
    for &(p, init, reduct) in &carried {
        let ty = f.ty(p).clone();
        let pl = f.node(p).labels.clone();
        let r = f.add_labeled(NodeKind::Reduce { join, init, reduct }, ty, &pl);
        reduces.push((p, r));
    }
    for &(p, r) in &reduces {
        f.replace_all_uses(p, r);
    }
    // The increment and comparison become dead once the phi is gone.
    let iv_users: Vec<NodeId> = def_use(f)[c.iv.idx()].clone();
    for u in iv_users {
        f.replace_uses_in(&[u], c.iv, tid);
    }
    for n in [c.header, c.branch, c.body_proj, c.exit_proj, c.iv] {
        f.kill(n);
    }
    for &(p, r) in &reduces {
        f.kill(p);
        res.map(fid, p, &[r]);
    }
    res.map(fid, c.header, &[fork]);
    res.map(fid, c.branch, &[fork, join]);
    res.map(fid, c.body_proj, &[fork]);
    res.map(fid, c.exit_proj, &[join]);
    res.map(fid, c.iv, &[tid]);
    let removed = cleanup::dce_function(f);
    res.removed(fid, removed);
    (fork, join)
}

/// Convert canonical counted loops whose header lies in the region into
/// fork-joins, innermost first.
pub fn forkify(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let mut res = PassResult::default();
    let mut out = RegionValue::empty();
    for (fid, sel) in r.resolve(m) {
        let f = m.func_mut(fid);
        let mut rejected: BTreeSet<NodeId> = BTreeSet::new();
        let mut created: BTreeSet<NodeId> = BTreeSet::new();
        loop {
            let dom = DomTree::compute(f);
            let succs = control_succs(f);
            let mut loops = natural_loops(f, &dom);
            loops.reverse();
            let mut done = false;
            for l in &loops {
                if !sel.contains(&l.header) || rejected.contains(&l.header) {
                    continue;
                }
                match match_loop(f, l, &succs) {
                    Ok(c) => {
                        let (fork, join) = rewrite(f, fid, &c, &mut res);
                        created.insert(fork);
                        created.insert(join);
                        done = true;
                        break;
                    }
                    Err(e) => {
                        res.diagnostics.push(format!("{}: {e}", f.name));
                        rejected.insert(l.header);
                    }
                }
            }
            if !done {
                break;
            }
        }
        if created.is_empty() {
            continue;
        }
        let users = def_use(f);
        let mut nodes = BTreeSet::new();
        let forks: Vec<NodeId> = created.iter().copied().filter(|&n| f.is_live(n) && f.kind(n).is_fork()).collect();
        let fj = crate::ir::analysis::fork_join_map(f)?;
        for fork in forks {
            let body = fork_body(f, fork, fj[&fork]);
            nodes.extend(inside_data(f, &body, &users));
            nodes.extend(body);
        }
        out.0.insert(fid, crate::sched::Selection::Nodes(nodes));
    }
    if out.0.is_empty() {
        res.diagnostics.push("no qualifying loop in region".into());
    }
    res.results.push(out);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compile_source;
    use crate::ir::verify::verify;
    use crate::runtime::{oracle_execute, Value};

    fn forkify_all(m: &mut IrModule) -> PassResult {
        let r = RegionValue::star(m);
        let res = forkify(m, &r).unwrap();
        let d = verify(m);
        assert!(d.is_empty(), "{}", d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"));
        res
    }

    #[test]
    fn sum_loop_becomes_one_fork_with_one_reduce() {
        let src = "#[entry] fn sum<n>(a: f32[n]) -> f32 { let s: f32 = 0.0; for i in 0..n { s += a[i]; } return s; }";
        let mut m = compile_source("t", src).unwrap();
        let before = m.clone();
        forkify_all(&mut m);
        let f = &m.functions[0];
        assert_eq!(f.forks().len(), 1);
        let reduces: Vec<_> = f.live_ids().filter(|&i| f.kind(i).is_reduce()).collect();
        assert_eq!(reduces.len(), 1);
        let NodeKind::Reduce { init, reduct, .. } = f.kind(reduces[0]) else { unreachable!() };
        assert_eq!(f.kind(*init), &NodeKind::Constant(Constant::Scalar(crate::ir::ScalarKind::F32, 0f32.to_bits() as u64)));
        assert!(f.kind(*reduct).try_binary(BinaryOp::Add).is_some());
        let a = Value::f32_array(vec![5], &[1.0, 2.0, 3.0, 4.0, 5.5]);
        let x = oracle_execute(&before, FuncId(0), &[5], vec![a.clone()]).unwrap();
        let y = oracle_execute(&m, FuncId(0), &[5], vec![a]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn data_dependent_bound_is_left_alone() {
        let src = "#[entry] fn f<n>(a: u64[n]) -> u64 { let s: u64 = 0; for i in 0..a[0] { s += 1; } return s; }";
        let mut m = compile_source("t", src).unwrap();
        let before = m.clone();
        let res = forkify_all(&mut m);
        assert_eq!(m, before);
        assert!(!res.diagnostics.is_empty());
    }
}
