use std::collections::BTreeMap;

use crate::ir::analysis::control_succs;
use crate::ir::{DynConst, IrModule, NodeId, NodeKind};
use crate::sched::RegionValue;

use super::PassResult;

fn subst_kind(k: &mut NodeKind, args: &[DynConst]) {
    match k {
        NodeKind::Fork { factors, .. } => factors.iter_mut().for_each(|d| *d = d.substitute(args)),
        NodeKind::DynamicConstant(d) => *d = d.substitute(args),
        NodeKind::Call { dyn_args, .. } => dyn_args.iter_mut().for_each(|d| *d = d.substitute(args)),
        NodeKind::Constant(crate::ir::Constant::Zero(t)) => *t = t.substitute(args),
        _ => {}
    }
}

/// Replace each selected call by a copy of its callee's body.
pub fn inline(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let mut res = PassResult::default();
    let mut calls = vec![];
    for (fid, sel) in r.resolve(m) {
        let f = m.func(fid);
        calls.extend(sel.into_iter().filter(|&n| f.kind(n).is_call()).map(|n| (fid, n)));
    }
    if calls.is_empty() {
        return Err("region selects no call".into());
    }
    for (fid, call) in calls {
        let NodeKind::Call { control: pred, callee, dyn_args, args } = m.func(fid).kind(call).clone() else { continue };
        if callee == fid {
            return Err(format!("recursive inline request: {} calls itself", m.func(fid).name));
        }
        let g = m.func(callee).clone();
        if g.entry {
            return Err(format!("cannot inline entry function `{}`", g.name));
        }
        let f = m.func_mut(fid);
        let succs = control_succs(f);
        let succ = succs[pred.idx()].first().copied().ok_or("call has no control successor")?;
        let call_labels = f.node(call).labels.clone();
        let mut map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        map.insert(g.start(), pred);
        let mut ret = None;
        let mut cloned = vec![];
        for id in g.live_ids() {
            match g.kind(id) {
                NodeKind::Start => {}
                NodeKind::Parameter { index } => {
                    map.insert(id, args[*index]);
                }
                NodeKind::Return { control, value } => ret = Some((*control, *value)),
                _ => {
                    let n = f.add(NodeKind::Start, g.ty(id).substitute(&dyn_args));
                    map.insert(id, n);
                    cloned.push((id, n));
                }
            }
        }
        for &(old, new) in &cloned {
            let mut node = g.node(old).clone();
            node.kind.map_inputs(|x| map[&x]);
            subst_kind(&mut node.kind, &dyn_args);
            node.ty = node.ty.substitute(&dyn_args);
            node.labels.extend(call_labels.iter().cloned());
            *f.node_mut(new) = node;
        }
        let (rc, rv) = ret.ok_or("callee has no return")?;
        let last = map[&rc];
        if last != pred {
            f.node_mut(succ).kind.map_inputs(|x| if x == pred { last } else { x });
        }
        f.replace_all_uses(call, map[&rv]);
        f.kill(call);
        for c in &g.constraints {
            let (d, n) = (c.divisor.substitute(&dyn_args), c.dividend.substitute(&dyn_args));
            f.add_constraint(d, n, &c.origin);
        }
        let mut targets: Vec<NodeId> = cloned.iter().map(|&(_, n)| n).collect();
        if targets.is_empty() {
            targets.push(map[&rv]);
        }
        res.map(fid, call, &targets);
    }
    Ok(res)
}
