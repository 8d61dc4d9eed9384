use std::collections::{BTreeMap, BTreeSet};

use crate::ir::analysis::{control_succs, def_use, fork_join_map, inside_data};
use crate::ir::{Constant, DynConst, FuncId, Index, IrFunction, IrModule, NodeId, NodeKind, Type};
use crate::sched::RegionValue;

use super::PassResult;

fn is_cloneable(k: &NodeKind) -> bool {
    matches!(k, NodeKind::Constant(_) | NodeKind::DynamicConstant(_))
}

/// Move a single-entry single-exit control region and the data computed
/// inside it into a new function, leaving a call in its place.
pub fn outline(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let resolved: Vec<(FuncId, BTreeSet<NodeId>)> = r.resolve(m).into_iter().filter(|(_, s)| !s.is_empty()).collect();
    let [(fid, sel)] = &resolved[..] else {
        return Err("outline region must lie in exactly one function".into());
    };
    let fid = *fid;
    let f = m.func(fid).clone();
    let control: BTreeSet<NodeId> = sel.iter().copied().filter(|&n| f.kind(n).is_control()).collect();
    if control.is_empty() {
        return Err("region has no control nodes".into());
    }
    if control.iter().any(|&n| f.kind(n).is_start() || f.kind(n).is_return()) {
        return Err("region contains the function's start or return".into());
    }
    let fj = fork_join_map(&f)?;
    for (k, j) in &fj {
        if control.contains(k) != control.contains(j) {
            return Err(format!("region splits fork {k} from its join {j}"));
        }
    }
    let succs = control_succs(&f);
    let mut entries = vec![];
    let mut exits = vec![];
    for &c in &control {
        for p in f.kind(c).control_preds() {
            if !control.contains(&p) {
                entries.push((p, c));
            }
        }
        for &s in &succs[c.idx()] {
            if !control.contains(&s) {
                exits.push((c, s));
            }
        }
    }
    let ([(pred, entry)], [(exit, succ)]) = (&entries[..], &exits[..]) else {
        return Err(format!("region is not single-entry/single-exit ({} entries, {} exits)", entries.len(), exits.len()));
    };
    let (pred, entry, exit, succ) = (*pred, *entry, *exit, *succ);
    if succs[pred.idx()].len() != 1 && !f.kind(entry).is_region() && !matches!(f.kind(entry), NodeKind::Projection { .. }) {
        return Err("region entry is not a single edge".into());
    }
    let users = def_use(&f);
    let mut moved = inside_data(&f, &control, &users);
    moved.extend(control.iter().copied());
    for id in f.live_ids() {
        if let NodeKind::Call { control: c, .. } = f.kind(id) {
            if control.contains(c) {
                moved.insert(id);
            }
        }
    }
    let mut inbound = BTreeSet::new();
    let mut clones = BTreeSet::new();
    for &n in &moved {
        for i in f.kind(n).inputs() {
            if moved.contains(&i) || f.kind(i).is_control() {
                continue;
            }
            if is_cloneable(f.kind(i)) {
                clones.insert(i);
            } else {
                inbound.insert(i);
            }
        }
    }
    let mut outbound = BTreeSet::new();
    for &n in &moved {
        if f.kind(n).is_control() {
            continue;
        }
        if users[n.idx()].iter().any(|u| !moved.contains(u)) {
            outbound.insert(n);
        }
    }
    let inbound: Vec<NodeId> = inbound.into_iter().collect();
    let outbound: Vec<NodeId> = outbound.into_iter().collect();

    let name = m.fresh_name(&f.name);
    let ret_type = match &outbound[..] {
        [] => Type::Scalar(crate::ir::ScalarKind::Bool),
        [v] => f.ty(*v).clone(),
        vs => Type::Product(vs.iter().map(|v| f.ty(*v).clone()).collect()),
    };
    let param_types: Vec<Type> = inbound.iter().map(|&i| f.ty(i).clone()).collect();
    let mut g = IrFunction::new(name, f.dc_params.clone(), param_types.clone(), ret_type.clone());
    g.constraints = f.constraints.clone();
    let mut map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    map.insert(pred, g.start());
    for (i, &v) in inbound.iter().enumerate() {
        let p = g.add_labeled(NodeKind::Parameter { index: i }, param_types[i].clone(), &f.node(v).labels);
        map.insert(v, p);
    }
    for &c in &clones {
        let n = g.add(f.kind(c).clone(), f.ty(c).clone());
        map.insert(c, n);
    }
    let order: Vec<NodeId> = moved.iter().copied().collect();
    for &n in &order {
        let id = g.add(NodeKind::Start, f.ty(n).clone());
        map.insert(n, id);
    }
    for &n in &order {
        let mut node = f.node(n).clone();
        node.kind.map_inputs(|x| map[&x]);
        *g.node_mut(map[&n]) = node;
    }
    let ret_value = match &outbound[..] {
        [] => g.add(NodeKind::Constant(Constant::Scalar(crate::ir::ScalarKind::Bool, 0)), ret_type.clone()),
        [v] => map[v],
        vs => {
            let mut acc = g.add(NodeKind::Constant(Constant::Zero(ret_type.clone())), ret_type.clone());
            for (k, v) in vs.iter().enumerate() {
                acc = g.add(
                    NodeKind::Write { collection: acc, indices: vec![Index::Field(k)], value: map[v] },
                    ret_type.clone(),
                );
            }
            acc
        }
    };
    g.add(NodeKind::Return { control: map[&exit], value: ret_value }, Type::Control);
    let gid = m.add_function(g);

    let f = m.func_mut(fid);
    let mut res = PassResult::default();
    let labels = f.node(entry).labels.clone();
    let call_ctrl = if succs[pred.idx()].len() == 1 {
        pred
    } else {
        f.add_labeled(NodeKind::Region { preds: vec![pred] }, Type::Control, &labels)
    };
    let dyn_args = (0..f.num_dc_params()).map(DynConst::param).collect();
    let call = f.add_labeled(
        NodeKind::Call { control: call_ctrl, callee: gid, dyn_args, args: inbound.clone() },
        ret_type.clone(),
        &labels,
    );
    f.node_mut(succ).kind.map_inputs(|x| if x == exit { call_ctrl } else { x });
    let outside_users = |f: &IrFunction, v: NodeId| -> Vec<NodeId> {
        f.live_ids().filter(|u| !moved.contains(u) && *u != call && f.kind(*u).inputs().contains(&v)).collect()
    };
    if outbound.len() == 1 {
        let us = outside_users(f, outbound[0]);
        f.replace_uses_in(&us, outbound[0], call);
    } else {
        for (k, &v) in outbound.iter().enumerate() {
            let us = outside_users(f, v);
            let rd = f.add_labeled(
                NodeKind::Read { collection: call, indices: vec![Index::Field(k)] },
                f.ty(v).clone(),
                &f.node(v).labels.clone(),
            );
            f.replace_uses_in(&us, v, rd);
        }
    }
    for &n in &order {
        f.kill(n);
        res.remap.insert((fid, n), vec![(gid, map[&n])]);
    }
    res.results.push(RegionValue::function(gid));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use crate::ir::Type;
    use crate::testutil::{mat, run, scheduled};

    const MATMUL: &str = include_str!("../../fixtures/matmul.jn");
    const PREFIX: &str = "forkify(*); infer-attributes(*);
let par = matmul@outer \\ matmul@inner;
fork-chunk![4](par);
let (outer, inner, _) = fork-reshape[[0,2],[1],[3]](par);
";

    #[test]
    fn outlined_block_body_takes_the_collections_and_block_offsets() {
        let (m0, m) = scheduled(MATMUL, &format!("{PREFIX}outline(inner);")).unwrap();
        assert_eq!(m.functions.len(), 2);
        let body = &m.functions[1];
        let arrays = body.param_types.iter().filter(|t| matches!(t, Type::Array(..))).count();
        let scalars = body.param_types.iter().filter(|t| matches!(t, Type::Scalar(_))).count();
        assert_eq!((arrays, scalars), (3, 2));
        assert!(matches!(body.return_type, Type::Array(..)));
        let (a, b) = (mat(8, 4, 1), mat(4, 8, 2));
        assert_eq!(run(&m0, "matmul", &[8, 4, 8], vec![a.clone(), b.clone()]), run(&m, "matmul", &[8, 4, 8], vec![a, b]));
    }

    #[test]
    fn region_without_inputs_outlines_to_a_nullary_function() {
        let src = "#[entry] fn f<n>() -> i64 {
  let s : i64 = 0;
  @l for i in 0..n { s += 3; }
  return s;
}";
        let (m0, m) = scheduled(src, "outline(f@l);").unwrap();
        let callee = &m.functions[1];
        assert!(callee.param_types.is_empty(), "{:?}", callee.param_types);
        assert_eq!(run(&m0, "f", &[5], vec![]), run(&m, "f", &[5], vec![]));
    }

    #[test]
    fn inline_undoes_outline() {
        let (m0, m) = scheduled(MATMUL, &format!("{PREFIX}let body = outline(inner);\ninline(matmul);")).unwrap();
        let calls = m.functions[0].live_ids().filter(|&n| m.functions[0].kind(n).is_call()).count();
        assert_eq!(calls, 0);
        let (a, b) = (mat(8, 4, 3), mat(4, 8, 4));
        assert_eq!(run(&m0, "matmul", &[8, 4, 8], vec![a.clone(), b.clone()]), run(&m, "matmul", &[8, 4, 8], vec![a, b]));
    }
}
