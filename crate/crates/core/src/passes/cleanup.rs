use std::collections::BTreeSet;

use crate::ir::{BinaryOp, Constant, IrFunction, NodeId, NodeKind, ScalarKind, Type, UnaryOp};
use crate::runtime::ops;

/// Remove data nodes that no control node depends on. Control nodes are
/// always kept; their data inputs (return values, branch conditions) seed
/// the live set.
pub fn dce_function(f: &mut IrFunction) -> BTreeSet<NodeId> {
    let mut live = BTreeSet::new();
    let mut work: Vec<NodeId> = f.live_ids().filter(|&i| f.kind(i).is_control()).collect();
    while let Some(n) = work.pop() {
        if !live.insert(n) {
            continue;
        }
        work.extend(f.kind(n).inputs());
    }
    let mut removed = BTreeSet::new();
    for id in f.live_ids().collect::<Vec<_>>() {
        if !live.contains(&id) {
            f.kill(id);
            removed.insert(id);
        }
    }
    removed
}

/// Replace phis whose inputs are all the same value (ignoring self edges).
pub fn remove_trivial_phis(f: &mut IrFunction) -> Vec<(NodeId, NodeId)> {
    let mut replaced = vec![];
    loop {
        let mut changed = false;
        for id in f.live_ids().collect::<Vec<_>>() {
            let Some((_, inputs)) = f.kind(id).try_phi() else { continue };
            let distinct: BTreeSet<NodeId> = inputs.iter().copied().filter(|&i| i != id).collect();
            if distinct.len() == 1 {
                let v = *distinct.iter().next().unwrap();
                f.replace_all_uses(id, v);
                f.kill(id);
                for r in replaced.iter_mut() {
                    let (_, to): &mut (NodeId, NodeId) = r;
                    if *to == id {
                        *to = v;
                    }
                }
                replaced.push((id, v));
                changed = true;
            }
        }
        if !changed {
            return replaced;
        }
    }
}

fn scalar_const(f: &IrFunction, id: NodeId) -> Option<(ScalarKind, u64)> {
    match f.kind(id) {
        NodeKind::Constant(Constant::Scalar(k, b)) => Some((*k, *b)),
        _ => None,
    }
}

/// Fold binary, unary, and cast nodes whose operands are scalar constants.
/// Returns (folded node, replacement constant) pairs.
pub fn constant_fold_function(f: &mut IrFunction, within: Option<&BTreeSet<NodeId>>) -> Vec<(NodeId, NodeId)> {
    let mut out = vec![];
    loop {
        let mut changed = false;
        for id in f.live_ids().collect::<Vec<_>>() {
            if within.is_some_and(|w| !w.contains(&id)) {
                continue;
            }
            let folded = match f.kind(id).clone() {
                NodeKind::Binary { op, left, right } => match (scalar_const(f, left), scalar_const(f, right)) {
                    (Some((k, a)), Some((_, b))) => fold_binary(op, k, a, b),
                    _ => None,
                },
                NodeKind::Unary { op, input } => scalar_const(f, input).map(|(k, a)| match op {
                    UnaryOp::Cast(t) => (t, ops::cast(k, t, a)),
                    UnaryOp::Neg => (k, ops::neg(k, a)),
                    UnaryOp::Not => (k, ops::not(k, a)),
                }),
                _ => None,
            };
            if let Some((k, bits)) = folded {
                let labels = f.node(id).labels.clone();
                let c = f.add_labeled(NodeKind::Constant(Constant::Scalar(k, bits)), Type::Scalar(k), &labels);
                f.replace_uses(id, c);
                f.kill(id);
                out.push((id, c));
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

fn fold_binary(op: BinaryOp, k: ScalarKind, a: u64, b: u64) -> Option<(ScalarKind, u64)> {
    let bits = ops::binary(op, k, a, b).ok()?;
    let rk = if op.is_comparison() { ScalarKind::Bool } else { k };
    Some((rk, bits))
}
