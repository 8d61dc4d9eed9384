use std::collections::{BTreeMap, BTreeSet};

use crate::ir::analysis::{def_use, fork_body, fork_join_map, inside_data, join_fork_map};
use crate::ir::{Attr, BinaryOp, Constant, IrFunction, IrModule, NodeId, NodeKind, Type};
use crate::runtime::ops;
use crate::sched::RegionValue;

use super::PassResult;

pub const MONOID_OPS: &[BinaryOp] =
    &[BinaryOp::Add, BinaryOp::Mul, BinaryOp::Min, BinaryOp::Max, BinaryOp::And, BinaryOp::Or, BinaryOp::Xor];

/// A reduction recognized as one monoid operator applied to the reduce value.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoidForm {
    pub op: BinaryOp,
    pub binary: NodeId,
    /// The value combined into the accumulator each iteration.
    pub operand: NodeId,
    /// For the element form `r[idx] = r[idx] op x`: the read and the write.
    pub element: Option<(NodeId, NodeId)>,
}

fn depends_on(f: &IrFunction, from: NodeId, target: NodeId) -> bool {
    let mut seen = BTreeSet::new();
    let mut work = vec![from];
    while let Some(n) = work.pop() {
        if n == target {
            return true;
        }
        if !seen.insert(n) || f.kind(n).is_control() || f.kind(n).is_reduce() && n != from {
            continue;
        }
        work.extend(f.kind(n).inputs());
    }
    false
}

fn split_monoid(f: &IrFunction, bin: NodeId, acc: NodeId) -> Option<(BinaryOp, NodeId)> {
    let NodeKind::Binary { op, left, right } = f.kind(bin) else { return None };
    if !MONOID_OPS.contains(op) {
        return None;
    }
    let kind = f.ty(bin).as_scalar()?;
    ops::identity(*op, kind)?;
    let other = if *left == acc {
        *right
    } else if *right == acc {
        *left
    } else {
        return None;
    };
    if depends_on(f, other, acc) {
        return None;
    }
    Some((*op, other))
}

/// Recognize `r = r op x` or `r[idx] = r[idx] op x`, where `r` is used by
/// nothing else inside the fork.
pub fn monoid_form(f: &IrFunction, r: NodeId, users: &[Vec<NodeId>], inside: &BTreeSet<NodeId>) -> Option<MonoidForm> {
    let (_, _, reduct) = f.kind(r).try_reduce()?;
    let inner_users: Vec<NodeId> = users[r.idx()].iter().copied().filter(|u| inside.contains(u)).collect();
    if let Some((op, operand)) = split_monoid(f, reduct, r) {
        if inner_users != [reduct] {
            return None;
        }
        return Some(MonoidForm { op, binary: reduct, operand, element: None });
    }
    let NodeKind::Write { collection, indices, value } = f.kind(reduct) else { return None };
    if *collection != r {
        return None;
    }
    let bin = *value;
    let NodeKind::Binary { left, right, .. } = f.kind(bin) else { return None };
    let read = [*left, *right].into_iter().find(|&x| {
        matches!(f.kind(x), NodeKind::Read { collection, indices: ri } if *collection == r && ri == indices)
    })?;
    let (op, operand) = split_monoid(f, bin, read)?;
    if depends_on(f, operand, r) || indices.iter().flat_map(crate::ir::analysis::index_nodes).any(|i| depends_on(f, i, r)) {
        return None;
    }
    let mut expect = vec![read, reduct];
    expect.sort();
    let mut got = inner_users.clone();
    got.sort();
    if got != expect || users[read.idx()] != [bin] {
        return None;
    }
    Some(MonoidForm { op, binary: bin, operand, element: Some((read, reduct)) })
}

/// `tid(fork, dim) + c` for a literal `c`, as `c`.
fn tid_offset(f: &IrFunction, fork: NodeId, dim: usize, p: NodeId) -> Option<i64> {
    let is_tid = |n: NodeId| matches!(f.kind(n), NodeKind::ThreadId { fork: k, dim: d } if *k == fork && *d == dim);
    let lit = |n: NodeId| match f.kind(n) {
        NodeKind::Constant(Constant::Scalar(_, bits)) => Some(*bits as i64),
        _ => None,
    };
    if is_tid(p) {
        return Some(0);
    }
    match f.kind(p) {
        NodeKind::Binary { op: BinaryOp::Add, left, right } if is_tid(*left) => lit(*right),
        NodeKind::Binary { op: BinaryOp::Add, left, right } if is_tid(*right) => lit(*left),
        NodeKind::Binary { op: BinaryOp::Sub, left, right } if is_tid(*left) => lit(*right).map(|c| c.wrapping_neg()),
        _ => None,
    }
}

/// For each dimension of `fork`, the position index holding its thread id
/// (plus a literal offset), or None if some index is not of that form.
fn direct_positions(f: &IrFunction, fork: NodeId, ndims: usize, indices: &[crate::ir::Index]) -> Option<Vec<(usize, i64)>> {
    let ps = indices.iter().find_map(|i| match i {
        crate::ir::Index::Position(ps) => Some(ps),
        _ => None,
    })?;
    (0..ndims)
        .map(|d| ps.iter().enumerate().find_map(|(i, &p)| tid_offset(f, fork, d, p).map(|c| (i, c))))
        .collect()
}

/// True when every access to the reduce's collection inside the fork
/// indexes each thread id of the fork at a consistent position and offset.
pub fn is_parallel_reduce(
    f: &IrFunction,
    r: NodeId,
    fork: NodeId,
    users: &[Vec<NodeId>],
    inside: &BTreeSet<NodeId>,
) -> bool {
    if !matches!(f.ty(r), Type::Array(..)) {
        return false;
    }
    let Some((_, factors)) = f.kind(fork).try_fork() else { return false };
    let nd = factors.len();
    let mut positions: Option<Vec<(usize, i64)>> = None;
    let mut check = |idx: &[crate::ir::Index]| -> bool {
        match direct_positions(f, fork, nd, idx) {
            Some(p) => match &positions {
                Some(q) => *q == p,
                None => {
                    positions = Some(p);
                    true
                }
            },
            None => false,
        }
    };
    let mut chain = BTreeSet::from([r]);
    let mut work = vec![r];
    let mut saw_access = false;
    while let Some(v) = work.pop() {
        for &u in &users[v.idx()] {
            if u == r {
                continue;
            }
            if !inside.contains(&u) {
                if v == r {
                    continue;
                }
                return false;
            }
            match f.kind(u) {
                NodeKind::Read { collection, indices } if *collection == v => {
                    saw_access = true;
                    if !check(indices) {
                        return false;
                    }
                }
                NodeKind::Write { collection, indices, value } if *collection == v && *value != v => {
                    saw_access = true;
                    if !check(indices) {
                        return false;
                    }
                    if chain.insert(u) {
                        work.push(u);
                    }
                }
                NodeKind::Reduce { init, .. } if *init == v => {
                    if chain.insert(u) {
                        work.push(u);
                    }
                }
                NodeKind::Reduce { reduct, .. } if *reduct == v => {}
                NodeKind::Phi { .. } => {
                    if chain.insert(u) {
                        work.push(u);
                    }
                }
                _ => return false,
            }
        }
    }
    let (_, _, reduct) = f.kind(r).try_reduce().unwrap();
    saw_access && chain.contains(&reduct)
}

fn no_reset(f: &IrFunction, z: NodeId, users: &[Vec<NodeId>], fj: &BTreeMap<NodeId, NodeId>) -> bool {
    let NodeKind::Constant(Constant::Zero(Type::Array(_, ext))) = f.kind(z) else { return false };
    let [r] = users[z.idx()][..] else { return false };
    let Some((join, init, reduct)) = f.kind(r).try_reduce() else { return false };
    if init != z {
        return false;
    }
    let jf = join_fork_map(fj);
    let fork = jf[&join];
    let (_, factors) = f.kind(fork).try_fork().unwrap();
    if factors.len() != ext.len() || factors.iter().zip(ext).any(|(a, b)| a.normalize() != b.normalize()) {
        return false;
    }
    let NodeKind::Write { collection, indices, value } = f.kind(reduct) else { return false };
    if *collection != r || indices.len() != 1 || depends_on(f, *value, r) {
        return false;
    }
    let crate::ir::Index::Position(ps) = &indices[0] else { return false };
    let in_order = ps.len() == factors.len()
        && ps.iter().enumerate().all(|(d, &p)| matches!(f.kind(p), NodeKind::ThreadId { fork: k, dim } if *k == fork && *dim == d));
    in_order && users[r.idx()].iter().all(|&u| u == reduct || !is_inside_of(f, fj, fork, u))
}

fn is_inside_of(f: &IrFunction, fj: &BTreeMap<NodeId, NodeId>, fork: NodeId, n: NodeId) -> bool {
    let body = fork_body(f, fork, fj[&fork]);
    inside_data(f, &body, &def_use(f)).contains(&n)
}

pub fn infer_function(f: &mut IrFunction) -> Result<usize, String> {
    let fj = fork_join_map(f)?;
    let jf = join_fork_map(&fj);
    let users = def_use(f);
    let mut insides: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (&k, &j) in &fj {
        insides.insert(k, inside_data(f, &fork_body(f, k, j), &users));
    }
    let mut added = vec![];
    for r in f.live_ids() {
        let Some((join, _, _)) = f.kind(r).try_reduce() else { continue };
        let fork = jf[&join];
        let inside = &insides[&fork];
        if monoid_form(f, r, &users, inside).is_some() {
            added.push((r, Attr::MonoidReduce));
        }
        if is_parallel_reduce(f, r, fork, &users, inside) {
            added.push((r, Attr::ParallelReduce));
        }
    }
    let mut n = 0;
    for (r, a) in added {
        n += f.node_mut(r).attrs.insert(a) as usize;
    }
    let zs: Vec<NodeId> = f.live_ids().filter(|&z| no_reset(f, z, &users, &fj)).collect();
    for z in zs {
        let (_, r) = (z, users[z.idx()][0]);
        if f.node(r).has_attr(Attr::ParallelReduce) {
            n += f.node_mut(z).attrs.insert(Attr::NoResetConstant) as usize;
        }
    }
    Ok(n)
}

pub fn infer_attributes(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let mut res = PassResult::default();
    for fid in r.resolve(m).into_keys() {
        let f = m.func_mut(fid);
        let n = infer_function(f)?;
        if n > 0 {
            res.diagnostics.push(format!("{}: {n} attribute(s) inferred", f.name));
        }
    }
    Ok(res)
}

pub fn parallelize(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let forks = super::selected_forks(m, r);
    if forks.is_empty() {
        return Err("region selects no fork".into());
    }
    for &(fid, k) in &forks {
        let f = m.func(fid);
        let fj = fork_join_map(f)?;
        let users = def_use(f);
        let j = fj[&k];
        for &u in &users[j.idx()] {
            if matches!(f.kind(u), NodeKind::Reduce { join, .. } if *join == j) && !f.node(u).has_attr(Attr::ParallelReduce) {
                return Err(format!("fork {k} in {} has a sequential reduce {u}", f.name));
            }
        }
    }
    for (fid, k) in forks {
        m.func_mut(fid).node_mut(k).attrs.insert(Attr::ParallelFork);
    }
    Ok(PassResult::default())
}

pub fn async_call(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let mut any = false;
    for (fid, sel) in r.resolve(m) {
        let f = m.func_mut(fid);
        for n in sel {
            if f.kind(n).is_call() {
                f.node_mut(n).attrs.insert(Attr::AsyncCall);
                any = true;
            }
        }
    }
    if !any {
        return Err("region selects no call".into());
    }
    Ok(PassResult::default())
}

/// Attach an attribute without checking that it holds.
pub fn apply_unsafe(m: &mut IrModule, r: &RegionValue, a: Attr) -> Result<PassResult, String> {
    let mut count = 0;
    for (fid, sel) in r.resolve(m) {
        let f = m.func_mut(fid);
        for n in sel {
            let fits = match a {
                Attr::NoResetConstant => matches!(f.kind(n), NodeKind::Constant(Constant::Zero(_))),
                _ => f.kind(n).is_reduce(),
            };
            if fits {
                f.node_mut(n).attrs.insert(a);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(format!("region has no node that can carry {}", a.name()));
    }
    Ok(PassResult { unsafe_note: Some(format!("{} applied to {count} node(s) without checking", a.name())), ..Default::default() })
}

#[cfg(test)]
mod tests {
    use crate::ir::{Attr, IrModule};
    use crate::testutil::{ints, run, scheduled};

    fn reduces_with(m: &IrModule, a: Attr) -> (usize, usize) {
        let f = &m.functions[0];
        let rs: Vec<_> = f.live_ids().filter(|&n| f.kind(n).is_reduce()).collect();
        (rs.iter().filter(|&&r| f.node(r).has_attr(a)).count(), rs.len())
    }

    #[test]
    fn matmul_reduces_are_parallel() {
        let (_, m) = scheduled(include_str!("../../fixtures/matmul.jn"), "forkify(*); infer-attributes(*);").unwrap();
        let (par, total) = reduces_with(&m, Attr::ParallelReduce);
        // Outer two loops write disjoint rows/cells; the k loop accumulates.
        assert_eq!(total, 3);
        assert_eq!(par, 2);
        assert_eq!(reduces_with(&m, Attr::MonoidReduce).0, 1);
    }

    #[test]
    fn dot_accumulator_is_a_monoid() {
        let (_, m) = scheduled(include_str!("../../fixtures/dot.jn"), "forkify(*); infer-attributes(*);").unwrap();
        assert_eq!(reduces_with(&m, Attr::MonoidReduce), (1, 1));
        assert_eq!(reduces_with(&m, Attr::ParallelReduce).0, 0);
    }

    #[test]
    fn shifted_writes_are_parallel_only_with_one_shift() {
        let one = "#[entry] fn f<n>(a: f32[n + 1]) -> f32[n + 1] { let b: f32[n + 1]; for i in 0..n { b[i + 1] = a[i]; } return b; }";
        let (_, m) = scheduled(one, "forkify(*); infer-attributes(*);").unwrap();
        assert_eq!(reduces_with(&m, Attr::ParallelReduce), (1, 1));
        let two = "#[entry] fn f<n>(a: f32[n + 1]) -> f32[n + 1] { let b: f32[n + 1]; for i in 0..n { b[i + 1] = b[i] + a[i]; } return b; }";
        let (_, m) = scheduled(two, "forkify(*); infer-attributes(*);").unwrap();
        assert_eq!(reduces_with(&m, Attr::ParallelReduce).0, 0);
    }

    #[test]
    fn subtraction_is_not_a_monoid() {
        let src = "#[entry] fn f<n>(a: i64[n]) -> i64 { let s: i64 = 0; for i in 0..n { s = a[i] - s; } return s; }";
        let (_, m) = scheduled(src, "forkify(*); infer-attributes(*);").unwrap();
        assert_eq!(reduces_with(&m, Attr::MonoidReduce).0, 0);
        assert_eq!(reduces_with(&m, Attr::ParallelReduce).0, 0);
    }

    #[test]
    fn parallelize_marks_forks_without_sequential_reduces() {
        let src = "#[entry] fn sq<n>(a: i64[n]) -> i64[n] { let b: i64[n]; @l for i in 0..n { b[i] = a[i] * a[i]; } return b; }";
        let (_, m) = scheduled(src, "forkify(*); infer-attributes(*); parallelize(sq@l);").unwrap();
        let f = &m.functions[0];
        assert!(f.forks().iter().all(|&k| f.node(k).has_attr(Attr::ParallelFork)));
        let sum = "#[entry] fn sum<n>(a: i64[n]) -> i64 { let s: i64 = 0; @l for i in 0..n { s += a[i]; } return s; }";
        let err = scheduled(sum, "forkify(*); infer-attributes(*); parallelize(sum@l);").unwrap_err();
        assert!(err.contains("sequential reduce"), "{err}");
    }

    #[test]
    fn async_call_marks_calls_only() {
        let src = "fn sq(x: i64) -> i64 { return x * x; }
#[entry] fn f(a: i64, b: i64) -> i64 { @c let x = sq(a); let y = sq(b); return x + y; }";
        let (m0, m) = scheduled(src, "async-call(f);").unwrap();
        let f = &m.functions[m.find("f").unwrap().idx()];
        let marked = f.live_ids().filter(|&n| f.node(n).has_attr(Attr::AsyncCall)).count();
        assert_eq!(marked, 2);
        let v = |x| crate::runtime::Value::i64(x);
        assert_eq!(run(&m0, "f", &[], vec![v(3), v(4)]), run(&m, "f", &[], vec![v(3), v(4)]));
        assert!(scheduled(src, "async-call(sq);").is_err());
        let _ = ints;
    }
}
