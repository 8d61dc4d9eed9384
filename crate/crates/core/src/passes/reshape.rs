use std::collections::{BTreeMap, BTreeSet};

use crate::ir::analysis::{def_use, fork_body, fork_join_map, fork_parents, inside_data};
use crate::ir::{Attr, FuncId, IrFunction, IrModule, NodeId, NodeKind, Type};
use crate::sched::{RegionValue, Selection};

use super::{selected_forks, PassResult};

/// The selected forks as a perfectly nested chain, outermost first.
pub(crate) fn fork_chain(f: &IrFunction, forks: &BTreeSet<NodeId>) -> Result<Vec<NodeId>, String> {
    let parents = fork_parents(f)?;
    let tops: Vec<NodeId> = forks.iter().copied().filter(|k| !parents[k].is_some_and(|p| forks.contains(&p))).collect();
    if tops.len() != 1 {
        return Err("selected forks do not form a single nest".into());
    }
    let mut chain = vec![tops[0]];
    loop {
        let cur = *chain.last().unwrap();
        let kids: Vec<NodeId> = forks.iter().copied().filter(|k| parents[k] == Some(cur)).collect();
        match kids.len() {
            0 => break,
            1 => chain.push(kids[0]),
            _ => return Err("selected forks do not form a single nest".into()),
        }
    }
    if chain.len() != forks.len() {
        return Err("selected forks do not form a single nest".into());
    }
    Ok(chain)
}

/// Reduce chains threading through a perfect nest: `chains[r][c]` is the
/// reduce on the join of `chain[c]`.
pub(crate) fn reduce_chains(
    f: &IrFunction,
    chain: &[NodeId],
    joins: &[NodeId],
    users: &[Vec<NodeId>],
) -> Result<Vec<Vec<NodeId>>, String> {
    for c in 0..chain.len() - 1 {
        if !matches!(f.kind(chain[c + 1]), NodeKind::Fork { control, .. } if *control == chain[c]) {
            return Err("forks are not perfectly nested".into());
        }
        if !matches!(f.kind(joins[c]), NodeKind::Join { control } if *control == joins[c + 1]) {
            return Err("forks are not perfectly nested".into());
        }
    }
    let reduces_on = |j: NodeId| -> Vec<NodeId> {
        users[j.idx()].iter().copied().filter(|&u| matches!(f.kind(u), NodeKind::Reduce { join, .. } if *join == j)).collect()
    };
    let mut chains = vec![];
    let mut claimed = BTreeSet::new();
    for r0 in reduces_on(joins[0]) {
        let mut rc = vec![r0];
        for &jc in joins.iter().take(chain.len()).skip(1) {
            let prev = *rc.last().unwrap();
            let next: Vec<NodeId> = reduces_on(jc)
                .into_iter()
                .filter(|&r| matches!(f.kind(r), NodeKind::Reduce { init, .. } if *init == prev))
                .collect();
            let Some((_, _, reduct)) = f.kind(prev).try_reduce() else { unreachable!() };
            if next.len() != 1 || reduct != next[0] {
                return Err("reductions are not perfectly nested".into());
            }
            rc.push(next[0]);
        }
        claimed.extend(rc.iter().copied());
        chains.push(rc);
    }
    for &j in joins {
        if reduces_on(j).iter().any(|r| !claimed.contains(r)) {
            return Err("reductions are not perfectly nested".into());
        }
    }
    // Intermediate values of a chain may only feed the chain itself.
    let body = fork_body(f, chain[0], joins[0]);
    let inside = inside_data(f, &body, users);
    for rc in &chains {
        for (c, &r) in rc.iter().enumerate() {
            if c + 1 == rc.len() {
                continue;
            }
            for &u in &users[r.idx()] {
                let ok = u == rc[c + 1] || (c > 0 && u == rc[c - 1]) || (c == 0 && !inside.contains(&u) && u != r);
                if !ok {
                    return Err(format!("reduce {r} is used inside the nest"));
                }
            }
        }
    }
    for (c, (&k, &j)) in chain.iter().zip(joins).enumerate() {
        for &u in users[k.idx()].iter().chain(&users[j.idx()]) {
            if f.kind(u).is_call() && !((c + 1 == chain.len() && users[k.idx()].contains(&u)) || (c == 0 && users[j.idx()].contains(&u))) {
                return Err(format!("call {u} is pinned between nested forks"));
            }
        }
    }
    Ok(chains)
}

/// Only reduces marked ParallelReduce (or none at all) on this join.
fn parallel_only(f: &IrFunction, reduces: &[NodeId]) -> bool {
    reduces.iter().all(|&r| f.node(r).has_attr(Attr::ParallelReduce))
}

/// Subtree region rooted at a fork: its body and inside data.
pub(crate) fn subtree(f: &IrFunction, fork: NodeId, join: NodeId) -> BTreeSet<NodeId> {
    let users = def_use(f);
    let body = fork_body(f, fork, join);
    let mut out = inside_data(f, &body, &users);
    out.extend(body);
    out
}

pub fn fork_reshape(m: &mut IrModule, r: &RegionValue, groups: &[Vec<usize>]) -> Result<PassResult, String> {
    let forks = selected_forks(m, r);
    let funcs: BTreeSet<FuncId> = forks.iter().map(|(f, _)| *f).collect();
    if funcs.len() != 1 {
        return Err(if funcs.is_empty() { "region selects no fork".into() } else { "region spans several functions".into() });
    }
    let fid = *funcs.iter().next().unwrap();
    let f = m.func_mut(fid);
    let chain = fork_chain(f, &forks.iter().map(|(_, k)| *k).collect())?;
    let fj = fork_join_map(f)?;
    let joins: Vec<NodeId> = chain.iter().map(|k| fj[k]).collect();
    let users = def_use(f);
    let chains = reduce_chains(f, &chain, &joins, &users)?;
    let inside = inside_data(f, &fork_body(f, chain[0], joins[0]), &users);

    // Flattened dimensions: (chain position, dim within fork, factor).
    let mut dims = vec![];
    for (c, &k) in chain.iter().enumerate() {
        let (_, factors) = f.kind(k).try_fork().unwrap();
        for (d, fac) in factors.iter().enumerate() {
            dims.push((c, d, fac.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for g in groups {
        if g.is_empty() {
            return Err("groups must not be empty".into());
        }
        for &d in g {
            if d >= dims.len() || !seen.insert(d) {
                return Err(format!("groups are not a partition of dimensions 0..{}", dims.len()));
            }
        }
    }
    if seen.len() != dims.len() {
        return Err(format!("groups are not a partition of dimensions 0..{}", dims.len()));
    }
    let order: Vec<usize> = groups.iter().flatten().copied().collect();
    let mut new_pos = vec![0; dims.len()];
    for (p, &d) in order.iter().enumerate() {
        new_pos[d] = p;
    }
    let join_reduces: Vec<Vec<NodeId>> = (0..chain.len()).map(|c| chains.iter().map(|rc| rc[c]).collect()).collect();
    for a in 0..dims.len() {
        for b in a + 1..dims.len() {
            if new_pos[b] < new_pos[a] {
                let (ca, cb) = (dims[a].0, dims[b].0);
                if !parallel_only(f, &join_reduces[ca]) && !parallel_only(f, &join_reduces[cb]) {
                    return Err("cannot reshape across sequential reduction".into());
                }
            }
        }
    }

    let mut res = PassResult::default();
    let labels_of = |f: &IrFunction, cs: &BTreeSet<usize>, nodes: &[NodeId]| -> BTreeSet<String> {
        cs.iter().flat_map(|&c| f.node(nodes[c]).labels.iter().cloned()).collect()
    };
    let group_chains: Vec<BTreeSet<usize>> = groups.iter().map(|g| g.iter().map(|&d| dims[d].0).collect()).collect();
    let outer_control = match f.kind(chain[0]) {
        NodeKind::Fork { control, .. } => *control,
        _ => unreachable!(),
    };
    let mut new_forks = vec![];
    for (gi, g) in groups.iter().enumerate() {
        let control = if gi == 0 { outer_control } else { new_forks[gi - 1] };
        let factors = g.iter().map(|&d| dims[d].2.clone()).collect();
        let labels = labels_of(f, &group_chains[gi], &chain);
        let k = f.add_labeled(NodeKind::Fork { control, factors }, Type::Control, &labels);
        if group_chains[gi].iter().all(|&c| f.node(chain[c]).has_attr(Attr::ParallelFork)) {
            f.node_mut(k).attrs.insert(Attr::ParallelFork);
        }
        new_forks.push(k);
    }
    // Thread ids keep their node ids and move to the new forks.
    let mut dim_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, (c, d, _)) in dims.iter().enumerate() {
        dim_index.insert((*c, *d), i);
    }
    let group_of = |d: usize| -> (usize, usize) {
        for (gi, g) in groups.iter().enumerate() {
            if let Some(p) = g.iter().position(|&x| x == d) {
                return (gi, p);
            }
        }
        unreachable!()
    };
    for (c, &k) in chain.iter().enumerate() {
        for &u in &users[k.idx()] {
            if let Some((_, d)) = f.kind(u).try_thread_id() {
                let (gi, p) = group_of(dim_index[&(c, d)]);
                f.node_mut(u).kind = NodeKind::ThreadId { fork: new_forks[gi], dim: p };
            }
        }
    }
    let last = chain.len() - 1;
    let inner_new = *new_forks.last().unwrap();
    f.replace_all_uses(chain[last], inner_new);
    let inner_join_ctrl = match f.kind(joins[last]) {
        NodeKind::Join { control } => *control,
        _ => unreachable!(),
    };
    let mut new_joins = vec![NodeId(0); groups.len()];
    for gi in (0..groups.len()).rev() {
        let control = if gi + 1 == groups.len() { inner_join_ctrl } else { new_joins[gi + 1] };
        let labels = labels_of(f, &group_chains[gi], &joins);
        new_joins[gi] = f.add_labeled(NodeKind::Join { control }, Type::Control, &labels);
    }
    for rc in &chains {
        let (_, init0, _) = f.kind(rc[0]).try_reduce().unwrap();
        let (_, _, reduct_last) = f.kind(rc[last]).try_reduce().unwrap();
        let ty = f.ty(rc[0]).clone();
        let mut news = vec![];
        for gi in 0..groups.len() {
            let labels = labels_of(f, &group_chains[gi], rc);
            let n = f.add_labeled(NodeKind::Reduce { join: new_joins[gi], init: init0, reduct: reduct_last }, ty.clone(), &labels);
            let par = groups[gi].iter().all(|&d| f.node(rc[dims[d].0]).has_attr(Attr::ParallelReduce));
            let mon_or_par = groups[gi].iter().all(|&d| {
                let n = f.node(rc[dims[d].0]);
                n.has_attr(Attr::MonoidReduce) || n.has_attr(Attr::ParallelReduce)
            });
            let any_mon = groups[gi].iter().any(|&d| f.node(rc[dims[d].0]).has_attr(Attr::MonoidReduce));
            if par {
                f.node_mut(n).attrs.insert(Attr::ParallelReduce);
            }
            if mon_or_par && any_mon {
                f.node_mut(n).attrs.insert(Attr::MonoidReduce);
            }
            news.push(n);
        }
        for gi in 0..groups.len() {
            let init = if gi == 0 { init0 } else { news[gi - 1] };
            let reduct = if gi + 1 == groups.len() { reduct_last } else { news[gi + 1] };
            f.node_mut(news[gi]).kind = NodeKind::Reduce { join: new_joins[gi], init, reduct };
        }
        // The innermost value is the running one inside the body; the
        // outermost is what code after the nest sees.
        for u in f.live_ids().collect::<Vec<_>>() {
            if news.contains(&u) || rc.contains(&u) {
                continue;
            }
            let target = if inside.contains(&u) { *news.last().unwrap() } else { news[0] };
            f.node_mut(u).kind.map_inputs(|x| if x == rc[last] || x == rc[0] { target } else { x });
        }
        for (c, &old) in rc.iter().enumerate() {
            let targets: Vec<NodeId> = (0..groups.len()).filter(|&gi| group_chains[gi].contains(&c)).map(|gi| news[gi]).collect();
            f.kill(old);
            res.map(fid, old, &targets);
        }
    }
    f.replace_all_uses(joins[0], new_joins[0]);
    for (c, (&k, &j)) in chain.iter().zip(&joins).enumerate() {
        let fks: Vec<NodeId> = (0..groups.len()).filter(|&gi| group_chains[gi].contains(&c)).map(|gi| new_forks[gi]).collect();
        let jns: Vec<NodeId> = (0..groups.len()).filter(|&gi| group_chains[gi].contains(&c)).map(|gi| new_joins[gi]).collect();
        f.kill(k);
        f.kill(j);
        res.map(fid, k, &fks);
        res.map(fid, j, &jns);
    }
    for gi in 0..groups.len() {
        res.results.push(RegionValue(BTreeMap::from([(fid, Selection::Nodes(subtree(f, new_forks[gi], new_joins[gi])))])));
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use crate::testutil::{factor_lists, mat, run, scheduled};

    const MATMUL: &str = include_str!("../../fixtures/matmul.jn");
    const CHUNKED: &str = "forkify(*); infer-attributes(*);
let par = matmul@outer \\ matmul@inner;
fork-chunk![4](par);";

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn chunked_outer_loops_regroup_into_block_and_inner_forks() {
        let (_, m) = scheduled(MATMUL, CHUNKED).unwrap();
        assert_eq!(factor_lists(&m, "matmul"), vec![s(&["4", "n/4"]), s(&["4", "l/4"]), s(&["m"])]);
        let sch = format!("{CHUNKED}\nlet (outer, inner, _) = fork-reshape[[0,2],[1],[3]](par);");
        let (m0, m) = scheduled(MATMUL, &sch).unwrap();
        assert_eq!(factor_lists(&m, "matmul"), vec![s(&["4", "4"]), s(&["n/4"]), s(&["l/4"]), s(&["m"])]);
        let args = vec![mat(8, 4, 3), mat(4, 8, 5)];
        assert_eq!(run(&m0, "matmul", &[8, 4, 8], args.clone()), run(&m, "matmul", &[8, 4, 8], args));
    }

    #[test]
    fn identity_grouping_keeps_semantics() {
        let sch = "forkify(*); fork-reshape[[0],[1]](matmul@outer \\ matmul@inner);";
        let (m0, m) = scheduled(MATMUL, sch).unwrap();
        assert_eq!(factor_lists(&m, "matmul"), vec![s(&["n"]), s(&["l"]), s(&["m"])]);
        let args = vec![mat(3, 5, 1), mat(5, 2, 2)];
        assert_eq!(run(&m0, "matmul", &[3, 5, 2], args.clone()), run(&m, "matmul", &[3, 5, 2], args));
    }

    #[test]
    fn bad_groupings_are_rejected() {
        for groups in ["[[0],[0]]", "[[0]]", "[[0],[2]]"] {
            let sch = format!("forkify(*); fork-reshape[{groups}](matmul@outer \\ matmul@inner);");
            assert!(scheduled(MATMUL, &sch).is_err(), "{groups}");
        }
    }
}
