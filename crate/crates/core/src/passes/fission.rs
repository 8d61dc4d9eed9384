use std::collections::{BTreeMap, BTreeSet};

use crate::ir::analysis::{def_use, fork_body, fork_join_map, fork_parents, inside_data};
use crate::ir::{Attr, Constant, Index, IrModule, NodeId, NodeKind, Type};
use crate::sched::{RegionValue, Selection};

use super::reshape::subtree;
use super::{selected_forks, PassResult};

/// Split the outermost selected fork into a producer fork, which stores each
/// per-iteration value needed by the reductions into a thread-indexed array,
/// and a consumer fork that performs the reductions from those arrays.
pub fn fork_fission(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let forks = selected_forks(m, r);
    let funcs: BTreeSet<_> = forks.iter().map(|(f, _)| *f).collect();
    if funcs.len() != 1 {
        return Err(if funcs.is_empty() { "region selects no fork".into() } else { "region spans several functions".into() });
    }
    let fid = *funcs.iter().next().unwrap();
    let f = m.func_mut(fid);
    let sel: BTreeSet<NodeId> = forks.iter().map(|(_, k)| *k).collect();
    let parents = fork_parents(f)?;
    let tops: Vec<NodeId> = sel.iter().copied().filter(|k| !parents[k].is_some_and(|p| sel.contains(&p))).collect();
    if tops.len() != 1 {
        return Err("region must contain a single outermost fork".into());
    }
    let fork = tops[0];
    let fj = fork_join_map(f)?;
    let join = fj[&fork];
    let users = def_use(f);
    let inside = inside_data(f, &fork_body(f, fork, join), &users);
    let reduces: Vec<NodeId> =
        users[join.idx()].iter().copied().filter(|&u| matches!(f.kind(u), NodeKind::Reduce { join: j, .. } if *j == join)).collect();

    // The second half: everything inside computed from the fork's reduces.
    let mut part2 = BTreeSet::new();
    let mut work = reduces.clone();
    while let Some(n) = work.pop() {
        for &u in &users[n.idx()] {
            if reduces.contains(&u) || !inside.contains(&u) {
                continue;
            }
            if f.kind(u).pinned_control().is_some() || f.kind(u).is_control() {
                return Err(format!("node {u} depends on a reduction but is pinned to the loop body"));
            }
            if part2.insert(u) {
                work.push(u);
            }
        }
    }
    for &n in &part2 {
        for &u in &users[n.idx()] {
            if !part2.contains(&u) && !reduces.contains(&u) && inside.contains(&u) {
                return Err(format!("value {n} of the reduction is used by the first half ({u})"));
            }
        }
    }
    let (_, factors) = f.kind(fork).try_fork().unwrap();
    let factors = factors.to_vec();
    let mut crossing: BTreeSet<NodeId> = BTreeSet::new();
    let mut tid_uses: BTreeSet<NodeId> = BTreeSet::new();
    for &n in &part2 {
        for i in f.kind(n).inputs() {
            if part2.contains(&i) || reduces.contains(&i) || !inside.contains(&i) {
                continue;
            }
            match f.kind(i) {
                NodeKind::ThreadId { fork: k, .. } if *k == fork => {
                    tid_uses.insert(i);
                }
                _ => {
                    if !matches!(f.ty(i), Type::Scalar(_)) {
                        return Err(format!("value {i} crossing the split is not a per-iteration scalar"));
                    }
                    crossing.insert(i);
                }
            }
        }
    }

    let labels = f.node(fork).labels.clone();
    let fork2 = f.add_labeled(NodeKind::Fork { control: join, factors: factors.clone() }, Type::Control, &labels);
    let join2 = f.add_labeled(NodeKind::Join { control: fork2 }, Type::Control, &f.node(join).labels.clone());
    for id in f.live_ids().collect::<Vec<_>>() {
        if id == fork2 || id == join2 || reduces.contains(&id) {
            continue;
        }
        if (f.kind(id).is_control() || f.kind(id).is_call()) && f.kind(id).inputs().contains(&join) {
            f.node_mut(id).kind.map_inputs(|x| if x == join { join2 } else { x });
        }
    }
    for &red in &reduces {
        if let NodeKind::Reduce { join: j, .. } = &mut f.node_mut(red).kind {
            *j = join2;
        }
    }
    let u64t = Type::Scalar(crate::ir::ScalarKind::U64);
    let tids1: Vec<NodeId> =
        (0..factors.len()).map(|d| f.add_labeled(NodeKind::ThreadId { fork, dim: d }, u64t.clone(), &labels)).collect();
    let tids2: Vec<NodeId> =
        (0..factors.len()).map(|d| f.add_labeled(NodeKind::ThreadId { fork: fork2, dim: d }, u64t.clone(), &labels)).collect();
    let part2_list: Vec<NodeId> = part2.iter().copied().collect();
    for t in tid_uses {
        let (_, d) = f.kind(t).try_thread_id().unwrap();
        f.replace_uses_in(&part2_list, t, tids2[d]);
    }
    for v in crossing {
        let vty = f.ty(v).clone();
        let aty = Type::Array(Box::new(vty.clone()), factors.clone());
        let vl = f.node(v).labels.clone();
        let z = f.add_labeled(NodeKind::Constant(Constant::Zero(aty.clone())), aty.clone(), &vl);
        f.node_mut(z).attrs.insert(Attr::NoResetConstant);
        let red = f.add_labeled(NodeKind::Reduce { join, init: z, reduct: z }, aty.clone(), &vl);
        let w = f.add_labeled(
            NodeKind::Write { collection: red, indices: vec![Index::Position(tids1.clone())], value: v },
            aty.clone(),
            &vl,
        );
        if let NodeKind::Reduce { reduct, .. } = &mut f.node_mut(red).kind {
            *reduct = w;
        }
        f.node_mut(red).attrs.insert(Attr::ParallelReduce);
        let rd = f.add_labeled(NodeKind::Read { collection: red, indices: vec![Index::Position(tids2.clone())] }, vty, &vl);
        f.replace_uses_in(&part2_list, v, rd);
    }
    let mut res = PassResult::default();
    res.map(fid, join, &[join, join2]);
    res.map(fid, fork, &[fork, fork2]);
    res.results.push(RegionValue(BTreeMap::from([(fid, Selection::Nodes(subtree(f, fork, join)))])));
    res.results.push(RegionValue(BTreeMap::from([(fid, Selection::Nodes(subtree(f, fork2, join2)))])));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use crate::ir::NodeKind;
    use crate::runtime::Value;
    use crate::testutil::{all_factors, ints, run, scheduled};

    const SUM: &str = "#[entry] fn sum<n>(a: i64[n]) -> i64 { let s: i64 = 0; @l for i in 0..n { s += a[i]; } return s; }";
    const TREE: &str = "forkify(*); infer-attributes(*);
macro reduction_tree![N](F) {
  fork-chunk![N](F);
  let (outer, inner) = fork-reshape[[0], [1]](F);
  monoid-reassociate(inner);
  let (top, bottom) = fork-fission(outer);
  bottom
}
";

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn reduction_tree_splits_into_producer_and_consumer() {
        let (_, m) = scheduled(SUM, &format!("{TREE}reduction_tree![4](sum@l);")).unwrap();
        let facs = all_factors(&m, "sum");
        assert_eq!(facs.len(), 3, "{facs:?}");
        assert!(facs.contains(&s(&["n/4"])));
        assert_eq!(facs.iter().filter(|f| **f == s(&["4"])).count(), 2);
        let f = &m.functions[0];
        // The producer hands its partial sums over in a length-4 array.
        let partials = f.live_ids().filter(|&n| f.ty(n).is_collection() && matches!(f.kind(n), NodeKind::Reduce { .. })).count();
        assert!(partials >= 1);
        let xs: Vec<i64> = (1..=32).collect();
        assert_eq!(run(&m, "sum", &[32], vec![ints(&xs)]), Value::i64(528));
    }

    #[test]
    fn applying_the_tree_twice_gives_three_layers() {
        let (_, m) = scheduled(SUM, &format!("{TREE}let b = reduction_tree![4](sum@l);\nreduction_tree![2](b);")).unwrap();
        let xs: Vec<i64> = (1..=64).collect();
        assert_eq!(run(&m, "sum", &[64], vec![ints(&xs)]), Value::i64(64 * 65 / 2));
        let f = &m.functions[0];
        let tops = crate::ir::analysis::fork_join_nest(f).unwrap();
        let root = tops.root.unwrap();
        // Synthetic root over the producer and the two consumer layers.
        assert!(tops.nodes[root].fork.is_none());
        assert_eq!(tops.nodes[root].children.len(), 3);
    }

    #[test]
    fn fork_without_reductions_on_its_results_fissions_to_an_empty_bottom() {
        let src = "#[entry] fn sq<n>(a: i64[n]) -> i64[n] { let b: i64[n]; @l for i in 0..n { b[i] = a[i] * a[i]; } return b; }";
        let (m0, m) = scheduled(src, "forkify(*); infer-attributes(*); fork-fission(sq@l);").unwrap();
        let a = ints(&[3, -1, 4, 1, -5]);
        assert_eq!(run(&m0, "sq", &[5], vec![a.clone()]), run(&m, "sq", &[5], vec![a]));
    }
}
