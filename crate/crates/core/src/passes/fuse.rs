use std::collections::BTreeSet;

use crate::ir::analysis::{def_use, fork_body, fork_join_map, fork_parents, inside_data};
use crate::ir::{FuncId, Index, IrFunction, IrModule, NodeId, NodeKind};
use crate::sched::{RegionValue, Selection};

use super::reshape::subtree;
use super::{cleanup, selected_forks, PassResult};

fn outermost(m: &IrModule, r: &RegionValue) -> Result<(FuncId, NodeId), String> {
    let forks = selected_forks(m, r);
    let funcs: BTreeSet<FuncId> = forks.iter().map(|(f, _)| *f).collect();
    if funcs.len() != 1 {
        return Err(if funcs.is_empty() { "region selects no fork".into() } else { "region spans several functions".into() });
    }
    let fid = *funcs.iter().next().unwrap();
    let f = m.func(fid);
    let sel: BTreeSet<NodeId> = forks.iter().map(|(_, k)| *k).collect();
    let parents = fork_parents(f)?;
    let tops: Vec<NodeId> = sel.iter().copied().filter(|k| !parents[k].is_some_and(|p| sel.contains(&p))).collect();
    match tops[..] {
        [k] => Ok((fid, k)),
        _ => Err("region must contain a single outermost fork".into()),
    }
}

/// Thread-id dims of a single position index, if every entry is a thread id
/// of `fork`.
fn tid_index(f: &IrFunction, fork: NodeId, indices: &[Index]) -> Option<Vec<usize>> {
    let [Index::Position(ps)] = indices else { return None };
    ps.iter()
        .map(|&p| match f.kind(p) {
            NodeKind::ThreadId { fork: k, dim } if *k == fork => Some(*dim),
            _ => None,
        })
        .collect()
}

pub fn fork_fuse(m: &mut IrModule, first: &RegionValue, second: &RegionValue) -> Result<PassResult, String> {
    let (fid, f1) = outermost(m, first)?;
    let (fid2, f2) = outermost(m, second)?;
    if fid != fid2 {
        return Err("fork-joins are in different functions".into());
    }
    let f = m.func_mut(fid);
    let fj = fork_join_map(f)?;
    let (j1, j2) = (fj[&f1], fj[&f2]);
    let NodeKind::Fork { control: c2, factors: fac2 } = f.kind(f2).clone() else { unreachable!() };
    if c2 != j1 {
        return Err("fork-joins are not adjacent".into());
    }
    let (_, fac1) = f.kind(f1).try_fork().unwrap();
    if fac1.len() != fac2.len() || fac1.iter().zip(&fac2).any(|(a, b)| a.normalize() != b.normalize()) {
        return Err("fork factors differ".into());
    }
    let users = def_use(f);
    let inside2 = inside_data(f, &fork_body(f, f2, j2), &users);
    let reduces1: Vec<NodeId> =
        users[j1.idx()].iter().copied().filter(|&u| matches!(f.kind(u), NodeKind::Reduce { join, .. } if *join == j1)).collect();
    let mut forwards = vec![];
    for &r1 in &reduces1 {
        for &u in &users[r1.idx()] {
            if u == r1 {
                continue;
            }
            if matches!(f.kind(u), NodeKind::Reduce { join, .. } if *join == j2) {
                return Err(format!("cross-iteration dependence: reduce {u} starts from the result of {r1}"));
            }
            if !inside2.contains(&u) {
                continue;
            }
            let NodeKind::Read { collection, indices } = f.kind(u) else {
                return Err(format!("cross-iteration dependence: {u} uses the whole result of {r1}"));
            };
            let (_, _, reduct) = f.kind(r1).try_reduce().unwrap();
            let NodeKind::Write { collection: wc, indices: wi, value } = f.kind(reduct) else {
                return Err(format!("cross-iteration dependence: {r1} is not produced element-wise"));
            };
            let same = *collection == r1
                && *wc == r1
                && tid_index(f, f1, wi).is_some()
                && tid_index(f, f1, wi) == tid_index(f, f2, indices);
            if !same {
                return Err(format!("cross-iteration dependence: read {u} of {r1} is not at the written index"));
            }
            forwards.push((u, *value));
        }
    }
    let mut res = PassResult::default();
    for (rd, v) in forwards {
        f.replace_all_uses(rd, v);
        f.kill(rd);
        res.map(fid, rd, &[v]);
    }
    for &u in &users[f2.idx()] {
        if let NodeKind::ThreadId { dim, .. } = *f.kind(u) {
            f.node_mut(u).kind = NodeKind::ThreadId { fork: f1, dim };
        }
    }
    let NodeKind::Join { control: last1 } = *f.kind(j1) else { unreachable!() };
    let labels: BTreeSet<String> = f.node(f2).labels.clone();
    f.node_mut(f1).labels.extend(labels);
    f.kill(f2);
    f.replace_all_uses(f2, last1);
    f.replace_all_uses(j1, j2);
    f.kill(j1);
    res.map(fid, f2, &[f1]);
    res.map(fid, j1, &[j2]);
    let removed = cleanup::dce_function(f);
    res.removed(fid, removed);
    res.results.push(RegionValue(std::collections::BTreeMap::from([(fid, Selection::Nodes(subtree(f, f1, j2)))])));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use crate::runtime::Value;
    use crate::testutil::{all_factors, run, scheduled};

    const MAPMAP: &str = include_str!("../../fixtures/mapmap.jn");

    #[test]
    fn map_map_fuses_into_one_fork() {
        let (m0, m) = scheduled(MAPMAP, "forkify(*); fork-fuse(mapmap@first, mapmap@second);").unwrap();
        assert_eq!(all_factors(&m, "mapmap").len(), 1);
        let a = Value::i32_array(vec![6], &[1, -2, 3, 0, 9, -7]);
        assert_eq!(run(&m0, "mapmap", &[6], vec![a.clone()]), run(&m, "mapmap", &[6], vec![a]));
    }

    #[test]
    fn consumer_reading_a_neighbour_is_rejected() {
        let src = "#[entry] fn f<n>(a: i32[n + 1]) -> i32[n] {
  let b : i32[n + 1];
  @first for i in 0..n + 1 { b[i] = a[i] * 2; }
  let c : i32[n];
  @second for i in 0..n { c[i] = b[i + 1]; }
  return c;
}";
        let err = scheduled(src, "forkify(*); fork-fuse(f@first, f@second);").unwrap_err();
        assert!(err.contains("line 1"), "{err}");
        let src2 = src.replace("0..n + 1", "0..n").replace("i32[n + 1]", "i32[n]").replace("b[i + 1]", "b[i]");
        assert!(scheduled(&src2, "forkify(*); fork-fuse(f@first, f@second);").is_ok());
    }

    #[test]
    fn two_pass_stencil_fuses() {
        let src = "#[entry] fn f<n>(a: f32[n, n]) -> f32[n, n] {
  let g : f32[n, n];
  @first for i in 0..n { for j in 0..n { g[i, j] = a[i, j] * a[i, j] + 1.0; } }
  let o : f32[n, n];
  @second for i in 0..n { for j in 0..n { o[i, j] = a[i, j] / g[i, j]; } }
  return o;
}";
        let sch = "forkify(*); infer-attributes(*);
let x = fork-reshape[[0, 1]](f@first);
let y = fork-reshape[[0, 1]](f@second);
fork-fuse(x, y);";
        let (m0, m) = scheduled(src, sch).unwrap();
        assert_eq!(all_factors(&m, "f"), vec![vec!["n".to_string(), "n".into()]]);
        let a = crate::testutil::mat(8, 8, 5);
        assert_eq!(run(&m0, "f", &[8], vec![a.clone()]), run(&m, "f", &[8], vec![a]));
    }
}
