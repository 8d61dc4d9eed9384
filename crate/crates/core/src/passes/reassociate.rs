use crate::ir::analysis::{def_use, fork_body, fork_join_map, inside_data, join_fork_map};
use crate::ir::{Attr, Constant, IrModule, NodeId, NodeKind, Type};
use crate::runtime::ops;
use crate::sched::RegionValue;

use super::attributes::monoid_form;
use super::PassResult;

/// Make each chunk's partial reduction start from the operator's identity
/// and combine partials in the enclosing reduce.
pub fn monoid_reassociate(m: &mut IrModule, r: &RegionValue) -> Result<PassResult, String> {
    let mut res = PassResult::default();
    let mut found = false;
    for (fid, sel) in r.resolve(m) {
        let f = m.func_mut(fid);
        let fj = fork_join_map(f)?;
        let jf = join_fork_map(&fj);
        let targets: Vec<NodeId> =
            sel.iter().copied().filter(|&n| f.kind(n).is_reduce() && f.node(n).has_attr(Attr::MonoidReduce)).collect();
        for red in targets {
            found = true;
            let users = def_use(f);
            let (join, init, _) = f.kind(red).try_reduce().unwrap();
            let fork = jf[&join];
            let inside = inside_data(f, &fork_body(f, fork, join), &users);
            let form = monoid_form(f, red, &users, &inside)
                .ok_or_else(|| format!("reduce {red} does not apply a recognized monoid operator"))?;
            if form.element.is_some() {
                return Err(format!("reduce {red} is an element-wise reduction; only scalar reductions can be reassociated"));
            }
            let Some((outer_join, _, outer_reduct)) = f.kind(init).try_reduce() else {
                res.diagnostics.push(format!("reduce {red} is not nested in an enclosing reduction; nothing to do"));
                continue;
            };
            if outer_reduct != red {
                res.diagnostics.push(format!("reduce {red} is not nested in an enclosing reduction; nothing to do"));
                continue;
            }
            let outer_fork = jf[&outer_join];
            let (_, factors) = f.kind(outer_fork).try_fork().unwrap();
            if factors.iter().all(|d| d.is_one()) {
                res.diagnostics.push(format!("reduce {red} has a single chunk; nothing to do"));
                continue;
            }
            let ty = f.ty(red).clone();
            let Type::Scalar(kind) = ty else { unreachable!() };
            let id = ops::identity(form.op, kind).ok_or("operator has no identity")?;
            let labels = f.node(red).labels.clone();
            let c = f.add_labeled(NodeKind::Constant(Constant::Scalar(kind, id)), ty.clone(), &labels);
            let outer_labels = f.node(init).labels.clone();
            let combine = f.add_labeled(NodeKind::Binary { op: form.op, left: init, right: red }, ty, &outer_labels);
            if let NodeKind::Reduce { init: i, .. } = &mut f.node_mut(red).kind {
                *i = c;
            }
            if let NodeKind::Reduce { reduct, .. } = &mut f.node_mut(init).kind {
                *reduct = combine;
            }
            res.map(fid, red, &[red, c]);
            res.map(fid, init, &[init, combine]);
        }
    }
    if !found {
        return Err("region has no reduce marked MonoidReduce".into());
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use crate::ir::{Constant, NodeKind};
    use crate::runtime::Value;
    use crate::testutil::{ints, run, scheduled};

    const CHUNK: &str = "forkify(*); infer-attributes(*);
fork-chunk![8](sum@l);
let (outer, inner) = fork-reshape[[0], [1]](sum@l);
";

    fn sum_src(ty: &str, zero: &str) -> String {
        format!("#[entry] fn sum<n>(a: {ty}[n]) -> {ty} {{ let s: {ty} = {zero}; @l for i in 0..n {{ s += a[i]; }} return s; }}")
    }

    #[test]
    fn chunked_integer_sum_is_exact() {
        let (_, m) = scheduled(&sum_src("i64", "0"), &format!("{CHUNK}monoid-reassociate(inner);")).unwrap();
        let xs: Vec<i64> = (1..=1000).collect();
        assert_eq!(run(&m, "sum", &[1000], vec![ints(&xs)]), Value::i64(500500));
    }

    #[test]
    fn inner_partial_sums_start_from_zero() {
        let (m0, m) = scheduled(&sum_src("f32", "0.0"), &format!("{CHUNK}monoid-reassociate(inner);")).unwrap();
        let f = &m.functions[0];
        let inner = f.forks().into_iter().max_by_key(|&k| crate::ir::analysis::fork_parents(f).unwrap()[&k].is_some()).unwrap();
        let join = crate::ir::analysis::fork_join_map(f).unwrap()[&inner];
        let init = f
            .live_ids()
            .find_map(|r| match f.kind(r) {
                NodeKind::Reduce { join: j, init, .. } if *j == join => Some(*init),
                _ => None,
            })
            .unwrap();
        match f.kind(init) {
            NodeKind::Constant(Constant::Scalar(_, bits)) => assert_eq!(*bits, 0),
            NodeKind::Constant(Constant::Zero(_)) => {}
            k => panic!("inner init is {}", k.name()),
        }
        let xs: Vec<f32> = (0..64).map(|i| (i as f32) * 0.37 - 5.0).collect();
        let a = Value::f32_array(vec![64], &xs);
        let want = run(&m0, "sum", &[64], vec![a.clone()]);
        assert!(run(&m, "sum", &[64], vec![a]).approx_eq(&want, 1e-4));
    }

    #[test]
    fn single_chunk_is_bit_exact() {
        let sch = "forkify(*); infer-attributes(*); fork-chunk![1](sum@l);
let (outer, inner) = fork-reshape[[0], [1]](sum@l);
monoid-reassociate(inner);";
        let (m0, m) = scheduled(&sum_src("f32", "0.0"), sch).unwrap();
        let xs: Vec<f32> = (0..10).map(|i| 1.0 / (i as f32 + 1.0)).collect();
        let a = Value::f32_array(vec![10], &xs);
        assert_eq!(run(&m0, "sum", &[10], vec![a.clone()]), run(&m, "sum", &[10], vec![a]));
    }
}
