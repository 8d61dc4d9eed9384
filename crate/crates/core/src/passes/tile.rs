use std::collections::BTreeMap;

use crate::ir::analysis::def_use;
use crate::ir::{BinaryOp, Constant, DynConst, IrModule, NodeId, NodeKind, ScalarKind};
use crate::sched::RegionValue;

use super::{selected_forks, PassResult};

/// Split every dimension of the selected forks by `n`. Chunking puts the new
/// size-`n` dimension first (index = b*(D/n) + i), tiling puts it last
/// (index = t*n + i).
pub fn chunk_or_tile(m: &mut IrModule, r: &RegionValue, n: i64, chunk: bool) -> Result<PassResult, String> {
    let pass = if chunk { "fork-chunk" } else { "fork-tile" };
    if n <= 0 {
        return Err(format!("factor must be positive, got {n}"));
    }
    let forks = selected_forks(m, r);
    if forks.is_empty() {
        return Err("region selects no fork".into());
    }
    let n = n as u64;
    let nd = DynConst::lit(n);
    let mut res = PassResult::default();
    for (fid, fork) in forks {
        let f = m.func_mut(fid);
        let NodeKind::Fork { control, factors } = f.kind(fork).clone() else { unreachable!() };
        let mut new_factors = vec![];
        for d in &factors {
            let q = DynConst::div(d.clone(), nd.clone());
            f.add_constraint(nd.clone(), d.clone(), pass);
            if chunk {
                new_factors.push(nd.clone());
                new_factors.push(q);
            } else {
                new_factors.push(q);
                new_factors.push(nd.clone());
            }
        }
        f.node_mut(fork).kind = NodeKind::Fork { control, factors: new_factors.clone() };
        let users = def_use(f);
        let tids: Vec<(NodeId, usize)> = users[fork.idx()]
            .iter()
            .filter_map(|&u| f.kind(u).try_thread_id().map(|(_, d)| (u, d)))
            .collect();
        let mut by_dim: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for (t, d) in tids {
            by_dim.entry(d).or_default().push(t);
        }
        for (d, ts) in by_dim {
            for t in ts {
                let ty = f.ty(t).clone();
                let kind = ty.as_scalar().unwrap_or(ScalarKind::U64);
                let labels = f.node(t).labels.clone();
                let outer = f.add_labeled(NodeKind::ThreadId { fork, dim: 2 * d }, ty.clone(), &labels);
                let inner = f.add_labeled(NodeKind::ThreadId { fork, dim: 2 * d + 1 }, ty.clone(), &labels);
                let stride = if chunk {
                    f.add_labeled(NodeKind::DynamicConstant(new_factors[2 * d + 1].clone()), ty.clone(), &labels)
                } else {
                    f.add_labeled(NodeKind::Constant(Constant::Scalar(kind, n)), ty.clone(), &labels)
                };
                let mul = f.add_labeled(NodeKind::Binary { op: BinaryOp::Mul, left: outer, right: stride }, ty.clone(), &labels);
                f.node_mut(t).kind = NodeKind::Binary { op: BinaryOp::Add, left: mul, right: inner };
                res.map(fid, t, &[t, outer, inner, stride, mul]);
            }
        }
    }
    res.results.push(r.clone());
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compile_source;
    use crate::ir::verify::verify;
    use crate::ir::FuncId;
    use crate::passes::forkify::forkify;
    use crate::runtime::{oracle_execute, Value};

    const SUM: &str = "#[entry] fn sum<n>(a: i64[n]) -> i64 { let s: i64 = 0; for i in 0..n { s += a[i]; } return s; }";

    fn forked(src: &str) -> IrModule {
        let mut m = compile_source("t", src).unwrap();
        let r = RegionValue::star(&m);
        forkify(&mut m, &r).unwrap();
        m
    }

    #[test]
    fn chunked_sum_is_unchanged() {
        for chunk in [true, false] {
            let mut m = forked(SUM);
            let r = RegionValue::star(&m);
            chunk_or_tile(&mut m, &r, 2, chunk).unwrap();
            assert!(verify(&m).is_empty());
            let f = &m.functions[0];
            let fork = f.forks()[0];
            let NodeKind::Fork { factors, .. } = f.kind(fork) else { unreachable!() };
            let names = &f.dc_params;
            let shown: Vec<String> = factors.iter().map(|d| d.display_with(names).to_string()).collect();
            assert_eq!(shown, if chunk { vec!["2", "n/2"] } else { vec!["n/2", "2"] });
            let a = Value::i64_array(vec![8], &[1, 2, 3, 4, 5, 6, 7, 8]);
            assert_eq!(oracle_execute(&m, FuncId(0), &[8], vec![a]).unwrap(), Value::i64(36));
        }
    }

    #[test]
    fn constraint_is_recorded_and_checked() {
        let mut m = forked(SUM);
        let r = RegionValue::star(&m);
        chunk_or_tile(&mut m, &r, 4, true).unwrap();
        assert_eq!(m.functions[0].constraints.len(), 1);
        let a = Value::i64_array(vec![6], &[1; 6]);
        let e = oracle_execute(&m, FuncId(0), &[6], vec![a]).unwrap_err();
        assert!(e.contains("4 | n"), "{e}");
    }

    #[test]
    fn chunk_by_one_and_tile_by_extent_keep_semantics() {
        let src = "#[entry] fn sq<n>(a: i64[n]) -> i64[n] { let b: i64[n]; for i in 0..n { b[i] = a[i] * a[i] - 3; } return b; }";
        for (k, chunk) in [(1, true), (6, false)] {
            let base = forked(src);
            let mut m = base.clone();
            let r = RegionValue::star(&m);
            chunk_or_tile(&mut m, &r, k, chunk).unwrap();
            let a = Value::i64_array(vec![6], &[3, -1, 4, 1, -5, 9]);
            assert_eq!(
                oracle_execute(&base, FuncId(0), &[6], vec![a.clone()]).unwrap(),
                oracle_execute(&m, FuncId(0), &[6], vec![a]).unwrap()
            );
        }
    }

    #[test]
    fn rejects_bad_factor_and_empty_region() {
        let mut m = forked(SUM);
        let r = RegionValue::star(&m);
        assert!(chunk_or_tile(&mut m, &r, 0, true).is_err());
        assert!(chunk_or_tile(&mut m, &RegionValue::empty(), 2, true).is_err());
    }
}
