pub mod attributes;
pub mod cleanup;
pub mod fission;
pub mod forkify;
pub mod fuse;
pub mod inline;
pub mod outline;
pub mod reassociate;
pub mod reshape;
pub mod tile;

use std::collections::BTreeSet;

use crate::ir::{Attr, FuncId, IrModule, NodeId};
use crate::sched::ast::StaticArg;
use crate::sched::{RegionValue, Remap};

/// Outcome of one pass invocation.
#[derive(Debug, Default)]
pub struct PassResult {
    pub remap: Remap,
    pub results: Vec<RegionValue>,
    pub diagnostics: Vec<String>,
    /// Set for statements that bypass legality checks.
    pub unsafe_note: Option<String>,
}

impl PassResult {
    pub fn map(&mut self, f: FuncId, old: NodeId, new: &[NodeId]) {
        self.remap.insert((f, old), new.iter().map(|&n| (f, n)).collect());
    }

    pub fn removed(&mut self, f: FuncId, nodes: impl IntoIterator<Item = NodeId>) {
        for n in nodes {
            self.remap.entry((f, n)).or_default();
        }
    }
}

pub const PASS_NAMES: &[&str] = &[
    "forkify",
    "fork-chunk",
    "fork-tile",
    "fork-reshape",
    "fork-fission",
    "fork-fuse",
    "monoid-reassociate",
    "inline",
    "outline",
    "parallelize",
    "async-call",
    "infer-attributes",
    "dce",
    "constant-fold",
    "parallel-reduce",
    "monoid-reduce",
    "no-reset-constant",
];

fn static_int(name: &str, statics: &[StaticArg]) -> Result<i64, String> {
    match statics {
        [StaticArg::Int(v)] => Ok(*v),
        _ => Err(format!("`{name}` expects one integer static argument")),
    }
}

fn no_statics(name: &str, statics: &[StaticArg]) -> Result<(), String> {
    if statics.is_empty() {
        Ok(())
    } else {
        Err(format!("`{name}` takes no static arguments"))
    }
}

/// Dispatch a pass by its registry name.
pub fn run_pass(m: &mut IrModule, name: &str, statics: &[StaticArg], args: &[RegionValue]) -> Result<PassResult, String> {
    let want = if name == "fork-fuse" { 2 } else { 1 };
    if args.len() != want {
        return Err(format!("`{name}` expects {want} region argument(s), got {}", args.len()));
    }
    let r = &args[0];
    match name {
        "forkify" => {
            no_statics(name, statics)?;
            forkify::forkify(m, r)
        }
        "fork-chunk" => tile::chunk_or_tile(m, r, static_int(name, statics)?, true),
        "fork-tile" => tile::chunk_or_tile(m, r, static_int(name, statics)?, false),
        "fork-reshape" => {
            let mut groups = vec![];
            for g in statics {
                match g {
                    StaticArg::List(items) => {
                        let mut v = vec![];
                        for i in items {
                            match i.as_int() {
                                Some(x) if x >= 0 => v.push(x as usize),
                                _ => return Err("`fork-reshape` groups must be lists of dimension ordinals".into()),
                            }
                        }
                        groups.push(v);
                    }
                    _ => return Err("`fork-reshape` expects a list of dimension groups".into()),
                }
            }
            reshape::fork_reshape(m, r, &groups)
        }
        "fork-fission" => {
            no_statics(name, statics)?;
            fission::fork_fission(m, r)
        }
        "fork-fuse" => {
            no_statics(name, statics)?;
            fuse::fork_fuse(m, r, &args[1])
        }
        "monoid-reassociate" => {
            no_statics(name, statics)?;
            reassociate::monoid_reassociate(m, r)
        }
        "inline" => {
            no_statics(name, statics)?;
            inline::inline(m, r)
        }
        "outline" => {
            no_statics(name, statics)?;
            outline::outline(m, r)
        }
        "parallelize" => {
            no_statics(name, statics)?;
            attributes::parallelize(m, r)
        }
        "async-call" => {
            no_statics(name, statics)?;
            attributes::async_call(m, r)
        }
        "infer-attributes" => {
            no_statics(name, statics)?;
            attributes::infer_attributes(m, r)
        }
        "dce" => {
            no_statics(name, statics)?;
            Ok(dce(m, r))
        }
        "constant-fold" => {
            no_statics(name, statics)?;
            Ok(constant_fold(m, r))
        }
        "parallel-reduce" => attributes::apply_unsafe(m, r, Attr::ParallelReduce),
        "monoid-reduce" => attributes::apply_unsafe(m, r, Attr::MonoidReduce),
        "no-reset-constant" => attributes::apply_unsafe(m, r, Attr::NoResetConstant),
        _ => Err(format!("unknown pass `{name}`")),
    }
}

pub fn dce(m: &mut IrModule, r: &RegionValue) -> PassResult {
    let mut res = PassResult::default();
    for (fid, sel) in r.resolve(m) {
        let f = m.func_mut(fid);
        let mut probe = f.clone();
        let dead = cleanup::dce_function(&mut probe);
        let mut kill: BTreeSet<NodeId> = dead.intersection(&sel).copied().collect();
        if kill.len() == dead.len() {
            *f = probe;
        } else {
            // Keep region nodes still referenced by surviving dead nodes.
            loop {
                let keep: Vec<NodeId> = kill
                    .iter()
                    .copied()
                    .filter(|&n| dead.iter().any(|&u| !kill.contains(&u) && f.kind(u).inputs().contains(&n)))
                    .collect();
                if keep.is_empty() {
                    break;
                }
                for n in keep {
                    kill.remove(&n);
                }
            }
            for &n in &kill {
                f.kill(n);
            }
        }
        res.removed(fid, kill);
    }
    res
}

pub fn constant_fold(m: &mut IrModule, r: &RegionValue) -> PassResult {
    let mut res = PassResult::default();
    for (fid, sel) in r.resolve(m) {
        let f = m.func_mut(fid);
        for (old, new) in cleanup::constant_fold_function(f, Some(&sel)) {
            res.map(fid, old, &[new]);
        }
    }
    res
}

/// Fork nodes selected by a region, by function.
pub fn selected_forks(m: &IrModule, r: &RegionValue) -> Vec<(FuncId, NodeId)> {
    let mut out = vec![];
    for (fid, sel) in r.resolve(m) {
        let f = m.func(fid);
        out.extend(sel.into_iter().filter(|&n| f.kind(n).is_fork()).map(|n| (fid, n)));
    }
    out
}
