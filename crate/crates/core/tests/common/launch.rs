//! Hand-written launch-size recursion, kept separate from the planner.

use hsc::backend::launch::{plan_nest, ReduceMix, Role, Strategy};
use hsc::ir::analysis::{ForkNest, NestNode};
use hsc::ir::{DynConst, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Red {
    None,
    Parallel,
    Monoid,
    Sequential,
    /// A monoid reduce next to a sequential one.
    Mixed,
}

#[derive(Debug, Clone)]
pub enum Factor {
    Lit(u64),
    Dc(usize),
}

#[derive(Debug, Clone)]
pub struct Tree {
    pub factor: Factor,
    pub red: Red,
    pub kids: Vec<Tree>,
}

pub fn t(factor: u64, red: Red, kids: Vec<Tree>) -> Tree {
    Tree { factor: Factor::Lit(factor), red, kids }
}

pub fn td(dc: usize, red: Red, kids: Vec<Tree>) -> Tree {
    Tree { factor: Factor::Dc(dc), red, kids }
}

fn factor(f: &Factor, dcs: &[u64]) -> u64 {
    match f {
        Factor::Lit(v) => *v,
        Factor::Dc(i) => dcs[*i],
    }
}

/// Size of one subtree straight from the three rules.
pub fn brute_size(t: &Tree, dcs: &[u64]) -> u64 {
    let kids: Vec<u64> = t.kids.iter().map(|k| brute_size(k, dcs)).collect();
    let widest = kids.iter().copied().max().unwrap_or(1);
    match t.red {
        // Rule 1.
        Red::Sequential | Red::Mixed => widest,
        // Rule 2, only where iterations are adjacent threads (a leaf);
        // otherwise the fork stays sequential.
        Red::Monoid if t.kids.is_empty() => {
            let sequential = widest;
            let cooperative = factor(&t.factor, dcs);
            sequential.max(cooperative)
        }
        Red::Monoid => widest,
        // Rule 3.
        Red::None | Red::Parallel => widest * factor(&t.factor, dcs),
    }
}

/// Launch size of a forest; several top-level trees get a unit root.
pub fn brute_forest(ts: &[Tree], dcs: &[u64]) -> u64 {
    match ts {
        [] => 1,
        [one] => brute_size(one, dcs),
        many => many.iter().map(|x| brute_size(x, dcs)).max().unwrap(),
    }
}

pub struct Planned {
    pub size: u64,
    pub root_role: Option<Role>,
    pub strategies: Vec<Strategy>,
}

/// Build a nest from trees and run the planner on it.
pub fn plan(ts: &[Tree], dcs: &[u64]) -> Planned {
    let mut nest = ForkNest::default();
    let mut mixes: Vec<(NodeId, Red)> = vec![];
    fn add(t: &Tree, nest: &mut ForkNest, mixes: &mut Vec<(NodeId, Red)>) -> usize {
        let id = NodeId(1000 + nest.nodes.len() as u32);
        let i = nest.nodes.len();
        let f = match t.factor {
            Factor::Lit(v) => DynConst::lit(v),
            Factor::Dc(d) => DynConst::param(d),
        };
        nest.nodes.push(NestNode { fork: Some(id), factors: vec![f], children: vec![] });
        mixes.push((id, t.red));
        for k in &t.kids {
            let c = add(k, nest, mixes);
            nest.nodes[i].children.push(c);
        }
        i
    }
    let tops: Vec<usize> = ts.iter().map(|x| add(x, &mut nest, &mut mixes)).collect();
    nest.root = match tops[..] {
        [] => None,
        [r] => Some(r),
        _ => {
            nest.nodes.push(NestNode { fork: None, factors: vec![], children: tops });
            Some(nest.nodes.len() - 1)
        }
    };
    let mix = |fk: Option<NodeId>| match fk.and_then(|k| mixes.iter().find(|m| m.0 == k)).map(|m| m.1) {
        Some(Red::Sequential) => ReduceMix { sequential: true, associative: false },
        Some(Red::Monoid) => ReduceMix { sequential: false, associative: true },
        Some(Red::Mixed) => ReduceMix { sequential: true, associative: true },
        _ => ReduceMix::default(),
    };
    let p = plan_nest(&nest, &mix);
    Planned {
        size: p.size().eval(dcs).unwrap(),
        root_role: p.root.map(|r| p.forks[r].role),
        strategies: p.forks.iter().map(|f| f.strategy).collect(),
    }
}
