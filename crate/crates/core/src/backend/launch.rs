use serde::{Deserialize, Serialize};

use crate::ir::analysis::{self, ForkNest};
use crate::ir::{Attr, DynConst, IrFunction, NodeId, NodeKind};

/// Width of a cooperative tile, mirroring a warp.
pub const TILE_WIDTH: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    BlockLevel,
    ThreadLevel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Parallel,
    CooperativeTile,
    Sequential,
}

/// Launch size, kept symbolic: a product of fork factors, or the maximum
/// of several such sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Size {
    Dc(DynConst),
    Max(Vec<Size>),
    Mul(Box<Size>, DynConst),
}

impl Size {
    pub fn one() -> Size {
        Size::Dc(DynConst::lit(1))
    }

    pub fn eval(&self, dcs: &[u64]) -> Result<u64, String> {
        Ok(match self {
            Size::Dc(d) => d.eval(dcs).map_err(|e| e.to_string())?,
            Size::Max(xs) => {
                let mut best = 0;
                for x in xs {
                    best = best.max(x.eval(dcs)?);
                }
                best
            }
            Size::Mul(a, d) => a.eval(dcs)? * d.eval(dcs).map_err(|e| e.to_string())?,
        })
    }

    /// Fold literal parts; a maximum collapses when all its parts are literal.
    fn simplify(self) -> Size {
        match self {
            Size::Max(xs) => {
                let mut out: Vec<Size> = vec![];
                for x in xs.into_iter().map(Size::simplify) {
                    match x {
                        Size::Max(inner) => out.extend(inner),
                        x => out.push(x),
                    }
                }
                out.dedup();
                if out.iter().all(|x| matches!(x, Size::Dc(d) if d.as_literal().is_some())) {
                    let v = out.iter().map(|x| x.eval(&[]).unwrap_or(0)).max().unwrap_or(1);
                    return Size::Dc(DynConst::lit(v));
                }
                out.retain(|x| x != &Size::one());
                match out.len() {
                    0 => Size::one(),
                    1 => out.pop().unwrap(),
                    _ => {
                        out.push(Size::one());
                        Size::Max(out)
                    }
                }
            }
            Size::Mul(a, d) => match a.simplify() {
                Size::Dc(x) => Size::Dc(DynConst::mul(x, d).normalize()),
                a => Size::Mul(Box::new(a), d),
            },
            s => s,
        }
    }

    pub fn display(&self, names: &[String]) -> String {
        match self {
            Size::Dc(d) => d.display_with(names).to_string(),
            Size::Max(xs) => format!("max({})", xs.iter().map(|x| x.display(names)).collect::<Vec<_>>().join(", ")),
            Size::Mul(a, d) => format!("{} * {}", a.display(names), d.display_with(names)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForkLaunch {
    /// `None` for the synthetic root added over several top-level forks.
    pub fork: Option<NodeId>,
    pub factor: DynConst,
    pub size: Size,
    pub role: Role,
    pub strategy: Strategy,
    pub tile_width: Option<u64>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchPlan {
    pub forks: Vec<ForkLaunch>,
    pub root: Option<usize>,
}

impl LaunchPlan {
    pub fn size(&self) -> Size {
        self.root.map_or(Size::one(), |r| self.forks[r].size.clone())
    }

    /// Split the root launch into (blocks, threads per block).
    pub fn grid(&self, dcs: &[u64]) -> Result<(u64, u64), String> {
        let total = self.size().eval(dcs)?;
        match self.root.map(|r| &self.forks[r]) {
            Some(r) if r.role == Role::BlockLevel => {
                let blocks = r.factor.eval(dcs).map_err(|e| e.to_string())?.max(1);
                Ok((blocks, total / blocks))
            }
            _ => Ok((1, total)),
        }
    }
}

/// Kinds of reduction a fork-join carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReduceMix {
    pub sequential: bool,
    pub associative: bool,
}

pub fn reduce_mix(f: &IrFunction, fork: NodeId) -> ReduceMix {
    let Ok(fj) = analysis::fork_join_map(f) else { return ReduceMix::default() };
    let Some(&j) = fj.get(&fork) else { return ReduceMix::default() };
    let mut mix = ReduceMix::default();
    for r in f.live_ids() {
        if matches!(f.kind(r), NodeKind::Reduce { join, .. } if *join == j) {
            let n = f.node(r);
            if n.has_attr(Attr::ParallelReduce) {
                continue;
            }
            if n.has_attr(Attr::MonoidReduce) {
                mix.associative = true;
            } else {
                mix.sequential = true;
            }
        }
    }
    mix
}

/// Assign launch sizes bottom-up over a fork nest.
///
/// 1. A fork with a sequential reduction is sequential; its size is the
///    largest child size, or 1 without children.
/// 2. A leaf fork with an associative reduction takes the larger of running
///    sequentially (1) and its factor, as a cooperative tile.
/// 3. Otherwise the size is the largest child size times the fork factor.
pub fn plan_nest(nest: &ForkNest, mix: &dyn Fn(Option<NodeId>) -> ReduceMix) -> LaunchPlan {
    let mut forks: Vec<ForkLaunch> = nest
        .nodes
        .iter()
        .map(|n| ForkLaunch {
            fork: n.fork,
            factor: DynConst::product(n.factors.iter()).normalize(),
            size: Size::one(),
            role: Role::ThreadLevel,
            strategy: Strategy::Parallel,
            tile_width: None,
            children: n.children.clone(),
        })
        .collect();
    fn visit(i: usize, forks: &mut Vec<ForkLaunch>, mix: &dyn Fn(Option<NodeId>) -> ReduceMix) {
        for c in forks[i].children.clone() {
            visit(c, forks, mix);
        }
        let kids: Vec<Size> = forks[i].children.iter().map(|&c| forks[c].size.clone()).collect();
        let max_kids = if kids.is_empty() { Size::one() } else { Size::Max(kids).simplify() };
        let m = mix(forks[i].fork);
        let leaf = forks[i].children.is_empty();
        let fl = &mut forks[i];
        if m.sequential || (m.associative && !leaf) {
            fl.size = max_kids;
            fl.role = Role::Sequential;
            fl.strategy = Strategy::Sequential;
        } else if m.associative {
            fl.size = Size::Max(vec![Size::one(), Size::Dc(fl.factor.clone())]).simplify();
            fl.strategy = Strategy::CooperativeTile;
            fl.tile_width = Some(TILE_WIDTH);
        } else {
            fl.size = Size::Mul(Box::new(max_kids), fl.factor.clone()).simplify();
        }
    }
    if let Some(r) = nest.root {
        visit(r, &mut forks, mix);
        let root_parallel = {
            let m = mix(forks[r].fork);
            !m.sequential && !m.associative
        };
        if root_parallel && forks[r].fork.is_some() {
            forks[r].role = Role::BlockLevel;
        }
    }
    LaunchPlan { forks, root: nest.root }
}

pub fn launch_plan(f: &IrFunction) -> Result<LaunchPlan, String> {
    let nest = analysis::fork_join_nest(f)?;
    Ok(plan_nest(&nest, &|fk| fk.map_or_else(ReduceMix::default, |fk| reduce_mix(f, fk))))
}
