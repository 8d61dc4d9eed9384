use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{FuncId, IrModule, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    /// Every live node of the function, resolved at use.
    All,
    Nodes(BTreeSet<NodeId>),
}

/// A set of nodes, possibly spanning functions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegionValue(pub BTreeMap<FuncId, Selection>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Difference,
    Intersection,
}

impl RegionValue {
    pub fn empty() -> Self {
        RegionValue::default()
    }

    pub fn star(m: &IrModule) -> Self {
        RegionValue(m.func_ids().map(|f| (f, Selection::All)).collect())
    }

    pub fn function(f: FuncId) -> Self {
        RegionValue(BTreeMap::from([(f, Selection::All)]))
    }

    pub fn nodes(f: FuncId, nodes: BTreeSet<NodeId>) -> Self {
        RegionValue(BTreeMap::from([(f, Selection::Nodes(nodes))]))
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(|s| matches!(s, Selection::Nodes(n) if n.is_empty()))
    }

    /// Concrete live nodes per function.
    pub fn resolve(&self, m: &IrModule) -> BTreeMap<FuncId, BTreeSet<NodeId>> {
        let mut out = BTreeMap::new();
        for (&f, s) in &self.0 {
            if f.idx() >= m.functions.len() {
                continue;
            }
            let func = m.func(f);
            let set: BTreeSet<NodeId> = match s {
                Selection::All => func.live_ids().collect(),
                Selection::Nodes(ns) => ns.iter().copied().filter(|n| n.idx() < func.nodes.len() && func.is_live(*n)).collect(),
            };
            out.insert(f, set);
        }
        out
    }

    pub fn functions(&self) -> Vec<FuncId> {
        self.0.keys().copied().collect()
    }

    pub fn contains(&self, f: FuncId, n: NodeId) -> bool {
        match self.0.get(&f) {
            Some(Selection::All) => true,
            Some(Selection::Nodes(s)) => s.contains(&n),
            None => false,
        }
    }

    /// Exact set algebra. Operands over disjoint non-empty function sets are
    /// rejected.
    pub fn combine(&self, op: SetOp, other: &RegionValue, m: &IrModule) -> Result<RegionValue, String> {
        let a_funcs: BTreeSet<FuncId> = self.0.keys().copied().collect();
        let b_funcs: BTreeSet<FuncId> = other.0.keys().copied().collect();
        if !self.is_empty() && !other.is_empty() && a_funcs.is_disjoint(&b_funcs) {
            return Err("set operation on regions of different functions".into());
        }
        let (a, b) = (self.resolve(m), other.resolve(m));
        let mut out = BTreeMap::new();
        let funcs: BTreeSet<FuncId> = a_funcs.union(&b_funcs).copied().collect();
        let empty = BTreeSet::new();
        for f in funcs {
            let (x, y) = (a.get(&f).unwrap_or(&empty), b.get(&f).unwrap_or(&empty));
            let both_all = matches!(self.0.get(&f), Some(Selection::All)) && matches!(other.0.get(&f), Some(Selection::All));
            let sel = match op {
                SetOp::Union if both_all => Selection::All,
                SetOp::Union => Selection::Nodes(x.union(y).copied().collect()),
                SetOp::Difference => Selection::Nodes(x.difference(y).copied().collect()),
                SetOp::Intersection => Selection::Nodes(x.intersection(y).copied().collect()),
            };
            if op == SetOp::Intersection && !(a.contains_key(&f) && b.contains_key(&f)) {
                continue;
            }
            if op == SetOp::Difference && !a.contains_key(&f) {
                continue;
            }
            out.insert(f, sel);
        }
        Ok(RegionValue(out))
    }

    /// Apply a pass's node remapping.
    pub fn remap(&mut self, map: &Remap) {
        let mut add: Vec<(FuncId, NodeId)> = vec![];
        for (&f, sel) in self.0.iter_mut() {
            if let Selection::Nodes(ns) = sel {
                let old: Vec<NodeId> = ns.iter().copied().collect();
                for n in old {
                    if let Some(targets) = map.get(&(f, n)) {
                        ns.remove(&n);
                        add.extend(targets.iter().copied());
                    }
                }
            }
        }
        for (f, n) in add {
            match self.0.entry(f).or_insert_with(|| Selection::Nodes(BTreeSet::new())) {
                Selection::All => {}
                Selection::Nodes(ns) => {
                    ns.insert(n);
                }
            }
        }
    }
}

/// Old node → replacement nodes (possibly in another function).
pub type Remap = BTreeMap<(FuncId, NodeId), Vec<(FuncId, NodeId)>>;
