//! Lowering of scheduled functions into an interpreted basic-block form,
//! plus GPU launch planning and textual dumps.

pub mod launch;
pub mod lower;
pub mod text;

use serde::{Deserialize, Serialize};

use crate::gcm::{AllocationPlan, MemSpace};
use crate::ir::{BinaryOp, Constraint, Device, DynConst, NodeId, ScalarKind, Type, UnaryOp};

pub use launch::{launch_plan, LaunchPlan, Role, Strategy};
pub use lower::lower_module;

pub type Reg = u32;
/// Index into a function's table of dynamic-constant expressions, evaluated
/// once per activation.
pub type Slot = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Step {
    Offset(Slot),
    Index { idx: Reg, extent: Slot, stride: Slot },
    /// Enter summation variant `tag`; `set` writes the tag instead of
    /// checking it.
    Variant { tag: u64, set: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Inst {
    Const { dst: Reg, bits: u64 },
    Dc { dst: Reg, slot: Slot },
    Bin { op: BinaryOp, kind: ScalarKind, dst: Reg, a: Reg, b: Reg },
    Un { op: UnaryOp, kind: ScalarKind, dst: Reg, a: Reg },
    /// Address of a frame allocation; `per_iteration` selects the instance
    /// of the running parallel iteration.
    Alloc { dst: Reg, mem: MemSpace, offset: Slot, size: Slot, per_iteration: bool },
    Zero { addr: Reg, bytes: Slot },
    Addr { dst: Reg, base: Reg, steps: Vec<Step> },
    Load { dst: Reg, addr: Reg, kind: ScalarKind },
    Store { addr: Reg, src: Reg, kind: ScalarKind },
    MemCopy { dst: Reg, src: Reg, bytes: Slot },
    Move { dst: Reg, src: Reg },
    Call(Box<CallInst>),
    Await { reg: Reg },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallInst {
    pub node: NodeId,
    pub callee: usize,
    pub dyn_args: Vec<Slot>,
    pub args: Vec<Reg>,
    pub dst: Reg,
    /// Callee frame base per memory space: (offset, instance size).
    pub frames: [Option<(Slot, Slot)>; 2],
    /// Cross-memory argument staging: (arg index, offset, bytes).
    pub arg_copies: Vec<(usize, Slot, Slot)>,
    /// Cross-memory result staging: (offset, bytes).
    pub result_copy: Option<(Slot, Slot)>,
    pub per_iteration: bool,
    pub is_async: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Jump { to: usize, moves: Vec<(Reg, Reg)> },
    Branch { cond: Reg, on_false: usize, on_true: usize },
    Return { value: Reg },
    /// End of one fork iteration (the control successor is a join).
    EndIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub node: NodeId,
    pub insts: Vec<Inst>,
    pub term: Term,
    /// Set when this block is a fork: entering it runs the whole fork-join.
    pub fork: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForkInfo {
    pub node: NodeId,
    pub block: usize,
    pub join_block: usize,
    pub factors: Vec<Slot>,
    pub tids: Vec<(Reg, usize)>,
    /// (reduce, init, reduct)
    pub reduces: Vec<(Reg, Reg, Reg)>,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecFunction {
    pub name: String,
    pub device: Device,
    pub mem: MemSpace,
    pub dc_params: Vec<String>,
    pub param_types: Vec<Type>,
    pub return_type: Type,
    pub constraints: Vec<Constraint>,
    pub num_regs: usize,
    pub dc_table: Vec<DynConst>,
    /// Register receiving each parameter.
    pub params: Vec<Option<Reg>>,
    pub blocks: Vec<Block>,
    pub forks: Vec<ForkInfo>,
    pub frame: [DynConst; 2],
    pub entry: bool,
    pub launch: Option<LaunchPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Executable {
    pub functions: Vec<ExecFunction>,
    pub plan: AllocationPlan,
}

impl Executable {
    pub fn find(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn entry(&self) -> Option<usize> {
        self.functions.iter().position(|f| f.entry)
    }

    pub fn total_spills(&self) -> usize {
        self.plan.total_spills()
    }

    pub fn planned_copies(&self) -> usize {
        self.plan.total_copies()
    }
}

#[cfg(test)]
mod tests {
    use crate::pipeline::build_unscheduled;

    fn blocks(src: &str) -> usize {
        build_unscheduled("t.jn", src).unwrap().exe.functions[0].blocks.len()
    }

    #[test]
    fn sequential_sum_lowers_to_four_blocks() {
        assert_eq!(blocks("#[entry] fn sum<n>(a: i64[n]) -> i64 { let s: i64 = 0; for i in 0..n { s += a[i]; } return s; }"), 4);
    }

    #[test]
    fn straight_line_function_is_one_block() {
        assert_eq!(blocks("#[entry] fn k() -> i64 { return 7; }"), 1);
    }

    #[test]
    fn executable_round_trips_through_json() {
        let b = crate::pipeline::build(
            "matmul.jn",
            include_str!("../../fixtures/matmul.jn"),
            "matmul.sch",
            include_str!("../../fixtures/matmul.sch"),
            None,
        )
        .unwrap();
        let text = serde_json::to_string(&b.exe).unwrap();
        let back: super::Executable = serde_json::from_str(&text).unwrap();
        assert_eq!(back, b.exe);
    }
}
