//! Global code motion: basic-block scheduling, mutation legalization, and
//! collection placement.

pub mod alias;
pub mod legalize;
pub mod place;
pub mod schedule;

use std::collections::BTreeMap;

use crate::ir::{FuncId, IrModule};

pub use alias::{MemSpace, Summaries};
pub use legalize::legalize_mutation;
pub use place::{place_collections, AllocKind, Allocation, AllocationPlan, FunctionPlan, PlannedCopy};
pub use schedule::{schedule_function, FunctionSchedule};

pub struct GcmOutput {
    pub schedules: BTreeMap<FuncId, FunctionSchedule>,
    pub summaries: Summaries,
    pub plan: AllocationPlan,
}

impl GcmOutput {
    pub fn spills(&self) -> usize {
        self.plan.total_spills()
    }
}

/// Legalize, schedule, and place every function, callees first.
pub fn run_gcm(m: &mut IrModule) -> Result<GcmOutput, String> {
    let order = crate::ir::analysis::call_graph_postorder(m)?;
    let mut summaries = Summaries::new();
    let mut spills = BTreeMap::new();
    for &fid in &order {
        let n = legalize_mutation(m, fid, &summaries)?;
        spills.insert(fid, n);
        let s = alias::summarize(m, fid, &summaries);
        summaries.insert(fid, s);
    }
    let mut schedules = BTreeMap::new();
    for &fid in &order {
        schedules.insert(fid, schedule_function(m.func(fid))?);
    }
    let plan = place_collections(m, &schedules, &summaries, &spills)?;
    Ok(GcmOutput { schedules, summaries, plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BinaryOp, Constant, NodeId, NodeKind};
    use crate::testutil::scheduled;

    fn gcm(src: &str, sch: &str) -> (IrModule, GcmOutput) {
        let (_, mut m) = scheduled(src, sch).unwrap();
        let out = run_gcm(&mut m).unwrap();
        (m, out)
    }

    fn find(m: &IrModule, fid: FuncId, p: impl Fn(&NodeKind) -> bool) -> NodeId {
        let f = m.func(fid);
        f.live_ids().find(|&n| p(f.kind(n))).expect("node not found")
    }

    fn depth(out: &GcmOutput, fid: FuncId, n: NodeId) -> usize {
        let s = &out.schedules[&fid];
        s.loop_depth[&s.block_of[n.idx()].unwrap()]
    }

    #[test]
    fn loop_invariant_arithmetic_is_hoisted() {
        let src = "#[entry] fn f<n>(x: i64, y: i64) -> i64 { let s: i64 = 0; for i in 0..n { s += x * y; } return s; }";
        let (m, out) = gcm(src, "");
        let fid = FuncId(0);
        let mul = find(&m, fid, |k| matches!(k, NodeKind::Binary { op: BinaryOp::Mul, .. }));
        assert_eq!(depth(&out, fid, mul), 0);
        let add = find(&m, fid, |k| matches!(k, NodeKind::Binary { op: BinaryOp::Add, left, right } if *left != *right && true));
        assert!(depth(&out, fid, add) >= 1);
    }

    #[test]
    fn scratch_array_stays_in_its_loop() {
        let src = "#[entry] fn f<n>() -> i64 {
  let s: i64 = 0;
  for i in 0..n { let t: i64[4]; t[1] = i as i64; s += t[0] + t[1]; }
  return s;
}";
        let (m, out) = gcm(src, "");
        let fid = FuncId(0);
        let z = find(&m, fid, |k| matches!(k, NodeKind::Constant(Constant::Zero(_))));
        assert!(depth(&out, fid, z) >= 1);
        let v = crate::pipeline::run_oracle(&m, None, &[4], &[]).unwrap();
        assert_eq!(v, crate::runtime::Value::i64(6));
    }

    #[test]
    fn reads_are_ordered_before_overwrites() {
        let src = "#[entry] fn f(a: i64[4]) -> i64 { let x = a[0]; a[0] = 5; return x + a[0]; }";
        let (m, out) = gcm(src, "");
        let fid = FuncId(0);
        let f = m.func(fid);
        let w = find(&m, fid, |k| matches!(k, NodeKind::Write { .. }));
        let NodeKind::Write { collection, .. } = f.kind(w) else { unreachable!() };
        let r = f
            .live_ids()
            .find(|&n| matches!(f.kind(n), NodeKind::Read { collection: c, .. } if c == collection))
            .unwrap();
        let s = &out.schedules[&fid];
        let (br, bw) = (s.block_of[r.idx()].unwrap(), s.block_of[w.idx()].unwrap());
        if br == bw {
            let ord = &s.order[&br];
            let pos = |n| ord.iter().position(|&x| x == n).unwrap();
            assert!(pos(r) < pos(w));
        } else {
            assert!(s.dom.dominates(br, bw));
        }
        assert_eq!(out.spills(), 0);
    }

    #[test]
    fn second_writer_of_a_shared_array_spills_once() {
        let (_, out) = gcm(include_str!("../../fixtures/double_write.jn"), "");
        assert_eq!(out.spills(), 1);
        let single = "#[entry] fn f<n>(a: i64[n]) -> i64 { let b = a; b[0] = 1; return b[0]; }";
        assert_eq!(gcm(single, "").1.spills(), 0);
    }

    #[test]
    fn cpu_only_matmul_lives_on_the_host() {
        let src = include_str!("../../fixtures/matmul.jn");
        let (_, out) = gcm(src, include_str!("../../fixtures/matmul.sch"));
        for p in &out.plan.functions {
            assert_eq!(p.mem, MemSpace::Host, "{}", p.name);
            assert!(p.copies.is_empty());
            assert!(p.allocations.iter().all(|a| a.mem == MemSpace::Host));
        }
        assert_eq!(out.spills(), 0);
    }

    #[test]
    fn gpu_producer_feeding_host_needs_one_copy() {
        let src = "fn gen<n>() -> f32[n] { let r: f32[n]; for i in 0..n { r[i] = 1.5; } return r; }
#[entry] fn f<n>() -> f32 { let r = gen::<n>(); return r[0]; }";
        let (_, out) = gcm(src, "forkify(*); gpu(gen); host(f);");
        let p = out.plan.functions.iter().find(|p| p.name == "f").unwrap();
        assert_eq!(p.copies.len(), 1);
        let c = &p.copies[0];
        assert_eq!((c.arg, c.from, c.to), (None, MemSpace::GpuSim, MemSpace::Host));
        assert_eq!(c.bytes.eval(&[10]).unwrap(), 40);
    }

    #[test]
    fn frame_is_the_aligned_sum_of_its_allocations() {
        let src = "fn g<n>(x: i64) -> i64 { let t: i64[n]; t[0] = 1; return t[0] + x; }
#[entry] fn f<n>() -> i64 {
  let a: i64[n]; let b: f32[n];
  a[0] = 2; b[1] = 3.0;
  let y = g::<n>(a[0]);
  return y + a[0] + b[1] as i64;
}";
        let (_, out) = gcm(src, "host(*);");
        let p = out.plan.functions.iter().find(|p| p.name == "f").unwrap();
        // n = 5: a 40 bytes, b 20 bytes, g's frame 40 bytes, each rounded to 8.
        let frame = p.frame[MemSpace::Host.index()].eval(&[5]).unwrap();
        let live = p.allocations.iter().filter(|a| a.mem == MemSpace::Host).count();
        assert!(live >= 2);
        let hand: u64 = p
            .allocations
            .iter()
            .map(|a| a.size.eval(&[5]).unwrap() * a.instances.eval(&[5]).unwrap())
            .map(|s| s.div_ceil(8) * 8)
            .sum();
        assert_eq!(p.allocations.len(), 3);
        assert_eq!(hand, 40 + 24 + 40);
        assert_eq!(frame, hand);
        let mut spans: Vec<(u64, u64)> = p
            .allocations
            .iter()
            .map(|a| {
                let o = a.offset.eval(&[5]).unwrap();
                (o, o + a.size.eval(&[5]).unwrap() * a.instances.eval(&[5]).unwrap())
            })
            .collect();
        spans.sort();
        assert!(spans.iter().all(|s| s.1 <= frame));
    }
}
