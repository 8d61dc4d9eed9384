use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use rayon::prelude::*;

use crate::backend::{CallInst, ExecFunction, Executable, Inst, Reg, Step, Term};
use crate::gcm::MemSpace;
use crate::ir::{ScalarKind, UnaryOp};

use super::ops;

type R<T> = Result<T, String>;

/// One memory space. Iterations of a parallel fork touch disjoint bytes,
/// which the race check verifies; the buffer is shared without locking.
pub struct Space {
    ptr: *mut u8,
    len: usize,
    _buf: Vec<u64>,
}

unsafe impl Send for Space {}
unsafe impl Sync for Space {}

impl Space {
    pub fn new(bytes: usize) -> Space {
        let mut buf = vec![0u64; bytes.div_ceil(8)];
        Space { ptr: buf.as_mut_ptr() as *mut u8, len: bytes, _buf: buf }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check(&self, addr: u64, n: u64) -> R<usize> {
        match addr.checked_add(n) {
            Some(end) if end as usize <= self.len => Ok(addr as usize),
            _ => Err(format!("memory access [{addr}, +{n}) outside buffer of {} bytes", self.len)),
        }
    }

    pub fn load(&self, addr: u64, n: u64) -> R<u64> {
        let a = self.check(addr, n)?;
        let mut b = [0u8; 8];
        unsafe { std::ptr::copy_nonoverlapping(self.ptr.add(a), b.as_mut_ptr(), n as usize) };
        Ok(u64::from_le_bytes(b))
    }

    pub fn store(&self, addr: u64, n: u64, v: u64) -> R<()> {
        let a = self.check(addr, n)?;
        let b = v.to_le_bytes();
        unsafe { std::ptr::copy_nonoverlapping(b.as_ptr(), self.ptr.add(a), n as usize) };
        Ok(())
    }

    pub fn fill_zero(&self, addr: u64, n: u64) -> R<()> {
        let a = self.check(addr, n)?;
        unsafe { std::ptr::write_bytes(self.ptr.add(a), 0, n as usize) };
        Ok(())
    }

    pub fn read_bytes(&self, addr: u64, n: u64) -> R<Vec<u8>> {
        let a = self.check(addr, n)?;
        let mut v = vec![0u8; n as usize];
        unsafe { std::ptr::copy_nonoverlapping(self.ptr.add(a), v.as_mut_ptr(), n as usize) };
        Ok(v)
    }

    pub fn write_bytes(&self, addr: u64, data: &[u8]) -> R<()> {
        let a = self.check(addr, data.len() as u64)?;
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), self.ptr.add(a), data.len()) };
        Ok(())
    }

    fn copy_within(&self, dst: u64, src: u64, n: u64) -> R<()> {
        let (d, s) = (self.check(dst, n)?, self.check(src, n)?);
        unsafe { std::ptr::copy(self.ptr.add(s), self.ptr.add(d), n as usize) };
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct Counters {
    pub copies: AtomicU64,
    pub copy_bytes: AtomicU64,
    pub tasks: AtomicU64,
    pub calls: AtomicU64,
}

pub struct Machine {
    pub exe: Arc<Executable>,
    pub mem: [Space; 2],
    pub counters: Counters,
    pub workers: usize,
    pub race_check: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Access {
    Read(u64),
    Reads,
    Write(u64),
}

/// Byte-level record of which parallel iteration touched what.
#[derive(Default)]
struct Trace {
    iter: u64,
    bytes: HashMap<(usize, u64), Access>,
    race: Option<String>,
}

impl Trace {
    fn record(&mut self, sp: usize, addr: u64, n: u64, write: bool) {
        if self.race.is_some() {
            return;
        }
        let it = self.iter;
        for a in addr..addr + n {
            let e = self.bytes.entry((sp, a));
            let next = match (e, write) {
                (std::collections::hash_map::Entry::Vacant(v), w) => {
                    v.insert(if w { Access::Write(it) } else { Access::Read(it) });
                    continue;
                }
                (std::collections::hash_map::Entry::Occupied(o), w) => {
                    let cur = *o.get();
                    let next = match (cur, w) {
                        (Access::Read(i), false) if i == it => cur,
                        (Access::Read(_), false) => Access::Reads,
                        (Access::Read(i), true) if i == it => Access::Write(it),
                        (Access::Reads, false) => Access::Reads,
                        (Access::Write(i), _) if i == it => cur,
                        _ => {
                            self.race = Some(format!(
                                "data race on {} byte {a}: iteration {it} conflicts with another iteration",
                                if sp == 0 { "host" } else { "gpusim" }
                            ));
                            return;
                        }
                    };
                    (o, next)
                }
            };
            let (mut o, v) = next;
            o.insert(v);
        }
    }
}

type Job = Box<dyn FnOnce() -> R<u64> + Send>;

/// An asynchronous call: whoever takes the job first runs it.
struct AsyncSlot {
    job: Mutex<Option<Job>>,
    result: Mutex<Option<R<u64>>>,
    ready: Condvar,
}

impl AsyncSlot {
    fn run(&self) {
        let job = self.job.lock().unwrap().take();
        if let Some(job) = job {
            let r = job();
            *self.result.lock().unwrap() = Some(r);
            self.ready.notify_all();
        }
    }

    fn wait(&self) -> R<u64> {
        self.run();
        let mut g = self.result.lock().unwrap();
        while g.is_none() {
            g = self.ready.wait(g).unwrap();
        }
        g.clone().unwrap()
    }
}

enum Flow {
    Return(u64),
    EndIter,
}

struct Act<'a> {
    m: &'a Arc<Machine>,
    ef: &'a ExecFunction,
    dc: Vec<u64>,
    base: [u64; 2],
    regs: Vec<u64>,
    par_slot: u64,
    pending: BTreeMap<Reg, Arc<AsyncSlot>>,
    trace: Option<Rc<RefCell<Trace>>>,
}

pub fn check_constraints(ef: &ExecFunction, dcs: &[u64]) -> R<()> {
    for c in &ef.constraints {
        let (a, b) = (c.divisor.eval(dcs).map_err(|e| e.to_string())?, c.dividend.eval(dcs).map_err(|e| e.to_string())?);
        if a == 0 || b % a != 0 {
            return Err(format!(
                "constraint {} | {} (from {}) violated: {a} does not divide {b}",
                c.divisor.display_with(&ef.dc_params),
                c.dividend.display_with(&ef.dc_params),
                c.origin
            ));
        }
    }
    Ok(())
}

fn eval_table(ef: &ExecFunction, dcs: &[u64]) -> R<Vec<u64>> {
    check_constraints(ef, dcs)?;
    ef.dc_table.iter().map(|d| d.eval(dcs).map_err(|e| e.to_string())).collect()
}

impl Machine {
    pub fn new(exe: Arc<Executable>, sizes: [usize; 2], workers: usize, race_check: bool) -> Machine {
        Machine {
            exe,
            mem: [Space::new(sizes[0]), Space::new(sizes[1])],
            counters: Counters::default(),
            workers: workers.max(1),
            race_check,
        }
    }

    /// Run function `fi` with its frames starting at `base`.
    pub fn call(self: &Arc<Self>, fi: usize, dcs: &[u64], args: &[u64], base: [u64; 2]) -> R<u64> {
        self.invoke(fi, dcs, args, base, None)
    }

    fn invoke(self: &Arc<Self>, fi: usize, dcs: &[u64], args: &[u64], base: [u64; 2], trace: Option<Rc<RefCell<Trace>>>) -> R<u64> {
        self.counters.calls.fetch_add(1, Ordering::Relaxed);
        let exe = self.exe.clone();
        let ef = &exe.functions[fi];
        if args.len() != ef.params.len() {
            return Err(format!("`{}` expects {} arguments, got {}", ef.name, ef.params.len(), args.len()));
        }
        let mut act = Act {
            m: self,
            ef,
            dc: eval_table(ef, dcs)?,
            base,
            regs: vec![0; ef.num_regs],
            par_slot: 0,
            pending: BTreeMap::new(),
            trace,
        };
        for (p, &a) in ef.params.iter().zip(args) {
            if let Some(r) = p {
                act.regs[*r as usize] = a;
            }
        }
        match act.run_blocks(0, false)? {
            Flow::Return(v) => {
                act.await_all()?;
                Ok(v)
            }
            Flow::EndIter => Err(format!("`{}`: iteration ended outside a fork", ef.name)),
        }
    }
}

impl Act<'_> {
    fn space(&self, sp: MemSpace) -> &Space {
        &self.m.mem[sp.index()]
    }

    fn touch(&self, sp: MemSpace, addr: u64, n: u64, write: bool) {
        if let Some(t) = &self.trace {
            t.borrow_mut().record(sp.index(), addr, n, write);
        }
    }

    fn load(&self, addr: u64, kind: ScalarKind) -> R<u64> {
        let n = kind.bytes();
        self.touch(self.ef.mem, addr, n, false);
        Ok(ops::canon(kind, self.space(self.ef.mem).load(addr, n)?))
    }

    fn store(&self, addr: u64, kind: ScalarKind, v: u64) -> R<()> {
        let n = kind.bytes();
        self.touch(self.ef.mem, addr, n, true);
        self.space(self.ef.mem).store(addr, n, v)
    }

    fn alloc_addr(&self, sp: MemSpace, offset: u32, size: u32, per_iteration: bool) -> u64 {
        let mut a = self.base[sp.index()] + self.dc[offset as usize];
        if per_iteration {
            a += self.par_slot * self.dc[size as usize];
        }
        a
    }

    fn addr(&self, base: u64, steps: &[Step]) -> R<u64> {
        let mut a = base;
        for s in steps {
            match s {
                Step::Offset(o) => a += self.dc[*o as usize],
                Step::Index { idx, extent, stride } => {
                    let (i, n) = (self.regs[*idx as usize], self.dc[*extent as usize]);
                    if i >= n {
                        return Err(format!("`{}`: index {i} out of bounds for extent {n}", self.ef.name));
                    }
                    a += i * self.dc[*stride as usize];
                }
                Step::Variant { tag, set } => {
                    if *set {
                        self.store(a, ScalarKind::U64, *tag)?;
                    } else {
                        let t = self.load(a, ScalarKind::U64)?;
                        if t != *tag {
                            return Err(format!("read of summation variant {tag} while variant {t} is active"));
                        }
                    }
                    a += 8;
                }
            }
        }
        Ok(a)
    }

    fn await_reg(&mut self, r: Reg) -> R<()> {
        if let Some(slot) = self.pending.remove(&r) {
            self.regs[r as usize] = slot.wait()?;
        }
        Ok(())
    }

    fn await_all(&mut self) -> R<()> {
        let regs: Vec<Reg> = self.pending.keys().copied().collect();
        for r in regs {
            self.await_reg(r)?;
        }
        Ok(())
    }

    fn call(&mut self, c: &CallInst) -> R<()> {
        let m = self.m;
        let callee = &m.exe.functions[c.callee];
        let dcs: Vec<u64> = c.dyn_args.iter().map(|&s| self.dc[s as usize]).collect();
        let mut base = self.base;
        for sp in [MemSpace::Host, MemSpace::GpuSim] {
            if let Some((off, size)) = c.frames[sp.index()] {
                base[sp.index()] = self.alloc_addr(sp, off, size, c.per_iteration);
            }
        }
        let mut args: Vec<u64> = c.args.iter().map(|&r| self.regs[r as usize]).collect();
        let (from, to) = (self.ef.mem, callee.mem);
        for &(i, off, bytes) in &c.arg_copies {
            let dst = self.alloc_addr(to, off, bytes, c.per_iteration);
            let n = self.dc[bytes as usize];
            self.touch(from, args[i], n, false);
            let data = m.mem[from.index()].read_bytes(args[i], n)?;
            m.mem[to.index()].write_bytes(dst, &data)?;
            m.counters.copies.fetch_add(1, Ordering::Relaxed);
            m.counters.copy_bytes.fetch_add(n, Ordering::Relaxed);
            args[i] = dst;
        }
        let result = c.result_copy.map(|(off, bytes)| (self.alloc_addr(from, off, bytes, c.per_iteration), self.dc[bytes as usize]));
        let fi = c.callee;
        if c.is_async {
            let mm = m.clone();
            let job: Job = Box::new(move || {
                let r = mm.call(fi, &dcs, &args, base)?;
                finish_result(&mm, to, from, r, result)
            });
            let slot = Arc::new(AsyncSlot { job: Mutex::new(Some(job)), result: Mutex::new(None), ready: Condvar::new() });
            let s2 = slot.clone();
            m.counters.tasks.fetch_add(1, Ordering::Relaxed);
            rayon::spawn(move || s2.run());
            self.pending.insert(c.dst, slot);
        } else {
            let r = m.invoke(fi, &dcs, &args, base, self.trace.clone())?;
            if let Some((dst, n)) = result {
                self.touch(from, dst, n, true);
            }
            self.regs[c.dst as usize] = finish_result(m, to, from, r, result)?;
        }
        Ok(())
    }

    fn exec(&mut self, i: &Inst) -> R<()> {
        match i {
            Inst::Const { dst, bits } => self.regs[*dst as usize] = *bits,
            Inst::Dc { dst, slot } => self.regs[*dst as usize] = self.dc[*slot as usize],
            Inst::Bin { op, kind, dst, a, b } => {
                self.regs[*dst as usize] = ops::binary(*op, *kind, self.regs[*a as usize], self.regs[*b as usize])?
            }
            Inst::Un { op, kind, dst, a } => {
                let v = self.regs[*a as usize];
                self.regs[*dst as usize] = match op {
                    UnaryOp::Neg => ops::neg(*kind, v),
                    UnaryOp::Not => ops::not(*kind, v),
                    UnaryOp::Cast(t) => ops::cast(*kind, *t, v),
                };
            }
            Inst::Alloc { dst, mem, offset, size, per_iteration } => {
                self.regs[*dst as usize] = self.alloc_addr(*mem, *offset, *size, *per_iteration)
            }
            Inst::Zero { addr, bytes } => {
                let (a, n) = (self.regs[*addr as usize], self.dc[*bytes as usize]);
                self.touch(self.ef.mem, a, n, true);
                self.space(self.ef.mem).fill_zero(a, n)?;
            }
            Inst::Addr { dst, base, steps } => self.regs[*dst as usize] = self.addr(self.regs[*base as usize], steps)?,
            Inst::Load { dst, addr, kind } => self.regs[*dst as usize] = self.load(self.regs[*addr as usize], *kind)?,
            Inst::Store { addr, src, kind } => self.store(self.regs[*addr as usize], *kind, self.regs[*src as usize])?,
            Inst::MemCopy { dst, src, bytes } => {
                let (d, s, n) = (self.regs[*dst as usize], self.regs[*src as usize], self.dc[*bytes as usize]);
                self.touch(self.ef.mem, s, n, false);
                self.touch(self.ef.mem, d, n, true);
                self.space(self.ef.mem).copy_within(d, s, n)?;
            }
            Inst::Move { dst, src } => self.regs[*dst as usize] = self.regs[*src as usize],
            Inst::Call(c) => self.call(c)?,
            Inst::Await { reg } => self.await_reg(*reg)?,
        }
        Ok(())
    }

    fn run_blocks(&mut self, start: usize, in_fork: bool) -> R<Flow> {
        let ef = self.ef;
        let mut cur = start;
        let mut first = true;
        loop {
            let b = &ef.blocks[cur];
            if let Some(fi) = b.fork {
                if !(first && in_fork) {
                    self.run_fork(fi)?;
                    cur = ef.forks[fi].join_block;
                    first = false;
                    continue;
                }
            }
            first = false;
            for i in &b.insts {
                self.exec(i)?;
            }
            match &b.term {
                Term::Jump { to, moves } => {
                    let vals: Vec<u64> = moves.iter().map(|&(_, s)| self.regs[s as usize]).collect();
                    for (&(d, _), v) in moves.iter().zip(vals) {
                        self.regs[d as usize] = v;
                    }
                    cur = *to;
                }
                Term::Branch { cond, on_false, on_true } => {
                    cur = if self.regs[*cond as usize] != 0 { *on_true } else { *on_false };
                }
                Term::Return { value } => return Ok(Flow::Return(self.regs[*value as usize])),
                Term::EndIter => {
                    if !in_fork {
                        return Err(format!("`{}`: iteration ended outside a fork", ef.name));
                    }
                    return Ok(Flow::EndIter);
                }
            }
        }
    }

    fn set_tids(&mut self, fi: usize, dims: &[u64], mut lin: u64) {
        let fk = &self.ef.forks[fi];
        let mut idx = vec![0u64; dims.len()];
        for d in (0..dims.len()).rev() {
            idx[d] = lin % dims[d];
            lin /= dims[d];
        }
        for &(r, dim) in &fk.tids {
            self.regs[r as usize] = idx[dim];
        }
    }

    fn iterate(&mut self, fi: usize, dims: &[u64], range: std::ops::Range<u64>, par: bool) -> R<()> {
        let fk = &self.ef.forks[fi];
        for it in range {
            self.set_tids(fi, dims, it);
            if par {
                self.par_slot = it;
                if let Some(t) = &self.trace {
                    t.borrow_mut().iter = it;
                }
            }
            match self.run_blocks(fk.block, true)? {
                Flow::EndIter => {}
                Flow::Return(_) => return Err(format!("`{}`: return inside a fork", self.ef.name)),
            }
            let next: Vec<u64> = fk.reduces.iter().map(|&(_, _, red)| self.regs[red as usize]).collect();
            for (&(r, _, _), v) in fk.reduces.iter().zip(next) {
                self.regs[r as usize] = v;
            }
        }
        Ok(())
    }

    fn run_fork(&mut self, fi: usize) -> R<()> {
        let fk = &self.ef.forks[fi];
        let dims: Vec<u64> = fk.factors.iter().map(|&s| self.dc[s as usize]).collect();
        let total: u64 = dims.iter().product();
        for &(r, init, _) in &fk.reduces {
            self.regs[r as usize] = self.regs[init as usize];
        }
        if total == 0 {
            return Ok(());
        }
        let nested_trace = self.trace.is_some();
        if !fk.parallel || nested_trace {
            return self.iterate(fi, &dims, 0..total, false);
        }
        self.await_all()?;
        /* Contiguous ranges of iterations per task. Every reduce here is
        parallel, so the registers left by the last range are the result. */
        let chunks = total.min(self.m.workers as u64 * 4).max(1);
        self.m.counters.tasks.fetch_add(chunks, Ordering::Relaxed);
        let race = self.m.race_check;
        let (ef, m, dc, base, regs) = (self.ef, self.m, &self.dc, self.base, &self.regs);
        let results: Vec<R<(Vec<u64>, Option<Trace>)>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut act = Act {
                    m,
                    ef,
                    dc: dc.clone(),
                    base,
                    regs: regs.clone(),
                    par_slot: 0,
                    pending: BTreeMap::new(),
                    trace: race.then(|| Rc::new(RefCell::new(Trace::default()))),
                };
                let (lo, hi) = (c * total / chunks, (c + 1) * total / chunks);
                act.iterate(fi, &dims, lo..hi, true)?;
                act.await_all()?;
                let trace = act.trace.take().map(|t| Rc::try_unwrap(t).ok().unwrap().into_inner());
                let red = ef.forks[fi].reduces.iter().map(|&(r, _, _)| act.regs[r as usize]).collect();
                Ok((red, trace))
            })
            .collect();
        let mut merged: Option<Trace> = None;
        let mut last = vec![];
        for r in results {
            let (red, trace) = r?;
            last = red;
            if let Some(t) = trace {
                if let Some(msg) = t.race {
                    return Err(format!("`{}`: {msg}", ef.name));
                }
                match &mut merged {
                    None => merged = Some(t),
                    Some(mg) => {
                        for ((sp, a), acc) in t.bytes {
                            let (it, w) = match acc {
                                Access::Read(i) => (i, false),
                                Access::Write(i) => (i, true),
                                Access::Reads => (u64::MAX, false),
                            };
                            if it == u64::MAX {
                                // Several readers; any earlier write conflicts.
                                if let Some(Access::Write(_)) = mg.bytes.get(&(sp, a)) {
                                    return Err(format!("`{}`: data race on byte {a}", ef.name));
                                }
                                mg.bytes.insert((sp, a), Access::Reads);
                                continue;
                            }
                            mg.iter = it;
                            mg.record(sp, a, 1, w);
                            if let Some(msg) = mg.race.take() {
                                return Err(format!("`{}`: {msg}", ef.name));
                            }
                        }
                    }
                }
            }
        }
        for (&(r, _, _), v) in fk.reduces.iter().zip(last) {
            self.regs[r as usize] = v;
        }
        Ok(())
    }
}

fn finish_result(m: &Machine, callee_mem: MemSpace, caller_mem: MemSpace, r: u64, result: Option<(u64, u64)>) -> R<u64> {
    match result {
        Some((dst, n)) => {
            let data = m.mem[callee_mem.index()].read_bytes(r, n)?;
            m.mem[caller_mem.index()].write_bytes(dst, &data)?;
            m.counters.copies.fetch_add(1, Ordering::Relaxed);
            m.counters.copy_bytes.fetch_add(n, Ordering::Relaxed);
            Ok(dst)
        }
        None => Ok(r),
    }
}
