use std::fmt::Write as _;

use crate::ir::UnaryOp;

use super::{Block, ExecFunction, Executable, Inst, Step, Term};

fn steps_text(steps: &[Step]) -> String {
    steps
        .iter()
        .map(|s| match s {
            Step::Offset(o) => format!("+s{o}"),
            Step::Index { idx, extent, stride } => format!("[r{idx} < s{extent}] * s{stride}"),
            Step::Variant { tag, set } => format!("{}{tag}", if *set { "set-variant " } else { "variant " }),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn inst_text(i: &Inst) -> String {
    match i {
        Inst::Const { dst, bits } => format!("r{dst} = const {bits:#x}"),
        Inst::Dc { dst, slot } => format!("r{dst} = dc s{slot}"),
        Inst::Bin { op, kind, dst, a, b } => format!("r{dst} = {}.{} r{a}, r{b}", op.name(), kind.name()),
        Inst::Un { op, kind, dst, a } => match op {
            UnaryOp::Neg => format!("r{dst} = neg.{} r{a}", kind.name()),
            UnaryOp::Not => format!("r{dst} = not.{} r{a}", kind.name()),
            UnaryOp::Cast(t) => format!("r{dst} = cast.{}.{} r{a}", kind.name(), t.name()),
        },
        Inst::Alloc { dst, mem, offset, size, per_iteration } => format!(
            "r{dst} = alloc {} +s{offset} size s{size}{}",
            mem.name(),
            if *per_iteration { " per-iteration" } else { "" }
        ),
        Inst::Zero { addr, bytes } => format!("zero r{addr}, s{bytes}"),
        Inst::Addr { dst, base, steps } => format!("r{dst} = addr r{base} {}", steps_text(steps)).trim_end().to_string(),
        Inst::Load { dst, addr, kind } => format!("r{dst} = load.{} r{addr}", kind.name()),
        Inst::Store { addr, src, kind } => format!("store.{} r{addr}, r{src}", kind.name()),
        Inst::MemCopy { dst, src, bytes } => format!("memcopy r{dst}, r{src}, s{bytes}"),
        Inst::Move { dst, src } => format!("r{dst} = r{src}"),
        Inst::Call(c) => {
            let args: Vec<String> = c.args.iter().map(|a| format!("r{a}")).collect();
            let dcs: Vec<String> = c.dyn_args.iter().map(|s| format!("s{s}")).collect();
            format!(
                "r{} = {}call f{}<{}>({}){}",
                c.dst,
                if c.is_async { "async " } else { "" },
                c.callee,
                dcs.join(", "),
                args.join(", "),
                if c.arg_copies.is_empty() && c.result_copy.is_none() {
                    String::new()
                } else {
                    format!(" copies {}+{}", c.arg_copies.len(), c.result_copy.is_some() as usize)
                }
            )
        }
        Inst::Await { reg } => format!("await r{reg}"),
    }
}

fn term_text(t: &Term) -> String {
    match t {
        Term::Jump { to, moves } => {
            if moves.is_empty() {
                format!("jump b{to}")
            } else {
                let mv: Vec<String> = moves.iter().map(|(d, s)| format!("r{d} = r{s}")).collect();
                format!("jump b{to} [{}]", mv.join(", "))
            }
        }
        Term::Branch { cond, on_false, on_true } => format!("branch r{cond} ? b{on_true} : b{on_false}"),
        Term::Return { value } => format!("return r{value}"),
        Term::EndIter => "end-iteration".into(),
    }
}

pub fn function_text(ef: &ExecFunction) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "function {}<{}> device {} mem {}{}",
        ef.name,
        ef.dc_params.join(", "),
        ef.device.name(),
        ef.mem.name(),
        if ef.entry { " entry" } else { "" }
    );
    for (i, d) in ef.dc_table.iter().enumerate() {
        let _ = writeln!(s, "  s{i} = {}", d.display_with(&ef.dc_params));
    }
    let _ = writeln!(
        s,
        "  frame host {} gpusim {}",
        ef.frame[0].display_with(&ef.dc_params),
        ef.frame[1].display_with(&ef.dc_params)
    );
    for (i, p) in ef.params.iter().enumerate() {
        if let Some(r) = p {
            let _ = writeln!(s, "  param {i} -> r{r}");
        }
    }
    for fk in &ef.forks {
        let factors: Vec<String> = fk.factors.iter().map(|x| format!("s{x}")).collect();
        let _ = writeln!(
            s,
            "  fork b{} join b{} factors [{}]{}",
            fk.block,
            fk.join_block,
            factors.join(", "),
            if fk.parallel { " parallel" } else { "" }
        );
        for (r, dim) in &fk.tids {
            let _ = writeln!(s, "    tid r{r} = dim {dim}");
        }
        for (r, init, reduct) in &fk.reduces {
            let _ = writeln!(s, "    reduce r{r} init r{init} reduct r{reduct}");
        }
    }
    if let Some(lp) = &ef.launch {
        let _ = writeln!(s, "  launch size {}", lp.size().display(&ef.dc_params));
        for (i, fl) in lp.forks.iter().enumerate() {
            let fork = fl.fork.map_or("root".to_string(), |f| format!("node {f}"));
            let _ = writeln!(
                s,
                "    nest {i} {fork} size {} {:?} {:?}{}",
                fl.size.display(&ef.dc_params),
                fl.role,
                fl.strategy,
                fl.tile_width.map_or(String::new(), |w| format!(" width {w}"))
            );
        }
    }
    for (bi, b) in ef.blocks.iter().enumerate() {
        let _ = writeln!(s, "  b{bi}: ; node {}{}", b.node, if b.fork.is_some() { " fork" } else { "" });
        for i in &b.insts {
            let _ = writeln!(s, "    {}", inst_text(i));
        }
        let _ = writeln!(s, "    {}", term_text(&b.term));
    }
    s
}

pub fn exec_text(e: &Executable) -> String {
    e.functions.iter().map(function_text).collect::<Vec<_>>().join("\n")
}

fn c_inst(i: &Inst) -> String {
    match i {
        Inst::Const { dst, bits } => format!("r{dst} = {bits:#x};"),
        Inst::Dc { dst, slot } => format!("r{dst} = dc[{slot}];"),
        Inst::Bin { op, dst, a, b, .. } => {
            let sym = match op.name() {
                "add" => "+",
                "sub" => "-",
                "mul" => "*",
                "div" => "/",
                "rem" => "%",
                "lt" => "<",
                "le" => "<=",
                "gt" => ">",
                "ge" => ">=",
                "eq" => "==",
                "ne" => "!=",
                "and" => "&",
                "or" => "|",
                "xor" => "^",
                other => return format!("r{dst} = {other}(r{a}, r{b});"),
            };
            format!("r{dst} = r{a} {sym} r{b};")
        }
        Inst::Un { op, dst, a, .. } => match op {
            UnaryOp::Neg => format!("r{dst} = -r{a};"),
            UnaryOp::Not => format!("r{dst} = ~r{a};"),
            UnaryOp::Cast(t) => format!("r{dst} = ({})r{a};", t.name()),
        },
        Inst::Alloc { dst, mem, offset, .. } => format!("r{dst} = {}_base + dc[{offset}];", mem.name()),
        Inst::Zero { addr, bytes } => format!("memset(mem + r{addr}, 0, dc[{bytes}]);"),
        Inst::Addr { dst, base, steps } => {
            let mut e = format!("r{base}");
            for st in steps {
                match st {
                    Step::Offset(o) => e += &format!(" + dc[{o}]"),
                    Step::Index { idx, stride, .. } => e += &format!(" + r{idx} * dc[{stride}]"),
                    Step::Variant { .. } => e += " + 8",
                }
            }
            format!("r{dst} = {e};")
        }
        Inst::Load { dst, addr, kind } => format!("r{dst} = *({}*)(mem + r{addr});", kind.name()),
        Inst::Store { addr, src, kind } => format!("*({}*)(mem + r{addr}) = r{src};", kind.name()),
        Inst::MemCopy { dst, src, bytes } => format!("memcpy(mem + r{dst}, mem + r{src}, dc[{bytes}]);"),
        Inst::Move { dst, src } => format!("r{dst} = r{src};"),
        Inst::Call(c) => {
            let args: Vec<String> = c.args.iter().map(|a| format!("r{a}")).collect();
            format!("r{} = f{}({});", c.dst, c.callee, args.join(", "))
        }
        Inst::Await { reg } => format!("await(r{reg});"),
    }
}

fn c_block(out: &mut String, bi: usize, b: &Block, ef: &ExecFunction) {
    let _ = writeln!(out, "b{bi}:");
    if let Some(fi) = b.fork {
        let fk = &ef.forks[fi];
        let dims: Vec<String> = fk.factors.iter().map(|s| format!("dc[{s}]")).collect();
        let _ = writeln!(out, "  /* fork over [{}]{} */", dims.join(", "), if fk.parallel { ", parallel" } else { "" });
    }
    for i in &b.insts {
        let _ = writeln!(out, "  {}", c_inst(i));
    }
    let t = match &b.term {
        Term::Jump { to, moves } => {
            let mut s = String::new();
            for (d, src) in moves {
                s += &format!("r{d} = r{src}; ");
            }
            format!("{s}goto b{to};")
        }
        Term::Branch { cond, on_false, on_true } => format!("if (r{cond}) goto b{on_true}; else goto b{on_false};"),
        Term::Return { value } => format!("return r{value};"),
        Term::EndIter => "continue; /* next iteration */".into(),
    };
    let _ = writeln!(out, "  {t}");
}

/// Pseudo-C rendering for inspection; it is not meant to compile.
pub fn c_text(e: &Executable) -> String {
    let mut out = String::new();
    for (fi, ef) in e.functions.iter().enumerate() {
        let params: Vec<String> = ef.params.iter().enumerate().map(|(i, r)| match r {
            Some(r) => format!("u64 r{r}"),
            None => format!("u64 unused{i}"),
        }).collect();
        let _ = writeln!(out, "/* {} on {} */", ef.name, ef.device.name());
        let _ = writeln!(out, "u64 f{fi}({}) {{", params.join(", "));
        for (bi, b) in ef.blocks.iter().enumerate() {
            c_block(&mut out, bi, b, ef);
        }
        let _ = writeln!(out, "}}\n");
    }
    out
}
