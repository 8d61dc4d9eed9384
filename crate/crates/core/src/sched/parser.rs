use super::ast::{Expr, Macro, Pattern, StaticArg, Stmt};
use super::region::SetOp;
use crate::error::Result;
use crate::frontend::lexer::{describe, lex, Cursor, Tok};
use crate::ir::Device;

pub fn parse_schedule(file: &str, src: &str) -> Result<Vec<Stmt>> {
    let mut p = Cursor::new(file, lex(file, src, true)?);
    let mut out = vec![];
    while *p.peek() != Tok::Eof {
        out.push(stmt(&mut p)?);
    }
    Ok(out)
}

fn stmt(p: &mut Cursor) -> Result<Stmt> {
    let line = p.line();
    if p.eat_ident("macro") {
        return macro_def(p, line).map(Stmt::Macro);
    }
    if p.eat_ident("let") {
        let pat = if p.eat("(") {
            let mut names = vec![];
            loop {
                let n = p.ident()?;
                names.push(if n == "_" { None } else { Some(n) });
                if !p.eat(",") {
                    break;
                }
            }
            p.expect(")")?;
            Pattern::Tuple(names)
        } else {
            Pattern::Name(p.ident()?)
        };
        p.expect("=")?;
        let value = expr(p)?;
        p.expect(";")?;
        return Ok(Stmt::Let { pat, value, line });
    }
    let value = expr(p)?;
    p.expect(";")?;
    if let Expr::Call { name, statics, args, .. } = &value {
        let device = match name.as_str() {
            "cpu" => Some(Device::CpuSequential),
            "host" => Some(Device::HostOrchestration),
            "gpu" => Some(Device::GpuSimulated),
            _ => None,
        };
        if let Some(device) = device {
            if !statics.is_empty() || args.len() != 1 {
                return Err(p.error(format!("`{name}` takes exactly one region argument")));
            }
            return Ok(Stmt::DeviceAssign { device, region: args[0].clone(), line });
        }
    }
    Ok(Stmt::Expr { value, line })
}

fn macro_def(p: &mut Cursor, line: usize) -> Result<Macro> {
    let name = p.ident()?;
    let mut statics = vec![];
    if p.eat("!") && p.eat("[") {
        if !p.is("]") {
            loop {
                statics.push(p.ident()?);
                if !p.eat(",") {
                    break;
                }
            }
        }
        p.expect("]")?;
    }
    p.expect("(")?;
    let mut params = vec![];
    if !p.is(")") {
        loop {
            params.push(p.ident()?);
            if !p.eat(",") {
                break;
            }
        }
    }
    p.expect(")")?;
    p.expect("{")?;
    let mut body = vec![];
    let mut ret = None;
    while !p.is("}") {
        if *p.peek() == Tok::Eof {
            return Err(p.error("unterminated macro body"));
        }
        if p.is_ident("let") || p.is_ident("macro") {
            if p.is_ident("macro") {
                return Err(p.error("macros cannot be nested"));
            }
            body.push(stmt(p)?);
            continue;
        }
        let sline = p.line();
        let e = expr(p)?;
        if p.is("}") {
            ret = Some(e);
            break;
        }
        p.expect(";")?;
        body.push(match e {
            Expr::Call { ref name, ref args, ref statics, .. }
                if matches!(name.as_str(), "cpu" | "host" | "gpu") && args.len() == 1 && statics.is_empty() =>
            {
                let device = match name.as_str() {
                    "cpu" => Device::CpuSequential,
                    "host" => Device::HostOrchestration,
                    _ => Device::GpuSimulated,
                };
                Stmt::DeviceAssign { device, region: args[0].clone(), line: sline }
            }
            e => Stmt::Expr { value: e, line: sline },
        });
    }
    p.expect("}")?;
    Ok(Macro { name, statics, params, body, ret, line })
}

fn expr(p: &mut Cursor) -> Result<Expr> {
    let mut lhs = term(p)?;
    loop {
        let op = if p.eat("\\") {
            SetOp::Difference
        } else if p.eat("|") {
            SetOp::Union
        } else if p.eat("&") {
            SetOp::Intersection
        } else {
            return Ok(lhs);
        };
        let rhs = term(p)?;
        lhs = Expr::SetOp(op, Box::new(lhs), Box::new(rhs));
    }
}

fn term(p: &mut Cursor) -> Result<Expr> {
    let line = p.line();
    if p.eat("*") {
        return Ok(Expr::Star);
    }
    if p.eat("(") {
        let e = expr(p)?;
        p.expect(")")?;
        return Ok(e);
    }
    let name = match p.peek().clone() {
        Tok::Ident(n) => {
            p.next();
            n
        }
        t => return Err(p.error(format!("expected region expression, found {}", describe(&t)))),
    };
    if let Tok::Label(l) = p.peek().clone() {
        p.next();
        return Ok(Expr::Label { func: name, label: l });
    }
    let bang = p.eat("!");
    let mut statics = vec![];
    if p.is("[") {
        statics = static_list(p)?;
    }
    if p.eat("(") {
        let mut args = vec![];
        if !p.is(")") {
            loop {
                args.push(expr(p)?);
                if !p.eat(",") {
                    break;
                }
            }
        }
        p.expect(")")?;
        return Ok(Expr::Call { name, statics, args, line });
    }
    if bang || !statics.is_empty() {
        return Err(p.error(format!("expected `(` after `{name}`")));
    }
    Ok(Expr::Ident(name))
}

fn static_list(p: &mut Cursor) -> Result<Vec<StaticArg>> {
    p.expect("[")?;
    let mut out = vec![];
    if !p.is("]") {
        loop {
            out.push(static_arg(p)?);
            if !p.eat(",") {
                break;
            }
        }
    }
    p.expect("]")?;
    Ok(out)
}

fn static_arg(p: &mut Cursor) -> Result<StaticArg> {
    if p.is("[") {
        return static_list(p).map(StaticArg::List);
    }
    let neg = p.eat("-");
    match p.next() {
        Tok::Int(v) => {
            let v = i64::try_from(v).map_err(|_| p.error("static argument too large"))?;
            Ok(StaticArg::Int(if neg { -v } else { v }))
        }
        Tok::Ident(n) if !neg => Ok(StaticArg::Ident(n)),
        t => Err(p.error(format!("expected static argument, found {}", describe(&t)))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const BLOCKED: &str = "// Parallelize by computing output array as 16 blocks
let par = matmul@outer \\ matmul@inner;
fork-chunk![4](par);
let (outer, inner, _) = fork-reshape[[0,2],[1],[3]](par);
parallelize!(outer \\ inner);
let body = outline(inner);
cpu(body);
// Tile for cache, assuming 64B cache lines
fork-tile![16](body);
let (outer, inner) = fork-reshape[[0,2,4,1,3],[5]](body);
";

    #[test]
    fn blocked_matmul_schedule_has_eight_statements() {
        let s = parse_schedule("s", BLOCKED).unwrap();
        assert_eq!(s.len(), 8);
        assert!(matches!(&s[5], Stmt::DeviceAssign { device: Device::CpuSequential, .. }));
        match &s[0] {
            Stmt::Let { value: Expr::SetOp(SetOp::Difference, a, _), line: 2, .. } => {
                assert_eq!(**a, Expr::Label { func: "matmul".into(), label: "outer".into() })
            }
            other => panic!("{other:?}"),
        }
        match &s[2] {
            Stmt::Let { pat: Pattern::Tuple(names), value: Expr::Call { statics, .. }, .. } => {
                assert_eq!(names.len(), 3);
                assert_eq!(names[2], None);
                assert_eq!(statics.len(), 3);
                assert_eq!(statics[0], StaticArg::List(vec![StaticArg::Int(0), StaticArg::Int(2)]));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn macro_header() {
        let src = "macro reduction_tree![N](F) {
  fork-chunk![N](F);
  let (outer, inner) = fork-reshape[[0], [1]](F);
  monoid-reassociate(inner);
  let (top, bottom) = fork-fission(outer);
}
reduction_tree![8](sum);";
        let s = parse_schedule("s", src).unwrap();
        match &s[0] {
            Stmt::Macro(m) => {
                assert_eq!(m.statics, vec!["N".to_string()]);
                assert_eq!(m.params, vec!["F".to_string()]);
                assert_eq!(m.body.len(), 4);
                assert!(m.ret.is_none());
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(&s[1], Stmt::Expr { value: Expr::Call { name, .. }, .. } if name == "reduction_tree"));
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_schedule("s", "let x = ;").unwrap_err().to_string();
        assert!(e.starts_with("s:1:9"), "{e}");
    }
}
