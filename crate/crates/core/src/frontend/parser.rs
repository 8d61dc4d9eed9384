use super::ast::*;
use super::lexer::{describe, lex, Cursor, Tok};
use crate::error::Result;
use crate::ir::ScalarKind;

pub fn parse(file: &str, src: &str) -> Result<Program> {
    let mut p = Cursor::new(file, lex(file, src, false)?);
    let mut functions = vec![];
    while *p.peek() != Tok::Eof {
        functions.push(parse_fn(&mut p)?);
    }
    Ok(Program { functions })
}

fn parse_fn(p: &mut Cursor) -> Result<FnDecl> {
    let mut entry = false;
    while p.eat("#") {
        p.expect("[")?;
        let attr = p.ident()?;
        if attr != "entry" {
            return Err(p.error(format!("unknown attribute `{attr}`")));
        }
        p.expect("]")?;
        entry = true;
    }
    let line = p.line();
    if !p.eat_ident("fn") {
        return Err(p.error(format!("expected `fn`, found {}", describe(p.peek()))));
    }
    let name = p.ident()?;
    let mut dc_params = vec![];
    if p.eat("<") {
        while !p.is(">") {
            dc_params.push(p.ident()?);
            if p.eat(":") {
                let t = p.ident()?;
                if t != "usize" {
                    return Err(p.error("dynamic constants must be `usize`"));
                }
            }
            if !p.eat(",") {
                break;
            }
        }
        p.expect(">")?;
    }
    p.expect("(")?;
    let mut params = vec![];
    while !p.is(")") {
        let n = p.ident()?;
        p.expect(":")?;
        params.push((n, parse_type(p)?));
        if !p.eat(",") {
            break;
        }
    }
    p.expect(")")?;
    p.expect("->")?;
    let ret = parse_type(p)?;
    let body = parse_block(p)?;
    Ok(FnDecl { name, entry, dc_params, params, ret, body, line })
}

fn parse_type(p: &mut Cursor) -> Result<TypeExpr> {
    let mut t = if p.eat("(") {
        let mut fs = vec![];
        while !p.is(")") {
            fs.push(parse_type(p)?);
            if !p.eat(",") {
                break;
            }
        }
        p.expect(")")?;
        TypeExpr::Tuple(fs)
    } else {
        let n = p.ident()?;
        TypeExpr::Scalar(ScalarKind::from_name(&n).ok_or_else(|| p.error(format!("unknown type `{n}`")))?)
    };
    while p.eat("[") {
        let mut ext = vec![];
        while !p.is("]") {
            ext.push(parse_expr(p)?);
            if !p.eat(",") {
                break;
            }
        }
        p.expect("]")?;
        if ext.is_empty() {
            return Err(p.error("array type needs at least one extent"));
        }
        t = TypeExpr::Array(Box::new(t), ext);
    }
    Ok(t)
}

fn parse_block(p: &mut Cursor) -> Result<Vec<Stmt>> {
    p.expect("{")?;
    let mut out = vec![];
    while !p.eat("}") {
        if *p.peek() == Tok::Eof {
            return Err(p.error("unterminated block"));
        }
        out.push(parse_stmt(p)?);
    }
    Ok(out)
}

fn parse_stmt(p: &mut Cursor) -> Result<Stmt> {
    let mut labels = vec![];
    while let Tok::Label(l) = p.peek().clone() {
        p.next();
        labels.push(l);
    }
    let line = p.line();
    let kind = if p.eat_ident("let") {
        let name = p.ident()?;
        let ty = if p.eat(":") { Some(parse_type(p)?) } else { None };
        let init = if p.eat("=") { Some(parse_expr(p)?) } else { None };
        if ty.is_none() && init.is_none() {
            return Err(p.error("`let` needs a type or an initializer"));
        }
        p.expect(";")?;
        StmtKind::Let { name, ty, init }
    } else if p.eat_ident("for") {
        let var = p.ident()?;
        if !p.eat_ident("in") {
            return Err(p.error("expected `in`"));
        }
        let lo = parse_expr(p)?;
        p.expect("..")?;
        let hi = parse_expr(p)?;
        let body = parse_block(p)?;
        StmtKind::For { var, lo, hi, body }
    } else if p.eat_ident("while") {
        let cond = parse_expr(p)?;
        StmtKind::While { cond, body: parse_block(p)? }
    } else if p.is_ident("if") {
        parse_if(p)?
    } else if p.eat_ident("return") {
        let e = parse_expr(p)?;
        p.expect(";")?;
        StmtKind::Return(e)
    } else if p.is("{") {
        StmtKind::Block(parse_block(p)?)
    } else {
        let var = p.ident()?;
        let mut path = vec![];
        loop {
            if p.eat("[") {
                path.push(Access::Index(parse_list(p, "]")?));
            } else if p.eat(".") {
                path.push(Access::Field(p.int()? as usize));
            } else {
                break;
            }
        }
        let op = match p.next() {
            Tok::Punct("=") => AssignOp::Set,
            Tok::Punct("+=") => AssignOp::Add,
            Tok::Punct("-=") => AssignOp::Sub,
            Tok::Punct("*=") => AssignOp::Mul,
            Tok::Punct("/=") => AssignOp::Div,
            t => return Err(p.error(format!("expected assignment, found {}", describe(&t)))),
        };
        let value = parse_expr(p)?;
        p.expect(";")?;
        StmtKind::Assign { var, path, op, value }
    };
    Ok(Stmt { kind, labels, line })
}

fn parse_if(p: &mut Cursor) -> Result<StmtKind> {
    p.eat_ident("if");
    let cond = parse_expr(p)?;
    let then = parse_block(p)?;
    let els = if p.eat_ident("else") {
        if p.is_ident("if") {
            let line = p.line();
            Some(vec![Stmt { kind: parse_if(p)?, labels: vec![], line }])
        } else {
            Some(parse_block(p)?)
        }
    } else {
        None
    };
    Ok(StmtKind::If { cond, then, els })
}

fn parse_list(p: &mut Cursor, close: &str) -> Result<Vec<Expr>> {
    let mut out = vec![];
    while !p.is(close) {
        out.push(parse_expr(p)?);
        if !p.eat(",") {
            break;
        }
    }
    p.expect(close)?;
    Ok(out)
}

pub fn parse_expr(p: &mut Cursor) -> Result<Expr> {
    parse_bin(p, 0)
}

const LEVELS: &[&[(&str, BinOp)]] = &[
    &[("||", BinOp::Or)],
    &[("&&", BinOp::And)],
    &[("==", BinOp::Eq), ("!=", BinOp::Ne), ("<=", BinOp::Le), (">=", BinOp::Ge), ("<", BinOp::Lt), (">", BinOp::Gt)],
    &[("|", BinOp::BitOr)],
    &[("^", BinOp::BitXor)],
    &[("&", BinOp::BitAnd)],
    &[("+", BinOp::Add), ("-", BinOp::Sub)],
    &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Rem)],
];

fn parse_bin(p: &mut Cursor, level: usize) -> Result<Expr> {
    if level == LEVELS.len() {
        return parse_cast(p);
    }
    let mut lhs = parse_bin(p, level + 1)?;
    'outer: loop {
        for (tok, op) in LEVELS[level] {
            if p.is(tok) {
                p.next();
                let rhs = parse_bin(p, level + 1)?;
                lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
                continue 'outer;
            }
        }
        return Ok(lhs);
    }
}

fn parse_cast(p: &mut Cursor) -> Result<Expr> {
    let mut e = parse_unary(p)?;
    while p.eat_ident("as") {
        let n = p.ident()?;
        let k = ScalarKind::from_name(&n).ok_or_else(|| p.error(format!("unknown type `{n}`")))?;
        e = Expr::Cast(Box::new(e), k);
    }
    Ok(e)
}

fn parse_unary(p: &mut Cursor) -> Result<Expr> {
    if p.eat("-") {
        return Ok(Expr::Neg(Box::new(parse_unary(p)?)));
    }
    if p.eat("!") {
        return Ok(Expr::Not(Box::new(parse_unary(p)?)));
    }
    let mut e = parse_primary(p)?;
    loop {
        if p.eat("[") {
            e = Expr::Access(Box::new(e), Access::Index(parse_list(p, "]")?));
        } else if p.is(".") && matches!(p.peek_at(1), Tok::Int(_)) {
            p.next();
            e = Expr::Access(Box::new(e), Access::Field(p.int()? as usize));
        } else {
            return Ok(e);
        }
    }
}

fn parse_primary(p: &mut Cursor) -> Result<Expr> {
    match p.next() {
        Tok::Int(v) => Ok(Expr::Int(v)),
        Tok::Float(v) => Ok(Expr::Float(v)),
        Tok::Ident(n) if n == "true" => Ok(Expr::Bool(true)),
        Tok::Ident(n) if n == "false" => Ok(Expr::Bool(false)),
        Tok::Ident(n) => {
            let mut dcs = vec![];
            if p.is("::") {
                p.next();
                p.expect("<")?;
                while !p.is(">") {
                    // dyn-const arguments are parsed above comparison level
                    dcs.push(parse_bin(p, 3)?);
                    if !p.eat(",") {
                        break;
                    }
                }
                p.expect(">")?;
                if !p.is("(") {
                    return Err(p.error("expected call arguments"));
                }
            }
            if p.eat("(") {
                let args = parse_list(p, ")")?;
                Ok(Expr::Call { name: n, dcs, args })
            } else {
                Ok(Expr::Var(n))
            }
        }
        Tok::Punct("(") => {
            let mut es = parse_list(p, ")")?;
            if es.len() == 1 {
                Ok(es.pop().unwrap())
            } else {
                Ok(Expr::Tuple(es))
            }
        }
        t => Err(p.error(format!("expected expression, found {}", describe(&t)))),
    }
}
