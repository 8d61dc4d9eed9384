use super::region::SetOp;
use crate::ir::Device;

#[derive(Debug, Clone, PartialEq)]
pub enum StaticArg {
    Int(i64),
    Ident(String),
    List(Vec<StaticArg>),
}

impl StaticArg {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            StaticArg::Int(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Star,
    Ident(String),
    Label { func: String, label: String },
    SetOp(SetOp, Box<Expr>, Box<Expr>),
    Call { name: String, statics: Vec<StaticArg>, args: Vec<Expr>, line: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Name(String),
    Tuple(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Let { pat: Pattern, value: Expr, line: usize },
    Expr { value: Expr, line: usize },
    Macro(Macro),
    DeviceAssign { device: Device, region: Expr, line: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macro {
    pub name: String,
    pub statics: Vec<String>,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub ret: Option<Expr>,
    pub line: usize,
}

impl Stmt {
    pub fn line(&self) -> usize {
        match self {
            Stmt::Let { line, .. } | Stmt::Expr { line, .. } | Stmt::DeviceAssign { line, .. } => *line,
            Stmt::Macro(m) => m.line,
        }
    }
}
