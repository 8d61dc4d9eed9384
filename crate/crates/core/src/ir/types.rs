use std::fmt;

use serde::{Deserialize, Serialize};

use super::dynconst::DynConst;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScalarKind {
    Bool,
    I8,
    I16,
    I32,
    I64,
    U8,
    U16,
    U32,
    U64,
    F32,
    F64,
}

impl ScalarKind {
    pub fn bytes(self) -> u64 {
        use ScalarKind::*;
        match self {
            Bool | I8 | U8 => 1,
            I16 | U16 => 2,
            I32 | U32 | F32 => 4,
            I64 | U64 | F64 => 8,
        }
    }

    pub fn bits(self) -> u32 {
        (self.bytes() * 8) as u32
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarKind::F32 | ScalarKind::F64)
    }

    pub fn is_signed(self) -> bool {
        use ScalarKind::*;
        matches!(self, I8 | I16 | I32 | I64)
    }

    pub fn is_unsigned(self) -> bool {
        use ScalarKind::*;
        matches!(self, U8 | U16 | U32 | U64)
    }

    pub fn is_integer(self) -> bool {
        self.is_signed() || self.is_unsigned()
    }

    pub fn is_bool(self) -> bool {
        self == ScalarKind::Bool
    }

    pub fn name(self) -> &'static str {
        use ScalarKind::*;
        match self {
            Bool => "bool",
            I8 => "i8",
            I16 => "i16",
            I32 => "i32",
            I64 => "i64",
            U8 => "u8",
            U16 => "u16",
            U32 => "u32",
            U64 => "u64",
            F32 => "f32",
            F64 => "f64",
        }
    }

    pub fn from_name(s: &str) -> Option<ScalarKind> {
        use ScalarKind::*;
        Some(match s {
            "bool" => Bool,
            "i8" => I8,
            "i16" => I16,
            "i32" => I32,
            "i64" => I64,
            "u8" => U8,
            "u16" => U16,
            "u32" => U32,
            "u64" | "usize" => U64,
            "f32" => F32,
            "f64" => F64,
            _ => return None,
        })
    }
}

/// Value types. `Control` is the type of control nodes only; collections are
/// exactly `Product`, `Summation`, and `Array`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Type {
    Control,
    Scalar(ScalarKind),
    Product(Vec<Type>),
    Summation(Vec<Type>),
    Array(Box<Type>, Vec<DynConst>),
}

impl Type {
    pub fn scalar(k: ScalarKind) -> Type {
        Type::Scalar(k)
    }

    pub fn array(elem: Type, extents: Vec<DynConst>) -> Type {
        Type::Array(Box::new(elem), extents)
    }

    pub fn is_control(&self) -> bool {
        matches!(self, Type::Control)
    }

    pub fn is_collection(&self) -> bool {
        matches!(self, Type::Product(_) | Type::Summation(_) | Type::Array(..))
    }

    pub fn as_scalar(&self) -> Option<ScalarKind> {
        match self {
            Type::Scalar(k) => Some(*k),
            _ => None,
        }
    }

    pub fn is_bool(&self) -> bool {
        self.as_scalar() == Some(ScalarKind::Bool)
    }

    /// Natural alignment: the largest scalar inside, 8 for summation tags.
    pub fn align(&self) -> u64 {
        match self {
            Type::Control => 1,
            Type::Scalar(k) => k.bytes(),
            Type::Product(fs) => fs.iter().map(Type::align).max().unwrap_or(1),
            Type::Summation(_) => 8,
            Type::Array(e, _) => e.align(),
        }
    }

    /// Byte size in the executor's memory layout, padded to alignment.
    pub fn size(&self) -> DynConst {
        match self {
            Type::Control => DynConst::lit(0),
            Type::Scalar(k) => DynConst::lit(k.bytes()),
            Type::Product(fs) => {
                let mut off = DynConst::lit(0);
                for f in fs {
                    off = DynConst::add(DynConst::align_up(off, f.align()), f.size());
                }
                DynConst::align_up(off, self.align())
            }
            Type::Summation(vs) => {
                // 8-byte tag followed by the largest payload; payload sizes are
                // required to be literal so the maximum is static.
                let payload = vs
                    .iter()
                    .map(|v| v.size().as_literal().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                DynConst::lit(8 + payload.div_ceil(8) * 8)
            }
            Type::Array(e, ext) => DynConst::mul(e.size(), DynConst::product(ext.iter())),
        }
    }

    /// Byte offset of product field `idx`.
    pub fn field_offset(fields: &[Type], idx: usize) -> DynConst {
        let mut off = DynConst::lit(0);
        for (i, f) in fields.iter().enumerate() {
            off = DynConst::align_up(off, f.align());
            if i == idx {
                return off;
            }
            off = DynConst::add(off, f.size());
        }
        off
    }

    pub fn substitute(&self, args: &[DynConst]) -> Type {
        match self {
            Type::Control | Type::Scalar(_) => self.clone(),
            Type::Product(fs) => Type::Product(fs.iter().map(|f| f.substitute(args)).collect()),
            Type::Summation(fs) => Type::Summation(fs.iter().map(|f| f.substitute(args)).collect()),
            Type::Array(e, ext) => Type::Array(
                Box::new(e.substitute(args)),
                ext.iter().map(|d| d.substitute(args)).collect(),
            ),
        }
    }

    pub fn dyn_consts(&self, out: &mut Vec<DynConst>) {
        match self {
            Type::Control | Type::Scalar(_) => {}
            Type::Product(fs) | Type::Summation(fs) => fs.iter().for_each(|f| f.dyn_consts(out)),
            Type::Array(e, ext) => {
                e.dyn_consts(out);
                out.extend(ext.iter().cloned());
            }
        }
    }

    pub fn display_with<'a>(&'a self, names: &'a [String]) -> DisplayType<'a> {
        DisplayType { ty: self, names }
    }
}

pub struct DisplayType<'a> {
    ty: &'a Type,
    names: &'a [String],
}

impl fmt::Display for DisplayType<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ty {
            Type::Control => write!(f, "ctrl"),
            Type::Scalar(k) => write!(f, "{}", k.name()),
            Type::Product(fs) | Type::Summation(fs) => {
                let (open, close) = if matches!(self.ty, Type::Product(_)) { ("(", ")") } else { ("sum<", ">") };
                write!(f, "{open}")?;
                for (i, t) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", t.display_with(self.names))?;
                }
                write!(f, "{close}")
            }
            Type::Array(e, ext) => {
                write!(f, "{}[", e.display_with(self.names))?;
                for (i, d) in ext.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", d.display_with(self.names))?;
                }
                write!(f, "]")
            }
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.display_with(&[]).fmt(f)
    }
}
