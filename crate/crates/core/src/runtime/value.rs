use std::fmt;
use std::sync::Arc;

use crate::ir::{Constant, DynConst, ScalarKind, Type};

use super::ops;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayVal {
    pub dims: Vec<u64>,
    pub data: Vec<Value>,
}

/// A runtime value. Arrays are reference counted so that the oracle can
/// share unchanged collections; writes copy on demand.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(ScalarKind, u64),
    Product(Vec<Value>),
    Summation(usize, Box<Value>),
    Array(Arc<ArrayVal>),
}

pub fn eval_dims(ext: &[DynConst], dcs: &[u64]) -> Result<Vec<u64>, String> {
    ext.iter().map(|d| d.eval(dcs).map_err(|e| e.to_string())).collect()
}

impl Value {
    pub fn zero(t: &Type, dcs: &[u64]) -> Result<Value, String> {
        Ok(match t {
            Type::Control => return Err("no value of control type".into()),
            Type::Scalar(k) => Value::Scalar(*k, 0),
            Type::Product(fs) => Value::Product(fs.iter().map(|f| Value::zero(f, dcs)).collect::<Result<_, _>>()?),
            Type::Summation(vs) => Value::Summation(0, Box::new(Value::zero(&vs[0], dcs)?)),
            Type::Array(e, ext) => {
                let dims = eval_dims(ext, dcs)?;
                let n: u64 = dims.iter().product();
                let z = Value::zero(e, dcs)?;
                Value::Array(Arc::new(ArrayVal { dims, data: vec![z; n as usize] }))
            }
        })
    }

    pub fn from_constant(c: &Constant, dcs: &[u64]) -> Result<Value, String> {
        match c {
            Constant::Scalar(k, b) => Ok(Value::Scalar(*k, *b)),
            Constant::Zero(t) => Value::zero(t, dcs),
        }
    }

    pub fn scalar_bits(&self) -> Result<u64, String> {
        match self {
            Value::Scalar(_, b) => Ok(*b),
            v => Err(format!("expected a scalar, found {v}")),
        }
    }

    pub fn as_u64(&self) -> Result<u64, String> {
        self.scalar_bits()
    }

    pub fn f32(x: f32) -> Value {
        Value::Scalar(ScalarKind::F32, ops::f32_bits(x))
    }

    pub fn i64(x: i64) -> Value {
        Value::Scalar(ScalarKind::I64, x as u64)
    }

    pub fn u64(x: u64) -> Value {
        Value::Scalar(ScalarKind::U64, x)
    }

    pub fn array(dims: Vec<u64>, data: Vec<Value>) -> Value {
        Value::Array(Arc::new(ArrayVal { dims, data }))
    }

    pub fn f32_array(dims: Vec<u64>, xs: &[f32]) -> Value {
        Value::array(dims, xs.iter().map(|&x| Value::f32(x)).collect())
    }

    pub fn i64_array(dims: Vec<u64>, xs: &[i64]) -> Value {
        Value::array(dims, xs.iter().map(|&x| Value::i64(x)).collect())
    }

    /// Flattened scalar contents of an array of scalars (or a scalar).
    pub fn i32_array(dims: Vec<u64>, xs: &[i32]) -> Value {
        Value::array(dims, xs.iter().map(|&x| Value::Scalar(ScalarKind::I32, ops::canon(ScalarKind::I32, x as i64 as u64))).collect())
    }

    pub fn scalars(&self) -> Vec<(ScalarKind, u64)> {
        match self {
            Value::Scalar(k, b) => vec![(*k, *b)],
            Value::Array(a) => a.data.iter().flat_map(|v| v.scalars()).collect(),
            Value::Product(fs) => fs.iter().flat_map(|v| v.scalars()).collect(),
            Value::Summation(_, v) => v.scalars(),
        }
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        self.scalars().into_iter().map(|(k, b)| ops::to_f64(k, b)).collect()
    }

    /// Structural check against a type under concrete dynamic constants.
    pub fn conforms(&self, t: &Type, dcs: &[u64]) -> bool {
        match (self, t) {
            (Value::Scalar(k, _), Type::Scalar(tk)) => k == tk,
            (Value::Product(vs), Type::Product(ts)) => {
                vs.len() == ts.len() && vs.iter().zip(ts).all(|(v, t)| v.conforms(t, dcs))
            }
            (Value::Summation(tag, v), Type::Summation(ts)) => ts.get(*tag).is_some_and(|t| v.conforms(t, dcs)),
            (Value::Array(a), Type::Array(e, ext)) => {
                eval_dims(ext, dcs).is_ok_and(|d| d == a.dims) && a.data.iter().all(|v| v.conforms(e, dcs))
            }
            _ => false,
        }
    }

    /// Values equal up to a relative tolerance on floats.
    pub fn approx_eq(&self, other: &Value, rel: f64) -> bool {
        let (a, b) = (self.scalars(), other.scalars());
        a.len() == b.len()
            && a.iter().zip(&b).all(|(&(ka, x), &(kb, y))| {
                if ka != kb {
                    return false;
                }
                if !ka.is_float() {
                    return x == y;
                }
                let (x, y) = (ops::to_f64(ka, x), ops::to_f64(kb, y));
                x == y || (x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-30)
            })
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Scalar(k, b) => write!(f, "{}", crate::ir::dump::scalar_literal(*k, *b)),
            Value::Product(vs) => {
                write!(f, "(")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")
            }
            Value::Summation(t, v) => write!(f, "#{t}({v})"),
            Value::Array(a) => {
                write!(f, "[")?;
                for (i, v) in a.data.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    if i >= 16 {
                        write!(f, "... {} more", a.data.len() - 16)?;
                        break;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}
