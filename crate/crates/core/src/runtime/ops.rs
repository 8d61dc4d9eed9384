//! Scalar semantics shared by the oracle, the executor, and constant folding.
//! Scalars travel as raw `u64` bits: integers are kept canonical for their
//! width (sign- or zero-extended), floats hold their IEEE bits.

use crate::ir::{BinaryOp, ScalarKind};

pub fn canon(k: ScalarKind, v: u64) -> u64 {
    match k {
        ScalarKind::Bool => (v != 0) as u64,
        ScalarKind::I8 => v as i8 as i64 as u64,
        ScalarKind::I16 => v as i16 as i64 as u64,
        ScalarKind::I32 => v as i32 as i64 as u64,
        ScalarKind::U8 => v as u8 as u64,
        ScalarKind::U16 => v as u16 as u64,
        ScalarKind::U32 => v as u32 as u64,
        ScalarKind::F32 => v as u32 as u64,
        ScalarKind::I64 | ScalarKind::U64 | ScalarKind::F64 => v,
    }
}

pub fn to_f64(k: ScalarKind, v: u64) -> f64 {
    match k {
        ScalarKind::F32 => f32::from_bits(v as u32) as f64,
        ScalarKind::F64 => f64::from_bits(v),
        _ if k.is_signed() => v as i64 as f64,
        _ => v as f64,
    }
}

pub fn from_f64(k: ScalarKind, x: f64) -> u64 {
    match k {
        ScalarKind::F32 => (x as f32).to_bits() as u64,
        ScalarKind::F64 => x.to_bits(),
        ScalarKind::Bool => (x != 0.0) as u64,
        _ if k.is_signed() => canon(k, x as i64 as u64),
        _ => canon(k, x as u64),
    }
}

pub fn f32_bits(x: f32) -> u64 {
    x.to_bits() as u64
}

pub fn cast(from: ScalarKind, to: ScalarKind, v: u64) -> u64 {
    if from.is_float() || to.is_float() {
        if from.is_float() && to == ScalarKind::Bool {
            return (to_f64(from, v) != 0.0) as u64;
        }
        return from_f64(to, to_f64(from, v));
    }
    canon(to, v)
}

pub fn neg(k: ScalarKind, v: u64) -> u64 {
    match k {
        ScalarKind::F32 => f32_bits(-f32::from_bits(v as u32)),
        ScalarKind::F64 => (-f64::from_bits(v)).to_bits(),
        _ => canon(k, (v as i64).wrapping_neg() as u64),
    }
}

pub fn not(k: ScalarKind, v: u64) -> u64 {
    match k {
        ScalarKind::Bool => (v == 0) as u64,
        _ => canon(k, !v),
    }
}

fn cmp<T: PartialOrd>(op: BinaryOp, a: T, b: T) -> u64 {
    (match op {
        BinaryOp::Lt => a < b,
        BinaryOp::Le => a <= b,
        BinaryOp::Gt => a > b,
        BinaryOp::Ge => a >= b,
        BinaryOp::Eq => a == b,
        BinaryOp::Ne => a != b,
        _ => unreachable!(),
    }) as u64
}

pub fn binary(op: BinaryOp, k: ScalarKind, a: u64, b: u64) -> Result<u64, String> {
    use BinaryOp::*;
    if k.is_float() {
        let wide = k == ScalarKind::F64;
        let (x, y) = (to_f64(k, a), to_f64(k, b));
        if op.is_comparison() {
            return Ok(if wide {
                cmp(op, x, y)
            } else {
                cmp(op, f32::from_bits(a as u32), f32::from_bits(b as u32))
            });
        }
        if wide {
            let r = match op {
                Add => x + y,
                Sub => x - y,
                Mul => x * y,
                Div => x / y,
                Rem => x % y,
                Min => x.min(y),
                Max => x.max(y),
                _ => return Err(format!("{} is not defined on floats", op.name())),
            };
            return Ok(r.to_bits());
        }
        let (x, y) = (f32::from_bits(a as u32), f32::from_bits(b as u32));
        let r = match op {
            Add => x + y,
            Sub => x - y,
            Mul => x * y,
            Div => x / y,
            Rem => x % y,
            Min => x.min(y),
            Max => x.max(y),
            _ => return Err(format!("{} is not defined on floats", op.name())),
        };
        return Ok(f32_bits(r));
    }
    if op.is_comparison() {
        return Ok(if k.is_signed() { cmp(op, a as i64, b as i64) } else { cmp(op, a, b) });
    }
    let r = match op {
        Add => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Mul => a.wrapping_mul(b),
        Div | Rem => {
            if b == 0 {
                return Err("integer division by zero".into());
            }
            match (op, k.is_signed()) {
                (Div, true) => (a as i64).wrapping_div(b as i64) as u64,
                (Div, false) => a / b,
                (_, true) => (a as i64).wrapping_rem(b as i64) as u64,
                (_, false) => a % b,
            }
        }
        And => a & b,
        Or => a | b,
        Xor => a ^ b,
        Min => {
            if k.is_signed() {
                (a as i64).min(b as i64) as u64
            } else {
                a.min(b)
            }
        }
        Max => {
            if k.is_signed() {
                (a as i64).max(b as i64) as u64
            } else {
                a.max(b)
            }
        }
        _ => unreachable!(),
    };
    Ok(canon(k, r))
}

/// Identity element of a monoid operator, if it has one.
pub fn identity(op: BinaryOp, k: ScalarKind) -> Option<u64> {
    use BinaryOp::*;
    let v = match (op, k.is_float()) {
        (Add, _) | (Or, false) | (Xor, false) => from_f64(k, 0.0),
        (Mul, _) => from_f64(k, 1.0),
        (And, false) => canon(k, u64::MAX),
        (Min, true) => from_f64(k, f64::INFINITY),
        (Max, true) => from_f64(k, f64::NEG_INFINITY),
        (Min, false) => {
            if k.is_signed() {
                canon(k, (u64::MAX >> (65 - k.bits())) as i64 as u64)
            } else {
                canon(k, u64::MAX)
            }
        }
        (Max, false) => {
            if k.is_signed() {
                canon(k, 1u64 << (k.bits() - 1))
            } else {
                0
            }
        }
        _ => return None,
    };
    Some(if k.is_bool() { canon(k, v) } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn signed_narrow_arithmetic_wraps() {
        let k = ScalarKind::I8;
        assert_eq!(binary(BinaryOp::Add, k, canon(k, 127), 1).unwrap() as i64, -128);
        assert_eq!(binary(BinaryOp::Lt, k, canon(k, (-1i64) as u64), 0).unwrap(), 1);
        assert!(binary(BinaryOp::Div, ScalarKind::U32, 1, 0).is_err());
    }

    #[test]
    fn identities() {
        assert_eq!(identity(BinaryOp::Min, ScalarKind::I32).unwrap() as i64, i32::MAX as i64);
        assert_eq!(identity(BinaryOp::Max, ScalarKind::I32).unwrap() as i64, i32::MIN as i64);
        assert_eq!(identity(BinaryOp::Max, ScalarKind::U16), Some(0));
        assert_eq!(identity(BinaryOp::And, ScalarKind::U8), Some(255));
        assert_eq!(identity(BinaryOp::Min, ScalarKind::F32), Some(f32_bits(f32::INFINITY)));
        assert_eq!(identity(BinaryOp::Sub, ScalarKind::I64), None);
    }

    proptest! {
        #[test]
        fn identity_is_neutral(x in any::<i64>(), op in prop::sample::select(vec![BinaryOp::Add, BinaryOp::Mul, BinaryOp::Min, BinaryOp::Max, BinaryOp::And, BinaryOp::Or, BinaryOp::Xor])) {
            for k in [ScalarKind::I32, ScalarKind::U64, ScalarKind::I64, ScalarKind::U8] {
                let v = canon(k, x as u64);
                let e = identity(op, k).unwrap();
                prop_assert_eq!(binary(op, k, e, v).unwrap(), v);
                prop_assert_eq!(binary(op, k, v, e).unwrap(), v);
            }
        }
    }
}
