use std::fmt;

use serde::{Deserialize, Serialize};

/// A symbolic non-negative integer over a function's dynamic-constant
/// parameters. Values are always kept in normalized form when built through
/// the smart constructors (`add`, `sub`, `mul`, `div`), so structural
/// equality doubles as semantic equality for the shapes passes produce
/// (e.g. `n / 4 / 16` and `n / 64`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DynConst {
    Param(usize),
    Literal(u64),
    Add(Box<DynConst>, Box<DynConst>),
    Sub(Box<DynConst>, Box<DynConst>),
    Mul(Box<DynConst>, Box<DynConst>),
    Div(Box<DynConst>, Box<DynConst>),
    /// Round up to a multiple of the given power of two. Only produced by the
    /// allocation planner for padded offsets.
    AlignUp(Box<DynConst>, u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DynConstError {
    UnboundParam(usize),
    Underflow(String),
    Overflow(String),
    DivByZero(String),
    Inexact { expr: String, dividend: u64, divisor: u64 },
}

impl fmt::Display for DynConstError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynConstError::UnboundParam(i) => write!(f, "dynamic constant #{i} is not bound"),
            DynConstError::Underflow(e) => write!(f, "dynamic constant `{e}` is negative"),
            DynConstError::Overflow(e) => write!(f, "dynamic constant `{e}` overflows"),
            DynConstError::DivByZero(e) => write!(f, "dynamic constant `{e}` divides by zero"),
            DynConstError::Inexact { expr, dividend, divisor } => write!(
                f,
                "dynamic constant `{expr}` requires {divisor} | {dividend}"
            ),
        }
    }
}

#[allow(clippy::should_implement_trait)]
impl DynConst {
    pub fn lit(v: u64) -> Self {
        DynConst::Literal(v)
    }

    pub fn param(i: usize) -> Self {
        DynConst::Param(i)
    }

    pub fn as_literal(&self) -> Option<u64> {
        match self {
            DynConst::Literal(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_one(&self) -> bool {
        self.as_literal() == Some(1)
    }

    pub fn add(a: DynConst, b: DynConst) -> DynConst {
        DynConst::Add(Box::new(a), Box::new(b)).normalize()
    }

    pub fn sub(a: DynConst, b: DynConst) -> DynConst {
        DynConst::Sub(Box::new(a), Box::new(b)).normalize()
    }

    pub fn mul(a: DynConst, b: DynConst) -> DynConst {
        DynConst::Mul(Box::new(a), Box::new(b)).normalize()
    }

    pub fn div(a: DynConst, b: DynConst) -> DynConst {
        DynConst::Div(Box::new(a), Box::new(b)).normalize()
    }

    pub fn align_up(a: DynConst, align: u64) -> DynConst {
        assert!(align.is_power_of_two());
        DynConst::AlignUp(Box::new(a), align).normalize()
    }

    /// Product of a list of factors; the empty product is 1.
    pub fn product<'a>(it: impl IntoIterator<Item = &'a DynConst>) -> DynConst {
        it.into_iter()
            .fold(DynConst::lit(1), |acc, d| DynConst::mul(acc, d.clone()))
    }

    /// Fold literal arithmetic, collapse nested literal divisions, drop
    /// identities, and sort operands of commutative nodes.
    pub fn normalize(&self) -> DynConst {
        use DynConst::*;
        match self {
            Param(_) | Literal(_) => self.clone(),
            Add(a, b) => {
                let (a, b) = (a.normalize(), b.normalize());
                match (&a, &b) {
                    (Literal(x), Literal(y)) => match x.checked_add(*y) {
                        Some(v) => Literal(v),
                        None => Add(Box::new(a), Box::new(b)),
                    },
                    (Literal(0), _) => b,
                    (_, Literal(0)) => a,
                    _ => {
                        let (a, b) = if a <= b { (a, b) } else { (b, a) };
                        Add(Box::new(a), Box::new(b))
                    }
                }
            }
            Sub(a, b) => {
                let (a, b) = (a.normalize(), b.normalize());
                match (&a, &b) {
                    (Literal(x), Literal(y)) if x >= y => Literal(x - y),
                    (_, Literal(0)) => a,
                    _ if a == b => Literal(0),
                    _ => Sub(Box::new(a), Box::new(b)),
                }
            }
            Mul(a, b) => {
                let (a, b) = (a.normalize(), b.normalize());
                match (&a, &b) {
                    (Literal(x), Literal(y)) => match x.checked_mul(*y) {
                        Some(v) => Literal(v),
                        None => Mul(Box::new(a), Box::new(b)),
                    },
                    (Literal(0), _) | (_, Literal(0)) => Literal(0),
                    (Literal(1), _) => b,
                    (_, Literal(1)) => a,
                    _ => {
                        let (a, b) = if a <= b { (a, b) } else { (b, a) };
                        Mul(Box::new(a), Box::new(b))
                    }
                }
            }
            Div(a, b) => {
                let (a, b) = (a.normalize(), b.normalize());
                match (&a, &b) {
                    (Literal(x), Literal(y)) if *y != 0 && x % y == 0 => Literal(x / y),
                    (_, Literal(1)) => a,
                    _ if a == b && !matches!(a, Literal(0)) => Literal(1),
                    // (x / c1) / c2 == x / (c1 * c2) whenever both divisions are exact.
                    (Div(inner, c1), Literal(c2)) => match c1.as_literal() {
                        Some(c1) if c1.checked_mul(*c2).is_some() => {
                            DynConst::div((**inner).clone(), Literal(c1 * c2))
                        }
                        _ => Div(Box::new(a), Box::new(b)),
                    },
                    // (c1 * x) / c2 with c2 | c1.
                    (Mul(l, r), Literal(c2)) if *c2 != 0 => match (l.as_literal(), r.as_literal()) {
                        (Some(c1), _) if c1 % c2 == 0 => DynConst::mul(Literal(c1 / c2), (**r).clone()),
                        (_, Some(c1)) if c1 % c2 == 0 => DynConst::mul((**l).clone(), Literal(c1 / c2)),
                        _ => Div(Box::new(a), Box::new(b)),
                    },
                    _ => Div(Box::new(a), Box::new(b)),
                }
            }
            AlignUp(a, k) => {
                let a = a.normalize();
                match &a {
                    Literal(x) => Literal(x.div_ceil(*k) * k),
                    _ if *k == 1 => a,
                    _ => AlignUp(Box::new(a), *k),
                }
            }
        }
    }

    pub fn eval(&self, params: &[u64]) -> Result<u64, DynConstError> {
        use DynConst::*;
        Ok(match self {
            Param(i) => *params.get(*i).ok_or(DynConstError::UnboundParam(*i))?,
            Literal(v) => *v,
            Add(a, b) => a
                .eval(params)?
                .checked_add(b.eval(params)?)
                .ok_or_else(|| DynConstError::Overflow(self.to_string()))?,
            Sub(a, b) => a
                .eval(params)?
                .checked_sub(b.eval(params)?)
                .ok_or_else(|| DynConstError::Underflow(self.to_string()))?,
            Mul(a, b) => a
                .eval(params)?
                .checked_mul(b.eval(params)?)
                .ok_or_else(|| DynConstError::Overflow(self.to_string()))?,
            Div(a, b) => {
                let (x, y) = (a.eval(params)?, b.eval(params)?);
                if y == 0 {
                    return Err(DynConstError::DivByZero(self.to_string()));
                }
                if x % y != 0 {
                    return Err(DynConstError::Inexact {
                        expr: self.to_string(),
                        dividend: x,
                        divisor: y,
                    });
                }
                x / y
            }
            AlignUp(a, k) => a.eval(params)?.div_ceil(*k) * k,
        })
    }

    /// Replace `Param(i)` with `args[i]`.
    pub fn substitute(&self, args: &[DynConst]) -> DynConst {
        use DynConst::*;
        match self {
            Param(i) => args.get(*i).cloned().unwrap_or(Param(*i)),
            Literal(_) => self.clone(),
            Add(a, b) => DynConst::add(a.substitute(args), b.substitute(args)),
            Sub(a, b) => DynConst::sub(a.substitute(args), b.substitute(args)),
            Mul(a, b) => DynConst::mul(a.substitute(args), b.substitute(args)),
            Div(a, b) => DynConst::div(a.substitute(args), b.substitute(args)),
            AlignUp(a, k) => DynConst::align_up(a.substitute(args), *k),
        }
    }

    pub fn max_param(&self) -> Option<usize> {
        use DynConst::*;
        match self {
            Param(i) => Some(*i),
            Literal(_) => None,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.max_param().max(b.max_param()),
            AlignUp(a, _) => a.max_param(),
        }
    }

    /// Every divisibility requirement `(divisor, dividend)` embedded in this
    /// expression.
    pub fn divisions(&self, out: &mut Vec<(DynConst, DynConst)>) {
        use DynConst::*;
        match self {
            Param(_) | Literal(_) => {}
            Div(a, b) => {
                a.divisions(out);
                b.divisions(out);
                out.push(((**b).clone(), (**a).clone()));
            }
            Add(a, b) | Sub(a, b) | Mul(a, b) => {
                a.divisions(out);
                b.divisions(out);
            }
            AlignUp(a, _) => a.divisions(out),
        }
    }

    /// Render using the given parameter names (falls back to `#i`).
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> DisplayDynConst<'a> {
        DisplayDynConst { dc: self, names }
    }
}

pub struct DisplayDynConst<'a> {
    dc: &'a DynConst,
    names: &'a [String],
}

impl DisplayDynConst<'_> {
    fn write(&self, dc: &DynConst, f: &mut fmt::Formatter<'_>, top: bool) -> fmt::Result {
        use DynConst::*;
        let bin = |f: &mut fmt::Formatter<'_>, a: &DynConst, op: &str, b: &DynConst| -> fmt::Result {
            if !top {
                write!(f, "(")?;
            }
            self.write(a, f, false)?;
            write!(f, "{op}")?;
            self.write(b, f, false)?;
            if !top {
                write!(f, ")")?;
            }
            Ok(())
        };
        match dc {
            Param(i) => match self.names.get(*i) {
                Some(n) => write!(f, "{n}"),
                None => write!(f, "#{i}"),
            },
            Literal(v) => write!(f, "{v}"),
            Add(a, b) => bin(f, a, "+", b),
            Sub(a, b) => bin(f, a, "-", b),
            Mul(a, b) => bin(f, a, "*", b),
            Div(a, b) => bin(f, a, "/", b),
            AlignUp(a, k) => {
                write!(f, "align(")?;
                self.write(a, f, true)?;
                write!(f, ", {k})")
            }
        }
    }
}

impl fmt::Display for DisplayDynConst<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.dc, f, true)
    }
}

impl fmt::Display for DynConst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.display_with(&[]).fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n() -> DynConst {
        DynConst::param(0)
    }

    #[test]
    fn nested_literal_division_collapses() {
        let a = DynConst::div(DynConst::div(n(), DynConst::lit(4)), DynConst::lit(16));
        assert_eq!(a, DynConst::div(n(), DynConst::lit(64)));
        assert_eq!(a.to_string(), "#0/64");
    }

    #[test]
    fn commutative_operands_are_sorted() {
        let a = DynConst::mul(DynConst::param(1), n());
        let b = DynConst::mul(n(), DynConst::param(1));
        assert_eq!(a, b);
        assert_eq!(DynConst::add(DynConst::lit(2), DynConst::lit(3)), DynConst::lit(5));
    }

    #[test]
    fn inexact_division_is_an_evaluation_error() {
        let a = DynConst::div(n(), DynConst::lit(4));
        assert_eq!(a.eval(&[8]), Ok(2));
        assert!(matches!(a.eval(&[6]), Err(DynConstError::Inexact { dividend: 6, divisor: 4, .. })));
        assert!(matches!(DynConst::sub(DynConst::lit(1), n()).eval(&[3]), Err(DynConstError::Underflow(_))));
    }

    #[test]
    fn align_up_rounds() {
        let a = DynConst::align_up(DynConst::mul(n(), DynConst::lit(4)), 8);
        assert_eq!(a.eval(&[3]), Ok(16));
        assert_eq!(a.eval(&[4]), Ok(16));
    }

    fn arb_dc() -> impl Strategy<Value = DynConst> {
        let leaf = prop_oneof![(0usize..3).prop_map(DynConst::Param), (0u64..20).prop_map(DynConst::Literal)];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| DynConst::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| DynConst::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), 1u64..5).prop_map(|(a, b)| DynConst::Div(Box::new(a), Box::new(DynConst::Literal(b)))),
            ]
        })
    }

    proptest! {
        #[test]
        fn normalization_preserves_value(e in arb_dc(), p in proptest::collection::vec(0u64..50, 3)) {
            let before = e.eval(&p);
            let after = e.normalize().eval(&p);
            // Normalization may only turn an inexact division into an exact one
            // when literals fold; values agree whenever the original evaluates.
            if let Ok(v) = before {
                prop_assert_eq!(after, Ok(v));
            }
        }

        #[test]
        fn normalization_is_idempotent(e in arb_dc()) {
            let once = e.normalize();
            prop_assert_eq!(once.normalize(), once);
        }
    }
}
