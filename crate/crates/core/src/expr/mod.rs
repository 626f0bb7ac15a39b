//! Scalar expression language over state (`z1..zn`) and input (`u1..um`)
//! variables.
//!
//! Expressions are parsed from a small infix grammar, evaluated in IEEE
//! double precision with explicit domain checks, and differentiated
//! symbolically. Parsing applies constant folding and the usual 0/1
//! identities, so `"z1^2/(2*2.0)"` yields `z1^2/4`.

mod diff;
mod parse;
mod simplify;

use std::fmt;

use thiserror::Error;

pub use parse::{parse, parse_with_params, ParseError};

/// Which family a variable belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    State,
    Input,
}

/// A variable reference. `index` is zero-based; the printed name is one-based
/// (`Var::state(0)` prints as `z1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub kind: VarKind,
    pub index: usize,
}

impl Var {
    pub fn state(index: usize) -> Self {
        Self { kind: VarKind::State, index }
    }

    pub fn input(index: usize) -> Self {
        Self { kind: VarKind::Input, index }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            VarKind::State => 'z',
            VarKind::Input => 'u',
        };
        write!(f, "{}{}", prefix, self.index + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Abs,
}

impl UnaryOp {
    pub(crate) fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "ln" => Self::Ln,
            "sqrt" => Self::Sqrt,
            "tanh" => Self::Tanh,
            "abs" => Self::Abs,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Neg => "-",
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Ln => "ln",
            Self::Sqrt => "sqrt",
            Self::Tanh => "tanh",
            Self::Abs => "abs",
        }
    }

    /// Applies the operation, returning a domain-violation message on failure.
    pub(crate) fn apply(&self, x: f64) -> Result<f64, &'static str> {
        let y = match self {
            Self::Neg => -x,
            Self::Sin => x.sin(),
            Self::Cos => x.cos(),
            Self::Exp => x.exp(),
            Self::Ln => {
                if x <= 0.0 {
                    return Err("logarithm of a nonpositive number");
                }
                x.ln()
            }
            Self::Sqrt => {
                if x < 0.0 {
                    return Err("square root of a negative number");
                }
                x.sqrt()
            }
            Self::Tanh => x.tanh(),
            Self::Abs => x.abs(),
        };
        if y.is_finite() {
            Ok(y)
        } else {
            Err("non-finite result")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(&self) -> char {
        match self {
            Self::Add => '+',
            Self::Sub => '-',
            Self::Mul => '*',
            Self::Div => '/',
            Self::Pow => '^',
        }
    }

    pub(crate) fn apply(&self, a: f64, b: f64) -> Result<f64, &'static str> {
        let y = match self {
            Self::Add => a + b,
            Self::Sub => a - b,
            Self::Mul => a * b,
            Self::Div => {
                if b == 0.0 {
                    return Err("division by zero");
                }
                a / b
            }
            Self::Pow => {
                if a == 0.0 && b < 0.0 {
                    return Err("division by zero");
                }
                let y = a.powf(b);
                if y.is_nan() {
                    return Err("negative base with non-integer exponent");
                }
                y
            }
        };
        if y.is_finite() {
            Ok(y)
        } else {
            Err("non-finite result")
        }
    }
}

/// Expression tree. Immutable once built; `Send + Sync`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Values for the state and input variables.
#[derive(Debug, Clone, Copy)]
pub struct Binding<'a> {
    pub z: &'a [f64],
    pub u: &'a [f64],
}

impl<'a> Binding<'a> {
    pub fn new(z: &'a [f64], u: &'a [f64]) -> Self {
        Self { z, u }
    }

    pub fn state(z: &'a [f64]) -> Self {
        Self { z, u: &[] }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {reason} in `{expr}`")]
    Domain { reason: &'static str, expr: String },
    #[error("variable {var} is not bound")]
    Unbound { var: Var },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("`{0}` is not differentiable")]
    NonDifferentiable(String),
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Self {
        Expr::Var(v)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn eval(&self, b: &Binding<'_>) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => {
                let slot = match v.kind {
                    VarKind::State => b.z.get(v.index),
                    VarKind::Input => b.u.get(v.index),
                };
                slot.copied().ok_or(EvalError::Unbound { var: *v })
            }
            Expr::Unary(op, a) => {
                let x = a.eval(b)?;
                op.apply(x).map_err(|reason| EvalError::Domain {
                    reason,
                    expr: self.to_string(),
                })
            }
            Expr::Binary(op, l, r) => {
                let x = l.eval(b)?;
                let y = r.eval(b)?;
                op.apply(x, y).map_err(|reason| EvalError::Domain {
                    reason,
                    expr: self.to_string(),
                })
            }
        }
    }

    /// Exact symbolic derivative with respect to `var`, simplified.
    pub fn differentiate(&self, var: Var) -> Result<Expr, DiffError> {
        diff::differentiate(self, var)
    }

    /// Constant folding and 0/1 identities, applied bottom-up.
    pub fn simplify(&self) -> Expr {
        simplify::simplify(self)
    }

    /// Rewrites every variable through `f`.
    pub fn map_vars(&self, f: &impl Fn(Var) -> Var) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => Expr::Var(f(*v)),
            Expr::Unary(op, a) => Expr::unary(*op, a.map_vars(f)),
            Expr::Binary(op, l, r) => Expr::binary(*op, l.map_vars(f), r.map_vars(f)),
        }
    }

    /// Replaces variables by expressions; variables for which `f` returns
    /// `None` are kept.
    pub fn substitute(&self, f: &impl Fn(Var) -> Option<Expr>) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => f(*v).unwrap_or(Expr::Var(*v)),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(f)),
            Expr::Binary(op, l, r) => Expr::binary(*op, l.substitute(f), r.substitute(f)),
        }
    }

    /// Calls `visit` on every variable occurrence.
    pub fn for_each_var(&self, visit: &mut impl FnMut(Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => visit(*v),
            Expr::Unary(_, a) => a.for_each_var(visit),
            Expr::Binary(_, l, r) => {
                l.for_each_var(visit);
                r.for_each_var(visit);
            }
        }
    }

    pub fn depends_on(&self, var: Var) -> bool {
        let mut found = false;
        self.for_each_var(&mut |v| found |= v == var);
        found
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if c.is_sign_negative() => 0,
            Expr::Const(_) | Expr::Var(_) => 5,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Unary(_, _) => 5,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
            Expr::Binary(BinaryOp::Pow, _, _) => 4,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

// Printing re-parses to the same tree: parentheses are inserted wherever
// precedence or associativity would otherwise regroup the operands.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, l, r) => {
                let p = self.precedence();
                let (lp, rp) = if *op == BinaryOp::Pow {
                    (l.precedence() <= p, r.precedence() < 3)
                } else {
                    (l.precedence() < p, r.precedence() <= p)
                };
                write_child(f, l, lp)?;
                match op {
                    BinaryOp::Add | BinaryOp::Sub => write!(f, " {} ", op.symbol())?,
                    _ => write!(f, "{}", op.symbol())?,
                }
                write_child(f, r, rp)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str, n: usize, m: usize) -> Expr {
        parse(text, n, m).unwrap()
    }

    #[test]
    fn folds_constant_denominator() {
        let e = p("z1^2/(2*2.0)", 1, 0);
        let expected = Expr::binary(
            BinaryOp::Div,
            Expr::binary(BinaryOp::Pow, Expr::var(Var::state(0)), Expr::Const(2.0)),
            Expr::Const(4.0),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn input_variables_parse() {
        let e = p("sin(z1)*u1", 1, 1);
        assert!(e.depends_on(Var::input(0)));
        let v = e.eval(&Binding::new(&[0.5], &[2.0])).unwrap();
        assert_eq!(v, 0.5f64.sin() * 2.0);
    }

    #[test]
    fn evaluates_square() {
        assert_eq!(p("z1^2", 1, 0).eval(&Binding::state(&[3.0])).unwrap(), 9.0);
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let err = p("1/z1", 1, 0).eval(&Binding::state(&[0.0])).unwrap_err();
        match err {
            EvalError::Domain { reason, expr } => {
                assert_eq!(reason, "division by zero");
                assert_eq!(expr, "1.0/z1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_and_sqrt_domains() {
        assert!(p("ln(z1)", 1, 0).eval(&Binding::state(&[0.0])).is_err());
        assert!(p("ln(z1)", 1, 0).eval(&Binding::state(&[-1.0])).is_err());
        assert!(p("sqrt(z1)", 1, 0).eval(&Binding::state(&[-1e-300])).is_err());
        assert!(p("z1^0.5", 1, 0).eval(&Binding::state(&[-1.0])).is_err());
        assert_eq!(p("sqrt(z1)", 1, 0).eval(&Binding::state(&[4.0])).unwrap(), 2.0);
    }

    #[test]
    fn rigid_body_first_component() {
        let e = p("z1*z2*(1/3 - 1/2)", 2, 0);
        let v = e.eval(&Binding::state(&[1.0, 1.0])).unwrap();
        assert!((v + 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn derivative_of_half_square_is_identity() {
        let d = p("z1^2/2", 1, 0).differentiate(Var::state(0)).unwrap();
        assert_eq!(d, Expr::var(Var::state(0)));
    }

    #[test]
    fn derivative_wrt_absent_variable_is_zero() {
        let d = p("z1*z3", 3, 0).differentiate(Var::state(1)).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn rigid_body_gradient() {
        let h = p("z1^2/(2*1) + z2^2/(2*2) + z3^2/(2*3)", 3, 0);
        let z = [0.7, -1.3, 2.1];
        let b = Binding::state(&z);
        let grad: Vec<f64> = (0..3)
            .map(|k| h.differentiate(Var::state(k)).unwrap().eval(&b).unwrap())
            .collect();
        assert_eq!(grad[0], z[0]);
        assert_eq!(grad[1], z[1] / 2.0);
        assert!((grad[2] - z[2] / 3.0).abs() <= f64::EPSILON * z[2].abs());
    }

    #[test]
    fn abs_evaluates_but_does_not_differentiate() {
        let e = p("z1*abs(z1)", 1, 0);
        assert_eq!(e.eval(&Binding::state(&[-2.0])).unwrap(), -4.0);
        assert!(matches!(
            e.differentiate(Var::state(0)),
            Err(DiffError::NonDifferentiable(_))
        ));
    }

    #[test]
    fn second_derivatives_give_hessian() {
        let h = p("z1^2*z2 + sin(z2)", 2, 0);
        let d12 = h
            .differentiate(Var::state(0))
            .unwrap()
            .differentiate(Var::state(1))
            .unwrap();
        let d21 = h
            .differentiate(Var::state(1))
            .unwrap()
            .differentiate(Var::state(0))
            .unwrap();
        let b = Binding::state(&[1.5, 0.3]);
        assert_eq!(d12.eval(&b).unwrap(), 3.0);
        assert_eq!(d21.eval(&b).unwrap(), 3.0);
    }

    #[test]
    fn printing_negative_constants_reparses() {
        let e = p("z1*(-2.5) - -z2^2", 2, 0);
        let printed = e.to_string();
        assert_eq!(parse(&printed, 2, 0).unwrap(), e);
    }
}
