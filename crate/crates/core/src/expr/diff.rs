use super::simplify::{binary, unary};
use super::{BinaryOp, DiffError, Expr, UnaryOp, Var};

use BinaryOp::*;

fn add(a: Expr, b: Expr) -> Expr {
    binary(Add, a, b)
}

fn sub(a: Expr, b: Expr) -> Expr {
    binary(Sub, a, b)
}

fn mul(a: Expr, b: Expr) -> Expr {
    binary(Mul, a, b)
}

fn div(a: Expr, b: Expr) -> Expr {
    binary(Div, a, b)
}

fn c(x: f64) -> Expr {
    Expr::Const(x)
}

pub(super) fn differentiate(e: &Expr, var: Var) -> Result<Expr, DiffError> {
    let e = e.simplify();
    Ok(d(&e, var)?.simplify())
}

fn d(e: &Expr, var: Var) -> Result<Expr, DiffError> {
    if !e.depends_on(var) {
        return Ok(c(0.0));
    }
    Ok(match e {
        Expr::Const(_) => c(0.0),
        Expr::Var(v) => c(if *v == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = d(a, var)?;
            let a = (**a).clone();
            match op {
                UnaryOp::Neg => unary(UnaryOp::Neg, da),
                UnaryOp::Sin => mul(unary(UnaryOp::Cos, a), da),
                UnaryOp::Cos => mul(unary(UnaryOp::Neg, unary(UnaryOp::Sin, a)), da),
                UnaryOp::Exp => mul(unary(UnaryOp::Exp, a), da),
                UnaryOp::Ln => div(da, a),
                UnaryOp::Sqrt => div(da, mul(c(2.0), unary(UnaryOp::Sqrt, a))),
                UnaryOp::Tanh => {
                    let t = unary(UnaryOp::Tanh, a);
                    mul(sub(c(1.0), binary(Pow, t, c(2.0))), da)
                }
                UnaryOp::Abs => return Err(DiffError::NonDifferentiable(e.to_string())),
            }
        }
        Expr::Binary(op, l, r) => {
            let dl = d(l, var)?;
            let dr = d(r, var)?;
            let (l, r) = ((**l).clone(), (**r).clone());
            match op {
                Add => add(dl, dr),
                Sub => sub(dl, dr),
                Mul => add(mul(dl, r.clone()), mul(l, dr)),
                Div => {
                    if dr.is_zero() {
                        div(dl, r)
                    } else {
                        div(
                            sub(mul(dl, r.clone()), mul(l, dr)),
                            binary(Pow, r, c(2.0)),
                        )
                    }
                }
                Pow => match r.as_const() {
                    Some(k) => mul(mul(c(k), binary(Pow, l, c(k - 1.0))), dl),
                    None => {
                        // d(a^b) = a^b * (b' ln a + b a'/a)
                        let pow = binary(Pow, l.clone(), r.clone());
                        let log_term = mul(dr, unary(UnaryOp::Ln, l.clone()));
                        let base_term = div(mul(r, dl), l);
                        mul(pow, add(log_term, base_term))
                    }
                },
            }
        }
    })
}
