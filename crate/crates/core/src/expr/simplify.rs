use super::{BinaryOp, Expr, UnaryOp};

pub(super) fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, a) => unary(*op, simplify(a)),
        Expr::Binary(op, l, r) => binary(*op, simplify(l), simplify(r)),
    }
}

/// Builds `op(a)` from an already simplified operand.
pub(super) fn unary(op: UnaryOp, a: Expr) -> Expr {
    if let Expr::Const(c) = a {
        if let Ok(v) = op.apply(c) {
            return Expr::Const(v);
        }
    }
    if op == UnaryOp::Neg {
        if let Expr::Unary(UnaryOp::Neg, inner) = a {
            return *inner;
        }
    }
    Expr::unary(op, a)
}

/// Builds `l op r` from already simplified operands.
pub(super) fn binary(op: BinaryOp, l: Expr, r: Expr) -> Expr {
    if let (Expr::Const(a), Expr::Const(b)) = (&l, &r) {
        if let Ok(v) = op.apply(*a, *b) {
            return Expr::Const(v);
        }
    }
    match op {
        BinaryOp::Add => {
            if l.is_zero() {
                return r;
            }
            if r.is_zero() {
                return l;
            }
        }
        BinaryOp::Sub => {
            if r.is_zero() {
                return l;
            }
            if l.is_zero() {
                return unary(UnaryOp::Neg, r);
            }
        }
        BinaryOp::Mul => {
            if l.is_zero() || r.is_zero() {
                return Expr::Const(0.0);
            }
            if l.is_one() {
                return r;
            }
            if r.is_one() {
                return l;
            }
            if l.as_const() == Some(-1.0) {
                return unary(UnaryOp::Neg, r);
            }
            if r.as_const() == Some(-1.0) {
                return unary(UnaryOp::Neg, l);
            }
        }
        BinaryOp::Div => {
            if r.is_one() {
                return l;
            }
            if l.is_zero() && !r.is_zero() {
                return Expr::Const(0.0);
            }
            // (a*x)/b -> (a/b)*x when a/b is exact
            if let (Expr::Binary(BinaryOp::Mul, ml, mr), Some(b)) = (&l, r.as_const()) {
                if let Some(a) = ml.as_const() {
                    let q = a / b;
                    if q.is_finite() && q * b == a {
                        return binary(BinaryOp::Mul, Expr::Const(q), (**mr).clone());
                    }
                }
            }
        }
        BinaryOp::Pow => {
            if r.is_one() {
                return l;
            }
            if r.is_zero() {
                return Expr::Const(1.0);
            }
        }
    }
    Expr::binary(op, l, r)
}
