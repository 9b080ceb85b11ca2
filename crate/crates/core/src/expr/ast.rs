use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

impl UnaryOp {
    /// Name used in source text for the function-style operators.
    pub fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Sqrt => Some("sqrt"),
            UnaryOp::Abs => Some("abs"),
        }
    }

    pub fn from_function_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "exp" => Some(UnaryOp::Exp),
            "sqrt" => Some(UnaryOp::Sqrt),
            "abs" => Some(UnaryOp::Abs),
            _ => None,
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
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => " + ",
            BinaryOp::Sub => " - ",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Scalar expression tree over phase-space variables and parameters.
///
/// Trees are plain immutable values; every transformation in the crate
/// builds a new tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Param(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Call of a user-registered one-argument function such as a potential.
    Call(String, Box<Expr>),
}

// Printing precedence levels; larger binds tighter.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    pub fn constant(v: f64) -> Self {
        if v < 0.0 {
            Expr::neg(Expr::Const(-v))
        } else {
            Expr::Const(v)
        }
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn param(name: impl Into<String>) -> Self {
        Expr::Param(name.into())
    }

    pub fn neg(e: Expr) -> Self {
        Expr::Unary(UnaryOp::Neg, Box::new(e))
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Self {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Self {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn call(name: impl Into<String>, arg: Expr) -> Self {
        Expr::Call(name.into(), Box::new(arg))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(v) if *v < 0.0 || v.is_sign_negative() => PREC_NEG,
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) | Expr::Call(..) => PREC_ATOM,
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            Expr::Unary(..) => PREC_ATOM,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_ADD,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PREC_MUL,
            Expr::Binary(BinaryOp::Pow, ..) => PREC_POW,
        }
    }

    /// Visits every node in pre-order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => {}
            Expr::Unary(_, e) | Expr::Call(_, e) => e.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
        }
    }

    /// Variable names in order of first appearance.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Var(n) = e {
                if !out.contains(&n.as_str()) {
                    out.push(n);
                }
            }
        });
        out
    }

    /// Parameter names in order of first appearance.
    pub fn parameters(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Param(n) = e {
                if !out.contains(&n.as_str()) {
                    out.push(n);
                }
            }
        });
        out
    }

    /// Replaces variables by expressions, leaving everything else intact.
    pub fn substitute(&self, f: &impl Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Var(n) => f(n).unwrap_or_else(|| self.clone()),
            Expr::Const(_) | Expr::Param(_) => self.clone(),
            Expr::Unary(op, e) => Expr::unary(*op, e.substitute(f)),
            Expr::Call(name, e) => Expr::call(name.clone(), e.substitute(f)),
            Expr::Binary(op, l, r) => Expr::binary(*op, l.substitute(f), r.substitute(f)),
        }
    }
}

fn fmt_child(child: &Expr, needs_parens: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if needs_parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if v.is_sign_negative() {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(n) | Expr::Param(n) => f.write_str(n),
            Expr::Call(name, arg) => write!(f, "{name}({arg})"),
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                fmt_child(e, e.precedence() < PREC_NEG, f)
            }
            Expr::Unary(op, e) => write!(f, "{}({e})", op.function_name().unwrap_or("?")),
            Expr::Binary(op, l, r) => {
                let p = self.precedence();
                match op {
                    BinaryOp::Pow => {
                        // base: atoms or a left-nested power chain; exponent: atoms only
                        fmt_child(l, l.precedence() < PREC_POW, f)?;
                        f.write_str(op.symbol())?;
                        fmt_child(r, r.precedence() < PREC_ATOM, f)
                    }
                    _ => {
                        fmt_child(l, l.precedence() < p, f)?;
                        f.write_str(op.symbol())?;
                        fmt_child(r, r.precedence() <= p, f)
                    }
                }
            }
        }
    }
}
