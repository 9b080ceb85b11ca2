use std::collections::{BTreeMap, HashMap};

use super::ast::{BinaryOp, Expr, UnaryOp};
use super::dual::Dual;
use super::parser::{parse_expression, Scope};
use crate::error::{Error, Result};

/// A user-registered smooth one-argument function, e.g. `V(x) = x^2/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserFunction {
    pub arg: String,
    pub body: Expr,
}

/// Named user functions. A function body may call only functions that
/// were defined before it, which rules out recursion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FunctionTable {
    defs: BTreeMap<String, UserFunction>,
}

impl FunctionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses and registers `name(arg) = body`. The body may refer to
    /// `arg`, to the given parameters and to already registered functions.
    pub fn define(
        &mut self,
        name: &str,
        arg: &str,
        body: &str,
        parameters: &[String],
    ) -> Result<()> {
        if UnaryOp::from_function_name(name).is_some() {
            return Err(Error::Syntax {
                offset: 0,
                message: format!("`{name}` shadows a builtin function"),
            });
        }
        let scope = Scope {
            variables: vec![arg.to_string()],
            parameters: parameters.to_vec(),
            functions: self.names(),
        };
        let body = parse_expression(body, &scope)?;
        self.defs.insert(
            name.to_string(),
            UserFunction {
                arg: arg.to_string(),
                body,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&UserFunction> {
        self.defs.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.defs.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &UserFunction)> {
        self.defs.iter()
    }
}

/// Source of leaf values during evaluation.
pub trait Env {
    fn lookup(&self, name: &str) -> Option<f64>;
    fn functions(&self) -> &FunctionTable;
}

/// Plain name-to-value binding.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    pub values: HashMap<String, f64>,
    pub functions: FunctionTable,
}

impl Bindings {
    pub fn new(functions: FunctionTable) -> Self {
        Bindings {
            values: HashMap::new(),
            functions,
        }
    }

    pub fn set(&mut self, name: &str, v: f64) -> &mut Self {
        self.values.insert(name.to_string(), v);
        self
    }

    pub fn with<S: AsRef<str>>(mut self, pairs: &[(S, f64)]) -> Self {
        for (n, v) in pairs {
            self.values.insert(n.as_ref().to_string(), *v);
        }
        self
    }
}

impl Env for Bindings {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    fn functions(&self) -> &FunctionTable {
        &self.functions
    }
}

fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

/// Arithmetic needed by the evaluator; implemented for `f64` and [`Dual`].
trait Scalar: Clone {
    fn lift(v: f64) -> Self;
    fn val(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn unary(&self, op: UnaryOp) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, o: &Self) -> Self;
}

impl Scalar for f64 {
    fn lift(v: f64) -> Self {
        v
    }
    fn val(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn unary(&self, op: UnaryOp) -> Self {
        match op {
            UnaryOp::Neg => -self,
            UnaryOp::Sin => self.sin(),
            UnaryOp::Cos => self.cos(),
            UnaryOp::Exp => self.exp(),
            UnaryOp::Sqrt => self.sqrt(),
            UnaryOp::Abs => self.abs(),
        }
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn powf(&self, o: &Self) -> Self {
        f64::powf(*self, *o)
    }
}

impl Scalar for Dual {
    fn lift(v: f64) -> Self {
        Dual::constant(v)
    }
    fn val(&self) -> f64 {
        self.value
    }
    fn add(&self, o: &Self) -> Self {
        Dual::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        Dual::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Dual::mul(self, o)
    }
    fn div(&self, o: &Self) -> Self {
        Dual::div(self, o)
    }
    fn unary(&self, op: UnaryOp) -> Self {
        match op {
            UnaryOp::Neg => self.neg(),
            UnaryOp::Sin => self.sin(),
            UnaryOp::Cos => self.cos(),
            UnaryOp::Exp => self.exp(),
            UnaryOp::Sqrt => self.sqrt(),
            UnaryOp::Abs => self.abs(),
        }
    }
    fn powi(&self, n: i32) -> Self {
        Dual::powi(self, n)
    }
    fn powf(&self, o: &Self) -> Self {
        Dual::powf(self, o)
    }
}

struct Evaluator<'a, S> {
    functions: &'a FunctionTable,
    leaf: &'a dyn Fn(&str) -> Option<S>,
}

impl<S: Scalar> Evaluator<'_, S> {
    fn eval(&self, e: &Expr, local: Option<(&str, &S)>) -> Result<S> {
        let out = match e {
            Expr::Const(v) => S::lift(*v),
            Expr::Var(n) | Expr::Param(n) => match local {
                Some((arg, v)) if arg == n => v.clone(),
                _ => (self.leaf)(n).ok_or_else(|| domain(format!("no value bound for `{n}`")))?,
            },
            Expr::Unary(op, inner) => {
                let x = self.eval(inner, local)?;
                if *op == UnaryOp::Sqrt && x.val() < 0.0 {
                    return Err(domain(format!("sqrt of negative value {}", x.val())));
                }
                x.unary(*op)
            }
            Expr::Binary(op, l, r) => {
                let a = self.eval(l, local)?;
                let b = self.eval(r, local)?;
                match op {
                    BinaryOp::Add => a.add(&b),
                    BinaryOp::Sub => a.sub(&b),
                    BinaryOp::Mul => a.mul(&b),
                    BinaryOp::Div => {
                        if b.val() == 0.0 {
                            return Err(domain("division by zero"));
                        }
                        a.div(&b)
                    }
                    BinaryOp::Pow => pow(&a, &b, integer_exponent(r))?,
                }
            }
            Expr::Call(name, arg) => {
                let f = self
                    .functions
                    .get(name)
                    .ok_or_else(|| domain(format!("function `{name}` is not registered")))?;
                let x = self.eval(arg, local)?;
                self.eval(&f.body, Some((f.arg.as_str(), &x)))?
            }
        };
        if !out.val().is_finite() {
            return Err(domain(format!("non-finite result in `{e}`")));
        }
        Ok(out)
    }
}

/// Exponents written as integer literals (optionally negated) use `powi`
/// and accept any base; everything else needs a positive base.
fn integer_exponent(e: &Expr) -> Option<i32> {
    match e {
        Expr::Const(v) if v.fract() == 0.0 && v.abs() <= f64::from(i32::MAX) => Some(*v as i32),
        Expr::Unary(UnaryOp::Neg, inner) => integer_exponent(inner).map(|n| -n),
        _ => None,
    }
}

fn pow<S: Scalar>(base: &S, exponent: &S, integer: Option<i32>) -> Result<S> {
    if let Some(n) = integer {
        if n < 0 && base.val() == 0.0 {
            return Err(domain("zero raised to a negative power"));
        }
        return Ok(base.powi(n));
    }
    if base.val() <= 0.0 {
        return Err(domain(format!(
            "non-integer power requires a positive base, got {}",
            base.val()
        )));
    }
    Ok(base.powf(exponent))
}

/// Value of `expr` under `env`.
pub fn eval(expr: &Expr, env: &impl Env) -> Result<f64> {
    let leaf = |n: &str| env.lookup(n);
    Evaluator {
        functions: env.functions(),
        leaf: &leaf,
    }
    .eval(expr, None)
}

/// Value and partial derivatives with respect to `wrt`, in that order.
/// Names not listed in `wrt` are treated as constants.
pub fn value_and_grad<S: AsRef<str>>(
    expr: &Expr,
    env: &impl Env,
    wrt: &[S],
) -> Result<(f64, Vec<f64>)> {
    let slots = wrt.len();
    let leaf = |n: &str| {
        let v = env.lookup(n)?;
        Some(match wrt.iter().position(|w| w.as_ref() == n) {
            Some(slot) => Dual::variable(v, slot, slots),
            None => Dual::constant(v),
        })
    };
    let d = Evaluator {
        functions: env.functions(),
        leaf: &leaf,
    }
    .eval(expr, None)?;
    Ok((d.value, d.gradient(slots)))
}

/// Partial derivatives with respect to `wrt`.
pub fn grad<S: AsRef<str>>(expr: &Expr, env: &impl Env, wrt: &[S]) -> Result<Vec<f64>> {
    value_and_grad(expr, env, wrt).map(|(_, g)| g)
}
