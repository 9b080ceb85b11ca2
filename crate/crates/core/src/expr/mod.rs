//! Scalar expressions over named phase-space variables and parameters.
//!
//! Expressions are parsed once into an immutable [`Expr`] tree and then
//! evaluated either for their value or, through forward-mode [`Dual`]
//! arithmetic, for value and gradient in a single pass.

mod ast;
mod dual;
mod eval;
mod parser;

pub use ast::{BinaryOp, Expr, UnaryOp};
pub use dual::Dual;
pub use eval::{eval, grad, value_and_grad, Bindings, Env, FunctionTable, UserFunction};
pub use parser::{parse_expression, Scope};
