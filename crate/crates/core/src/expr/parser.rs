//! Recursive-descent parser for the scalar expression grammar.
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := primary ('^' exponent)*
//! exponent := '-' exponent | primary
//! primary  := number | name | name '(' expr ')' | '(' expr ')'
//! number   := digits ['.' digits] [('e' | 'E') ['+' | '-'] digits]
//! ```
//!
//! Binary operators of equal precedence associate to the left, `^`
//! included. Names resolve against a [`Scope`]; the builtin functions
//! `sin cos exp sqrt abs` are always available. Error offsets are 0-based
//! character positions into the source.

use super::ast::{BinaryOp, Expr, UnaryOp};
use crate::error::{Error, Result};

/// Names an expression may refer to.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub variables: Vec<String>,
    pub parameters: Vec<String>,
    pub functions: Vec<String>,
}

impl Scope {
    pub fn new<S: AsRef<str>>(variables: &[S], parameters: &[S], functions: &[S]) -> Self {
        let own = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect();
        Scope {
            variables: own(variables),
            parameters: own(parameters),
            functions: own(functions),
        }
    }

    fn has(list: &[String], name: &str) -> bool {
        list.iter().any(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(source: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // exponent only when followed by digits, so `2e` stays `2` then name `e`
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| syntax(start, format!("malformed number `{text}`")))?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), start));
                continue;
            }
            other => return Err(syntax(start, format!("unexpected character `{other}`"))),
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, chars.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    scope: &'a Scope,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                self.offset(),
                format!(
                    "expected {}, found {}",
                    want.describe(),
                    self.peek().describe()
                ),
            ))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let mut base = self.primary()?;
        while *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.exponent()?;
            base = Expr::binary(BinaryOp::Pow, base, exponent);
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::neg(self.exponent()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => self.name(name, at),
            other => Err(syntax(
                at,
                format!("expected an operand, found {}", other.describe()),
            )),
        }
    }

    fn name(&mut self, name: String, at: usize) -> Result<Expr> {
        let is_call = *self.peek() == Tok::LParen;
        if is_call {
            let builtin = UnaryOp::from_function_name(&name);
            if builtin.is_none() && !Scope::has(&self.scope.functions, &name) {
                return Err(Error::UnknownName { name, offset: at });
            }
            self.bump();
            let arg = self.expr()?;
            self.expect(Tok::RParen)?;
            return Ok(match builtin {
                Some(op) => Expr::unary(op, arg),
                None => Expr::call(name, arg),
            });
        }
        if Scope::has(&self.scope.variables, &name) {
            Ok(Expr::Var(name))
        } else if Scope::has(&self.scope.parameters, &name) {
            Ok(Expr::Param(name))
        } else if UnaryOp::from_function_name(&name).is_some()
            || Scope::has(&self.scope.functions, &name)
        {
            Err(syntax(
                at,
                format!("function `{name}` must be called with `(`"),
            ))
        } else {
            Err(Error::UnknownName { name, offset: at })
        }
    }
}

/// Parses `source` against the names declared in `scope`.
pub fn parse_expression(source: &str, scope: &Scope) -> Result<Expr> {
    let toks = lex(source)?;
    if toks.len() == 1 {
        return Err(syntax(0, "empty expression"));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        scope,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(
            p.offset(),
            format!("unexpected {} after expression", p.peek().describe()),
        ));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_scope() -> Scope {
        Scope::new(&["q1", "q2", "p1", "p2"], &["e", "c"], &["V"])
    }

    #[test]
    fn sum_of_momenta() {
        let e = parse_expression("p1 + p2", &pair_scope()).unwrap();
        assert_eq!(
            e,
            Expr::binary(BinaryOp::Add, Expr::var("p1"), Expr::var("p2"))
        );
    }

    #[test]
    fn pair_hamiltonian_shape() {
        let e = parse_expression("(p1-p2)^2/2 + V(q1-q2)", &pair_scope()).unwrap();
        let kinetic = Expr::binary(
            BinaryOp::Div,
            Expr::binary(
                BinaryOp::Pow,
                Expr::binary(BinaryOp::Sub, Expr::var("p1"), Expr::var("p2")),
                Expr::Const(2.0),
            ),
            Expr::Const(2.0),
        );
        let potential = Expr::call(
            "V",
            Expr::binary(BinaryOp::Sub, Expr::var("q1"), Expr::var("q2")),
        );
        assert_eq!(e, Expr::binary(BinaryOp::Add, kinetic, potential));
    }

    #[test]
    fn dangling_operator_reports_end_offset() {
        let err = parse_expression("p1 +", &pair_scope()).unwrap_err();
        match err {
            Error::Syntax { offset, message } => {
                assert_eq!(offset, 4);
                assert!(message.contains("end of input"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        let err = parse_expression("p1 + r7", &pair_scope()).unwrap_err();
        assert_eq!(
            err,
            Error::UnknownName {
                name: "r7".into(),
                offset: 5
            }
        );
        let err = parse_expression("W(q1)", &pair_scope()).unwrap_err();
        assert!(matches!(err, Error::UnknownName { offset: 0, .. }));
    }

    #[test]
    fn precedence_and_associativity() {
        let s = pair_scope();
        // unary minus binds looser than ^
        let e = parse_expression("-q1^2", &s).unwrap();
        assert_eq!(
            e,
            Expr::neg(Expr::binary(
                BinaryOp::Pow,
                Expr::var("q1"),
                Expr::Const(2.0)
            ))
        );
        // left associativity
        let e = parse_expression("q1 - q2 - c", &s).unwrap();
        assert_eq!(
            e,
            Expr::binary(
                BinaryOp::Sub,
                Expr::binary(BinaryOp::Sub, Expr::var("q1"), Expr::var("q2")),
                Expr::param("c")
            )
        );
        let e = parse_expression("q1^2^3", &s).unwrap();
        assert_eq!(
            e,
            Expr::binary(
                BinaryOp::Pow,
                Expr::binary(BinaryOp::Pow, Expr::var("q1"), Expr::Const(2.0)),
                Expr::Const(3.0)
            )
        );
        let e = parse_expression("q1^-1", &s).unwrap();
        assert_eq!(
            e,
            Expr::binary(BinaryOp::Pow, Expr::var("q1"), Expr::neg(Expr::Const(1.0)))
        );
    }

    #[test]
    fn number_followed_by_parameter_e() {
        let s = pair_scope();
        assert!(parse_expression("2e", &s).is_err());
        let e = parse_expression("2e-3*e", &s).unwrap();
        assert_eq!(
            e,
            Expr::binary(BinaryOp::Mul, Expr::Const(2e-3), Expr::param("e"))
        );
    }

    #[test]
    fn malformed_inputs() {
        let s = pair_scope();
        for src in [
            "", "  ", "(p1", "p1)", "p1 p2", "1..2", "V", "sin q1", "p1 # 2", "*p1",
        ] {
            assert!(parse_expression(src, &s).is_err(), "{src:?} should fail");
        }
    }

    #[test]
    fn printing_uses_minimal_parentheses() {
        let s = Scope::new(&["q2", "p2"], &["mu1", "mu2"], &["V"]);
        for src in [
            "(mu1 - 2*p2)^2/2 + V(-mu2 - 2*q2)",
            "p2 - (mu1 - p2)",
            "-(p2 + q2)",
            "(-p2)^2",
            "p2^(-1)",
            "p2/(q2*mu1)",
            "sqrt(abs(p2))*exp(-q2)",
        ] {
            let e = parse_expression(src, &s).unwrap();
            assert_eq!(e.to_string(), src);
        }
    }
}
