//! Closed-form field expressions: a minimal grammar with identifiers,
//! literals, sin/cos/exp, and + − * / ^, used to specify w, η, and test
//! fields in config files ("0.3*cos(x)", "eps*cos(x)*cos(y)", ...).

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at byte {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected token {found} at byte {pos}")]
    UnexpectedToken { found: String, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("unbound identifier '{0}'")]
    UnboundIdentifier(String),
    #[error("invalid numeric literal '{0}'")]
    BadNumber(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(String),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression; evaluate against a variable environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    source: String,
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Variable bindings for evaluation. `pi` is always defined.
#[derive(Debug, Clone, Default)]
pub struct Env {
    bindings: Vec<(String, f64)>,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    /// Sets or overwrites a binding.
    pub fn set(&mut self, name: &str, value: f64) {
        if let Some(slot) = self.bindings.iter_mut().find(|(n, _)| n == name) {
            slot.1 = value;
        } else {
            self.bindings.push((name.to_string(), value));
        }
    }

    pub fn from_map(map: &HashMap<String, f64>) -> Self {
        let mut env = Env::new();
        let mut names: Vec<&String> = map.keys().collect();
        names.sort();
        for name in names {
            env.set(name, map[name]);
        }
        env
    }

    fn lookup(&self, name: &str) -> Option<f64> {
        if name == "pi" {
            return Some(std::f64::consts::PI);
        }
        self.bindings.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expr()?;
        if parser.pos < parser.tokens.len() {
            let (tok, at) = &parser.tokens[parser.pos];
            return Err(ExprError::UnexpectedToken { found: format!("{tok:?}"), pos: *at });
        }
        Ok(Expression { root, source: source.to_string() })
    }

    pub fn eval(&self, env: &Env) -> Result<f64, ExprError> {
        eval_node(&self.root, env)
    }
}

fn eval_node(node: &Node, env: &Env) -> Result<f64, ExprError> {
    Ok(match node {
        Node::Num(v) => *v,
        Node::Var(name) => env
            .lookup(name)
            .ok_or_else(|| ExprError::UnboundIdentifier(name.clone()))?,
        Node::Neg(inner) => -eval_node(inner, env)?,
        Node::Add(a, b) => eval_node(a, env)? + eval_node(b, env)?,
        Node::Sub(a, b) => eval_node(a, env)? - eval_node(b, env)?,
        Node::Mul(a, b) => eval_node(a, env)? * eval_node(b, env)?,
        Node::Div(a, b) => eval_node(a, env)? / eval_node(b, env)?,
        Node::Pow(a, b) => eval_node(a, env)?.powf(eval_node(b, env)?),
        Node::Call(f, arg) => f.apply(eval_node(arg, env)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        match ch {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => { out.push((Token::Plus, i)); i += 1 }
            '-' => { out.push((Token::Minus, i)); i += 1 }
            '*' => { out.push((Token::Star, i)); i += 1 }
            '/' => { out.push((Token::Slash, i)); i += 1 }
            '^' => { out.push((Token::Caret, i)); i += 1 }
            '(' => { out.push((Token::LParen, i)); i += 1 }
            ')' => { out.push((Token::RParen, i)); i += 1 }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // scientific exponent, with optional sign
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text
                    .parse()
                    .map_err(|_| ExprError::BadNumber(text.to_string()))?;
                out.push((Token::Num(value), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push((Token::Ident(src[start..i].to_string()), start));
            }
            other => return Err(ExprError::UnexpectedChar { ch: other, pos: i }),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Result<(Token, usize), ExprError> {
        let item = self.tokens.get(self.pos).cloned().ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(item)
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Plus => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Star => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Token::Slash => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    // '^' binds tighter than unary minus and associates right: -x^2 = -(x^2).
    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let (token, at) = self.bump()?;
        match token {
            Token::Num(v) => Ok(Node::Num(v)),
            Token::Ident(name) => {
                if matches!(self.peek(), Some(Token::LParen)) {
                    self.pos += 1;
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        other => return Err(ExprError::UnknownFunction(other.to_string())),
                    };
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Node::Call(func, Box::new(arg)))
                } else {
                    Ok(Node::Var(name))
                }
            }
            Token::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            other => Err(ExprError::UnexpectedToken { found: format!("{other:?}"), pos: at }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.bump()? {
            (Token::RParen, _) => Ok(()),
            (other, at) => Err(ExprError::UnexpectedToken { found: format!("{other:?}"), pos: at }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eval(src: &str, env: &Env) -> f64 {
        Expression::parse(src).unwrap().eval(env).unwrap()
    }

    #[test]
    fn arithmetic_precedence() {
        let env = Env::new();
        assert_eq!(eval("2+3*4^2", &env), 50.0);
        assert_eq!(eval("(2+3)*4", &env), 20.0);
        assert_eq!(eval("-2^2", &env), -4.0, "unary minus binds below ^");
        assert_eq!(eval("2^-1", &env), 0.5, "negative exponent");
        assert_eq!(eval("1e-3 + 1.5E2", &env), 150.001);
    }

    #[test]
    fn functions_and_variables() {
        let env = Env::new().with("x", 0.7).with("eps", 0.3);
        assert_relative_eq!(eval("eps*cos(x)", &env), 0.3 * 0.7f64.cos());
        assert_relative_eq!(eval("sin(x)^2 + cos(x)^2", &env), 1.0, epsilon = 1e-15);
        assert_relative_eq!(eval("exp(-x)", &env), (-0.7f64).exp());
        assert_relative_eq!(eval("2*pi", &env), std::f64::consts::TAU);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Expression::parse("foo(1)").unwrap_err(),
            ExprError::UnknownFunction(name) if name == "foo"
        ));
        assert_eq!(Expression::parse("sin(").unwrap_err(), ExprError::UnexpectedEnd);
        assert!(matches!(
            Expression::parse("x y").unwrap_err(),
            ExprError::UnexpectedToken { .. }
        ));
        assert!(Expression::parse("1.2.3").is_err());
        assert!(matches!(
            Expression::parse("x + $").unwrap_err(),
            ExprError::UnexpectedChar { ch: '$', .. }
        ));
    }

    #[test]
    fn unbound_identifier_reported_at_eval() {
        let expr = Expression::parse("z + 1").unwrap();
        assert_eq!(
            expr.eval(&Env::new()).unwrap_err(),
            ExprError::UnboundIdentifier("z".into())
        );
    }
}
