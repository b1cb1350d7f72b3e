//! Tiny arithmetic expression grammar for user-supplied prepotentials and
//! V functions: identifiers, real literals, `+ - * / ^`, parentheses.
//!
//! Expressions are parsed once into a tree and evaluated over either the
//! reals (V functions on the chart) or the complex numbers (prepotentials
//! at the twistor roots). Integer literal exponents are applied by
//! repeated multiplication so that negative real bases stay exact.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
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

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => { out.push(Token::Plus); i += 1; }
            '-' => { out.push(Token::Minus); i += 1; }
            '*' => { out.push(Token::Star); i += 1; }
            '/' => { out.push(Token::Slash); i += 1; }
            '^' => { out.push(Token::Caret); i += 1; }
            '(' => { out.push(Token::LParen); i += 1; }
            ')' => { out.push(Token::RParen); i += 1; }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // Optional exponent part.
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number literal `{text}`")))?;
                out.push(Token::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(Error::Parse(format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    /// Pratt loop: binary operators with `^` right-associative and tighter
    /// than unary minus, which is tighter than `* /`, then `+ -`.
    fn expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = match self.next() {
            Some(Token::Num(v)) => Expr::Num(v),
            Some(Token::Ident(name)) => Expr::Var(name),
            Some(Token::Minus) => Expr::Neg(Box::new(self.expr(25)?)),
            Some(Token::Plus) => self.expr(25)?,
            Some(Token::LParen) => {
                let inner = self.expr(0)?;
                match self.next() {
                    Some(Token::RParen) => inner,
                    _ => return Err(Error::Parse("unbalanced parenthesis".into())),
                }
            }
            other => return Err(Error::Parse(format!("unexpected token {other:?}"))),
        };
        loop {
            let (l_bp, r_bp, tok) = match self.peek() {
                Some(Token::Plus) => (10, 11, Token::Plus),
                Some(Token::Minus) => (10, 11, Token::Minus),
                Some(Token::Star) => (20, 21, Token::Star),
                Some(Token::Slash) => (20, 21, Token::Slash),
                Some(Token::Caret) => (31, 30, Token::Caret),
                _ => break,
            };
            if l_bp < min_bp {
                break;
            }
            self.next();
            let rhs = self.expr(r_bp)?;
            lhs = match tok {
                Token::Plus => Expr::Add(Box::new(lhs), Box::new(rhs)),
                Token::Minus => Expr::Sub(Box::new(lhs), Box::new(rhs)),
                Token::Star => Expr::Mul(Box::new(lhs), Box::new(rhs)),
                Token::Slash => Expr::Div(Box::new(lhs), Box::new(rhs)),
                Token::Caret => Expr::Pow(Box::new(lhs), Box::new(rhs)),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(Error::Parse("empty expression".into()));
        }
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr(0)?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse(format!(
                "trailing tokens starting at {:?}",
                p.tokens[p.pos]
            )));
        }
        Ok(e)
    }

    /// Names of all identifiers appearing in the expression.
    pub fn variables(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.collect_vars(&mut names);
        names.sort();
        names.dedup();
        names
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => out.push(name.clone()),
            Expr::Neg(a) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn eval_real(&self, vars: &HashMap<String, f64>) -> Result<f64> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => vars
                .get(name)
                .copied()
                .ok_or_else(|| Error::Parse(format!("unbound identifier `{name}`"))),
            Expr::Neg(a) => Ok(-a.eval_real(vars)?),
            Expr::Add(a, b) => Ok(a.eval_real(vars)? + b.eval_real(vars)?),
            Expr::Sub(a, b) => Ok(a.eval_real(vars)? - b.eval_real(vars)?),
            Expr::Mul(a, b) => Ok(a.eval_real(vars)? * b.eval_real(vars)?),
            Expr::Div(a, b) => {
                let d = b.eval_real(vars)?;
                if d == 0.0 {
                    return Err(Error::Domain("division by zero in expression".into()));
                }
                Ok(a.eval_real(vars)? / d)
            }
            Expr::Pow(a, b) => {
                let base = a.eval_real(vars)?;
                let exp = b.eval_real(vars)?;
                if exp.fract() == 0.0 && exp.abs() <= 32.0 {
                    Ok(base.powi(exp as i32))
                } else {
                    Ok(base.powf(exp))
                }
            }
        }
    }

    pub fn eval_complex(&self, vars: &HashMap<String, Complex64>) -> Result<Complex64> {
        match self {
            Expr::Num(v) => Ok(Complex64::new(*v, 0.0)),
            Expr::Var(name) => vars
                .get(name)
                .copied()
                .ok_or_else(|| Error::Parse(format!("unbound identifier `{name}`"))),
            Expr::Neg(a) => Ok(-a.eval_complex(vars)?),
            Expr::Add(a, b) => Ok(a.eval_complex(vars)? + b.eval_complex(vars)?),
            Expr::Sub(a, b) => Ok(a.eval_complex(vars)? - b.eval_complex(vars)?),
            Expr::Mul(a, b) => Ok(a.eval_complex(vars)? * b.eval_complex(vars)?),
            Expr::Div(a, b) => {
                let d = b.eval_complex(vars)?;
                if d.norm() == 0.0 {
                    return Err(Error::Domain("division by zero in expression".into()));
                }
                Ok(a.eval_complex(vars)? / d)
            }
            Expr::Pow(a, b) => {
                let base = a.eval_complex(vars)?;
                let exp = b.eval_complex(vars)?;
                if exp.im == 0.0 && exp.re.fract() == 0.0 && exp.re.abs() <= 32.0 {
                    Ok(base.powi(exp.re as i32))
                } else {
                    Ok(base.powc(exp))
                }
            }
        }
    }
}
