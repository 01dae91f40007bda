//! Arithmetic expressions in x and y for right-hand sides.
//!
//! Grammar:
//!   expr  := term (('+' | '-') term)*
//!   term  := unary (('*' | '/') unary)*
//!   unary := '-' unary | power
//!   power := atom ('^' unary)?
//!   atom  := number | 'pi' | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
//!   func  := sin | cos | cosh | abs

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at byte {at}")]
    UnexpectedChar { ch: char, at: usize },
    #[error("bad numeric literal '{lit}' at byte {at}")]
    BadNumber { lit: String, at: usize },
    #[error("unknown name '{name}' at byte {at}")]
    UnknownName { name: String, at: usize },
    #[error("expected {what} at byte {at}")]
    Expected { what: &'static str, at: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("trailing input at byte {at}")]
    Trailing { at: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Cosh,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Y,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0 };
        let e = p.expr()?;
        match p.peek() {
            Some((_, at)) => Err(ExprError::Trailing { at }),
            None => Ok(e),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::X => x,
            Expr::Y => y,
            Expr::Neg(e) => -e.eval(x, y),
            Expr::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Expr::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Expr::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Expr::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Expr::Pow(a, b) => a.eval(x, y).powf(b.eval(x, y)),
            Expr::Call(f, e) => {
                let t = e.eval(x, y);
                match f {
                    Func::Sin => t.sin(),
                    Func::Cos => t.cos(),
                    Func::Cosh => t.cosh(),
                    Func::Abs => t.abs(),
                }
            }
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, w: &mut fmt::Formatter<'_>) -> fmt::Result {
        w.write_str(match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Cosh => "cosh",
            Func::Abs => "abs",
        })
    }
}

/// Fully parenthesized form; `Expr::parse` accepts it and rebuilds the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, w: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(w, "{c}"),
            Expr::X => w.write_str("x"),
            Expr::Y => w.write_str("y"),
            Expr::Neg(e) => write!(w, "(-{e})"),
            Expr::Add(a, b) => write!(w, "({a} + {b})"),
            Expr::Sub(a, b) => write!(w, "({a} - {b})"),
            Expr::Mul(a, b) => write!(w, "({a}*{b})"),
            Expr::Div(a, b) => write!(w, "({a}/{b})"),
            Expr::Pow(a, b) => write!(w, "({a}^{b})"),
            Expr::Call(f, e) => write!(w, "{f}({e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' | '-' | '*' | '/' | '^' | '(' | ')' => {
                let t = match c {
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '^' => Tok::Caret,
                    '(' => Tok::LParen,
                    _ => Tok::RParen,
                };
                toks.push((t, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                if i < bytes.len()
                    && matches!(bytes[i] as char, 'e' | 'E')
                    && i + 1 < bytes.len()
                    && matches!(bytes[i + 1] as char, '0'..='9' | '+' | '-')
                {
                    i += 2;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let lit = &src[start..i];
                let v: f64 = lit.parse().map_err(|_| ExprError::BadNumber {
                    lit: lit.to_string(),
                    at: start,
                })?;
                toks.push((Tok::Num(v), start));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_alphabetic() {
                    i += 1;
                }
                toks.push((Tok::Name(src[start..i].to_string()), start));
            }
            _ => return Err(ExprError::UnexpectedChar { ch: c, at: i }),
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<(&Tok, usize)> {
        self.toks.get(self.pos).map(|(t, at)| (t, *at))
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, t: Tok, what: &'static str) -> Result<(), ExprError> {
        match self.bump() {
            Some((got, _)) if got == t => Ok(()),
            Some((_, at)) => Err(ExprError::Expected { what, at }),
            None => Err(ExprError::UnexpectedEnd),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut e = self.term()?;
        loop {
            match self.peek() {
                Some((Tok::Plus, _)) => {
                    self.bump();
                    e = Expr::Add(Box::new(e), Box::new(self.term()?));
                }
                Some((Tok::Minus, _)) => {
                    self.bump();
                    e = Expr::Sub(Box::new(e), Box::new(self.term()?));
                }
                _ => return Ok(e),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut e = self.unary()?;
        loop {
            match self.peek() {
                Some((Tok::Star, _)) => {
                    self.bump();
                    e = Expr::Mul(Box::new(e), Box::new(self.unary()?));
                }
                Some((Tok::Slash, _)) => {
                    self.bump();
                    e = Expr::Div(Box::new(e), Box::new(self.unary()?));
                }
                _ => return Ok(e),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some((Tok::Minus, _)) = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.bump();
            return Ok(Expr::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Expr::Num(v)),
            Some((Tok::LParen, _)) => {
                let e = self.expr()?;
                self.eat(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some((Tok::Name(name), at)) => match name.as_str() {
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "x" => Ok(Expr::X),
                "y" => Ok(Expr::Y),
                "sin" | "cos" | "cosh" | "abs" => {
                    let f = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "cosh" => Func::Cosh,
                        _ => Func::Abs,
                    };
                    self.eat(Tok::LParen, "'('")?;
                    let e = self.expr()?;
                    self.eat(Tok::RParen, "')'")?;
                    Ok(Expr::Call(f, Box::new(e)))
                }
                _ => Err(ExprError::UnknownName { name, at }),
            },
            Some((_, at)) => Err(ExprError::Expected { what: "a value", at }),
            None => Err(ExprError::UnexpectedEnd),
        }
    }
}
