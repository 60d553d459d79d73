//! Parsing, evaluation and symbolic differentiation of right-hand-side
//! expressions.
//!
//! A field definition source declares one equation per coordinate, e.g.
//!
//! ```text
//! x' = y; y' = x - x^2
//! ```
//!
//! Statements are separated by `;` or newlines. A statement of the form
//! `name = expr` (no prime) declares a parameter whose constant value is
//! folded into the coordinate equations. Operators are `+ - * / ^` with
//! standard precedence, `^` right-associative, unary minus allowed, and
//! the functions `sin`, `cos`, `exp`, `sqrt` are available.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown symbol `{name}` at {line}:{col}")]
    UnknownSymbol { line: usize, col: usize, name: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A resolved expression tree. Coordinates are referred to by index into
/// the field's coordinate list; parameters have already been folded into
/// numeric literals.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Coord(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Fun(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "ln" => Some(Func::Ln),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Ln => v.ln(),
        }
    }
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Coord(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Neg(a) => -a.eval(x),
            Expr::Fun(f, a) => f.apply(a.eval(x)),
        }
    }

    /// Partial derivative with respect to coordinate `i`, with light
    /// constant folding so Jacobian trees stay small.
    pub fn diff(&self, i: usize) -> Expr {
        use Expr::*;
        match self {
            Num(_) => Num(0.0),
            Coord(j) => Num(if *j == i { 1.0 } else { 0.0 }),
            Add(a, b) => add(a.diff(i), b.diff(i)),
            Sub(a, b) => sub(a.diff(i), b.diff(i)),
            Mul(a, b) => add(
                mul(a.diff(i), (**b).clone()),
                mul((**a).clone(), b.diff(i)),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.diff(i), (**b).clone()),
                    mul((**a).clone(), b.diff(i)),
                ),
                mul((**b).clone(), (**b).clone()),
            ),
            Pow(a, b) => match **b {
                // a^c with constant exponent: c * a^(c-1) * a'
                Num(c) => mul(
                    mul(Num(c), pow((**a).clone(), Num(c - 1.0))),
                    a.diff(i),
                ),
                // general a^b: a^b * (b' ln a + b a'/a)
                _ => mul(
                    pow((**a).clone(), (**b).clone()),
                    add(
                        mul(b.diff(i), Fun(Func::Ln, a.clone())),
                        div(mul((**b).clone(), a.diff(i)), (**a).clone()),
                    ),
                ),
            },
            Neg(a) => neg(a.diff(i)),
            Fun(f, a) => {
                let da = a.diff(i);
                let outer = match f {
                    Func::Sin => Fun(Func::Cos, a.clone()),
                    Func::Cos => neg(Fun(Func::Sin, a.clone())),
                    Func::Exp => Fun(Func::Exp, a.clone()),
                    Func::Sqrt => div(Num(0.5), Fun(Func::Sqrt, a.clone())),
                    Func::Ln => div(Num(1.0), (**a).clone()),
                };
                mul(outer, da)
            }
        }
    }

    /// Collapse constant subtrees. Used after differentiation.
    pub fn fold(&self) -> Expr {
        use Expr::*;
        match self {
            Num(c) => Num(*c),
            Coord(i) => Coord(*i),
            Add(a, b) => add(a.fold(), b.fold()),
            Sub(a, b) => sub(a.fold(), b.fold()),
            Mul(a, b) => mul(a.fold(), b.fold()),
            Div(a, b) => div(a.fold(), b.fold()),
            Pow(a, b) => pow(a.fold(), b.fold()),
            Neg(a) => neg(a.fold()),
            Fun(f, a) => match a.fold() {
                Num(c) => Num(f.apply(c)),
                e => Fun(*f, Box::new(e)),
            },
        }
    }
}

// Smart constructors with identity/constant folding.
fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (Expr::Num(z), _) if *z == 0.0 => b,
        (_, Expr::Num(z)) if *z == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (_, Expr::Num(z)) if *z == 0.0 => a,
        (Expr::Num(z), _) if *z == 0.0 => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (Expr::Num(z), _) if *z == 0.0 => Expr::Num(0.0),
        (_, Expr::Num(z)) if *z == 0.0 => Expr::Num(0.0),
        (Expr::Num(z), _) if *z == 1.0 => b,
        (_, Expr::Num(z)) if *z == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(z), _) if *z == 0.0 => Expr::Num(0.0),
        (_, Expr::Num(z)) if *z == 1.0 => a,
        (Expr::Num(x), Expr::Num(y)) if *y != 0.0 => Expr::Num(x / y),
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x.powf(*y)),
        (_, Expr::Num(z)) if *z == 1.0 => a,
        (_, Expr::Num(z)) if *z == 0.0 => Expr::Num(1.0),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match &a {
        Expr::Num(x) => Expr::Num(-x),
        _ => Expr::Neg(Box::new(a)),
    }
}

// ---------------------------------------------------------------------------
// Pretty printing

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(_) | Expr::Coord(_) | Expr::Fun(..) => 5,
        }
    }

    pub fn pretty(&self, coords: &[String]) -> String {
        fn go(e: &Expr, coords: &[String], parent: u8, right: bool) -> String {
            let p = e.precedence();
            let s = match e {
                Expr::Num(c) => {
                    if *c < 0.0 {
                        format!("({:?})", c)
                    } else {
                        format!("{:?}", c)
                    }
                }
                Expr::Coord(i) => coords[*i].clone(),
                Expr::Add(a, b) => format!(
                    "{} + {}",
                    go(a, coords, p, false),
                    go(b, coords, p, false)
                ),
                Expr::Sub(a, b) => {
                    format!("{} - {}", go(a, coords, p, false), go(b, coords, p + 1, true))
                }
                Expr::Mul(a, b) => format!(
                    "{} * {}",
                    go(a, coords, p, false),
                    go(b, coords, p, false)
                ),
                Expr::Div(a, b) => {
                    format!("{} / {}", go(a, coords, p, false), go(b, coords, p + 1, true))
                }
                Expr::Pow(a, b) => {
                    format!("{}^{}", go(a, coords, p + 1, false), go(b, coords, p, true))
                }
                Expr::Neg(a) => format!("-{}", go(a, coords, p, true)),
                Expr::Fun(f, a) => format!("{}({})", f.name(), go(a, coords, 0, false)),
            };
            let _ = right;
            if p < parent {
                format!("({})", s)
            } else {
                s
            }
        }
        go(self, coords, 0, false)
    }
}

/// A parsed field definition: coordinate names in declaration order and one
/// expression per coordinate.
#[derive(Debug, Clone)]
pub struct ParsedSystem {
    pub coords: Vec<String>,
    pub equations: Vec<Expr>,
}

impl ParsedSystem {
    pub fn pretty(&self) -> String {
        self.coords
            .iter()
            .zip(&self.equations)
            .map(|(c, e)| format!("{}' = {}", c, e.pretty(&self.coords)))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for ParsedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

// ---------------------------------------------------------------------------
// Tokenizer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Prime,
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Sep, // ';' or newline
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        let mut push = |tok: Tok| out.push(Spanned { tok, line: tl, col: tc });
        match c {
            '\n' => {
                push(Tok::Sep);
                chars.next();
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {
                chars.next();
                col += 1;
                continue;
            }
            ';' => push(Tok::Sep),
            '\'' => push(Tok::Prime),
            '=' => push(Tok::Eq),
            '+' => push(Tok::Plus),
            '-' | '\u{2212}' => push(Tok::Minus),
            '*' | '\u{00d7}' => push(Tok::Star),
            '/' => push(Tok::Slash),
            '^' => push(Tok::Caret),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            '0'..='9' | '.' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() || d == '.' {
                        s.push(d);
                        chars.next();
                        col += 1;
                    } else if (d == 'e' || d == 'E')
                        && !s.is_empty()
                        && s.chars().all(|c| c.is_ascii_digit() || c == '.')
                    {
                        // exponent; may be followed by a sign
                        s.push(d);
                        chars.next();
                        col += 1;
                        if let Some(&sg) = chars.peek() {
                            if sg == '+' || sg == '-' {
                                s.push(sg);
                                chars.next();
                                col += 1;
                            }
                        }
                    } else {
                        break;
                    }
                }
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("malformed number `{}`", s),
                })?;
                out.push(Spanned { tok: Tok::Num(v), line: tl, col: tc });
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        s.push(d);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Tok::Ident(s), line: tl, col: tc });
                continue;
            }
            other => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{}`", other),
                })
            }
        }
        chars.next();
        col += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser (recursive descent over statements)

/// Raw expression with unresolved names; resolution happens once all
/// statements are read and the coordinate/parameter split is known.
#[derive(Debug, Clone)]
enum Raw {
    Num(f64),
    Name(String, usize, usize),
    Bin(Tok, Box<Raw>, Box<Raw>),
    Neg(Box<Raw>),
    Fun(Func, Box<Raw>),
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: &str) -> ParseError {
        let (line, col) = self
            .toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1));
        ParseError::Syntax { line, col, msg: msg.to_string() }
    }

    fn err_at_last(&self, msg: &str) -> ParseError {
        let (line, col) = self.toks.last().map(|s| (s.line, s.col + 1)).unwrap_or((1, 1));
        ParseError::Syntax { line, col, msg: msg.to_string() }
    }

    fn expr(&mut self) -> Result<Raw, ParseError> {
        let mut lhs = self.term()?;
        while let Some(s) = self.peek() {
            match s.tok {
                Tok::Plus | Tok::Minus => {
                    let op = self.next().unwrap().tok;
                    let rhs = self.term()?;
                    lhs = Raw::Bin(op, Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Raw, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(s) = self.peek() {
            match s.tok {
                Tok::Star | Tok::Slash => {
                    let op = self.next().unwrap().tok;
                    let rhs = self.unary()?;
                    lhs = Raw::Bin(op, Box::new(lhs), Box::new(rhs));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Raw, ParseError> {
        if let Some(s) = self.peek() {
            if s.tok == Tok::Minus {
                self.next();
                let inner = self.unary()?;
                return Ok(Raw::Neg(Box::new(inner)));
            }
            if s.tok == Tok::Plus {
                self.next();
                return self.unary();
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<Raw, ParseError> {
        let base = self.atom()?;
        if let Some(s) = self.peek() {
            if s.tok == Tok::Caret {
                self.next();
                // right-associative; exponent may carry a unary minus
                let exp = self.unary_power()?;
                return Ok(Raw::Bin(Tok::Caret, Box::new(base), Box::new(exp)));
            }
        }
        Ok(base)
    }

    fn unary_power(&mut self) -> Result<Raw, ParseError> {
        if let Some(s) = self.peek() {
            if s.tok == Tok::Minus {
                self.next();
                let inner = self.unary_power()?;
                return Ok(Raw::Neg(Box::new(inner)));
            }
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Raw, ParseError> {
        let eoi = self.err_at_last("unexpected end of input");
        let s = self.next().ok_or(eoi)?;
        match s.tok {
            Tok::Num(v) => Ok(Raw::Num(v)),
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    match self.peek() {
                        Some(t) if t.tok == Tok::LParen => {
                            self.next();
                            let arg = self.expr()?;
                            match self.next() {
                                Some(t) if t.tok == Tok::RParen => {
                                    return Ok(Raw::Fun(f, Box::new(arg)))
                                }
                                _ => return Err(self.err_here("expected `)`")),
                            }
                        }
                        _ => {}
                    }
                }
                Ok(Raw::Name(name, s.line, s.col))
            }
            Tok::LParen => {
                let inner = self.expr()?;
                match self.next() {
                    Some(t) if t.tok == Tok::RParen => Ok(inner),
                    _ => Err(self.err_here("expected `)`")),
                }
            }
            other => Err(ParseError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("unexpected token {:?}", other),
            }),
        }
    }
}

fn resolve(
    raw: &Raw,
    coords: &HashMap<String, usize>,
    params: &HashMap<String, f64>,
) -> Result<Expr, ParseError> {
    Ok(match raw {
        Raw::Num(v) => Expr::Num(*v),
        Raw::Name(name, line, col) => {
            if let Some(&i) = coords.get(name) {
                Expr::Coord(i)
            } else if let Some(&v) = params.get(name) {
                Expr::Num(v)
            } else {
                return Err(ParseError::UnknownSymbol {
                    line: *line,
                    col: *col,
                    name: name.clone(),
                });
            }
        }
        Raw::Bin(op, a, b) => {
            let (a, b) = (resolve(a, coords, params)?, resolve(b, coords, params)?);
            match op {
                Tok::Plus => add(a, b),
                Tok::Minus => sub(a, b),
                Tok::Star => mul(a, b),
                Tok::Slash => div(a, b),
                Tok::Caret => pow(a, b),
                _ => unreachable!(),
            }
        }
        Raw::Neg(a) => neg(resolve(a, coords, params)?),
        Raw::Fun(f, a) => Expr::Fun(*f, Box::new(resolve(a, coords, params)?)),
    })
}

/// Parse a full field definition source. Statements `name' = expr` define
/// coordinates (in order of first appearance); `name = expr` with a
/// constant right-hand side defines a parameter.
pub fn parse_system(src: &str) -> Result<ParsedSystem, ParseError> {
    let toks = tokenize(src)?;
    // split into statements
    let mut stmts: Vec<Vec<Spanned>> = Vec::new();
    let mut cur = Vec::new();
    for t in toks {
        if t.tok == Tok::Sep {
            if !cur.is_empty() {
                stmts.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(t);
        }
    }
    if !cur.is_empty() {
        stmts.push(cur);
    }

    // First pass: collect coordinate names and raw parameter definitions.
    struct RawStmt {
        name: String,
        primed: bool,
        rhs: Raw,
    }
    let mut raw_stmts = Vec::new();
    let mut coords: Vec<String> = Vec::new();
    for stmt in &stmts {
        let mut p = Parser { toks: stmt.clone(), pos: 0 };
        let head = p.next().ok_or_else(|| p.err_here("empty statement"))?;
        let name = match head.tok {
            Tok::Ident(n) => n,
            _ => {
                return Err(ParseError::Syntax {
                    line: head.line,
                    col: head.col,
                    msg: "statement must start with a name".into(),
                })
            }
        };
        let primed = matches!(p.peek(), Some(t) if t.tok == Tok::Prime);
        if primed {
            p.next();
        }
        match p.next() {
            Some(t) if t.tok == Tok::Eq => {}
            _ => return Err(p.err_here("expected `=`")),
        }
        let rhs = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(p.err_here("trailing input after expression"));
        }
        if primed {
            if coords.contains(&name) {
                return Err(ParseError::Dimension(format!(
                    "coordinate `{}` defined twice",
                    name
                )));
            }
            coords.push(name.clone());
        }
        raw_stmts.push(RawStmt { name, primed, rhs });
    }
    if coords.is_empty() {
        return Err(ParseError::Dimension("no coordinate equations found".into()));
    }

    let coord_map: HashMap<String, usize> =
        coords.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

    // Second pass: evaluate parameters (constants only, may reference
    // earlier parameters).
    let mut params: HashMap<String, f64> = HashMap::new();
    for st in raw_stmts.iter().filter(|s| !s.primed) {
        let e = resolve(&st.rhs, &HashMap::new(), &params).map_err(|err| match err {
            ParseError::UnknownSymbol { line, col, name } => ParseError::UnknownSymbol {
                line,
                col,
                name: format!("{} (parameters must be constant)", name),
            },
            other => other,
        })?;
        params.insert(st.name.clone(), e.eval(&[]));
    }

    // Third pass: resolve coordinate equations.
    let mut equations = vec![Expr::Num(0.0); coords.len()];
    for st in raw_stmts.iter().filter(|s| s.primed) {
        let idx = coord_map[&st.name];
        equations[idx] = resolve(&st.rhs, &coord_map, &params)?.fold();
    }
    Ok(ParsedSystem { coords, equations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(src: &str) -> ParsedSystem {
        parse_system(src).expect("parse")
    }

    #[test]
    fn duffing_parses_and_evaluates() {
        let s = sys("x' = y; y' = x - x^2");
        assert_eq!(s.coords, vec!["x", "y"]);
        let at = |x: f64, y: f64| -> (f64, f64) {
            (s.equations[0].eval(&[x, y]), s.equations[1].eval(&[x, y]))
        };
        assert_eq!(at(0.0, 0.0), (0.0, 0.0));
        let (dx, dy) = at(1.5, 0.0);
        assert_eq!(dx, 0.0);
        assert!((dy - (-0.75)).abs() < 1e-15);
    }

    #[test]
    fn lorenz_with_parameters() {
        let s = sys("x' = s*(y-x); y' = x*(r-z)-y; z' = x*y-b*z; s = 10; r = 28; b = 8/3");
        assert_eq!(s.coords.len(), 3);
        let v: Vec<f64> = s.equations.iter().map(|e| e.eval(&[0.0, 0.0, 0.0])).collect();
        assert_eq!(v, vec![0.0, 0.0, 0.0]);
        let v: Vec<f64> = s.equations.iter().map(|e| e.eval(&[1.0, 1.0, 1.0])).collect();
        assert!((v[0] - 0.0).abs() < 1e-15);
        assert!((v[1] - 26.0).abs() < 1e-15);
        assert!((v[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn trailing_operator_is_a_syntax_error() {
        let err = parse_system("x' = y +").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col >= 8);
            }
            other => panic!("expected syntax error, got {:?}", other),
        }
    }

    #[test]
    fn unknown_symbol_reports_position() {
        let err = parse_system("x' = y; y' = q * x").unwrap_err();
        match err {
            ParseError::UnknownSymbol { name, line, col } => {
                assert_eq!(name, "q");
                assert_eq!(line, 1);
                assert_eq!(col, 14);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn precedence_and_unary_minus() {
        let s = sys("x' = -x^2 + 2*x/4 - 1");
        // -(x^2) + x/2 - 1 at x = 3: -9 + 1.5 - 1 = -8.5
        assert!((s.equations[0].eval(&[3.0]) + 8.5).abs() < 1e-14);
        let s = sys("x' = 2^-2 + (1+1)^3");
        assert!((s.equations[0].eval(&[0.0]) - 8.25).abs() < 1e-14);
    }

    #[test]
    fn whitespace_insensitive() {
        let a = sys("x'=y;y'=x-x^2");
        let b = sys("x'  =  y \n y' = x - x ^ 2");
        for pt in [[0.3, -1.2], [2.0, 0.5]] {
            for i in 0..2 {
                assert_eq!(a.equations[i].eval(&pt), b.equations[i].eval(&pt));
            }
        }
    }

    #[test]
    fn symbolic_derivative_matches_finite_differences() {
        let s = sys("x' = sin(x)*cos(y) + exp(x*y) - sqrt(x+2); y' = x/y + y^3");
        let pts = [[0.4, 1.3], [1.1, 0.7], [-0.5, 2.0]];
        for eq in &s.equations {
            for i in 0..2 {
                let d = eq.diff(i).fold();
                for pt in pts {
                    let h = 1e-6;
                    let mut up = pt;
                    let mut dn = pt;
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (eq.eval(&up) - eq.eval(&dn)) / (2.0 * h);
                    assert!(
                        (d.eval(&pt) - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "symbolic {} vs fd {}",
                        d.eval(&pt),
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn pretty_print_round_trip() {
        let srcs = [
            "x' = y; y' = x - x^2",
            "x' = -x^2 + 2*x/4 - 1",
            "x' = sin(x)*cos(y) + exp(x*y) - sqrt(x+2); y' = x/(y+3) + y^3 - (x-y)^2",
            "x' = s*(y-x); y' = x*(r-z)-y; z' = x*y-b*z; s = 10; r = 28; b = 8/3",
        ];
        for src in srcs {
            let a = sys(src);
            let b = sys(&a.pretty());
            assert_eq!(a.coords, b.coords);
            let mut state = 0.37_f64;
            for _ in 0..100 {
                let pt: Vec<f64> = (0..a.coords.len())
                    .map(|_| {
                        state = (state * 1103515245.0 + 12345.0) % 1.0e4 / 1.0e4;
                        state * 3.0 + 0.25
                    })
                    .collect();
                for i in 0..a.coords.len() {
                    let (va, vb) = (a.equations[i].eval(&pt), b.equations[i].eval(&pt));
                    assert!(
                        (va - vb).abs() <= 1e-14 * (1.0 + va.abs()),
                        "{} vs {} for {}",
                        va,
                        vb,
                        src
                    );
                }
            }
        }
    }
}
