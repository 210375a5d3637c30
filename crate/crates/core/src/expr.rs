//! A tiny arithmetic language for vital rates.
//!
//! Grammar (lowest precedence first):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | 's' | 'P' | 'exp' '(' expr ')' | '(' expr ')'
//! ```
//!
//! `-s^2` parses as `-(s^2)`.

use std::fmt;
use std::sync::Arc;

use crate::error::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Size,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Exp(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
}

const NEG_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

impl Node {
    pub fn eval(&self, s: f64, p: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(Var::Size) => s,
            Node::Var(Var::Population) => p,
            Node::Neg(a) => -a.eval(s, p),
            Node::Exp(a) => a.eval(s, p).exp(),
            Node::Bin(op, a, b) => {
                let (x, y) = (a.eval(s, p), b.eval(s, p));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => pow(x, y),
                }
            }
        }
    }

    pub fn mentions(&self, var: Var) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Exp(a) => a.mentions(var),
            Node::Bin(_, a, b) => a.mentions(var) || b.mentions(var),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Bin(op, ..) => op.precedence(),
            Node::Neg(_) => NEG_PRECEDENCE,
            _ => ATOM_PRECEDENCE,
        }
    }
}

// Integer exponents go through powi so that e.g. (-2)^2 stays finite.
fn pow(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() <= i32::MAX as f64 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Node, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => {
                if *v < 0.0 || v.is_sign_negative() {
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            Node::Var(Var::Size) => f.write_str("s"),
            Node::Var(Var::Population) => f.write_str("P"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < NEG_PRECEDENCE)
            }
            Node::Bin(op, a, b) => {
                let prec = op.precedence();
                let (left_parens, right_parens) = if *op == BinOp::Pow {
                    (a.precedence() <= prec, b.precedence() < NEG_PRECEDENCE)
                } else {
                    (a.precedence() < prec, b.precedence() <= prec)
                };
                write_child(f, a, left_parens)?;
                write!(f, "{}", op.symbol())?;
                write_child(f, b, right_parens)
            }
        }
    }
}

/// A parsed vital-rate expression together with its source text.
#[derive(Debug, Clone)]
pub struct Expr {
    source: Arc<str>,
    root: Arc<Node>,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let root = Parser::new(text).parse()?;
        Ok(Self {
            source: Arc::from(text),
            root: Arc::new(root),
        })
    }

    pub fn from_node(node: Node) -> Self {
        Self {
            source: Arc::from(node.to_string()),
            root: Arc::new(node),
        }
    }

    pub fn eval(&self, s: f64, p: f64) -> f64 {
        self.root.eval(s, p)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub fn depends_on(&self, var: Var) -> bool {
        self.root.mentions(var)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

/// Parse a rate expression over `s` and `P`.
pub fn parse_rate(text: &str) -> Result<Expr, ParseError> {
    Expr::parse(text)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            pos: 0,
            tok: Tok::End,
            tok_start: 0,
        }
    }

    fn parse(mut self) -> Result<Node, ParseError> {
        self.advance()?;
        let node = self.expr()?;
        if self.tok != Tok::End {
            return Err(self.syntax("unexpected trailing input"));
        }
        Ok(node)
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.tok_start,
            message: message.to_string(),
        }
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        self.tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Tok::Op(c as char)
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b'0'..=b'9' | b'.' => self.number()?,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                    self.pos += 1;
                }
                Tok::Ident(self.text[start..self.pos].to_string())
            }
            _ => {
                let ch = self.text[self.pos..].chars().next().unwrap_or('?');
                return Err(self.syntax(&format!("unexpected character `{ch}`")));
            }
        };
        Ok(())
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let bytes = self.text.as_bytes();
        let start = self.pos;
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                look += 1;
            }
            if look < bytes.len() && bytes[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        self.text[start..self.pos]
            .parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{}`", &self.text[start..self.pos]),
            })
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.tok == Tok::Op('-') {
            self.advance()?;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if self.tok == Tok::Op('^') {
            self.advance()?;
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Node::Num(v))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let offset = self.tok_start;
                self.advance()?;
                match name.as_str() {
                    "s" => Ok(Node::Var(Var::Size)),
                    "P" => Ok(Node::Var(Var::Population)),
                    "exp" => {
                        if self.tok != Tok::LParen {
                            return Err(self.syntax("expected `(` after `exp`"));
                        }
                        self.advance()?;
                        let arg = self.expr()?;
                        self.expect_rparen()?;
                        Ok(Node::Exp(Box::new(arg)))
                    }
                    _ => Err(ParseError::UnknownIdentifier { name, offset }),
                }
            }
            Tok::End => Err(self.syntax("unexpected end of input")),
            Tok::RParen => Err(self.syntax("unexpected `)`")),
            Tok::Op(c) => Err(self.syntax(&format!("unexpected operator `{c}`"))),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.tok != Tok::RParen {
            return Err(self.syntax("expected `)`"));
        }
        self.advance()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant() {
        let e = parse_rate("1").unwrap();
        assert_eq!(e.eval(0.3, 7.0), 1.0);
        assert_eq!(e.eval(5.0, 0.0), 1.0);
    }

    #[test]
    fn exp_of_minus_s() {
        assert_eq!(parse_rate("exp(-s)").unwrap().eval(0.0, 5.0), 1.0);
    }

    #[test]
    fn example_fertility_text() {
        let e = parse_rate("(P^2*exp(-P)*s*exp(-s)+0.5*P^2*exp(-P))/0.40407578").unwrap();
        let direct = 0.5 * 4.0 * (-2f64).exp() / 0.40407578;
        assert!((e.eval(0.0, 2.0) - direct).abs() < 1e-15);
        assert!((e.eval(0.0, 2.0) - 0.6699).abs() < 1e-4);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_rate("2^3^2").unwrap();
        assert_eq!(e.eval(0.0, 0.0), 512.0);
        assert_eq!(parse_rate("-s^2").unwrap().eval(3.0, 0.0), -9.0);
        assert_eq!(parse_rate("8/4/2").unwrap().eval(0.0, 0.0), 1.0);
        assert_eq!(parse_rate("1-2-3").unwrap().eval(0.0, 0.0), -4.0);
        assert_eq!(parse_rate("2*-s").unwrap().eval(1.5, 0.0), -3.0);
        assert_eq!(parse_rate("1.5e-1*P").unwrap().eval(0.0, 2.0), 0.3);
    }

    #[test]
    fn syntax_error_offset() {
        let err = parse_rate("s + * 2").unwrap_err();
        assert_eq!(err.offset(), 4);
        let err = parse_rate("exp(s").unwrap_err();
        assert_eq!(err.offset(), 5);
        let err = parse_rate("").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 0, .. }));
    }

    #[test]
    fn unknown_identifier_named() {
        let err = parse_rate("s + sin(s)").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                name: "sin".into(),
                offset: 4
            }
        );
        assert!(err.to_string().contains("sin"));
    }

    #[test]
    fn printing_is_minimal_but_faithful() {
        let e = parse_rate("(s - (P + 1)) * -(2^s)").unwrap();
        assert_eq!(e.to_string(), "(s-(P+1))*-2^s");
        assert_eq!(parse_rate(&e.to_string()).unwrap(), e);
        assert_eq!(parse_rate("(-s)^2").unwrap().to_string(), "(-s)^2");
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0.0..100.0f64).prop_map(Node::Num),
            Just(Node::Var(Var::Size)),
            Just(Node::Var(Var::Population)),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                inner.clone().prop_map(|a| Node::Exp(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner
                )
                    .prop_map(|(op, a, b)| Node::Bin(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(node in arb_node()) {
            let printed = node.to_string();
            let reparsed = Expr::parse(&printed).unwrap();
            prop_assert_eq!(reparsed.node(), &node, "printed as {}", printed);
        }
    }
}
