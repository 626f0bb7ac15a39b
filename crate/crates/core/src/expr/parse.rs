use std::collections::BTreeMap;

use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp, Var, VarKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable `{name}` at byte {offset} is out of range (declared dimension {dim})")]
    VariableOutOfRange {
        name: String,
        offset: usize,
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn syntax(offset: usize, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            offset,
            message: message.into(),
        }
    }

    fn tokenize(mut self) -> Result<Vec<(Token, usize)>, ParseError> {
        let bytes = self.src.as_bytes();
        let mut out = Vec::new();
        loop {
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            let start = self.pos;
            if self.pos >= bytes.len() {
                out.push((Token::End, start));
                return Ok(out);
            }
            let c = bytes[self.pos];
            let tok = match c {
                b'0'..=b'9' | b'.' => self.number()?,
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    while self.pos < bytes.len()
                        && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
                    {
                        self.pos += 1;
                    }
                    Token::Ident(self.src[start..self.pos].to_string())
                }
                b'+' | b'-' | b'*' | b'/' | b'^' => {
                    self.pos += 1;
                    Token::Op(c as char)
                }
                b'(' => {
                    self.pos += 1;
                    Token::LParen
                }
                b')' => {
                    self.pos += 1;
                    Token::RParen
                }
                _ => {
                    let ch = self.src[start..].chars().next().unwrap_or('?');
                    return Err(Self::syntax(start, format!("unexpected character `{ch}`")));
                }
            };
            out.push((tok, start));
        }
    }

    fn number(&mut self) -> Result<Token, ParseError> {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let digits = |pos: &mut usize| {
            let s = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - s
        };
        let mut count = digits(&mut self.pos);
        if self.pos < bytes.len() && bytes[self.pos] == b'.' {
            self.pos += 1;
            count += digits(&mut self.pos);
        }
        if count == 0 {
            return Err(Self::syntax(start, "malformed number"));
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if digits(&mut self.pos) == 0 {
                return Err(Self::syntax(mark, "malformed exponent"));
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(Token::Number)
            .map_err(|_| Self::syntax(start, format!("malformed number `{text}`")))
    }
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    n: usize,
    m: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> (Token, usize) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.bump() {
            (Token::RParen, _) => Ok(()),
            (_, offset) => Err(ParseError::Syntax {
                offset,
                message: "expected `)`".into(),
            }),
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Token::Op('+') => BinaryOp::Add,
                Token::Op('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Token::Op('*') => BinaryOp::Mul,
                Token::Op('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    // unary := ('-' | '+') unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Token::Op('-') => {
                self.bump();
                Ok(Expr::unary(UnaryOp::Neg, self.unary()?))
            }
            Token::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    // power := primary ('^' unary)?   (right-associative through unary)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Token::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, offset) = self.bump();
        match tok {
            Token::Number(x) => Ok(Expr::Const(x)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Token::Ident(name) => self.identifier(name, offset),
            Token::End => Err(ParseError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            }),
            Token::Op(c) => Err(ParseError::Syntax {
                offset,
                message: format!("unexpected operator `{c}`"),
            }),
            Token::RParen => Err(ParseError::Syntax {
                offset,
                message: "unexpected `)`".into(),
            }),
        }
    }

    fn identifier(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        if let Some(op) = UnaryOp::from_name(&name) {
            match self.bump() {
                (Token::LParen, _) => {}
                (_, at) => {
                    return Err(ParseError::Syntax {
                        offset: at,
                        message: format!("expected `(` after `{name}`"),
                    })
                }
            }
            let arg = self.expr()?;
            self.expect_rparen()?;
            return Ok(Expr::unary(op, arg));
        }
        if let Some(var) = self.variable(&name, offset)? {
            return Ok(Expr::Var(var));
        }
        if let Some(value) = self.params.get(&name) {
            return Ok(Expr::Const(*value));
        }
        Err(ParseError::UnknownIdentifier { name, offset })
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Option<Var>, ParseError> {
        let (kind, dim) = match name.as_bytes().first() {
            Some(b'z') => (VarKind::State, self.n),
            Some(b'u') => (VarKind::Input, self.m),
            _ => return Ok(None),
        };
        let digits = &name[1..];
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Ok(None);
        }
        // overflowing indices are out of range like 0
        let k: usize = digits.parse().unwrap_or_default();
        if k == 0 || k > dim {
            return Err(ParseError::VariableOutOfRange {
                name: name.to_string(),
                offset,
                dim,
            });
        }
        Ok(Some(Var {
            kind,
            index: k - 1,
        }))
    }
}

/// Parses `text` against `n` state and `m` input variables.
pub fn parse(text: &str, n: usize, m: usize) -> Result<Expr, ParseError> {
    parse_with_params(text, n, m, &BTreeMap::new())
}

/// Like [`parse`], with named constants substituted for identifiers that are
/// neither variables nor functions.
pub fn parse_with_params(
    text: &str,
    n: usize,
    m: usize,
    params: &BTreeMap<String, f64>,
) -> Result<Expr, ParseError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        n,
        m,
        params,
    };
    let e = parser.expr()?;
    if *parser.peek() != Token::End {
        return Err(ParseError::Syntax {
            offset: parser.offset(),
            message: "trailing input".into(),
        });
    }
    Ok(e.simplify())
}
