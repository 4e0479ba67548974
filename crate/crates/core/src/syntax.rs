//! Tokenizer and shared term/guard parsing for the rule-pack and query
//! languages.

use std::fmt;

use thiserror::Error;

use crate::model::{expand_prefixed, make_numeric, validate_iri, vocab, Term};
use crate::pattern::{Guard, GuardOp, PatternTerm, TriplePattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {position}: {message}")]
pub struct SyntaxError {
    pub position: Position,
    pub message: String,
}

impl SyntaxError {
    pub fn new(position: Position, message: impl Into<String>) -> Self {
        SyntaxError { position, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Word(String),
    PName(String),
    IriRef(String),
    Var(String),
    Literal { lexical: String, datatype: Option<String> },
    Number(String),
    Op(GuardOp),
    Dot,
    Colon,
    LBrace,
    RBrace,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Word(w) => write!(f, "'{w}'"),
            Token::PName(p) => write!(f, "'{p}'"),
            Token::IriRef(i) => write!(f, "<{i}>"),
            Token::Var(v) => write!(f, "?{v}"),
            Token::Literal { lexical, .. } => write!(f, "\"{lexical}\""),
            Token::Number(n) => write!(f, "{n}"),
            Token::Op(op) => write!(f, "'{}'", op.symbol()),
            Token::Dot => f.write_str("'.'"),
            Token::Colon => f.write_str("':'"),
            Token::LBrace => f.write_str("'{'"),
            Token::RBrace => f.write_str("'}'"),
        }
    }
}

struct Lexer {
    chars: Vec<char>,
    index: usize,
    line: usize,
    column: usize,
}

impl Lexer {
    fn position(&self) -> Position {
        Position { line: self.line, column: self.column }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.index).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.index + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.index += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            out.push(c);
            self.bump();
        }
        out
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while self.peek().is_some_and(|c| c != '\n') {
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn iri_ref(&mut self, start: Position) -> Result<String, SyntaxError> {
        self.bump(); // '<'
        let body = self.take_while(|c| c != '>' && !c.is_whitespace());
        if self.peek() != Some('>') {
            return Err(SyntaxError::new(start, "unterminated IRI reference"));
        }
        self.bump();
        validate_iri(&body).map_err(|e| SyntaxError::new(start, e.to_string()))?;
        Ok(body)
    }

    fn quoted(&mut self, start: Position) -> Result<String, SyntaxError> {
        self.bump(); // '"'
        let mut out = String::new();
        loop {
            match self.bump() {
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    _ => return Err(SyntaxError::new(start, "bad escape in string literal")),
                },
                Some(c) => out.push(c),
                None => return Err(SyntaxError::new(start, "unterminated string literal")),
            }
        }
    }

    fn number(&mut self) -> String {
        let mut out = String::new();
        if let Some(sign @ ('+' | '-')) = self.peek() {
            out.push(sign);
            self.bump();
        }
        out.push_str(&self.take_while(|c| c.is_ascii_digit()));
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            out.push('.');
            self.bump();
            out.push_str(&self.take_while(|c| c.is_ascii_digit()));
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let digit_at = if matches!(self.peek_at(1), Some('+' | '-')) { 2 } else { 1 };
            if self.peek_at(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                for _ in 0..digit_at {
                    out.push(self.bump().unwrap());
                }
                out.push_str(&self.take_while(|c| c.is_ascii_digit()));
            }
        }
        out
    }

    fn next_token(&mut self) -> Result<Option<(Token, Position)>, SyntaxError> {
        self.skip_trivia();
        let start = self.position();
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        let token = match c {
            '?' => {
                self.bump();
                let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                if name.is_empty() {
                    return Err(SyntaxError::new(start, "expected variable name after '?'"));
                }
                Token::Var(name)
            }
            '<' => match self.peek_at(1) {
                Some('=') => {
                    self.bump();
                    self.bump();
                    Token::Op(GuardOp::Le)
                }
                Some(n) if n.is_ascii_alphabetic() => Token::IriRef(self.iri_ref(start)?),
                _ => {
                    self.bump();
                    Token::Op(GuardOp::Lt)
                }
            },
            '>' => {
                self.bump();
                if self.peek() == Some('=') {
                    self.bump();
                    Token::Op(GuardOp::Ge)
                } else {
                    Token::Op(GuardOp::Gt)
                }
            }
            '=' => {
                self.bump();
                Token::Op(GuardOp::Eq)
            }
            '!' if self.peek_at(1) == Some('=') => {
                self.bump();
                self.bump();
                Token::Op(GuardOp::Ne)
            }
            '.' => {
                self.bump();
                Token::Dot
            }
            ':' => {
                self.bump();
                Token::Colon
            }
            '{' => {
                self.bump();
                Token::LBrace
            }
            '}' => {
                self.bump();
                Token::RBrace
            }
            '"' => {
                let lexical = self.quoted(start)?;
                let datatype = if self.peek() == Some('^') && self.peek_at(1) == Some('^') {
                    self.bump();
                    self.bump();
                    let dt_start = self.position();
                    match self.next_token()? {
                        Some((Token::IriRef(iri), _)) => Some(iri),
                        Some((Token::PName(name), pos)) => {
                            Some(expand_prefixed(&name).map_err(|e| SyntaxError::new(pos, e.to_string()))?)
                        }
                        _ => return Err(SyntaxError::new(dt_start, "expected datatype after '^^'")),
                    }
                } else {
                    None
                };
                Token::Literal { lexical, datatype }
            }
            c if c.is_ascii_digit()
                || (matches!(c, '-' | '+') && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                Token::Number(self.number())
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let word = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
                if self.peek() == Some(':') && self.peek_at(1).is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                    self.bump();
                    let mut local = String::new();
                    while let Some(c) = self.peek() {
                        if !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '#' | '/')) {
                            break;
                        }
                        // a trailing '.' terminates the statement, it is not part of the name
                        if c == '.' && !self.peek_at(1).is_some_and(|n| n.is_ascii_alphanumeric() || n == '_') {
                            break;
                        }
                        local.push(c);
                        self.bump();
                    }
                    Token::PName(format!("{word}:{local}"))
                } else {
                    Token::Word(word)
                }
            }
            other => return Err(SyntaxError::new(start, format!("unexpected character '{other}'"))),
        };
        Ok(Some((token, start)))
    }
}

pub fn tokenize(source: &str) -> Result<Vec<(Token, Position)>, SyntaxError> {
    let mut lexer = Lexer { chars: source.chars().collect(), index: 0, line: 1, column: 1 };
    let mut tokens = Vec::new();
    while let Some(token) = lexer.next_token()? {
        tokens.push(token);
    }
    Ok(tokens)
}

/// Cursor over a token list with grammar helpers.
pub struct TokenStream {
    tokens: Vec<(Token, Position)>,
    index: usize,
    end: Position,
}

impl TokenStream {
    pub fn new(source: &str) -> Result<Self, SyntaxError> {
        let tokens = tokenize(source)?;
        let end = end_position(source);
        Ok(TokenStream { tokens, index: 0, end })
    }

    pub fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.index).map(|(t, _)| t)
    }

    pub fn position(&self) -> Position {
        self.tokens.get(self.index).map(|(_, p)| *p).unwrap_or(self.end)
    }

    pub fn at_end(&self) -> bool {
        self.index >= self.tokens.len()
    }

    pub fn advance(&mut self) -> Option<(Token, Position)> {
        let token = self.tokens.get(self.index).cloned();
        if token.is_some() {
            self.index += 1;
        }
        token
    }

    pub fn error(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError::new(self.position(), message)
    }

    fn unexpected(&self, expected: &str) -> SyntaxError {
        match self.peek() {
            Some(token) => self.error(format!("expected {expected}, found {token}")),
            None => self.error(format!("expected {expected}, found end of input")),
        }
    }

    pub fn is_keyword(&self, keyword: &str) -> bool {
        matches!(self.peek(), Some(Token::Word(w)) if w == keyword)
    }

    pub fn eat_keyword(&mut self, keyword: &str) -> bool {
        if self.is_keyword(keyword) {
            self.index += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_keyword(&mut self, keyword: &str) -> Result<(), SyntaxError> {
        if self.eat_keyword(keyword) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("'{keyword}'")))
        }
    }

    pub fn eat(&mut self, token: &Token) -> bool {
        if self.peek() == Some(token) {
            self.index += 1;
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, token: &Token) -> Result<(), SyntaxError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.unexpected(&token.to_string()))
        }
    }

    /// An identifier such as a pack id, rule id or domain tag.
    pub fn identifier(&mut self, what: &str) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(Token::Word(w)) => {
                let w = w.clone();
                self.index += 1;
                Ok(w)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    pub fn is_term_start(&self) -> bool {
        matches!(
            self.peek(),
            Some(Token::IriRef(_) | Token::PName(_) | Token::Var(_) | Token::Literal { .. } | Token::Number(_))
        )
    }

    pub fn term(&mut self) -> Result<PatternTerm, SyntaxError> {
        let position = self.position();
        let fail = |message: String| SyntaxError::new(position, message);
        let term = match self.peek().cloned() {
            Some(Token::IriRef(iri)) => PatternTerm::Const(Term::Iri(iri)),
            Some(Token::PName(name)) => {
                PatternTerm::Const(Term::Iri(expand_prefixed(&name).map_err(|e| fail(e.to_string()))?))
            }
            Some(Token::Var(name)) => PatternTerm::Var(name),
            Some(Token::Literal { lexical, datatype }) => {
                let datatype = datatype.unwrap_or_else(|| vocab::XSD_STRING.to_string());
                PatternTerm::Const(Term::literal(lexical, &datatype).map_err(|e| fail(e.to_string()))?)
            }
            Some(Token::Number(text)) => PatternTerm::Const(number_term(&text).map_err(fail)?),
            _ => return Err(self.unexpected("a term")),
        };
        self.index += 1;
        Ok(term)
    }

    pub fn pattern(&mut self) -> Result<TriplePattern, SyntaxError> {
        let position = self.position();
        let subject = self.term()?;
        let predicate = self.term()?;
        let object = self.term()?;
        if subject.as_const().is_some_and(Term::is_literal) {
            return Err(SyntaxError::new(position, "a literal cannot be a subject"));
        }
        TriplePattern::new(subject, predicate, object).map_err(|e| SyntaxError::new(position, e.to_string()))
    }

    pub fn number(&mut self) -> Result<f64, SyntaxError> {
        match self.peek().cloned() {
            Some(Token::Number(text)) => {
                let value = parse_number(&text).map_err(|m| self.error(m))?;
                self.index += 1;
                Ok(value)
            }
            _ => Err(self.unexpected("a number")),
        }
    }

    pub fn guard(&mut self) -> Result<Guard, SyntaxError> {
        let variable = match self.peek().cloned() {
            Some(Token::Var(name)) => {
                self.index += 1;
                name
            }
            _ => return Err(self.unexpected("a variable")),
        };
        let op = match self.peek().cloned() {
            Some(Token::Op(op)) => {
                self.index += 1;
                op
            }
            _ => return Err(self.unexpected("a comparison operator")),
        };
        let constant = self.number()?;
        Ok(Guard { variable, op, constant })
    }
}

fn end_position(source: &str) -> Position {
    let mut position = Position { line: 1, column: 1 };
    for c in source.chars() {
        if c == '\n' {
            position.line += 1;
            position.column = 1;
        } else {
            position.column += 1;
        }
    }
    position
}

fn parse_number(text: &str) -> Result<f64, String> {
    text.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("invalid number {text:?}"))
}

/// Bare numbers in patterns are doubles, matching how observation values are stored.
fn number_term(text: &str) -> Result<Term, String> {
    let value = parse_number(text)?;
    make_numeric(value, vocab::XSD_DOUBLE).map_err(|e| e.to_string())
}
