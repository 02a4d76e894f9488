use std::collections::BTreeSet;

use super::{BodyTerm, Literal, RuleError, RuleSchema, RuleSet, Source, Term};
use crate::kg::{CRF_TREATS, IS_MENTIONED_IN};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Quoted(String),
    At,
    Eq,
    LBracket,
    RBracket,
    Colon,
    LParen,
    RParen,
    Comma,
    Amp,
    Bang,
    NotEq,
    Arrow,
    Caret,
    Minus,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> RuleError {
        RuleError::Syntax {
            line: self.line,
            column: column + 1,
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, RuleError> {
        let mut out = Vec::new();
        while let Some(&(col, c)) = self.chars.peek() {
            if c.is_whitespace() {
                self.chars.next();
                continue;
            }
            if c == '#' {
                break;
            }
            self.chars.next();
            let tok = match c {
                '@' => {
                    out.push((col, Tok::At));
                    let mut id = String::new();
                    while let Some(&(_, ch)) = self.chars.peek() {
                        if ch.is_alphanumeric() || ch == '_' || ch == '-' || ch == '.' {
                            id.push(ch);
                            self.chars.next();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(id)
                }
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                ':' => Tok::Colon,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '&' => Tok::Amp,
                '^' => Tok::Caret,
                '=' => Tok::Eq,
                '!' => {
                    if matches!(self.chars.peek(), Some((_, '='))) {
                        self.chars.next();
                        Tok::NotEq
                    } else {
                        Tok::Bang
                    }
                }
                '-' => {
                    if matches!(self.chars.peek(), Some((_, '>'))) {
                        self.chars.next();
                        Tok::Arrow
                    } else {
                        Tok::Minus
                    }
                }
                '\'' | '"' => {
                    let mut s = String::new();
                    let mut closed = false;
                    while let Some((_, ch)) = self.chars.next() {
                        match ch {
                            '\\' => {
                                if let Some((_, esc)) = self.chars.next() {
                                    s.push(esc);
                                }
                            }
                            ch if ch == c => {
                                closed = true;
                                break;
                            }
                            ch => s.push(ch),
                        }
                    }
                    if !closed {
                        return Err(self.err(col, "unterminated string"));
                    }
                    Tok::Quoted(s)
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let mut s = String::from(c);
                    while let Some(&(_, ch)) = self.chars.peek() {
                        let exp_sign = (ch == '-' || ch == '+') && s.ends_with(['e', 'E']);
                        if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                            s.push(ch);
                            self.chars.next();
                        } else {
                            break;
                        }
                    }
                    let v: f64 = s
                        .parse()
                        .map_err(|_| self.err(col, format!("bad number `{s}`")))?;
                    Tok::Number(v)
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut s = String::from(c);
                    while let Some(&(_, ch)) = self.chars.peek() {
                        if ch.is_alphanumeric() || ch == '_' {
                            s.push(ch);
                            self.chars.next();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => return Err(self.err(col, format!("unexpected character `{other}`"))),
            };
            out.push((col, tok));
        }
        Ok(out)
    }
}

struct RuleParser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    line: usize,
    line_len: usize,
}

impl RuleParser {
    fn err(&self, message: impl Into<String>) -> RuleError {
        let column = self.toks.get(self.pos).map_or(self.line_len, |(c, _)| *c) + 1;
        RuleError::Syntax {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), RuleError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, RuleError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn literal(&mut self) -> Result<Literal, RuleError> {
        let negated = self.eat(&Tok::Bang);
        let predicate = self.ident("predicate name")?.to_lowercase();
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        loop {
            match self.next() {
                Some(Tok::Ident(v)) => args.push(Term::Var(v)),
                Some(Tok::Quoted(c)) => args.push(Term::Const(c)),
                _ => {
                    self.pos -= 1;
                    return Err(self.err("expected variable or quoted constant"));
                }
            }
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(Tok::RParen, "`,` or `)`")?;
            break;
        }
        Ok(Literal {
            predicate,
            args,
            negated,
        })
    }

    fn body_term(&mut self) -> Result<BodyTerm, RuleError> {
        if self.eat(&Tok::LParen) {
            let a = self.ident("variable")?;
            self.expect(Tok::NotEq, "`!=`")?;
            let b = self.ident("variable")?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(BodyTerm::NotEqual(a, b));
        }
        Ok(BodyTerm::Literal(self.literal()?))
    }
}

fn infer_source(body: &[BodyTerm]) -> Source {
    let preds: Vec<&str> = body
        .iter()
        .filter_map(|t| match t {
            BodyTerm::Literal(l) => Some(l.predicate.as_str()),
            BodyTerm::NotEqual(..) => None,
        })
        .collect();
    if preds.is_empty() {
        Source::Prior
    } else if preds.contains(&CRF_TREATS) {
        Source::Crf
    } else if preds.contains(&IS_MENTIONED_IN) {
        Source::Narratives
    } else {
        Source::Ontologies
    }
}

/// Parses rule text, one rule per line. A missing source tag is inferred
/// from the body predicates; a missing id becomes `rule<N>`.
pub fn parse_rules(text: &str) -> Result<RuleSet, RuleError> {
    let mut rules: Vec<RuleSchema> = Vec::new();
    let mut ids = BTreeSet::new();
    let mut default_squared = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("//") {
            continue;
        }
        if let Some(directive) = trimmed.strip_prefix('%') {
            let mut parts = directive.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("hinge"), Some("linear"), None) => default_squared = false,
                (Some("hinge"), Some("squared"), None) => default_squared = true,
                _ => {
                    return Err(RuleError::UnknownDirective {
                        line,
                        name: directive.trim().to_string(),
                    })
                }
            }
            continue;
        }
        let toks = Lexer {
            chars: raw.char_indices().peekable(),
            line,
        }
        .tokens()?;
        let mut p = RuleParser {
            toks,
            pos: 0,
            line,
            line_len: raw.len(),
        };

        let id = if p.eat(&Tok::At) {
            p.ident("rule id")?
        } else {
            format!("rule{}", rules.len() + 1)
        };
        let learnable = !p.eat(&Tok::Eq);
        let negative = p.eat(&Tok::Minus);
        let weight = match p.next() {
            Some(Tok::Number(w)) => {
                if negative {
                    -w
                } else {
                    w
                }
            }
            _ => {
                p.pos -= 1;
                return Err(p.err("expected rule weight"));
            }
        };
        if negative {
            return Err(RuleError::NegativeWeight { line, weight });
        }
        let mut source = None;
        if p.eat(&Tok::LBracket) {
            let name = p.ident("source tag")?;
            source = Some(Source::parse(&name).ok_or(RuleError::UnknownSource { line, name })?);
            p.expect(Tok::RBracket, "`]`")?;
        }
        p.expect(Tok::Colon, "`:`")?;
        let mut body = Vec::new();
        if !p.eat(&Tok::Arrow) {
            loop {
                body.push(p.body_term()?);
                if p.eat(&Tok::Amp) {
                    continue;
                }
                p.expect(Tok::Arrow, "`&` or `->`")?;
                break;
            }
        }
        let head = p.literal()?;
        let mut squared = default_squared;
        if p.eat(&Tok::Caret) {
            match p.next() {
                Some(Tok::Number(x)) if x == 1.0 => squared = false,
                Some(Tok::Number(x)) if x == 2.0 => squared = true,
                _ => {
                    p.pos -= 1;
                    return Err(p.err("hinge exponent must be 1 or 2"));
                }
            }
        }
        if p.peek().is_some() {
            return Err(p.err("unexpected trailing input"));
        }
        if !ids.insert(id.clone()) {
            return Err(RuleError::DuplicateId { line, id });
        }
        let rule = RuleSchema {
            id,
            weight,
            learnable,
            source: source.unwrap_or_else(|| infer_source(&body)),
            body,
            head,
            squared,
        };
        rule.check_safety()
            .map_err(|message| RuleError::Unsafe { line, message })?;
        rules.push(rule);
    }
    Ok(RuleSet { rules })
}
