//! Concrete surface syntax for state assertions, terms and formulas, plus
//! `.dcspec` specification files.
//!
//! ```text
//! formula   := ("forall" | "exists") IDENT ("in" "{" num, ... "}")? ":" formula
//!            | chop
//! chop      := implies (";" chop)?          -- loosest binary op, right-assoc
//! implies   := or ("=>" implies)?
//! or        := and ("|" and)*
//! and       := unary ("&" unary)*
//! unary     := ("!" | "[]" | "<>") unary | atom
//! atom      := "(" formula ")" | "true" | "false" | "ae" "(" assertion ")"
//!            | NAME                         -- reference to a named formula
//!            | term REL term                -- REL: = != < <= > >=
//! term      := sum of products over: NUMBER | IDENT | "len"
//!            | "int" "(" assertion ")" | "min"/"max" "(" term "," term ")"
//! assertion := "0" | "1" | IDENT ("=" NUMBER)? with "!", "&", "|"
//! ```
//!
//! `.dcspec` files hold one statement per line (`--` comments; lines inside
//! unbalanced parentheses or braces continue): `observable N [in {..}]`,
//! `let x [= v]`, `domain x = {..}`, `def Name = formula`.

use super::syntax::{ArithOp, Formula, RelOp, StateAssertion, Term, Valuation};
use super::time::Rat;
use super::trace::{Observable, Schema};
use num::{BigInt, One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}: undeclared identifier `{name}`")]
    Undeclared { line: usize, name: String },
    #[error("{line}: duplicate declaration of `{name}`")]
    Duplicate { line: usize, name: String },
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(Rat),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Semi,
    Bang,
    Amp,
    Pipe,
    Arrow,
    BoxOp,
    DiamondOp,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(_) => write!(f, "number"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Amp => write!(f, "`&`"),
            Tok::Pipe => write!(f, "`|`"),
            Tok::Arrow => write!(f, "`=>`"),
            Tok::BoxOp => write!(f, "`[]`"),
            Tok::DiamondOp => write!(f, "`<>`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Ne => write!(f, "`!=`"),
            Tok::Lt => write!(f, "`<`"),
            Tok::Le => write!(f, "`<=`"),
            Tok::Gt => write!(f, "`>`"),
            Tok::Ge => write!(f, "`>=`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str, start_line: usize) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = start_line;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();

    macro_rules! push {
        ($tok:expr, $width:expr) => {{
            out.push(Spanned { tok: $tok, line, col });
            col += $width;
        }};
    }

    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '-' => {
                chars.next();
                if chars.peek() == Some(&'-') {
                    // line comment
                    while let Some(&c) = chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        chars.next();
                    }
                } else {
                    push!(Tok::Minus, 1);
                }
            }
            '(' => {
                chars.next();
                push!(Tok::LParen, 1);
            }
            ')' => {
                chars.next();
                push!(Tok::RParen, 1);
            }
            '{' => {
                chars.next();
                push!(Tok::LBrace, 1);
            }
            '}' => {
                chars.next();
                push!(Tok::RBrace, 1);
            }
            ',' => {
                chars.next();
                push!(Tok::Comma, 1);
            }
            ':' => {
                chars.next();
                push!(Tok::Colon, 1);
            }
            ';' => {
                chars.next();
                push!(Tok::Semi, 1);
            }
            '&' => {
                chars.next();
                push!(Tok::Amp, 1);
            }
            '|' => {
                chars.next();
                push!(Tok::Pipe, 1);
            }
            '+' => {
                chars.next();
                push!(Tok::Plus, 1);
            }
            '*' => {
                chars.next();
                push!(Tok::Star, 1);
            }
            '/' => {
                chars.next();
                push!(Tok::Slash, 1);
            }
            '!' => {
                chars.next();
                if chars.peek() == Some(&'=') {
                    chars.next();
                    push!(Tok::Ne, 2);
                } else {
                    push!(Tok::Bang, 1);
                }
            }
            '=' => {
                chars.next();
                if chars.peek() == Some(&'>') {
                    chars.next();
                    push!(Tok::Arrow, 2);
                } else {
                    push!(Tok::Eq, 1);
                }
            }
            '<' => {
                chars.next();
                match chars.peek() {
                    Some('=') => {
                        chars.next();
                        push!(Tok::Le, 2);
                    }
                    Some('>') => {
                        chars.next();
                        push!(Tok::DiamondOp, 2);
                    }
                    _ => push!(Tok::Lt, 1),
                }
            }
            '>' => {
                chars.next();
                if chars.peek() == Some(&'=') {
                    chars.next();
                    push!(Tok::Ge, 2);
                } else {
                    push!(Tok::Gt, 1);
                }
            }
            '[' => {
                chars.next();
                if chars.peek() == Some(&']') {
                    chars.next();
                    push!(Tok::BoxOp, 2);
                } else {
                    return Err(ParseError::Syntax {
                        line,
                        col,
                        message: "stray `[` (the box operator is `[]`)".into(),
                    });
                }
            }
            c if c.is_ascii_digit() => {
                let start_col = col;
                let mut digits = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        digits.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                let mut frac = String::new();
                if chars.peek() == Some(&'.') {
                    chars.next();
                    col += 1;
                    while let Some(&c) = chars.peek() {
                        if c.is_ascii_digit() {
                            frac.push(c);
                            chars.next();
                            col += 1;
                        } else {
                            break;
                        }
                    }
                    if frac.is_empty() {
                        return Err(ParseError::Syntax {
                            line,
                            col,
                            message: "digits expected after decimal point".into(),
                        });
                    }
                }
                let mantissa: BigInt = format!("{digits}{frac}").parse().unwrap();
                let scale = BigInt::from(10u32).pow(frac.len() as u32);
                out.push(Spanned { tok: Tok::Number(Rat::new(mantissa, scale)), line, col: start_col });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start_col = col;
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        ident.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Tok::Ident(ident), line, col: start_col });
            }
            other => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    message: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

/// Declarations visible while parsing; empty for bare `parse_formula`,
/// populated (and enforced) for `.dcspec` files.
#[derive(Debug, Default)]
struct Context {
    checked: bool,
    observables: BTreeSet<String>,
    variables: BTreeSet<String>,
    formulas: BTreeMap<String, Formula>,
}

struct Parser<'c> {
    tokens: Vec<Spanned>,
    pos: usize,
    ctx: &'c Context,
    /// Quantifier-bound variables currently in scope.
    bound: Vec<String>,
}

impl<'c> Parser<'c> {
    fn new(tokens: Vec<Spanned>, ctx: &'c Context) -> Self {
        Parser { tokens, pos: 0, ctx, bound: Vec::new() }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let s = &self.tokens[self.pos.min(self.tokens.len() - 1)];
        (s.line, s.col)
    }

    fn next(&mut self) -> Tok {
        let tok = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError::Syntax { line, col, message: message.into() })
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.next();
            Ok(())
        } else {
            self.error(format!("expected {tok}, found {}", self.peek()))
        }
    }

    fn at_end(&self) -> bool {
        *self.peek() == Tok::Eof
    }

    fn ident_is(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn take_ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            other => self.error(format!("expected identifier, found {other}")),
        }
    }

    // -- formulas ----------------------------------------------------------

    fn formula(&mut self) -> Result<Formula, ParseError> {
        if self.ident_is("forall") || self.ident_is("exists") {
            let universal = self.ident_is("forall");
            self.next();
            let var = self.take_ident()?;
            let domain = if self.ident_is("in") {
                self.next();
                Some(self.domain_literal()?)
            } else {
                None
            };
            self.expect(Tok::Colon)?;
            self.bound.push(var.clone());
            let body = self.formula();
            self.bound.pop();
            let body = Box::new(body?);
            return Ok(if universal {
                Formula::ForAll { var, domain, body }
            } else {
                Formula::Exists { var, domain, body }
            });
        }
        self.chop()
    }

    fn domain_literal(&mut self) -> Result<Vec<Rat>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut values = Vec::new();
        loop {
            let neg = if *self.peek() == Tok::Minus {
                self.next();
                true
            } else {
                false
            };
            match self.next() {
                Tok::Number(n) => values.push(if neg { -n } else { n }),
                other => return self.error(format!("expected number in domain, found {other}")),
            }
            match self.next() {
                Tok::Comma => continue,
                Tok::RBrace => break,
                other => return self.error(format!("expected `,` or `}}` in domain, found {other}")),
            }
        }
        Ok(values)
    }

    fn chop(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.implies()?;
        if *self.peek() == Tok::Semi {
            self.next();
            let rhs = self.chop()?; // right-associative
            Ok(lhs.chop(rhs))
        } else {
            Ok(lhs)
        }
    }

    fn implies(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.disjunction()?;
        if *self.peek() == Tok::Arrow {
            self.next();
            let rhs = self.implies()?;
            Ok(lhs.implies(rhs))
        } else {
            Ok(lhs)
        }
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.conjunction()?;
        while *self.peek() == Tok::Pipe {
            self.next();
            acc = acc.or(self.conjunction()?);
        }
        Ok(acc)
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut acc = self.unary()?;
        while *self.peek() == Tok::Amp {
            self.next();
            acc = acc.and(self.unary()?);
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Tok::Bang => {
                self.next();
                Ok(self.unary()?.not())
            }
            Tok::BoxOp => {
                self.next();
                Ok(self.unary()?.always())
            }
            Tok::DiamondOp => {
                self.next();
                Ok(self.unary()?.eventually())
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        match self.peek().clone() {
            Tok::LParen => {
                // Either a parenthesised formula or a parenthesised term
                // starting a comparison; try the formula, back off when the
                // parse fails or a term operator follows. On a double
                // failure, report whichever attempt got further.
                let snapshot = self.pos;
                self.next();
                let formula_attempt = self.formula();
                match formula_attempt {
                    Ok(f) if *self.peek() == Tok::RParen
                        && !is_term_continuation(self.peek_at(1)) =>
                    {
                        self.next();
                        Ok(f)
                    }
                    Ok(_) => {
                        self.pos = snapshot;
                        self.comparison()
                    }
                    Err(formula_err) => {
                        let formula_pos = self.pos;
                        self.pos = snapshot;
                        self.comparison().map_err(|cmp_err| {
                            if formula_pos > self.pos {
                                formula_err
                            } else {
                                cmp_err
                            }
                        })
                    }
                }
            }
            Tok::Ident(word) => match word.as_str() {
                "true" => {
                    self.next();
                    Ok(Formula::True)
                }
                "false" => {
                    self.next();
                    Ok(Formula::True.not())
                }
                "ae" => {
                    self.next();
                    self.expect(Tok::LParen)?;
                    let p = self.assertion()?;
                    self.expect(Tok::RParen)?;
                    Ok(Formula::ae(p))
                }
                name if self.ctx.formulas.contains_key(name) && !is_term_continuation(self.peek_at(1)) => {
                    self.next();
                    Ok(self.ctx.formulas[name].clone())
                }
                _ => self.comparison(),
            },
            _ => self.comparison(),
        }
    }

    fn comparison(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.term()?;
        let op = match self.peek() {
            Tok::Eq => RelOp::Eq,
            Tok::Ne => RelOp::Ne,
            Tok::Lt => RelOp::Lt,
            Tok::Le => RelOp::Le,
            Tok::Gt => RelOp::Gt,
            Tok::Ge => RelOp::Ge,
            other => return self.error(format!("expected relational operator, found {other}")),
        };
        self.next();
        let rhs = self.term()?;
        Ok(Formula::Cmp(op, lhs, rhs))
    }

    // -- terms --------------------------------------------------------------

    fn term(&mut self) -> Result<Term, ParseError> {
        let mut acc = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => break,
            };
            self.next();
            acc = Term::bin(op, acc, self.product()?);
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<Term, ParseError> {
        let mut acc = self.term_unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => break,
            };
            self.next();
            acc = Term::bin(op, acc, self.term_unary()?);
        }
        Ok(acc)
    }

    fn term_unary(&mut self) -> Result<Term, ParseError> {
        if *self.peek() == Tok::Minus {
            self.next();
            Ok(Term::Neg(Box::new(self.term_unary()?)))
        } else {
            self.term_atom()
        }
    }

    fn term_atom(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.next();
                Ok(Term::Const(n))
            }
            Tok::LParen => {
                self.next();
                let t = self.term()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Tok::Ident(word) => match word.as_str() {
                "len" => {
                    self.next();
                    Ok(Term::Length)
                }
                "int" => {
                    self.next();
                    self.expect(Tok::LParen)?;
                    let p = self.assertion()?;
                    self.expect(Tok::RParen)?;
                    Ok(Term::Duration(p))
                }
                "min" | "max" => {
                    let op = if word == "min" { ArithOp::Min } else { ArithOp::Max };
                    self.next();
                    self.expect(Tok::LParen)?;
                    let a = self.term()?;
                    self.expect(Tok::Comma)?;
                    let b = self.term()?;
                    self.expect(Tok::RParen)?;
                    Ok(Term::bin(op, a, b))
                }
                _ => {
                    let (line, _) = self.here();
                    let name = self.take_ident()?;
                    if self.ctx.checked
                        && !self.ctx.variables.contains(&name)
                        && !self.bound.contains(&name)
                    {
                        return Err(ParseError::Undeclared { line, name });
                    }
                    Ok(Term::Var(name))
                }
            },
            other => self.error(format!("expected term, found {other}")),
        }
    }

    // -- state assertions ----------------------------------------------------

    fn assertion(&mut self) -> Result<StateAssertion, ParseError> {
        let mut acc = self.assertion_and()?;
        while *self.peek() == Tok::Pipe {
            self.next();
            acc = acc.or(self.assertion_and()?);
        }
        Ok(acc)
    }

    fn assertion_and(&mut self) -> Result<StateAssertion, ParseError> {
        let mut acc = self.assertion_unary()?;
        while *self.peek() == Tok::Amp {
            self.next();
            acc = acc.and(self.assertion_unary()?);
        }
        Ok(acc)
    }

    fn assertion_unary(&mut self) -> Result<StateAssertion, ParseError> {
        if *self.peek() == Tok::Bang {
            self.next();
            Ok(self.assertion_unary()?.not())
        } else {
            self.assertion_atom()
        }
    }

    fn assertion_atom(&mut self) -> Result<StateAssertion, ParseError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.next();
                let p = self.assertion()?;
                self.expect(Tok::RParen)?;
                Ok(p)
            }
            Tok::Number(n) => {
                self.next();
                if n.is_zero() {
                    Ok(StateAssertion::Const(false))
                } else if n.is_one() {
                    Ok(StateAssertion::Const(true))
                } else {
                    self.error("state constants are `0` and `1`")
                }
            }
            Tok::Ident(word) => match word.as_str() {
                "true" => {
                    self.next();
                    Ok(StateAssertion::Const(true))
                }
                "false" => {
                    self.next();
                    Ok(StateAssertion::Const(false))
                }
                _ => {
                    let (line, _) = self.here();
                    let name = self.take_ident()?;
                    if self.ctx.checked && !self.ctx.observables.contains(&name) {
                        return Err(ParseError::Undeclared { line, name });
                    }
                    if *self.peek() == Tok::Eq {
                        self.next();
                        match self.next() {
                            Tok::Number(n) if n.is_integer() && !n.is_negative() => {
                                Ok(StateAssertion::VarEq(name, to_u32(&n)?))
                            }
                            _ => self.error("expected a non-negative integer observable value"),
                        }
                    } else {
                        Ok(StateAssertion::var(name))
                    }
                }
            },
            other => self.error(format!("expected state assertion, found {other}")),
        }
    }
}

fn to_u32(n: &Rat) -> Result<u32, ParseError> {
    use num::ToPrimitive;
    n.to_integer().to_u32().ok_or(ParseError::Syntax {
        line: 0,
        col: 0,
        message: format!("observable value {n} out of range"),
    })
}

/// Tokens that, after a closing `)`, show the parentheses belonged to a
/// term rather than a formula.
fn is_term_continuation(tok: &Tok) -> bool {
    matches!(
        tok,
        Tok::Plus
            | Tok::Minus
            | Tok::Star
            | Tok::Slash
            | Tok::Eq
            | Tok::Ne
            | Tok::Lt
            | Tok::Le
            | Tok::Gt
            | Tok::Ge
    )
}

/// Parses a formula without any declaration context: identifiers inside
/// `ae`/`int` are observables, bare identifiers in terms are global
/// variables; both are validated at evaluation time.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let ctx = Context::default();
    let mut p = Parser::new(lex(text, 1)?, &ctx);
    let f = p.formula()?;
    if !p.at_end() {
        return p.error(format!("unexpected {} after formula", p.peek()));
    }
    Ok(f)
}

pub fn parse_term(text: &str) -> Result<Term, ParseError> {
    let ctx = Context::default();
    let mut p = Parser::new(lex(text, 1)?, &ctx);
    let t = p.term()?;
    if !p.at_end() {
        return p.error(format!("unexpected {} after term", p.peek()));
    }
    Ok(t)
}

pub fn parse_assertion(text: &str) -> Result<StateAssertion, ParseError> {
    let ctx = Context::default();
    let mut p = Parser::new(lex(text, 1)?, &ctx);
    let a = p.assertion()?;
    if !p.at_end() {
        return p.error(format!("unexpected {} after state assertion", p.peek()));
    }
    Ok(a)
}

// ---------------------------------------------------------------------------
// Printer
// ---------------------------------------------------------------------------

/// Prints a rational: exact decimal where the denominator divides a power
/// of ten, `p/q` otherwise (the latter reparses as a division, which is
/// evaluation-equivalent).
fn format_rat(r: &Rat) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    let mut denom = r.denom().clone();
    let mut twos = 0u32;
    let mut fives = 0u32;
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&denom % &two).is_zero() {
        denom /= &two;
        twos += 1;
    }
    while (&denom % &five).is_zero() {
        denom /= &five;
        fives += 1;
    }
    if denom.is_one() {
        let digits = twos.max(fives);
        let scale = BigInt::from(10u32).pow(digits);
        let scaled = r.numer() * &scale / r.denom();
        let neg = scaled.is_negative();
        let s = scaled.abs().to_string();
        let s = format!("{:0>width$}", s, width = digits as usize + 1);
        let split = s.len() - digits as usize;
        format!("{}{}.{}", if neg { "-" } else { "" }, &s[..split], &s[split..])
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn fmt_assertion(p: &StateAssertion, level: u8, out: &mut String) {
    // levels: | = 0, & = 1, ! = 2, atoms = 3
    let own = match p {
        StateAssertion::Or(..) => 0,
        StateAssertion::And(..) => 1,
        StateAssertion::Not(..) => 2,
        _ => 3,
    };
    let parens = own < level;
    if parens {
        out.push('(');
    }
    match p {
        StateAssertion::Const(false) => out.push('0'),
        StateAssertion::Const(true) => out.push('1'),
        StateAssertion::VarEq(name, 1) => out.push_str(name),
        StateAssertion::VarEq(name, v) => {
            let _ = write!(out, "{name} = {v}");
        }
        StateAssertion::Not(q) => {
            out.push('!');
            fmt_assertion(q, 2, out);
        }
        StateAssertion::And(a, b) => {
            fmt_assertion(a, 1, out);
            out.push_str(" & ");
            fmt_assertion(b, 2, out);
        }
        StateAssertion::Or(a, b) => {
            fmt_assertion(a, 0, out);
            out.push_str(" | ");
            fmt_assertion(b, 1, out);
        }
    }
    if parens {
        out.push(')');
    }
}

fn fmt_term(t: &Term, level: u8, out: &mut String) {
    // levels: +- = 0, */ = 1, unary - = 2, atoms = 3
    let own = match t {
        Term::Bin(ArithOp::Add | ArithOp::Sub, ..) => 0,
        Term::Bin(ArithOp::Mul | ArithOp::Div, ..) => 1,
        Term::Neg(..) => 2,
        _ => 3,
    };
    let parens = own < level;
    if parens {
        out.push('(');
    }
    match t {
        Term::Var(name) => out.push_str(name),
        Term::Const(c) => out.push_str(&format_rat(c)),
        Term::Length => out.push_str("len"),
        Term::Duration(p) => {
            out.push_str("int(");
            fmt_assertion(p, 0, out);
            out.push(')');
        }
        Term::Neg(x) => {
            out.push('-');
            fmt_term(x, 2, out);
        }
        Term::Bin(op @ (ArithOp::Min | ArithOp::Max), a, b) => {
            out.push_str(op.symbol());
            out.push('(');
            fmt_term(a, 0, out);
            out.push_str(", ");
            fmt_term(b, 0, out);
            out.push(')');
        }
        Term::Bin(op, a, b) => {
            fmt_term(a, own, out);
            let _ = write!(out, " {} ", op.symbol());
            fmt_term(b, own + 1, out);
        }
    }
    if parens {
        out.push(')');
    }
}

fn fmt_formula(f: &Formula, level: u8, out: &mut String) {
    // levels: quantifier = 0, ; = 1, => = 2, | = 3, & = 4, prefix = 5, atoms = 6
    let own = match f {
        Formula::ForAll { .. } | Formula::Exists { .. } => 0,
        Formula::Chop(..) => 1,
        Formula::Implies(..) => 2,
        Formula::Or(..) => 3,
        Formula::And(..) => 4,
        Formula::Not(..) | Formula::Always(..) | Formula::Eventually(..) => 5,
        _ => 6,
    };
    let parens = own < level;
    if parens {
        out.push('(');
    }
    match f {
        Formula::True => out.push_str("true"),
        Formula::Cmp(op, a, b) => {
            fmt_term(a, 0, out);
            let _ = write!(out, " {} ", op.symbol());
            fmt_term(b, 0, out);
        }
        Formula::Not(g) => {
            out.push('!');
            fmt_formula(g, 5, out);
        }
        Formula::Always(g) => {
            out.push_str("[]");
            fmt_formula(g, 5, out);
        }
        Formula::Eventually(g) => {
            out.push_str("<>");
            fmt_formula(g, 5, out);
        }
        Formula::And(a, b) => {
            fmt_formula(a, 4, out);
            out.push_str(" & ");
            fmt_formula(b, 5, out);
        }
        Formula::Or(a, b) => {
            fmt_formula(a, 3, out);
            out.push_str(" | ");
            fmt_formula(b, 4, out);
        }
        Formula::Implies(a, b) => {
            fmt_formula(a, 3, out);
            out.push_str(" => ");
            fmt_formula(b, 2, out);
        }
        Formula::Chop(a, b) => {
            fmt_formula(a, 2, out);
            out.push_str(" ; ");
            fmt_formula(b, 1, out);
        }
        Formula::AlmostEverywhere(p) => {
            out.push_str("ae(");
            fmt_assertion(p, 0, out);
            out.push(')');
        }
        Formula::ForAll { var, domain, body } | Formula::Exists { var, domain, body } => {
            out.push_str(if matches!(f, Formula::ForAll { .. }) { "forall " } else { "exists " });
            out.push_str(var);
            if let Some(domain) = domain {
                out.push_str(" in {");
                for (i, v) in domain.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(&format_rat(v));
                }
                out.push('}');
            }
            out.push_str(": ");
            fmt_formula(body, 0, out);
        }
    }
    if parens {
        out.push(')');
    }
}

/// Canonical text of a formula; `parse_formula(format(f))` is structurally
/// equal to `f` for every formula expressible in the surface grammar.
pub fn format(f: &Formula) -> String {
    let mut out = String::new();
    fmt_formula(f, 0, &mut out);
    out
}

pub fn format_term(t: &Term) -> String {
    let mut out = String::new();
    fmt_term(t, 0, &mut out);
    out
}

pub fn format_assertion(p: &StateAssertion) -> String {
    let mut out = String::new();
    fmt_assertion(p, 0, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Specification files
// ---------------------------------------------------------------------------

/// A loaded `.dcspec` bundle: declared observables, variable bindings and
/// quantifier domains, and named formulas in declaration order.
#[derive(Debug, Clone)]
pub struct SpecFile {
    pub schema: Schema,
    /// Variables declared with `let`, bound or not.
    pub declared_vars: BTreeSet<String>,
    pub valuation: Valuation,
    pub formulas: Vec<(String, Formula)>,
}

impl SpecFile {
    pub fn formula(&self, name: &str) -> Option<&Formula> {
        self.formulas.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.formulas.iter().map(|(n, _)| n.as_str())
    }
}

/// The specification bundle shipped with the engine: the immature/matured
/// phase formulas, the per-iteration design budgets, the lifespan deadline
/// requirement and the offline-analysis deadline, over the instrumentation
/// observables.
pub const BUNDLED_SPEC: &str = include_str!("../../assets/paper.dcspec");

/// Name under which [`BUNDLED_SPEC`] is addressable on the command line.
pub const BUNDLED_SPEC_NAME: &str = "paper";

/// Parses a `.dcspec` source. Every identifier used by a formula must be
/// declared first; duplicate names across all declaration kinds are
/// rejected.
pub fn parse_spec(text: &str) -> Result<SpecFile, ParseError> {
    let mut ctx = Context { checked: true, ..Context::default() };
    let mut observables: Vec<Observable> = Vec::new();
    let mut valuation = Valuation::new();
    let mut declared_vars = BTreeSet::new();
    let mut domains_declared = BTreeSet::new();
    let mut formulas: Vec<(String, Formula)> = Vec::new();

    let check_fresh = |ctx: &Context, domains: &BTreeSet<String>, line: usize, name: &str| {
        if ctx.observables.contains(name)
            || ctx.variables.contains(name)
            || ctx.formulas.contains_key(name)
            || domains.contains(name)
        {
            Err(ParseError::Duplicate { line, name: name.to_string() })
        } else {
            Ok(())
        }
    };

    for stmt in logical_statements(text) {
        let tokens = lex(&stmt.text, stmt.line)?;
        if tokens.len() == 1 {
            continue; // blank or comment-only
        }
        let mut p = Parser::new(tokens, &ctx);
        let keyword = p.take_ident().map_err(|_| ParseError::Syntax {
            line: stmt.line,
            col: 1,
            message: "expected `observable`, `let`, `domain` or `def`".into(),
        })?;
        match keyword.as_str() {
            "observable" => {
                let name = p.take_ident()?;
                check_fresh(&ctx, &domains_declared, stmt.line, &name)?;
                let domain = if p.ident_is("in") {
                    p.next();
                    p.domain_literal()?
                        .iter()
                        .map(to_u32)
                        .collect::<Result<Vec<_>, _>>()?
                } else {
                    vec![0, 1]
                };
                if !p.at_end() {
                    return p.error("trailing input after observable declaration");
                }
                ctx.observables.insert(name.clone());
                observables.push(Observable::with_domain(name, domain));
            }
            "let" => {
                let name = p.take_ident()?;
                check_fresh(&ctx, &domains_declared, stmt.line, &name)?;
                if *p.peek() == Tok::Eq {
                    p.next();
                    let neg = if *p.peek() == Tok::Minus {
                        p.next();
                        true
                    } else {
                        false
                    };
                    match p.next() {
                        Tok::Number(n) => {
                            valuation.bind(&name, if neg { -n } else { n });
                        }
                        other => {
                            return p.error(format!("expected number after `=`, found {other}"))
                        }
                    }
                }
                if !p.at_end() {
                    return p.error("trailing input after let declaration");
                }
                ctx.variables.insert(name.clone());
                declared_vars.insert(name);
            }
            "domain" => {
                let name = p.take_ident()?;
                check_fresh(&ctx, &domains_declared, stmt.line, &name)?;
                p.expect(Tok::Eq)?;
                let values = p.domain_literal()?;
                if !p.at_end() {
                    return p.error("trailing input after domain declaration");
                }
                // Quantified occurrences of `name` pick the domain up from
                // the valuation at evaluation time.
                domains_declared.insert(name.clone());
                valuation.declare_domain(name, values);
            }
            "def" => {
                let name = p.take_ident()?;
                check_fresh(&ctx, &domains_declared, stmt.line, &name)?;
                p.expect(Tok::Eq)?;
                let f = p.formula()?;
                if !p.at_end() {
                    return p.error(format!("unexpected {} after formula", p.peek()));
                }
                formulas.push((name.clone(), f.clone()));
                ctx.formulas.insert(name, f);
            }
            other => {
                return Err(ParseError::Syntax {
                    line: stmt.line,
                    col: 1,
                    message: format!("unknown statement keyword `{other}`"),
                });
            }
        }
    }

    let schema = Schema::new(observables).map_err(|e| ParseError::Syntax {
        line: 0,
        col: 0,
        message: e.to_string(),
    })?;
    Ok(SpecFile { schema, declared_vars, valuation, formulas })
}

struct Statement {
    line: usize,
    text: String,
}

/// Splits source into logical statements: one per line, where lines with
/// unbalanced `(`/`{` absorb following lines. Comments are stripped first.
fn logical_statements(text: &str) -> Vec<Statement> {
    let mut out: Vec<Statement> = Vec::new();
    let mut depth = 0i32;
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find("--") {
            Some(idx) => &raw[..idx],
            None => raw,
        };
        let opens = line.chars().filter(|c| *c == '(' || *c == '{').count() as i32;
        let closes = line.chars().filter(|c| *c == ')' || *c == '}').count() as i32;
        if depth > 0 {
            let last = out.last_mut().unwrap();
            last.text.push('\n');
            last.text.push_str(line);
        } else if !line.trim().is_empty() {
            out.push(Statement { line: i + 1, text: line.to_string() });
        }
        depth = (depth + opens - closes).max(0);
    }
    out
}

/// Loads the bundled specification; infallible by construction (covered by
/// tests).
pub fn bundled_spec() -> SpecFile {
    parse_spec(BUNDLED_SPEC).expect("bundled spec parses")
}
