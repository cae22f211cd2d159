use super::term::{ArithOp, Lit, Pattern, Term};
use crate::state::{LocId, ThreadId};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    CapIdent(String),
    Int(i64),
    KwDo,
    KwCase,
    KwOf,
    KwLet,
    KwRec,
    KwIn,
    KwIf,
    KwThen,
    KwElse,
    KwReturn,
    KwRetry,
    KwNewVar,
    KwNewCoVar,
    KwReadVar,
    KwWriteVar,
    KwFork,
    KwAtomic,
    KwIsolated,
    KwAbort,
    KwNewNonce,
    KwTrue,
    KwFalse,
    Lambda,
    Arrow,     // ->
    BindArrow, // <-
    BindOp,    // >>=
    SeqOp,     // >>
    EqEq,
    Lt,
    Gt,
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Equals,
    Underscore,
    Hash,
    Eof,
}

#[derive(Debug, Clone)]
struct SpTok {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<SpTok>, ParseError> {
    let mut toks = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0usize;
    macro_rules! push {
        ($t:expr, $l:expr, $c:expr) => {
            toks.push(SpTok {
                tok: $t,
                line: $l,
                col: $c,
            })
        };
    }
    while i < bytes.len() {
        let c = bytes[i];
        let (tl, tc) = (line, col);
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => {
                col += 1;
                i += 1;
            }
            '-' if i + 1 < bytes.len() && bytes[i + 1] == '-' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '-' if i + 1 < bytes.len() && bytes[i + 1] == '>' => {
                push!(Tok::Arrow, tl, tc);
                i += 2;
                col += 2;
            }
            '-' => {
                push!(Tok::Minus, tl, tc);
                i += 1;
                col += 1;
            }
            '<' if i + 1 < bytes.len() && bytes[i + 1] == '-' => {
                push!(Tok::BindArrow, tl, tc);
                i += 2;
                col += 2;
            }
            '<' => {
                push!(Tok::Lt, tl, tc);
                i += 1;
                col += 1;
            }
            '>' if i + 2 < bytes.len() && bytes[i + 1] == '>' && bytes[i + 2] == '=' => {
                push!(Tok::BindOp, tl, tc);
                i += 3;
                col += 3;
            }
            '>' if i + 1 < bytes.len() && bytes[i + 1] == '>' => {
                push!(Tok::SeqOp, tl, tc);
                i += 2;
                col += 2;
            }
            '>' => {
                push!(Tok::Gt, tl, tc);
                i += 1;
                col += 1;
            }
            '=' if i + 1 < bytes.len() && bytes[i + 1] == '=' => {
                push!(Tok::EqEq, tl, tc);
                i += 2;
                col += 2;
            }
            '=' => {
                push!(Tok::Equals, tl, tc);
                i += 1;
                col += 1;
            }
            '\\' => {
                push!(Tok::Lambda, tl, tc);
                i += 1;
                col += 1;
            }
            '+' => {
                push!(Tok::Plus, tl, tc);
                i += 1;
                col += 1;
            }
            '*' => {
                push!(Tok::Star, tl, tc);
                i += 1;
                col += 1;
            }
            '(' => {
                push!(Tok::LParen, tl, tc);
                i += 1;
                col += 1;
            }
            ')' => {
                push!(Tok::RParen, tl, tc);
                i += 1;
                col += 1;
            }
            '{' => {
                push!(Tok::LBrace, tl, tc);
                i += 1;
                col += 1;
            }
            '}' => {
                push!(Tok::RBrace, tl, tc);
                i += 1;
                col += 1;
            }
            ';' => {
                push!(Tok::Semi, tl, tc);
                i += 1;
                col += 1;
            }
            ',' => {
                push!(Tok::Comma, tl, tc);
                i += 1;
                col += 1;
            }
            '#' => {
                push!(Tok::Hash, tl, tc);
                i += 1;
                col += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                    col += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                let n = s.parse::<i64>().map_err(|_| ParseError {
                    line: tl,
                    col: tc,
                    msg: format!("integer literal `{s}` out of range"),
                })?;
                push!(Tok::Int(n), tl, tc);
            }
            '_' if i + 1 >= bytes.len() || !ident_char(bytes[i + 1]) => {
                push!(Tok::Underscore, tl, tc);
                i += 1;
                col += 1;
            }
            c if c.is_ascii_lowercase() || c == '_' => {
                let start = i;
                while i < bytes.len() && ident_char(bytes[i]) {
                    i += 1;
                    col += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                let t = match s.as_str() {
                    "do" => Tok::KwDo,
                    "case" => Tok::KwCase,
                    "of" => Tok::KwOf,
                    "let" => Tok::KwLet,
                    "rec" => Tok::KwRec,
                    "in" => Tok::KwIn,
                    "if" => Tok::KwIf,
                    "then" => Tok::KwThen,
                    "else" => Tok::KwElse,
                    "return" => Tok::KwReturn,
                    "retry" => Tok::KwRetry,
                    "newVar" => Tok::KwNewVar,
                    "newCoVar" => Tok::KwNewCoVar,
                    "readVar" => Tok::KwReadVar,
                    "writeVar" => Tok::KwWriteVar,
                    "fork" => Tok::KwFork,
                    "atomic" => Tok::KwAtomic,
                    "isolated" => Tok::KwIsolated,
                    "abort" => Tok::KwAbort,
                    "newNonce" => Tok::KwNewNonce,
                    "true" => Tok::KwTrue,
                    "false" => Tok::KwFalse,
                    _ => Tok::Ident(s),
                };
                push!(t, tl, tc);
            }
            c if c.is_ascii_uppercase() => {
                let start = i;
                while i < bytes.len() && ident_char(bytes[i]) {
                    i += 1;
                    col += 1;
                }
                push!(Tok::CapIdent(bytes[start..i].iter().collect()), tl, tc);
            }
            // `newVar` is lexed as keyword above; camelCase idents hit the
            // lowercase arm.
            other => {
                return Err(ParseError {
                    line: tl,
                    col: tc,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    toks.push(SpTok {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(toks)
}

fn ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

struct Parser {
    toks: Vec<SpTok>,
    pos: usize,
    scope: Vec<String>,
    /// Allow runtime atoms (`#N` locations, `nonce<..>`, `tid<..>`).
    runtime_atoms: bool,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        (self.toks[self.pos].line, self.toks[self.pos].col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == t {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek() {
            Tok::Lambda => self.lambda(),
            Tok::KwDo => self.do_block(),
            Tok::KwCase => self.case_term(),
            Tok::KwLet => self.let_term(),
            Tok::KwIf => self.if_term(),
            _ => self.bind_expr(),
        }
    }

    fn lambda(&mut self) -> Result<Term, ParseError> {
        self.expect(Tok::Lambda, "`\\`")?;
        let mut params = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Ident(x) => {
                    self.next();
                    params.push(x);
                }
                Tok::Underscore => {
                    self.next();
                    params.push("_".to_string());
                }
                Tok::Arrow if !params.is_empty() => break,
                _ => return self.err("expected parameter or `->` in lambda"),
            }
        }
        self.expect(Tok::Arrow, "`->`")?;
        for p in &params {
            self.scope.push(p.clone());
        }
        let body = self.term()?;
        for _ in &params {
            self.scope.pop();
        }
        let mut t = body;
        for p in params.into_iter().rev() {
            t = Term::Lam(p, Box::new(t));
        }
        Ok(t)
    }

    fn do_block(&mut self) -> Result<Term, ParseError> {
        self.expect(Tok::KwDo, "`do`")?;
        self.expect(Tok::LBrace, "`{` after `do`")?;
        if *self.peek() == Tok::RBrace {
            return self.err("empty do-block");
        }
        let t = self.do_stmts()?;
        self.expect(Tok::RBrace, "`}` closing do-block")?;
        Ok(t)
    }

    /// `x <- M; rest` becomes `M >>= \x -> rest`; `M; rest` becomes
    /// `M >>= \_ -> rest`; a final `M` is itself.
    fn do_stmts(&mut self) -> Result<Term, ParseError> {
        // Binder statement?
        let is_binder = matches!(
            (self.peek(), self.peek2()),
            (Tok::Ident(_), Tok::BindArrow) | (Tok::Underscore, Tok::BindArrow)
        );
        if is_binder {
            let x = match self.next() {
                Tok::Ident(x) => x,
                Tok::Underscore => "_".to_string(),
                _ => unreachable!(),
            };
            self.next(); // <-
            let m = self.term()?;
            if *self.peek() != Tok::Semi {
                return self.err("do-block must end with an expression, not a binder");
            }
            self.next();
            self.scope.push(x.clone());
            let rest = self.do_stmts()?;
            self.scope.pop();
            return Ok(Term::bind(m, Term::Lam(x, Box::new(rest))));
        }
        let m = self.term()?;
        if *self.peek() == Tok::Semi {
            self.next();
            let rest = self.do_stmts()?;
            return Ok(Term::seq(m, rest));
        }
        Ok(m)
    }

    fn case_term(&mut self) -> Result<Term, ParseError> {
        self.expect(Tok::KwCase, "`case`")?;
        let scrut = self.term()?;
        self.expect(Tok::KwOf, "`of`")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut arms = Vec::new();
        loop {
            let pat = self.pattern()?;
            self.expect(Tok::Arrow, "`->` after pattern")?;
            let binders: Vec<String> = match &pat {
                Pattern::Con(_, vs) => vs.clone(),
                Pattern::Var(v) => vec![v.clone()],
                _ => vec![],
            };
            for b in &binders {
                self.scope.push(b.clone());
            }
            let body = self.term()?;
            for _ in &binders {
                self.scope.pop();
            }
            arms.push((pat, body));
            if *self.peek() == Tok::Semi {
                self.next();
                continue;
            }
            break;
        }
        self.expect(Tok::RBrace, "`}` closing case")?;
        Ok(Term::case(scrut, arms))
    }

    fn pattern(&mut self) -> Result<Pattern, ParseError> {
        match self.peek().clone() {
            Tok::CapIdent(tag) => {
                self.next();
                let mut vars = Vec::new();
                loop {
                    match self.peek().clone() {
                        Tok::Ident(v) => {
                            self.next();
                            vars.push(v);
                        }
                        Tok::Underscore => {
                            self.next();
                            vars.push(format!("_p{}", vars.len()));
                        }
                        _ => break,
                    }
                }
                Ok(Pattern::Con(tag, vars))
            }
            Tok::Underscore => {
                self.next();
                Ok(Pattern::Wild)
            }
            Tok::Ident(v) => {
                self.next();
                Ok(Pattern::Var(v))
            }
            Tok::Int(n) => {
                self.next();
                Ok(Pattern::Lit(Lit::Int(n)))
            }
            Tok::Minus => {
                self.next();
                match self.next() {
                    Tok::Int(n) => Ok(Pattern::Lit(Lit::Int(-n))),
                    _ => self.err("expected integer after `-` in pattern"),
                }
            }
            Tok::KwTrue => {
                self.next();
                Ok(Pattern::Lit(Lit::Bool(true)))
            }
            Tok::KwFalse => {
                self.next();
                Ok(Pattern::Lit(Lit::Bool(false)))
            }
            Tok::LParen => {
                self.next();
                if *self.peek() == Tok::RParen {
                    self.next();
                    Ok(Pattern::Lit(Lit::Unit))
                } else {
                    self.err("only `()` is allowed as a parenthesised pattern")
                }
            }
            _ => self.err("expected pattern"),
        }
    }

    fn let_term(&mut self) -> Result<Term, ParseError> {
        self.expect(Tok::KwLet, "`let`")?;
        let recursive = if *self.peek() == Tok::KwRec {
            self.next();
            true
        } else {
            false
        };
        let name = match self.next() {
            Tok::Ident(x) => x,
            _ => return self.err("expected identifier after `let`"),
        };
        self.expect(Tok::Equals, "`=`")?;
        if recursive {
            self.scope.push(name.clone());
        }
        let bound = self.term()?;
        if !recursive {
            self.scope.push(name.clone());
        }
        self.expect(Tok::KwIn, "`in`")?;
        let body = self.term()?;
        self.scope.pop();
        if recursive {
            Ok(Term::LetRec(name, Box::new(bound), Box::new(body)))
        } else {
            Ok(Term::app(Term::Lam(name, Box::new(body)), bound))
        }
    }

    fn if_term(&mut self) -> Result<Term, ParseError> {
        self.expect(Tok::KwIf, "`if`")?;
        let cond = self.term()?;
        self.expect(Tok::KwThen, "`then`")?;
        let then = self.term()?;
        self.expect(Tok::KwElse, "`else`")?;
        let els = self.term()?;
        Ok(Term::case(
            cond,
            vec![
                (Pattern::Lit(Lit::Bool(true)), then),
                (Pattern::Lit(Lit::Bool(false)), els),
            ],
        ))
    }

    /// `>>=` / `>>` chains, left-associative; a lambda/do/case/let/if on the
    /// right extends maximally to the right.
    fn bind_expr(&mut self) -> Result<Term, ParseError> {
        let mut lhs = self.cmp_expr()?;
        loop {
            let seq = match self.peek() {
                Tok::BindOp => false,
                Tok::SeqOp => true,
                _ => return Ok(lhs),
            };
            self.next();
            let tail_form = matches!(
                self.peek(),
                Tok::Lambda | Tok::KwDo | Tok::KwCase | Tok::KwLet | Tok::KwIf
            );
            if tail_form {
                let rhs = self.term()?;
                return Ok(if seq {
                    Term::seq(lhs, rhs)
                } else {
                    Term::bind(lhs, rhs)
                });
            }
            let rhs = self.cmp_expr()?;
            lhs = if seq {
                Term::seq(lhs, rhs)
            } else {
                Term::bind(lhs, rhs)
            };
        }
    }

    fn cmp_expr(&mut self) -> Result<Term, ParseError> {
        let lhs = self.add_expr()?;
        match self.peek() {
            Tok::EqEq => {
                self.next();
                let rhs = self.add_expr()?;
                Ok(Term::PrimEq(Box::new(lhs), Box::new(rhs)))
            }
            Tok::Lt => {
                self.next();
                let rhs = self.add_expr()?;
                Ok(Term::Arith(ArithOp::Lt, Box::new(lhs), Box::new(rhs)))
            }
            _ => Ok(lhs),
        }
    }

    fn add_expr(&mut self) -> Result<Term, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.mul_expr()?;
            lhs = Term::Arith(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> Result<Term, ParseError> {
        let mut lhs = self.app_expr()?;
        while *self.peek() == Tok::Star {
            self.next();
            let rhs = self.app_expr()?;
            lhs = Term::Arith(ArithOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn app_expr(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::KwReturn => {
                self.next();
                Ok(Term::ret(self.atom()?))
            }
            Tok::KwNewVar => {
                self.next();
                Ok(Term::new_var(self.atom()?))
            }
            Tok::KwNewCoVar => {
                self.next();
                Ok(Term::new_co_var(self.atom()?))
            }
            Tok::KwReadVar => {
                self.next();
                Ok(Term::read(self.atom()?))
            }
            Tok::KwWriteVar => {
                self.next();
                let l = self.atom()?;
                let v = self.atom()?;
                Ok(Term::write(l, v))
            }
            Tok::KwFork => {
                self.next();
                Ok(Term::fork(self.atom()?))
            }
            Tok::KwAtomic => {
                self.next();
                let body = self.atom()?;
                let comp = self.atom()?;
                Ok(Term::atomic(body, comp))
            }
            Tok::KwIsolated => {
                self.next();
                Ok(Term::isolated(self.atom()?))
            }
            Tok::KwAbort => {
                self.next();
                Ok(Term::abort(self.atom()?))
            }
            Tok::KwRetry => {
                self.next();
                Ok(Term::Retry)
            }
            Tok::KwNewNonce => {
                self.next();
                Ok(Term::NewNonce)
            }
            Tok::CapIdent(tag) => {
                self.next();
                let mut args = Vec::new();
                while self.starts_atom() {
                    args.push(self.atom()?);
                }
                Ok(Term::Con(tag, args))
            }
            _ => {
                let mut t = self.atom()?;
                while self.starts_atom() {
                    let a = self.atom()?;
                    t = Term::app(t, a);
                }
                Ok(t)
            }
        }
    }

    fn starts_atom(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Ident(_) | Tok::CapIdent(_) | Tok::Int(_) | Tok::LParen | Tok::KwTrue
                | Tok::KwFalse | Tok::KwRetry | Tok::KwNewNonce | Tok::Hash
        )
    }

    fn atom(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(Term::int(n))
            }
            Tok::KwTrue => {
                self.next();
                Ok(Term::bool(true))
            }
            Tok::KwFalse => {
                self.next();
                Ok(Term::bool(false))
            }
            Tok::KwRetry => {
                self.next();
                Ok(Term::Retry)
            }
            Tok::KwNewNonce => {
                self.next();
                Ok(Term::NewNonce)
            }
            Tok::Hash => {
                if !self.runtime_atoms {
                    return self.err("location literals are not allowed in source programs");
                }
                self.next();
                match self.next() {
                    Tok::Int(n) => Ok(Term::Loc(LocId(n as u32))),
                    _ => self.err("expected location number after `#`"),
                }
            }
            Tok::Ident(x) => {
                // Runtime literal forms in state documents.
                if self.runtime_atoms && (x == "nonce" || x == "tid") && *self.peek2() == Tok::Lt {
                    self.next();
                    self.next(); // <
                    let a = match self.next() {
                        Tok::Int(n) => n,
                        _ => return self.err("expected integer in runtime literal"),
                    };
                    if x == "tid" {
                        self.expect(Tok::Gt, "`>`")?;
                        return Ok(Term::Lit(Lit::Tid(ThreadId(a as u32))));
                    }
                    self.expect(Tok::Comma, "`,`")?;
                    let b = match self.next() {
                        Tok::Int(n) => n,
                        _ => return self.err("expected integer in runtime literal"),
                    };
                    self.expect(Tok::Gt, "`>`")?;
                    return Ok(Term::Lit(Lit::Nonce(ThreadId(a as u32), b as u64)));
                }
                if !self.scope.contains(&x) {
                    return self.err(format!("unbound variable `{x}`"));
                }
                self.next();
                Ok(Term::Var(x))
            }
            Tok::CapIdent(tag) => {
                self.next();
                Ok(Term::Con(tag, Vec::new()))
            }
            Tok::LParen => {
                self.next();
                if *self.peek() == Tok::RParen {
                    self.next();
                    return Ok(Term::unit());
                }
                let t = self.term()?;
                if *self.peek() == Tok::Comma {
                    self.next();
                    let u = self.term()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Term::con("Pair", vec![t, u]));
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(t)
            }
            Tok::Minus => {
                self.next();
                match self.next() {
                    Tok::Int(n) => Ok(Term::int(-n)),
                    _ => self.err("expected integer after unary `-`"),
                }
            }
            _ => self.err("expected an expression"),
        }
    }
}

fn run(src: &str, runtime_atoms: bool) -> Result<Term, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        scope: Vec::new(),
        runtime_atoms,
    };
    let t = p.term()?;
    if *p.peek() != Tok::Eof {
        return p.err("trailing input after term");
    }
    Ok(t)
}

/// Parse a source program. The result is closed and free of runtime-only
/// atoms (locations, nonces, thread ids); unbound variables are reported at
/// their use site.
pub fn parse_program(src: &str) -> Result<Term, ParseError> {
    run(src, false)
}

/// Parse a term from a state document; runtime atoms are allowed.
pub fn parse_term_with_locs(src: &str) -> Result<Term, ParseError> {
    run(src, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn do_notation_desugars() {
        let t = parse_program("do { x <- newVar 0; readVar x }").unwrap();
        let want = Term::bind(
            Term::new_var(Term::int(0)),
            Term::lam("x", Term::read(Term::var("x"))),
        );
        assert_eq!(t, want);
    }

    #[test]
    fn return_unit() {
        assert_eq!(parse_program("return ()").unwrap(), Term::ret(Term::unit()));
    }

    #[test]
    fn empty_do_is_error() {
        assert!(parse_program("do { }").is_err());
    }

    #[test]
    fn unbound_variable_reported() {
        let err = parse_program("readVar x").unwrap_err();
        assert!(err.msg.contains("unbound variable `x`"), "{err}");
    }

    #[test]
    fn location_literal_rejected_in_programs() {
        assert!(parse_program("readVar #0").is_err());
        assert!(parse_term_with_locs("readVar #0").is_ok());
    }

    #[test]
    fn seq_sugar() {
        let t = parse_program("do { retry; return () }").unwrap();
        assert_eq!(t, Term::seq(Term::Retry, Term::ret(Term::unit())));
    }

    #[test]
    fn bind_chain_left_assoc() {
        let t = parse_program("return 1 >>= (\\x -> return x) >>= (\\y -> return y)").unwrap();
        match t {
            Term::Bind(l, _) => assert!(matches!(*l, Term::Bind(..))),
            other => panic!("expected bind, got {other:?}"),
        }
    }
}
