use super::ast::{Action, TccsProc};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {msg}")]
pub struct TccsParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    CapIdent(String),
    KwTau,
    KwCo,
    KwRec,
    Zero,
    Tick,
    Dot,
    Plus,
    Pipe,
    Backslash,
    LBrace,
    RBrace,
    Comma,
    LParen,
    RParen,
    LBrack2, // [[
    RBrack2, // ]]
    Gt,
    Eof,
}

struct SpTok {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<SpTok>, TccsParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let mut push = |tok: Tok| {
            toks.push(SpTok {
                tok,
                line: tl,
                col: tc,
            })
        };
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
            '-' if i + 1 < chars.len() && chars[i + 1] == '-' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '[' if i + 1 < chars.len() && chars[i + 1] == '[' => {
                push(Tok::LBrack2);
                i += 2;
                col += 2;
            }
            ']' if i + 1 < chars.len() && chars[i + 1] == ']' => {
                push(Tok::RBrack2);
                i += 2;
                col += 2;
            }
            '\'' => {
                push(Tok::Tick);
                i += 1;
                col += 1;
            }
            '.' => {
                push(Tok::Dot);
                i += 1;
                col += 1;
            }
            '+' => {
                push(Tok::Plus);
                i += 1;
                col += 1;
            }
            '|' => {
                push(Tok::Pipe);
                i += 1;
                col += 1;
            }
            '\\' => {
                push(Tok::Backslash);
                i += 1;
                col += 1;
            }
            '{' => {
                push(Tok::LBrace);
                i += 1;
                col += 1;
            }
            '}' => {
                push(Tok::RBrace);
                i += 1;
                col += 1;
            }
            ',' => {
                push(Tok::Comma);
                i += 1;
                col += 1;
            }
            '(' => {
                push(Tok::LParen);
                i += 1;
                col += 1;
            }
            ')' => {
                push(Tok::RParen);
                i += 1;
                col += 1;
            }
            '>' => {
                push(Tok::Gt);
                i += 1;
                col += 1;
            }
            '0' => {
                push(Tok::Zero);
                i += 1;
                col += 1;
            }
            c if c.is_ascii_lowercase() => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                    col += 1;
                }
                let s: String = chars[start..i].iter().collect();
                push(match s.as_str() {
                    "tau" => Tok::KwTau,
                    "co" => Tok::KwCo,
                    "rec" => Tok::KwRec,
                    _ => Tok::Ident(s),
                });
            }
            c if c.is_ascii_uppercase() => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                    col += 1;
                }
                push(Tok::CapIdent(chars[start..i].iter().collect()));
            }
            other => {
                return Err(TccsParseError {
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

struct Parser {
    toks: Vec<SpTok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, TccsParseError> {
        Err(TccsParseError {
            line: self.toks[self.pos].line,
            col: self.toks[self.pos].col,
            msg: msg.into(),
        })
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), TccsParseError> {
        if *self.peek() == t {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn proc(&mut self) -> Result<TccsProc, TccsParseError> {
        let mut parts = vec![self.sum()?];
        while *self.peek() == Tok::Pipe {
            self.next();
            parts.push(self.sum()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            TccsProc::Par(parts)
        })
    }

    fn sum(&mut self) -> Result<TccsProc, TccsParseError> {
        let (first, guarded) = self.guarded()?;
        if *self.peek() != Tok::Plus {
            return Ok(first);
        }
        // A real sum: every operand must be action-prefixed.
        let mut branches = match (guarded, first) {
            (true, TccsProc::Sum(b)) => b,
            _ => return self.err("sum operands must be action prefixes"),
        };
        while *self.peek() == Tok::Plus {
            self.next();
            let (next, g) = self.guarded()?;
            match (g, next) {
                (true, TccsProc::Sum(mut b)) => branches.append(&mut b),
                _ => return self.err("sum operands must be action prefixes"),
            }
        }
        Ok(TccsProc::Sum(branches))
    }

    /// Returns the parsed term and whether it is an action prefix (eligible
    /// as a summand).
    fn guarded(&mut self) -> Result<(TccsProc, bool), TccsParseError> {
        match self.peek().clone() {
            Tok::Ident(a) => {
                self.next();
                self.expect(Tok::Dot, "`.` after action")?;
                let (p, _) = self.guarded()?;
                Ok((TccsProc::prefix(Action::In(a), p), true))
            }
            Tok::Tick => {
                self.next();
                let a = match self.next() {
                    Tok::Ident(a) => a,
                    _ => return self.err("expected channel name after `'`"),
                };
                self.expect(Tok::Dot, "`.` after action")?;
                let (p, _) = self.guarded()?;
                Ok((TccsProc::prefix(Action::Out(a), p), true))
            }
            Tok::KwTau => {
                self.next();
                self.expect(Tok::Dot, "`.` after `tau`")?;
                let (p, _) = self.guarded()?;
                Ok((TccsProc::prefix(Action::Tau, p), true))
            }
            Tok::KwCo => {
                self.next();
                self.expect(Tok::Dot, "`.` after `co`")?;
                let (p, _) = self.guarded()?;
                Ok((TccsProc::Commit(Box::new(p)), false))
            }
            Tok::KwRec => {
                self.next();
                let x = match self.next() {
                    Tok::CapIdent(x) => x,
                    _ => return self.err("expected process variable after `rec`"),
                };
                self.expect(Tok::Dot, "`.` after recursion binder")?;
                let (p, _) = self.guarded()?;
                Ok((TccsProc::Rec(x, Box::new(p)), false))
            }
            _ => Ok((self.postfix()?, false)),
        }
    }

    fn postfix(&mut self) -> Result<TccsProc, TccsParseError> {
        let mut p = self.atom()?;
        while *self.peek() == Tok::Backslash {
            self.next();
            self.expect(Tok::LBrace, "`{` after `\\`")?;
            let mut names = BTreeSet::new();
            loop {
                match self.next() {
                    Tok::Ident(a) => {
                        names.insert(a);
                    }
                    _ => return self.err("expected channel name in restriction"),
                }
                match self.next() {
                    Tok::Comma => continue,
                    Tok::RBrace => break,
                    _ => return self.err("expected `,` or `}` in restriction"),
                }
            }
            p = TccsProc::Restrict(Box::new(p), names);
        }
        Ok(p)
    }

    fn atom(&mut self) -> Result<TccsProc, TccsParseError> {
        match self.peek().clone() {
            Tok::Zero => {
                self.next();
                Ok(TccsProc::nil())
            }
            Tok::CapIdent(x) => {
                self.next();
                Ok(TccsProc::Var(x))
            }
            Tok::LParen => {
                self.next();
                let p = self.proc()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(p)
            }
            Tok::LBrack2 => {
                self.next();
                let p1 = self.proc()?;
                match self.next() {
                    Tok::Comma => {
                        let p2 = self.proc()?;
                        self.expect(Tok::RBrack2, "`]]`")?;
                        Ok(TccsProc::Inactive(Box::new(p1), Box::new(p2)))
                    }
                    Tok::Gt => {
                        let k = match self.next() {
                            Tok::Ident(k) => k,
                            _ => return self.err("expected transaction name"),
                        };
                        self.expect(Tok::Gt, "`>` closing transaction name")?;
                        let p2 = self.proc()?;
                        self.expect(Tok::RBrack2, "`]]`")?;
                        Ok(TccsProc::Active(k, Box::new(p1), Box::new(p2)))
                    }
                    _ => self.err("expected `,` or `>k>` inside `[[ ]]`"),
                }
            }
            _ => self.err("expected a process"),
        }
    }
}

/// Parse a process term in the concrete syntax: `a.P`, `'a.P` (coaction),
/// `tau.P`, `P + Q`, `P | Q`, `P \ {a,b}`, `rec X. P`, `X`,
/// `[[ P , Q ]]`, `[[ P >k> Q ]]`, `co.P`, `0`.
pub fn parse_tccs(src: &str) -> Result<TccsProc, TccsParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let r = p.proc()?;
    if *p.peek() != Tok::Eof {
        return p.err("trailing input after process");
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sync_pair() {
        let p = parse_tccs("a.0 | 'a.0").unwrap();
        assert_eq!(p.to_string(), "a.0 | 'a.0");
    }

    #[test]
    fn parses_sum_and_restriction() {
        let p = parse_tccs("(a.0 + b.0) \\ {b} | 'a.0").unwrap();
        match &p {
            TccsProc::Par(ps) => {
                assert!(matches!(ps[0], TccsProc::Restrict(..)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parses_transactions() {
        let p = parse_tccs("[[ a.co.0 >k> b.0 ]] | [[ c.0 , 0 ]]").unwrap();
        let comps = p.components();
        assert!(matches!(comps[0], TccsProc::Active(..)));
        assert!(matches!(comps[1], TccsProc::Inactive(..)));
    }

    #[test]
    fn rejects_unguarded_sum() {
        assert!(parse_tccs("0 + a.0").is_err());
        assert!(parse_tccs("co.0 + a.0").is_err());
    }

    #[test]
    fn parses_recursion() {
        let p = parse_tccs("rec X. a.X | 'a.0").unwrap();
        let comps = p.components();
        assert!(matches!(comps[0], TccsProc::Rec(..)));
    }

    #[test]
    fn display_round_trip() {
        for src in [
            "a.0 | 'a.0",
            "(a.0 + b.0) \\ {b}",
            "[[ a.co.0 >k> b.0 ]]",
            "[[ a.co.0 , b.0 ]]",
            "rec X. a.X",
            "tau.a.'b.0",
            "co.(a.0 | b.0)",
        ] {
            let p = parse_tccs(src).unwrap();
            let printed = p.to_string();
            let back = parse_tccs(&printed)
                .unwrap_or_else(|e| panic!("reparse of `{printed}`: {e}"));
            assert_eq!(p, back, "{src} -> {printed}");
        }
    }
}
