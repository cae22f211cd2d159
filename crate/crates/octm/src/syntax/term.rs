use crate::state::{LocId, ThreadId};
use std::fmt;

/// Terms of the object language. Monadic combinators (`return`, `>>=`,
/// `newVar`, `readVar`, `writeVar`, `fork`, `atomic`, `isolated`, `abort`,
/// `retry`, `newNonce`) are treated as values by the pure evaluator; they are
/// consumed by the machine rules instead.
///
/// `Loc` and the `Nonce`/`Tid` literals only arise at runtime; the program
/// parser never produces them.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Loc(LocId),
    Lam(String, Box<Term>),
    App(Box<Term>, Box<Term>),
    Return(Box<Term>),
    Bind(Box<Term>, Box<Term>),
    /// `newVar M` / `newCoVar M`. The `co` flag marks allocations that play
    /// the commit-channel role in encodings; the machine records such
    /// locations so equivalence checking can recognise commit plumbing.
    NewVar {
        init: Box<Term>,
        co: bool,
    },
    ReadVar(Box<Term>),
    WriteVar(Box<Term>, Box<Term>),
    Fork(Box<Term>),
    /// `atomic M N`: run `M` as a transaction participant with compensation
    /// `N` (a function of the abort value).
    Atomic(Box<Term>, Box<Term>),
    Isolated(Box<Term>),
    Abort(Box<Term>),
    Retry,
    Lit(Lit),
    Con(String, Vec<Term>),
    Case(Box<Term>, Vec<CaseArm>),
    PrimEq(Box<Term>, Box<Term>),
    Arith(ArithOp, Box<Term>, Box<Term>),
    /// `let rec x = bound in body`. When `body` is `Var x` the whole term is
    /// the recursive knot; applying or forcing it unfolds `bound` once.
    LetRec(String, Box<Term>, Box<Term>),
    NewNonce,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Lit {
    Int(i64),
    Bool(bool),
    Unit,
    /// Unique per machine run: creating thread paired with a per-thread
    /// counter.
    Nonce(ThreadId, u64),
    /// Thread ids are first-class values (`fork` returns one).
    Tid(ThreadId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Lt,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CaseArm {
    pub pattern: Pattern,
    pub body: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// Constructor pattern; binds one variable per argument.
    Con(String, Vec<String>),
    Lit(Lit),
    /// Catch-all that binds the scrutinee.
    Var(String),
    Wild,
}

impl Term {
    /// Values of the pure evaluator. Strict positions (function/argument of
    /// an application, constructor arguments, the location argument of
    /// `readVar`/`writeVar`, operands of primitives, case scrutinees) must be
    /// evaluated before the containing term counts as a value.
    pub fn is_value(&self) -> bool {
        match self {
            Term::Loc(_) | Term::Lit(_) | Term::Lam(..) | Term::Retry | Term::NewNonce => true,
            Term::Return(_)
            | Term::Bind(..)
            | Term::Fork(_)
            | Term::Atomic(..)
            | Term::Isolated(_)
            | Term::Abort(_)
            | Term::NewVar { .. } => true,
            Term::ReadVar(m) => m.is_value(),
            Term::WriteVar(l, _) => l.is_value(),
            Term::Var(_)
            | Term::App(..)
            | Term::Con(..)
            | Term::Case(..)
            | Term::PrimEq(..)
            | Term::Arith(..)
            | Term::LetRec(..) => match self {
                Term::Con(_, args) => args.iter().all(Term::is_value),
                _ => false,
            },
        }
    }

    pub fn lam(x: impl Into<String>, body: Term) -> Term {
        Term::Lam(x.into(), Box::new(body))
    }

    pub fn app(f: Term, a: Term) -> Term {
        Term::App(Box::new(f), Box::new(a))
    }

    pub fn app2(f: Term, a: Term, b: Term) -> Term {
        Term::app(Term::app(f, a), b)
    }

    pub fn app3(f: Term, a: Term, b: Term, c: Term) -> Term {
        Term::app(Term::app2(f, a, b), c)
    }

    pub fn ret(m: Term) -> Term {
        Term::Return(Box::new(m))
    }

    pub fn bind(m: Term, f: Term) -> Term {
        Term::Bind(Box::new(m), Box::new(f))
    }

    /// `m >> n`, i.e. `m >>= \_ -> n`.
    pub fn seq(m: Term, n: Term) -> Term {
        Term::bind(m, Term::lam("_", n))
    }

    pub fn var(x: impl Into<String>) -> Term {
        Term::Var(x.into())
    }

    pub fn unit() -> Term {
        Term::Lit(Lit::Unit)
    }

    pub fn int(n: i64) -> Term {
        Term::Lit(Lit::Int(n))
    }

    pub fn bool(b: bool) -> Term {
        Term::Lit(Lit::Bool(b))
    }

    pub fn con(tag: impl Into<String>, args: Vec<Term>) -> Term {
        Term::Con(tag.into(), args)
    }

    pub fn read(loc: Term) -> Term {
        Term::ReadVar(Box::new(loc))
    }

    pub fn write(loc: Term, v: Term) -> Term {
        Term::WriteVar(Box::new(loc), Box::new(v))
    }

    pub fn new_var(init: Term) -> Term {
        Term::NewVar {
            init: Box::new(init),
            co: false,
        }
    }

    pub fn new_co_var(init: Term) -> Term {
        Term::NewVar {
            init: Box::new(init),
            co: true,
        }
    }

    pub fn fork(m: Term) -> Term {
        Term::Fork(Box::new(m))
    }

    pub fn isolated(m: Term) -> Term {
        Term::Isolated(Box::new(m))
    }

    pub fn atomic(body: Term, comp: Term) -> Term {
        Term::Atomic(Box::new(body), Box::new(comp))
    }

    pub fn abort(m: Term) -> Term {
        Term::Abort(Box::new(m))
    }

    pub fn case(scrut: Term, arms: Vec<(Pattern, Term)>) -> Term {
        Term::Case(
            Box::new(scrut),
            arms.into_iter()
                .map(|(pattern, body)| CaseArm { pattern, body })
                .collect(),
        )
    }

    /// The `return` combinator as a function: `\v -> return v`. Used where a
    /// compensation slot holds bare `return`.
    pub fn return_eta() -> Term {
        Term::lam("_v", Term::ret(Term::var("_v")))
    }

    /// Walk all location ids syntactically occurring in the term.
    pub fn collect_locs(&self, out: &mut std::collections::BTreeSet<LocId>) {
        match self {
            Term::Loc(r) => {
                out.insert(*r);
            }
            Term::Var(_) | Term::Lit(_) | Term::Retry | Term::NewNonce => {}
            Term::Lam(_, b) | Term::Return(b) | Term::ReadVar(b) | Term::Fork(b)
            | Term::Isolated(b) | Term::Abort(b) | Term::NewVar { init: b, .. } => {
                b.collect_locs(out)
            }
            Term::App(a, b)
            | Term::Bind(a, b)
            | Term::WriteVar(a, b)
            | Term::Atomic(a, b)
            | Term::PrimEq(a, b)
            | Term::Arith(_, a, b)
            | Term::LetRec(_, a, b) => {
                a.collect_locs(out);
                b.collect_locs(out);
            }
            Term::Con(_, args) => {
                for a in args {
                    a.collect_locs(out);
                }
            }
            Term::Case(s, arms) => {
                s.collect_locs(out);
                for arm in arms {
                    arm.body.collect_locs(out);
                }
            }
        }
    }
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lit::Int(n) => write!(f, "{n}"),
            Lit::Bool(true) => write!(f, "true"),
            Lit::Bool(false) => write!(f, "false"),
            Lit::Unit => write!(f, "()"),
            Lit::Nonce(t, c) => write!(f, "nonce<{},{}>", t.0, c),
            Lit::Tid(t) => write!(f, "tid<{}>", t.0),
        }
    }
}

/// Alpha-equivalence of terms (bound names ignored, everything else equal).
pub fn alpha_eq(a: &Term, b: &Term) -> bool {
    fn go(a: &Term, b: &Term, env: &mut Vec<(String, String)>) -> bool {
        use Term::*;
        match (a, b) {
            (Var(x), Var(y)) => {
                for (l, r) in env.iter().rev() {
                    if l == x || r == y {
                        return l == x && r == y;
                    }
                }
                x == y
            }
            (Loc(x), Loc(y)) => x == y,
            (Lam(x, m), Lam(y, n)) => {
                env.push((x.clone(), y.clone()));
                let ok = go(m, n, env);
                env.pop();
                ok
            }
            (App(f, x), App(g, y)) | (Bind(f, x), Bind(g, y)) => go(f, g, env) && go(x, y, env),
            (Return(m), Return(n))
            | (ReadVar(m), ReadVar(n))
            | (Fork(m), Fork(n))
            | (Isolated(m), Isolated(n))
            | (Abort(m), Abort(n)) => go(m, n, env),
            (
                NewVar { init: m, co: c1 },
                NewVar { init: n, co: c2 },
            ) => c1 == c2 && go(m, n, env),
            (WriteVar(l1, v1), WriteVar(l2, v2)) | (Atomic(l1, v1), Atomic(l2, v2)) => {
                go(l1, l2, env) && go(v1, v2, env)
            }
            (PrimEq(l1, r1), PrimEq(l2, r2)) => go(l1, l2, env) && go(r1, r2, env),
            (Arith(o1, l1, r1), Arith(o2, l2, r2)) => {
                o1 == o2 && go(l1, l2, env) && go(r1, r2, env)
            }
            (Retry, Retry) | (NewNonce, NewNonce) => true,
            (Lit(x), Lit(y)) => x == y,
            (Con(t1, a1), Con(t2, a2)) => {
                t1 == t2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| go(x, y, env))
            }
            (Case(s1, arms1), Case(s2, arms2)) => {
                if !go(s1, s2, env) || arms1.len() != arms2.len() {
                    return false;
                }
                arms1.iter().zip(arms2).all(|(x, y)| {
                    match (&x.pattern, &y.pattern) {
                        (Pattern::Con(t1, v1), Pattern::Con(t2, v2)) => {
                            if t1 != t2 || v1.len() != v2.len() {
                                return false;
                            }
                            for (l, r) in v1.iter().zip(v2) {
                                env.push((l.clone(), r.clone()));
                            }
                            let ok = go(&x.body, &y.body, env);
                            for _ in v1 {
                                env.pop();
                            }
                            ok
                        }
                        (Pattern::Lit(l1), Pattern::Lit(l2)) => {
                            l1 == l2 && go(&x.body, &y.body, env)
                        }
                        (Pattern::Var(v1), Pattern::Var(v2)) => {
                            env.push((v1.clone(), v2.clone()));
                            let ok = go(&x.body, &y.body, env);
                            env.pop();
                            ok
                        }
                        (Pattern::Wild, Pattern::Wild) => go(&x.body, &y.body, env),
                        _ => false,
                    }
                })
            }
            (LetRec(x, b1, e1), LetRec(y, b2, e2)) => {
                env.push((x.clone(), y.clone()));
                let ok = go(b1, b2, env) && go(e1, e2, env);
                env.pop();
                ok
            }
            _ => false,
        }
    }
    go(a, b, &mut Vec::new())
}
