use std::collections::BTreeSet;
use std::fmt;

/// Actions: a visible action, its coaction, or the silent action.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    In(String),
    Out(String),
    Tau,
}

impl Action {
    pub fn channel(&self) -> Option<&str> {
        match self {
            Action::In(a) | Action::Out(a) => Some(a),
            Action::Tau => None,
        }
    }

    pub fn complement(&self) -> Option<Action> {
        match self {
            Action::In(a) => Some(Action::Out(a.clone())),
            Action::Out(a) => Some(Action::In(a.clone())),
            Action::Tau => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::In(a) => write!(f, "{a}"),
            Action::Out(a) => write!(f, "'{a}"),
            Action::Tau => write!(f, "tau"),
        }
    }
}

/// Process terms. `Sum(vec![])` is the inert process `0`; `Par(vec![])` is
/// the unit of parallel composition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TccsProc {
    Sum(Vec<(Action, TccsProc)>),
    Par(Vec<TccsProc>),
    Restrict(Box<TccsProc>, BTreeSet<String>),
    Var(String),
    Rec(String, Box<TccsProc>),
    /// `[[ P1, P2 ]]`: a transaction not yet activated; `P2` is the
    /// compensation.
    Inactive(Box<TccsProc>, Box<TccsProc>),
    /// `[[ P1 >k> P2 ]]`: a running transaction named `k`.
    Active(String, Box<TccsProc>, Box<TccsProc>),
    /// `co.P`: vote for the commit of the enclosing transaction.
    Commit(Box<TccsProc>),
}

impl TccsProc {
    pub fn nil() -> TccsProc {
        TccsProc::Sum(Vec::new())
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, TccsProc::Sum(v) if v.is_empty())
            || matches!(self, TccsProc::Par(v) if v.is_empty())
    }

    pub fn prefix(action: Action, p: TccsProc) -> TccsProc {
        TccsProc::Sum(vec![(action, p)])
    }

    /// Top-level parallel components, with nested products flattened.
    pub fn components(&self) -> Vec<&TccsProc> {
        match self {
            TccsProc::Par(ps) => ps.iter().flat_map(|p| p.components()).collect(),
            other => vec![other],
        }
    }

    /// All channel names occurring in the term, including restricted ones
    /// and those inside compensations.
    pub fn channels(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_channels(&mut out);
        out
    }

    fn collect_channels(&self, out: &mut BTreeSet<String>) {
        match self {
            TccsProc::Sum(branches) => {
                for (a, p) in branches {
                    if let Some(c) = a.channel() {
                        out.insert(c.to_string());
                    }
                    p.collect_channels(out);
                }
            }
            TccsProc::Par(ps) => {
                for p in ps {
                    p.collect_channels(out);
                }
            }
            TccsProc::Restrict(p, l) => {
                out.extend(l.iter().cloned());
                p.collect_channels(out);
            }
            TccsProc::Var(_) => {}
            TccsProc::Rec(_, p) | TccsProc::Commit(p) => p.collect_channels(out),
            TccsProc::Inactive(p, q) | TccsProc::Active(_, p, q) => {
                p.collect_channels(out);
                q.collect_channels(out);
            }
        }
    }
}

impl fmt::Display for TccsProc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn atom(p: &TccsProc) -> bool {
            matches!(
                p,
                TccsProc::Var(_) | TccsProc::Inactive(..) | TccsProc::Active(..)
            ) || p.is_nil()
        }
        fn wrap(p: &TccsProc, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            if atom(p) || matches!(p, TccsProc::Sum(v) if v.len() == 1) {
                write!(f, "{p}")
            } else {
                write!(f, "({p})")
            }
        }
        match self {
            TccsProc::Sum(branches) => {
                if branches.is_empty() {
                    return write!(f, "0");
                }
                for (i, (a, p)) in branches.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{a}.")?;
                    wrap(p, f)?;
                }
                Ok(())
            }
            TccsProc::Par(ps) => {
                if ps.is_empty() {
                    return write!(f, "0");
                }
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    match p {
                        TccsProc::Par(_) => wrap(p, f)?,
                        TccsProc::Sum(v) if v.len() > 1 => wrap(p, f)?,
                        _ => write!(f, "{p}")?,
                    }
                }
                Ok(())
            }
            TccsProc::Restrict(p, l) => {
                wrap(p, f)?;
                let names: Vec<&str> = l.iter().map(String::as_str).collect();
                write!(f, " \\ {{{}}}", names.join(","))
            }
            TccsProc::Var(x) => write!(f, "{x}"),
            TccsProc::Rec(x, p) => {
                write!(f, "rec {x}. ")?;
                wrap(p, f)
            }
            TccsProc::Inactive(p, q) => write!(f, "[[ {p} , {q} ]]"),
            TccsProc::Active(k, p, q) => write!(f, "[[ {p} >{k}> {q} ]]"),
            TccsProc::Commit(p) => {
                write!(f, "co.")?;
                wrap(p, f)
            }
        }
    }
}
