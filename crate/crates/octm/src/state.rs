//! Machine states: the heap, the distributed working memory, the thread
//! family and the algebraic operations on them. States are immutable values;
//! every operation returns a fresh state and leaves its input untouched,
//! which is what lets the explorer branch from shared states.

use crate::syntax::{parse_term_with_locs, pretty, ParseError, Term};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LocId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ThreadId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TxId(pub u32);

impl fmt::Display for LocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tx{}", self.0)
    }
}

/// A thread of the machine. Primary participants started their transaction
/// (they hold a continuation and vote on commit); secondary participants
/// were forked inside a transaction or joined one through memory access.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Thread {
    Plain {
        term: Term,
    },
    Primary {
        term: Term,
        comp: Term,
        cont: Term,
        tx: TxId,
    },
    Secondary {
        term: Term,
        comp: Term,
        tx: TxId,
    },
}

impl Thread {
    pub fn term(&self) -> &Term {
        match self {
            Thread::Plain { term } | Thread::Primary { term, .. } | Thread::Secondary { term, .. } => {
                term
            }
        }
    }

    pub fn tx(&self) -> Option<TxId> {
        match self {
            Thread::Plain { .. } => None,
            Thread::Primary { tx, .. } | Thread::Secondary { tx, .. } => Some(*tx),
        }
    }

    pub fn with_term(&self, term: Term) -> Thread {
        let mut t = self.clone();
        match &mut t {
            Thread::Plain { term: m }
            | Thread::Primary { term: m, .. }
            | Thread::Secondary { term: m, .. } => *m = term,
        }
        t
    }
}

/// Labels of the coordination steps; plain execution steps are `Internal`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StepLabel {
    Internal,
    NewTx(TxId),
    Commit(TxId),
    /// Carries the abort value raised by the vetoing participant.
    Abort(TxId, Term),
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepLabel::Internal => write!(f, "."),
            StepLabel::NewTx(k) => write!(f, "new {k}"),
            StepLabel::Commit(k) => write!(f, "co {k}"),
            StepLabel::Abort(k, v) => write!(f, "ab {k} {}", pretty(v)),
        }
    }
}

/// The state triple plus the fresh-name counters (kept inside the state so
/// exploration branches allocate consistently) and the set of locations
/// allocated in commit-channel role by encodings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MachineState {
    pub heap: BTreeMap<LocId, Term>,
    pub working: BTreeMap<LocId, (Term, TxId)>,
    pub threads: BTreeMap<ThreadId, Thread>,
    pub co_locs: BTreeSet<LocId>,
    pub next_loc: u32,
    pub next_thread: u32,
    pub next_tx: u32,
    pub nonce_counters: BTreeMap<ThreadId, u64>,
}

impl MachineState {
    pub fn new() -> Self {
        Self::default()
    }

    /// A single plain thread running `program`.
    pub fn boot(program: Term) -> Self {
        let mut s = Self::default();
        let t = s.fresh_thread();
        s.threads.insert(t, Thread::Plain { term: program });
        s
    }

    pub fn fresh_loc(&mut self) -> LocId {
        let id = LocId(self.next_loc);
        self.next_loc += 1;
        id
    }

    pub fn fresh_thread(&mut self) -> ThreadId {
        let id = ThreadId(self.next_thread);
        self.next_thread += 1;
        id
    }

    pub fn fresh_tx(&mut self) -> TxId {
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        id
    }

    pub fn next_nonce(&mut self, t: ThreadId) -> u64 {
        let c = self.nonce_counters.entry(t).or_insert(0);
        let n = *c;
        *c += 1;
        n
    }

    /// Heap update `Theta[r -> m]`.
    pub fn heap_update(&self, r: LocId, m: Term) -> Self {
        let mut s = self.clone();
        s.heap.insert(r, m);
        s
    }

    /// Working-memory update `Delta[r -> (m, k)]`: the location is claimed
    /// for `k`.
    pub fn working_update(&self, r: LocId, m: Term, k: TxId) -> Self {
        let mut s = self.clone();
        s.working.insert(r, (m, k));
        s
    }

    /// Transaction renaming `k -> j` on both the working memory and the
    /// thread family; this is how two transactions fuse.
    pub fn rename_tx(&self, k: TxId, j: TxId) -> Self {
        let mut s = self.clone();
        for (_, entry) in s.working.iter_mut() {
            if entry.1 == k {
                entry.1 = j;
            }
        }
        for (_, th) in s.threads.iter_mut() {
            match th {
                Thread::Primary { tx, .. } | Thread::Secondary { tx, .. } if *tx == k => *tx = j,
                _ => {}
            }
        }
        s
    }

    /// `clean(k, Delta)`: drop every working entry claimed by `k`.
    pub fn clean(&self, k: TxId) -> Self {
        let mut s = self.clone();
        s.working.retain(|_, (_, owner)| *owner != k);
        s
    }

    /// `commit(k, Theta, Delta)` followed by `clean(k, Delta)`: publish the
    /// values claimed by `k` to the heap, then drop the claims.
    pub fn commit_mem(&self, k: TxId) -> Self {
        let mut s = self.clone();
        for (r, (m, owner)) in &self.working {
            if *owner == k {
                s.heap.insert(*r, m.clone());
            }
        }
        s.working.retain(|_, (_, owner)| *owner != k);
        s
    }

    /// Live thread names and the transaction names of all participants.
    pub fn names(&self) -> (BTreeSet<ThreadId>, BTreeSet<TxId>) {
        let threads = self.threads.keys().copied().collect();
        let txs = self.threads.values().filter_map(Thread::tx).collect();
        (threads, txs)
    }

    /// Participants (primaries and secondaries) of transaction `k`.
    pub fn participants(&self, k: TxId) -> Vec<ThreadId> {
        self.threads
            .iter()
            .filter(|(_, th)| th.tx() == Some(k))
            .map(|(t, _)| *t)
            .collect()
    }

    /// Stable text rendering; also the `.octm-state` document format.
    pub fn render(&self) -> String {
        let mut out = String::from("octm-state v1\n");
        out.push_str(&format!(
            "counters loc={} thread={} tx={}\n",
            self.next_loc, self.next_thread, self.next_tx
        ));
        for (t, c) in &self.nonce_counters {
            out.push_str(&format!("nonce {t} = {c}\n"));
        }
        for r in &self.co_locs {
            out.push_str(&format!("co {r}\n"));
        }
        for (r, m) in &self.heap {
            out.push_str(&format!("heap {r} = {}\n", pretty(m)));
        }
        for (r, (m, k)) in &self.working {
            out.push_str(&format!("working {r} @ {k} = {}\n", pretty(m)));
        }
        for (t, th) in &self.threads {
            match th {
                Thread::Plain { term } => {
                    out.push_str(&format!("thread plain {t}\n  term {}\n", pretty(term)));
                }
                Thread::Primary { term, comp, cont, tx } => {
                    out.push_str(&format!(
                        "thread primary {t} {tx}\n  term {}\n  comp {}\n  cont {}\n",
                        pretty(term),
                        pretty(comp),
                        pretty(cont)
                    ));
                }
                Thread::Secondary { term, comp, tx } => {
                    out.push_str(&format!(
                        "thread secondary {t} {tx}\n  term {}\n  comp {}\n",
                        pretty(term),
                        pretty(comp)
                    ));
                }
            }
        }
        out
    }

    /// 64-bit FNV-1a over the rendering; stable across runs and platforms.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.render().as_bytes())
    }

    /// Parse a `.octm-state` document produced by [`MachineState::render`].
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut s = MachineState::default();
        let mut lines = src.lines().enumerate().peekable();
        let perr = |line: usize, msg: String| ParseError {
            line: line + 1,
            col: 1,
            msg,
        };
        let mut saw_header = false;
        while let Some((ln, raw)) = lines.next() {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != "octm-state v1" {
                    return Err(perr(ln, "expected `octm-state v1` header".into()));
                }
                saw_header = true;
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("counters") => {
                    for part in line["counters".len()..].split_whitespace() {
                        let (key, val) = part
                            .split_once('=')
                            .ok_or_else(|| perr(ln, format!("bad counter `{part}`")))?;
                        let n: u32 = val
                            .parse()
                            .map_err(|_| perr(ln, format!("bad counter value `{val}`")))?;
                        match key {
                            "loc" => s.next_loc = n,
                            "thread" => s.next_thread = n,
                            "tx" => s.next_tx = n,
                            _ => return Err(perr(ln, format!("unknown counter `{key}`"))),
                        }
                    }
                }
                Some("nonce") => {
                    let t = parse_tid(words.next(), ln)?;
                    let c: u64 = words
                        .nth(1)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| perr(ln, "bad nonce counter".into()))?;
                    s.nonce_counters.insert(t, c);
                }
                Some("co") => {
                    let r = parse_loc(words.next(), ln)?;
                    s.co_locs.insert(r);
                }
                Some("heap") => {
                    let r = parse_loc(words.next(), ln)?;
                    let term = after_eq(line, ln)?;
                    s.heap.insert(r, parse_term_with_locs(term)?);
                }
                Some("working") => {
                    let r = parse_loc(words.next(), ln)?;
                    if words.next() != Some("@") {
                        return Err(perr(ln, "expected `@` in working entry".into()));
                    }
                    let k = parse_tx(words.next(), ln)?;
                    let term = after_eq(line, ln)?;
                    s.working.insert(r, (parse_term_with_locs(term)?, k));
                }
                Some("thread") => {
                    let kind = words
                        .next()
                        .ok_or_else(|| perr(ln, "missing thread kind".into()))?
                        .to_string();
                    let t = parse_tid(words.next(), ln)?;
                    let tx = match kind.as_str() {
                        "plain" => None,
                        "primary" | "secondary" => Some(parse_tx(words.next(), ln)?),
                        other => return Err(perr(ln, format!("unknown thread kind `{other}`"))),
                    };
                    let mut fields: BTreeMap<String, Term> = BTreeMap::new();
                    while let Some((_, next)) = lines.peek() {
                        if !next.starts_with("  ") {
                            break;
                        }
                        let (fln, fline) = lines.next().unwrap();
                        let body = fline.trim_start();
                        let (name, rest) = body
                            .split_once(' ')
                            .ok_or_else(|| perr(fln, "bad thread field".into()))?;
                        fields.insert(name.to_string(), parse_term_with_locs(rest)?);
                    }
                    let get = |name: &str| -> Result<Term, ParseError> {
                        fields
                            .get(name)
                            .cloned()
                            .ok_or_else(|| perr(ln, format!("thread missing `{name}` field")))
                    };
                    let th = match kind.as_str() {
                        "plain" => Thread::Plain { term: get("term")? },
                        "primary" => Thread::Primary {
                            term: get("term")?,
                            comp: get("comp")?,
                            cont: get("cont")?,
                            tx: tx.unwrap(),
                        },
                        _ => Thread::Secondary {
                            term: get("term")?,
                            comp: get("comp")?,
                            tx: tx.unwrap(),
                        },
                    };
                    s.threads.insert(t, th);
                }
                Some(other) => return Err(perr(ln, format!("unknown entry `{other}`"))),
                None => {}
            }
        }
        if !saw_header {
            return Err(perr(0, "empty state document".into()));
        }
        Ok(s)
    }
}

fn after_eq(line: &str, ln: usize) -> Result<&str, ParseError> {
    line.split_once(" = ").map(|(_, t)| t).ok_or(ParseError {
        line: ln + 1,
        col: 1,
        msg: "expected ` = `".into(),
    })
}

fn parse_loc(w: Option<&str>, ln: usize) -> Result<LocId, ParseError> {
    w.and_then(|w| w.strip_prefix('#'))
        .and_then(|n| n.parse().ok())
        .map(LocId)
        .ok_or(ParseError {
            line: ln + 1,
            col: 1,
            msg: "expected location `#N`".into(),
        })
}

fn parse_tid(w: Option<&str>, ln: usize) -> Result<ThreadId, ParseError> {
    w.and_then(|w| w.strip_prefix('t'))
        .and_then(|n| n.parse().ok())
        .map(ThreadId)
        .ok_or(ParseError {
            line: ln + 1,
            col: 1,
            msg: "expected thread id `tN`".into(),
        })
}

fn parse_tx(w: Option<&str>, ln: usize) -> Result<TxId, ParseError> {
    w.and_then(|w| w.strip_prefix("tx"))
        .and_then(|n| n.parse().ok())
        .map(TxId)
        .ok_or(ParseError {
            line: ln + 1,
            col: 1,
            msg: "expected transaction id `txN`".into(),
        })
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(n: u32) -> LocId {
        LocId(n)
    }

    fn tx(n: u32) -> TxId {
        TxId(n)
    }

    #[test]
    fn heap_update_cases() {
        let s = MachineState::new();
        let s1 = s.heap_update(loc(0), Term::int(5));
        assert_eq!(s1.heap.get(&loc(0)), Some(&Term::int(5)));
        assert!(s.heap.is_empty(), "input state must be unchanged");
        let s2 = s1.heap_update(loc(0), Term::int(2));
        assert_eq!(s2.heap.get(&loc(0)), Some(&Term::int(2)));
        let s3 = s1.heap_update(loc(1), Term::int(2));
        assert_eq!(s3.heap.len(), 2);
    }

    #[test]
    fn working_update_claims() {
        let s = MachineState::new().working_update(loc(0), Term::int(5), tx(0));
        assert_eq!(s.working.get(&loc(0)), Some(&(Term::int(5), tx(0))));
        let s2 = s.working_update(loc(0), Term::int(2), tx(1));
        assert_eq!(s2.working.get(&loc(0)), Some(&(Term::int(2), tx(1))));
    }

    #[test]
    fn rename_tx_renames_claims_and_threads() {
        let mut s = MachineState::new();
        s.working.insert(loc(0), (Term::int(1), tx(0)));
        s.working.insert(loc(1), (Term::int(2), tx(1)));
        s.threads.insert(
            ThreadId(0),
            Thread::Secondary {
                term: Term::unit(),
                comp: Term::return_eta(),
                tx: tx(0),
            },
        );
        s.threads.insert(
            ThreadId(1),
            Thread::Primary {
                term: Term::unit(),
                comp: Term::return_eta(),
                cont: Term::return_eta(),
                tx: tx(1),
            },
        );
        let r = s.rename_tx(tx(0), tx(1));
        assert!(r.working.values().all(|(_, k)| *k == tx(1)));
        assert!(r.threads.values().all(|t| t.tx() == Some(tx(1))));
        // Renaming an absent transaction changes nothing.
        assert_eq!(s.rename_tx(tx(7), tx(1)), s);
    }

    #[test]
    fn clean_drops_only_k() {
        let mut s = MachineState::new();
        s.working.insert(loc(0), (Term::int(1), tx(0)));
        s.working.insert(loc(1), (Term::int(2), tx(1)));
        let c = s.clean(tx(0));
        assert_eq!(c.working.len(), 1);
        assert!(c.working.contains_key(&loc(1)));
        assert_eq!(c.clean(tx(0)), c, "clean is idempotent");
        assert_eq!(MachineState::new().clean(tx(0)), MachineState::new());
    }

    #[test]
    fn commit_publishes_claims() {
        let mut s = MachineState::new();
        s.heap.insert(loc(0), Term::int(0));
        s.working.insert(loc(0), (Term::int(7), tx(0)));
        let c = s.commit_mem(tx(0));
        assert_eq!(c.heap.get(&loc(0)), Some(&Term::int(7)));
        assert!(c.working.is_empty());
        // No entries for k: untouched.
        let mut s2 = MachineState::new();
        s2.heap.insert(loc(0), Term::int(0));
        s2.working.insert(loc(1), (Term::int(7), tx(1)));
        let c2 = s2.commit_mem(tx(0));
        assert_eq!(c2.heap, s2.heap);
        assert_eq!(c2.working, s2.working);
        // Fresh location allocated inside the transaction gets published.
        let mut s3 = MachineState::new();
        s3.working.insert(loc(0), (Term::int(7), tx(0)));
        let c3 = s3.commit_mem(tx(0));
        assert_eq!(c3.heap.get(&loc(0)), Some(&Term::int(7)));
    }

    #[test]
    fn names_of_threads() {
        let mut s = MachineState::new();
        assert_eq!(s.names(), (BTreeSet::new(), BTreeSet::new()));
        s.threads.insert(ThreadId(0), Thread::Plain { term: Term::unit() });
        let (ts, ks) = s.names();
        assert_eq!(ts.len(), 1);
        assert!(ks.is_empty());
        s.threads.insert(
            ThreadId(1),
            Thread::Primary {
                term: Term::unit(),
                comp: Term::return_eta(),
                cont: Term::return_eta(),
                tx: tx(3),
            },
        );
        let (ts, ks) = s.names();
        assert_eq!(ts.len(), 2);
        assert_eq!(ks, [tx(3)].into_iter().collect());
    }

    #[test]
    fn render_parse_round_trip() {
        let mut s = MachineState::new();
        s.next_loc = 3;
        s.next_thread = 2;
        s.next_tx = 1;
        s.heap.insert(loc(0), Term::con("M0", vec![]));
        s.working
            .insert(loc(1), (Term::con("M1", vec![Term::Lit(crate::syntax::Lit::Nonce(ThreadId(0), 0))]), tx(0)));
        s.co_locs.insert(loc(0));
        s.nonce_counters.insert(ThreadId(0), 1);
        s.threads.insert(
            ThreadId(0),
            Thread::Primary {
                term: Term::ret(Term::unit()),
                comp: Term::return_eta(),
                cont: Term::return_eta(),
                tx: tx(0),
            },
        );
        s.threads.insert(
            ThreadId(1),
            Thread::Plain {
                term: Term::read(Term::Loc(loc(2))),
            },
        );
        let text = s.render();
        let back = MachineState::parse(&text).unwrap();
        assert_eq!(back, s);
    }
}
