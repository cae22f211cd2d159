//! State canonicalization. Two flavours:
//!
//! - [`canonical_lite`]: deterministic renaming of thread/transaction/
//!   location/nonce identifiers plus per-thread pure normalization. Used by
//!   the explorer to collapse symmetric interleavings without hiding any
//!   observable (no thread is dropped, no location collected).
//! - [`canonicalize`]: the transaction-equivalence normal form. On top of
//!   the lite form it removes terminated threads, removes commit-protocol
//!   plumbing (threads whose remaining behaviour is a synchronization on a
//!   commit-role location with trivial continuation, and the drain loops
//!   that fork them), and garbage-collects locations unreachable from the
//!   surviving threads.

use crate::encoder;
use crate::state::{LocId, MachineState, Thread, ThreadId, TxId};
use crate::syntax::{alpha_eq, pure_norm, substitute, Lit, Term, PURE_FUEL};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Run every thread's term-level reductions to a fixpoint.
pub fn pure_normalize(state: &MachineState) -> MachineState {
    let mut s = state.clone();
    let tids: Vec<ThreadId> = s.threads.keys().copied().collect();
    for t in tids {
        let th = s.threads[&t].clone();
        let term = norm(th.term().clone());
        if term != *th.term() {
            s.threads.insert(t, th.with_term(term));
        }
    }
    s
}

pub fn canonical_lite(state: &MachineState) -> MachineState {
    rename_canonical(&pure_normalize(state))
}

/// Fingerprint of the lite canonical form; the explorer's memo key.
pub fn fingerprint_lite(state: &MachineState) -> u64 {
    canonical_lite(state).fingerprint()
}

pub fn canonicalize(state: &MachineState) -> MachineState {
    let mut s = admin_normalize(state);
    let co_locs = s.co_locs.clone();
    s.threads.retain(|_, th| !removable(th, &co_locs));
    gc(&mut s);
    demote_orphan_secondaries(&mut s);
    gc(&mut s);
    rename_canonical(&s)
}

/// A transaction whose primaries were all commit plumbing can never vote,
/// so nothing will ever publish or discard it as a unit: its secondaries
/// behave like plain threads and its remaining claims (administrative
/// allocations of the encoding) like ordinary heap cells. Joins driven by a
/// choice synchronizing into a transaction produce exactly such threads on
/// the calculus side, while the machine runs the same continuation outside
/// any transaction.
fn demote_orphan_secondaries(state: &mut MachineState) {
    let mut has_primary: BTreeSet<TxId> = BTreeSet::new();
    for th in state.threads.values() {
        if let Thread::Primary { tx, .. } = th {
            has_primary.insert(*tx);
        }
    }
    let orphan_claims: Vec<LocId> = state
        .working
        .iter()
        .filter(|(_, (_, k))| !has_primary.contains(k))
        .map(|(r, _)| *r)
        .collect();
    for r in orphan_claims {
        let (v, _) = state.working.remove(&r).unwrap();
        state.heap.insert(r, v);
    }
    for (_, th) in state.threads.iter_mut() {
        if let Thread::Secondary { term, tx, .. } = th {
            if !has_primary.contains(tx) {
                *th = Thread::Plain { term: term.clone() };
            }
        }
    }
}

/// Push every thread through its deterministic administrative steps: pure
/// reduction, private allocation, forking, nonce creation. These steps are
/// confluent and happen in every schedule, so states differing only in how
/// far they progressed through them are identified. Memory reads/writes,
/// isolated blocks and transaction creation are observable and are left
/// alone. Commit plumbing is removed as it appears so drain loops cannot
/// fork unboundedly.
fn admin_normalize(state: &MachineState) -> MachineState {
    let mut s = state.clone();
    let mut budget = 2_000usize;
    loop {
        // Normalize terms, then drop finished threads and commit plumbing.
        let tids: Vec<ThreadId> = s.threads.keys().copied().collect();
        for t in &tids {
            let th = s.threads[t].clone();
            let term = norm(th.term().clone());
            if term != *th.term() {
                s.threads.insert(*t, th.with_term(term));
            }
        }
        let co_locs = s.co_locs.clone();
        s.threads.retain(|_, th| !removable(th, &co_locs));

        let mut changed = false;
        let tids: Vec<ThreadId> = s.threads.keys().copied().collect();
        for t in tids {
            if budget == 0 {
                break;
            }
            let th = s.threads[&t].clone();
            let (ctx, redex) = crate::syntax::decompose(th.term());
            match redex {
                Term::NewVar { init, co } => {
                    budget -= 1;
                    changed = true;
                    let r = s.fresh_loc();
                    match th.tx() {
                        None => {
                            s.heap.insert(r, *init);
                        }
                        Some(k) => {
                            s.working.insert(r, (*init, k));
                        }
                    }
                    if co {
                        s.co_locs.insert(r);
                    }
                    let term = crate::syntax::recompose(&ctx, Term::ret(Term::Loc(r)));
                    s.threads.insert(t, th.with_term(term));
                }
                Term::Fork(body) => {
                    budget -= 1;
                    changed = true;
                    let child = s.fresh_thread();
                    let child_thread = match th.tx() {
                        None => Thread::Plain { term: *body },
                        Some(k) => Thread::Secondary {
                            term: *body,
                            comp: Term::return_eta(),
                            tx: k,
                        },
                    };
                    s.threads.insert(child, child_thread);
                    let term = crate::syntax::recompose(
                        &ctx,
                        Term::ret(Term::Lit(Lit::Tid(child))),
                    );
                    s.threads.insert(t, th.with_term(term));
                }
                Term::NewNonce => {
                    budget -= 1;
                    changed = true;
                    let n = s.next_nonce(t);
                    let term = crate::syntax::recompose(
                        &ctx,
                        Term::ret(Term::Lit(Lit::Nonce(t, n))),
                    );
                    s.threads.insert(t, th.with_term(term));
                }
                _ => {}
            }
        }
        if !changed || budget == 0 {
            break;
        }
    }
    s
}

/// Transaction equivalence: equality of canonical forms.
pub fn cong_t(a: &MachineState, b: &MachineState) -> bool {
    canonicalize(a) == canonicalize(b)
}

/// Threads dropped by the equivalence: finished threads (`return`/`abort`
/// at top level, plain or participant) and commit-channel plumbing.
fn removable(th: &Thread, co_locs: &BTreeSet<LocId>) -> bool {
    match th {
        Thread::Plain { term } | Thread::Secondary { term, .. } => {
            if matches!(term, Term::Return(_) | Term::Abort(_)) {
                return true;
            }
            is_commit_plumbing(term, co_locs)
        }
        Thread::Primary { term, .. } => is_commit_plumbing(term, co_locs),
    }
}

/// Recognise the runtime shapes of `psi`-style synchronizations on a
/// commit-role location: the drain loop `bang psi`, a pending `psi`, and a
/// `recv`/`send` on a commit channel whose continuation is `return ()`, at
/// any stage of its administrative evolution. Matching is generative: the
/// candidate stages are rebuilt from the protocol library and compared up
/// to alpha-equivalence.
fn is_commit_plumbing(term: &Term, co_locs: &BTreeSet<LocId>) -> bool {
    if co_locs.is_empty() {
        return false;
    }
    let mut locs = BTreeSet::new();
    term.collect_locs(&mut locs);
    let nonces = collect_nonces(term);
    for rc in co_locs {
        if !locs.contains(rc) {
            continue;
        }
        if alpha_eq(term, &stage(StageKey::Drain(*rc)))
            || alpha_eq(term, &stage(StageKey::Psi(*rc)))
        {
            return true;
        }
        for lib in [Lib::Recv, Lib::Send] {
            // The offer before its lock allocation (the shape of an encoded
            // bare commit vote).
            if alpha_eq(term, &stage(StageKey::Pre(lib, *rc))) {
                return true;
            }
            for l in &locs {
                let applied = stage(StageKey::Applied(lib, *rc, *l));
                if alpha_eq(term, &applied) {
                    return true;
                }
                // After the nonce was drawn.
                if let Term::Bind(head, cont) = &applied {
                    if matches!(**head, Term::NewNonce) {
                        if let Term::Lam(n, body) = &**cont {
                            for nonce in &nonces {
                                let staged =
                                    norm(substitute(body, n, &Term::Lit(nonce.clone())));
                                if alpha_eq(term, &staged) {
                                    return true;
                                }
                                // After the first isolated step reported a
                                // won race.
                                if let Term::Bind(iso, k) = &staged {
                                    if matches!(**iso, Term::Isolated(_)) {
                                        let after = norm(Term::app(
                                            (**k).clone(),
                                            Term::bool(true),
                                        ));
                                        if alpha_eq(term, &after) {
                                            return true;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Lib {
    Recv,
    Send,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum StageKey {
    Drain(LocId),
    Psi(LocId),
    Pre(Lib, LocId),
    Applied(Lib, LocId, LocId),
}

/// Normalized stage templates, cached; the matcher rebuilds them constantly
/// for the same few locations.
fn stage(key: StageKey) -> Term {
    thread_local! {
        static CACHE: std::cell::RefCell<std::collections::HashMap<StageKey, Term>> =
            std::cell::RefCell::new(std::collections::HashMap::new());
    }
    CACHE.with(|c| {
        if let Some(t) = c.borrow().get(&key) {
            return t.clone();
        }
        let lib_term = |lib: Lib| match lib {
            Lib::Recv => encoder::recv(),
            Lib::Send => encoder::send(),
        };
        let t = match key {
            StageKey::Drain(rc) => norm(Term::app(
                encoder::bang(),
                encoder::psi_drain(Term::Loc(rc)),
            )),
            StageKey::Psi(rc) => norm(encoder::psi_drain(Term::Loc(rc))),
            StageKey::Pre(lib, rc) => norm(Term::bind(
                Term::new_var(Term::bool(true)),
                Term::lam(
                    "_lk",
                    Term::app3(
                        lib_term(lib),
                        Term::Loc(rc),
                        Term::var("_lk"),
                        Term::ret(Term::unit()),
                    ),
                ),
            )),
            StageKey::Applied(lib, rc, l) => norm(Term::app3(
                lib_term(lib),
                Term::Loc(rc),
                Term::Loc(l),
                Term::ret(Term::unit()),
            )),
        };
        c.borrow_mut().insert(key, t.clone());
        t
    })
}

/// Normalization with a cache: term shapes repeat heavily across the states
/// visited by the simulation searches.
fn norm(t: Term) -> Term {
    thread_local! {
        static CACHE: std::cell::RefCell<std::collections::HashMap<Term, Term>> =
            std::cell::RefCell::new(std::collections::HashMap::new());
    }
    CACHE.with(|c| {
        if let Some(n) = c.borrow().get(&t) {
            return n.clone();
        }
        let n = pure_norm(&t, PURE_FUEL).0;
        if c.borrow().len() > 100_000 {
            c.borrow_mut().clear();
        }
        c.borrow_mut().insert(t, n.clone());
        n
    })
}

fn collect_nonces(t: &Term) -> Vec<Lit> {
    fn go(t: &Term, out: &mut Vec<Lit>) {
        match t {
            Term::Lit(l @ Lit::Nonce(..)) => {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
            Term::Lit(_) | Term::Var(_) | Term::Loc(_) | Term::Retry | Term::NewNonce => {}
            Term::Lam(_, b)
            | Term::Return(b)
            | Term::ReadVar(b)
            | Term::Fork(b)
            | Term::Isolated(b)
            | Term::Abort(b)
            | Term::NewVar { init: b, .. } => go(b, out),
            Term::App(a, b)
            | Term::Bind(a, b)
            | Term::WriteVar(a, b)
            | Term::Atomic(a, b)
            | Term::PrimEq(a, b)
            | Term::Arith(_, a, b)
            | Term::LetRec(_, a, b) => {
                go(a, out);
                go(b, out);
            }
            Term::Con(_, args) => args.iter().for_each(|a| go(a, out)),
            Term::Case(s, arms) => {
                go(s, out);
                arms.iter().for_each(|arm| go(&arm.body, out));
            }
        }
    }
    let mut out = Vec::new();
    go(t, &mut out);
    out
}

/// Drop heap/working entries (and commit tags) for locations unreachable
/// from the surviving threads.
fn gc(state: &mut MachineState) {
    let mut reachable: BTreeSet<LocId> = BTreeSet::new();
    let mut queue: VecDeque<LocId> = VecDeque::new();
    for th in state.threads.values() {
        let mut roots = BTreeSet::new();
        for term in thread_terms(th) {
            term.collect_locs(&mut roots);
        }
        for r in roots {
            if reachable.insert(r) {
                queue.push_back(r);
            }
        }
    }
    while let Some(r) = queue.pop_front() {
        let mut next = BTreeSet::new();
        if let Some(v) = state.heap.get(&r) {
            v.collect_locs(&mut next);
        }
        if let Some((v, _)) = state.working.get(&r) {
            v.collect_locs(&mut next);
        }
        for n in next {
            if reachable.insert(n) {
                queue.push_back(n);
            }
        }
    }
    state.heap.retain(|r, _| reachable.contains(r));
    state.working.retain(|r, _| reachable.contains(r));
    state.co_locs.retain(|r| reachable.contains(r));
}

fn thread_terms(th: &Thread) -> Vec<&Term> {
    match th {
        Thread::Plain { term } => vec![term],
        Thread::Primary { term, comp, cont, .. } => vec![term, comp, cont],
        Thread::Secondary { term, comp, .. } => vec![term, comp],
    }
}

// Canonical renaming -------------------------------------------------------

#[derive(Default)]
struct CanonMaps {
    locs: BTreeMap<LocId, LocId>,
    tids: BTreeMap<ThreadId, ThreadId>,
    txs: BTreeMap<TxId, TxId>,
    nonces: BTreeMap<(ThreadId, u64), u64>,
}

impl CanonMaps {
    fn loc(&mut self, r: LocId) -> LocId {
        let next = LocId(self.locs.len() as u32);
        *self.locs.entry(r).or_insert(next)
    }

    fn tid(&mut self, t: ThreadId) -> ThreadId {
        let next = ThreadId(self.tids.len() as u32);
        *self.tids.entry(t).or_insert(next)
    }

    fn tx(&mut self, k: TxId) -> TxId {
        let next = TxId(self.txs.len() as u32);
        *self.txs.entry(k).or_insert(next)
    }

    fn nonce(&mut self, t: ThreadId, c: u64) -> (ThreadId, u64) {
        let next = self.nonces.len() as u64;
        let idx = *self.nonces.entry((t, c)).or_insert(next);
        (ThreadId(0), idx)
    }
}

fn rename_term(t: &Term, m: &mut CanonMaps) -> Term {
    match t {
        Term::Loc(r) => Term::Loc(m.loc(*r)),
        Term::Lit(Lit::Tid(t0)) => Term::Lit(Lit::Tid(m.tid(*t0))),
        Term::Lit(Lit::Nonce(t0, c)) => {
            let (nt, nc) = m.nonce(*t0, *c);
            Term::Lit(Lit::Nonce(nt, nc))
        }
        Term::Lit(_) | Term::Var(_) | Term::Retry | Term::NewNonce => t.clone(),
        Term::Lam(x, b) => Term::Lam(x.clone(), Box::new(rename_term(b, m))),
        Term::App(a, b) => Term::App(Box::new(rename_term(a, m)), Box::new(rename_term(b, m))),
        Term::Return(b) => Term::Return(Box::new(rename_term(b, m))),
        Term::Bind(a, b) => Term::Bind(Box::new(rename_term(a, m)), Box::new(rename_term(b, m))),
        Term::NewVar { init, co } => Term::NewVar {
            init: Box::new(rename_term(init, m)),
            co: *co,
        },
        Term::ReadVar(b) => Term::ReadVar(Box::new(rename_term(b, m))),
        Term::WriteVar(a, b) => {
            Term::WriteVar(Box::new(rename_term(a, m)), Box::new(rename_term(b, m)))
        }
        Term::Fork(b) => Term::Fork(Box::new(rename_term(b, m))),
        Term::Atomic(a, b) => {
            Term::Atomic(Box::new(rename_term(a, m)), Box::new(rename_term(b, m)))
        }
        Term::Isolated(b) => Term::Isolated(Box::new(rename_term(b, m))),
        Term::Abort(b) => Term::Abort(Box::new(rename_term(b, m))),
        Term::Con(tag, args) => Term::Con(
            tag.clone(),
            args.iter().map(|a| rename_term(a, m)).collect(),
        ),
        Term::Case(s, arms) => Term::Case(
            Box::new(rename_term(s, m)),
            arms.iter()
                .map(|arm| crate::syntax::CaseArm {
                    pattern: arm.pattern.clone(),
                    body: rename_term(&arm.body, m),
                })
                .collect(),
        ),
        Term::PrimEq(a, b) => {
            Term::PrimEq(Box::new(rename_term(a, m)), Box::new(rename_term(b, m)))
        }
        Term::Arith(op, a, b) => Term::Arith(
            *op,
            Box::new(rename_term(a, m)),
            Box::new(rename_term(b, m)),
        ),
        Term::LetRec(x, a, b) => Term::LetRec(
            x.clone(),
            Box::new(rename_term(a, m)),
            Box::new(rename_term(b, m)),
        ),
    }
}

/// A renaming-independent per-thread key: the thread rendered with every
/// identifier replaced by its local first-occurrence index.
fn skeleton(th: &Thread) -> String {
    let mut m = CanonMaps::default();
    let mut parts = Vec::new();
    match th {
        Thread::Plain { term } => {
            parts.push("plain".to_string());
            parts.push(crate::syntax::pretty(&rename_term(term, &mut m)));
        }
        Thread::Primary { term, comp, cont, tx } => {
            parts.push("primary".to_string());
            parts.push(m.tx(*tx).to_string());
            parts.push(crate::syntax::pretty(&rename_term(term, &mut m)));
            parts.push(crate::syntax::pretty(&rename_term(comp, &mut m)));
            parts.push(crate::syntax::pretty(&rename_term(cont, &mut m)));
        }
        Thread::Secondary { term, comp, tx } => {
            parts.push("secondary".to_string());
            parts.push(m.tx(*tx).to_string());
            parts.push(crate::syntax::pretty(&rename_term(term, &mut m)));
            parts.push(crate::syntax::pretty(&rename_term(comp, &mut m)));
        }
    }
    parts.join("\x1f")
}

const PERMUTATION_CAP: usize = 720;

/// Deterministic renaming of all identifiers. Threads are ordered by a
/// naming-independent skeleton; groups of identical skeletons are resolved
/// by trying their permutations (capped) and keeping the lexicographically
/// least rendering.
pub fn rename_canonical(state: &MachineState) -> MachineState {
    let entries: Vec<(ThreadId, Thread)> = state
        .threads
        .iter()
        .map(|(t, th)| (*t, th.clone()))
        .collect();
    let mut keyed: Vec<(String, ThreadId)> = entries
        .iter()
        .map(|(t, th)| (skeleton(th), *t))
        .collect();
    keyed.sort();

    // Group indices with identical skeletons.
    let mut groups: Vec<Vec<ThreadId>> = Vec::new();
    let mut last_key: Option<&str> = None;
    for (key, t) in &keyed {
        if last_key == Some(key.as_str()) {
            groups.last_mut().unwrap().push(*t);
        } else {
            groups.push(vec![*t]);
            last_key = Some(key.as_str());
        }
    }

    let mut perm_budget: usize = 1;
    for g in &groups {
        perm_budget = perm_budget.saturating_mul(factorial(g.len()));
        if perm_budget > PERMUTATION_CAP {
            break;
        }
    }

    let orderings: Vec<Vec<ThreadId>> = if perm_budget > PERMUTATION_CAP {
        vec![groups.iter().flatten().copied().collect()]
    } else {
        let mut acc: Vec<Vec<ThreadId>> = vec![Vec::new()];
        for g in &groups {
            let perms = permutations(g);
            let mut next = Vec::with_capacity(acc.len() * perms.len());
            for base in &acc {
                for p in &perms {
                    let mut b = base.clone();
                    b.extend(p.iter().copied());
                    next.push(b);
                }
            }
            acc = next;
        }
        acc
    };

    let mut best: Option<(String, MachineState)> = None;
    for order in orderings {
        let candidate = apply_order(state, &order);
        let rendered = candidate.render();
        if best.as_ref().map(|(r, _)| rendered < *r).unwrap_or(true) {
            best = Some((rendered, candidate));
        }
    }
    best.expect("at least one ordering").1
}

fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}

fn permutations(items: &[ThreadId]) -> Vec<Vec<ThreadId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            let mut v = vec![*x];
            v.append(&mut tail);
            out.push(v);
        }
    }
    out
}

fn apply_order(state: &MachineState, order: &[ThreadId]) -> MachineState {
    let mut m = CanonMaps::default();
    // Assign thread ids in order first so tid literals resolve stably.
    for t in order {
        m.tid(*t);
    }
    let mut new_threads: BTreeMap<ThreadId, Thread> = BTreeMap::new();
    for t in order {
        let th = &state.threads[t];
        let renamed = match th {
            Thread::Plain { term } => Thread::Plain {
                term: rename_term(term, &mut m),
            },
            Thread::Primary { term, comp, cont, tx } => Thread::Primary {
                tx: m.tx(*tx),
                term: rename_term(term, &mut m),
                comp: rename_term(comp, &mut m),
                cont: rename_term(cont, &mut m),
            },
            Thread::Secondary { term, comp, tx } => Thread::Secondary {
                tx: m.tx(*tx),
                term: rename_term(term, &mut m),
                comp: rename_term(comp, &mut m),
            },
        };
        new_threads.insert(m.tid(*t), renamed);
    }

    // Walk locations breadth-first in assigned order, renaming their stored
    // values and discovering new locations as they appear.
    let mut new_heap: BTreeMap<LocId, Term> = BTreeMap::new();
    let mut new_working: BTreeMap<LocId, (Term, TxId)> = BTreeMap::new();
    let mut processed: BTreeSet<LocId> = BTreeSet::new();
    loop {
        let pending: Vec<(LocId, LocId)> = m
            .locs
            .iter()
            .filter(|(orig, _)| !processed.contains(orig))
            .map(|(o, n)| (*o, *n))
            .collect();
        if pending.is_empty() {
            break;
        }
        for (orig, new) in pending {
            processed.insert(orig);
            if let Some(v) = state.heap.get(&orig) {
                new_heap.insert(new, rename_term(v, &mut m));
            }
            if let Some((v, k)) = state.working.get(&orig) {
                let nk = m.tx(*k);
                new_working.insert(new, (rename_term(v, &mut m), nk));
            }
        }
    }
    // Locations never referenced from any thread (possible in the lite
    // form): order them by the skeleton of their stored value.
    let mut leftovers: Vec<LocId> = state
        .heap
        .keys()
        .chain(state.working.keys())
        .filter(|r| !m.locs.contains_key(r))
        .copied()
        .collect();
    leftovers.sort_by_key(|r| {
        let mut local = CanonMaps::default();
        let h = state
            .heap
            .get(r)
            .map(|v| crate::syntax::pretty(&rename_term(v, &mut local)));
        let w = state
            .working
            .get(r)
            .map(|(v, _)| crate::syntax::pretty(&rename_term(v, &mut local)));
        (h, w, *r)
    });
    for r in leftovers {
        let new = m.loc(r);
        if let Some(v) = state.heap.get(&r) {
            let rv = rename_term(v, &mut m);
            new_heap.insert(new, rv);
        }
        if let Some((v, k)) = state.working.get(&r) {
            let nk = m.tx(*k);
            new_working.insert(new, (rename_term(v, &mut m), nk));
        }
    }
    // A second pass for locations discovered inside leftover values.
    loop {
        let pending: Vec<(LocId, LocId)> = m
            .locs
            .iter()
            .filter(|(orig, _)| !processed.contains(orig))
            .map(|(o, n)| (*o, *n))
            .collect();
        if pending.is_empty() {
            break;
        }
        for (orig, new) in pending {
            processed.insert(orig);
            if let Some(v) = state.heap.get(&orig) {
                new_heap.insert(new, rename_term(v, &mut m));
            }
            if let Some((v, k)) = state.working.get(&orig) {
                let nk = m.tx(*k);
                new_working.insert(new, (rename_term(v, &mut m), nk));
            }
        }
    }

    let co_locs = state
        .co_locs
        .iter()
        .filter_map(|r| m.locs.get(r).copied())
        .collect();

    MachineState {
        heap: new_heap,
        working: new_working,
        threads: new_threads,
        co_locs,
        next_loc: m.locs.len() as u32,
        next_thread: m.tids.len() as u32,
        next_tx: m.txs.len() as u32,
        nonce_counters: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extra_terminated_thread_is_invisible() {
        let mut a = MachineState::new();
        let r = a.fresh_loc();
        a.heap.insert(r, Term::int(5));
        let t = a.fresh_thread();
        a.threads.insert(t, Thread::Plain { term: Term::read(Term::Loc(r)) });
        let mut b = a.clone();
        let t2 = b.fresh_thread();
        b.threads.insert(
            t2,
            Thread::Plain {
                term: Term::ret(Term::unit()),
            },
        );
        assert!(cong_t(&a, &b));
    }

    #[test]
    fn tx_renaming_is_invisible() {
        let mk = |k: TxId| {
            let mut s = MachineState::new();
            let r = LocId(7);
            s.working.insert(r, (Term::int(1), k));
            s.threads.insert(
                ThreadId(3),
                Thread::Secondary {
                    term: Term::read(Term::Loc(r)),
                    comp: Term::return_eta(),
                    tx: k,
                },
            );
            s
        };
        assert!(cong_t(&mk(TxId(0)), &mk(TxId(9))));
        assert_ne!(
            canonicalize(&mk(TxId(0))),
            canonicalize(&{
                let mut s = mk(TxId(0));
                s.working.insert(LocId(7), (Term::int(2), TxId(0)));
                s
            }),
            "live heap differences stay visible"
        );
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let mut s = MachineState::new();
        let r = s.fresh_loc();
        s.heap.insert(r, Term::int(5));
        let t = s.fresh_thread();
        s.threads.insert(
            t,
            Thread::Plain {
                term: Term::bind(Term::read(Term::Loc(r)), Term::return_eta()),
            },
        );
        let once = canonicalize(&s);
        assert_eq!(canonicalize(&once), once);
    }

    #[test]
    fn symmetric_threads_collapse() {
        // Two states that differ only in which thread id got which role.
        let mk = |swap: bool| {
            let mut s = MachineState::new();
            let r1 = s.fresh_loc();
            let r2 = s.fresh_loc();
            s.heap.insert(r1, Term::int(1));
            s.heap.insert(r2, Term::int(2));
            let (a, b) = if swap { (r2, r1) } else { (r1, r2) };
            let t1 = s.fresh_thread();
            s.threads.insert(t1, Thread::Plain { term: Term::read(Term::Loc(a)) });
            let t2 = s.fresh_thread();
            s.threads.insert(t2, Thread::Plain { term: Term::read(Term::Loc(b)) });
            s
        };
        assert_eq!(canonical_lite(&mk(false)), canonical_lite(&mk(true)));
    }

    #[test]
    fn drain_threads_are_plumbing() {
        let mut s = MachineState::new();
        let rc = s.fresh_loc();
        s.heap.insert(rc, encoder::m0());
        s.co_locs.insert(rc);
        let t = s.fresh_thread();
        s.threads.insert(
            t,
            Thread::Plain {
                term: Term::app(encoder::bang(), encoder::psi_drain(Term::Loc(rc))),
            },
        );
        let c = canonicalize(&s);
        assert!(c.threads.is_empty(), "{}", c.render());
        assert!(c.heap.is_empty(), "commit channel is collected: {}", c.render());
    }

    #[test]
    fn user_recv_is_not_plumbing() {
        // Identical shape but the channel is not commit-role.
        let mut s = MachineState::new();
        let rc = s.fresh_loc();
        s.heap.insert(rc, encoder::m0());
        let t = s.fresh_thread();
        s.threads.insert(
            t,
            Thread::Plain {
                term: encoder::psi_drain(Term::Loc(rc)),
            },
        );
        let c = canonicalize(&s);
        assert_eq!(c.threads.len(), 1);
    }

    #[test]
    fn lite_form_keeps_everything() {
        let mut s = MachineState::new();
        let r = s.fresh_loc();
        s.heap.insert(r, Term::int(5));
        let t = s.fresh_thread();
        s.threads.insert(
            t,
            Thread::Plain {
                term: Term::ret(Term::unit()),
            },
        );
        let lite = canonical_lite(&s);
        assert_eq!(lite.threads.len(), 1);
        assert_eq!(lite.heap.len(), 1);
    }
}
