//! The transition relation of the machine: per-thread execution steps, the
//! isolated macro-step, and the family-wide coordination steps (transaction
//! creation, distributed commit, distributed abort).

mod isolated;

pub use isolated::IsolatedBlocked;

use crate::state::{LocId, MachineState, StepLabel, Thread, ThreadId, TxId};
use crate::syntax::{
    decompose, recompose, term_step, EvalContext, OutOfFuel, Term, TermRule, PURE_FUEL,
};
use thiserror::Error;

/// Rule names as recorded in traces. Term-level rules are wrapped by the
/// process/transaction lifting rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    TermP(TermRule),
    TermT(TermRule),
    ForkP,
    ForkT,
    NewP,
    NewT,
    ReadP,
    ReadT,
    ReadJoin,
    ReadMerge,
    WriteP,
    WriteT,
    WriteJoin,
    WriteMerge,
    Atomic,
    IsolatedP,
    IsolatedT,
    CommitTx,
    AbortTx,
    NonceP,
    NonceT,
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rule::TermP(r) => write!(f, "TermP:{}", r.name()),
            Rule::TermT(r) => write!(f, "TermT:{}", r.name()),
            Rule::ForkP => write!(f, "ForkP"),
            Rule::ForkT => write!(f, "ForkT"),
            Rule::NewP => write!(f, "NewP"),
            Rule::NewT => write!(f, "NewT"),
            Rule::ReadP => write!(f, "ReadP"),
            Rule::ReadT => write!(f, "ReadT"),
            Rule::ReadJoin => write!(f, "ReadJoin"),
            Rule::ReadMerge => write!(f, "ReadMerge"),
            Rule::WriteP => write!(f, "WriteP"),
            Rule::WriteT => write!(f, "WriteT"),
            Rule::WriteJoin => write!(f, "WriteJoin"),
            Rule::WriteMerge => write!(f, "WriteMerge"),
            Rule::Atomic => write!(f, "Atomic"),
            Rule::IsolatedP => write!(f, "IsolatedP"),
            Rule::IsolatedT => write!(f, "IsolatedT"),
            Rule::CommitTx => write!(f, "Commit"),
            Rule::AbortTx => write!(f, "Abort"),
            Rule::NonceP => write!(f, "NonceP"),
            Rule::NonceT => write!(f, "NonceT"),
        }
    }
}

/// An enabled transition, stored as a certificate: the successor is computed
/// eagerly and [`apply_step`] checks the source fingerprint before handing
/// it out.
#[derive(Debug, Clone)]
pub struct EnabledStep {
    pub rule: Rule,
    /// The subject thread (the raiser for aborts, the first primary for
    /// commits).
    pub thread: ThreadId,
    pub label: StepLabel,
    pub successor: MachineState,
    pub source_fingerprint: u64,
    /// Sub-machine rules of an isolated macro-step, in execution order.
    pub inner: Vec<Rule>,
    /// Names of the primitive derivation rules this step instantiates.
    pub covers: Vec<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("evaluation fuel exhausted in thread {0} (possible divergence)")]
    Fuel(ThreadId),
    #[error("stale step: computed for a different state")]
    StaleStep,
}

/// Engine knobs: fuel for the pure evaluator and for isolated sub-runs.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub pure_fuel: usize,
    pub isolated_fuel: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            pure_fuel: PURE_FUEL,
            isolated_fuel: 10_000,
        }
    }
}

/// All machine transitions enabled at `state`, in a deterministic order:
/// per-thread steps by thread id, then commits by transaction id.
pub fn enabled_steps(state: &MachineState, limits: &Limits) -> Result<Vec<EnabledStep>, StepError> {
    let fp = state.fingerprint();
    let mut steps = Vec::new();
    let tids: Vec<ThreadId> = state.threads.keys().copied().collect();
    for t in tids {
        if let Some(step) = thread_step(state, t, limits, fp)? {
            steps.push(step);
        }
    }
    let (_, txs) = state.names();
    for k in txs {
        if let Some(step) = commit_step(state, k, fp) {
            steps.push(step);
        }
    }
    Ok(steps)
}

/// Apply a step certificate, guarding against application to the wrong state.
pub fn apply_step(state: &MachineState, step: &EnabledStep) -> Result<MachineState, StepError> {
    if state.fingerprint() != step.source_fingerprint {
        return Err(StepError::StaleStep);
    }
    Ok(step.successor.clone())
}

fn thread_step(
    state: &MachineState,
    t: ThreadId,
    limits: &Limits,
    fp: u64,
) -> Result<Option<EnabledStep>, StepError> {
    let thread = &state.threads[&t];
    let in_tx = thread.tx();
    let term = thread.term().clone();

    // Term-level rules, lifted by (TermP)/(TermT).
    match term_step(&term, limits.pure_fuel) {
        Err(OutOfFuel) => return Err(StepError::Fuel(t)),
        Ok(Some((trule, next))) => {
            let mut succ = state.clone();
            succ.threads.insert(t, thread.with_term(next));
            let rule = if in_tx.is_some() {
                Rule::TermT(trule)
            } else {
                Rule::TermP(trule)
            };
            let covers = vec![
                if in_tx.is_some() { "TermT" } else { "TermP" },
                trule.name(),
            ];
            return Ok(Some(EnabledStep {
                rule,
                thread: t,
                label: StepLabel::Internal,
                successor: succ,
                source_fingerprint: fp,
                inner: Vec::new(),
                covers,
            }));
        }
        Ok(None) => {}
    }

    let (ctx, redex) = decompose(&term);
    let step = match redex {
        Term::Fork(body) => {
            let mut succ = state.clone();
            let child = succ.fresh_thread();
            let (rule, child_thread) = match in_tx {
                None => (Rule::ForkP, Thread::Plain { term: *body }),
                Some(k) => (
                    Rule::ForkT,
                    Thread::Secondary {
                        term: *body,
                        comp: Term::return_eta(),
                        tx: k,
                    },
                ),
            };
            succ.threads.insert(child, child_thread);
            let parent = recompose(&ctx, Term::ret(Term::Lit(crate::syntax::Lit::Tid(child))));
            succ.threads.insert(t, thread.with_term(parent));
            Some(EnabledStep {
                covers: vec![rule_name_static(rule)],
                rule,
                thread: t,
                label: StepLabel::Internal,
                successor: succ,
                source_fingerprint: fp,
                inner: Vec::new(),
            })
        }
        Term::NewVar { init, co } => {
            let mut succ = state.clone();
            let r = succ.fresh_loc();
            let rule = match in_tx {
                None => {
                    succ.heap.insert(r, *init);
                    Rule::NewP
                }
                Some(k) => {
                    succ.working.insert(r, (*init, k));
                    Rule::NewT
                }
            };
            if co {
                succ.co_locs.insert(r);
            }
            succ.threads
                .insert(t, thread.with_term(recompose(&ctx, Term::ret(Term::Loc(r)))));
            Some(EnabledStep {
                covers: vec![rule_name_static(rule)],
                rule,
                thread: t,
                label: StepLabel::Internal,
                successor: succ,
                source_fingerprint: fp,
                inner: Vec::new(),
            })
        }
        Term::ReadVar(loc) => match *loc {
            Term::Loc(r) => read_step(state, t, thread, &ctx, &term, r, in_tx, fp),
            _ => None,
        },
        Term::WriteVar(loc, payload) => match *loc {
            Term::Loc(r) => write_step(state, t, thread, &ctx, &term, r, *payload, in_tx, fp),
            _ => None,
        },
        Term::Atomic(body, comp) => {
            if in_tx.is_some() {
                // No derivation rule for a nested atomic.
                None
            } else {
                let cont = match &ctx {
                    EvalContext::Hole => Some(Term::return_eta()),
                    EvalContext::Frame(inner, n) if **inner == EvalContext::Hole => {
                        Some(n.clone())
                    }
                    _ => None,
                };
                cont.map(|cont| {
                    let mut succ = state.clone();
                    let k = succ.fresh_tx();
                    succ.threads.insert(
                        t,
                        Thread::Primary {
                            term: *body,
                            comp: *comp,
                            cont,
                            tx: k,
                        },
                    );
                    EnabledStep {
                        rule: Rule::Atomic,
                        thread: t,
                        label: StepLabel::NewTx(k),
                        successor: succ,
                        source_fingerprint: fp,
                        inner: Vec::new(),
                        covers: vec!["Atomic"],
                    }
                })
            }
        }
        Term::Isolated(body) => {
            match isolated::run_isolated(state, t, thread, &ctx, &term, *body, limits)? {
                isolated::IsolatedResult::Done(step) => Some(*step),
                isolated::IsolatedResult::NotEnabled(_) => None,
            }
        }
        Term::NewNonce => {
            let mut succ = state.clone();
            let n = succ.next_nonce(t);
            let lit = Term::Lit(crate::syntax::Lit::Nonce(t, n));
            succ.threads
                .insert(t, thread.with_term(recompose(&ctx, Term::ret(lit))));
            let rule = if in_tx.is_some() {
                Rule::NonceT
            } else {
                Rule::NonceP
            };
            Some(EnabledStep {
                covers: vec![rule_name_static(rule)],
                rule,
                thread: t,
                label: StepLabel::Internal,
                successor: succ,
                source_fingerprint: fp,
                inner: Vec::new(),
            })
        }
        // A whole-term abort raises a family-wide abort of its transaction.
        Term::Abort(value) if ctx == EvalContext::Hole => match in_tx {
            Some(k) => Some(abort_step(state, t, k, *value, fp)),
            None => None,
        },
        _ => None,
    };
    Ok(step)
}

#[allow(clippy::too_many_arguments)]
fn read_step(
    state: &MachineState,
    t: ThreadId,
    thread: &Thread,
    ctx: &EvalContext,
    whole: &Term,
    r: LocId,
    in_tx: Option<TxId>,
    fp: u64,
) -> Option<EnabledStep> {
    if let Some((m, j)) = state.working.get(&r).cloned() {
        let result = recompose(ctx, Term::ret(m));
        match in_tx {
            None => {
                // The reading thread joins j; the whole current term becomes
                // the compensation.
                let mut succ = state.clone();
                succ.threads.insert(
                    t,
                    Thread::Secondary {
                        term: result,
                        comp: Term::lam("_", whole.clone()),
                        tx: j,
                    },
                );
                Some(EnabledStep {
                    rule: Rule::ReadJoin,
                    thread: t,
                    label: StepLabel::Internal,
                    successor: succ,
                    source_fingerprint: fp,
                    inner: Vec::new(),
                    covers: vec!["ReadJoin"],
                })
            }
            Some(k) => {
                // Fusion: rename k to j everywhere.
                let mut succ = state.rename_tx(k, j);
                let th = succ.threads[&t].clone();
                succ.threads.insert(t, th.with_term(result));
                Some(EnabledStep {
                    rule: Rule::ReadMerge,
                    thread: t,
                    label: StepLabel::Internal,
                    successor: succ,
                    source_fingerprint: fp,
                    inner: Vec::new(),
                    covers: vec!["ReadMerge"],
                })
            }
        }
    } else {
        let m = state.heap.get(&r)?.clone();
        let result = recompose(ctx, Term::ret(m.clone()));
        let mut succ = state.clone();
        let rule = match in_tx {
            None => Rule::ReadP,
            Some(k) => {
                succ.working.insert(r, (m, k));
                Rule::ReadT
            }
        };
        succ.threads.insert(t, thread.with_term(result));
        Some(EnabledStep {
            covers: vec![rule_name_static(rule)],
            rule,
            thread: t,
            label: StepLabel::Internal,
            successor: succ,
            source_fingerprint: fp,
            inner: Vec::new(),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn write_step(
    state: &MachineState,
    t: ThreadId,
    thread: &Thread,
    ctx: &EvalContext,
    whole: &Term,
    r: LocId,
    payload: Term,
    in_tx: Option<TxId>,
    fp: u64,
) -> Option<EnabledStep> {
    let result = recompose(ctx, Term::ret(Term::unit()));
    if let Some((_, j)) = state.working.get(&r).cloned() {
        match in_tx {
            None => {
                let mut succ = state.clone();
                succ.working.insert(r, (payload, j));
                succ.threads.insert(
                    t,
                    Thread::Secondary {
                        term: result,
                        comp: Term::lam("_", whole.clone()),
                        tx: j,
                    },
                );
                Some(EnabledStep {
                    rule: Rule::WriteJoin,
                    thread: t,
                    label: StepLabel::Internal,
                    successor: succ,
                    source_fingerprint: fp,
                    inner: Vec::new(),
                    covers: vec!["WriteJoin"],
                })
            }
            Some(k) => {
                let mut succ = state.rename_tx(k, j);
                succ.working.insert(r, (payload, j));
                let th = succ.threads[&t].clone();
                succ.threads.insert(t, th.with_term(result));
                Some(EnabledStep {
                    rule: Rule::WriteMerge,
                    thread: t,
                    label: StepLabel::Internal,
                    successor: succ,
                    source_fingerprint: fp,
                    inner: Vec::new(),
                    covers: vec!["WriteMerge"],
                })
            }
        }
    } else {
        // The location must exist in the heap.
        state.heap.get(&r)?;
        let mut succ = state.clone();
        let rule = match in_tx {
            None => {
                succ.heap.insert(r, payload);
                Rule::WriteP
            }
            Some(k) => {
                succ.working.insert(r, (payload, k));
                Rule::WriteT
            }
        };
        succ.threads.insert(t, thread.with_term(result));
        Some(EnabledStep {
            covers: vec![rule_name_static(rule)],
            rule,
            thread: t,
            label: StepLabel::Internal,
            successor: succ,
            source_fingerprint: fp,
            inner: Vec::new(),
        })
    }
}

/// Family-wide abort raised by participant `t` with value `v`: every
/// participant of `k` runs its compensation applied to the abort value,
/// primaries keep their continuation, and the claims of `k` are discarded.
fn abort_step(state: &MachineState, t: ThreadId, k: TxId, v: Term, fp: u64) -> EnabledStep {
    let mut succ = state.clean(k);
    let participants = state.participants(k);
    let mut covers = Vec::new();
    for p in &participants {
        let th = state.threads[p].clone();
        let next = match th {
            Thread::Primary { comp, cont, .. } => {
                covers.push(if *p == t { "RaiseAbort1" } else { "SigAbort1" });
                Thread::Plain {
                    term: Term::bind(Term::app(comp, v.clone()), cont),
                }
            }
            Thread::Secondary { comp, .. } => {
                covers.push(if *p == t { "RaiseAbort2" } else { "SigAbort2" });
                Thread::Plain {
                    term: Term::app(comp, v.clone()),
                }
            }
            Thread::Plain { .. } => unreachable!("participants are transactional"),
        };
        succ.threads.insert(*p, next);
    }
    if participants.len() > 1 {
        covers.push("AbBroadcast");
    }
    if state.threads.len() > participants.len() {
        covers.push("TrIgnore");
    }
    covers.sort_unstable();
    covers.dedup();
    EnabledStep {
        rule: Rule::AbortTx,
        thread: t,
        label: StepLabel::Abort(k, v),
        successor: succ,
        source_fingerprint: fp,
        inner: Vec::new(),
        covers,
    }
}

/// Distributed commit of `k`: enabled when `k` has at least one primary and
/// every primary sits at a `return`. Claims are published, primaries pass
/// the result to their continuation, secondaries are released as plain
/// threads.
fn commit_step(state: &MachineState, k: TxId, fp: u64) -> Option<EnabledStep> {
    let participants = state.participants(k);
    let mut primaries = Vec::new();
    let mut secondaries = Vec::new();
    for p in &participants {
        match &state.threads[p] {
            Thread::Primary { term, .. } => {
                if !matches!(term, Term::Return(_)) {
                    return None;
                }
                primaries.push(*p);
            }
            Thread::Secondary { .. } => secondaries.push(*p),
            Thread::Plain { .. } => unreachable!(),
        }
    }
    if primaries.is_empty() {
        return None;
    }
    let mut succ = state.commit_mem(k);
    for p in &participants {
        let th = state.threads[p].clone();
        let next = match th {
            Thread::Primary { term, cont, .. } => Thread::Plain {
                term: Term::bind(term, cont),
            },
            Thread::Secondary { term, .. } => Thread::Plain { term },
            Thread::Plain { .. } => unreachable!(),
        };
        succ.threads.insert(*p, next);
    }
    let mut covers = vec!["Commit1"];
    if !secondaries.is_empty() {
        covers.push("Commit2");
    }
    if participants.len() > 1 {
        covers.push("CoBroadcast");
    }
    if state.threads.len() > participants.len() {
        covers.push("TrIgnore");
    }
    Some(EnabledStep {
        rule: Rule::CommitTx,
        thread: primaries[0],
        label: StepLabel::Commit(k),
        successor: succ,
        source_fingerprint: fp,
        inner: Vec::new(),
        covers,
    })
}

pub(super) fn rule_name_static(rule: Rule) -> &'static str {
    match rule {
        Rule::ForkP => "ForkP",
        Rule::ForkT => "ForkT",
        Rule::NewP => "NewP",
        Rule::NewT => "NewT",
        Rule::ReadP => "ReadP",
        Rule::ReadT => "ReadT",
        Rule::ReadJoin => "ReadJoin",
        Rule::ReadMerge => "ReadMerge",
        Rule::WriteP => "WriteP",
        Rule::WriteT => "WriteT",
        Rule::WriteJoin => "WriteJoin",
        Rule::WriteMerge => "WriteMerge",
        Rule::Atomic => "Atomic",
        Rule::IsolatedP => "IsolatedP",
        Rule::IsolatedT => "IsolatedT",
        Rule::CommitTx => "Commit1",
        Rule::AbortTx => "RaiseAbort1",
        Rule::NonceP => "NonceP",
        Rule::NonceT => "NonceT",
        Rule::TermP(_) => "TermP",
        Rule::TermT(_) => "TermT",
    }
}

/// Terminal, stuck (with per-thread diagnostics) or live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    /// Every thread finished at top level. Threads that ended in a bare
    /// `abort` outside any transaction are reported distinctly.
    Terminal { aborted: Vec<ThreadId> },
    Stuck { diagnostics: Vec<(ThreadId, String)> },
    Live,
}

impl Classification {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Classification::Terminal { .. })
    }

    pub fn is_stuck(&self) -> bool {
        matches!(self, Classification::Stuck { .. })
    }
}

pub fn classify(state: &MachineState, limits: &Limits) -> Result<Classification, StepError> {
    if !enabled_steps(state, limits)?.is_empty() {
        return Ok(Classification::Live);
    }
    let mut aborted = Vec::new();
    let mut diagnostics = Vec::new();
    for (t, th) in &state.threads {
        match th {
            Thread::Plain { term: Term::Return(_) } => {}
            Thread::Plain { term: Term::Abort(_) } => aborted.push(*t),
            other => diagnostics.push((*t, stuck_reason(state, other))),
        }
    }
    if diagnostics.is_empty() {
        Ok(Classification::Terminal { aborted })
    } else {
        for t in aborted {
            diagnostics.push((t, "abort outside transaction".to_string()));
        }
        diagnostics.sort();
        Ok(Classification::Stuck { diagnostics })
    }
}

fn stuck_reason(state: &MachineState, thread: &Thread) -> String {
    let (ctx, redex) = decompose(thread.term());
    match redex {
        Term::Retry => "retry".to_string(),
        Term::Isolated(body) => {
            let t = state
                .threads
                .iter()
                .find(|(_, th)| *th == thread)
                .map(|(t, _)| *t)
                .unwrap_or(ThreadId(0));
            match isolated::run_isolated(
                state,
                t,
                thread,
                &ctx,
                thread.term(),
                *body,
                &Limits::default(),
            ) {
                Ok(isolated::IsolatedResult::NotEnabled(b)) => {
                    format!("isolated blocked: {}", b.reason)
                }
                _ => "isolated blocked".to_string(),
            }
        }
        Term::Atomic(..) if thread.tx().is_some() => {
            "nested atomic (no derivation rule)".to_string()
        }
        Term::Atomic(..) => "atomic not of the shape `atomic M N >>= K`".to_string(),
        Term::ReadVar(l) | Term::WriteVar(l, _) => match *l {
            Term::Loc(r) if !state.heap.contains_key(&r) && !state.working.contains_key(&r) => {
                format!("access to unallocated location {r}")
            }
            Term::Loc(_) => "memory access with no applicable rule".to_string(),
            other => format!("memory access to non-location `{}`", crate::syntax::pretty(&other)),
        },
        Term::Abort(_) if ctx == EvalContext::Hole && thread.tx().is_none() => {
            "abort outside transaction".to_string()
        }
        Term::Return(_) => match thread.tx() {
            Some(k) => format!("participant waiting for resolution of {k}"),
            None => "done".to_string(),
        },
        other => match crate::syntax::pure_eval(&other, PURE_FUEL) {
            Ok(crate::syntax::PureOutcome::Stuck(msg)) => msg,
            _ => "no applicable rule".to_string(),
        },
    }
}

/// True when the state is a scheduling dead end: nothing can step and at
/// least one thread sits at a top-level `retry` (outside `isolated`). The
/// explorer prunes such paths instead of reporting them as outcomes.
pub fn is_retry_dead_end(classification: &Classification) -> bool {
    match classification {
        Classification::Stuck { diagnostics } => {
            diagnostics.iter().any(|(_, d)| d == "retry")
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests;
