//! The isolated macro-step: a single-thread sub-machine run from the current
//! memory, folded into one step of the outer machine.
//!
//! The sub-run may not fork, start transactions or nest `isolated`; it may
//! read and write memory, and in doing so it may join or fuse transactions
//! (joins and fusions are how encoded synchronizations cross transaction
//! boundaries, and they happen inside the protocol's isolated blocks).
//! A sub-run that ends in `retry`, gets stuck, or would need a forbidden
//! rule leaves the isolated step disabled; its effects are discarded and the
//! outer thread may retry later, after other threads change the memory.

use super::{EnabledStep, Limits, Rule, StepError};
use crate::state::{MachineState, StepLabel, Thread, ThreadId, TxId};
use crate::syntax::{
    decompose, recompose, term_step, EvalContext, OutOfFuel, PureOutcome, Term,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsolatedBlocked {
    pub reason: String,
}

pub(super) enum IsolatedResult {
    Done(Box<EnabledStep>),
    NotEnabled(IsolatedBlocked),
}

fn blocked(reason: impl Into<String>) -> IsolatedResult {
    IsolatedResult::NotEnabled(IsolatedBlocked {
        reason: reason.into(),
    })
}

#[allow(clippy::too_many_arguments)]
pub(super) fn run_isolated(
    state: &MachineState,
    t: ThreadId,
    outer: &Thread,
    outer_ctx: &EvalContext,
    outer_whole: &Term,
    body: Term,
    limits: &Limits,
) -> Result<IsolatedResult, StepError> {
    // Sub-state: same memory and counters, a single thread running the body.
    let mut sub = state.clone();
    sub.threads.clear();
    let sub_thread = match outer.tx() {
        None => Thread::Plain { term: body },
        Some(k) => Thread::Secondary {
            term: body,
            comp: Term::return_eta(),
            tx: k,
        },
    };
    sub.threads.insert(t, sub_thread);

    let mut inner: Vec<Rule> = Vec::new();
    let mut covers: Vec<&'static str> = Vec::new();
    let mut renames: Vec<(TxId, TxId)> = Vec::new();
    let mut fuel = limits.isolated_fuel;

    let final_term = loop {
        if fuel == 0 {
            return Err(StepError::Fuel(t));
        }
        fuel -= 1;
        let thread = sub.threads[&t].clone();
        let in_tx = thread.tx();
        let term = thread.term().clone();

        // End conditions on the whole term.
        match &term {
            Term::Return(_) => break term,
            Term::Abort(_) => {
                if in_tx.is_some() {
                    break term;
                }
                return Ok(blocked("abort outside any transaction inside isolated"));
            }
            Term::Retry => return Ok(blocked("retry")),
            _ => {}
        }

        match term_step(&term, limits.pure_fuel) {
            Err(OutOfFuel) => return Err(StepError::Fuel(t)),
            Ok(Some((trule, next))) => {
                let rule = if in_tx.is_some() {
                    Rule::TermT(trule)
                } else {
                    Rule::TermP(trule)
                };
                inner.push(rule);
                covers.push(if in_tx.is_some() { "TermT" } else { "TermP" });
                covers.push(trule.name());
                let th = sub.threads[&t].clone();
                sub.threads.insert(t, th.with_term(next));
                continue;
            }
            Ok(None) => {}
        }

        let (ctx, redex) = decompose(&term);
        match redex {
            Term::Fork(_) => return Ok(blocked("fork inside isolated")),
            Term::Atomic(..) => return Ok(blocked("atomic inside isolated")),
            Term::Isolated(_) => return Ok(blocked("nested isolated")),
            Term::NewVar { init, co } => {
                let r = sub.fresh_loc();
                let rule = match in_tx {
                    None => {
                        sub.heap.insert(r, *init);
                        Rule::NewP
                    }
                    Some(k) => {
                        sub.working.insert(r, (*init, k));
                        Rule::NewT
                    }
                };
                if co {
                    sub.co_locs.insert(r);
                }
                inner.push(rule);
                covers.push(super::rule_name_static(rule));
                let th = sub.threads[&t].clone();
                sub.threads
                    .insert(t, th.with_term(recompose(&ctx, Term::ret(Term::Loc(r)))));
            }
            Term::NewNonce => {
                let n = sub.next_nonce(t);
                let rule = if in_tx.is_some() {
                    Rule::NonceT
                } else {
                    Rule::NonceP
                };
                inner.push(rule);
                covers.push(super::rule_name_static(rule));
                let lit = Term::Lit(crate::syntax::Lit::Nonce(t, n));
                let th = sub.threads[&t].clone();
                sub.threads
                    .insert(t, th.with_term(recompose(&ctx, Term::ret(lit))));
            }
            Term::ReadVar(loc) => {
                let r = match *loc {
                    Term::Loc(r) => r,
                    other => {
                        return Ok(blocked(format!(
                            "read of non-location `{}` inside isolated",
                            crate::syntax::pretty(&other)
                        )))
                    }
                };
                if let Some((m, j)) = sub.working.get(&r).cloned() {
                    let result = recompose(&ctx, Term::ret(m));
                    match in_tx {
                        None => {
                            inner.push(Rule::ReadJoin);
                            covers.push("ReadJoin");
                            sub.threads.insert(
                                t,
                                Thread::Secondary {
                                    term: result,
                                    comp: Term::lam("_", term.clone()),
                                    tx: j,
                                },
                            );
                        }
                        Some(k) => {
                            inner.push(Rule::ReadMerge);
                            covers.push("ReadMerge");
                            if k != j {
                                renames.push((k, j));
                                sub = sub.rename_tx(k, j);
                            }
                            let th = sub.threads[&t].clone();
                            sub.threads.insert(t, th.with_term(result));
                        }
                    }
                } else if let Some(m) = sub.heap.get(&r).cloned() {
                    let rule = match in_tx {
                        None => Rule::ReadP,
                        Some(k) => {
                            sub.working.insert(r, (m.clone(), k));
                            Rule::ReadT
                        }
                    };
                    inner.push(rule);
                    covers.push(super::rule_name_static(rule));
                    let th = sub.threads[&t].clone();
                    sub.threads
                        .insert(t, th.with_term(recompose(&ctx, Term::ret(m))));
                } else {
                    return Ok(blocked(format!("read of unallocated location {r}")));
                }
            }
            Term::WriteVar(loc, payload) => {
                let r = match *loc {
                    Term::Loc(r) => r,
                    other => {
                        return Ok(blocked(format!(
                            "write to non-location `{}` inside isolated",
                            crate::syntax::pretty(&other)
                        )))
                    }
                };
                let result = recompose(&ctx, Term::ret(Term::unit()));
                if let Some((_, j)) = sub.working.get(&r).cloned() {
                    match in_tx {
                        None => {
                            inner.push(Rule::WriteJoin);
                            covers.push("WriteJoin");
                            sub.working.insert(r, (*payload, j));
                            sub.threads.insert(
                                t,
                                Thread::Secondary {
                                    term: result,
                                    comp: Term::lam("_", term.clone()),
                                    tx: j,
                                },
                            );
                        }
                        Some(k) => {
                            inner.push(Rule::WriteMerge);
                            covers.push("WriteMerge");
                            if k != j {
                                renames.push((k, j));
                                sub = sub.rename_tx(k, j);
                            }
                            sub.working.insert(r, (*payload, j));
                            let th = sub.threads[&t].clone();
                            sub.threads.insert(t, th.with_term(result));
                        }
                    }
                } else if sub.heap.contains_key(&r) {
                    let rule = match in_tx {
                        None => {
                            sub.heap.insert(r, *payload);
                            Rule::WriteP
                        }
                        Some(k) => {
                            sub.working.insert(r, (*payload, k));
                            Rule::WriteT
                        }
                    };
                    inner.push(rule);
                    covers.push(super::rule_name_static(rule));
                    let th = sub.threads[&t].clone();
                    sub.threads.insert(t, th.with_term(result));
                } else {
                    return Ok(blocked(format!("write to unallocated location {r}")));
                }
            }
            other => {
                let reason = match crate::syntax::pure_eval(&other, limits.pure_fuel) {
                    Ok(PureOutcome::Stuck(msg)) => msg,
                    Ok(PureOutcome::Value(_)) => {
                        "no applicable rule inside isolated".to_string()
                    }
                    Err(OutOfFuel) => return Err(StepError::Fuel(t)),
                };
                return Ok(blocked(reason));
            }
        }
    };

    // The sub-run reached `return N` (or `abort N` in a transaction); fold it
    // into one outer step.
    let final_sub = sub.threads[&t].clone();
    let outer_term = recompose(outer_ctx, final_term.clone());
    let mut succ = sub.clone();
    succ.threads = state.threads.clone();
    for (_, th) in succ.threads.iter_mut() {
        for (from, to) in &renames {
            match th {
                Thread::Primary { tx, .. } | Thread::Secondary { tx, .. } if tx == from => {
                    *tx = *to;
                }
                _ => {}
            }
        }
    }
    let subject = match (outer, &final_sub) {
        (Thread::Plain { .. }, Thread::Plain { .. }) => Thread::Plain { term: outer_term },
        (Thread::Plain { .. }, Thread::Secondary { tx, .. }) => Thread::Secondary {
            term: outer_term,
            comp: Term::lam("_", outer_whole.clone()),
            tx: *tx,
        },
        (Thread::Primary { comp, cont, tx, .. }, _) => {
            let mut k = *tx;
            for (from, to) in &renames {
                if k == *from {
                    k = *to;
                }
            }
            Thread::Primary {
                term: outer_term,
                comp: comp.clone(),
                cont: cont.clone(),
                tx: k,
            }
        }
        (Thread::Secondary { comp, tx, .. }, _) => {
            let mut k = *tx;
            for (from, to) in &renames {
                if k == *from {
                    k = *to;
                }
            }
            Thread::Secondary {
                term: outer_term,
                comp: comp.clone(),
                tx: k,
            }
        }
        (Thread::Plain { .. }, Thread::Primary { .. }) => {
            unreachable!("isolated sub-runs never create primaries")
        }
    };
    succ.threads.insert(t, subject);

    let rule = if outer.tx().is_some() {
        Rule::IsolatedT
    } else {
        Rule::IsolatedP
    };
    covers.push(super::rule_name_static(rule));
    covers.sort_unstable();
    covers.dedup();
    Ok(IsolatedResult::Done(Box::new(EnabledStep {
        rule,
        thread: t,
        label: StepLabel::Internal,
        successor: succ,
        source_fingerprint: state.fingerprint(),
        inner,
        covers,
    })))
}
