//! Translation from calculus terms to machine states: the channel-protocol
//! library (four-message nonce handshake over a shared variable, plus the
//! choice lock), the term-level encoding of commit-free processes, and the
//! state-level encoding that also handles running transactions.

use crate::state::{LocId, MachineState, Thread};
use crate::syntax::{substitute, Pattern, Term};
use crate::tccsm::{well_formed, Action, TccsProc, TypeError};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("input is not well-formed: {0}")]
    NotWellFormed(#[from] TypeError),
    #[error("running transactions have no term-level encoding; encode to a state instead")]
    ActiveTxInTerm,
}

/// Channel states of the synchronization protocol. `M0` is the free
/// channel; `M1 np` is an offer, `M2 np nq` the answer, `M3 ny` the
/// acknowledgement.
pub fn m0() -> Term {
    Term::con("M0", vec![])
}

/// `chooseThis l = writeVar l false`: claim the choice lock.
pub fn choose_this() -> Term {
    Term::lam("l", Term::write(Term::var("l"), Term::bool(false)))
}

/// `eqOrRetry x y`: proceed only when the nonces correlate.
pub fn eq_or_retry() -> Term {
    Term::lam(
        "x",
        Term::lam(
            "y",
            Term::case(
                Term::PrimEq(Box::new(Term::var("x")), Box::new(Term::var("y"))),
                vec![
                    (Pattern::Lit(crate::syntax::Lit::Bool(true)), Term::ret(Term::unit())),
                    (Pattern::Lit(crate::syntax::Lit::Bool(false)), Term::Retry),
                ],
            ),
        ),
    )
}

/// `bang x = fork x >> bang x`: fork a copy of `x` forever.
pub fn bang() -> Term {
    Term::LetRec(
        "bang".into(),
        Box::new(Term::lam(
            "x",
            Term::seq(
                Term::fork(Term::var("x")),
                Term::app(Term::var("bang"), Term::var("x")),
            ),
        )),
        Box::new(Term::var("bang")),
    )
}

fn bool_case(scrut: Term, on_false: Term, on_true: Term) -> Term {
    Term::case(
        scrut,
        vec![
            (Pattern::Lit(crate::syntax::Lit::Bool(false)), on_false),
            (Pattern::Lit(crate::syntax::Lit::Bool(true)), on_true),
        ],
    )
}

/// `tau l p`: win the choice lock in isolation, then run the continuation;
/// a lost race just returns.
pub fn tau() -> Term {
    let step = Term::isolated(Term::bind(
        Term::read(Term::var("l")),
        Term::lam(
            "b",
            bool_case(
                Term::var("b"),
                Term::ret(Term::bool(false)),
                Term::seq(
                    Term::app(choose_this(), Term::var("l")),
                    Term::ret(Term::bool(true)),
                ),
            ),
        ),
    ));
    Term::lam(
        "l",
        Term::lam(
            "p",
            Term::bind(
                step,
                Term::lam(
                    "w",
                    bool_case(Term::var("w"), Term::ret(Term::unit()), Term::var("p")),
                ),
            ),
        ),
    )
}

/// `recv c l p`: the receiving half of the protocol. Step one answers an
/// offer `M1 nx` with `M2 nx nq` while claiming the choice lock; step two
/// awaits the acknowledgement `M3 nq`, frees the channel and falls through
/// to the continuation. Wrong channel states retry; each step runs in
/// isolation.
pub fn recv() -> Term {
    let step1 = Term::isolated(Term::bind(
        Term::read(Term::var("l")),
        Term::lam(
            "b",
            bool_case(
                Term::var("b"),
                Term::ret(Term::bool(false)),
                Term::seq(
                    Term::app(choose_this(), Term::var("l")),
                    Term::bind(
                        Term::read(Term::var("c")),
                        Term::lam(
                            "m",
                            Term::case(
                                Term::var("m"),
                                vec![
                                    (
                                        Pattern::Con("M1".into(), vec!["nx".into()]),
                                        Term::seq(
                                            Term::write(
                                                Term::var("c"),
                                                Term::con(
                                                    "M2",
                                                    vec![Term::var("nx"), Term::var("nq")],
                                                ),
                                            ),
                                            Term::ret(Term::bool(true)),
                                        ),
                                    ),
                                    (Pattern::Wild, Term::Retry),
                                ],
                            ),
                        ),
                    ),
                ),
            ),
        ),
    ));
    let step2 = Term::isolated(Term::bind(
        Term::read(Term::var("c")),
        Term::lam(
            "m",
            Term::case(
                Term::var("m"),
                vec![
                    (
                        Pattern::Con("M3".into(), vec!["ny".into()]),
                        Term::seq(
                            Term::app2(eq_or_retry(), Term::var("ny"), Term::var("nq")),
                            Term::write(Term::var("c"), m0()),
                        ),
                    ),
                    (Pattern::Wild, Term::Retry),
                ],
            ),
        ),
    ));
    Term::lam(
        "c",
        Term::lam(
            "l",
            Term::lam(
                "p",
                Term::bind(
                    Term::NewNonce,
                    Term::lam(
                        "nq",
                        Term::bind(
                            step1,
                            Term::lam(
                                "w",
                                bool_case(
                                    Term::var("w"),
                                    Term::ret(Term::unit()),
                                    Term::seq(step2, Term::var("p")),
                                ),
                            ),
                        ),
                    ),
                ),
            ),
        ),
    )
}

/// `send c l p`: the offering half. Step one writes the nonce offer `M1 np`
/// on a free channel while claiming the choice lock; step two awaits the
/// answer `M2 np ny`, acknowledges with `M3 ny` and falls through to the
/// continuation.
pub fn send() -> Term {
    let step1 = Term::isolated(Term::bind(
        Term::read(Term::var("l")),
        Term::lam(
            "b",
            bool_case(
                Term::var("b"),
                Term::ret(Term::bool(false)),
                Term::seq(
                    Term::app(choose_this(), Term::var("l")),
                    Term::bind(
                        Term::read(Term::var("c")),
                        Term::lam(
                            "m",
                            Term::case(
                                Term::var("m"),
                                vec![
                                    (
                                        Pattern::Con("M0".into(), vec![]),
                                        Term::seq(
                                            Term::write(
                                                Term::var("c"),
                                                Term::con("M1", vec![Term::var("np")]),
                                            ),
                                            Term::ret(Term::bool(true)),
                                        ),
                                    ),
                                    (Pattern::Wild, Term::Retry),
                                ],
                            ),
                        ),
                    ),
                ),
            ),
        ),
    ));
    let step2 = Term::isolated(Term::bind(
        Term::read(Term::var("c")),
        Term::lam(
            "m",
            Term::case(
                Term::var("m"),
                vec![
                    (
                        Pattern::Con("M2".into(), vec!["nx".into(), "ny".into()]),
                        Term::seq(
                            Term::app2(eq_or_retry(), Term::var("nx"), Term::var("np")),
                            Term::write(Term::var("c"), Term::con("M3", vec![Term::var("ny")])),
                        ),
                    ),
                    (Pattern::Wild, Term::Retry),
                ],
            ),
        ),
    ));
    Term::lam(
        "c",
        Term::lam(
            "l",
            Term::lam(
                "p",
                Term::bind(
                    Term::NewNonce,
                    Term::lam(
                        "np",
                        Term::bind(
                            step1,
                            Term::lam(
                                "w",
                                bool_case(
                                    Term::var("w"),
                                    Term::ret(Term::unit()),
                                    Term::seq(step2, Term::var("p")),
                                ),
                            ),
                        ),
                    ),
                ),
            ),
        ),
    )
}

/// `psi co = do { l <- newVar true; recv co l (return ()) }`: drain one
/// commit synchronization on the given commit channel.
pub fn psi_drain(co: Term) -> Term {
    Term::bind(
        Term::new_var(Term::bool(true)),
        Term::lam(
            "_lk",
            Term::app3(recv(), co, Term::var("_lk"), Term::ret(Term::unit())),
        ),
    )
}

/// The named protocol terms, as a map for tooling and tests.
pub fn protocol_terms() -> BTreeMap<&'static str, Term> {
    let mut m = BTreeMap::new();
    m.insert("chooseThis", choose_this());
    m.insert("eqOrRetry", eq_or_retry());
    m.insert("tau", tau());
    m.insert("recv", recv());
    m.insert("send", send());
    m.insert("bang", bang());
    m.insert("psi", psi_drain(Term::var("co")));
    m
}

/// Per-branch encoding: receivers on the action's channel, senders on a
/// coaction's channel, `tau` for silent branches.
fn xi(action: &Action, lock: Term, cont: Term) -> Term {
    match action {
        Action::In(a) => Term::app3(recv(), Term::var(a.clone()), lock, cont),
        Action::Out(a) => Term::app3(send(), Term::var(a.clone()), lock, cont),
        Action::Tau => Term::app2(tau(), lock, cont),
    }
}

/// Chain `fork` statements into a do-block body.
fn fork_chain(mut items: Vec<Term>) -> Term {
    if items.is_empty() {
        return Term::ret(Term::unit());
    }
    let last = Term::fork(items.pop().unwrap());
    items
        .into_iter()
        .rev()
        .fold(last, |acc, item| Term::seq(Term::fork(item), acc))
}

/// Term-level encoding of commit-free-at-top-level processes. Channels
/// appear as free variables named after the channel; the enclosing
/// transaction's commit channel appears as the free variable `co`.
pub fn rho(p: &TccsProc) -> Result<Term, EncodeError> {
    match p {
        TccsProc::Sum(branches) => {
            if branches.is_empty() {
                return Ok(Term::ret(Term::unit()));
            }
            let mut forks = Vec::with_capacity(branches.len());
            for (action, cont) in branches {
                forks.push(xi(action, Term::var("_lk"), rho(cont)?));
            }
            Ok(Term::bind(
                Term::new_var(Term::bool(true)),
                Term::lam("_lk", fork_chain(forks)),
            ))
        }
        TccsProc::Par(ps) => {
            let mut forks = Vec::with_capacity(ps.len());
            for q in ps {
                forks.push(rho(q)?);
            }
            Ok(fork_chain(forks))
        }
        TccsProc::Restrict(q, l) => {
            let mut body = rho(q)?;
            for a in l.iter().rev() {
                body = Term::bind(Term::new_var(m0()), Term::Lam(a.clone(), Box::new(body)));
            }
            Ok(body)
        }
        TccsProc::Var(x) => Ok(Term::var(x.clone())),
        TccsProc::Rec(x, body) => Ok(Term::LetRec(
            x.clone(),
            Box::new(rho(body)?),
            Box::new(Term::var(x.clone())),
        )),
        TccsProc::Commit(q) => Ok(Term::bind(
            Term::new_var(Term::bool(true)),
            Term::lam(
                "_lk",
                Term::app3(send(), Term::var("co"), Term::var("_lk"), rho(q)?),
            ),
        )),
        TccsProc::Inactive(body, comp) => {
            // do { co <- newCoVar M0; atomic p (\_ -> rho comp); bang psi }
            // where p = do { rho body; fork (abort ()); psi }.
            let psi = psi_drain(Term::var("co"));
            let tx_body = Term::seq(
                rho(body)?,
                Term::seq(Term::fork(Term::abort(Term::unit())), psi.clone()),
            );
            Ok(Term::bind(
                Term::new_co_var(m0()),
                Term::lam(
                    "co",
                    Term::bind(
                        Term::atomic(tx_body, Term::lam("_", rho(comp)?)),
                        Term::lam("_", Term::app(bang(), psi)),
                    ),
                ),
            ))
        }
        TccsProc::Active(..) => Err(EncodeError::ActiveTxInTerm),
    }
}

/// State-level encoding. Builds threads for the top-level components:
/// commit-free components run their term encoding in a plain thread,
/// top-level restrictions allocate their channels privately, and running
/// transactions become a primary commit-collector, an always-ready-to-abort
/// secondary, and the body components as secondaries.
pub fn sigma_enc(p: &TccsProc, heap: BTreeMap<LocId, Term>) -> Result<MachineState, EncodeError> {
    well_formed(p)?;
    let mut state = MachineState::new();
    state.heap = heap;
    for r in state.heap.keys() {
        if r.0 >= state.next_loc {
            state.next_loc = r.0 + 1;
        }
    }
    let mut tx_names = BTreeMap::new();
    build(p, &mut state, &mut tx_names, None)?;
    Ok(state)
}

fn build(
    p: &TccsProc,
    state: &mut MachineState,
    tx_names: &mut BTreeMap<String, crate::state::TxId>,
    as_secondary_of: Option<crate::state::TxId>,
) -> Result<(), EncodeError> {
    for comp in p.components() {
        // The empty product contributes no thread.
        if comp.is_nil() {
            continue;
        }
        match comp {
            TccsProc::Active(name, body, comp_proc) => {
                let k = *tx_names
                    .entry(name.clone())
                    .or_insert_with(|| state.fresh_tx());
                let r_l = state.fresh_loc();
                let r_co = state.fresh_loc();
                // The collector's choice lock is claimed by the transaction
                // (a run of the inactive encoding allocates it inside the
                // transaction); the commit channel sits unclaimed in the
                // heap.
                state.working.insert(r_l, (Term::bool(true), k));
                state.heap.insert(r_co, m0());
                state.co_locs.insert(r_co);
                let t_co = state.fresh_thread();
                state.threads.insert(
                    t_co,
                    Thread::Primary {
                        term: Term::app3(
                            recv(),
                            Term::Loc(r_co),
                            Term::Loc(r_l),
                            Term::ret(Term::unit()),
                        ),
                        comp: Term::lam("_", rho(comp_proc)?),
                        cont: Term::lam("_", Term::app(bang(), psi_drain(Term::Loc(r_co)))),
                        tx: k,
                    },
                );
                let t_ab = state.fresh_thread();
                state.threads.insert(
                    t_ab,
                    Thread::Secondary {
                        term: Term::abort(Term::unit()),
                        comp: Term::return_eta(),
                        tx: k,
                    },
                );
                // Body components become secondaries of k, with the commit
                // channel substituted in.
                let before: Vec<crate::state::ThreadId> = state.threads.keys().copied().collect();
                build(body, state, tx_names, Some(k))?;
                let created: Vec<crate::state::ThreadId> = state
                    .threads
                    .keys()
                    .copied()
                    .filter(|t| !before.contains(t))
                    .collect();
                for t in created {
                    let th = state.threads[&t].clone();
                    let substituted = subst_thread_terms(&th, "co", &Term::Loc(r_co));
                    state.threads.insert(t, substituted);
                }
            }
            TccsProc::Restrict(inner, chans) => {
                let before: Vec<crate::state::ThreadId> = state.threads.keys().copied().collect();
                build(inner, state, tx_names, as_secondary_of)?;
                let created: Vec<crate::state::ThreadId> = state
                    .threads
                    .keys()
                    .copied()
                    .filter(|t| !before.contains(t))
                    .collect();
                for a in chans {
                    let r = state.fresh_loc();
                    state.heap.insert(r, m0());
                    for t in &created {
                        let th = state.threads[t].clone();
                        state
                            .threads
                            .insert(*t, subst_thread_terms(&th, a, &Term::Loc(r)));
                    }
                }
            }
            other => {
                let term = rho(other)?;
                let t = state.fresh_thread();
                let thread = match as_secondary_of {
                    None => Thread::Plain { term },
                    Some(k) => Thread::Secondary {
                        term,
                        comp: Term::return_eta(),
                        tx: k,
                    },
                };
                state.threads.insert(t, thread);
            }
        }
    }
    Ok(())
}

fn subst_thread_terms(th: &Thread, var: &str, value: &Term) -> Thread {
    match th {
        Thread::Plain { term } => Thread::Plain {
            term: substitute(term, var, value),
        },
        Thread::Primary {
            term,
            comp,
            cont,
            tx,
        } => Thread::Primary {
            term: substitute(term, var, value),
            comp: substitute(comp, var, value),
            cont: substitute(cont, var, value),
            tx: *tx,
        },
        Thread::Secondary { term, comp, tx } => Thread::Secondary {
            term: substitute(term, var, value),
            comp: substitute(comp, var, value),
            tx: *tx,
        },
    }
}

/// The top-level encoding: build the state, then allocate one heap location
/// per remaining free channel and substitute it everywhere.
pub fn eta(p: &TccsProc) -> Result<MachineState, EncodeError> {
    let mut state = sigma_enc(p, BTreeMap::new())?;
    let mut free = std::collections::BTreeSet::new();
    for th in state.threads.values() {
        match th {
            Thread::Plain { term } => free.extend(crate::syntax::free_vars(term)),
            Thread::Primary { term, comp, cont, .. } => {
                free.extend(crate::syntax::free_vars(term));
                free.extend(crate::syntax::free_vars(comp));
                free.extend(crate::syntax::free_vars(cont));
            }
            Thread::Secondary { term, comp, .. } => {
                free.extend(crate::syntax::free_vars(term));
                free.extend(crate::syntax::free_vars(comp));
            }
        }
    }
    for chan in free {
        let r = state.fresh_loc();
        state.heap.insert(r, m0());
        let tids: Vec<crate::state::ThreadId> = state.threads.keys().copied().collect();
        for t in tids {
            let th = state.threads[&t].clone();
            state
                .threads
                .insert(t, subst_thread_terms(&th, &chan, &Term::Loc(r)));
        }
    }
    Ok(state)
}

/// A single self-setup program equivalent to the state encoding, available
/// when the term has no running transactions: allocate every free channel,
/// then fork each component.
pub fn emit_term(p: &TccsProc) -> Result<Term, EncodeError> {
    well_formed(p)?;
    let mut forks = Vec::new();
    for comp in p.components() {
        forks.push(rho(comp)?);
    }
    let mut body = fork_chain(forks);
    let free = crate::syntax::free_vars(&body);
    for chan in free.iter().rev() {
        body = Term::bind(Term::new_var(m0()), Term::Lam(chan.clone(), Box::new(body)));
    }
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tccsm::parse_tccs;

    #[test]
    fn rho_of_nil_is_unit() {
        assert_eq!(
            rho(&TccsProc::nil()).unwrap(),
            Term::ret(Term::unit())
        );
    }

    #[test]
    fn rho_of_sum_allocates_lock_and_forks_branches() {
        let p = parse_tccs("tau.0 + a.0").unwrap();
        let t = rho(&p).unwrap();
        match t {
            Term::Bind(alloc, cont) => {
                assert_eq!(*alloc, Term::new_var(Term::bool(true)));
                match *cont {
                    Term::Lam(l, body) => {
                        assert_eq!(l, "_lk");
                        // two forks chained
                        let s = crate::syntax::pretty(&body);
                        assert_eq!(s.matches("fork").count(), 2, "{s}");
                    }
                    other => panic!("{other:?}"),
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rho_of_sender_uses_base_channel() {
        let p = parse_tccs("'a.0").unwrap();
        let t = rho(&p).unwrap();
        let s = crate::syntax::pretty(&t);
        assert!(crate::syntax::free_vars(&t).contains("a"), "{s}");
    }

    #[test]
    fn eta_of_nil_is_empty() {
        let s = eta(&TccsProc::nil()).unwrap();
        assert!(s.threads.is_empty());
        assert!(s.working.is_empty());
    }

    #[test]
    fn eta_allocates_free_channels() {
        let s = eta(&parse_tccs("a.0 | 'a.0").unwrap()).unwrap();
        assert_eq!(s.threads.len(), 2);
        assert_eq!(s.heap.len(), 1, "one location for the shared channel");
        assert_eq!(s.heap.values().next().unwrap(), &m0());
        assert!(s.working.is_empty());
    }

    #[test]
    fn sigma_active_tx_shape() {
        let s = eta(&parse_tccs("[[ co.0 >k> 0 ]]").unwrap()).unwrap();
        let mut primaries = 0;
        let mut secondaries = 0;
        for th in s.threads.values() {
            match th {
                Thread::Primary { .. } => primaries += 1,
                Thread::Secondary { .. } => secondaries += 1,
                Thread::Plain { .. } => panic!("no plain threads expected"),
            }
        }
        assert_eq!(primaries, 1, "the commit collector");
        assert_eq!(secondaries, 2, "the aborter and the body component");
        assert_eq!(s.co_locs.len(), 1);
        // Commit channel in the heap at M0; collector lock claimed by the
        // transaction.
        let co = *s.co_locs.iter().next().unwrap();
        assert_eq!(s.heap.get(&co), Some(&m0()));
        assert_eq!(s.working.len(), 1);
    }

    #[test]
    fn shared_tx_name_maps_to_one_machine_tx() {
        let s = eta(&parse_tccs("[[ co.0 >k> 0 ]] | [[ co.0 >k> 0 ]]").unwrap()).unwrap();
        let (_, txs) = s.names();
        assert_eq!(txs.len(), 1, "fused components share the machine transaction");
    }

    #[test]
    fn restriction_scopes_channels() {
        let s = eta(&parse_tccs("(a.0 | 'a.0) \\ {a} | b.0").unwrap()).unwrap();
        // Two locations: the restricted channel and the free channel b.
        assert_eq!(s.heap.len(), 2);
        assert_eq!(s.threads.len(), 3);
    }

    #[test]
    fn active_tx_cannot_be_a_term() {
        let p = parse_tccs("[[ a.co.0 >k> 0 ]]").unwrap();
        assert_eq!(rho(&p), Err(EncodeError::ActiveTxInTerm));
        assert_eq!(emit_term(&p), Err(EncodeError::ActiveTxInTerm));
    }

    #[test]
    fn emit_term_is_closed_and_parseable() {
        let p = parse_tccs("(a.0 + b.0) | 'a.0").unwrap();
        let t = emit_term(&p).unwrap();
        assert!(crate::syntax::free_vars(&t).is_empty(), "channels must be bound");
        let text = crate::syntax::pretty(&t);
        let back = crate::syntax::parse_program(&text)
            .unwrap_or_else(|e| panic!("emitted term must parse: {e}\n{text}"));
        assert!(crate::syntax::alpha_eq(&t, &back));
    }

    #[test]
    fn ill_formed_inputs_rejected() {
        let p = parse_tccs("co.0").unwrap();
        assert!(matches!(eta(&p), Err(EncodeError::NotWellFormed(_))));
    }
}
