use super::*;
use crate::state::{LocId, MachineState, Thread, ThreadId, TxId};
use crate::syntax::{parse_program, Term};

fn limits() -> Limits {
    Limits::default()
}

fn plain(state: &mut MachineState, term: Term) -> ThreadId {
    let t = state.fresh_thread();
    state.threads.insert(t, Thread::Plain { term });
    t
}

fn secondary(state: &mut MachineState, term: Term, tx: TxId) -> ThreadId {
    let t = state.fresh_thread();
    state.threads.insert(
        t,
        Thread::Secondary {
            term,
            comp: Term::return_eta(),
            tx,
        },
    );
    t
}

fn primary(state: &mut MachineState, term: Term, tx: TxId) -> ThreadId {
    let t = state.fresh_thread();
    state.threads.insert(
        t,
        Thread::Primary {
            term,
            comp: Term::return_eta(),
            cont: Term::return_eta(),
            tx,
        },
    );
    t
}

fn find(steps: &[EnabledStep], rule: Rule) -> &EnabledStep {
    steps
        .iter()
        .find(|s| s.rule == rule)
        .unwrap_or_else(|| panic!("no {rule} step in {:?}", steps.iter().map(|s| s.rule).collect::<Vec<_>>()))
}

#[test]
fn read_p_leaves_location_unclaimed() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(5));
    let t = plain(&mut s, Term::read(Term::Loc(r)));
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::ReadP);
    assert_eq!(step.thread, t);
    assert_eq!(step.successor.threads[&t].term(), &Term::ret(Term::int(5)));
    assert!(step.successor.working.is_empty());
}

#[test]
fn read_t_claims_location() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(5));
    let k = s.fresh_tx();
    let t = secondary(&mut s, Term::read(Term::Loc(r)), k);
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::ReadT);
    assert_eq!(step.successor.working.get(&r), Some(&(Term::int(5), k)));
    assert_eq!(step.successor.threads[&t].term(), &Term::ret(Term::int(5)));
}

#[test]
fn read_join_takes_whole_term_as_compensation() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(7), k));
    let whole = Term::bind(Term::read(Term::Loc(r)), Term::return_eta());
    let t = plain(&mut s, whole.clone());
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::ReadJoin);
    match &step.successor.threads[&t] {
        Thread::Secondary { term, comp, tx } => {
            assert_eq!(*tx, k);
            assert_eq!(
                term,
                &Term::bind(Term::ret(Term::int(7)), Term::return_eta())
            );
            assert_eq!(comp, &Term::lam("_", whole));
        }
        other => panic!("expected secondary, got {other:?}"),
    }
}

#[test]
fn read_merge_fuses_transactions() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    let j = s.fresh_tx();
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(1), j));
    let t = secondary(&mut s, Term::read(Term::Loc(r)), k);
    let other = secondary(&mut s, Term::ret(Term::unit()), k);
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::ReadMerge);
    assert_eq!(step.successor.threads[&t].tx(), Some(j));
    assert_eq!(step.successor.threads[&other].tx(), Some(j), "P[k -> j]");
}

#[test]
fn write_p_and_write_t() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(0));
    plain(&mut s, Term::write(Term::Loc(r), Term::int(9)));
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::WriteP);
    assert_eq!(step.successor.heap.get(&r), Some(&Term::int(9)));

    let mut s2 = MachineState::new();
    let r2 = s2.fresh_loc();
    s2.heap.insert(r2, Term::int(0));
    let k = s2.fresh_tx();
    secondary(&mut s2, Term::write(Term::Loc(r2), Term::int(9)), k);
    let steps2 = enabled_steps(&s2, &limits()).unwrap();
    let step2 = find(&steps2, Rule::WriteT);
    assert_eq!(step2.successor.heap.get(&r2), Some(&Term::int(0)));
    assert_eq!(step2.successor.working.get(&r2), Some(&(Term::int(9), k)));
}

#[test]
fn write_merge_reclaims_for_target_tx() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    let j = s.fresh_tx();
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(1), j));
    let t = secondary(&mut s, Term::write(Term::Loc(r), Term::int(9)), k);
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::WriteMerge);
    assert_eq!(step.successor.working.get(&r), Some(&(Term::int(9), j)));
    assert_eq!(step.successor.threads[&t].tx(), Some(j));
}

#[test]
fn write_join_turns_plain_into_participant() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(1), k));
    let t = plain(&mut s, Term::write(Term::Loc(r), Term::int(2)));
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::WriteJoin);
    assert_eq!(step.successor.threads[&t].tx(), Some(k));
    assert_eq!(step.successor.working.get(&r), Some(&(Term::int(2), k)));
}

#[test]
fn fork_inside_transaction_creates_secondary() {
    let mut s = MachineState::new();
    let k = s.fresh_tx();
    let body = Term::ret(Term::unit());
    let t = secondary(&mut s, Term::fork(body.clone()), k);
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::ForkT);
    let child = step
        .successor
        .threads
        .keys()
        .copied()
        .find(|c| *c != t)
        .unwrap();
    match &step.successor.threads[&child] {
        Thread::Secondary { term, comp, tx } => {
            assert_eq!(term, &body);
            assert_eq!(comp, &Term::return_eta());
            assert_eq!(*tx, k);
        }
        other => panic!("expected secondary child, got {other:?}"),
    }
    assert_eq!(
        step.successor.threads[&t].term(),
        &Term::ret(Term::Lit(crate::syntax::Lit::Tid(child)))
    );
}

#[test]
fn atomic_requires_bind_shape_and_creates_primary() {
    let mut s = MachineState::new();
    let body = Term::ret(Term::int(1));
    let comp = Term::return_eta();
    let cont = Term::lam("x", Term::ret(Term::var("x")));
    let t = plain(
        &mut s,
        Term::bind(Term::atomic(body.clone(), comp.clone()), cont.clone()),
    );
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::Atomic);
    assert!(matches!(step.label, StepLabel::NewTx(_)));
    match &step.successor.threads[&t] {
        Thread::Primary {
            term,
            comp: c,
            cont: n,
            ..
        } => {
            assert_eq!(term, &body);
            assert_eq!(c, &comp);
            assert_eq!(n, &cont);
        }
        other => panic!("expected primary, got {other:?}"),
    }
}

#[test]
fn bare_atomic_gets_identity_continuation() {
    let mut s = MachineState::new();
    plain(&mut s, Term::atomic(Term::ret(Term::int(1)), Term::return_eta()));
    let steps = enabled_steps(&s, &limits()).unwrap();
    assert_eq!(steps.len(), 1);
    assert_eq!(steps[0].rule, Rule::Atomic);
}

#[test]
fn nested_atomic_is_stuck() {
    let mut s = MachineState::new();
    let k = s.fresh_tx();
    secondary(
        &mut s,
        Term::bind(
            Term::atomic(Term::ret(Term::unit()), Term::return_eta()),
            Term::return_eta(),
        ),
        k,
    );
    let steps = enabled_steps(&s, &limits()).unwrap();
    assert!(steps.is_empty());
    let c = classify(&s, &limits()).unwrap();
    match c {
        Classification::Stuck { diagnostics } => {
            assert!(diagnostics[0].1.contains("nested atomic"), "{diagnostics:?}");
        }
        other => panic!("expected stuck, got {other:?}"),
    }
}

#[test]
fn commit_waits_for_all_primaries() {
    let mut s = MachineState::new();
    let k = s.fresh_tx();
    primary(&mut s, Term::ret(Term::int(3)), k);
    let t2 = primary(&mut s, Term::read(Term::Loc(LocId(99))), k);
    let steps = enabled_steps(&s, &limits()).unwrap();
    assert!(
        !steps.iter().any(|s| s.rule == Rule::CommitTx),
        "commit must wait for every primary to reach return"
    );
    // Once the second primary is also at return, commit fires once for k.
    let mut s2 = s.clone();
    s2.threads
        .insert(t2, s2.threads[&t2].with_term(Term::ret(Term::unit())));
    let steps2 = enabled_steps(&s2, &limits()).unwrap();
    let commits: Vec<_> = steps2.iter().filter(|s| s.rule == Rule::CommitTx).collect();
    assert_eq!(commits.len(), 1);
}

#[test]
fn commit_publishes_and_releases() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(0));
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(7), k));
    let cont = Term::lam("x", Term::ret(Term::var("x")));
    let t = s.fresh_thread();
    s.threads.insert(
        t,
        Thread::Primary {
            term: Term::ret(Term::int(3)),
            comp: Term::return_eta(),
            cont: cont.clone(),
            tx: k,
        },
    );
    let t2 = secondary(&mut s, Term::read(Term::Loc(r)), k);
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::CommitTx);
    assert_eq!(step.label, StepLabel::Commit(k));
    assert_eq!(step.successor.heap.get(&r), Some(&Term::int(7)));
    assert!(step.successor.working.is_empty());
    assert_eq!(
        step.successor.threads[&t],
        Thread::Plain {
            term: Term::bind(Term::ret(Term::int(3)), cont)
        }
    );
    assert!(matches!(
        step.successor.threads[&t2],
        Thread::Plain { .. }
    ));
}

#[test]
fn abort_broadcasts_compensations() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(1));
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(5), k));
    let comp1 = Term::lam("e", Term::ret(Term::var("e")));
    let cont1 = Term::lam("x", Term::ret(Term::var("x")));
    let t1 = s.fresh_thread();
    s.threads.insert(
        t1,
        Thread::Primary {
            term: Term::bind(Term::abort(Term::int(0)), Term::return_eta()),
            comp: comp1.clone(),
            cont: cont1.clone(),
            tx: k,
        },
    );
    let comp2 = Term::lam("e", Term::ret(Term::int(9)));
    let t2 = s.fresh_thread();
    s.threads.insert(
        t2,
        Thread::Secondary {
            term: Term::read(Term::Loc(r)),
            comp: comp2.clone(),
            tx: k,
        },
    );
    // First the abort bubbles up through the bind frame.
    let steps = enabled_steps(&s, &limits()).unwrap();
    let bubble = find(&steps, Rule::TermT(crate::syntax::TermRule::BindAbort));
    let s = bubble.successor.clone();
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::AbortTx);
    assert_eq!(step.label, StepLabel::Abort(k, Term::int(0)));
    assert!(step.successor.working.is_empty(), "claims of k are cleaned");
    assert_eq!(step.successor.heap.get(&r), Some(&Term::int(1)));
    assert_eq!(
        step.successor.threads[&t1],
        Thread::Plain {
            term: Term::bind(Term::app(comp1, Term::int(0)), cont1)
        }
    );
    assert_eq!(
        step.successor.threads[&t2],
        Thread::Plain {
            term: Term::app(comp2, Term::int(0))
        }
    );
    assert!(step.covers.contains(&"RaiseAbort1"));
    assert!(step.covers.contains(&"SigAbort2"));
    assert!(step.covers.contains(&"AbBroadcast"));
}

#[test]
fn abort_outside_transaction_has_no_rule() {
    let mut s = MachineState::new();
    plain(&mut s, Term::abort(Term::int(0)));
    let steps = enabled_steps(&s, &limits()).unwrap();
    assert!(steps.is_empty());
    match classify(&s, &limits()).unwrap() {
        Classification::Terminal { aborted } => assert_eq!(aborted.len(), 1),
        other => panic!("expected terminal-with-abort, got {other:?}"),
    }
}

#[test]
fn nonce_values_are_unique_per_thread() {
    let mut s = MachineState::new();
    // case a == b of { true -> return true; false -> return false }
    let body = Term::case(
        Term::PrimEq(Box::new(Term::var("a")), Box::new(Term::var("b"))),
        vec![
            (
                crate::syntax::Pattern::Lit(crate::syntax::Lit::Bool(true)),
                Term::ret(Term::bool(true)),
            ),
            (
                crate::syntax::Pattern::Lit(crate::syntax::Lit::Bool(false)),
                Term::ret(Term::bool(false)),
            ),
        ],
    );
    let t = plain(
        &mut s,
        Term::bind(
            Term::NewNonce,
            Term::lam("a", Term::bind(Term::NewNonce, Term::lam("b", body))),
        ),
    );
    let mut cur = s;
    for _ in 0..8 {
        let steps = enabled_steps(&cur, &limits()).unwrap();
        if steps.is_empty() {
            break;
        }
        cur = steps[0].successor.clone();
    }
    match &cur.threads[&t] {
        Thread::Plain { term } => {
            assert_eq!(
                term,
                &Term::ret(Term::bool(false)),
                "distinct nonces: {}",
                crate::syntax::pretty(term)
            );
        }
        _ => unreachable!(),
    }
}

#[test]
fn isolated_pure_read_macro_step() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(5));
    let t = plain(
        &mut s,
        Term::isolated(Term::bind(
            Term::read(Term::Loc(r)),
            Term::lam("v", Term::ret(Term::var("v"))),
        )),
    );
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::IsolatedP);
    assert_eq!(step.successor.threads[&t].term(), &Term::ret(Term::int(5)));
    assert_eq!(step.successor.heap, s.heap);
    assert!(step.successor.working.is_empty());
}

#[test]
fn isolated_protocol_step_writes_or_blocks() {
    // isolated do { v <- readVar r; case v of { M0 -> writeVar r (M1 x); _ -> retry } }
    let body = |r: LocId| {
        Term::bind(
            Term::read(Term::Loc(r)),
            Term::lam(
                "v",
                Term::case(
                    Term::var("v"),
                    vec![
                        (
                            crate::syntax::Pattern::Con("M0".into(), vec![]),
                            Term::write(Term::Loc(r), Term::con("M1", vec![Term::int(1)])),
                        ),
                        (crate::syntax::Pattern::Wild, Term::Retry),
                    ],
                ),
            ),
        )
    };
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::con("M0", vec![]));
    let t = plain(&mut s, Term::isolated(body(r)));
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::IsolatedP);
    assert_eq!(
        step.successor.heap.get(&r),
        Some(&Term::con("M1", vec![Term::int(1)]))
    );
    assert_eq!(step.successor.threads[&t].term(), &Term::ret(Term::unit()));

    // Channel in the wrong protocol state: every sub-schedule retries.
    let mut s2 = MachineState::new();
    let r2 = s2.fresh_loc();
    s2.heap
        .insert(r2, Term::con("M2", vec![Term::int(1), Term::int(2)]));
    plain(&mut s2, Term::isolated(body(r2)));
    let steps2 = enabled_steps(&s2, &limits()).unwrap();
    assert!(steps2.is_empty());
    assert!(matches!(
        classify(&s2, &limits()).unwrap(),
        Classification::Stuck { .. }
    ));
}

#[test]
fn isolated_join_converts_outer_thread() {
    // A plain thread reads a claimed location inside isolated: it comes out
    // a secondary of that transaction with the whole term as compensation.
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(7), k));
    let whole = Term::isolated(Term::bind(
        Term::read(Term::Loc(r)),
        Term::lam("v", Term::ret(Term::var("v"))),
    ));
    let t = plain(&mut s, whole.clone());
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::IsolatedP);
    assert!(step.inner.contains(&Rule::ReadJoin));
    match &step.successor.threads[&t] {
        Thread::Secondary { term, comp, tx } => {
            assert_eq!(*tx, k);
            assert_eq!(term, &Term::ret(Term::int(7)));
            assert_eq!(comp, &Term::lam("_", whole));
        }
        other => panic!("expected secondary, got {other:?}"),
    }
}

#[test]
fn isolated_merge_renames_outer_family() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    let j = s.fresh_tx();
    let k = s.fresh_tx();
    s.working.insert(r, (Term::int(7), j));
    let t = secondary(
        &mut s,
        Term::isolated(Term::bind(
            Term::read(Term::Loc(r)),
            Term::lam("v", Term::ret(Term::var("v"))),
        )),
        k,
    );
    let other = primary(&mut s, Term::read(Term::Loc(LocId(50))), k);
    let steps = enabled_steps(&s, &limits()).unwrap();
    let step = find(&steps, Rule::IsolatedT);
    assert!(step.inner.contains(&Rule::ReadMerge));
    assert_eq!(step.successor.threads[&t].tx(), Some(j));
    assert_eq!(
        step.successor.threads[&other].tx(),
        Some(j),
        "outer participants of k are renamed too"
    );
}

#[test]
fn isolated_forbids_fork() {
    let mut s = MachineState::new();
    plain(&mut s, Term::isolated(Term::fork(Term::ret(Term::unit()))));
    let steps = enabled_steps(&s, &limits()).unwrap();
    assert!(steps.is_empty());
}

#[test]
fn classify_examples() {
    let mut s = MachineState::new();
    plain(&mut s, Term::ret(Term::unit()));
    assert!(classify(&s, &limits()).unwrap().is_terminal());

    let mut s2 = MachineState::new();
    plain(&mut s2, parse_program("return 1 >>= \\x -> return x").unwrap());
    assert_eq!(classify(&s2, &limits()).unwrap(), Classification::Live);

    let mut s3 = MachineState::new();
    plain(&mut s3, Term::Retry);
    let c = classify(&s3, &limits()).unwrap();
    assert!(is_retry_dead_end(&c), "{c:?}");
}

#[test]
fn apply_step_rejects_stale_steps() {
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(5));
    plain(&mut s, Term::read(Term::Loc(r)));
    let steps = enabled_steps(&s, &limits()).unwrap();
    let other = s.heap_update(r, Term::int(6));
    assert_eq!(apply_step(&other, &steps[0]), Err(StepError::StaleStep));
    assert!(apply_step(&s, &steps[0]).is_ok());
}

#[test]
fn steps_are_certificates() {
    // Recomputing enabled steps from the same state reproduces successors.
    let mut s = MachineState::new();
    let r = s.fresh_loc();
    s.heap.insert(r, Term::int(5));
    plain(&mut s, Term::read(Term::Loc(r)));
    secondary(&mut s, Term::write(Term::Loc(r), Term::int(6)), TxId(9));
    let a = enabled_steps(&s, &limits()).unwrap();
    let b = enabled_steps(&s, &limits()).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.successor, y.successor);
        assert_eq!(x.rule, y.rule);
    }
}
