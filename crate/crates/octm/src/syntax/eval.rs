use super::subst::substitute;
use super::term::{ArithOp, Lit, Pattern, Term};
use thiserror::Error;

/// Evaluation contexts `E ::= [.] | E >>= M`. The hole sits under a stack of
/// bind frames; the innermost frame is the one consumed by the bind rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalContext {
    Hole,
    /// `Frame(c, n)` is the context `c >>= n`.
    Frame(Box<EvalContext>, Term),
}

/// Unique decomposition `m = E[redex]` with the redex not itself a bind.
pub fn decompose(m: &Term) -> (EvalContext, Term) {
    match m {
        Term::Bind(a, b) => {
            let (ctx, redex) = decompose(a);
            (EvalContext::Frame(Box::new(ctx), (**b).clone()), redex)
        }
        other => (EvalContext::Hole, other.clone()),
    }
}

pub fn recompose(ctx: &EvalContext, redex: Term) -> Term {
    match ctx {
        EvalContext::Hole => redex,
        EvalContext::Frame(c, n) => Term::bind(recompose(c, redex), n.clone()),
    }
}

/// Split off the innermost frame: `E >>= n` around the hole.
fn split_innermost(ctx: &EvalContext) -> Option<(EvalContext, Term)> {
    match ctx {
        EvalContext::Hole => None,
        EvalContext::Frame(c, n) => match &**c {
            EvalContext::Hole => Some((EvalContext::Hole, n.clone())),
            _ => {
                let (rest, inner) = split_innermost(c)?;
                Some((EvalContext::Frame(Box::new(rest), n.clone()), inner))
            }
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PureOutcome {
    Value(Term),
    /// Neither a value nor reducible (open variable, failed case match,
    /// application of a non-function, primitive on bad operands).
    Stuck(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("pure evaluation fuel exhausted (possible divergence)")]
pub struct OutOfFuel;

/// The pure value function. Deterministic call-by-value, left-to-right.
/// Monadic combinators are values and are never reduced here.
pub fn pure_eval(m: &Term, fuel: usize) -> Result<PureOutcome, OutOfFuel> {
    let mut fuel = fuel;
    eval(m, &mut fuel)
}

/// Tail positions (application bodies, selected case branches, recursion
/// unfoldings) iterate instead of recursing, so fuel-bounded unfolding can
/// not overflow the call stack.
fn eval(t: &Term, fuel: &mut usize) -> Result<PureOutcome, OutOfFuel> {
    let mut cur = t.clone();
    loop {
        match eval_step(&cur, fuel)? {
            Tail::Done(out) => return Ok(out),
            Tail::Continue(next) => cur = next,
        }
    }
}

enum Tail {
    Done(PureOutcome),
    Continue(Term),
}

fn eval_step(t: &Term, fuel: &mut usize) -> Result<Tail, OutOfFuel> {
    if *fuel == 0 {
        return Err(OutOfFuel);
    }
    *fuel -= 1;
    use PureOutcome::*;
    let out = match t {
        Term::Var(x) => Stuck(format!("unbound variable `{x}`")),
        Term::Loc(_) | Term::Lit(_) | Term::Lam(..) | Term::Retry | Term::NewNonce => {
            Value(t.clone())
        }
        Term::Return(_)
        | Term::Bind(..)
        | Term::Fork(_)
        | Term::Atomic(..)
        | Term::Isolated(_)
        | Term::Abort(_)
        | Term::NewVar { .. } => Value(t.clone()),
        Term::ReadVar(m) => match eval(m, fuel)? {
            Value(v) => Value(Term::ReadVar(Box::new(v))),
            stuck => stuck,
        },
        Term::WriteVar(l, p) => match eval(l, fuel)? {
            Value(v) => Value(Term::WriteVar(Box::new(v), p.clone())),
            stuck => stuck,
        },
        Term::App(f, a) => {
            let vf = match eval(f, fuel)? {
                Value(v) => v,
                stuck => return Ok(Tail::Done(stuck)),
            };
            let va = match eval(a, fuel)? {
                Value(v) => v,
                stuck => return Ok(Tail::Done(stuck)),
            };
            match vf {
                Term::Lam(x, body) => {
                    return Ok(Tail::Continue(substitute(&body, &x, &va)))
                }
                other => Stuck(format!("application of non-function `{}`", super::pretty(&other))),
            }
        }
        Term::Con(tag, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                match eval(a, fuel)? {
                    Value(v) => vals.push(v),
                    stuck => return Ok(Tail::Done(stuck)),
                }
            }
            Value(Term::Con(tag.clone(), vals))
        }
        Term::Case(s, arms) => {
            let vs = match eval(s, fuel)? {
                Value(v) => v,
                stuck => return Ok(Tail::Done(stuck)),
            };
            for arm in arms {
                match &arm.pattern {
                    Pattern::Con(tag, vars) => {
                        if let Term::Con(t2, args) = &vs {
                            if t2 == tag && args.len() == vars.len() {
                                let mut body = arm.body.clone();
                                for (v, a) in vars.iter().zip(args) {
                                    body = substitute(&body, v, a);
                                }
                                return Ok(Tail::Continue(body));
                            }
                        }
                    }
                    Pattern::Lit(l) => {
                        if vs == Term::Lit(l.clone()) {
                            return Ok(Tail::Continue(arm.body.clone()));
                        }
                    }
                    Pattern::Var(v) => {
                        return Ok(Tail::Continue(substitute(&arm.body, v, &vs)));
                    }
                    Pattern::Wild => return Ok(Tail::Continue(arm.body.clone())),
                }
            }
            Stuck(format!("no case branch matches `{}`", super::pretty(&vs)))
        }
        Term::PrimEq(a, b) => {
            let va = match eval(a, fuel)? {
                Value(v) => v,
                stuck => return Ok(Tail::Done(stuck)),
            };
            let vb = match eval(b, fuel)? {
                Value(v) => v,
                stuck => return Ok(Tail::Done(stuck)),
            };
            match value_eq(&va, &vb) {
                Some(r) => Value(Term::bool(r)),
                None => Stuck("equality on incomparable values".into()),
            }
        }
        Term::Arith(op, a, b) => {
            let va = match eval(a, fuel)? {
                Value(v) => v,
                stuck => return Ok(Tail::Done(stuck)),
            };
            let vb = match eval(b, fuel)? {
                Value(v) => v,
                stuck => return Ok(Tail::Done(stuck)),
            };
            match (va, vb) {
                (Term::Lit(Lit::Int(x)), Term::Lit(Lit::Int(y))) => match op {
                    ArithOp::Add => Value(Term::int(x.wrapping_add(y))),
                    ArithOp::Sub => Value(Term::int(x.wrapping_sub(y))),
                    ArithOp::Mul => Value(Term::int(x.wrapping_mul(y))),
                    ArithOp::Lt => Value(Term::bool(x < y)),
                },
                _ => Stuck("arithmetic on non-integers".into()),
            }
        }
        Term::LetRec(x, bound, body) => {
            let knot = Term::LetRec(x.clone(), bound.clone(), Box::new(Term::Var(x.clone())));
            if **body == Term::Var(x.clone()) {
                // The knot itself: forcing it unfolds the bound term once.
                return Ok(Tail::Continue(substitute(bound, x, &knot)));
            }
            return Ok(Tail::Continue(substitute(body, x, &knot)));
        }
    };
    Ok(Tail::Done(out))
}

/// Structural equality on values; `None` when the comparison is not
/// meaningful (functions, actions).
fn value_eq(a: &Term, b: &Term) -> Option<bool> {
    match (a, b) {
        (Term::Lit(x), Term::Lit(y)) => Some(x == y),
        (Term::Loc(x), Term::Loc(y)) => Some(x == y),
        (Term::Con(t1, a1), Term::Con(t2, a2)) => {
            if t1 != t2 || a1.len() != a2.len() {
                return Some(false);
            }
            for (x, y) in a1.iter().zip(a2) {
                match value_eq(x, y)? {
                    true => continue,
                    false => return Some(false),
                }
            }
            Some(true)
        }
        (Term::Lit(_), Term::Con(..)) | (Term::Con(..), Term::Lit(_)) => Some(false),
        _ => None,
    }
}

/// Names of the term-level reduction rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TermRule {
    Eval,
    BindReturn,
    BindRetry,
    BindAbort,
}

impl TermRule {
    pub fn name(self) -> &'static str {
        match self {
            TermRule::Eval => "Eval",
            TermRule::BindReturn => "BindReturn",
            TermRule::BindRetry => "BindRetry",
            TermRule::BindAbort => "BindAbort",
        }
    }
}

/// One step of the term-level relation: either the redex is pure-reducible,
/// or a bind frame consumes a `return`/`retry`/`abort` head.
pub fn term_step(m: &Term, fuel: usize) -> Result<Option<(TermRule, Term)>, OutOfFuel> {
    let (ctx, redex) = decompose(m);
    if !redex.is_value() {
        return match pure_eval(&redex, fuel)? {
            PureOutcome::Value(v) => Ok(Some((TermRule::Eval, recompose(&ctx, v)))),
            PureOutcome::Stuck(_) => Ok(None),
        };
    }
    if let Some((rest, n)) = split_innermost(&ctx) {
        let step = match redex {
            Term::Return(v) => Some((
                TermRule::BindReturn,
                recompose(&rest, Term::app(n, *v)),
            )),
            Term::Retry => Some((TermRule::BindRetry, recompose(&rest, Term::Retry))),
            Term::Abort(v) => Some((
                TermRule::BindAbort,
                recompose(&rest, Term::Abort(v)),
            )),
            _ => None,
        };
        return Ok(step);
    }
    Ok(None)
}

/// Run term-level steps to a fixpoint. Returns the final term and whether
/// normalization completed within fuel.
pub fn pure_norm(m: &Term, fuel: usize) -> (Term, bool) {
    let mut cur = m.clone();
    let mut budget = fuel;
    loop {
        if budget == 0 {
            return (cur, false);
        }
        budget -= 1;
        match term_step(&cur, budget.max(1)) {
            Ok(Some((_, next))) => cur = next,
            Ok(None) => return (cur, true),
            Err(OutOfFuel) => return (cur, false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ThreadId;

    #[test]
    fn beta_reduction() {
        let t = Term::app(Term::lam("x", Term::var("x")), Term::int(42));
        assert_eq!(
            pure_eval(&t, 100).unwrap(),
            PureOutcome::Value(Term::int(42))
        );
    }

    #[test]
    fn monadic_head_is_value() {
        let t = Term::read(Term::Loc(crate::state::LocId(3)));
        assert_eq!(pure_eval(&t, 100).unwrap(), PureOutcome::Value(t.clone()));
        assert!(t.is_value());
    }

    #[test]
    fn case_selects_constructor_branch() {
        // case (M1 n) of { M1 p -> return p ; _ -> retry }
        let n = Term::Lit(Lit::Nonce(ThreadId(1), 0));
        let t = Term::case(
            Term::con("M1", vec![n.clone()]),
            vec![
                (
                    Pattern::Con("M1".into(), vec!["p".into()]),
                    Term::ret(Term::var("p")),
                ),
                (Pattern::Wild, Term::Retry),
            ],
        );
        assert_eq!(
            pure_eval(&t, 100).unwrap(),
            PureOutcome::Value(Term::ret(n))
        );
    }

    #[test]
    fn case_no_match_is_stuck() {
        let t = Term::case(
            Term::con("M0", vec![]),
            vec![(Pattern::Con("M1".into(), vec!["p".into()]), Term::Retry)],
        );
        assert!(matches!(
            pure_eval(&t, 100).unwrap(),
            PureOutcome::Stuck(_)
        ));
    }

    #[test]
    fn decompose_left_nested_bind() {
        // (return 1 >>= f) >>= g
        let m = Term::bind(
            Term::bind(Term::ret(Term::int(1)), Term::var("f")),
            Term::var("g"),
        );
        let (ctx, redex) = decompose(&m);
        assert_eq!(redex, Term::ret(Term::int(1)));
        assert_eq!(recompose(&ctx, redex), m);
    }

    #[test]
    fn bind_retry_consumes_frame() {
        let m = Term::bind(Term::Retry, Term::var("f"));
        let (rule, next) = term_step(&m, 100).unwrap().unwrap();
        assert_eq!(rule, TermRule::BindRetry);
        assert_eq!(next, Term::Retry);
    }

    #[test]
    fn bind_return_applies_continuation() {
        let m = Term::bind(Term::ret(Term::int(1)), Term::lam("x", Term::ret(Term::var("x"))));
        let (rule, next) = term_step(&m, 100).unwrap().unwrap();
        assert_eq!(rule, TermRule::BindReturn);
        let (rule2, next2) = term_step(&next, 100).unwrap().unwrap();
        assert_eq!(rule2, TermRule::Eval);
        assert_eq!(next2, Term::ret(Term::int(1)));
    }

    #[test]
    fn letrec_unfolds_when_forced() {
        // let rec f = \x -> x in f 7
        let t = Term::LetRec(
            "f".into(),
            Box::new(Term::lam("x", Term::var("x"))),
            Box::new(Term::app(Term::var("f"), Term::int(7))),
        );
        assert_eq!(
            pure_eval(&t, 1000).unwrap(),
            PureOutcome::Value(Term::int(7))
        );
    }

    #[test]
    fn letrec_divergence_exhausts_fuel() {
        let t = Term::LetRec(
            "x".into(),
            Box::new(Term::Var("x".into())),
            Box::new(Term::Var("x".into())),
        );
        assert_eq!(pure_eval(&t, 1000), Err(OutOfFuel));
    }
}
