use super::term::{CaseArm, Pattern, Term};
use std::collections::BTreeSet;

/// Free variables of a term.
pub fn free_vars(t: &Term) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect(t, &mut Vec::new(), &mut out);
    out
}

fn collect(t: &Term, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
    match t {
        Term::Var(x) => {
            if !bound.iter().any(|b| b == x) {
                out.insert(x.clone());
            }
        }
        Term::Loc(_) | Term::Lit(_) | Term::Retry | Term::NewNonce => {}
        Term::Lam(x, b) => {
            bound.push(x.clone());
            collect(b, bound, out);
            bound.pop();
        }
        Term::LetRec(x, bnd, body) => {
            bound.push(x.clone());
            collect(bnd, bound, out);
            collect(body, bound, out);
            bound.pop();
        }
        Term::App(a, b)
        | Term::Bind(a, b)
        | Term::WriteVar(a, b)
        | Term::Atomic(a, b)
        | Term::PrimEq(a, b)
        | Term::Arith(_, a, b) => {
            collect(a, bound, out);
            collect(b, bound, out);
        }
        Term::Return(m)
        | Term::ReadVar(m)
        | Term::Fork(m)
        | Term::Isolated(m)
        | Term::Abort(m)
        | Term::NewVar { init: m, .. } => collect(m, bound, out),
        Term::Con(_, args) => {
            for a in args {
                collect(a, bound, out);
            }
        }
        Term::Case(s, arms) => {
            collect(s, bound, out);
            for arm in arms {
                let vars: Vec<String> = match &arm.pattern {
                    Pattern::Con(_, vs) => vs.clone(),
                    Pattern::Var(v) => vec![v.clone()],
                    Pattern::Lit(_) | Pattern::Wild => vec![],
                };
                let n = vars.len();
                bound.extend(vars);
                collect(&arm.body, bound, out);
                for _ in 0..n {
                    bound.pop();
                }
            }
        }
    }
}

fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    let stem = base.trim_end_matches(|c: char| c.is_ascii_digit() || c == '\'');
    let stem = if stem.is_empty() { "x" } else { stem };
    for i in 0.. {
        let cand = format!("{stem}'{i}");
        if !avoid.contains(&cand) {
            return cand;
        }
    }
    unreachable!()
}

/// Capture-avoiding substitution of `value` for the free occurrences of
/// `var` in `body`. Binders shadow; binders whose name would capture a free
/// variable of `value` are renamed first.
pub fn substitute(body: &Term, var: &str, value: &Term) -> Term {
    let fv = free_vars(value);
    subst(body, var, value, &fv)
}

fn subst(t: &Term, var: &str, value: &Term, fv: &BTreeSet<String>) -> Term {
    match t {
        Term::Var(x) => {
            if x == var {
                value.clone()
            } else {
                t.clone()
            }
        }
        Term::Loc(_) | Term::Lit(_) | Term::Retry | Term::NewNonce => t.clone(),
        Term::Lam(x, b) => {
            if x == var {
                t.clone()
            } else if fv.contains(x) {
                let mut avoid = fv.clone();
                avoid.extend(free_vars(b));
                avoid.insert(var.to_string());
                let x2 = fresh_name(x, &avoid);
                let renamed = subst(b, x, &Term::Var(x2.clone()), &BTreeSet::new());
                Term::Lam(x2, Box::new(subst(&renamed, var, value, fv)))
            } else {
                Term::Lam(x.clone(), Box::new(subst(b, var, value, fv)))
            }
        }
        Term::LetRec(x, bnd, body) => {
            if x == var {
                t.clone()
            } else if fv.contains(x) {
                let mut avoid = fv.clone();
                avoid.extend(free_vars(bnd));
                avoid.extend(free_vars(body));
                avoid.insert(var.to_string());
                let x2 = fresh_name(x, &avoid);
                let rb = subst(bnd, x, &Term::Var(x2.clone()), &BTreeSet::new());
                let re = subst(body, x, &Term::Var(x2.clone()), &BTreeSet::new());
                Term::LetRec(
                    x2,
                    Box::new(subst(&rb, var, value, fv)),
                    Box::new(subst(&re, var, value, fv)),
                )
            } else {
                Term::LetRec(
                    x.clone(),
                    Box::new(subst(bnd, var, value, fv)),
                    Box::new(subst(body, var, value, fv)),
                )
            }
        }
        Term::App(a, b) => Term::App(
            Box::new(subst(a, var, value, fv)),
            Box::new(subst(b, var, value, fv)),
        ),
        Term::Bind(a, b) => Term::Bind(
            Box::new(subst(a, var, value, fv)),
            Box::new(subst(b, var, value, fv)),
        ),
        Term::WriteVar(a, b) => Term::WriteVar(
            Box::new(subst(a, var, value, fv)),
            Box::new(subst(b, var, value, fv)),
        ),
        Term::Atomic(a, b) => Term::Atomic(
            Box::new(subst(a, var, value, fv)),
            Box::new(subst(b, var, value, fv)),
        ),
        Term::PrimEq(a, b) => Term::PrimEq(
            Box::new(subst(a, var, value, fv)),
            Box::new(subst(b, var, value, fv)),
        ),
        Term::Arith(op, a, b) => Term::Arith(
            *op,
            Box::new(subst(a, var, value, fv)),
            Box::new(subst(b, var, value, fv)),
        ),
        Term::Return(m) => Term::Return(Box::new(subst(m, var, value, fv))),
        Term::ReadVar(m) => Term::ReadVar(Box::new(subst(m, var, value, fv))),
        Term::Fork(m) => Term::Fork(Box::new(subst(m, var, value, fv))),
        Term::Isolated(m) => Term::Isolated(Box::new(subst(m, var, value, fv))),
        Term::Abort(m) => Term::Abort(Box::new(subst(m, var, value, fv))),
        Term::NewVar { init, co } => Term::NewVar {
            init: Box::new(subst(init, var, value, fv)),
            co: *co,
        },
        Term::Con(tag, args) => Term::Con(
            tag.clone(),
            args.iter().map(|a| subst(a, var, value, fv)).collect(),
        ),
        Term::Case(s, arms) => {
            let s2 = subst(s, var, value, fv);
            let arms2 = arms
                .iter()
                .map(|arm| subst_arm(arm, var, value, fv))
                .collect();
            Term::Case(Box::new(s2), arms2)
        }
    }
}

fn subst_arm(arm: &CaseArm, var: &str, value: &Term, fv: &BTreeSet<String>) -> CaseArm {
    let binders: Vec<String> = match &arm.pattern {
        Pattern::Con(_, vs) => vs.clone(),
        Pattern::Var(v) => vec![v.clone()],
        Pattern::Lit(_) | Pattern::Wild => vec![],
    };
    if binders.iter().any(|b| b == var) {
        return arm.clone();
    }
    if binders.iter().any(|b| fv.contains(b)) {
        let mut avoid = fv.clone();
        avoid.extend(free_vars(&arm.body));
        avoid.insert(var.to_string());
        let mut body = arm.body.clone();
        let mut new_binders = Vec::with_capacity(binders.len());
        for b in &binders {
            if fv.contains(b) {
                let b2 = fresh_name(b, &avoid);
                avoid.insert(b2.clone());
                body = subst(&body, b, &Term::Var(b2.clone()), &BTreeSet::new());
                new_binders.push(b2);
            } else {
                new_binders.push(b.clone());
            }
        }
        let pattern = match &arm.pattern {
            Pattern::Con(tag, _) => Pattern::Con(tag.clone(), new_binders),
            Pattern::Var(_) => Pattern::Var(new_binders.pop().unwrap()),
            p => p.clone(),
        };
        CaseArm {
            pattern,
            body: subst(&body, var, value, fv),
        }
    } else {
        CaseArm {
            pattern: arm.pattern.clone(),
            body: subst(&arm.body, var, value, fv),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitute_free_var() {
        assert_eq!(
            substitute(&Term::var("x"), "x", &Term::int(1)),
            Term::int(1)
        );
    }

    #[test]
    fn substitute_shadowed() {
        let t = Term::lam("x", Term::var("x"));
        assert_eq!(substitute(&t, "x", &Term::int(1)), t);
    }

    #[test]
    fn substitute_capture_avoiding() {
        // (x (\y -> x))[x := y]  ==  y (\y' -> y)
        let t = Term::app(Term::var("x"), Term::lam("y", Term::var("x")));
        let got = substitute(&t, "x", &Term::var("y"));
        let want = Term::app(Term::var("y"), Term::lam("z", Term::var("y")));
        assert!(super::super::alpha_eq(&got, &want), "got {got:?}");
    }
}
