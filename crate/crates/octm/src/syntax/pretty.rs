use super::term::{ArithOp, Lit, Pattern, Term};
use std::fmt::Write;

/// Render a term as parseable source text. Round trip: parsing the output
/// yields an alpha-equivalent term.
pub fn pretty(t: &Term) -> String {
    let mut s = String::new();
    pp(t, 0, &mut s);
    s
}

/// Precedence levels: 0 term, 1 bind chain, 2 comparison, 3 additive,
/// 4 multiplicative, 5 application, 6 atom.
fn level(t: &Term) -> u8 {
    match t {
        Term::Lam(..) | Term::LetRec(..) | Term::Case(..) => 0,
        Term::Bind(..) => 1,
        Term::PrimEq(..) => 2,
        Term::Arith(ArithOp::Lt, ..) => 2,
        Term::Arith(ArithOp::Add, ..) | Term::Arith(ArithOp::Sub, ..) => 3,
        Term::Arith(ArithOp::Mul, ..) => 4,
        Term::App(..)
        | Term::Return(_)
        | Term::NewVar { .. }
        | Term::ReadVar(_)
        | Term::WriteVar(..)
        | Term::Fork(_)
        | Term::Atomic(..)
        | Term::Isolated(_)
        | Term::Abort(_) => 5,
        Term::Con(_, args) if !args.is_empty() && con_sugar(t).is_none() => 5,
        Term::Lit(Lit::Int(n)) if *n < 0 => 3,
        _ => 6,
    }
}

/// `Pair a b` renders as `(a, b)`.
fn con_sugar(t: &Term) -> Option<(&Term, &Term)> {
    if let Term::Con(tag, args) = t {
        if tag == "Pair" && args.len() == 2 {
            return Some((&args[0], &args[1]));
        }
    }
    None
}

fn pp(t: &Term, need: u8, out: &mut String) {
    let l = level(t);
    if l < need {
        out.push('(');
        raw(t, out);
        out.push(')');
    } else {
        raw(t, out);
    }
}

fn raw(t: &Term, out: &mut String) {
    match t {
        Term::Var(x) => out.push_str(x),
        Term::Loc(r) => {
            let _ = write!(out, "#{}", r.0);
        }
        Term::Lit(l) => {
            let _ = write!(out, "{l}");
        }
        Term::Lam(x, b) => {
            let _ = write!(out, "\\{x} -> ");
            pp(b, 0, out);
        }
        Term::App(f, a) => {
            pp(f, 5, out);
            out.push(' ');
            pp(a, 6, out);
        }
        Term::Return(m) => {
            out.push_str("return ");
            pp(m, 6, out);
        }
        Term::Bind(m, n) => {
            pp(m, 1, out);
            if let Term::Lam(x, body) = &**n {
                if x == "_" {
                    out.push_str(" >> ");
                    pp(body, 2, out);
                    return;
                }
            }
            out.push_str(" >>= ");
            pp(n, 2, out);
        }
        Term::NewVar { init, co } => {
            out.push_str(if *co { "newCoVar " } else { "newVar " });
            pp(init, 6, out);
        }
        Term::ReadVar(m) => {
            out.push_str("readVar ");
            pp(m, 6, out);
        }
        Term::WriteVar(l, v) => {
            out.push_str("writeVar ");
            pp(l, 6, out);
            out.push(' ');
            pp(v, 6, out);
        }
        Term::Fork(m) => {
            out.push_str("fork ");
            pp(m, 6, out);
        }
        Term::Atomic(m, n) => {
            out.push_str("atomic ");
            pp(m, 6, out);
            out.push(' ');
            pp(n, 6, out);
        }
        Term::Isolated(m) => {
            out.push_str("isolated ");
            pp(m, 6, out);
        }
        Term::Abort(m) => {
            out.push_str("abort ");
            pp(m, 6, out);
        }
        Term::Retry => out.push_str("retry"),
        Term::NewNonce => out.push_str("newNonce"),
        Term::Con(tag, args) => {
            if let Some((a, b)) = con_sugar(t) {
                out.push('(');
                pp(a, 0, out);
                out.push_str(", ");
                pp(b, 0, out);
                out.push(')');
                return;
            }
            out.push_str(tag);
            for a in args {
                out.push(' ');
                pp(a, 6, out);
            }
        }
        Term::Case(s, arms) => {
            out.push_str("case ");
            pp(s, 1, out);
            out.push_str(" of { ");
            for (i, arm) in arms.iter().enumerate() {
                if i > 0 {
                    out.push_str("; ");
                }
                pp_pattern(&arm.pattern, out);
                out.push_str(" -> ");
                pp(&arm.body, 0, out);
            }
            out.push_str(" }");
        }
        Term::PrimEq(a, b) => {
            pp(a, 3, out);
            out.push_str(" == ");
            pp(b, 3, out);
        }
        Term::Arith(op, a, b) => {
            let (sym, lp, rp) = match op {
                ArithOp::Add => (" + ", 3, 4),
                ArithOp::Sub => (" - ", 3, 4),
                ArithOp::Mul => (" * ", 4, 5),
                ArithOp::Lt => (" < ", 3, 3),
            };
            pp(a, lp, out);
            out.push_str(sym);
            pp(b, rp, out);
        }
        Term::LetRec(x, bound, body) => {
            let _ = write!(out, "let rec {x} = ");
            pp(bound, 0, out);
            out.push_str(" in ");
            pp(body, 0, out);
        }
    }
}

fn pp_pattern(p: &Pattern, out: &mut String) {
    match p {
        Pattern::Con(tag, vars) => {
            out.push_str(tag);
            for v in vars {
                out.push(' ');
                out.push_str(v);
            }
        }
        Pattern::Lit(l) => {
            let _ = write!(out, "{l}");
        }
        Pattern::Var(v) => out.push_str(v),
        Pattern::Wild => out.push('_'),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{alpha_eq, parse_program};
    use super::*;

    #[test]
    fn round_trip_simple() {
        for src in [
            "do { x <- newVar 0; readVar x }",
            "return ()",
            "\\x -> \\y -> writeVar x (y + 1)",
            "case M2 1 2 of { M2 x y -> return (x == y); _ -> retry }",
            "let rec bang = \\x -> fork x >> bang x in bang (return ())",
            "atomic (newVar 1) (\\e -> return e) >>= \\t -> return t",
            "if 1 < 2 then return (1, 2) else abort ()",
        ] {
            let t = parse_program(src).unwrap();
            let printed = pretty(&t);
            let back = parse_program(&printed)
                .unwrap_or_else(|e| panic!("reparse of `{printed}` failed: {e}"));
            assert!(alpha_eq(&t, &back), "`{src}` -> `{printed}`");
        }
    }
}
