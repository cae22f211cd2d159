use super::ast::TccsProc;
use std::collections::BTreeMap;
use thiserror::Error;

/// Simple types: `T` for terms that cannot occur inside a transaction,
/// `C` for terms that cannot occur outside one, `P` for unrestricted terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimpleType {
    T,
    C,
    P,
}

impl std::fmt::Display for SimpleType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimpleType::T => write!(f, "t"),
            SimpleType::C => write!(f, "c"),
            SimpleType::P => write!(f, "p"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("co outside transaction: `{0}`")]
    CoOutsideTx(String),
    #[error("active transaction not at top level: `{0}`")]
    ActiveNotTopLevel(String),
    #[error("unbound process variable `{0}`")]
    UnboundVar(String),
    #[error("compensation must be commit-free: `{0}`")]
    ImpureCompensation(String),
    #[error("recursion body of `{0}` is neither p- nor c-typed")]
    IllTypedRec(String),
}

/// The most permissive derivable judgment: `P` when possible, else `C` or
/// `T`. Subsumption lets a `P`-typed term stand wherever `C` or `T` is
/// required.
pub fn typecheck(
    p: &TccsProc,
    env: &BTreeMap<String, SimpleType>,
) -> Result<SimpleType, TypeError> {
    use SimpleType::*;
    match p {
        TccsProc::Sum(branches) => {
            let mut best = P;
            for (_, q) in branches {
                match typecheck(q, env)? {
                    P => {}
                    C => best = C,
                    T => return Err(TypeError::ActiveNotTopLevel(q.to_string())),
                }
            }
            Ok(best)
        }
        TccsProc::Par(ps) => {
            let mut has_c = false;
            let mut has_t = false;
            for q in ps {
                match typecheck(q, env)? {
                    P => {}
                    C => has_c = true,
                    T => has_t = true,
                }
            }
            match (has_c, has_t) {
                (false, false) => Ok(P),
                (true, false) => Ok(C),
                (false, true) => Ok(T),
                (true, true) => Err(TypeError::CoOutsideTx(p.to_string())),
            }
        }
        TccsProc::Restrict(q, _) => typecheck(q, env),
        TccsProc::Var(x) => env
            .get(x)
            .copied()
            .ok_or_else(|| TypeError::UnboundVar(x.clone())),
        TccsProc::Rec(x, body) => {
            let mut env_p = env.clone();
            env_p.insert(x.clone(), P);
            if let Ok(P) = typecheck(body, &env_p) {
                return Ok(P);
            }
            let mut env_c = env.clone();
            env_c.insert(x.clone(), C);
            match typecheck(body, &env_c) {
                Ok(C) | Ok(P) => Ok(C),
                Ok(T) => Err(TypeError::ActiveNotTopLevel(body.to_string())),
                Err(e) => match e {
                    TypeError::UnboundVar(_) => Err(e),
                    _ => Err(TypeError::IllTypedRec(x.clone())),
                },
            }
        }
        TccsProc::Inactive(body, comp) | TccsProc::Active(_, body, comp) => {
            match typecheck(body, env)? {
                C | P => {}
                T => return Err(TypeError::ActiveNotTopLevel(body.to_string())),
            }
            match typecheck(comp, env)? {
                P => {}
                _ => return Err(TypeError::ImpureCompensation(comp.to_string())),
            }
            Ok(match p {
                TccsProc::Inactive(..) => P,
                _ => T,
            })
        }
        TccsProc::Commit(q) => match typecheck(q, env)? {
            P => Ok(C),
            _ => Err(TypeError::CoOutsideTx(q.to_string())),
        },
    }
}

/// Well-formed terms are the ones typable as `t` in the empty environment
/// (directly, or via subsumption from `p`).
pub fn well_formed(p: &TccsProc) -> Result<(), TypeError> {
    match typecheck(p, &BTreeMap::new())? {
        SimpleType::T | SimpleType::P => Ok(()),
        SimpleType::C => Err(TypeError::CoOutsideTx(p.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_tccs;
    use super::*;

    fn ty(src: &str) -> Result<SimpleType, TypeError> {
        typecheck(&parse_tccs(src).unwrap(), &BTreeMap::new())
    }

    #[test]
    fn plain_prefix_is_p() {
        assert_eq!(ty("a.0").unwrap(), SimpleType::P);
    }

    #[test]
    fn top_level_co_is_ill_formed() {
        assert_eq!(ty("co.0").unwrap(), SimpleType::C);
        assert!(matches!(
            well_formed(&parse_tccs("co.0").unwrap()),
            Err(TypeError::CoOutsideTx(_))
        ));
    }

    #[test]
    fn active_tx_is_t() {
        assert_eq!(ty("[[ a.co.0 >k> 0 ]]").unwrap(), SimpleType::T);
        assert!(well_formed(&parse_tccs("[[ a.co.0 >k> 0 ]]").unwrap()).is_ok());
    }

    #[test]
    fn active_under_prefix_rejected() {
        assert!(ty("a.[[ b.0 >k> 0 ]]").is_err());
    }

    #[test]
    fn commitful_compensation_rejected() {
        assert!(matches!(
            ty("[[ a.0 , co.0 ]]"),
            Err(TypeError::ImpureCompensation(_))
        ));
    }

    #[test]
    fn recursion_types() {
        assert_eq!(ty("rec X. a.X").unwrap(), SimpleType::P);
        // A commit-carrying loop types as c when the variable stays outside
        // the commit prefix.
        assert_eq!(ty("[[ rec X. (a.co.0 + b.X) >k> 0 ]]").unwrap(), SimpleType::T);
        // Recursion through a commit prefix is untypeable: the variable
        // would need to be both c and p.
        assert!(ty("rec X. a.co.X").is_err());
    }
}
