//! The term language: AST, concrete syntax, substitution and pure evaluation.

mod eval;
mod parse;
mod pretty;
mod subst;
mod term;

pub use eval::{
    decompose, pure_eval, pure_norm, recompose, term_step, EvalContext, OutOfFuel, PureOutcome,
    TermRule,
};
pub use parse::{parse_program, parse_term_with_locs, ParseError};
pub use pretty::pretty;
pub use subst::{free_vars, substitute};
pub use term::{alpha_eq, ArithOp, CaseArm, Lit, Pattern, Term};

/// Fuel bound for the pure evaluator. Pure reduction of well-behaved terms is
/// short; the bound exists to cut off divergent recursion like `let rec x = x`.
pub const PURE_FUEL: usize = 20_000;
