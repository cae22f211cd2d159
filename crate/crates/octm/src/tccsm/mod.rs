//! A CCS-like calculus with inactive/active transactions, commit prefixes
//! and communication-driven transaction fusion: AST, simple types
//! (well-formedness), concrete syntax and the labelled transition system.

mod ast;
mod lts;
mod parse;
mod types;

pub use ast::{Action, TccsProc};
pub use lts::{
    canonical_key, lts_steps, psi, reductions, rename_tx_in_proc, subst_proc_var, tn, tn_beta,
    BetaLabel, ReductionKind, Renaming, TccsLabel,
};
pub use parse::{parse_tccs, TccsParseError};
pub use types::{typecheck, well_formed, SimpleType, TypeError};
