//! An abstract machine for a Haskell-like language with *open* multi-thread
//! memory transactions, plus the tooling built on top of it:
//!
//! - [`syntax`]: the term language, its text format, substitution and the
//!   deterministic pure evaluator;
//! - [`state`]: machine states `<heap, working memory; threads>` and the
//!   algebraic operations on them (claiming, renaming, clean, commit);
//! - [`semantics`]: the step relation (per-thread execution, isolated
//!   macro-steps, distributed commit and abort);
//! - [`explorer`]: seeded-random runs and bounded-exhaustive exploration of
//!   the schedule space, with replayable traces;
//! - [`tccsm`]: a CCS-like calculus with transactions (AST, simple types,
//!   labelled transition system);
//! - [`encoder`]: the translation from calculus terms to machine states;
//! - [`adequacy`]: state canonicalization, transaction equivalence and the
//!   bounded star-simulation checker validating the encoding;
//! - [`examples`]: the bundled corpus of `.octm` / `.tccs` files.

pub mod adequacy;
pub mod encoder;
pub mod examples;
pub mod explorer;
pub mod semantics;
pub mod state;
pub mod syntax;
pub mod tccsm;

pub use state::{LocId, MachineState, StepLabel, Thread, ThreadId, TxId};
pub use syntax::{Lit, Pattern, Term};
