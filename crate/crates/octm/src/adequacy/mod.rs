//! Bounded star-simulation checking: every calculus reduction must be
//! matched by a machine run between encoded states (forward), and every
//! machine step out of an encoded state must be explainable by a calculus
//! reduction or be administrative (backward). Matching is up to transaction
//! equivalence; beta labels must agree in kind (commit with commit, abort
//! with abort) with transaction names taken up to the canonical renaming.

mod canonical;

pub use canonical::{canonical_lite, canonicalize, cong_t, fingerprint_lite, pure_normalize};

use crate::encoder::{eta, EncodeError};
use crate::semantics::{enabled_steps, EnabledStep, Limits, StepError};
use crate::state::{MachineState, StepLabel};
use crate::tccsm::{canonical_key, reductions, BetaLabel, ReductionKind, TccsProc};
use serde::Serialize;
use std::collections::{HashSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Machine-step budget when matching one calculus reduction.
    pub forward_depth: usize,
    /// Machine-step budget when explaining one machine step.
    pub backward_depth: usize,
    /// Cap on the explored calculus state space.
    pub max_tccs_states: usize,
    /// Cap on visited machine states per search.
    pub max_machine_states: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            forward_depth: 400,
            backward_depth: 40,
            max_tccs_states: 400,
            max_machine_states: 200_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum AdequacyError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Step(#[from] StepError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum EdgeStatus {
    Matched { machine_steps: usize },
    Failed { states_explored: usize },
    Inconclusive { states_explored: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeReport {
    pub source: String,
    pub reduction: String,
    pub target: String,
    pub status: EdgeStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimVerdict {
    pub condition: String,
    pub passed: bool,
    pub inconclusive: bool,
    pub reports: Vec<EdgeReport>,
    pub counterexample: Option<String>,
    /// Set when a search or the calculus-space walk hit a bound.
    pub bound_hit: bool,
}

impl SimVerdict {
    fn from_reports(condition: &str, reports: Vec<EdgeReport>, bound_hit: bool) -> SimVerdict {
        let failed: Vec<&EdgeReport> = reports
            .iter()
            .filter(|r| matches!(r.status, EdgeStatus::Failed { .. }))
            .collect();
        let inconclusive = reports
            .iter()
            .any(|r| matches!(r.status, EdgeStatus::Inconclusive { .. }));
        let counterexample = failed.first().map(|r| {
            format!(
                "reduction `{}` of `{}` has no matching machine run to `{}`",
                r.reduction, r.source, r.target
            )
        });
        SimVerdict {
            condition: condition.to_string(),
            passed: failed.is_empty() && !inconclusive,
            inconclusive: failed.is_empty() && inconclusive,
            reports,
            counterexample,
            bound_hit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BetaReq {
    None,
    New,
    Co,
    Ab,
}

fn beta_req(kind: &ReductionKind) -> BetaReq {
    match kind {
        ReductionKind::Tau | ReductionKind::TxTau(_) => BetaReq::None,
        ReductionKind::Beta(BetaLabel::New(_)) => BetaReq::New,
        ReductionKind::Beta(BetaLabel::Co(_)) => BetaReq::Co,
        ReductionKind::Beta(BetaLabel::Ab(_)) => BetaReq::Ab,
    }
}

fn label_beta(label: &StepLabel) -> Option<BetaReq> {
    match label {
        StepLabel::Internal => None,
        StepLabel::NewTx(_) => Some(BetaReq::New),
        StepLabel::Commit(_) => Some(BetaReq::Co),
        StepLabel::Abort(..) => Some(BetaReq::Ab),
    }
}

/// The calculus state space reachable from `p` (representatives modulo the
/// canonical key), with a flag saying whether the cap truncated it.
fn tccs_space(p: &TccsProc, cfg: &SimConfig) -> (Vec<TccsProc>, bool) {
    let mut seen: HashSet<String> = HashSet::new();
    let mut queue: VecDeque<TccsProc> = VecDeque::new();
    let mut out = Vec::new();
    let mut truncated = false;
    seen.insert(canonical_key(p));
    queue.push_back(p.clone());
    while let Some(cur) = queue.pop_front() {
        out.push(cur.clone());
        if out.len() >= cfg.max_tccs_states {
            truncated = true;
            break;
        }
        for (_, q) in reductions(&cur) {
            let key = canonical_key(&q);
            if seen.insert(key) {
                queue.push_back(q);
            }
        }
    }
    (out, truncated)
}

enum SearchResult {
    Matched { steps: usize },
    Exhausted { explored: usize },
    BoundHit { explored: usize },
}

/// Bounded search for a machine run from `start` to a state whose
/// transaction-equivalence class is `target`, with the beta discipline
/// demanded by `req`: no beta steps at all, or exactly one of the right
/// kind.
fn search_match(
    start: Vec<(MachineState, bool)>,
    req: BetaReq,
    target: &MachineState,
    depth: usize,
    cfg: &SimConfig,
    limits: &Limits,
) -> SearchResult {
    let target_render = target.render();
    let mut seen: HashSet<(u64, bool)> = HashSet::new();
    let mut queue: VecDeque<(MachineState, bool, usize)> = VecDeque::new();
    let mut explored = 0usize;
    let mut bound_hit = false;
    for (s, b) in start {
        let s = canonical::pure_normalize(&s);
        let fp = fingerprint_lite(&s);
        if seen.insert((fp, b)) {
            queue.push_back((s, b, 0));
        }
    }
    while let Some((state, got_beta, d)) = queue.pop_front() {
        explored += 1;
        if explored > cfg.max_machine_states {
            return SearchResult::BoundHit { explored };
        }
        let complete = match req {
            BetaReq::None => !got_beta,
            _ => got_beta,
        };
        if complete && canonicalize(&state).render() == target_render {
            return SearchResult::Matched { steps: d };
        }
        if d >= depth {
            bound_hit = true;
            continue;
        }
        let steps = match enabled_steps(&state, limits) {
            Ok(s) => s,
            Err(_) => continue,
        };
        for step in steps {
            let next_beta = match label_beta(&step.label) {
                None => got_beta,
                Some(b) => {
                    if got_beta || req == BetaReq::None || b != req {
                        continue;
                    }
                    true
                }
            };
            let succ = canonical::pure_normalize(&step.successor);
            let fp = fingerprint_lite(&succ);
            if seen.insert((fp, next_beta)) {
                queue.push_back((succ, next_beta, d + 1));
            }
        }
    }
    if bound_hit {
        SearchResult::BoundHit { explored }
    } else {
        SearchResult::Exhausted { explored }
    }
}

/// Conditions 1 and 2: every calculus reduction reachable within bounds is
/// matched by a machine run between the encoded states, with agreeing beta
/// labels.
pub fn check_forward(p: &TccsProc, cfg: &SimConfig) -> Result<SimVerdict, AdequacyError> {
    let limits = Limits::default();
    let (space, truncated) = tccs_space(p, cfg);
    let mut reports = Vec::new();
    let mut bound_hit = truncated;
    for source in &space {
        let source_state = eta(source)?;
        for (kind, q) in reductions(source) {
            let target = canonicalize(&eta(&q)?);
            let req = beta_req(&kind);
            let res = search_match(
                vec![(source_state.clone(), false)],
                req,
                &target,
                cfg.forward_depth,
                cfg,
                &limits,
            );
            let status = match res {
                SearchResult::Matched { steps } => EdgeStatus::Matched {
                    machine_steps: steps,
                },
                SearchResult::Exhausted { explored } => EdgeStatus::Failed {
                    states_explored: explored,
                },
                SearchResult::BoundHit { explored } => {
                    bound_hit = true;
                    EdgeStatus::Inconclusive {
                        states_explored: explored,
                    }
                }
            };
            reports.push(EdgeReport {
                source: source.to_string(),
                reduction: kind.to_string(),
                target: q.to_string(),
                status,
            });
        }
    }
    Ok(SimVerdict::from_reports("forward", reports, bound_hit))
}

/// Condition 3: every machine step out of an encoded state extends to a run
/// explained by some calculus reduction (or returns to the source class,
/// when the step was administrative).
pub fn check_backward(p: &TccsProc, cfg: &SimConfig) -> Result<SimVerdict, AdequacyError> {
    let limits = Limits::default();
    let (space, truncated) = tccs_space(p, cfg);
    let mut reports = Vec::new();
    let mut bound_hit = truncated;
    for source in &space {
        let source_state = eta(source)?;
        let edges = reductions(source);
        let first_steps = enabled_steps(&source_state, &limits)?;
        for step in first_steps {
            let (status, explored) =
                explain_step(&source_state, &step, &edges, cfg, &limits)?;
            let matched = status;
            reports.push(EdgeReport {
                source: source.to_string(),
                reduction: format!("machine step {} by {}", step.rule, step.thread),
                target: String::new(),
                status: if let Some(steps) = matched {
                    EdgeStatus::Matched {
                        machine_steps: steps,
                    }
                } else if explored.1 {
                    bound_hit = true;
                    EdgeStatus::Inconclusive {
                        states_explored: explored.0,
                    }
                } else {
                    EdgeStatus::Failed {
                        states_explored: explored.0,
                    }
                },
            });
        }
    }
    let mut verdict = SimVerdict::from_reports("backward", reports, bound_hit);
    if let Some(first) = verdict
        .reports
        .iter()
        .find(|r| matches!(r.status, EdgeStatus::Failed { .. }))
    {
        verdict.counterexample = Some(format!(
            "{} from `{}` extends to no calculus reduction",
            first.reduction, first.source
        ));
    }
    Ok(verdict)
}

/// Try to explain one first step: an administrative return to the source
/// class, or a continuation matching one of the source's reductions.
fn explain_step(
    source_state: &MachineState,
    step: &EnabledStep,
    edges: &[(ReductionKind, TccsProc)],
    cfg: &SimConfig,
    limits: &Limits,
) -> Result<(Option<usize>, (usize, bool)), AdequacyError> {
    let step_beta = label_beta(&step.label);
    let mut total_explored = 0usize;
    let mut any_bound = false;

    // Administrative: the step's successor can run back into the source's
    // equivalence class without any beta.
    if step_beta.is_none() {
        let target = canonicalize(source_state);
        match search_match(
            vec![(step.successor.clone(), false)],
            BetaReq::None,
            &target,
            cfg.backward_depth,
            cfg,
            limits,
        ) {
            SearchResult::Matched { steps } => return Ok((Some(steps + 1), (0, false))),
            SearchResult::Exhausted { explored } => total_explored += explored,
            SearchResult::BoundHit { explored } => {
                total_explored += explored;
                any_bound = true;
            }
        }
    }

    for (kind, q) in edges {
        let req = beta_req(kind);
        let seen0 = match (step_beta, req) {
            (None, _) => false,
            (Some(b), r) if b == r => true,
            _ => continue,
        };
        let target = canonicalize(&eta(q)?);
        match search_match(
            vec![(step.successor.clone(), seen0)],
            req,
            &target,
            cfg.backward_depth,
            cfg,
            limits,
        ) {
            SearchResult::Matched { steps } => return Ok((Some(steps + 1), (0, false))),
            SearchResult::Exhausted { explored } => total_explored += explored,
            SearchResult::BoundHit { explored } => {
                total_explored += explored;
                any_bound = true;
            }
        }
    }
    Ok((None, (total_explored, any_bound)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tccsm::parse_tccs;

    fn small_cfg() -> SimConfig {
        SimConfig {
            forward_depth: 120,
            backward_depth: 40,
            max_tccs_states: 100,
            max_machine_states: 60_000,
        }
    }

    #[test]
    fn forward_plain_sync() {
        let p = parse_tccs("a.0 | 'a.0").unwrap();
        let v = check_forward(&p, &small_cfg()).unwrap();
        assert!(v.passed, "{:#?}", v.reports);
    }

    #[test]
    fn backward_plain_sync() {
        let p = parse_tccs("a.0 | 'a.0").unwrap();
        let v = check_backward(&p, &small_cfg()).unwrap();
        assert!(v.passed, "{:#?}", v.reports);
    }

    #[test]
    fn forward_abort_matches() {
        let p = parse_tccs("[[ a.co.0 >k> b.0 ]]").unwrap();
        let v = check_forward(&p, &small_cfg()).unwrap();
        assert!(v.passed, "{:#?}", v.reports);
    }
}
