//! Schedule search over the nondeterministic step relation: seeded random
//! runs with backtracking over retry dead ends, bounded-exhaustive
//! exploration memoized on canonical states, and reachability queries with
//! replayable witness traces.

use crate::adequacy::{fingerprint_lite, pure_normalize};
use crate::semantics::{
    classify, enabled_steps, is_retry_dead_end, Classification, Limits, Rule, StepError,
};
use crate::state::{MachineState, StepLabel, ThreadId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Random,
    Exhaustive,
}

#[derive(Debug, Clone, Copy)]
pub struct ExploreConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Maximum steps per path.
    pub max_steps: usize,
    /// Maximum distinct canonical states (exhaustive mode).
    pub max_states: usize,
    /// Round-robin tie breaking in random mode.
    pub fair_rr: bool,
    /// Collapse deterministic term-level steps after every applied step.
    pub normalize: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            mode: Mode::Exhaustive,
            seed: 0,
            max_steps: 400,
            max_states: 200_000,
            fair_rr: false,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub index: usize,
    pub rule: Rule,
    pub thread: ThreadId,
    pub label: StepLabel,
    pub inner: Vec<Rule>,
    pub fp_before: u64,
    pub fp_after: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStatus {
    Terminal { aborted: usize },
    Stuck,
    RetryDeadEnd,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub status: TraceStatus,
    pub final_state: MachineState,
}

/// Stable text rendering of a trace; byte-identical across runs for a fixed
/// seed and program.
pub fn render_trace(trace: &Trace) -> String {
    let mut out = String::from("# trace v1\n");
    for s in &trace.steps {
        let _ = write!(out, "{} {} {} {}", s.index, s.rule, s.thread, s.label);
        if !s.inner.is_empty() {
            let inner: Vec<String> = s.inner.iter().map(|r| r.to_string()).collect();
            let _ = write!(out, " [{}]", inner.join(","));
        }
        let _ = writeln!(out, " {:016x}->{:016x}", s.fp_before, s.fp_after);
    }
    let status = match &trace.status {
        TraceStatus::Terminal { aborted } => format!("terminal aborted={aborted}"),
        TraceStatus::Stuck => "stuck".to_string(),
        TraceStatus::RetryDeadEnd => "retry-dead-end".to_string(),
        TraceStatus::BudgetExhausted => "budget-exhausted".to_string(),
    };
    let _ = writeln!(out, "status {status}");
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExploreStats {
    pub states_visited: usize,
    pub retry_prunes: usize,
    pub deadlocks: usize,
    /// Times a dequeued state had already been expanded; memoization
    /// soundness keeps this at zero.
    pub re_expansions: usize,
}

#[derive(Debug, Clone)]
pub struct OutcomeClass {
    pub classification: Classification,
    pub representative: MachineState,
    pub trace: Trace,
}

#[derive(Debug, Clone)]
pub struct ExploreResult {
    /// Outcome classes keyed by kind and canonical fingerprint.
    pub classes: BTreeMap<String, OutcomeClass>,
    pub stats: ExploreStats,
    pub bound_hit: bool,
}

impl ExploreResult {
    pub fn terminal_classes(&self) -> Vec<&OutcomeClass> {
        self.classes
            .values()
            .filter(|c| c.classification.is_terminal())
            .collect()
    }

    pub fn stuck_classes(&self) -> Vec<&OutcomeClass> {
        self.classes
            .values()
            .filter(|c| c.classification.is_stuck())
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("replay diverged at step {0}: {1}")]
    Replay(usize, String),
}

fn prep(state: &MachineState, cfg: &ExploreConfig) -> MachineState {
    if cfg.normalize {
        pure_normalize(state)
    } else {
        state.clone()
    }
}

/// One maximal run choosing uniformly among enabled steps. Hitting a retry
/// dead end backtracks to the latest choice point with untried options
/// (bounded restarts), which is how a retry asks the scheduler for a
/// different interleaving.
pub fn run_random(
    state: &MachineState,
    cfg: &ExploreConfig,
) -> Result<Trace, ExploreError> {
    const RESTART_CAP: usize = 1_000;
    let limits = Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    struct Frame {
        state: MachineState,
        tried: Vec<usize>,
        n_choices: usize,
        trace_len: usize,
    }
    let mut frames: Vec<Frame> = Vec::new();
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut cur = prep(state, cfg);
    let mut restarts = 0usize;
    let mut last_thread: Option<ThreadId> = None;

    loop {
        if trace.len() >= cfg.max_steps {
            return Ok(Trace {
                steps: trace,
                status: TraceStatus::BudgetExhausted,
                final_state: cur,
            });
        }
        let steps = enabled_steps(&cur, &limits)?;
        if steps.is_empty() {
            let c = classify(&cur, &limits)?;
            if is_retry_dead_end(&c) {
                // Backtrack to the last choice point with something untried.
                let mut target = None;
                while let Some(top) = frames.last() {
                    if top.tried.len() < top.n_choices {
                        target = Some(frames.len() - 1);
                        break;
                    }
                    frames.pop();
                }
                match target {
                    Some(_) if restarts < RESTART_CAP => {
                        restarts += 1;
                        let top = frames.last_mut().unwrap();
                        trace.truncate(top.trace_len);
                        cur = top.state.clone();
                        let choices: Vec<usize> = (0..top.n_choices)
                            .filter(|i| !top.tried.contains(i))
                            .collect();
                        let pick = choices[rng.gen_range(0..choices.len())];
                        top.tried.push(pick);
                        let steps = enabled_steps(&cur, &limits)?;
                        let step = &steps[pick];
                        trace.push(TraceStep {
                            index: trace.len(),
                            rule: step.rule,
                            thread: step.thread,
                            label: step.label.clone(),
                            inner: step.inner.clone(),
                            fp_before: fingerprint_lite(&cur),
                            fp_after: fingerprint_lite(&step.successor),
                        });
                        last_thread = Some(step.thread);
                        cur = prep(&step.successor, cfg);
                        continue;
                    }
                    _ => {
                        return Ok(Trace {
                            steps: trace,
                            status: TraceStatus::RetryDeadEnd,
                            final_state: cur,
                        });
                    }
                }
            }
            let status = match c {
                Classification::Terminal { aborted } => TraceStatus::Terminal {
                    aborted: aborted.len(),
                },
                _ => TraceStatus::Stuck,
            };
            return Ok(Trace {
                steps: trace,
                status,
                final_state: cur,
            });
        }

        let pick = if cfg.fair_rr && steps.len() > 1 {
            // Prefer the thread cyclically after the last one stepped.
            let base = last_thread.map(|t| t.0).unwrap_or(0);
            let mut best = 0usize;
            let mut best_key = u32::MAX;
            for (i, s) in steps.iter().enumerate() {
                let key = s.thread.0.wrapping_sub(base + 1) % (u32::MAX);
                if key < best_key {
                    best_key = key;
                    best = i;
                }
            }
            best
        } else {
            rng.gen_range(0..steps.len())
        };
        frames.push(Frame {
            state: cur.clone(),
            tried: vec![pick],
            n_choices: steps.len(),
            trace_len: trace.len(),
        });
        let step = &steps[pick];
        trace.push(TraceStep {
            index: trace.len(),
            rule: step.rule,
            thread: step.thread,
            label: step.label.clone(),
            inner: step.inner.clone(),
            fp_before: fingerprint_lite(&cur),
            fp_after: fingerprint_lite(&step.successor),
        });
        last_thread = Some(step.thread);
        cur = prep(&step.successor, cfg);
    }
}

/// Bounded-exhaustive search over canonical states. Retry dead ends are
/// pruned (counted, not reported as outcomes); everything else that cannot
/// step becomes an outcome class with a sample trace.
pub fn explore(
    state: &MachineState,
    cfg: &ExploreConfig,
) -> Result<ExploreResult, ExploreError> {
    let limits = Limits::default();
    let root = prep(state, cfg);
    let root_fp = fingerprint_lite(&root);
    let mut parents: HashMap<u64, Option<(u64, TraceStep)>> = HashMap::new();
    parents.insert(root_fp, None);
    let mut queue: VecDeque<(MachineState, usize)> = VecDeque::new();
    queue.push_back((root.clone(), 0));
    let mut stats = ExploreStats {
        states_visited: 1,
        ..Default::default()
    };
    let mut classes: BTreeMap<String, OutcomeClass> = BTreeMap::new();
    let mut bound_hit = false;
    let mut expanded: HashMap<u64, ()> = HashMap::new();

    while let Some((cur, depth)) = queue.pop_front() {
        let cur_fp = fingerprint_lite(&cur);
        if expanded.insert(cur_fp, ()).is_some() {
            stats.re_expansions += 1;
            continue;
        }
        let steps = enabled_steps(&cur, &limits)?;
        if steps.is_empty() {
            let c = classify(&cur, &limits)?;
            if is_retry_dead_end(&c) {
                stats.retry_prunes += 1;
                continue;
            }
            let kind = match &c {
                Classification::Terminal { .. } => "terminal",
                _ => {
                    stats.deadlocks += 1;
                    "stuck"
                }
            };
            let key = format!("{kind}:{cur_fp:016x}");
            classes.entry(key).or_insert_with(|| OutcomeClass {
                classification: c.clone(),
                representative: cur.clone(),
                trace: rebuild_trace(&parents, cur_fp, &cur, &c),
            });
            continue;
        }
        if depth >= cfg.max_steps {
            bound_hit = true;
            continue;
        }
        for step in steps {
            let succ = prep(&step.successor, cfg);
            let fp = fingerprint_lite(&succ);
            if let std::collections::hash_map::Entry::Vacant(e) = parents.entry(fp) {
                if stats.states_visited >= cfg.max_states {
                    bound_hit = true;
                    continue;
                }
                stats.states_visited += 1;
                e.insert(Some((
                    cur_fp,
                    TraceStep {
                        index: 0,
                        rule: step.rule,
                        thread: step.thread,
                        label: step.label.clone(),
                        inner: step.inner.clone(),
                        fp_before: cur_fp,
                        fp_after: fp,
                    },
                )));
                queue.push_back((succ, depth + 1));
            }
        }
    }

    Ok(ExploreResult {
        classes,
        stats,
        bound_hit,
    })
}

fn rebuild_trace(
    parents: &HashMap<u64, Option<(u64, TraceStep)>>,
    final_fp: u64,
    final_state: &MachineState,
    c: &Classification,
) -> Trace {
    let mut rev = Vec::new();
    let mut fp = final_fp;
    while let Some(Some((parent, step))) = parents.get(&fp) {
        rev.push(step.clone());
        fp = *parent;
    }
    rev.reverse();
    for (i, s) in rev.iter_mut().enumerate() {
        s.index = i;
    }
    let status = match c {
        Classification::Terminal { aborted } => TraceStatus::Terminal {
            aborted: aborted.len(),
        },
        _ => TraceStatus::Stuck,
    };
    Trace {
        steps: rev,
        status,
        final_state: final_state.clone(),
    }
}

#[derive(Debug, Clone)]
pub enum ReachOutcome {
    Witness(Trace),
    Unreachable { bounded: bool },
}

/// Breadth-first reachability for a decidable property of states (and,
/// optionally, of the step that reached them).
pub fn reachable(
    state: &MachineState,
    cfg: &ExploreConfig,
    pred: &dyn Fn(&MachineState, Option<&TraceStep>) -> bool,
) -> Result<ReachOutcome, ExploreError> {
    let limits = Limits::default();
    let root = prep(state, cfg);
    let root_fp = fingerprint_lite(&root);
    if pred(&root, None) {
        return Ok(ReachOutcome::Witness(Trace {
            steps: Vec::new(),
            status: TraceStatus::BudgetExhausted,
            final_state: root,
        }));
    }
    let mut parents: HashMap<u64, Option<(u64, TraceStep)>> = HashMap::new();
    parents.insert(root_fp, None);
    let mut queue: VecDeque<(MachineState, usize)> = VecDeque::new();
    queue.push_back((root, 0));
    let mut visited = 1usize;
    let mut bounded = false;

    while let Some((cur, depth)) = queue.pop_front() {
        if depth >= cfg.max_steps {
            bounded = true;
            continue;
        }
        let cur_fp = fingerprint_lite(&cur);
        for step in enabled_steps(&cur, &limits)? {
            let succ = prep(&step.successor, cfg);
            let fp = fingerprint_lite(&succ);
            let record = TraceStep {
                index: 0,
                rule: step.rule,
                thread: step.thread,
                label: step.label.clone(),
                inner: step.inner.clone(),
                fp_before: cur_fp,
                fp_after: fp,
            };
            let hit = pred(&succ, Some(&record));
            if let std::collections::hash_map::Entry::Vacant(e) = parents.entry(fp) {
                if visited >= cfg.max_states {
                    bounded = true;
                    continue;
                }
                visited += 1;
                e.insert(Some((cur_fp, record.clone())));
                if hit {
                    let mut trace =
                        rebuild_trace(&parents, fp, &succ, &Classification::Live);
                    trace.status = TraceStatus::BudgetExhausted;
                    return Ok(ReachOutcome::Witness(Trace {
                        steps: trace.steps,
                        status: TraceStatus::BudgetExhausted,
                        final_state: succ.clone(),
                    }));
                }
                queue.push_back((succ, depth + 1));
            } else if hit {
                // Reached an already-known state via a step satisfying the
                // predicate (label queries).
                let mut steps_vec = {
                    let t = rebuild_trace(&parents, cur_fp, &cur, &Classification::Live);
                    t.steps
                };
                let mut record = record;
                record.index = steps_vec.len();
                steps_vec.push(record);
                return Ok(ReachOutcome::Witness(Trace {
                    steps: steps_vec,
                    status: TraceStatus::BudgetExhausted,
                    final_state: succ,
                }));
            }
        }
    }
    Ok(ReachOutcome::Unreachable { bounded })
}

/// Re-run a recorded trace from an initial state, checking fingerprints at
/// every step.
pub fn replay(
    initial: &MachineState,
    steps: &[TraceStep],
    cfg: &ExploreConfig,
) -> Result<MachineState, ExploreError> {
    let limits = Limits::default();
    let mut cur = prep(initial, cfg);
    for (i, rec) in steps.iter().enumerate() {
        let fp = fingerprint_lite(&cur);
        if fp != rec.fp_before {
            return Err(ExploreError::Replay(
                i,
                format!("expected source {:016x}, at {:016x}", rec.fp_before, fp),
            ));
        }
        let options = enabled_steps(&cur, &limits)?;
        let step = options
            .iter()
            .find(|s| s.rule == rec.rule && s.thread == rec.thread && s.label == rec.label)
            .ok_or_else(|| {
                ExploreError::Replay(i, format!("step {} {} not enabled", rec.rule, rec.thread))
            })?;
        cur = prep(&step.successor, cfg);
        let fp_after = fingerprint_lite(&cur);
        if fp_after != rec.fp_after {
            return Err(ExploreError::Replay(
                i,
                format!(
                    "expected successor {:016x}, got {:016x}",
                    rec.fp_after, fp_after
                ),
            ));
        }
    }
    Ok(cur)
}

/// Summary of canonical outcome keys; identical across runs for identical
/// inputs.
pub fn outcome_summary(result: &ExploreResult) -> String {
    let mut out = String::new();
    for (key, class) in &result.classes {
        let kind = match &class.classification {
            Classification::Terminal { aborted } if aborted.is_empty() => "terminal".to_string(),
            Classification::Terminal { aborted } => {
                format!("terminal({} aborted)", aborted.len())
            }
            Classification::Stuck { diagnostics } => {
                let ds: Vec<&str> = diagnostics.iter().map(|(_, d)| d.as_str()).collect();
                format!("stuck[{}]", ds.join("; "))
            }
            Classification::Live => "live".to_string(),
        };
        let _ = writeln!(out, "{key} {kind} ({} steps)", class.trace.steps.len());
    }
    let _ = writeln!(
        out,
        "visited={} retry-prunes={} deadlocks={} bound-hit={}",
        result.stats.states_visited,
        result.stats.retry_prunes,
        result.stats.deadlocks,
        result.bound_hit
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program;

    fn cfg() -> ExploreConfig {
        ExploreConfig::default()
    }

    #[test]
    fn single_thread_pure_program_is_deterministic() {
        let p = parse_program("do { x <- newVar 1; y <- readVar x; writeVar x (y + 1) }").unwrap();
        let s = MachineState::boot(p);
        let t1 = run_random(&s, &ExploreConfig { seed: 1, mode: Mode::Random, ..cfg() }).unwrap();
        let t2 = run_random(&s, &ExploreConfig { seed: 99, mode: Mode::Random, ..cfg() }).unwrap();
        assert_eq!(render_trace(&t1), render_trace(&t2));
        assert!(matches!(t1.status, TraceStatus::Terminal { .. }));
    }

    #[test]
    fn fixed_seed_reproduces_trace() {
        let p = parse_program(
            "do { v <- newVar 0; fork (writeVar v 1); fork (writeVar v 2); readVar v }",
        )
        .unwrap();
        let s = MachineState::boot(p);
        let c = ExploreConfig { seed: 7, mode: Mode::Random, ..cfg() };
        let t1 = run_random(&s, &c).unwrap();
        let t2 = run_random(&s, &c).unwrap();
        assert_eq!(render_trace(&t1), render_trace(&t2));
    }

    #[test]
    fn explore_finds_both_final_values() {
        // Two racing writers: final heap value 1 or 2.
        let p = parse_program(
            "do { v <- newVar 0; fork (writeVar v 1); writeVar v 2 }",
        )
        .unwrap();
        let s = MachineState::boot(p);
        let r = explore(&s, &cfg()).unwrap();
        assert!(!r.bound_hit);
        assert_eq!(r.stats.re_expansions, 0);
        let terminals = r.terminal_classes();
        assert_eq!(terminals.len(), 2, "{:?}", r.classes.keys());
    }

    #[test]
    fn traces_replay_to_their_fingerprint() {
        let p = parse_program(
            "do { v <- newVar 0; fork (writeVar v 1); writeVar v 2 }",
        )
        .unwrap();
        let s = MachineState::boot(p);
        let r = explore(&s, &cfg()).unwrap();
        for class in r.classes.values() {
            let end = replay(&s, &class.trace.steps, &cfg()).unwrap();
            assert_eq!(
                fingerprint_lite(&end),
                fingerprint_lite(&class.representative)
            );
        }
    }

    #[test]
    fn reachable_finds_witness_and_bounded_unreachable() {
        let p = parse_program("do { v <- newVar 0; writeVar v 42 }").unwrap();
        let s = MachineState::boot(p);
        let hit = reachable(&s, &cfg(), &|st, _| {
            st.heap.values().any(|v| *v == crate::syntax::Term::int(42))
        })
        .unwrap();
        assert!(matches!(hit, ReachOutcome::Witness(_)));
        let miss = reachable(&s, &cfg(), &|st, _| {
            st.heap.values().any(|v| *v == crate::syntax::Term::int(99))
        })
        .unwrap();
        assert!(matches!(miss, ReachOutcome::Unreachable { .. }));
    }

    #[test]
    fn empty_program_unreachable_immediately() {
        let s = MachineState::new();
        let miss = reachable(&s, &cfg(), &|_, _| false).unwrap();
        match miss {
            ReachOutcome::Unreachable { bounded } => assert!(!bounded),
            other => panic!("{other:?}"),
        }
    }
}
