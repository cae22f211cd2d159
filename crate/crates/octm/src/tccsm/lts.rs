//! The labelled transition system: prefixes and synchronization, recursion
//! unfolding, transaction activation, communication-driven fusion,
//! distributed commit/abort broadcast, and the commit-cleanup function.

use super::ast::{Action, TccsProc};
use std::collections::{BTreeMap, BTreeSet};

/// A finite transaction-name renaming attached to action labels: pairs
/// `(from, to)` where `from = None` stands for a plain process joining a
/// transaction (there is no old name to rename).
pub type Renaming = Vec<(Option<String>, String)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TccsLabel {
    /// Plain action with its (always empty) renaming.
    Act { action: Action, renaming: Renaming },
    /// Action performed inside transaction `tx` (after any renaming).
    TxAct {
        tx: String,
        action: Action,
        renaming: Renaming,
    },
    Beta(BetaLabel),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BetaLabel {
    New(String),
    Co(String),
    Ab(String),
}

impl std::fmt::Display for TccsLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sigma = |r: &Renaming| -> String {
            if r.is_empty() {
                "e".to_string()
            } else {
                r.iter()
                    .map(|(from, to)| match from {
                        Some(x) => format!("{x}>{to}"),
                        None => format!("e>{to}"),
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            }
        };
        match self {
            TccsLabel::Act { action, renaming } => write!(f, "{action}[{}]", sigma(renaming)),
            TccsLabel::TxAct {
                tx,
                action,
                renaming,
            } => write!(f, "{tx}({action})[{}]", sigma(renaming)),
            TccsLabel::Beta(b) => write!(f, "{b}"),
        }
    }
}

impl std::fmt::Display for BetaLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BetaLabel::New(k) => write!(f, "new {k}"),
            BetaLabel::Co(k) => write!(f, "co {k}"),
            BetaLabel::Ab(k) => write!(f, "ab {k}"),
        }
    }
}

/// Transaction names of a process: names of top-level active transactions,
/// looking through parallel composition and restriction.
pub fn tn(p: &TccsProc) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    fn go(p: &TccsProc, out: &mut BTreeSet<String>) {
        match p {
            TccsProc::Active(k, ..) => {
                out.insert(k.clone());
            }
            TccsProc::Par(ps) => {
                for q in ps {
                    go(q, out);
                }
            }
            TccsProc::Restrict(q, _) => go(q, out),
            _ => {}
        }
    }
    go(p, &mut out);
    out
}

pub fn tn_beta(b: &BetaLabel) -> &str {
    match b {
        BetaLabel::New(k) | BetaLabel::Co(k) | BetaLabel::Ab(k) => k,
    }
}

/// Rename an active-transaction name throughout a term.
pub fn rename_tx_in_proc(p: &TccsProc, from: &str, to: &str) -> TccsProc {
    match p {
        TccsProc::Active(k, body, comp) => TccsProc::Active(
            if k == from { to.to_string() } else { k.clone() },
            Box::new(rename_tx_in_proc(body, from, to)),
            Box::new(rename_tx_in_proc(comp, from, to)),
        ),
        TccsProc::Sum(branches) => TccsProc::Sum(
            branches
                .iter()
                .map(|(a, q)| (a.clone(), rename_tx_in_proc(q, from, to)))
                .collect(),
        ),
        TccsProc::Par(ps) => {
            TccsProc::Par(ps.iter().map(|q| rename_tx_in_proc(q, from, to)).collect())
        }
        TccsProc::Restrict(q, l) => {
            TccsProc::Restrict(Box::new(rename_tx_in_proc(q, from, to)), l.clone())
        }
        TccsProc::Var(_) => p.clone(),
        TccsProc::Rec(x, q) => {
            TccsProc::Rec(x.clone(), Box::new(rename_tx_in_proc(q, from, to)))
        }
        TccsProc::Inactive(b, c) => TccsProc::Inactive(
            Box::new(rename_tx_in_proc(b, from, to)),
            Box::new(rename_tx_in_proc(c, from, to)),
        ),
        TccsProc::Commit(q) => TccsProc::Commit(Box::new(rename_tx_in_proc(q, from, to))),
    }
}

/// Capture-avoiding substitution of a process for a process variable.
pub fn subst_proc_var(p: &TccsProc, x: &str, val: &TccsProc) -> TccsProc {
    match p {
        TccsProc::Var(y) => {
            if y == x {
                val.clone()
            } else {
                p.clone()
            }
        }
        TccsProc::Rec(y, body) => {
            if y == x {
                p.clone()
            } else {
                // Corpus recursion binders are distinct; a colliding binder
                // would be renamed here if it ever occurred.
                TccsProc::Rec(y.clone(), Box::new(subst_proc_var(body, x, val)))
            }
        }
        TccsProc::Sum(branches) => TccsProc::Sum(
            branches
                .iter()
                .map(|(a, q)| (a.clone(), subst_proc_var(q, x, val)))
                .collect(),
        ),
        TccsProc::Par(ps) => {
            TccsProc::Par(ps.iter().map(|q| subst_proc_var(q, x, val)).collect())
        }
        TccsProc::Restrict(q, l) => {
            TccsProc::Restrict(Box::new(subst_proc_var(q, x, val)), l.clone())
        }
        TccsProc::Inactive(b, c) => TccsProc::Inactive(
            Box::new(subst_proc_var(b, x, val)),
            Box::new(subst_proc_var(c, x, val)),
        ),
        TccsProc::Active(k, b, c) => TccsProc::Active(
            k.clone(),
            Box::new(subst_proc_var(b, x, val)),
            Box::new(subst_proc_var(c, x, val)),
        ),
        TccsProc::Commit(q) => TccsProc::Commit(Box::new(subst_proc_var(q, x, val))),
    }
}

/// The commit-cleanup function: strips commit prefixes from the dissolving
/// transaction body. The environment carries recursion bindings for the
/// fallthrough substitution case.
pub fn psi(p: &TccsProc, env: &BTreeMap<String, TccsProc>) -> TccsProc {
    match p {
        TccsProc::Commit(q) => (**q).clone(),
        TccsProc::Restrict(q, l) => TccsProc::Restrict(Box::new(psi(q, env)), l.clone()),
        TccsProc::Sum(branches) => TccsProc::Sum(
            branches
                .iter()
                .map(|(a, q)| (a.clone(), psi(q, env)))
                .collect(),
        ),
        TccsProc::Par(ps) => TccsProc::Par(ps.iter().map(|q| psi(q, env)).collect()),
        TccsProc::Rec(x, q) => {
            let mut env2 = env.clone();
            env2.insert(x.clone(), p.clone());
            TccsProc::Rec(x.clone(), Box::new(psi(q, &env2)))
        }
        other => apply_env(other, env),
    }
}

fn apply_env(p: &TccsProc, env: &BTreeMap<String, TccsProc>) -> TccsProc {
    if env.is_empty() {
        return p.clone();
    }
    let mut out = p.clone();
    for (x, val) in env {
        out = subst_proc_var(&out, x, val);
    }
    out
}

struct FreshK {
    counter: usize,
    used: BTreeSet<String>,
}

impl FreshK {
    fn new(p: &TccsProc) -> Self {
        let mut used = BTreeSet::new();
        collect_tx_names(p, &mut used);
        FreshK { counter: 0, used }
    }

    fn fresh(&mut self) -> String {
        loop {
            let k = format!("k{}", self.counter);
            self.counter += 1;
            if !self.used.contains(&k) {
                self.used.insert(k.clone());
                return k;
            }
        }
    }
}

fn collect_tx_names(p: &TccsProc, out: &mut BTreeSet<String>) {
    match p {
        TccsProc::Active(k, b, c) => {
            out.insert(k.clone());
            collect_tx_names(b, out);
            collect_tx_names(c, out);
        }
        TccsProc::Sum(branches) => {
            for (_, q) in branches {
                collect_tx_names(q, out);
            }
        }
        TccsProc::Par(ps) => {
            for q in ps {
                collect_tx_names(q, out);
            }
        }
        TccsProc::Restrict(q, _) | TccsProc::Rec(_, q) | TccsProc::Commit(q) => {
            collect_tx_names(q, out)
        }
        TccsProc::Inactive(b, c) => {
            collect_tx_names(b, out);
            collect_tx_names(c, out);
        }
        TccsProc::Var(_) => {}
    }
}

/// All derivable transitions of `p`. Fresh transaction names are drawn from
/// a deterministic `k0, k1, ...` sequence avoiding the names in `p`.
pub fn lts_steps(p: &TccsProc) -> Vec<(TccsLabel, TccsProc)> {
    let mut fresh = FreshK::new(p);
    trans(p, &mut fresh)
}

fn trans(p: &TccsProc, fresh: &mut FreshK) -> Vec<(TccsLabel, TccsProc)> {
    match p {
        TccsProc::Sum(branches) => {
            let mut out = Vec::new();
            for (action, cont) in branches {
                out.push((
                    TccsLabel::Act {
                        action: action.clone(),
                        renaming: Vec::new(),
                    },
                    cont.clone(),
                ));
                if *action != Action::Tau {
                    // A pure choice can join a transaction: the chosen branch
                    // plus a commit vote run inside a fresh transaction whose
                    // compensation restores the whole sum.
                    let k = fresh.fresh();
                    let body = TccsProc::Par(vec![cont.clone(), TccsProc::Commit(Box::new(TccsProc::nil()))]);
                    out.push((
                        TccsLabel::TxAct {
                            tx: k.clone(),
                            action: action.clone(),
                            renaming: vec![(None, k.clone())],
                        },
                        TccsProc::Active(k, Box::new(body), Box::new(p.clone())),
                    ));
                }
            }
            out
        }
        TccsProc::Rec(x, body) => vec![(
            TccsLabel::Act {
                action: Action::Tau,
                renaming: Vec::new(),
            },
            subst_proc_var(body, x, p),
        )],
        TccsProc::Var(_) | TccsProc::Commit(_) => Vec::new(),
        TccsProc::Inactive(body, comp) => {
            let k = fresh.fresh();
            vec![(
                TccsLabel::Beta(BetaLabel::New(k.clone())),
                TccsProc::Active(k, body.clone(), comp.clone()),
            )]
        }
        TccsProc::Active(k, body, comp) => {
            let mut out = Vec::new();
            for (lbl, body2) in trans(body, fresh) {
                match lbl {
                    TccsLabel::Act { action, renaming } if renaming.is_empty() => {
                        if action == Action::Tau {
                            out.push((
                                TccsLabel::Act {
                                    action,
                                    renaming: Vec::new(),
                                },
                                TccsProc::Active(k.clone(), Box::new(body2), comp.clone()),
                            ));
                        } else {
                            let k2 = fresh.fresh();
                            out.push((
                                TccsLabel::TxAct {
                                    tx: k2.clone(),
                                    action,
                                    renaming: vec![(Some(k.clone()), k2.clone())],
                                },
                                TccsProc::Active(k2, Box::new(body2), comp.clone()),
                            ));
                        }
                    }
                    // No rule lifts transactional actions or betas out of a
                    // transaction body.
                    _ => {}
                }
            }
            out.push((TccsLabel::Beta(BetaLabel::Ab(k.clone())), (**comp).clone()));
            if body
                .components()
                .iter()
                .any(|c| matches!(c, TccsProc::Commit(_)))
            {
                out.push((
                    TccsLabel::Beta(BetaLabel::Co(k.clone())),
                    psi(body, &BTreeMap::new()),
                ));
            }
            out
        }
        TccsProc::Restrict(q, l) => {
            let blocked = |a: &Action| a.channel().map(|c| l.contains(c)).unwrap_or(false);
            trans(q, fresh)
                .into_iter()
                .filter_map(|(lbl, q2)| {
                    let keep = match &lbl {
                        TccsLabel::Act { action, .. } => !blocked(action),
                        TccsLabel::TxAct { action, .. } => !blocked(action),
                        TccsLabel::Beta(_) => true,
                    };
                    keep.then(|| (lbl, TccsProc::Restrict(Box::new(q2), l.clone())))
                })
                .collect()
        }
        TccsProc::Par(ps) => par_trans(ps, fresh),
    }
}

fn par_with(ps: &[TccsProc], i: usize, pi: TccsProc) -> Vec<TccsProc> {
    let mut out = ps.to_vec();
    out[i] = pi;
    out
}

fn apply_renaming(p: &TccsProc, renaming: &Renaming) -> TccsProc {
    let mut out = p.clone();
    for (from, to) in renaming {
        if let Some(f) = from {
            out = rename_tx_in_proc(&out, f, to);
        }
    }
    out
}

fn par_trans(ps: &[TccsProc], fresh: &mut FreshK) -> Vec<(TccsLabel, TccsProc)> {
    let comp_trans: Vec<Vec<(TccsLabel, TccsProc)>> =
        ps.iter().map(|q| trans(q, fresh)).collect();
    let mut out = Vec::new();

    // Single-component lifts.
    for (i, steps) in comp_trans.iter().enumerate() {
        let others_tn: BTreeSet<String> = ps
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, q)| tn(q))
            .collect();
        for (lbl, pi2) in steps {
            match lbl {
                TccsLabel::Act { .. } => {
                    out.push((lbl.clone(), TccsProc::Par(par_with(ps, i, pi2.clone()))));
                }
                TccsLabel::TxAct { tx, renaming, .. } => {
                    debug_assert!(
                        !others_tn.contains(tx),
                        "freshness side condition violated"
                    );
                    let mut comps = Vec::with_capacity(ps.len());
                    for (j, q) in ps.iter().enumerate() {
                        if j == i {
                            comps.push(pi2.clone());
                        } else {
                            comps.push(apply_renaming(q, renaming));
                        }
                    }
                    out.push((lbl.clone(), TccsProc::Par(comps)));
                }
                TccsLabel::Beta(b) => {
                    if !others_tn.contains(tn_beta(b)) {
                        out.push((lbl.clone(), TccsProc::Par(par_with(ps, i, pi2.clone()))));
                    }
                }
            }
        }
    }

    // Binary synchronizations.
    for i in 0..ps.len() {
        for j in (i + 1)..ps.len() {
            for (li, pi2) in &comp_trans[i] {
                for (lj, pj2) in &comp_trans[j] {
                    match (li, lj) {
                        (
                            TccsLabel::Act {
                                action: ai,
                                renaming: ri,
                            },
                            TccsLabel::Act {
                                action: aj,
                                renaming: rj,
                            },
                        ) if ri.is_empty()
                            && rj.is_empty()
                            && ai.complement().as_ref() == Some(aj) =>
                        {
                            let mut comps = ps.to_vec();
                            comps[i] = pi2.clone();
                            comps[j] = pj2.clone();
                            out.push((
                                TccsLabel::Act {
                                    action: Action::Tau,
                                    renaming: Vec::new(),
                                },
                                TccsProc::Par(comps),
                            ));
                        }
                        (
                            TccsLabel::TxAct {
                                tx: ki,
                                action: ai,
                                renaming: ri,
                            },
                            TccsLabel::TxAct {
                                tx: kj,
                                action: aj,
                                renaming: rj,
                            },
                        ) if ai.complement().as_ref() == Some(aj) => {
                            // Fusion, driven by communication: both sides are
                            // renamed to a common fresh name, and each is
                            // additionally renamed by the other's renaming.
                            let k = fresh.fresh();
                            let from_i = ri.first().and_then(|(f, _)| f.clone());
                            let from_j = rj.first().and_then(|(f, _)| f.clone());
                            let mut a = rename_tx_in_proc(pi2, ki, &k);
                            if let Some(f) = &from_j {
                                a = rename_tx_in_proc(&a, f, &k);
                            }
                            let mut b = rename_tx_in_proc(pj2, kj, &k);
                            if let Some(f) = &from_i {
                                b = rename_tx_in_proc(&b, f, &k);
                            }
                            let renaming: Renaming =
                                vec![(from_i.clone(), k.clone()), (from_j.clone(), k.clone())];
                            let mut comps = Vec::with_capacity(ps.len());
                            for (idx, q) in ps.iter().enumerate() {
                                if idx == i {
                                    comps.push(a.clone());
                                } else if idx == j {
                                    comps.push(b.clone());
                                } else {
                                    comps.push(apply_renaming(q, &renaming));
                                }
                            }
                            out.push((
                                TccsLabel::TxAct {
                                    tx: k,
                                    action: Action::Tau,
                                    renaming,
                                },
                                TccsProc::Par(comps),
                            ));
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    // Broadcast of commits/aborts across the components sharing a
    // transaction name.
    let all_tx: BTreeSet<String> = ps.iter().flat_map(tn).collect();
    for k in all_tx {
        let carriers: Vec<usize> = (0..ps.len()).filter(|i| tn(&ps[*i]).contains(&k)).collect();
        if carriers.len() < 2 {
            continue;
        }
        for make in [BetaLabel::Co, BetaLabel::Ab] {
            let wanted = make(k.clone());
            let options: Vec<Vec<&TccsProc>> = carriers
                .iter()
                .map(|i| {
                    comp_trans[*i]
                        .iter()
                        .filter(|(lbl, _)| matches!(lbl, TccsLabel::Beta(b) if *b == wanted))
                        .map(|(_, q)| q)
                        .collect()
                })
                .collect();
            if options.iter().any(|o| o.is_empty()) {
                continue;
            }
            let mut combos: Vec<Vec<&TccsProc>> = vec![Vec::new()];
            for opts in &options {
                let mut next = Vec::new();
                for combo in &combos {
                    for o in opts {
                        let mut c = combo.clone();
                        c.push(o);
                        next.push(c);
                    }
                }
                combos = next;
            }
            for combo in combos {
                let mut comps = ps.to_vec();
                for (slot, i) in carriers.iter().enumerate() {
                    comps[*i] = combo[slot].clone();
                }
                out.push((
                    TccsLabel::Beta(wanted.clone()),
                    TccsProc::Par(comps),
                ));
            }
        }
    }

    out
}

/// The reduction relation: plain synchronizations, transactional
/// synchronizations, and the beta steps (activation, commit, abort).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReductionKind {
    Tau,
    TxTau(String),
    Beta(BetaLabel),
}

impl std::fmt::Display for ReductionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReductionKind::Tau => write!(f, "tau"),
            ReductionKind::TxTau(k) => write!(f, "{k}(tau)"),
            ReductionKind::Beta(b) => write!(f, "{b}"),
        }
    }
}

pub fn reductions(p: &TccsProc) -> Vec<(ReductionKind, TccsProc)> {
    lts_steps(p)
        .into_iter()
        .filter_map(|(lbl, q)| match lbl {
            TccsLabel::Act { action: Action::Tau, .. } => Some((ReductionKind::Tau, q)),
            TccsLabel::TxAct {
                tx,
                action: Action::Tau,
                ..
            } => Some((ReductionKind::TxTau(tx), q)),
            TccsLabel::Beta(b) => Some((ReductionKind::Beta(b), q)),
            _ => None,
        })
        .collect()
}

/// A canonical rendering used to memoize process states: parallel
/// compositions flattened, inert components dropped, components sorted
/// under a name-blind key, transaction names renumbered in traversal order.
pub fn canonical_key(p: &TccsProc) -> String {
    let mut comps: Vec<TccsProc> = p
        .components()
        .into_iter()
        .filter(|c| !c.is_nil())
        .cloned()
        .collect();
    comps.sort_by_key(|c| {
        let mut blind = c.clone();
        for k in tn(c) {
            blind = rename_tx_in_proc(&blind, &k, "?");
        }
        blind.to_string()
    });
    let flat = TccsProc::Par(comps);
    let mut renamed = flat.clone();
    let mut next = 0usize;
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for k in ordered_tx_names(&flat) {
        if !seen.contains_key(&k) {
            let nk = format!("K{next}");
            next += 1;
            seen.insert(k.clone(), nk);
        }
    }
    for (k, nk) in &seen {
        renamed = rename_tx_in_proc(&renamed, k, nk);
    }
    renamed.to_string()
}

fn ordered_tx_names(p: &TccsProc) -> Vec<String> {
    let mut out = Vec::new();
    fn go(p: &TccsProc, out: &mut Vec<String>) {
        match p {
            TccsProc::Active(k, b, c) => {
                out.push(k.clone());
                go(b, out);
                go(c, out);
            }
            TccsProc::Sum(branches) => {
                for (_, q) in branches {
                    go(q, out);
                }
            }
            TccsProc::Par(ps) => {
                for q in ps {
                    go(q, out);
                }
            }
            TccsProc::Restrict(q, _) | TccsProc::Rec(_, q) | TccsProc::Commit(q) => go(q, out),
            TccsProc::Inactive(b, c) => {
                go(b, out);
                go(c, out);
            }
            TccsProc::Var(_) => {}
        }
    }
    go(p, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_tccs;
    use super::*;

    fn steps(src: &str) -> Vec<(TccsLabel, TccsProc)> {
        lts_steps(&parse_tccs(src).unwrap())
    }

    #[test]
    fn sum_offers_each_branch() {
        let out = steps("a.0 + b.0");
        let acts: Vec<String> = out
            .iter()
            .filter_map(|(l, _)| match l {
                TccsLabel::Act { action, .. } => Some(action.to_string()),
                _ => None,
            })
            .collect();
        assert_eq!(acts, vec!["a", "b"]);
        // Each non-tau branch also offers a transactional join.
        let joins = out
            .iter()
            .filter(|(l, _)| matches!(l, TccsLabel::TxAct { .. }))
            .count();
        assert_eq!(joins, 2);
    }

    #[test]
    fn sync_produces_tau() {
        let out = steps("a.0 | 'a.0");
        assert!(out.iter().any(|(l, _)| matches!(
            l,
            TccsLabel::Act {
                action: Action::Tau,
                ..
            }
        )));
    }

    #[test]
    fn tsync_fuses_transactions() {
        let out = steps("[[ a.co.0 >i> 0 ]] | [[ 'a.co.0 >j> 0 ]]");
        let fused: Vec<&TccsProc> = out
            .iter()
            .filter_map(|(l, q)| match l {
                TccsLabel::TxAct {
                    action: Action::Tau,
                    ..
                } => Some(q),
                _ => None,
            })
            .collect();
        assert_eq!(fused.len(), 1);
        let names = tn(fused[0]);
        assert_eq!(names.len(), 1, "both sides carry the same name: {names:?}");
    }

    #[test]
    fn tab_aborts_to_compensation() {
        let out = steps("[[ a.co.0 >k> b.0 ]]");
        let aborted: Vec<&TccsProc> = out
            .iter()
            .filter_map(|(l, q)| match l {
                TccsLabel::Beta(BetaLabel::Ab(k)) if k == "k" => Some(q),
                _ => None,
            })
            .collect();
        assert_eq!(aborted.len(), 1);
        assert_eq!(aborted[0].to_string(), "b.0");
    }

    #[test]
    fn tnew_activates() {
        let out = steps("[[ a.co.0 , b.0 ]]");
        assert!(out.iter().any(|(l, q)| matches!(l, TccsLabel::Beta(BetaLabel::New(_)))
            && matches!(q, TccsProc::Active(..))));
    }

    #[test]
    fn tco_strips_commits() {
        let out = steps("[[ co.a.0 | co.b.0 >k> 0 ]]");
        let committed: Vec<&TccsProc> = out
            .iter()
            .filter_map(|(l, q)| match l {
                TccsLabel::Beta(BetaLabel::Co(k)) if k == "k" => Some(q),
                _ => None,
            })
            .collect();
        assert_eq!(committed.len(), 1);
        assert_eq!(canonical_key(committed[0]), canonical_key(&parse_tccs("a.0 | b.0").unwrap()));
    }

    #[test]
    fn broadcast_commits_fused_components() {
        // Two components share the transaction name; co must hit both.
        let p = parse_tccs("[[ co.0 >k> a.0 ]] | [[ co.0 >k> b.0 ]]").unwrap();
        let out = lts_steps(&p);
        let co: Vec<&TccsProc> = out
            .iter()
            .filter_map(|(l, q)| match l {
                TccsLabel::Beta(BetaLabel::Co(k)) if k == "k" => Some(q),
                _ => None,
            })
            .collect();
        assert_eq!(co.len(), 1);
        assert!(tn(co[0]).is_empty());
        // And a lone ab k on one side only cannot happen either.
        let ab: Vec<&TccsProc> = out
            .iter()
            .filter_map(|(l, q)| match l {
                TccsLabel::Beta(BetaLabel::Ab(k)) if k == "k" => Some(q),
                _ => None,
            })
            .collect();
        assert_eq!(ab.len(), 1);
        assert!(tn(ab[0]).is_empty());
    }

    #[test]
    fn restriction_blocks_visible_actions() {
        let out = steps("(a.0 | 'a.0) \\ {a}");
        assert!(out.iter().all(|(l, _)| !matches!(
            l,
            TccsLabel::Act {
                action: Action::In(_),
                ..
            } | TccsLabel::Act {
                action: Action::Out(_),
                ..
            }
        )));
        // The internal sync still happens under the restriction.
        assert!(out.iter().any(|(l, _)| matches!(
            l,
            TccsLabel::Act {
                action: Action::Tau,
                ..
            }
        )));
    }

    #[test]
    fn rec_unfolds_as_tau() {
        let out = steps("rec X. a.X");
        assert_eq!(out.len(), 1);
        match &out[0].1 {
            TccsProc::Sum(branches) => match &branches[0].1 {
                TccsProc::Rec(..) => {}
                other => panic!("expected rec after unfold, got {other}"),
            },
            other => panic!("{other}"),
        }
    }

    #[test]
    fn tsum_joins_partner_transaction() {
        // A pure sum can synchronize with an action inside a transaction;
        // the result is one distributed transaction (a single shared name).
        let out = steps("a.0 | [[ 'a.co.0 >k> c.0 ]]");
        let fused: Vec<&TccsProc> = out
            .iter()
            .filter_map(|(l, q)| match l {
                TccsLabel::TxAct {
                    action: Action::Tau,
                    ..
                } => Some(q),
                _ => None,
            })
            .collect();
        assert_eq!(fused.len(), 1);
        assert_eq!(tn(fused[0]).len(), 1);
        // The joined side carries a commit vote and the sum as compensation.
        let s = fused[0].to_string();
        assert!(s.contains("co."), "{s}");
    }

    #[test]
    fn psi_cases() {
        let co_q = parse_tccs("co.a.0").unwrap();
        assert_eq!(psi(&co_q, &BTreeMap::new()).to_string(), "a.0");
        let par = parse_tccs("co.a.0 | b.0").unwrap();
        assert_eq!(psi(&par, &BTreeMap::new()).to_string(), "a.0 | b.0");
        let plain = parse_tccs("a.0").unwrap();
        assert_eq!(psi(&plain, &BTreeMap::new()), plain);
    }

    #[test]
    fn reductions_filter() {
        let p = parse_tccs("a.0 | 'a.0").unwrap();
        let rs = reductions(&p);
        assert_eq!(rs.len(), 2, "one sync, one joint-join fusion: {rs:?}");
        assert!(rs.iter().any(|(k, _)| *k == ReductionKind::Tau));
        assert!(rs.iter().any(|(k, _)| matches!(k, ReductionKind::TxTau(_))));
    }
}
