//! Bounded exhaustive exploration of the sync engine.
//!
//! Starting from every valid initial state over `D` chains and `A` assets,
//! the checker runs every `(source, action, asset)` sync breadth-first up to
//! the depth bound and checks each transition taken from a valid state. The
//! first violation found is therefore at minimal depth, and it is returned as
//! a replayable scenario whose expectations come from the faithful engine.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::engine::{
    self, combined_premises, Engine, GlobalState, LOCK_MIRROR, REGULATORY_HOMOMORPHISM,
    SUCCESS_GUARANTEE, VALID_STATE_PRESERVATION,
};
use crate::ids::{AssetKey, ChainId};
use crate::machine::validate_machine;
use crate::preservation::{
    check_naturality, check_roundtrip, check_sequential_preservation, check_sync_step,
    sequence_count, sync_all, SymmetricMorphism, SYNC_ISOLATION,
};
use crate::regulatory::{action_id, reg_machine_spec, reg_transition, RegAction, RegState};
use crate::report::{ValidationReport, Violation};
use crate::scenario::{Outcome, Scenario, SyncStep};
use crate::{BudgetExceeded, DEFAULT_BUDGET};

pub const GENERIC_AGREEMENT: &str = "generic_concrete_agreement";
pub const CONNECTED_SET: &str = "connected_set_unchanged";

/// Environment variable overriding [`DEFAULT_BUDGET`].
pub const BUDGET_ENV: &str = "REGSYNC_BUDGET";

/// Action sequence length used for the generic-layer checks.
const GENERIC_SEQ_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub domains: usize,
    pub assets: usize,
    pub depth: usize,
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "domains={} assets={} depth={}",
            self.domains, self.assets, self.depth
        )
    }
}

/// `REGSYNC_BUDGET` if set and numeric, otherwise the default.
pub fn budget_from_env() -> Result<u64, String> {
    match std::env::var(BUDGET_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{BUDGET_ENV}={v:?} is not a non-negative integer")),
        Err(_) => Ok(DEFAULT_BUDGET),
    }
}

fn triples_per_state(b: &Bounds) -> u64 {
    (b.domains * RegAction::ALL.len() * b.assets) as u64
}

/// Upper bound on sync calls: distinct states reachable (bounded both by the
/// raw state space and by the number of paths) times syncs per state.
pub fn estimate_work(b: &Bounds) -> u64 {
    let t = triples_per_state(b);
    let per_asset_cells = 6u64
        .checked_pow(b.domains as u32)
        .and_then(|x| x.checked_mul(2));
    let state_bound = per_asset_cells
        .and_then(|x| x.checked_pow(b.assets as u32))
        .unwrap_or(u64::MAX);
    let initial = initial_state_count(b);
    let path_bound = if b.depth == 0 {
        0
    } else {
        sequence_count(t, b.depth - 1)
            .and_then(|paths| paths.checked_mul(initial))
            .unwrap_or(u64::MAX)
    };
    state_bound.min(path_bound).saturating_mul(t)
}

pub fn initial_state_count(b: &Bounds) -> u64 {
    let subsets = 1u64
        .checked_shl(b.domains as u32)
        .map_or(u64::MAX, |x| x - 1);
    subsets
        .saturating_mul(RegState::ALL.len() as u64)
        .checked_pow(b.assets as u32)
        .unwrap_or(u64::MAX)
}

pub fn chain_name(i: usize) -> ChainId {
    ChainId::new(format!("c{}", i + 1))
}

pub fn asset_name(j: usize) -> AssetKey {
    AssetKey::new(format!("a{}", j + 1))
}

/// Every valid initial state: each asset on a non-empty chain subset, in one
/// state on all of them, unlocked. Asset `a1` varies slowest.
pub fn initial_states(b: &Bounds) -> Vec<GlobalState> {
    let placements: Vec<(u32, RegState)> = (1u32..(1 << b.domains))
        .flat_map(|mask| RegState::ALL.into_iter().map(move |s| (mask, s)))
        .collect();
    let empty = (0..b.domains).fold(GlobalState::new(), |gs, i| gs.with_chain(chain_name(i)));
    let mut out = vec![empty];
    for j in 0..b.assets {
        let mut next = Vec::with_capacity(out.len() * placements.len());
        for gs in &out {
            for &(mask, s) in &placements {
                let mut g = gs.clone();
                for i in (0..b.domains).filter(|i| mask & (1 << i) != 0) {
                    g = g.with_asset(chain_name(i), asset_name(j), s, format!("o{}", j + 1));
                }
                next.push(g);
            }
        }
        out = next;
    }
    out
}

/// Structural and preservation checks on the regulatory machine itself.
pub fn check_generic_layer(budget: u64) -> Result<ValidationReport, BudgetExceeded> {
    let sm = reg_machine_spec();
    let mut report = validate_machine(&sm);
    let identity = SymmetricMorphism::identity(&sm);
    let renaming = SymmetricMorphism::renaming(
        &sm,
        |s| format!("{s}'").as_str().into(),
        |a| format!("{a}'").as_str().into(),
    );
    for sym in [&identity, &renaming] {
        for m in [&sym.forward, &sym.backward] {
            report.extend(check_naturality(m));
            report.extend(check_sequential_preservation(m, GENERIC_SEQ_LEN, budget)?);
        }
        report.extend(check_roundtrip(sym));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub violation: Violation,
    /// Number of syncs on the path, the violating one included.
    pub depth: usize,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelCheckReport {
    pub bounds: Bounds,
    pub engine: Engine,
    pub generic: ValidationReport,
    pub initial_states: u64,
    pub states_explored: u64,
    pub transitions_checked: u64,
    pub counterexample: Option<Counterexample>,
}

impl ModelCheckReport {
    pub fn passed(&self) -> bool {
        self.generic.is_empty() && self.counterexample.is_none()
    }
}

impl fmt::Display for ModelCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let engine = self
            .engine
            .mutation()
            .map_or_else(|| "faithful".to_owned(), |m| format!("mutant {m}"));
        writeln!(f, "modelcheck {} engine={engine}", self.bounds)?;
        writeln!(f, "generic layer: {} violations", self.generic.len())?;
        for v in self.generic.violations() {
            writeln!(f, "  {v}")?;
        }
        writeln!(f, "initial states: {}", self.initial_states)?;
        writeln!(f, "states explored: {}", self.states_explored)?;
        writeln!(f, "transitions checked: {}", self.transitions_checked)?;
        match &self.counterexample {
            None => writeln!(f, "violations: 0"),
            Some(cx) => {
                writeln!(f, "violations: 1 (search stops at the first)")?;
                writeln!(f, "violation: {}", cx.violation)?;
                writeln!(f, "counterexample at depth {}:", cx.depth)?;
                for (i, s) in cx.scenario.syncs.iter().enumerate() {
                    let expect = s.expect.map_or("?", Outcome::tag);
                    writeln!(
                        f,
                        "  {}. sync({}, {}, {}) faithful result {expect}",
                        i + 1,
                        s.source,
                        s.action,
                        s.asset
                    )?;
                }
                write!(
                    f,
                    "counterexample scenario:\n{}",
                    cx.scenario.to_canonical_json()
                )
            }
        }
    }
}

type Triple = (ChainId, RegAction, AssetKey);

struct Node {
    state: GlobalState,
    depth: usize,
    /// Index of the predecessor node and the sync leading here.
    parent: Option<(usize, Triple)>,
}

pub fn model_check(
    b: Bounds,
    engine: Engine,
    budget: u64,
) -> Result<ModelCheckReport, BudgetExceeded> {
    let required = estimate_work(&b);
    if required > budget {
        return Err(BudgetExceeded { required, budget });
    }
    let generic = check_generic_layer(budget)?;

    let triples: Vec<Triple> = (0..b.domains)
        .flat_map(|i| {
            RegAction::ALL
                .into_iter()
                .flat_map(move |a| (0..b.assets).map(move |j| (chain_name(i), a, asset_name(j))))
        })
        .collect();

    let mut nodes: Vec<Node> = Vec::new();
    let mut seen: HashMap<GlobalState, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for gs in initial_states(&b) {
        let idx = nodes.len();
        seen.insert(gs.clone(), idx);
        nodes.push(Node {
            state: gs,
            depth: 0,
            parent: None,
        });
        queue.push_back(idx);
    }
    let initial = nodes.len() as u64;
    let mut report = ModelCheckReport {
        bounds: b,
        engine,
        generic,
        initial_states: initial,
        states_explored: 0,
        transitions_checked: 0,
        counterexample: None,
    };

    while let Some(idx) = queue.pop_front() {
        report.states_explored += 1;
        if nodes[idx].depth >= b.depth {
            continue;
        }
        for triple in &triples {
            let (c, a, aid) = triple;
            let gs = &nodes[idx].state;
            let result = engine.sync(c, *a, aid, gs);
            report.transitions_checked += 1;
            if let Some(v) = check_transition(gs, c, *a, aid, &result) {
                let depth = nodes[idx].depth + 1;
                let scenario = replay_scenario(&nodes, idx, triple);
                report.counterexample = Some(Counterexample {
                    violation: v,
                    depth,
                    scenario,
                });
                return Ok(report);
            }
            if let Ok(next) = result {
                if !seen.contains_key(&next) {
                    let child = nodes.len();
                    seen.insert(next.clone(), child);
                    nodes.push(Node {
                        state: next,
                        depth: nodes[idx].depth + 1,
                        parent: Some((idx, triple.clone())),
                    });
                    queue.push_back(child);
                }
            }
        }
    }
    Ok(report)
}

/// The first property violated by one sync from `gs`, if any. Only
/// transitions from valid states carry obligations.
pub fn check_transition(
    gs: &GlobalState,
    c: &ChainId,
    a: RegAction,
    aid: &AssetKey,
    result: &engine::SyncResult,
) -> Option<Violation> {
    if !gs.valid_state() {
        return None;
    }
    let step = format!("sync({c}, {a}, {aid})");
    let fail = |property: &'static str, witness: String| {
        Some(Violation {
            property,
            witness: format!("{step}: {witness}"),
        })
    };
    let sm = reg_machine_spec();
    let before = gs.to_domain_state_map();
    let generic = sync_all(&before, c, &action_id(a), aid, &sm);

    let next = match result {
        Err(f) => {
            if combined_premises(gs, c, a, aid).is_none() {
                return fail(
                    SUCCESS_GUARANTEE,
                    format!("premises hold but sync failed with {}", f.tag()),
                );
            }
            if generic.is_some() {
                return fail(
                    GENERIC_AGREEMENT,
                    format!("engine failed with {}, sync_all succeeded", f.tag()),
                );
            }
            return None;
        }
        Ok(next) => next,
    };

    let Some(current) = gs.get_reg_state(c, aid) else {
        return fail(
            REGULATORY_HOMOMORPHISM,
            "succeeded although asset is absent at source".into(),
        );
    };
    let Some(expected) = reg_transition(current, a) else {
        return fail(
            REGULATORY_HOMOMORPHISM,
            format!("succeeded although ({current}, {a}) is undefined"),
        );
    };
    let connected = gs.connected_chains(aid);
    for chain in &connected {
        let got = next.get_reg_state(chain, aid);
        if got != Some(expected) {
            let shown = got.map_or_else(|| "absent".to_owned(), |s| s.to_string());
            return fail(
                REGULATORY_HOMOMORPHISM,
                format!("chain {chain} reads {shown}, expected {expected}"),
            );
        }
    }
    if next.connected_chains(aid) != connected {
        return fail(CONNECTED_SET, "connected chains changed".into());
    }
    if let Some(v) = next.check_valid_state().violations().first() {
        return fail(VALID_STATE_PRESERVATION, v.to_string());
    }
    if let Some(v) = next.check_mirror().violations().first() {
        return fail(LOCK_MIRROR, v.to_string());
    }
    if let Some(w) = isolation_breach(gs, next, aid) {
        return fail(SYNC_ISOLATION, w);
    }
    let after = next.to_domain_state_map();
    if generic.as_ref() != Some(&after) {
        return fail(GENERIC_AGREEMENT, "projection differs from sync_all".into());
    }
    if let Some(v) = check_sync_step(&before, &after, c, &action_id(a), aid, &sm)
        .violations()
        .first()
    {
        return Some(v.clone());
    }
    None
}

fn isolation_breach(before: &GlobalState, after: &GlobalState, aid: &AssetKey) -> Option<String> {
    if before.chains().keys().ne(after.chains().keys()) {
        return Some("chain set changed".into());
    }
    for (c, tbl) in before.chains() {
        let other = &after.chains()[c];
        for (key, rec) in tbl {
            let Some(new) = other.get(key) else {
                return Some(format!("{c}/{key} disappeared"));
            };
            if key != aid && (new.reg_state != rec.reg_state || new.owner != rec.owner) {
                return Some(format!("{c}/{key} changed"));
            }
            if key == aid && new.owner != rec.owner {
                return Some(format!("{c}/{key} owner changed"));
            }
        }
        if other.len() != tbl.len() {
            return Some(format!("chain {c} gained assets"));
        }
    }
    None
}

/// Path from the root to `idx` followed by `last`, as a scenario whose
/// expectations are produced by the faithful engine.
fn replay_scenario(nodes: &[Node], idx: usize, last: &Triple) -> Scenario {
    let mut path = vec![last.clone()];
    let mut cur = idx;
    while let Some((parent, triple)) = &nodes[cur].parent {
        path.push(triple.clone());
        cur = *parent;
    }
    path.reverse();
    let mut scenario = Scenario::new(nodes[cur].state.clone());
    let mut gs = nodes[cur].state.clone();
    for (c, a, aid) in path {
        let result = engine::sync(&c, a, &aid, &gs);
        let expect = Outcome::of(&result);
        if let Ok(next) = result {
            gs = next;
        }
        scenario.syncs.push(SyncStep {
            source: c,
            action: a,
            asset: aid,
            expect: Some(expect),
            expect_state: Some(gs.clone()),
        });
    }
    scenario
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Mutation;

    fn bounds(domains: usize, assets: usize, depth: usize) -> Bounds {
        Bounds {
            domains,
            assets,
            depth,
        }
    }

    #[test]
    fn initial_state_enumeration() {
        let b = bounds(2, 1, 1);
        let states = initial_states(&b);
        assert_eq!(states.len(), 15);
        assert_eq!(initial_state_count(&b), 15);
        assert!(states.iter().all(GlobalState::valid_state));
        assert_eq!(initial_state_count(&bounds(3, 2, 1)), 35 * 35);
        assert_eq!(initial_states(&bounds(3, 2, 1)).len(), 1225);
    }

    #[test]
    fn generic_layer_is_clean() {
        assert!(check_generic_layer(DEFAULT_BUDGET).unwrap().is_empty());
    }

    #[test]
    fn faithful_small_run_is_clean() {
        let r = model_check(bounds(2, 1, 2), Engine::FAITHFUL, DEFAULT_BUDGET).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.initial_states, 15);
        assert!(r.transitions_checked > 0);
    }

    #[test]
    fn budget_is_enforced() {
        let err = model_check(bounds(3, 2, 2), Engine::FAITHFUL, 10).unwrap_err();
        assert!(err.required > 10);
    }

    #[test]
    fn each_mutation_is_caught_at_depth_one() {
        for m in Mutation::ALL {
            let r = model_check(bounds(2, 1, 2), Engine::mutated(m), DEFAULT_BUDGET).unwrap();
            let cx = r.counterexample.unwrap_or_else(|| panic!("{m} not caught"));
            assert_eq!(cx.depth, 1, "{m}");
            assert_eq!(cx.scenario.syncs.len(), 1);
        }
    }

    #[test]
    fn counterexample_replays() {
        let r = model_check(
            bounds(2, 1, 2),
            Engine::mutated(Mutation::SkipOneTarget),
            DEFAULT_BUDGET,
        )
        .unwrap();
        let cx = r.counterexample.unwrap();
        assert_eq!(cx.violation.property, REGULATORY_HOMOMORPHISM);
        let sc = &cx.scenario;
        let mut faithful = sc.initial.clone();
        let mut mutant = sc.initial.clone();
        let mut mutant_matches = true;
        for s in &sc.syncs {
            let f = engine::sync(&s.source, s.action, &s.asset, &faithful);
            assert_eq!(Some(Outcome::of(&f)), s.expect);
            faithful = f.unwrap_or(faithful);
            assert_eq!(Some(&faithful), s.expect_state.as_ref());
            let m = Engine::mutated(Mutation::SkipOneTarget)
                .sync(&s.source, s.action, &s.asset, &mutant);
            mutant = m.unwrap_or(mutant);
            mutant_matches &= Some(&mutant) == s.expect_state.as_ref();
        }
        assert!(!mutant_matches);
    }
}
