//! Structure-preserving maps between state machines and the generic
//! N-domain synchronization layer.
//!
//! Every property here is checked by exhaustive enumeration over the finite
//! machines involved rather than assumed.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{AssetKey, DomainId};
use crate::machine::{ActionId, StateId, StateMachineSpec};
use crate::report::ValidationReport;
use crate::BudgetExceeded;

pub const NATURALITY: &str = "naturality";
pub const NATURALITY_NONE: &str = "naturality_none";
pub const MAP_TOTAL: &str = "map_total";
pub const MAP_IMAGE: &str = "map_image";
pub const SEQUENTIAL_PRESERVATION: &str = "sequential_preservation";
pub const SEQUENTIAL_PRESERVATION_NONE: &str = "sequential_preservation_none";
pub const ROUNDTRIP_SOURCE: &str = "roundtrip_source";
pub const ROUNDTRIP_TARGET: &str = "roundtrip_target";
pub const INJECTIVITY: &str = "state_map_injective";
pub const CONSISTENT_INIT: &str = "consistent_init";
pub const CROSS_DOMAIN_CONSISTENCY: &str = "cross_domain_consistency";
pub const SYNC_ISOLATION: &str = "sync_isolation";
pub const DOMAIN_SET: &str = "domain_set_unchanged";

/// A map between two machines given by a state map and an action map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Morphism {
    pub source: StateMachineSpec,
    pub target: StateMachineSpec,
    pub state_map: BTreeMap<StateId, StateId>,
    pub action_map: BTreeMap<ActionId, ActionId>,
}

/// A forward morphism together with its intended inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetricMorphism {
    pub forward: Morphism,
    pub backward: Morphism,
}

impl Morphism {
    pub fn identity(sm: &StateMachineSpec) -> Self {
        Self {
            source: sm.clone(),
            target: sm.clone(),
            state_map: sm.states().iter().map(|s| (s.clone(), s.clone())).collect(),
            action_map: sm
                .actions()
                .iter()
                .map(|a| (a.clone(), a.clone()))
                .collect(),
        }
    }

    fn map_state(&self, s: &StateId) -> Option<&StateId> {
        self.state_map.get(s)
    }

    /// Swaps source and target and inverts both maps. Collisions keep the
    /// smallest preimage, so a non-injective map produces a lossy reverse.
    pub fn reversed(&self) -> Morphism {
        let mut state_map = BTreeMap::new();
        for (s, t) in &self.state_map {
            state_map.entry(t.clone()).or_insert_with(|| s.clone());
        }
        let mut action_map = BTreeMap::new();
        for (a, b) in &self.action_map {
            action_map.entry(b.clone()).or_insert_with(|| a.clone());
        }
        Morphism {
            source: self.target.clone(),
            target: self.source.clone(),
            state_map,
            action_map,
        }
    }
}

impl SymmetricMorphism {
    pub fn identity(sm: &StateMachineSpec) -> Self {
        let m = Morphism::identity(sm);
        Self {
            backward: m.clone(),
            forward: m,
        }
    }

    /// Renames every state and action of `sm`, producing the renamed target
    /// machine and the bijection in both directions.
    pub fn renaming(
        sm: &StateMachineSpec,
        rename_state: impl Fn(&StateId) -> StateId,
        rename_action: impl Fn(&ActionId) -> ActionId,
    ) -> Self {
        let target = StateMachineSpec::new(
            sm.states().iter().map(&rename_state),
            sm.actions().iter().map(&rename_action),
            sm.transitions()
                .iter()
                .map(|((s, a), t)| ((rename_state(s), rename_action(a)), rename_state(t))),
            sm.terminal().iter().map(&rename_state),
        );
        let forward = Morphism {
            source: sm.clone(),
            target,
            state_map: sm
                .states()
                .iter()
                .map(|s| (s.clone(), rename_state(s)))
                .collect(),
            action_map: sm
                .actions()
                .iter()
                .map(|a| (a.clone(), rename_action(a)))
                .collect(),
        };
        Self {
            backward: forward.reversed(),
            forward,
        }
    }
}

fn check_maps(m: &Morphism, report: &mut ValidationReport) {
    for s in m.source.states() {
        match m.state_map.get(s) {
            None => report.push(MAP_TOTAL, format!("state {s} has no image")),
            Some(t) if !m.target.states().contains(t) => report.push(
                MAP_IMAGE,
                format!("state {s} maps to {t}, not a target state"),
            ),
            Some(_) => {}
        }
    }
    for a in m.source.actions() {
        match m.action_map.get(a) {
            None => report.push(MAP_TOTAL, format!("action {a} has no image")),
            Some(b) if !m.target.actions().contains(b) => report.push(
                MAP_IMAGE,
                format!("action {a} maps to {b}, not a target action"),
            ),
            Some(_) => {}
        }
    }
}

/// Both naturality clauses over `source.states × source.actions`.
pub fn check_naturality(m: &Morphism) -> ValidationReport {
    let mut report = ValidationReport::new();
    check_maps(m, &mut report);
    if !report.is_empty() {
        return report;
    }
    for s in m.source.states() {
        let ms = &m.state_map[s];
        for a in m.source.actions() {
            let ma = &m.action_map[a];
            let at_target = m.target.transition_of(ms, ma);
            match m.source.transition_of(s, a) {
                Some(s2) => {
                    let expected = &m.state_map[s2];
                    if at_target != Some(expected) {
                        report.push(
                            NATURALITY,
                            format!(
                                "({s}, {a}) -> {s2}: target ({ms}, {ma}) gives {}, expected {expected}",
                                show(at_target)
                            ),
                        );
                    }
                }
                None => {
                    if let Some(t) = at_target {
                        report.push(
                            NATURALITY_NONE,
                            format!("({s}, {a}) undefined but target ({ms}, {ma}) -> {t}"),
                        );
                    }
                }
            }
        }
    }
    report
}

fn show(s: Option<&StateId>) -> String {
    s.map_or_else(|| "none".to_owned(), |s| s.to_string())
}

pub(crate) fn sequence_count(alphabet: u64, max_len: usize) -> Option<u64> {
    let mut total: u64 = 0;
    let mut layer: u64 = 1;
    for len in 0..=max_len {
        if len > 0 {
            layer = layer.checked_mul(alphabet)?;
        }
        total = total.checked_add(layer)?;
    }
    Some(total)
}

/// Calls `visit` on every sequence over `alphabet` of length `0..=max_len`,
/// shorter sequences first, each length in lexicographic index order.
fn for_each_sequence<T>(alphabet: &[T], max_len: usize, mut visit: impl FnMut(&[&T])) {
    let mut seq: Vec<&T> = Vec::with_capacity(max_len);
    visit(&seq);
    if alphabet.is_empty() {
        return;
    }
    for len in 1..=max_len {
        let mut idx = vec![0usize; len];
        loop {
            seq.clear();
            seq.extend(idx.iter().map(|&i| &alphabet[i]));
            visit(&seq);
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < alphabet.len() {
                    break;
                }
                idx[pos] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
}

/// For every source state and action sequence of length at most `max_len`,
/// compares "apply then map" with "map then apply", including agreement on
/// undefinedness.
pub fn check_sequential_preservation(
    m: &Morphism,
    max_len: usize,
    budget: u64,
) -> Result<ValidationReport, BudgetExceeded> {
    let alphabet: Vec<&ActionId> = m.source.actions().iter().collect();
    let required = sequence_count(alphabet.len() as u64, max_len)
        .and_then(|n| n.checked_mul(m.source.states().len() as u64))
        .unwrap_or(u64::MAX);
    if required > budget {
        return Err(BudgetExceeded { required, budget });
    }

    let mut report = ValidationReport::new();
    check_maps(m, &mut report);
    if !report.is_empty() {
        return Ok(report);
    }
    for s in m.source.states() {
        let ms = &m.state_map[s];
        for_each_sequence(&alphabet, max_len, |seq| {
            let at_source = m.source.apply_actions(s, seq.iter().map(|a| **a));
            let mapped: Vec<&ActionId> = seq.iter().map(|a| &m.action_map[**a]).collect();
            let at_target = m.target.apply_actions(ms, mapped.iter().copied());
            let names = || seq.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",");
            match at_source {
                Some(s2) => {
                    let expected = m.map_state(&s2);
                    if at_target.as_ref() != expected {
                        report.push(
                            SEQUENTIAL_PRESERVATION,
                            format!(
                                "from {s} via [{}]: source reaches {s2}, target gives {}",
                                names(),
                                show(at_target.as_ref())
                            ),
                        );
                    }
                }
                None => {
                    if let Some(t) = at_target {
                        report.push(
                            SEQUENTIAL_PRESERVATION_NONE,
                            format!(
                                "from {s} via [{}]: source undefined, target reaches {t}",
                                names()
                            ),
                        );
                    }
                }
            }
        });
    }
    Ok(report)
}

/// Both roundtrip identities plus injectivity of the forward state map.
pub fn check_roundtrip(sym: &SymmetricMorphism) -> ValidationReport {
    let mut report = ValidationReport::new();
    let fwd = &sym.forward;
    let bwd = &sym.backward;
    for s in fwd.source.states() {
        let back = fwd.state_map.get(s).and_then(|t| bwd.state_map.get(t));
        if back != Some(s) {
            report.push(
                ROUNDTRIP_SOURCE,
                format!("{s} -> {} -> {}", show(fwd.state_map.get(s)), show(back)),
            );
        }
    }
    for t in fwd.target.states() {
        let back = bwd.state_map.get(t).and_then(|s| fwd.state_map.get(s));
        if back != Some(t) {
            report.push(
                ROUNDTRIP_TARGET,
                format!("{t} -> {} -> {}", show(bwd.state_map.get(t)), show(back)),
            );
        }
    }
    let mut seen: BTreeMap<&StateId, &StateId> = BTreeMap::new();
    for s in fwd.source.states() {
        if let Some(t) = fwd.state_map.get(s) {
            if let Some(prev) = seen.insert(t, s) {
                report.push(INJECTIVITY, format!("{prev} and {s} both map to {t}"));
            }
        }
    }
    report
}

/// Per-domain, per-asset state table. A missing cell means the asset is not
/// present on that domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DomainStateMap {
    pub domains: BTreeSet<DomainId>,
    pub table: BTreeMap<(DomainId, AssetKey), StateId>,
}

impl DomainStateMap {
    pub fn new(domains: impl IntoIterator<Item = DomainId>) -> Self {
        Self {
            domains: domains.into_iter().collect(),
            table: BTreeMap::new(),
        }
    }

    pub fn with(
        mut self,
        d: impl Into<DomainId>,
        aid: impl Into<AssetKey>,
        s: impl Into<StateId>,
    ) -> Self {
        let d = d.into();
        self.domains.insert(d.clone());
        self.table.insert((d, aid.into()), s.into());
        self
    }

    pub fn get(&self, d: &DomainId, aid: &AssetKey) -> Option<&StateId> {
        self.table.get(&(d.clone(), aid.clone()))
    }

    pub fn assets(&self) -> BTreeSet<AssetKey> {
        self.table.keys().map(|(_, a)| a.clone()).collect()
    }

    /// Domains on which `aid` is present.
    pub fn connected_domains(&self, aid: &AssetKey) -> BTreeSet<DomainId> {
        self.table
            .keys()
            .filter(|(d, a)| a == aid && self.domains.contains(d))
            .map(|(d, _)| d.clone())
            .collect()
    }

    pub fn check_consistent_init(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        let mut first: BTreeMap<&AssetKey, (&DomainId, &StateId)> = BTreeMap::new();
        for ((d, aid), s) in &self.table {
            if !self.domains.contains(d) {
                continue;
            }
            match first.get(aid) {
                Some((d0, s0)) if *s0 != s => report.push(
                    CONSISTENT_INIT,
                    format!("asset {aid}: {d0} holds {s0}, {d} holds {s}"),
                ),
                Some(_) => {}
                None => {
                    first.insert(aid, (d, s));
                }
            }
        }
        report
    }
}

/// Applies `action` to `aid` as seen on `source` and propagates the result to
/// every domain holding `aid`. `None` when the asset is missing at the source
/// or the transition is undefined.
pub fn sync_all(
    ds: &DomainStateMap,
    source: &DomainId,
    action: &ActionId,
    aid: &AssetKey,
    sm: &StateMachineSpec,
) -> Option<DomainStateMap> {
    if !ds.domains.contains(source) {
        return None;
    }
    let current = ds.get(source, aid)?;
    let next = sm.transition_of(current, action)?.clone();
    let mut out = ds.clone();
    for d in ds.connected_domains(aid) {
        out.table.insert((d, aid.clone()), next.clone());
    }
    Some(out)
}

/// Post-conditions of one successful `sync_all` step: every connected domain
/// reads the new state, every other asset is untouched, the domain set is
/// unchanged and `consistent_init` still holds.
pub fn check_sync_step(
    before: &DomainStateMap,
    after: &DomainStateMap,
    source: &DomainId,
    action: &ActionId,
    aid: &AssetKey,
    sm: &StateMachineSpec,
) -> ValidationReport {
    let mut report = ValidationReport::new();
    let step = format!("sync_all({source}, {action}, {aid})");
    if before.domains != after.domains {
        report.push(DOMAIN_SET, format!("{step} changed the domain set"));
    }
    let expected = before
        .get(source, aid)
        .and_then(|s| sm.transition_of(s, action));
    let connected = before.connected_domains(aid);
    for d in &connected {
        let got = after.get(d, aid);
        if expected.is_none() || got != expected {
            report.push(
                CROSS_DOMAIN_CONSISTENCY,
                format!(
                    "{step}: domain {d} reads {}, expected {}",
                    show(got),
                    show(expected)
                ),
            );
        }
    }
    for d in after.domains.iter().filter(|d| !connected.contains(*d)) {
        if after.get(d, aid).is_some() {
            report.push(
                CROSS_DOMAIN_CONSISTENCY,
                format!("{step}: asset appeared on unconnected domain {d}"),
            );
        }
    }
    let others = |m: &DomainStateMap| -> Vec<((DomainId, AssetKey), StateId)> {
        m.table
            .iter()
            .filter(|((_, a), _)| a != aid)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    };
    if others(before) != others(after) {
        report.push(
            SYNC_ISOLATION,
            format!("{step} changed cells of other assets"),
        );
    }
    for v in after.check_consistent_init() {
        report.push(CONSISTENT_INIT, format!("after {step}: {}", v.witness));
    }
    report
}

/// Signature of a `sync_all` implementation, so checkers can run against
/// deliberately broken variants.
pub type SyncAllFn<'a> = dyn Fn(
        &DomainStateMap,
        &DomainId,
        &ActionId,
        &AssetKey,
        &StateMachineSpec,
    ) -> Option<DomainStateMap>
    + 'a;

/// Exhaustive check of every sequence of at most `depth` `sync_all` calls.
pub fn check_multi_domain(
    ds: &DomainStateMap,
    sm: &StateMachineSpec,
    depth: usize,
    budget: u64,
) -> Result<ValidationReport, BudgetExceeded> {
    check_multi_domain_with(ds, sm, depth, budget, &sync_all)
}

pub fn check_multi_domain_with(
    ds: &DomainStateMap,
    sm: &StateMachineSpec,
    depth: usize,
    budget: u64,
    sync_impl: &SyncAllFn<'_>,
) -> Result<ValidationReport, BudgetExceeded> {
    let assets = ds.assets();
    let mut triples = Vec::new();
    for d in &ds.domains {
        for a in sm.actions() {
            for aid in &assets {
                triples.push((d, a, aid));
            }
        }
    }
    let required = sequence_count(triples.len() as u64, depth).unwrap_or(u64::MAX);
    if required > budget {
        return Err(BudgetExceeded { required, budget });
    }

    let mut report = ValidationReport::new();
    let init = ds.check_consistent_init();
    if !init.is_empty() {
        for v in init {
            report.push(CONSISTENT_INIT, format!("precondition: {}", v.witness));
        }
        return Ok(report);
    }

    // depth-first over call sequences, recording the path for witnesses
    let mut stack: Vec<(DomainStateMap, Vec<String>)> = vec![(ds.clone(), Vec::new())];
    while let Some((cur, path)) = stack.pop() {
        if path.len() == depth {
            continue;
        }
        for &(d, a, aid) in triples.iter().rev() {
            let Some(next) = sync_impl(&cur, d, a, aid, sm) else {
                continue;
            };
            let mut step_path = path.clone();
            step_path.push(format!("{d}:{a}:{aid}"));
            for v in check_sync_step(&cur, &next, d, a, aid, sm) {
                report.push(
                    v.property,
                    format!("[{}] {}", step_path.join(" "), v.witness),
                );
            }
            stack.push((next, step_path));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regulatory::reg_machine_spec;

    fn primed(sm: &StateMachineSpec) -> SymmetricMorphism {
        SymmetricMorphism::renaming(
            sm,
            |s| StateId::new(format!("{s}'")),
            |a| ActionId::new(format!("{a}'")),
        )
    }

    #[test]
    fn sequence_enumeration_counts() {
        let alphabet = ['x', 'y', 'z'];
        let mut n = 0;
        let mut seen = BTreeSet::new();
        for_each_sequence(&alphabet, 3, |seq| {
            n += 1;
            seen.insert(seq.iter().map(|c| **c).collect::<String>());
        });
        assert_eq!(n, 1 + 3 + 9 + 27);
        assert_eq!(seen.len(), n);
        assert_eq!(sequence_count(3, 3), Some(40));
        assert_eq!(sequence_count(7, 4), Some(2801));
    }

    #[test]
    fn identity_and_renaming_are_natural() {
        let sm = reg_machine_spec();
        assert!(check_naturality(&Morphism::identity(&sm)).is_empty());
        let sym = primed(&sm);
        assert!(sym.forward.target.validate().is_empty());
        assert!(check_naturality(&sym.forward).is_empty());
        assert!(check_naturality(&sym.backward).is_empty());
        assert!(check_roundtrip(&sym).is_empty());
        assert!(check_roundtrip(&SymmetricMorphism::identity(&sm)).is_empty());
    }

    #[test]
    fn collapsing_frozen_and_seized_breaks_naturality() {
        let sm = reg_machine_spec();
        let mut m = Morphism::identity(&sm);
        m.state_map.insert("FROZEN".into(), "SEIZED".into());
        let report = check_naturality(&m);
        assert!(!report.is_empty());
        // FROZEN --SEIZE--> SEIZED, but the image SEIZED has no SEIZE transition
        assert!(report
            .violations()
            .iter()
            .any(|v| v.property == NATURALITY && v.witness.starts_with("(FROZEN, SEIZE)")));
        let seq = check_sequential_preservation(&m, 1, u64::MAX).unwrap();
        assert!(!seq.is_empty());
    }

    #[test]
    fn collapsing_forward_map_fails_roundtrip() {
        let sm = reg_machine_spec();
        let mut sym = SymmetricMorphism::identity(&sm);
        sym.forward
            .state_map
            .insert("FROZEN".into(), "SEIZED".into());
        let report = check_roundtrip(&sym);
        assert!(report.mentions(INJECTIVITY));
        assert!(report.mentions(ROUNDTRIP_SOURCE));
        assert!(report
            .violations()
            .iter()
            .any(|v| v.witness == "FROZEN and SEIZED both map to SEIZED"));
    }

    #[test]
    fn sequential_budget_is_enforced() {
        let sm = reg_machine_spec();
        let err = check_sequential_preservation(&Morphism::identity(&sm), 4, 1000).unwrap_err();
        assert_eq!(err.required, 5 * 2801);
    }

    #[test]
    fn sync_all_updates_every_holder() {
        let sm = reg_machine_spec();
        let ds = DomainStateMap::new([])
            .with("d1", "a1", "ACTIVE")
            .with("d2", "a1", "ACTIVE");
        let out = sync_all(&ds, &"d1".into(), &"FREEZE".into(), &"a1".into(), &sm).unwrap();
        assert_eq!(out.get(&"d1".into(), &"a1".into()), Some(&"FROZEN".into()));
        assert_eq!(out.get(&"d2".into(), &"a1".into()), Some(&"FROZEN".into()));
        assert_eq!(out.domains, ds.domains);
    }

    #[test]
    fn sync_all_missing_asset_or_invalid_transition() {
        let sm = reg_machine_spec();
        let ds = DomainStateMap::new(["d2".into()]).with("d1", "a1", "SEIZED");
        assert!(sync_all(&ds, &"d2".into(), &"FREEZE".into(), &"a1".into(), &sm).is_none());
        assert!(sync_all(&ds, &"d1".into(), &"FREEZE".into(), &"a1".into(), &sm).is_none());
        assert!(sync_all(&ds, &"d9".into(), &"SEIZE".into(), &"a1".into(), &sm).is_none());
    }

    #[test]
    fn sync_all_leaves_unconnected_domain_alone() {
        let sm = reg_machine_spec();
        let ds = DomainStateMap::new([])
            .with("d1", "a1", "ACTIVE")
            .with("d2", "a1", "ACTIVE")
            .with("d3", "a2", "FROZEN");
        let out = sync_all(&ds, &"d1".into(), &"SEIZE".into(), &"a1".into(), &sm).unwrap();
        // oracle diff: exactly the two a1 cells changed
        let changed: Vec<_> = ds
            .table
            .iter()
            .filter(|(k, v)| out.table.get(*k) != Some(*v))
            .map(|((d, a), _)| format!("{d}/{a}"))
            .collect();
        assert_eq!(changed, vec!["d1/a1", "d2/a1"]);
        assert_eq!(out.table.len(), ds.table.len());
        assert_eq!(out.get(&"d3".into(), &"a2".into()), Some(&"FROZEN".into()));
    }

    #[test]
    fn multi_domain_small_instances() {
        let sm = reg_machine_spec();
        let two = DomainStateMap::new([])
            .with("d1", "a1", "ACTIVE")
            .with("d2", "a1", "ACTIVE");
        assert!(check_multi_domain(&two, &sm, 3, u64::MAX)
            .unwrap()
            .is_empty());
        let three = DomainStateMap::new(["d3".into()])
            .with("d1", "a1", "RESTRICTED")
            .with("d2", "a1", "RESTRICTED")
            .with("d2", "a2", "ACTIVE")
            .with("d3", "a2", "ACTIVE");
        assert!(check_multi_domain(&three, &sm, 2, u64::MAX)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn multi_domain_catches_skipped_target() {
        let sm = reg_machine_spec();
        let ds = DomainStateMap::new([])
            .with("d1", "a1", "ACTIVE")
            .with("d2", "a1", "ACTIVE");
        let broken = |ds: &DomainStateMap,
                      source: &DomainId,
                      action: &ActionId,
                      aid: &AssetKey,
                      sm: &StateMachineSpec| {
            let current = ds.get(source, aid)?;
            let next = sm.transition_of(current, action)?.clone();
            let mut out = ds.clone();
            // only the source is updated
            out.table.insert((source.clone(), aid.clone()), next);
            Some(out)
        };
        let report = check_multi_domain_with(&ds, &sm, 1, u64::MAX, &broken).unwrap();
        assert!(report.mentions(CROSS_DOMAIN_CONSISTENCY));
    }

    #[test]
    fn multi_domain_rejects_inconsistent_start() {
        let sm = reg_machine_spec();
        let ds = DomainStateMap::new([])
            .with("d1", "a1", "ACTIVE")
            .with("d2", "a1", "FROZEN");
        let report = check_multi_domain(&ds, &sm, 1, u64::MAX).unwrap();
        assert!(report.mentions(CONSISTENT_INIT));
    }
}
