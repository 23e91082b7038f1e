//! Concrete global state and the atomic lock / validate / update / unlock
//! sync protocol.
//!
//! All operations take `&GlobalState` and return fresh values; nothing here
//! mutates its input, so a failed sync leaves the caller's state untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ids::{AssetKey, ChainId};
use crate::preservation::DomainStateMap;
use crate::regulatory::{self, reg_transition, RegAction, RegState};
use crate::report::ValidationReport;

pub const CONSISTENT_STATE: &str = "consistent_state";
pub const NO_LOCKED_WITHOUT_REASON: &str = "no_locked_without_reason";
pub const LOCK_MIRROR: &str = "lock_mirror";
pub const SUCCESS_GUARANTEE: &str = "success_guarantee";
pub const VALID_STATE_PRESERVATION: &str = "valid_state_preservation";
pub const REGULATORY_HOMOMORPHISM: &str = "regulatory_homomorphism";

/// One asset record on one chain. `locked` mirrors the global lock map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssetState {
    pub asset_id: AssetKey,
    pub reg_state: RegState,
    pub owner: String,
    pub locked: bool,
}

/// Per-chain asset tables plus the per-asset lock map.
///
/// The lock map is authoritative and stores only held locks; every
/// [`AssetState::locked`] flag is kept equal to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "StateDoc", try_from = "StateDoc")]
pub struct GlobalState {
    chains: BTreeMap<ChainId, BTreeMap<AssetKey, AssetState>>,
    locks: BTreeSet<AssetKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, thiserror::Error)]
pub enum SyncFailure {
    #[error("asset not found on source chain")]
    AssetNotFound,
    #[error("transition undefined")]
    InvalidTransition,
    #[error("asset is locked")]
    Locked,
}

impl SyncFailure {
    pub fn tag(self) -> &'static str {
        match self {
            SyncFailure::AssetNotFound => "AssetNotFound",
            SyncFailure::InvalidTransition => "InvalidTransition",
            SyncFailure::Locked => "Locked",
        }
    }
}

pub type SyncResult = Result<GlobalState, SyncFailure>;

/// Outcome tag used in traces and scenario expectations.
pub fn result_tag(r: &SyncResult) -> &'static str {
    match r {
        Ok(_) => "ok",
        Err(f) => f.tag(),
    }
}

impl GlobalState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a chain, possibly without assets.
    pub fn with_chain(mut self, c: impl Into<ChainId>) -> Self {
        self.chains.entry(c.into()).or_default();
        self
    }

    /// Places an asset on a chain, replacing any existing record.
    pub fn with_asset(
        mut self,
        c: impl Into<ChainId>,
        aid: impl Into<AssetKey>,
        state: RegState,
        owner: impl Into<String>,
    ) -> Self {
        let aid = aid.into();
        let locked = self.locks.contains(&aid);
        self.chains.entry(c.into()).or_default().insert(
            aid.clone(),
            AssetState {
                asset_id: aid,
                reg_state: state,
                owner: owner.into(),
                locked,
            },
        );
        self
    }

    pub fn chains(&self) -> &BTreeMap<ChainId, BTreeMap<AssetKey, AssetState>> {
        &self.chains
    }

    pub fn chain_ids(&self) -> impl Iterator<Item = &ChainId> {
        self.chains.keys()
    }

    /// Every asset present on at least one chain.
    pub fn assets(&self) -> BTreeSet<AssetKey> {
        self.chains
            .values()
            .flat_map(|tbl| tbl.keys().cloned())
            .collect()
    }

    pub fn asset(&self, c: &ChainId, aid: &AssetKey) -> Option<&AssetState> {
        self.chains.get(c)?.get(aid)
    }

    pub fn is_locked(&self, aid: &AssetKey) -> bool {
        self.locks.contains(aid)
    }

    pub fn held_locks(&self) -> &BTreeSet<AssetKey> {
        &self.locks
    }

    pub fn get_reg_state(&self, c: &ChainId, aid: &AssetKey) -> Option<RegState> {
        self.asset(c, aid).map(|a| a.reg_state)
    }

    pub fn asset_exists(&self, c: &ChainId, aid: &AssetKey) -> bool {
        self.get_reg_state(c, aid).is_some()
    }

    pub fn connected_chains(&self, aid: &AssetKey) -> BTreeSet<ChainId> {
        self.chains
            .iter()
            .filter(|(_, tbl)| tbl.contains_key(aid))
            .map(|(c, _)| c.clone())
            .collect()
    }

    fn set_lock(&self, aid: &AssetKey, held: bool) -> GlobalState {
        let mut out = self.clone();
        if held {
            out.locks.insert(aid.clone());
        } else {
            out.locks.remove(aid);
        }
        for tbl in out.chains.values_mut() {
            if let Some(rec) = tbl.get_mut(aid) {
                rec.locked = held;
            }
        }
        out
    }

    /// `None` when the lock is already held.
    pub fn acquire_lock(&self, aid: &AssetKey) -> Option<GlobalState> {
        if self.locks.contains(aid) {
            return None;
        }
        Some(self.set_lock(aid, true))
    }

    /// Idempotent: releasing a free lock returns an equal state.
    pub fn release_lock(&self, aid: &AssetKey) -> GlobalState {
        self.set_lock(aid, false)
    }

    /// Sets the regulatory state of `aid` on exactly `targets`.
    ///
    /// # Panics
    ///
    /// Panics if a target does not hold `aid`; callers derive targets from
    /// [`connected_chains`](Self::connected_chains).
    pub fn update_all_chains(
        &self,
        aid: &AssetKey,
        new_state: RegState,
        targets: &BTreeSet<ChainId>,
    ) -> GlobalState {
        let mut out = self.clone();
        for c in targets {
            let rec = out
                .chains
                .get_mut(c)
                .and_then(|tbl| tbl.get_mut(aid))
                .unwrap_or_else(|| panic!("update_all_chains: chain {c} does not hold {aid}"));
            rec.reg_state = new_state;
        }
        out
    }

    /// Every pair of chains holding the same asset agrees on its state.
    pub fn consistent_state(&self) -> bool {
        self.check_consistent_state().is_empty()
    }

    fn check_consistent_state(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        let mut seen: BTreeMap<&AssetKey, (&ChainId, RegState)> = BTreeMap::new();
        for (c, tbl) in &self.chains {
            for (aid, rec) in tbl {
                match seen.get(aid) {
                    Some(&(c0, s0)) if s0 != rec.reg_state => report.push(
                        CONSISTENT_STATE,
                        format!("asset {aid}: {c0} holds {s0}, {c} holds {}", rec.reg_state),
                    ),
                    Some(_) => {}
                    None => {
                        seen.insert(aid, (c, rec.reg_state));
                    }
                }
            }
        }
        report
    }

    /// No lock is held at rest.
    pub fn no_locked_without_reason(&self) -> bool {
        self.locks.is_empty()
    }

    pub fn valid_state(&self) -> bool {
        self.consistent_state() && self.no_locked_without_reason()
    }

    /// Itemized form of [`valid_state`](Self::valid_state).
    pub fn check_valid_state(&self) -> ValidationReport {
        let mut report = self.check_consistent_state();
        for aid in &self.locks {
            report.push(
                NO_LOCKED_WITHOUT_REASON,
                format!("lock held on {aid} at rest"),
            );
        }
        report
    }

    /// Every record's id matches its key and its `locked` flag matches the lock map.
    pub fn check_mirror(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        for (c, tbl) in &self.chains {
            for (aid, rec) in tbl {
                if &rec.asset_id != aid {
                    report.push(
                        LOCK_MIRROR,
                        format!("{c}/{aid}: record id is {}", rec.asset_id),
                    );
                }
                if rec.locked != self.locks.contains(aid) {
                    report.push(
                        LOCK_MIRROR,
                        format!(
                            "{c}/{aid}: record says locked={}, lock map disagrees",
                            rec.locked
                        ),
                    );
                }
            }
        }
        report
    }

    /// Projection onto the generic layer: chains become domains, records
    /// become their regulatory state.
    pub fn to_domain_state_map(&self) -> DomainStateMap {
        let mut ds = DomainStateMap::new(self.chains.keys().cloned());
        for (c, tbl) in &self.chains {
            for (aid, rec) in tbl {
                ds.table.insert(
                    (c.clone(), aid.clone()),
                    regulatory::state_id(rec.reg_state),
                );
            }
        }
        ds
    }

    /// Canonical single-line JSON with lexicographically sorted keys.
    pub fn to_canonical_json(&self) -> String {
        // serde_json's map is ordered, so going through Value sorts every key
        let value = serde_json::to_value(self).expect("state serializes");
        serde_json::to_string(&value).expect("value serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetDoc {
    state: RegState,
    owner: String,
    locked: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    chains: BTreeMap<ChainId, BTreeMap<AssetKey, AssetDoc>>,
    #[serde(default)]
    locks: BTreeMap<AssetKey, bool>,
}

impl From<GlobalState> for StateDoc {
    fn from(gs: GlobalState) -> Self {
        let mut locks: BTreeMap<AssetKey, bool> =
            gs.assets().into_iter().map(|a| (a, false)).collect();
        for aid in &gs.locks {
            locks.insert(aid.clone(), true);
        }
        let chains = gs
            .chains
            .into_iter()
            .map(|(c, tbl)| {
                let tbl = tbl
                    .into_iter()
                    .map(|(aid, rec)| {
                        (
                            aid,
                            AssetDoc {
                                state: rec.reg_state,
                                owner: rec.owner,
                                locked: rec.locked,
                            },
                        )
                    })
                    .collect();
                (c, tbl)
            })
            .collect();
        StateDoc { chains, locks }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct StateDocError(String);

impl TryFrom<StateDoc> for GlobalState {
    type Error = StateDocError;

    fn try_from(doc: StateDoc) -> Result<Self, Self::Error> {
        let locks: BTreeSet<AssetKey> = doc
            .locks
            .into_iter()
            .filter_map(|(aid, held)| held.then_some(aid))
            .collect();
        let mut chains = BTreeMap::new();
        for (c, tbl) in doc.chains {
            let mut out = BTreeMap::new();
            for (aid, rec) in tbl {
                if rec.locked != locks.contains(&aid) {
                    return Err(StateDocError(format!(
                        "chains.{c}.{aid}.locked is {} but locks.{aid} is {}",
                        rec.locked,
                        locks.contains(&aid)
                    )));
                }
                out.insert(
                    aid.clone(),
                    AssetState {
                        asset_id: aid,
                        reg_state: rec.state,
                        owner: rec.owner,
                        locked: rec.locked,
                    },
                );
            }
            chains.insert(c, out);
        }
        Ok(GlobalState { chains, locks })
    }
}

/// Deliberate engine defects used to show the model checker is sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mutation {
    /// `update_all_chains` leaves the last target chain untouched.
    SkipOneTarget,
    /// The lock acquired for the update is never released.
    SkipReleaseLock,
    /// The transition table additionally allows SEIZED --FREEZE--> FROZEN.
    AllowSeizedFreeze,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [
        Mutation::SkipOneTarget,
        Mutation::SkipReleaseLock,
        Mutation::AllowSeizedFreeze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::SkipOneTarget => "skip-target",
            Mutation::SkipReleaseLock => "skip-release",
            Mutation::AllowSeizedFreeze => "allow-seized-freeze",
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mutation::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Mutation::ALL.iter().map(|m| m.name()).collect();
                format!(
                    "unknown mutation `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// The sync protocol, optionally with a seeded defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Engine {
    mutation: Option<Mutation>,
}

impl Engine {
    pub const FAITHFUL: Engine = Engine { mutation: None };

    pub fn mutated(m: Mutation) -> Self {
        Self { mutation: Some(m) }
    }

    pub fn mutation(&self) -> Option<Mutation> {
        self.mutation
    }

    fn transition(&self, s: RegState, a: RegAction) -> Option<RegState> {
        if self.mutation == Some(Mutation::AllowSeizedFreeze)
            && s == RegState::Seized
            && a == RegAction::Freeze
        {
            return Some(RegState::Frozen);
        }
        reg_transition(s, a)
    }

    pub fn sync(
        &self,
        source: &ChainId,
        action: RegAction,
        aid: &AssetKey,
        gs: &GlobalState,
    ) -> SyncResult {
        // 1. check state
        let current = gs
            .get_reg_state(source, aid)
            .ok_or(SyncFailure::AssetNotFound)?;
        // 2. validate transition
        let new_state = self
            .transition(current, action)
            .ok_or(SyncFailure::InvalidTransition)?;
        // 3. acquire lock
        let locked = gs.acquire_lock(aid).ok_or(SyncFailure::Locked)?;
        // 4. update all chains; targets are read from the pre-lock state
        let mut targets = gs.connected_chains(aid);
        if self.mutation == Some(Mutation::SkipOneTarget) {
            targets.pop_last();
        }
        let updated = locked.update_all_chains(aid, new_state, &targets);
        // 5. release lock
        if self.mutation == Some(Mutation::SkipReleaseLock) {
            return Ok(updated);
        }
        Ok(updated.release_lock(aid))
    }

    pub fn check_combined(
        &self,
        gs: &GlobalState,
        source: &ChainId,
        action: RegAction,
        aid: &AssetKey,
    ) -> CombinedCheck {
        if let Some(reason) = combined_premises(gs, source, action, aid) {
            return CombinedCheck::PremisesUnmet(reason);
        }
        let mut report = ValidationReport::new();
        match self.sync(source, action, aid, gs) {
            Err(f) => report.push(
                SUCCESS_GUARANTEE,
                format!("sync({source}, {action}, {aid}) failed with {}", f.tag()),
            ),
            Ok(next) => {
                for v in next.check_valid_state() {
                    report.push(
                        VALID_STATE_PRESERVATION,
                        format!("after sync({source}, {action}, {aid}): {v}"),
                    );
                }
            }
        }
        CombinedCheck::Checked(report)
    }
}

/// Result of checking the combined safety/liveness guarantee at one point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CombinedCheck {
    /// The premises do not hold, so nothing is asserted.
    PremisesUnmet(String),
    Checked(ValidationReport),
}

impl CombinedCheck {
    pub fn is_ok(&self) -> bool {
        match self {
            CombinedCheck::PremisesUnmet(_) => true,
            CombinedCheck::Checked(r) => r.is_empty(),
        }
    }
}

/// `None` when every premise holds, otherwise the first unmet one.
pub fn combined_premises(
    gs: &GlobalState,
    source: &ChainId,
    action: RegAction,
    aid: &AssetKey,
) -> Option<String> {
    if !gs.valid_state() {
        return Some("state is not valid".to_owned());
    }
    let Some(s) = gs.get_reg_state(source, aid) else {
        return Some(format!("asset {aid} not on {source}"));
    };
    if reg_transition(s, action).is_none() {
        return Some(format!("({s}, {action}) undefined"));
    }
    if gs.is_locked(aid) {
        return Some(format!("asset {aid} locked"));
    }
    None
}

/// The faithful protocol.
pub fn sync(source: &ChainId, action: RegAction, aid: &AssetKey, gs: &GlobalState) -> SyncResult {
    Engine::FAITHFUL.sync(source, action, aid, gs)
}

pub fn check_combined(
    gs: &GlobalState,
    source: &ChainId,
    action: RegAction,
    aid: &AssetKey,
) -> CombinedCheck {
    Engine::FAITHFUL.check_combined(gs, source, action, aid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RegState::*;

    fn c(s: &str) -> ChainId {
        ChainId::new(s)
    }

    fn a(s: &str) -> AssetKey {
        AssetKey::new(s)
    }

    fn two_chain(state: RegState) -> GlobalState {
        GlobalState::new()
            .with_asset("c1", "a1", state, "alice")
            .with_asset("c2", "a1", state, "alice")
    }

    #[test]
    fn reads() {
        let gs = GlobalState::new()
            .with_asset("c1", "a1", Frozen, "o")
            .with_chain("c3");
        assert_eq!(gs.get_reg_state(&c("c1"), &a("a1")), Some(Frozen));
        assert_eq!(gs.get_reg_state(&c("c3"), &a("a1")), None);
        assert_eq!(gs.get_reg_state(&c("nope"), &a("a1")), None);
        assert!(gs.asset_exists(&c("c1"), &a("a1")));
        assert!(!gs.asset_exists(&c("c1"), &a("a2")));
    }

    #[test]
    fn connected_chains_is_presence() {
        let gs = two_chain(Active).with_chain("c3");
        assert_eq!(
            gs.connected_chains(&a("a1")),
            BTreeSet::from([c("c1"), c("c2")])
        );
        assert!(gs.connected_chains(&a("zz")).is_empty());
    }

    #[test]
    fn lock_acquire_release() {
        let gs = two_chain(Active).with_asset("c1", "a2", Seized, "bob");
        let locked = gs.acquire_lock(&a("a2")).unwrap();
        assert!(locked.is_locked(&a("a2")));
        assert!(!locked.is_locked(&a("a1")));
        assert!(locked.asset(&c("c1"), &a("a2")).unwrap().locked);
        assert!(locked.check_mirror().is_empty());
        assert_eq!(locked.to_domain_state_map(), gs.to_domain_state_map());
        assert!(locked.acquire_lock(&a("a2")).is_none());
        let released = locked.release_lock(&a("a2"));
        assert_eq!(released, gs);
        assert_eq!(gs.release_lock(&a("a2")), gs);
    }

    #[test]
    fn update_all_chains_touches_exactly_targets() {
        let gs = two_chain(Active)
            .with_asset("c3", "a1", Active, "alice")
            .with_asset("c1", "a2", Active, "bob");
        let targets = BTreeSet::from([c("c1"), c("c2")]);
        let out = gs.update_all_chains(&a("a1"), Frozen, &targets);
        assert_eq!(out.get_reg_state(&c("c1"), &a("a1")), Some(Frozen));
        assert_eq!(out.get_reg_state(&c("c2"), &a("a1")), Some(Frozen));
        assert_eq!(out.get_reg_state(&c("c3"), &a("a1")), Some(Active));
        assert_eq!(out.asset(&c("c1"), &a("a2")), gs.asset(&c("c1"), &a("a2")));
        assert_eq!(gs.update_all_chains(&a("a1"), Frozen, &BTreeSet::new()), gs);
    }

    #[test]
    #[should_panic(expected = "does not hold")]
    fn update_all_chains_asserts_precondition() {
        let gs = two_chain(Active).with_chain("c3");
        gs.update_all_chains(&a("a1"), Frozen, &BTreeSet::from([c("c3")]));
    }

    #[test]
    fn sync_freeze_two_chains() {
        let gs = two_chain(Active);
        let out = sync(&c("c1"), RegAction::Freeze, &a("a1"), &gs).unwrap();
        assert_eq!(out.get_reg_state(&c("c1"), &a("a1")), Some(Frozen));
        assert_eq!(out.get_reg_state(&c("c2"), &a("a1")), Some(Frozen));
        assert!(!out.is_locked(&a("a1")));
        assert!(out.valid_state());
        assert_eq!(out.asset(&c("c2"), &a("a1")).unwrap().owner, "alice");
    }

    #[test]
    fn sync_failures() {
        let gs = two_chain(Active);
        let locked = gs.acquire_lock(&a("a1")).unwrap();
        let before = locked.clone();
        assert_eq!(
            sync(&c("c1"), RegAction::Freeze, &a("a1"), &locked),
            Err(SyncFailure::Locked)
        );
        assert_eq!(locked, before);
        assert_eq!(
            sync(&c("c9"), RegAction::Freeze, &a("a1"), &gs),
            Err(SyncFailure::AssetNotFound)
        );
        let dead = two_chain(Confiscated);
        for act in RegAction::ALL {
            assert_eq!(
                sync(&c("c1"), act, &a("a1"), &dead),
                Err(SyncFailure::InvalidTransition)
            );
        }
    }

    #[test]
    fn validity() {
        assert!(two_chain(Active).valid_state());
        let split = two_chain(Active).with_asset("c2", "a1", Frozen, "alice");
        assert!(!split.valid_state());
        let held = two_chain(Active).acquire_lock(&a("a1")).unwrap();
        assert!(!held.valid_state());
        assert!(held.check_valid_state().mentions(NO_LOCKED_WITHOUT_REASON));
    }

    #[test]
    fn combined_check() {
        let gs = two_chain(Active);
        assert_eq!(
            check_combined(&gs, &c("c1"), RegAction::Seize, &a("a1")),
            CombinedCheck::Checked(ValidationReport::new())
        );
        let held = gs.acquire_lock(&a("a1")).unwrap();
        assert!(matches!(
            check_combined(&held, &c("c1"), RegAction::Seize, &a("a1")),
            CombinedCheck::PremisesUnmet(_)
        ));
        let mutant = Engine::mutated(Mutation::SkipReleaseLock);
        match mutant.check_combined(&gs, &c("c1"), RegAction::Seize, &a("a1")) {
            CombinedCheck::Checked(r) => assert!(r.mentions(VALID_STATE_PRESERVATION)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mutants_differ_from_faithful() {
        let gs = two_chain(Active);
        let skip = Engine::mutated(Mutation::SkipOneTarget)
            .sync(&c("c1"), RegAction::Freeze, &a("a1"), &gs)
            .unwrap();
        assert_eq!(skip.get_reg_state(&c("c2"), &a("a1")), Some(Active));
        let seized = two_chain(Seized);
        assert!(Engine::mutated(Mutation::AllowSeizedFreeze)
            .sync(&c("c1"), RegAction::Freeze, &a("a1"), &seized)
            .is_ok());
        for m in Mutation::ALL {
            assert_eq!(m.name().parse::<Mutation>().unwrap(), m);
        }
    }

    #[test]
    fn canonical_json_shape() {
        let gs = GlobalState::new()
            .with_asset("c2", "b", Frozen, "o2")
            .with_asset("c1", "a", Active, "o1")
            .acquire_lock(&a("b"))
            .unwrap();
        assert_eq!(
            gs.to_canonical_json(),
            r#"{"chains":{"c1":{"a":{"locked":false,"owner":"o1","state":"ACTIVE"}},"c2":{"b":{"locked":true,"owner":"o2","state":"FROZEN"}}},"locks":{"a":false,"b":true}}"#
        );
        let back: GlobalState = serde_json::from_str(&gs.to_canonical_json()).unwrap();
        assert_eq!(back, gs);
    }

    #[test]
    fn mirror_mismatch_is_rejected() {
        let doc = r#"{"chains":{"c1":{"a":{"locked":true,"owner":"o","state":"ACTIVE"}}},"locks":{"a":false}}"#;
        let err = serde_json::from_str::<GlobalState>(doc).unwrap_err();
        assert!(err.to_string().contains("chains.c1.a.locked"));
    }
}
