//! Byzantine liveness model: timeout locks, BFT configuration checks, leader
//! schedules, and an epoch simulator for the pending-request count.
//!
//! Time is discrete. One epoch is one time unit for both the leader schedule
//! and the lock clock. Locks whose timeout has passed are force-released at the
//! start of each epoch step.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{self, GlobalState};
use crate::ids::AssetKey;
use crate::priority::{self, PriorityConfig, PriorityError, RegRequest};
use crate::report::ValidationReport;

pub const BFT_THRESHOLD: &str = "bft_threshold";
pub const BYZANTINE_BOUND: &str = "byzantine_bound";
pub const TIMEOUT_POSITIVE: &str = "timeout_positive";
pub const FAIRNESS_POSITIVE: &str = "fairness_positive";
pub const HONEST_MAJORITY: &str = "honest_majority";
pub const UNIQUE_NODE_IDS: &str = "unique_node_ids";
pub const FAIR_LEADER: &str = "fair_leader";
pub const STARVATION_BOUND: &str = "starvation_bound";
pub const EVENTUAL_COMPLETION: &str = "eventual_completion";
pub const NON_HONEST_BOUNDED: &str = "non_honest_bounded";
pub const SINGLE_RESOURCE: &str = "single_resource";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LivenessError {
    #[error("lock timeout must be positive")]
    ZeroTimeout,
    #[error("fairness bound must be positive")]
    ZeroFairnessBound,
    #[error("configuration has no honest nodes")]
    NoHonestNodes,
    #[error("configuration has no Byzantine nodes")]
    NoByzantineNodes,
    #[error("generated schedule violates fair_leader: {0}")]
    UnfairSchedule(String),
    #[error("epoch {epoch} is outside the schedule horizon {horizon}")]
    OutsideSchedule { epoch: u64, horizon: u64 },
    #[error("lock discipline violated: {0}")]
    LockDiscipline(String),
    #[error(transparent)]
    Priority(#[from] PriorityError),
}

/// True while a lock taken at `lock_time` is still in force at `current_time`.
pub fn lock_effective(
    lock_time: u64,
    current_time: u64,
    timeout: u64,
) -> Result<bool, LivenessError> {
    if timeout == 0 {
        return Err(LivenessError::ZeroTimeout);
    }
    Ok(current_time < lock_time.saturating_add(timeout))
}

/// First instant at which a lock taken at `lock_time` is no longer effective.
pub fn expiry_time(lock_time: u64, timeout: u64) -> Result<u64, LivenessError> {
    if timeout == 0 {
        return Err(LivenessError::ZeroTimeout);
    }
    Ok(lock_time.saturating_add(timeout))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeInfo {
    #[serde(rename = "id")]
    pub node_id: u64,
    pub honest: bool,
}

/// How Byzantine leaders use the lock-withholding attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Withholding {
    /// Byzantine leaders never lock.
    None,
    /// Byzantine leaders withhold a lock only while at least `lock_timeout`
    /// pending requests stay on unlocked assets, so every honest epoch can
    /// still make progress.
    #[default]
    Bounded,
    /// Byzantine leaders withhold a lock on any pending request's asset.
    Unbounded,
}

impl Withholding {
    pub fn name(self) -> &'static str {
        match self {
            Withholding::None => "none",
            Withholding::Bounded => "bounded",
            Withholding::Unbounded => "unbounded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub nodes: Vec<NodeInfo>,
    pub f_max: u64,
    pub lock_timeout: u64,
    pub fairness_bound: u64,
    pub priority: PriorityConfig,
    pub seed: u64,
    pub withholding: Withholding,
}

impl SimConfig {
    /// `n` nodes with ids `0..n`, the last `byzantine` of them Byzantine.
    pub fn uniform(
        n: u64,
        byzantine: u64,
        f_max: u64,
        lock_timeout: u64,
        fairness_bound: u64,
    ) -> Self {
        let nodes = (0..n)
            .map(|id| NodeInfo {
                node_id: id,
                honest: id < n.saturating_sub(byzantine),
            })
            .collect();
        Self {
            nodes,
            f_max,
            lock_timeout,
            fairness_bound,
            priority: PriorityConfig::default(),
            seed: 0,
            withholding: Withholding::default(),
        }
    }

    pub fn honest_count(&self) -> u64 {
        self.nodes.iter().filter(|n| n.honest).count() as u64
    }

    pub fn byzantine_count(&self) -> u64 {
        self.nodes.len() as u64 - self.honest_count()
    }

    fn sorted_nodes(&self, honest: bool) -> Vec<NodeInfo> {
        let mut v: Vec<NodeInfo> = self
            .nodes
            .iter()
            .copied()
            .filter(|n| n.honest == honest)
            .collect();
        v.sort();
        v
    }
}

/// Checks the BFT assumptions and the derived honest majority.
pub fn validate_bft_config(cfg: &SimConfig) -> ValidationReport {
    let mut report = ValidationReport::new();
    let n = cfg.nodes.len() as u64;
    let ids: BTreeSet<u64> = cfg.nodes.iter().map(|x| x.node_id).collect();
    if ids.len() as u64 != n {
        report.push(UNIQUE_NODE_IDS, "node ids are not unique");
    }
    let needed = cfg.f_max.saturating_mul(3).saturating_add(1);
    if n < needed {
        report.push(
            BFT_THRESHOLD,
            format!("{n} nodes < 3 * f_max + 1 = {needed}"),
        );
    }
    let byz = cfg.byzantine_count();
    if byz > cfg.f_max {
        report.push(
            BYZANTINE_BOUND,
            format!("{byz} Byzantine nodes > f_max = {}", cfg.f_max),
        );
    }
    if cfg.lock_timeout == 0 {
        report.push(TIMEOUT_POSITIVE, "lock_timeout is 0");
    }
    if cfg.fairness_bound == 0 {
        report.push(FAIRNESS_POSITIVE, "fairness_bound is 0");
    }
    let honest = cfg.honest_count();
    if honest <= cfg.f_max.saturating_mul(2) {
        report.push(
            HONEST_MAJORITY,
            format!("{honest} honest nodes <= 2 * f_max = {}", cfg.f_max * 2),
        );
    }
    report
}

/// Leader per epoch over `[0, horizon)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaderSchedule {
    leaders: Vec<NodeInfo>,
}

impl LeaderSchedule {
    pub fn new(leaders: Vec<NodeInfo>) -> Self {
        Self { leaders }
    }

    pub fn horizon(&self) -> u64 {
        self.leaders.len() as u64
    }

    pub fn leader_at(&self, epoch: u64) -> Option<NodeInfo> {
        usize::try_from(epoch)
            .ok()
            .and_then(|e| self.leaders.get(e))
            .copied()
    }

    pub fn leaders(&self) -> &[NodeInfo] {
        &self.leaders
    }

    /// Every full window of `fairness_bound` consecutive epochs has an honest leader.
    pub fn check_fair_leader(&self, fairness_bound: u64) -> ValidationReport {
        let mut report = ValidationReport::new();
        if fairness_bound == 0 {
            report.push(FAIRNESS_POSITIVE, "fairness_bound is 0");
            return report;
        }
        let k = fairness_bound as usize;
        if self.leaders.len() < k {
            return report;
        }
        for (start, window) in self.leaders.windows(k).enumerate() {
            if !window.iter().any(|n| n.honest) {
                report.push(
                    FAIR_LEADER,
                    format!("no honest leader in epochs [{start}, {})", start + k),
                );
            }
        }
        report
    }

    pub fn longest_byzantine_run(&self) -> u64 {
        let mut best = 0;
        let mut run = 0;
        for n in &self.leaders {
            if n.honest {
                run = 0;
            } else {
                run += 1;
                best = best.max(run);
            }
        }
        best
    }

    fn validated(self, fairness_bound: u64) -> Result<Self, LivenessError> {
        let report = self.check_fair_leader(fairness_bound);
        if report.is_empty() {
            Ok(self)
        } else {
            Err(LivenessError::UnfairSchedule(report.to_string()))
        }
    }
}

/// Seeded pseudorandom leaders, with an honest leader forced whenever a
/// Byzantine run would otherwise reach `fairness_bound`.
pub fn gen_fair_schedule(cfg: &SimConfig, horizon: u64) -> Result<LeaderSchedule, LivenessError> {
    if cfg.fairness_bound == 0 {
        return Err(LivenessError::ZeroFairnessBound);
    }
    let honest = cfg.sorted_nodes(true);
    if honest.is_empty() {
        return Err(LivenessError::NoHonestNodes);
    }
    let mut all = cfg.nodes.clone();
    all.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = 0u64;
    let mut leaders = Vec::with_capacity(horizon as usize);
    for _ in 0..horizon {
        let mut pick = all[rng.gen_range(0..all.len())];
        if !pick.honest && run + 1 >= cfg.fairness_bound {
            pick = honest[rng.gen_range(0..honest.len())];
        }
        run = if pick.honest { 0 } else { run + 1 };
        leaders.push(pick);
    }
    LeaderSchedule::new(leaders).validated(cfg.fairness_bound)
}

/// Worst case allowed by fairness: Byzantine runs of exactly
/// `fairness_bound - 1` epochs, each followed by one honest epoch.
pub fn gen_adversarial_schedule(
    cfg: &SimConfig,
    horizon: u64,
) -> Result<LeaderSchedule, LivenessError> {
    if cfg.fairness_bound == 0 {
        return Err(LivenessError::ZeroFairnessBound);
    }
    let honest = cfg.sorted_nodes(true);
    let byzantine = cfg.sorted_nodes(false);
    if byzantine.is_empty() {
        return Err(LivenessError::NoByzantineNodes);
    }
    if honest.is_empty() {
        return Err(LivenessError::NoHonestNodes);
    }
    let k = cfg.fairness_bound;
    let mut leaders = Vec::with_capacity(horizon as usize);
    let (mut next_byz, mut next_honest) = (0usize, 0usize);
    for e in 0..horizon {
        if e % k < k - 1 {
            leaders.push(byzantine[next_byz % byzantine.len()]);
            next_byz += 1;
        } else {
            leaders.push(honest[next_honest % honest.len()]);
            next_honest += 1;
        }
    }
    LeaderSchedule::new(leaders).validated(k)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRequest {
    /// Position of the request in the scenario's request list.
    pub id: usize,
    pub request: RegRequest,
}

/// A lock withheld by a Byzantine node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockHold {
    pub acquired: u64,
    pub holder: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimState {
    pub epoch: u64,
    pub pending: Vec<PendingRequest>,
    pub global: GlobalState,
    pub lock_times: BTreeMap<AssetKey, LockHold>,
}

impl SimState {
    pub fn new(global: GlobalState, requests: impl IntoIterator<Item = RegRequest>) -> Self {
        Self {
            epoch: 0,
            pending: requests
                .into_iter()
                .enumerate()
                .map(|(id, request)| PendingRequest { id, request })
                .collect(),
            global,
            lock_times: BTreeMap::new(),
        }
    }

    /// Withheld locks agree with the global lock map, and no node holds two.
    pub fn check_lock_discipline(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        let withheld: BTreeSet<&AssetKey> = self.lock_times.keys().collect();
        let held: BTreeSet<&AssetKey> = self.global.held_locks().iter().collect();
        if withheld != held {
            report.push(
                SINGLE_RESOURCE,
                format!(
                    "epoch {}: withheld {withheld:?} but held {held:?}",
                    self.epoch
                ),
            );
        }
        let mut per_holder: BTreeMap<u64, Vec<&AssetKey>> = BTreeMap::new();
        for (aid, hold) in &self.lock_times {
            per_holder.entry(hold.holder).or_default().push(aid);
        }
        for (node, assets) in per_holder {
            if assets.len() > 1 {
                report.push(
                    SINGLE_RESOURCE,
                    format!("epoch {}: node {node} holds {assets:?}", self.epoch),
                );
            }
        }
        report
    }

    fn pending_on_unlocked(&self) -> usize {
        self.pending
            .iter()
            .filter(|p| !self.global.is_locked(&p.request.asset))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LockEventKind {
    Acquire,
    Release,
    Expire,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockEvent {
    pub asset: AssetKey,
    pub event: LockEventKind,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub leader: u64,
    pub honest: bool,
    pub pending_before: usize,
    pub pending_after: usize,
    pub processed: Option<usize>,
    pub lock_events: Vec<LockEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EpochTrace {
    pub initial_pending: usize,
    pub entries: Vec<EpochRecord>,
}

impl EpochTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn final_pending(&self) -> usize {
        self.entries
            .last()
            .map_or(self.initial_pending, |r| r.pending_after)
    }

    /// One JSON object per epoch, keys sorted, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.entries {
            let value = serde_json::to_value(rec).expect("record serializes");
            out.push_str(&serde_json::to_string(&value).expect("value serializes"));
            out.push('\n');
        }
        out
    }
}

/// Advances the simulation by one epoch.
pub fn step_epoch(
    s: &SimState,
    sched: &LeaderSchedule,
    cfg: &SimConfig,
) -> Result<(SimState, EpochRecord), LivenessError> {
    let epoch = s.epoch;
    let leader = sched
        .leader_at(epoch)
        .ok_or(LivenessError::OutsideSchedule {
            epoch,
            horizon: sched.horizon(),
        })?;
    let mut next = s.clone();
    let mut events = Vec::new();

    // (1) forced release of expired withheld locks
    let mut expired = Vec::new();
    for (aid, hold) in &s.lock_times {
        if !lock_effective(hold.acquired, epoch, cfg.lock_timeout)? {
            expired.push(aid.clone());
        }
    }
    for aid in expired {
        next.lock_times.remove(&aid);
        next.global = next.global.release_lock(&aid);
        events.push(LockEvent {
            asset: aid,
            event: LockEventKind::Expire,
            epoch,
        });
    }

    let pending_before = next.pending.len();
    let mut processed = None;

    if leader.honest {
        // (2) process the best request whose asset is not withheld
        if let Some(pos) = pick_processable(&next, cfg)? {
            let item = next.pending.remove(pos);
            let req = &item.request;
            let source = next.global.connected_chains(&req.asset).into_iter().next();
            let result = match &source {
                Some(c) => engine::sync(c, req.action, &req.asset, &next.global),
                None => Err(engine::SyncFailure::AssetNotFound),
            };
            if let Ok(gs) = result {
                next.global = gs;
                for event in [LockEventKind::Acquire, LockEventKind::Release] {
                    events.push(LockEvent {
                        asset: req.asset.clone(),
                        event,
                        epoch,
                    });
                }
            }
            processed = Some(item.id);
        }
    } else if let Some(aid) = withholding_target(&next, leader, cfg) {
        // (3) Byzantine leader: process nothing, maybe withhold a lock
        next.global = next
            .global
            .acquire_lock(&aid)
            .expect("withholding target is unlocked");
        next.lock_times.insert(
            aid.clone(),
            LockHold {
                acquired: epoch,
                holder: leader.node_id,
            },
        );
        events.push(LockEvent {
            asset: aid,
            event: LockEventKind::Acquire,
            epoch,
        });
    }

    next.epoch = epoch + 1;
    let discipline = next.check_lock_discipline();
    if !discipline.is_empty() {
        return Err(LivenessError::LockDiscipline(discipline.to_string()));
    }
    let record = EpochRecord {
        epoch,
        leader: leader.node_id,
        honest: leader.honest,
        pending_before,
        pending_after: next.pending.len(),
        processed,
        lock_events: events,
    };
    Ok((next, record))
}

/// Position in `pending` of the request an honest leader processes: the
/// overall winner if its asset is free, otherwise the best request on a free
/// asset, otherwise none.
fn pick_processable(s: &SimState, cfg: &SimConfig) -> Result<Option<usize>, LivenessError> {
    let requests: Vec<RegRequest> = s.pending.iter().map(|p| p.request.clone()).collect();
    let Some(top) = priority::select_highest_index(&requests, &cfg.priority)? else {
        return Ok(None);
    };
    if !s.global.is_locked(&requests[top].asset) {
        return Ok(Some(top));
    }
    let free: Vec<usize> = (0..requests.len())
        .filter(|&i| !s.global.is_locked(&requests[i].asset))
        .collect();
    let free_requests: Vec<RegRequest> = free.iter().map(|&i| requests[i].clone()).collect();
    Ok(priority::select_highest_index(&free_requests, &cfg.priority)?.map(|j| free[j]))
}

fn withholding_target(
    s: &SimState,
    leader: NodeInfo,
    cfg: &SimConfig,
) -> Option<AssetKey> {
    if cfg.withholding == Withholding::None {
        return None;
    }
    if s.lock_times.values().any(|h| h.holder == leader.node_id) {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(s.epoch);
    if !rng.gen_bool(0.5) {
        return None;
    }
    let unlocked_pending = s.pending_on_unlocked();
    let candidates: Vec<AssetKey> = s
        .pending
        .iter()
        .map(|p| &p.request.asset)
        .filter(|aid| !s.global.is_locked(aid))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|aid| match cfg.withholding {
            Withholding::Bounded => {
                let blocked = s
                    .pending
                    .iter()
                    .filter(|p| &p.request.asset == *aid)
                    .count();
                (unlocked_pending - blocked) as u64 >= cfg.lock_timeout
            }
            _ => true,
        })
        .cloned()
        .collect();
    candidates.choose(&mut rng).cloned()
}

/// Steps until nothing is pending, `max_epochs` steps have run, or the
/// schedule ends. Returns the trace and the final state.
pub fn run_until_drained(
    s0: &SimState,
    sched: &LeaderSchedule,
    cfg: &SimConfig,
    max_epochs: u64,
) -> Result<(EpochTrace, SimState), LivenessError> {
    let requests: Vec<RegRequest> = s0.pending.iter().map(|p| p.request.clone()).collect();
    // keys must be injective over the whole request set, not just per epoch
    priority::select_highest_index(&requests, &cfg.priority)?;
    let mut trace = EpochTrace {
        initial_pending: s0.pending.len(),
        entries: Vec::new(),
    };
    let mut state = s0.clone();
    let mut steps = 0;
    while !state.pending.is_empty() && steps < max_epochs && state.epoch < sched.horizon() {
        let (next, record) = step_epoch(&state, sched, cfg)?;
        trace.entries.push(record);
        state = next;
        steps += 1;
    }
    Ok((trace, state))
}

/// Every epoch with positive pending is followed, within `k` epochs, by a
/// strict decrease. Windows running past the end of a truncated trace are
/// inconclusive and skipped.
pub fn check_starvation_bound(tr: &EpochTrace, k: u64) -> ValidationReport {
    let mut report = ValidationReport::new();
    let k = k as usize;
    let n = tr.entries.len();
    for (i, rec) in tr.entries.iter().enumerate() {
        if rec.pending_before == 0 {
            continue;
        }
        let end = (i + k).min(n);
        let progressed = tr.entries[i..end]
            .iter()
            .any(|r| r.pending_after < r.pending_before);
        if !progressed && i + k <= n {
            report.push(
                STARVATION_BOUND,
                format!(
                    "no decrease in epochs [{}, {}) at pending {}",
                    rec.epoch,
                    rec.epoch + k as u64,
                    rec.pending_before
                ),
            );
        }
    }
    report
}

pub fn check_eventual_completion(tr: &EpochTrace) -> ValidationReport {
    let mut report = ValidationReport::new();
    let residual = tr.final_pending();
    if residual > 0 {
        report.push(
            EVENTUAL_COMPLETION,
            format!(
                "{residual} requests still pending after {} epochs",
                tr.len()
            ),
        );
    }
    report
}

/// No epoch increases the pending count.
pub fn check_monotone_pending(tr: &EpochTrace) -> ValidationReport {
    let mut report = ValidationReport::new();
    for rec in &tr.entries {
        if rec.pending_after > rec.pending_before {
            report.push(
                NON_HONEST_BOUNDED,
                format!(
                    "epoch {}: pending grew {} -> {}",
                    rec.epoch, rec.pending_before, rec.pending_after
                ),
            );
        }
    }
    report
}
