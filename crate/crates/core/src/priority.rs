//! Deterministic conflict resolution between pending regulatory requests.
//!
//! Each request maps to a 4-tuple key compared lexicographically:
//! authority rank, inverted timestamp (earlier wins), action severity, and
//! inverted node id as the final tiebreaker. Selection picks the unique
//! maximum; equal keys for different requests are a hard error.

use serde::{Deserialize, Serialize};

use crate::ids::AssetKey;
use crate::regulatory::RegAction;
use crate::report::ValidationReport;

pub const KEY_INJECTIVITY: &str = "priority_key_injectivity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuthorityLevel {
    Regional,
    National,
    International,
}

impl AuthorityLevel {
    pub const ALL: [AuthorityLevel; 3] = [
        AuthorityLevel::Regional,
        AuthorityLevel::National,
        AuthorityLevel::International,
    ];
}

pub fn authority_rank(level: AuthorityLevel) -> u64 {
    match level {
        AuthorityLevel::Regional => 1,
        AuthorityLevel::National => 2,
        AuthorityLevel::International => 3,
    }
}

/// Escalating and irreversible actions outrank reversals.
pub fn action_severity(action: RegAction) -> u64 {
    match action {
        RegAction::Confiscate => 7,
        RegAction::Seize => 6,
        RegAction::Freeze => 5,
        RegAction::Restrict => 4,
        RegAction::Release => 3,
        RegAction::Unfreeze => 2,
        RegAction::Unrestrict => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegRequest {
    #[serde(rename = "node")]
    pub node_id: u64,
    pub authority: AuthorityLevel,
    pub timestamp: u64,
    pub action: RegAction,
    pub asset: AssetKey,
}

/// Inversion horizons. Timestamps and node ids above them are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorityConfig {
    pub t_max: u64,
    pub n_max: u64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        Self {
            t_max: u32::MAX as u64,
            n_max: u32::MAX as u64,
        }
    }
}

/// Compared lexicographically, first component most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PriorityKey(pub u64, pub u64, pub u64, pub u64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PriorityError {
    #[error("timestamp {timestamp} exceeds horizon {t_max}")]
    TimestampHorizon { timestamp: u64, t_max: u64 },
    #[error("node id {node_id} exceeds horizon {n_max}")]
    NodeHorizon { node_id: u64, n_max: u64 },
    #[error("requests #{first} and #{second} share priority key {key:?}")]
    DuplicateKey {
        first: usize,
        second: usize,
        key: PriorityKey,
    },
}

pub fn priority_key(r: &RegRequest, cfg: &PriorityConfig) -> Result<PriorityKey, PriorityError> {
    if r.timestamp > cfg.t_max {
        return Err(PriorityError::TimestampHorizon {
            timestamp: r.timestamp,
            t_max: cfg.t_max,
        });
    }
    if r.node_id > cfg.n_max {
        return Err(PriorityError::NodeHorizon {
            node_id: r.node_id,
            n_max: cfg.n_max,
        });
    }
    Ok(PriorityKey(
        authority_rank(r.authority),
        cfg.t_max - r.timestamp,
        action_severity(r.action),
        cfg.n_max - r.node_id,
    ))
}

/// Keys of all requests, sorted, with their original positions.
fn sorted_keys(
    rs: &[RegRequest],
    cfg: &PriorityConfig,
) -> Result<Vec<(PriorityKey, usize)>, PriorityError> {
    let mut keyed = rs
        .iter()
        .enumerate()
        .map(|(i, r)| priority_key(r, cfg).map(|k| (k, i)))
        .collect::<Result<Vec<_>, _>>()?;
    keyed.sort_unstable();
    Ok(keyed)
}

/// Index of the highest-priority request in `rs`, or `None` for an empty slice.
pub fn select_highest_index(
    rs: &[RegRequest],
    cfg: &PriorityConfig,
) -> Result<Option<usize>, PriorityError> {
    let keyed = sorted_keys(rs, cfg)?;
    if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
        let (first, second) = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
        return Err(PriorityError::DuplicateKey {
            first,
            second,
            key: w[0].0,
        });
    }
    Ok(keyed.last().map(|&(_, i)| i))
}

pub fn select_highest<'a>(
    rs: &'a [RegRequest],
    cfg: &PriorityConfig,
) -> Result<Option<&'a RegRequest>, PriorityError> {
    Ok(select_highest_index(rs, cfg)?.map(|i| &rs[i]))
}

/// Reports every pair of positions whose requests share a key. Requests
/// outside the horizons are reported under their own property.
pub fn check_injectivity(rs: &[RegRequest], cfg: &PriorityConfig) -> ValidationReport {
    let mut report = ValidationReport::new();
    let mut keys = Vec::with_capacity(rs.len());
    for (i, r) in rs.iter().enumerate() {
        match priority_key(r, cfg) {
            Ok(k) => keys.push((k, i)),
            Err(e) => report.push("priority_horizon", format!("request #{i}: {e}")),
        }
    }
    keys.sort_unstable();
    let mut start = 0;
    while start < keys.len() {
        let mut end = start + 1;
        while end < keys.len() && keys[end].0 == keys[start].0 {
            end += 1;
        }
        for x in start..end {
            for y in x + 1..end {
                report.push(
                    KEY_INJECTIVITY,
                    format!(
                        "requests #{} and #{} share key {:?}",
                        keys[x].1, keys[y].1, keys[x].0
                    ),
                );
            }
        }
        start = end;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(node: u64, authority: AuthorityLevel, t: u64, action: RegAction) -> RegRequest {
        RegRequest {
            node_id: node,
            authority,
            timestamp: t,
            action,
            asset: AssetKey::new("a1"),
        }
    }

    const CFG: PriorityConfig = PriorityConfig {
        t_max: 100,
        n_max: 100,
    };

    #[test]
    fn key_formula() {
        let r = req(2, AuthorityLevel::National, 10, RegAction::Freeze);
        assert_eq!(priority_key(&r, &CFG).unwrap(), PriorityKey(2, 90, 5, 98));
    }

    #[test]
    fn rank_order_matches_level_order() {
        for x in AuthorityLevel::ALL {
            for y in AuthorityLevel::ALL {
                assert_eq!(x.cmp(&y), authority_rank(x).cmp(&authority_rank(y)));
            }
        }
        assert_eq!(authority_rank(AuthorityLevel::International), 3);
    }

    #[test]
    fn severities_are_distinct() {
        let mut v: Vec<u64> = RegAction::ALL.iter().map(|&a| action_severity(a)).collect();
        v.sort_unstable();
        v.dedup();
        assert_eq!(v.len(), 7);
        assert_eq!(action_severity(RegAction::Confiscate), 7);
        assert_eq!(action_severity(RegAction::Unrestrict), 1);
    }

    #[test]
    fn earlier_and_smaller_node_win() {
        let early = req(2, AuthorityLevel::National, 5, RegAction::Freeze);
        let late = req(2, AuthorityLevel::National, 10, RegAction::Freeze);
        assert!(priority_key(&early, &CFG).unwrap() > priority_key(&late, &CFG).unwrap());
        let n1 = req(1, AuthorityLevel::National, 5, RegAction::Freeze);
        let n3 = req(3, AuthorityLevel::National, 5, RegAction::Freeze);
        let pool = [n3, n1.clone()];
        assert_eq!(select_highest(&pool, &CFG).unwrap(), Some(&n1));
    }

    #[test]
    fn authority_dominates() {
        let regional = req(1, AuthorityLevel::Regional, 1, RegAction::Confiscate);
        let intl = req(2, AuthorityLevel::International, 9, RegAction::Unfreeze);
        let pool = [regional, intl.clone()];
        assert_eq!(select_highest(&pool, &CFG).unwrap(), Some(&intl));
    }

    #[test]
    fn empty_and_horizon() {
        assert_eq!(select_highest(&[], &CFG).unwrap(), None);
        let r = req(1, AuthorityLevel::Regional, 101, RegAction::Freeze);
        assert!(matches!(
            priority_key(&r, &CFG),
            Err(PriorityError::TimestampHorizon { .. })
        ));
        let r = req(101, AuthorityLevel::Regional, 1, RegAction::Freeze);
        assert!(matches!(
            priority_key(&r, &CFG),
            Err(PriorityError::NodeHorizon { .. })
        ));
    }

    #[test]
    fn duplicate_keys_are_errors() {
        let x = req(4, AuthorityLevel::National, 3, RegAction::Seize);
        let mut y = x.clone();
        y.asset = AssetKey::new("other");
        let pool = [req(1, AuthorityLevel::Regional, 0, RegAction::Freeze), x, y];
        assert_eq!(
            select_highest(&pool, &CFG).unwrap_err(),
            PriorityError::DuplicateKey {
                first: 1,
                second: 2,
                key: PriorityKey(2, 97, 6, 96)
            }
        );
        let report = check_injectivity(&pool, &CFG);
        assert_eq!(report.len(), 1);
        assert!(report.violations()[0]
            .witness
            .starts_with("requests #1 and #2"));
    }

    #[test]
    fn distinct_nodes_are_injective() {
        let pool: Vec<_> = (0..10)
            .map(|n| req(n, AuthorityLevel::National, 7, RegAction::Freeze))
            .collect();
        assert!(check_injectivity(&pool, &CFG).is_empty());
    }
}
