//! JSON scenario files: an initial global state, a sync sequence with
//! optional expected outcomes, and an optional request set plus simulator
//! configuration.
//!
//! Canonical form is pretty-printed JSON with sorted keys and a trailing
//! newline; parsing a canonical file and serializing it again is the identity.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{GlobalState, SyncFailure, SyncResult};
use crate::ids::{AssetKey, ChainId};
use crate::liveness::{NodeInfo, SimConfig, Withholding};
use crate::priority::{PriorityConfig, RegRequest};
use crate::regulatory::RegAction;

/// Expected result tag of one sync step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "ok")]
    Ok,
    AssetNotFound,
    InvalidTransition,
    Locked,
}

impl Outcome {
    pub fn of(r: &SyncResult) -> Self {
        match r {
            Ok(_) => Outcome::Ok,
            Err(SyncFailure::AssetNotFound) => Outcome::AssetNotFound,
            Err(SyncFailure::InvalidTransition) => Outcome::InvalidTransition,
            Err(SyncFailure::Locked) => Outcome::Locked,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::AssetNotFound => "AssetNotFound",
            Outcome::InvalidTransition => "InvalidTransition",
            Outcome::Locked => "Locked",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncStep {
    pub source: ChainId,
    pub action: RegAction,
    pub asset: AssetKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Outcome>,
    /// Expected state after the step; on failure this is the unchanged input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_state: Option<GlobalState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub nodes: Vec<NodeInfo>,
    pub f_max: u64,
    pub lock_timeout: u64,
    pub fairness_bound: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withholding: Option<Withholding>,
}

impl SimSpec {
    /// `seed` overrides the file's seed; both absent means seed 0.
    pub fn to_config(&self, seed: Option<u64>) -> SimConfig {
        let defaults = PriorityConfig::default();
        SimConfig {
            nodes: self.nodes.clone(),
            f_max: self.f_max,
            lock_timeout: self.lock_timeout,
            fairness_bound: self.fairness_bound,
            priority: PriorityConfig {
                t_max: self.t_max.unwrap_or(defaults.t_max),
                n_max: self.n_max.unwrap_or(defaults.n_max),
            },
            seed: seed.or(self.seed).unwrap_or(0),
            withholding: self.withholding.unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub initial: GlobalState,
    #[serde(default)]
    pub syncs: Vec<SyncStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<Vec<RegRequest>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("dangling reference at {path}: `{name}` is not declared")]
    Dangling { path: String, name: String },
}

impl Scenario {
    pub fn new(initial: GlobalState) -> Self {
        Self {
            initial,
            syncs: Vec::new(),
            requests: None,
            sim: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.check_references()?;
        Ok(sc)
    }

    /// Every chain and asset named by a step or request is declared in `initial`.
    pub fn check_references(&self) -> Result<(), ScenarioError> {
        let chains: BTreeSet<&ChainId> = self.initial.chain_ids().collect();
        let assets = self.initial.assets();
        let dangling = |path: String, name: &str| ScenarioError::Dangling {
            path,
            name: name.to_owned(),
        };
        for (i, step) in self.syncs.iter().enumerate() {
            if !chains.contains(&step.source) {
                return Err(dangling(format!("syncs[{i}].source"), step.source.as_str()));
            }
            if !assets.contains(&step.asset) {
                return Err(dangling(format!("syncs[{i}].asset"), step.asset.as_str()));
            }
        }
        for (i, r) in self.requests.iter().flatten().enumerate() {
            if !assets.contains(&r.asset) {
                return Err(dangling(format!("requests[{i}].asset"), r.asset.as_str()));
            }
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("scenario serializes");
        let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
        out.push('\n');
        out
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regulatory::RegState;

    const MINIMAL: &str = r#"{
  "initial": {
    "chains": {
      "c1": {
        "a1": {
          "locked": false,
          "owner": "o1",
          "state": "ACTIVE"
        }
      }
    },
    "locks": {
      "a1": false
    }
  },
  "syncs": [
    {
      "action": "FREEZE",
      "asset": "a1",
      "expect": "ok",
      "source": "c1"
    }
  ]
}
"#;

    #[test]
    fn minimal_parses_and_roundtrips() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(sc.syncs.len(), 1);
        assert_eq!(sc.syncs[0].expect, Some(Outcome::Ok));
        assert_eq!(sc.to_canonical_json(), MINIMAL);
    }

    #[test]
    fn undeclared_chain_is_dangling() {
        let text = MINIMAL.replace("\"source\": \"c1\"", "\"source\": \"c9\"");
        match Scenario::from_json(&text) {
            Err(ScenarioError::Dangling { path, name }) => {
                assert_eq!(path, "syncs[0].source");
                assert_eq!(name, "c9");
            }
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_position() {
        let text = MINIMAL.replace("\"owner\"", "\"ownr\"");
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("ownr"), "{err}");
    }

    #[test]
    fn lock_mirror_mismatch_is_rejected() {
        let text = MINIMAL.replace("\"a1\": false", "\"a1\": true");
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("locks.a1"), "{err}");
    }

    #[test]
    fn full_scenario_roundtrips() {
        let gs = GlobalState::new()
            .with_asset("c1", "a1", RegState::Frozen, "o1")
            .with_asset("c2", "a1", RegState::Frozen, "o1")
            .with_chain("c3");
        let mut sc = Scenario::new(gs.clone());
        sc.syncs.push(SyncStep {
            source: "c2".into(),
            action: RegAction::Unfreeze,
            asset: "a1".into(),
            expect: Some(Outcome::Ok),
            expect_state: Some(gs),
        });
        sc.requests = Some(vec![]);
        sc.sim = Some(SimSpec {
            nodes: vec![NodeInfo {
                node_id: 0,
                honest: true,
            }],
            f_max: 0,
            lock_timeout: 2,
            fairness_bound: 1,
            t_max: None,
            n_max: Some(10),
            seed: Some(4),
            withholding: Some(Withholding::Unbounded),
        });
        let text = sc.to_canonical_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back, sc);
        assert_eq!(back.to_canonical_json(), text);
        let cfg = back.sim.unwrap().to_config(None);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.priority.n_max, 10);
        assert_eq!(cfg.withholding, Withholding::Unbounded);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            parse_scenario(Path::new("/nonexistent/scenario.json")),
            Err(ScenarioError::Io { .. })
        ));
    }
}
