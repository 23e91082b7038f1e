//! The five-state / seven-action regulatory machine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::machine::{ActionId, StateId, StateMachineSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RegState {
    Active,
    Frozen,
    Seized,
    Confiscated,
    Restricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RegAction {
    Freeze,
    Seize,
    Confiscate,
    Restrict,
    Unfreeze,
    Unrestrict,
    Release,
}

impl RegState {
    /// Declaration order; every report and trace iterates in this order.
    pub const ALL: [RegState; 5] = [
        RegState::Active,
        RegState::Frozen,
        RegState::Seized,
        RegState::Confiscated,
        RegState::Restricted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegState::Active => "ACTIVE",
            RegState::Frozen => "FROZEN",
            RegState::Seized => "SEIZED",
            RegState::Confiscated => "CONFISCATED",
            RegState::Restricted => "RESTRICTED",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl RegAction {
    pub const ALL: [RegAction; 7] = [
        RegAction::Freeze,
        RegAction::Seize,
        RegAction::Confiscate,
        RegAction::Restrict,
        RegAction::Unfreeze,
        RegAction::Unrestrict,
        RegAction::Release,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegAction::Freeze => "FREEZE",
            RegAction::Seize => "SEIZE",
            RegAction::Confiscate => "CONFISCATE",
            RegAction::Restrict => "RESTRICT",
            RegAction::Unfreeze => "UNFREEZE",
            RegAction::Unrestrict => "UNRESTRICT",
            RegAction::Release => "RELEASE",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RegState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for RegAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} name `{name}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

impl FromStr for RegState {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegState::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownName {
                kind: "state",
                name: s.to_owned(),
            })
    }
}

impl FromStr for RegAction {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegAction::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownName {
                kind: "action",
                name: s.to_owned(),
            })
    }
}

use RegState::{Active as A, Confiscated as C, Frozen as F, Restricted as R, Seized as S};

/// Rows follow [`RegState::ALL`], columns follow [`RegAction::ALL`]:
/// FREEZE, SEIZE, CONFISCATE, RESTRICT, UNFREEZE, UNRESTRICT, RELEASE.
const MATRIX: [[Option<RegState>; 7]; 5] = [
    /* ACTIVE      */ [Some(F), Some(S), Some(C), Some(R), None, None, None],
    /* FROZEN      */ [None, Some(S), Some(C), None, Some(A), None, None],
    /* SEIZED      */ [None, None, Some(C), None, None, None, Some(A)],
    /* CONFISCATED */ [None, None, None, None, None, None, None],
    /* RESTRICTED  */ [Some(F), None, Some(C), None, None, Some(A), None],
];

pub fn reg_transition(s: RegState, a: RegAction) -> Option<RegState> {
    MATRIX[s.index()][a.index()]
}

pub fn is_terminal(s: RegState) -> bool {
    s == RegState::Confiscated
}

/// Actions defined at `s`, in declaration order.
pub fn valid_actions(s: RegState) -> Vec<RegAction> {
    RegAction::ALL
        .into_iter()
        .filter(|&a| reg_transition(s, a).is_some())
        .collect()
}

pub fn state_id(s: RegState) -> StateId {
    StateId::new(s.name())
}

pub fn action_id(a: RegAction) -> ActionId {
    ActionId::new(a.name())
}

/// The regulatory machine as a generic [`StateMachineSpec`].
pub fn reg_machine_spec() -> StateMachineSpec {
    let transitions = RegState::ALL.into_iter().flat_map(|s| {
        RegAction::ALL.into_iter().filter_map(move |a| {
            reg_transition(s, a).map(|t| ((state_id(s), action_id(a)), state_id(t)))
        })
    });
    StateMachineSpec::new(
        RegState::ALL.map(state_id),
        RegAction::ALL.map(action_id),
        transitions,
        [state_id(RegState::Confiscated)],
    )
}

/// The full matrix as an aligned text table, `--` for undefined cells.
pub fn render_matrix() -> String {
    let width = RegState::ALL
        .iter()
        .map(|s| s.name().len())
        .chain(RegAction::ALL.iter().map(|a| a.name().len()))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!("{:<width$}", ""));
    for a in RegAction::ALL {
        out.push_str(&format!("  {:<width$}", a.name()));
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    for s in RegState::ALL {
        let mut line = format!("{:<width$}", s.name());
        for a in RegAction::ALL {
            let cell = reg_transition(s, a).map_or("--", RegState::name);
            line.push_str(&format!("  {cell:<width$}"));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
