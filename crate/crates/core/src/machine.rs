//! Finite deterministic partial state machines with terminal states.
//!
//! A [`StateMachineSpec`] is plain data: explicit state and action sets, a
//! transition table where a missing key means "undefined", and a terminal set.
//! Nothing is validated at construction; [`StateMachineSpec::validate`] reports
//! every violated structural assumption so exhaustive checkers can see all of
//! them at once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::report::ValidationReport;

/// Opaque state identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(String);

/// Opaque action identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(String);

impl StateId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl ActionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<&str> for ActionId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

pub const TERMINAL_SUBSET: &str = "terminal_subset";
pub const TERMINAL_ABSORBING: &str = "terminal_absorbing";
pub const TRANSITION_CLOSED: &str = "transition_closed";
pub const TRANSITION_DOMAIN: &str = "transition_domain";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateMachineSpec {
    states: BTreeSet<StateId>,
    actions: BTreeSet<ActionId>,
    transitions: BTreeMap<(StateId, ActionId), StateId>,
    terminal: BTreeSet<StateId>,
}

impl StateMachineSpec {
    pub fn new(
        states: impl IntoIterator<Item = StateId>,
        actions: impl IntoIterator<Item = ActionId>,
        transitions: impl IntoIterator<Item = ((StateId, ActionId), StateId)>,
        terminal: impl IntoIterator<Item = StateId>,
    ) -> Self {
        Self {
            states: states.into_iter().collect(),
            actions: actions.into_iter().collect(),
            transitions: transitions.into_iter().collect(),
            terminal: terminal.into_iter().collect(),
        }
    }

    pub fn states(&self) -> &BTreeSet<StateId> {
        &self.states
    }

    pub fn actions(&self) -> &BTreeSet<ActionId> {
        &self.actions
    }

    pub fn terminal(&self) -> &BTreeSet<StateId> {
        &self.terminal
    }

    /// Raw table entries, including any that violate the machine's assumptions.
    pub fn transitions(&self) -> &BTreeMap<(StateId, ActionId), StateId> {
        &self.transitions
    }

    pub fn is_terminal(&self, s: &StateId) -> bool {
        self.terminal.contains(s)
    }

    /// The successor of `s` under `a`, or `None` when undefined.
    ///
    /// Total over all identifiers: states outside the state set and terminal
    /// states always yield `None`, whatever the raw table says.
    pub fn transition_of(&self, s: &StateId, a: &ActionId) -> Option<&StateId> {
        if !self.states.contains(s) || self.terminal.contains(s) {
            return None;
        }
        self.transitions.get(&(s.clone(), a.clone()))
    }

    /// Left fold of [`transition_of`](Self::transition_of) over `actions`.
    pub fn apply_actions<'a, I>(&self, s: &StateId, actions: I) -> Option<StateId>
    where
        I: IntoIterator<Item = &'a ActionId>,
    {
        if !self.states.contains(s) {
            return None;
        }
        let mut cur = s.clone();
        for a in actions {
            cur = self.transition_of(&cur, a)?.clone();
        }
        Some(cur)
    }

    /// Checks the structural assumptions and reports every violation.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        for t in &self.terminal {
            if !self.states.contains(t) {
                report.push(
                    TERMINAL_SUBSET,
                    format!("terminal state {t} is not a state"),
                );
            }
        }
        for ((s, a), target) in &self.transitions {
            if !self.states.contains(s) {
                report.push(
                    TRANSITION_DOMAIN,
                    format!("({s}, {a}) -> {target}: source state {s} is not a state"),
                );
                continue;
            }
            if self.terminal.contains(s) {
                report.push(
                    TERMINAL_ABSORBING,
                    format!("({s}, {a}) -> {target}: terminal state has a transition"),
                );
            }
            if !self.actions.contains(a) {
                report.push(
                    TRANSITION_CLOSED,
                    format!("({s}, {a}) -> {target}: action {a} is not an action"),
                );
            }
            if !self.states.contains(target) {
                report.push(
                    TRANSITION_CLOSED,
                    format!("({s}, {a}) -> {target}: target {target} is not a state"),
                );
            }
        }
        report
    }
}

/// Free-function form of [`StateMachineSpec::validate`].
pub fn validate_machine(sm: &StateMachineSpec) -> ValidationReport {
    sm.validate()
}
