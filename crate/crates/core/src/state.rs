//! Polling-system states and action feasibility.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Server decision. The derived order is the tie-breaking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Idle,
    Serve,
    Switch,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Idle, Action::Serve, Action::Switch];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Idle => "idle",
            Action::Serve => "serve",
            Action::Switch => "switch",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the server is doing between decision epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    Free,
    Serving,
    Switching,
}

impl Activity {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        [Activity::Free, Activity::Serving, Activity::Switching][i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PollingState {
    pub n1: usize,
    pub n2: usize,
    /// Server location, 0 for queue 1 and 1 for queue 2.
    pub l1: usize,
    pub l2: Activity,
}

impl PollingState {
    pub fn decision(n1: usize, n2: usize, l1: usize) -> Self {
        PollingState { n1, n2, l1, l2: Activity::Free }
    }

    pub fn queue_len(&self, q: usize) -> usize {
        if q == 0 {
            self.n1
        } else {
            self.n2
        }
    }

    pub fn at_server(&self) -> usize {
        self.queue_len(self.l1)
    }
}

/// Small copyable set of actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ActionSet(u8);

impl ActionSet {
    pub fn with(mut self, a: Action) -> Self {
        self.0 |= 1 << a.index();
        self
    }

    pub fn contains(&self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Members in tie-breaking order.
    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

/// Feasible actions at a decision epoch given the length of the queue at the server.
#[inline]
pub fn feasible_at(queue_at_server: usize) -> ActionSet {
    let s = ActionSet::default().with(Action::Idle).with(Action::Switch);
    if queue_at_server > 0 {
        s.with(Action::Serve)
    } else {
        s
    }
}

pub fn feasible_actions(state: &PollingState) -> Result<ActionSet> {
    if state.l2 != Activity::Free {
        return Err(Error::NotDecisionEpoch(state.l2));
    }
    Ok(feasible_at(state.at_server()))
}
