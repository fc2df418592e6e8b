//! Synchronized experience states: named logic states with administrator
//! advancement, vote-driven branching, timed transitions, late-join sync and
//! reset.
//!
//! The graph is data, not code: it loads from a declarative TOML document
//! (see `docs/formats.md`). The server owns the single writable
//! [`ExperienceManager`]; clients hold read-only replicas updated by
//! broadcast.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{PlayerType, Timestamp, UserId};

/// Index into the state list of an [`ExperienceGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub u16);

/// Index into the transition list of an [`ExperienceGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransitionId(pub u16);

#[derive(Debug, Clone, PartialEq)]
pub struct VoteOption {
    pub name: String,
    pub to: StateId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trigger {
    /// Fired explicitly by an administrator.
    Admin { to: StateId },
    /// Branches on the option with the most votes; ties pick the first
    /// listed option.
    Vote { options: Vec<VoteOption> },
    /// Fires on the server clock once the state has been held this long.
    Auto { to: StateId, after: Duration },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: StateId,
    pub trigger: Trigger,
}

/// A validated experience graph: exactly one initial state, vote transitions
/// with at least two options, and every state reachable from the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceGraph {
    names: Vec<String>,
    initial: StateId,
    transitions: Vec<Transition>,
}

#[derive(Debug, Deserialize)]
struct RawGraph {
    initial: String,
    #[serde(default)]
    states: Vec<RawState>,
    #[serde(default)]
    transitions: Vec<RawTransition>,
}

#[derive(Debug, Deserialize)]
struct RawState {
    name: String,
}

#[derive(Debug, Deserialize)]
struct RawTransition {
    from: String,
    trigger: String,
    to: Option<String>,
    after_ms: Option<u64>,
    #[serde(default)]
    options: Vec<RawOption>,
}

#[derive(Debug, Deserialize)]
struct RawOption {
    name: String,
    to: String,
}

impl ExperienceGraph {
    /// Parses and validates a graph from its TOML text form.
    pub fn from_toml(text: &str) -> Result<ExperienceGraph> {
        let raw: RawGraph =
            toml::from_str(text).map_err(|e| Error::Config(format!("graph parse: {e}")))?;
        let names: Vec<String> = raw.states.iter().map(|s| s.name.clone()).collect();
        let index = |name: &str| -> Result<StateId> {
            names
                .iter()
                .position(|n| n == name)
                .map(|i| StateId(i as u16))
                .ok_or_else(|| Error::Config(format!("unknown state '{name}'")))
        };
        let mut transitions = Vec::new();
        for t in &raw.transitions {
            let from = index(&t.from)?;
            let trigger = match t.trigger.as_str() {
                "admin" => Trigger::Admin {
                    to: index(
                        t.to.as_deref()
                            .ok_or_else(|| Error::Config("admin transition needs 'to'".into()))?,
                    )?,
                },
                "auto" => Trigger::Auto {
                    to: index(
                        t.to.as_deref()
                            .ok_or_else(|| Error::Config("auto transition needs 'to'".into()))?,
                    )?,
                    after: Duration::from_millis(t.after_ms.ok_or_else(|| {
                        Error::Config("auto transition needs 'after_ms'".into())
                    })?),
                },
                "vote" => {
                    let mut options = Vec::new();
                    for o in &t.options {
                        options.push(VoteOption {
                            name: o.name.clone(),
                            to: index(&o.to)?,
                        });
                    }
                    Trigger::Vote { options }
                }
                other => {
                    return Err(Error::Config(format!("unknown trigger '{other}'")));
                }
            };
            transitions.push(Transition { from, trigger });
        }
        Self::new(names, index(&raw.initial)?, transitions)
    }

    pub fn new(
        names: Vec<String>,
        initial: StateId,
        transitions: Vec<Transition>,
    ) -> Result<ExperienceGraph> {
        if names.is_empty() || names.len() > u16::MAX as usize {
            return Err(Error::Config("graph needs 1..=65535 states".into()));
        }
        let mut seen = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if seen.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate state name '{n}'")));
            }
        }
        if initial.0 as usize >= names.len() {
            return Err(Error::Config("initial state out of range".into()));
        }
        for t in &transitions {
            if t.from.0 as usize >= names.len() {
                return Err(Error::Config("transition from unknown state".into()));
            }
            match &t.trigger {
                Trigger::Admin { to } | Trigger::Auto { to, .. } => {
                    if to.0 as usize >= names.len() {
                        return Err(Error::Config("transition to unknown state".into()));
                    }
                }
                Trigger::Vote { options } => {
                    if options.len() < 2 {
                        return Err(Error::Config(
                            "vote transitions need at least two options".into(),
                        ));
                    }
                    for o in options {
                        if o.to.0 as usize >= names.len() {
                            return Err(Error::Config("vote option to unknown state".into()));
                        }
                    }
                }
            }
        }
        let graph = ExperienceGraph {
            names,
            initial,
            transitions,
        };
        graph.check_connected()?;
        Ok(graph)
    }

    /// Every state must be reachable from the initial state.
    fn check_connected(&self) -> Result<()> {
        let mut reached = vec![false; self.names.len()];
        let mut stack = vec![self.initial];
        reached[self.initial.0 as usize] = true;
        while let Some(s) = stack.pop() {
            for t in self.transitions.iter().filter(|t| t.from == s) {
                let targets: Vec<StateId> = match &t.trigger {
                    Trigger::Admin { to } | Trigger::Auto { to, .. } => vec![*to],
                    Trigger::Vote { options } => options.iter().map(|o| o.to).collect(),
                };
                for to in targets {
                    if !reached[to.0 as usize] {
                        reached[to.0 as usize] = true;
                        stack.push(to);
                    }
                }
            }
        }
        if let Some(orphan) = reached.iter().position(|r| !r) {
            return Err(Error::Config(format!(
                "state '{}' is unreachable from the initial state",
                self.names[orphan]
            )));
        }
        Ok(())
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn state_name(&self, id: StateId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn state_count(&self) -> usize {
        self.names.len()
    }

    pub fn state_by_name(&self, name: &str) -> Option<StateId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| StateId(i as u16))
    }

    pub fn transition(&self, id: TransitionId) -> Option<&Transition> {
        self.transitions.get(id.0 as usize)
    }

    pub fn transitions_from(
        &self,
        state: StateId,
    ) -> impl Iterator<Item = (TransitionId, &Transition)> {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.from == state)
            .map(|(i, t)| (TransitionId(i as u16), t))
    }

    /// The auto transition leaving `state`, if any.
    pub fn auto_from(&self, state: StateId) -> Option<(TransitionId, StateId, Duration)> {
        self.transitions_from(state)
            .find_map(|(id, t)| match &t.trigger {
                Trigger::Auto { to, after } => Some((id, *to, *after)),
                _ => None,
            })
    }
}

/// An open ballot: which vote transition it belongs to plus one vote per
/// player (re-voting replaces the previous vote).
#[derive(Debug, Clone, PartialEq)]
pub struct Ballot {
    pub transition: TransitionId,
    pub opened_at: Timestamp,
    votes: BTreeMap<UserId, usize>,
}

impl Ballot {
    pub fn tally(&self, option_count: usize) -> Vec<usize> {
        let mut counts = vec![0usize; option_count];
        for &opt in self.votes.values() {
            counts[opt] += 1;
        }
        counts
    }

    pub fn voter_count(&self) -> usize {
        self.votes.len()
    }
}

/// Authoritative session state, owned by the server event loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub current: StateId,
    pub entered_at: Timestamp,
    pub ballot: Option<Ballot>,
}

/// What a late joiner needs to fast-forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoinSnapshot {
    pub state: StateId,
    pub entered_at: Timestamp,
    pub open_ballot: Option<TransitionId>,
}

/// Single-writer manager of the experience state; all mutation goes through
/// permission- and validity-checked operations.
#[derive(Debug, Clone)]
pub struct ExperienceManager {
    graph: ExperienceGraph,
    state: SessionState,
}

impl ExperienceManager {
    pub fn new(graph: ExperienceGraph) -> ExperienceManager {
        let initial = graph.initial();
        ExperienceManager {
            graph,
            state: SessionState {
                current: initial,
                entered_at: Timestamp::ZERO,
                ballot: None,
            },
        }
    }

    pub fn graph(&self) -> &ExperienceGraph {
        &self.graph
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn current(&self) -> StateId {
        self.state.current
    }

    fn require_admin(caller: PlayerType) -> Result<()> {
        if caller != PlayerType::Administrator {
            return Err(Error::Permission(
                "only administrators may drive the experience".into(),
            ));
        }
        Ok(())
    }

    fn enter(&mut self, state: StateId, now: Timestamp) -> StateId {
        self.state.current = state;
        self.state.entered_at = now;
        self.state.ballot = None;
        state
    }

    /// Advances along an admin-triggered transition from the current state.
    pub fn advance(
        &mut self,
        caller: PlayerType,
        transition: TransitionId,
        now: Timestamp,
    ) -> Result<StateId> {
        Self::require_admin(caller)?;
        let t = self
            .graph
            .transition(transition)
            .ok_or_else(|| Error::Transition(format!("no transition {}", transition.0)))?;
        if t.from != self.state.current {
            return Err(Error::Transition(format!(
                "transition {} does not leave state '{}'",
                transition.0,
                self.graph.state_name(self.state.current)
            )));
        }
        match &t.trigger {
            Trigger::Admin { to } => {
                let to = *to;
                Ok(self.enter(to, now))
            }
            _ => Err(Error::Transition(
                "advance requires an admin-triggered transition".into(),
            )),
        }
    }

    /// Opens a ballot for a vote transition leaving the current state.
    pub fn open_ballot(
        &mut self,
        caller: PlayerType,
        transition: TransitionId,
        now: Timestamp,
    ) -> Result<()> {
        Self::require_admin(caller)?;
        if self.state.ballot.is_some() {
            return Err(Error::State("a ballot is already open".into()));
        }
        let t = self
            .graph
            .transition(transition)
            .ok_or_else(|| Error::Transition(format!("no transition {}", transition.0)))?;
        if t.from != self.state.current || !matches!(t.trigger, Trigger::Vote { .. }) {
            return Err(Error::Transition(
                "ballot requires a vote transition from the current state".into(),
            ));
        }
        self.state.ballot = Some(Ballot {
            transition,
            opened_at: now,
            votes: BTreeMap::new(),
        });
        Ok(())
    }

    /// Records (or replaces) a vote. Only standard players vote.
    pub fn cast_vote(&mut self, user: UserId, caller: PlayerType, option: usize) -> Result<()> {
        if caller != PlayerType::Standard {
            return Err(Error::Permission("only standard players vote".into()));
        }
        let ballot = self
            .state
            .ballot
            .as_mut()
            .ok_or_else(|| Error::State("no open ballot".into()))?;
        let t = self.graph.transition(ballot.transition).expect("validated");
        let Trigger::Vote { options } = &t.trigger else {
            unreachable!("ballots only open on vote transitions")
        };
        if option >= options.len() {
            return Err(Error::invalid(format!(
                "option {option} out of range for {} options",
                options.len()
            )));
        }
        ballot.votes.insert(user, option);
        Ok(())
    }

    /// Closes the open ballot: the option with the most votes wins, ties
    /// falling to the first listed option, and its successor state becomes
    /// current. With no votes at all the first option wins.
    pub fn close_ballot(&mut self, caller: PlayerType, now: Timestamp) -> Result<(StateId, usize)> {
        Self::require_admin(caller)?;
        let ballot = self
            .state
            .ballot
            .take()
            .ok_or_else(|| Error::State("no open ballot".into()))?;
        let t = self.graph.transition(ballot.transition).expect("validated");
        let Trigger::Vote { options } = &t.trigger else {
            unreachable!("ballots only open on vote transitions")
        };
        let counts = ballot.tally(options.len());
        let mut winner = 0usize;
        for (i, c) in counts.iter().enumerate() {
            if *c > counts[winner] {
                winner = i;
            }
        }
        let to = options[winner].to;
        self.enter(to, now);
        Ok((to, winner))
    }

    /// Current state, entry time and any open ballot, for late joiners.
    pub fn join_state(&self) -> JoinSnapshot {
        JoinSnapshot {
            state: self.state.current,
            entered_at: self.state.entered_at,
            open_ballot: self.state.ballot.as_ref().map(|b| b.transition),
        }
    }

    /// Back to the initial state; clears any ballot. Idempotent.
    pub fn reset(&mut self, caller: PlayerType, now: Timestamp) -> Result<StateId> {
        Self::require_admin(caller)?;
        let initial = self.graph.initial();
        Ok(self.enter(initial, now))
    }

    /// The pending auto-transition deadline for the current state, if any.
    pub fn auto_deadline(&self) -> Option<(TransitionId, Timestamp)> {
        self.graph
            .auto_from(self.state.current)
            .map(|(id, _, after)| (id, self.state.entered_at + after))
    }

    /// Fires an auto transition scheduled when `entered_at` was stamped.
    /// Stale timers (the state was left in the meantime) are ignored.
    pub fn fire_auto(
        &mut self,
        transition: TransitionId,
        entered_at: Timestamp,
        now: Timestamp,
    ) -> Option<StateId> {
        if self.state.entered_at != entered_at {
            return None;
        }
        let t = self.graph.transition(transition)?;
        if t.from != self.state.current {
            return None;
        }
        match &t.trigger {
            Trigger::Auto { to, .. } => {
                let to = *to;
                Some(self.enter(to, now))
            }
            _ => None,
        }
    }
}
