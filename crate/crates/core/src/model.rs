//! Shared data model: communication records, towers, state profiles and
//! per-day observations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Day index within the study window. Day 1 is the first calendar day.
pub type Day = u32;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// 2013-01-01T00:00:00Z
pub const DEFAULT_STUDY_START: i64 = 1_356_998_400;

/// January through March 2013.
pub const DEFAULT_STUDY_DAYS: u32 = 90;

/// Number of state divisions used by the operator.
pub const STATE_COUNT: u8 = 23;

/// Billing-area state code, 1..=23.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(try_from = "u8", into = "u8"))]
pub struct StateCode(u8);

impl StateCode {
    pub fn new(code: u8) -> Option<Self> {
        (1..=STATE_COUNT).contains(&code).then_some(StateCode(code))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = StateCode> {
        (1..=STATE_COUNT).map(StateCode)
    }
}

impl TryFrom<u8> for StateCode {
    type Error = InvalidStateCode;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        StateCode::new(code).ok_or(InvalidStateCode(code))
    }
}

impl From<StateCode> for u8 {
    fn from(code: StateCode) -> u8 {
        code.0
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("state code {0} outside 1..=23")]
pub struct InvalidStateCode(pub u8);

/// Opaque subscriber identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PersonId(pub u64);

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TowerId(pub u16);

impl fmt::Display for TowerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Call,
    Text,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Call => "call",
            EventKind::Text => "text",
        }
    }
}

/// The closed-open range of timestamps covered by the study, split into days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StudyWindow {
    pub start: i64,
    pub days: u32,
}

impl Default for StudyWindow {
    fn default() -> Self {
        StudyWindow { start: DEFAULT_STUDY_START, days: DEFAULT_STUDY_DAYS }
    }
}

impl StudyWindow {
    pub fn end(&self) -> i64 {
        self.start + self.days as i64 * SECONDS_PER_DAY
    }

    pub fn contains(&self, timestamp: i64) -> bool {
        timestamp >= self.start && timestamp < self.end()
    }

    pub fn day_of(&self, timestamp: i64) -> Option<Day> {
        self.contains(timestamp).then(|| ((timestamp - self.start).div_euclid(SECONDS_PER_DAY) + 1) as Day)
    }

    pub fn day_start(&self, day: Day) -> i64 {
        self.start + (day as i64 - 1) * SECONDS_PER_DAY
    }

    pub fn first_day(&self) -> Day {
        1
    }

    pub fn last_day(&self) -> Day {
        self.days
    }

    pub fn day_range(&self) -> core::ops::RangeInclusive<Day> {
        1..=self.days
    }
}

/// One communication record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdrEvent {
    pub timestamp: i64,
    pub caller: PersonId,
    pub callee: PersonId,
    pub kind: EventKind,
    pub duration: u32,
    pub tower: TowerId,
    pub caller_state: Option<StateCode>,
    pub callee_state: Option<StateCode>,
    pub caller_is_customer: bool,
    pub callee_is_customer: bool,
}

/// Reasons a record fails validation after it has been parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, thiserror::Error)]
pub enum EventDefect {
    #[error("text message with nonzero duration")]
    TextWithDuration,
    #[error("timestamp outside the study window")]
    OutsideWindow,
    #[error("neither party is a customer")]
    NoCustomer,
    #[error("unknown tower id")]
    UnknownTower,
}

impl CdrEvent {
    /// Checks the record-level invariants that do not depend on the tower set.
    pub fn validate(&self, window: &StudyWindow) -> Result<(), EventDefect> {
        if self.kind == EventKind::Text && self.duration != 0 {
            return Err(EventDefect::TextWithDuration);
        }
        if !window.contains(self.timestamp) {
            return Err(EventDefect::OutsideWindow);
        }
        if !self.caller_is_customer && !self.callee_is_customer {
            return Err(EventDefect::NoCustomer);
        }
        Ok(())
    }

    /// The customer whose serving tower the record carries: the caller when
    /// the caller is a customer, otherwise the callee. `None` when that
    /// party has no known state.
    pub fn observed_party(&self) -> Option<(PersonId, StateCode)> {
        if self.caller_is_customer {
            self.caller_state.map(|s| (self.caller, s))
        } else if self.callee_is_customer {
            self.callee_state.map(|s| (self.callee, s))
        } else {
            None
        }
    }

    /// Customer parties with a known state.
    pub fn customer_parties(&self) -> impl Iterator<Item = (PersonId, StateCode)> {
        let caller = self.caller_state.filter(|_| self.caller_is_customer).map(|s| (self.caller, s));
        let callee = self.callee_state.filter(|_| self.callee_is_customer).map(|s| (self.callee, s));
        caller.into_iter().chain(callee)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TowerSite {
    pub id: TowerId,
    pub latitude: f64,
    pub longitude: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StateProfile {
    pub code: StateCode,
    pub name: String,
    pub market_share: f64,
    pub is_local: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateTableError {
    #[error("no state profiles")]
    Empty,
    #[error("state {0} listed more than once")]
    Duplicate(StateCode),
    #[error("state {code}: market share {share} outside (0, 1]")]
    InvalidShare { code: StateCode, share: f64 },
    #[error("expected exactly one local state, found {0}")]
    LocalCount(usize),
}

/// Validated set of state profiles keyed by code.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    profiles: BTreeMap<StateCode, StateProfile>,
    local: StateCode,
}

impl StateTable {
    pub fn new(profiles: impl IntoIterator<Item = StateProfile>) -> Result<Self, StateTableError> {
        let mut map = BTreeMap::new();
        for p in profiles {
            if !(p.market_share > 0.0 && p.market_share <= 1.0) {
                return Err(StateTableError::InvalidShare { code: p.code, share: p.market_share });
            }
            let code = p.code;
            if map.insert(code, p).is_some() {
                return Err(StateTableError::Duplicate(code));
            }
        }
        if map.is_empty() {
            return Err(StateTableError::Empty);
        }
        let locals: Vec<StateCode> = map.values().filter(|p| p.is_local).map(|p| p.code).collect();
        if locals.len() != 1 {
            return Err(StateTableError::LocalCount(locals.len()));
        }
        Ok(StateTable { profiles: map, local: locals[0] })
    }

    pub fn get(&self, code: StateCode) -> Option<&StateProfile> {
        self.profiles.get(&code)
    }

    pub fn market_share(&self, code: StateCode) -> Option<f64> {
        self.get(code).map(|p| p.market_share)
    }

    pub fn local(&self) -> StateCode {
        self.local
    }

    pub fn is_local(&self, code: StateCode) -> bool {
        code == self.local
    }

    pub fn iter(&self) -> impl Iterator<Item = &StateProfile> {
        self.profiles.values()
    }

    pub fn codes(&self) -> impl Iterator<Item = StateCode> + '_ {
        self.profiles.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// A person's first appearance on a given day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DailyObservation {
    pub person: PersonId,
    pub state: StateCode,
    pub day: Day,
    pub first_tower: TowerId,
}
