//! Reduction of raw records to one observation per person and day, and the
//! distinct-handset counts that feed attendance estimation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::model::{CdrEvent, DailyObservation, Day, PersonId, StateCode, StudyWindow, TowerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FirstUse {
    timestamp: i64,
    tower: TowerId,
    state: StateCode,
}

impl FirstUse {
    fn key(&self) -> (i64, TowerId) {
        (self.timestamp, self.tower)
    }
}

/// Streaming accumulator for the earliest event of every (person, day).
///
/// Shards built over disjoint chunks of a file can be merged in any order;
/// the result only depends on the multiset of events.
#[derive(Debug, Clone, Default)]
pub struct FirstUseIndex {
    entries: BTreeMap<(PersonId, Day), FirstUse>,
}

impl FirstUseIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, event: &CdrEvent, window: &StudyWindow) {
        let Some((person, state)) = event.observed_party() else { return };
        let Some(day) = window.day_of(event.timestamp) else { return };
        self.insert(person, day, FirstUse { timestamp: event.timestamp, tower: event.tower, state });
    }

    fn insert(&mut self, person: PersonId, day: Day, candidate: FirstUse) {
        self.entries
            .entry((person, day))
            .and_modify(|cur| {
                if candidate.key() < cur.key() {
                    *cur = candidate;
                }
            })
            .or_insert(candidate);
    }

    pub fn merge(&mut self, other: FirstUseIndex) {
        for ((person, day), first) in other.entries {
            self.insert(person, day, first);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Observations ordered by (person, day).
    pub fn observations(&self) -> Vec<DailyObservation> {
        self.entries
            .iter()
            .map(|(&(person, day), f)| DailyObservation { person, state: f.state, day, first_tower: f.tower })
            .collect()
    }
}

/// One observation per (person, day) keeping the tower of the earliest
/// event; equal timestamps resolve to the smallest tower id.
pub fn dedupe_daily<'a>(events: impl IntoIterator<Item = &'a CdrEvent>, window: &StudyWindow) -> Vec<DailyObservation> {
    let mut index = FirstUseIndex::new();
    for e in events {
        index.observe(e, window);
    }
    index.observations()
}

/// Distinct persons per (state, day).
pub fn count_unique_handsets(observations: &[DailyObservation]) -> BTreeMap<(StateCode, Day), u64> {
    let distinct: BTreeSet<(StateCode, Day, PersonId)> =
        observations.iter().map(|o| (o.state, o.day, o.person)).collect();
    let mut counts = BTreeMap::new();
    for (state, day, _) in distinct {
        *counts.entry((state, day)).or_insert(0) += 1;
    }
    counts
}

/// A person's observed presence: first and last active day and the number
/// of distinct active days in between (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stay {
    pub person: PersonId,
    pub state: StateCode,
    pub first_day: Day,
    pub last_day: Day,
    pub active_days: u32,
}

impl Stay {
    pub fn length(&self) -> u32 {
        self.last_day - self.first_day + 1
    }
}

/// Collapse deduplicated observations into single-visit stays, ordered by person.
pub fn stays(observations: &[DailyObservation]) -> Vec<Stay> {
    let mut by_person: BTreeMap<PersonId, Stay> = BTreeMap::new();
    let distinct: BTreeSet<(PersonId, Day, StateCode)> =
        observations.iter().map(|o| (o.person, o.day, o.state)).collect();
    for (person, day, state) in distinct {
        by_person
            .entry(person)
            .and_modify(|s| {
                s.first_day = s.first_day.min(day);
                s.last_day = s.last_day.max(day);
                s.active_days += 1;
            })
            .or_insert(Stay { person, state, first_day: day, last_day: day, active_days: 1 });
    }
    by_person.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventKind, SECONDS_PER_DAY};
    use proptest::prelude::*;

    fn s(c: u8) -> StateCode {
        StateCode::new(c).unwrap()
    }

    fn ev(window: &StudyWindow, person: u64, day: Day, secs: i64, tower: u16) -> CdrEvent {
        CdrEvent {
            timestamp: window.day_start(day) + secs,
            caller: PersonId(person),
            callee: PersonId(9_000_000 + person),
            kind: EventKind::Call,
            duration: 30,
            tower: TowerId(tower),
            caller_state: Some(s(7)),
            callee_state: None,
            caller_is_customer: true,
            callee_is_customer: false,
        }
    }

    #[test]
    fn first_tower_of_the_day_wins() {
        let w = StudyWindow::default();
        let events = [ev(&w, 1, 3, 100, 5), ev(&w, 1, 3, 200, 9)];
        let obs = dedupe_daily(events.iter().rev(), &w);
        assert_eq!(obs, [DailyObservation { person: PersonId(1), state: s(7), day: 3, first_tower: TowerId(5) }]);
    }

    #[test]
    fn distinct_days_give_distinct_observations() {
        let w = StudyWindow::default();
        let events = [ev(&w, 1, 3, 100, 5), ev(&w, 1, 4, 100, 5)];
        assert_eq!(dedupe_daily(&events, &w).len(), 2);
    }

    #[test]
    fn equal_timestamps_take_smallest_tower() {
        let w = StudyWindow::default();
        let events = [ev(&w, 1, 3, 100, 9), ev(&w, 1, 3, 100, 5)];
        // Oracle: sort by (timestamp, tower) and take the head.
        let mut sorted = events.to_vec();
        sorted.sort_by_key(|e| (e.timestamp, e.tower));
        let obs = dedupe_daily(&events, &w);
        assert_eq!(obs[0].first_tower, sorted[0].tower);
        assert_eq!(obs[0].first_tower, TowerId(5));
    }

    #[test]
    fn empty_input() {
        let w = StudyWindow::default();
        assert!(dedupe_daily(&[], &w).is_empty());
        assert!(count_unique_handsets(&[]).is_empty());
    }

    #[test]
    fn handset_counts_per_day() {
        let obs: Vec<_> = (1..=3)
            .map(|day| DailyObservation { person: PersonId(1), state: s(7), day, first_tower: TowerId(1) })
            .collect();
        let counts = count_unique_handsets(&obs);
        let expected: BTreeMap<_, _> = [((s(7), 1), 1), ((s(7), 2), 1), ((s(7), 3), 1)].into_iter().collect();
        assert_eq!(counts, expected);
    }

    #[test]
    fn stays_span_first_to_last() {
        let obs: Vec<_> = [3, 5, 10]
            .iter()
            .map(|&day| DailyObservation { person: PersonId(1), state: s(7), day, first_tower: TowerId(1) })
            .collect();
        let st = stays(&obs);
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].length(), 8);
        assert_eq!(st[0].active_days, 3);
    }

    fn arb_events() -> impl Strategy<Value = Vec<CdrEvent>> {
        let w = StudyWindow::default();
        prop::collection::vec((0u64..8, 1u32..=5, 0i64..SECONDS_PER_DAY, 0u16..6), 0..80)
            .prop_map(move |v| v.into_iter().map(|(p, d, t, tw)| ev(&w, p, d, t, tw)).collect())
    }

    proptest! {
        #[test]
        fn dedupe_is_idempotent(events in arb_events()) {
            let w = StudyWindow::default();
            let obs = dedupe_daily(&events, &w);
            let rebuilt: Vec<CdrEvent> = obs.iter().map(|o| ev(&w, o.person.0, o.day, 0, o.first_tower.0)).collect();
            prop_assert_eq!(dedupe_daily(&rebuilt, &w), obs);
        }

        #[test]
        fn sharding_does_not_change_result(events in arb_events(), cut in 0usize..80) {
            let w = StudyWindow::default();
            let cut = cut.min(events.len());
            let mut a = FirstUseIndex::new();
            let mut b = FirstUseIndex::new();
            events[..cut].iter().for_each(|e| a.observe(e, &w));
            events[cut..].iter().for_each(|e| b.observe(e, &w));
            b.merge(a);
            prop_assert_eq!(b.observations(), dedupe_daily(&events, &w));
        }

        #[test]
        fn handsets_never_exceed_events(events in arb_events()) {
            let w = StudyWindow::default();
            let counts = count_unique_handsets(&dedupe_daily(&events, &w));
            let mut raw: BTreeMap<(StateCode, Day), u64> = BTreeMap::new();
            for e in &events {
                *raw.entry((e.caller_state.unwrap(), w.day_of(e.timestamp).unwrap())).or_default() += 1;
            }
            for (k, c) in counts {
                prop_assert!(c <= raw[&k]);
            }
        }
    }
}
