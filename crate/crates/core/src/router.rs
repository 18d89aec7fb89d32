//! Router agent: allocates the time of one location among the round's
//! requests.
//!
//! Requests are served in precedence order (faster first, then longer, then
//! smaller traveller id), with requests re-sent by travellers that already
//! accepted a plan served ahead of all others. Each request keeps its
//! duration and is placed at the earliest entry no earlier than requested
//! that keeps the separation rule with everything already reserved.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netmodel::{LocationId, Tick, TravellerId, TravellerSpec};
use crate::plan::TimeSlot;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Request {
    pub traveller: TravellerId,
    pub loc: LocationId,
    pub slot: TimeSlot,
    pub speed: u32,
    pub length: u32,
    /// Sent by a traveller re-asserting its accepted plan.
    #[serde(default)]
    pub committed: bool,
}

pub type PrecedenceKey = (Reverse<u32>, Reverse<u32>, TravellerId);

/// Total order shared by every Router: speed descending, length descending,
/// traveller id ascending.
pub fn precedence_key(r: &Request) -> PrecedenceKey {
    (Reverse(r.speed), Reverse(r.length), r.traveller)
}

/// [`precedence_key`] of the requests a traveller sends.
pub fn traveller_precedence(spec: &TravellerSpec) -> PrecedenceKey {
    (Reverse(spec.speed), Reverse(spec.length), spec.id)
}

fn service_key(r: &Request) -> (bool, PrecedenceKey) {
    (!r.committed, precedence_key(r))
}

/// Time-ordered reservations of one location.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReserveList {
    slots: Vec<(TravellerId, TimeSlot)>,
}

impl ReserveList {
    pub fn slots(&self) -> &[(TravellerId, TimeSlot)] {
        &self.slots
    }

    fn conflicts(&self, candidate: &TimeSlot, t_min: Tick) -> bool {
        self.slots
            .iter()
            .any(|(_, s)| !candidate.separated(s, t_min))
    }

    /// Earliest slot of `want`'s duration entering no earlier than
    /// `want.entry` that is separated from every reservation.
    pub fn earliest_fit(&self, want: TimeSlot, t_min: Tick) -> TimeSlot {
        let duration = want.duration();
        let mut candidates: Vec<Tick> = std::iter::once(want.entry)
            .chain(
                self.slots
                    .iter()
                    .map(|(_, s)| s.exit + t_min)
                    .filter(|&e| e >= want.entry),
            )
            .collect();
        candidates.sort_unstable();
        candidates
            .into_iter()
            .map(|entry| TimeSlot::new(entry, entry + duration))
            .find(|slot| !self.conflicts(slot, t_min))
            .expect("the slot after the last reservation is always free")
    }

    pub fn reserve(&mut self, traveller: TravellerId, slot: TimeSlot) {
        let at = self
            .slots
            .partition_point(|(t, s)| (s.entry, *t) < (slot.entry, traveller));
        self.slots.insert(at, (traveller, slot));
    }
}

/// One round of allocation at a single location.
pub fn allocate_round(requests: &[Request], t_min: Tick) -> BTreeMap<TravellerId, TimeSlot> {
    let mut ordered: Vec<&Request> = requests.iter().collect();
    ordered.sort_by_key(|r| service_key(r));
    let mut reserve = ReserveList::default();
    let mut proposals = BTreeMap::new();
    for r in ordered {
        let slot = reserve.earliest_fit(r.slot, t_min);
        reserve.reserve(r.traveller, slot);
        proposals.insert(r.traveller, slot);
    }
    proposals
}

/// A Router owns one location; it keeps no state between rounds.
#[derive(Clone, Debug)]
pub struct Router {
    pub location: LocationId,
}

impl Router {
    pub fn new(location: LocationId) -> Router {
        Router { location }
    }

    pub fn allocate(&self, requests: &[Request], t_min: Tick) -> BTreeMap<TravellerId, TimeSlot> {
        debug_assert!(requests.iter().all(|r| r.loc == self.location));
        allocate_round(requests, t_min)
    }
}
