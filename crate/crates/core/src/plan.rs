//! Time arithmetic of spatially extended motion.
//!
//! A traveller of length `L` moving at speed `S` occupies a location of
//! length `ℓ` and speed limit `s` for `ceil((L + ℓ) / min(S, s))` ticks, and
//! its tail trails its head by `tpp = ceil(L / S)` ticks across every
//! boundary. Schedules are built so that `exit(i) - entry(i + 1) = tpp` holds
//! exactly at every consecutive pair.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{Location, LocationId, RoadNetwork, Tick, TravellerId, TravellerSpec};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeSlot {
    pub entry: Tick,
    pub exit: Tick,
}

impl TimeSlot {
    pub fn new(entry: Tick, exit: Tick) -> TimeSlot {
        debug_assert!(exit > entry, "empty slot ({entry}, {exit})");
        TimeSlot { entry, exit }
    }

    pub fn duration(&self) -> Tick {
        self.exit - self.entry
    }

    /// Separation rule: one slot ends at least `t_min` before the other starts.
    pub fn separated(&self, other: &TimeSlot, t_min: Tick) -> bool {
        self.entry >= other.exit + t_min || other.entry >= self.exit + t_min
    }

    /// Half-open intersection with `[from, until)`.
    pub fn intersects(&self, from: Tick, until: Tick) -> bool {
        self.entry < until && from < self.exit
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub loc: LocationId,
    pub entry: Tick,
    pub exit: Tick,
}

impl Step {
    pub fn slot(&self) -> TimeSlot {
        TimeSlot::new(self.entry, self.exit)
    }
}

/// Timed location sequence of one traveller. `waits[i]` is the idle time
/// spent before the head enters `steps[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plan {
    pub traveller: TravellerId,
    pub steps: Vec<Step>,
    pub waits: Vec<Tick>,
}

impl Plan {
    pub fn path(&self) -> Vec<LocationId> {
        self.steps.iter().map(|s| s.loc).collect()
    }

    pub fn start(&self) -> Tick {
        self.steps[0].entry - self.waits[0]
    }

    pub fn total_wait(&self) -> Tick {
        self.waits.iter().sum()
    }

    pub fn completion(&self) -> Tick {
        self.steps.last().map_or(0, |s| s.exit)
    }

    pub fn position(&self, loc: LocationId) -> Option<usize> {
        self.steps.iter().position(|s| s.loc == loc)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("empty path")]
    EmptyPath,
    #[error("{0} and {1} are not adjacent")]
    NotAdjacent(LocationId, LocationId),
    #[error("unknown location {0}")]
    UnknownLocation(LocationId),
    #[error("start {start} is before departure time {depart}")]
    EarlyStart { start: Tick, depart: Tick },
    #[error("expected {expected} waits, got {found}")]
    WaitCount { expected: usize, found: usize },
    #[error("plan belongs to {found}, expected {expected}")]
    WrongTraveller {
        expected: TravellerId,
        found: TravellerId,
    },
    #[error("plan must run from {from} to {to}")]
    Endpoints { from: LocationId, to: LocationId },
    #[error("step {index} at {loc} is not the schedule implied by the path and waits")]
    Schedule { index: usize, loc: LocationId },
    #[error("{0} is visited more than once")]
    Revisit(LocationId),
}

/// Ticks the traveller spends on `loc`, head entry to tail exit.
pub fn traversal_duration(spec: &TravellerSpec, loc: &Location) -> Tick {
    let speed = match loc.speed_limit {
        Some(limit) => spec.speed.min(limit),
        None => spec.speed,
    } as Tick;
    (spec.length as Tick + loc.length as Tick).div_ceil(speed)
}

/// Tail clearance lag between consecutive locations.
pub fn tpp(spec: &TravellerSpec) -> Tick {
    (spec.length as Tick).div_ceil(spec.speed as Tick)
}

/// Builds the schedule for `path` departing at `start`.
///
/// `entry(0) = start + waits[0]`, `entry(i+1) = entry(i) + dur(i) - tpp +
/// waits[i+1]` and `exit(i) = entry(i+1) + tpp`; the last location is held
/// for its full duration. A wait before entering `i+1` therefore also keeps
/// the tail on `i` longer.
pub fn build_schedule(
    spec: &TravellerSpec,
    path: &[LocationId],
    start: Tick,
    waits: &[Tick],
    net: &RoadNetwork,
) -> Result<Plan, PlanError> {
    if path.is_empty() {
        return Err(PlanError::EmptyPath);
    }
    if waits.len() != path.len() {
        return Err(PlanError::WaitCount {
            expected: path.len(),
            found: waits.len(),
        });
    }
    if start < spec.depart_not_before {
        return Err(PlanError::EarlyStart {
            start,
            depart: spec.depart_not_before,
        });
    }
    let lag = tpp(spec);
    let mut steps = Vec::with_capacity(path.len());
    let mut entry = start + waits[0];
    for (i, &loc) in path.iter().enumerate() {
        let here = net.get(loc).ok_or(PlanError::UnknownLocation(loc))?;
        let dur = traversal_duration(spec, here);
        let exit = match path.get(i + 1) {
            Some(&next) => {
                if !net.adjacent(loc, next) {
                    return Err(PlanError::NotAdjacent(loc, next));
                }
                entry + dur + waits[i + 1]
            }
            None => entry + dur,
        };
        steps.push(Step { loc, entry, exit });
        entry = exit - lag;
    }
    Ok(Plan {
        traveller: spec.id,
        steps,
        waits: waits.to_vec(),
    })
}

/// Plan cost: summed traversal durations plus summed waits.
///
/// Computed from the durations, not from slot spans, which overlap by `tpp`.
pub fn plan_cost(plan: &Plan, spec: &TravellerSpec, net: &RoadNetwork) -> Tick {
    let travel: Tick = plan
        .steps
        .iter()
        .map(|s| traversal_duration(spec, net.location(s.loc)))
        .sum();
    travel + plan.total_wait()
}

/// Checks every plan invariant by rebuilding the schedule from its path and
/// waits.
pub fn validate_plan(
    plan: &Plan,
    spec: &TravellerSpec,
    net: &RoadNetwork,
) -> Result<(), PlanError> {
    if plan.traveller != spec.id {
        return Err(PlanError::WrongTraveller {
            expected: spec.id,
            found: plan.traveller,
        });
    }
    let (first, last) = match (plan.steps.first(), plan.steps.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(PlanError::EmptyPath),
    };
    if first.loc != spec.source || last.loc != spec.destination {
        return Err(PlanError::Endpoints {
            from: spec.source,
            to: spec.destination,
        });
    }
    if plan.waits.len() != plan.steps.len() {
        return Err(PlanError::WaitCount {
            expected: plan.steps.len(),
            found: plan.waits.len(),
        });
    }
    let path = plan.path();
    let mut seen = std::collections::HashSet::new();
    for &l in &path {
        if !seen.insert(l) {
            return Err(PlanError::Revisit(l));
        }
    }
    let start = first
        .entry
        .checked_sub(plan.waits[0])
        .ok_or(PlanError::Schedule {
            index: 0,
            loc: first.loc,
        })?;
    let rebuilt = build_schedule(spec, &path, start, &plan.waits, net)?;
    for (i, (a, b)) in plan.steps.iter().zip(&rebuilt.steps).enumerate() {
        if a != b {
            return Err(PlanError::Schedule {
                index: i,
                loc: a.loc,
            });
        }
    }
    Ok(())
}

/// One Router's answer, assembled into the traveller's proposed plan.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedStep {
    pub loc: LocationId,
    pub entry: Tick,
    pub exit: Tick,
    /// Proposed entry is later than requested.
    pub deviated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedPlan {
    pub traveller: TravellerId,
    pub steps: Vec<ProposedStep>,
}

impl ProposedPlan {
    /// Orders the Routers' proposals by entry time, ties by request order.
    pub fn assemble(
        request: &Plan,
        slots: impl IntoIterator<Item = (LocationId, TimeSlot)>,
    ) -> ProposedPlan {
        let index: HashMap<LocationId, usize> = request
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| (s.loc, i))
            .collect();
        let mut steps: Vec<(usize, ProposedStep)> = slots
            .into_iter()
            .map(|(loc, slot)| {
                let idx = index.get(&loc).copied().unwrap_or(usize::MAX);
                let deviated = request.steps.get(idx).is_some_and(|s| slot.entry > s.entry);
                let step = ProposedStep {
                    loc,
                    entry: slot.entry,
                    exit: slot.exit,
                    deviated,
                };
                (idx, step)
            })
            .collect();
        steps.sort_by_key(|(idx, s)| (s.entry, *idx));
        ProposedPlan {
            traveller: request.traveller,
            steps: steps.into_iter().map(|(_, s)| s).collect(),
        }
    }

    /// Proposal that grants every requested slot unchanged.
    pub fn verbatim(request: &Plan) -> ProposedPlan {
        ProposedPlan::assemble(request, request.steps.iter().map(|s| (s.loc, s.slot())))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolViolation {
    #[error("proposal for {0} names {1}, which was not requested")]
    UnrequestedLocation(TravellerId, LocationId),
    #[error("proposal for {0} is missing {1}")]
    MissingLocation(TravellerId, LocationId),
    #[error("proposal for {0} repeats {1}")]
    DuplicateLocation(TravellerId, LocationId),
    #[error("proposal for {0} at {1} starts before the requested entry")]
    EarlierThanRequested(TravellerId, LocationId),
    #[error("proposal for {0} at {1} changes the requested duration")]
    DurationChanged(TravellerId, LocationId),
    #[error("proposal addressed to {found}, expected {expected}")]
    WrongTraveller {
        expected: TravellerId,
        found: TravellerId,
    },
    #[error("{0}")]
    Message(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Consistency {
    Consistent,
    /// Earliest request step whose proposed entry was delayed, and by how much.
    FirstDeviation {
        step: usize,
        delay: Tick,
    },
}

/// Compares a proposal against the plan it answers.
///
/// Routers can only delay entries while keeping durations, so the proposal
/// is consistent exactly when it equals the request slot for slot.
pub fn check_consistency(
    request: &Plan,
    proposal: &ProposedPlan,
    spec: &TravellerSpec,
) -> Result<Consistency, ProtocolViolation> {
    if proposal.traveller != spec.id || request.traveller != spec.id {
        return Err(ProtocolViolation::WrongTraveller {
            expected: spec.id,
            found: proposal.traveller,
        });
    }
    let index: HashMap<LocationId, usize> = request
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| (s.loc, i))
        .collect();
    let mut granted: Vec<Option<&ProposedStep>> = vec![None; request.steps.len()];
    for p in &proposal.steps {
        let &i = index
            .get(&p.loc)
            .ok_or(ProtocolViolation::UnrequestedLocation(spec.id, p.loc))?;
        if granted[i].replace(p).is_some() {
            return Err(ProtocolViolation::DuplicateLocation(spec.id, p.loc));
        }
    }
    let mut first = None;
    for (i, (req, prop)) in request.steps.iter().zip(&granted).enumerate() {
        let prop = prop.ok_or(ProtocolViolation::MissingLocation(spec.id, req.loc))?;
        if prop.entry < req.entry {
            return Err(ProtocolViolation::EarlierThanRequested(spec.id, req.loc));
        }
        if prop.exit - prop.entry != req.exit - req.entry {
            return Err(ProtocolViolation::DurationChanged(spec.id, req.loc));
        }
        if prop.entry > req.entry && first.is_none() {
            first = Some(Consistency::FirstDeviation {
                step: i,
                delay: prop.entry - req.entry,
            });
        }
    }
    Ok(first.unwrap_or(Consistency::Consistent))
}

/// Converged set of plans, one per traveller, ordered by traveller id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub plans: Vec<Plan>,
    pub cost: Tick,
}

impl SolutionSet {
    pub fn new(mut plans: Vec<Plan>, specs: &[TravellerSpec], net: &RoadNetwork) -> SolutionSet {
        plans.sort_by_key(|p| p.traveller);
        let by_id: HashMap<TravellerId, &TravellerSpec> = specs.iter().map(|s| (s.id, s)).collect();
        let cost = plans
            .iter()
            .map(|p| plan_cost(p, by_id[&p.traveller], net))
            .sum();
        SolutionSet { plans, cost }
    }

    pub fn makespan(&self) -> Tick {
        self.plans.iter().map(Plan::completion).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validation {
    Valid,
    Conflict {
        location: LocationId,
        first: (TravellerId, TimeSlot),
        second: (TravellerId, TimeSlot),
    },
}

/// Pairwise separation check on every location.
///
/// Slots are scanned per location in `(entry, exit, traveller)` order; with
/// exclusive occupancy it is enough to compare neighbours in that order.
pub fn validate_solution(solution: &SolutionSet, t_min: Tick) -> Validation {
    let mut per_loc: BTreeMap<LocationId, Vec<(TravellerId, TimeSlot)>> = BTreeMap::new();
    for plan in &solution.plans {
        for s in &plan.steps {
            per_loc
                .entry(s.loc)
                .or_default()
                .push((plan.traveller, s.slot()));
        }
    }
    for (location, mut slots) in per_loc {
        slots.sort_by_key(|(t, s)| (s.entry, s.exit, *t));
        for pair in slots.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.0 != b.0 && !a.1.separated(&b.1, t_min) {
                return Validation::Conflict {
                    location,
                    first: a,
                    second: b,
                };
            }
        }
    }
    Validation::Valid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{LocationKind, TravellerId};

    fn spec(length: u32, speed: u32) -> TravellerSpec {
        TravellerSpec {
            id: TravellerId(0),
            length,
            speed,
            source: LocationId(0),
            destination: LocationId(1),
            depart_not_before: 0,
        }
    }

    fn loc(length: u32, limit: Option<u32>) -> Location {
        Location {
            id: LocationId(0),
            kind: LocationKind::Node,
            length,
            speed_limit: limit,
            cell: None,
        }
    }

    /// n0 - e2 - n1 with edge length 3.
    fn one_edge() -> RoadNetwork {
        let mut b = RoadNetwork::builder();
        let a = b.add_node(0, None);
        let z = b.add_node(0, None);
        b.add_edge(a, z, 3, None).unwrap();
        b.build()
    }

    #[test]
    fn durations() {
        assert_eq!(traversal_duration(&spec(2, 1), &loc(3, None)), 5);
        assert_eq!(traversal_duration(&spec(2, 1), &loc(0, None)), 2);
        assert_eq!(traversal_duration(&spec(3, 4), &loc(10, Some(2))), 7);
        assert_eq!(tpp(&spec(2, 1)), 2);
        assert_eq!(tpp(&spec(3, 2)), 2);
        assert_eq!(tpp(&spec(10, 10)), 1);
    }

    #[test]
    fn rigid_body_schedule() {
        // length 2 at speed 1: head enters the edge as it leaves the
        // zero-length node, the tail clears the node 2 ticks later.
        let net = one_edge();
        let s = spec(2, 1);
        let path = [LocationId(0), LocationId(2), LocationId(1)];
        let p = build_schedule(&s, &path, 0, &[0, 0, 0], &net).unwrap();
        let slots: Vec<_> = p.steps.iter().map(|s| (s.entry, s.exit)).collect();
        assert_eq!(slots, vec![(0, 2), (0, 5), (3, 5)]);
        for w in p.steps.windows(2) {
            assert_eq!(w[0].exit - w[1].entry, tpp(&s));
        }
        assert_eq!(plan_cost(&p, &s, &net), 2 + 5 + 2);
    }

    #[test]
    fn wait_shifts_suffix() {
        let net = one_edge();
        let s = spec(2, 1);
        let path = [LocationId(0), LocationId(2), LocationId(1)];
        let base = build_schedule(&s, &path, 0, &[0, 0, 0], &net).unwrap();
        let waited = build_schedule(&s, &path, 0, &[0, 0, 4], &net).unwrap();
        assert_eq!(waited.steps[0], base.steps[0]);
        assert_eq!(waited.steps[1].entry, base.steps[1].entry);
        assert_eq!(waited.steps[1].exit, base.steps[1].exit + 4);
        assert_eq!(waited.steps[2].entry, base.steps[2].entry + 4);
        assert_eq!(waited.steps[2].exit, base.steps[2].exit + 4);
        assert_eq!(plan_cost(&waited, &s, &net), 13);
    }

    #[test]
    fn depart_not_before() {
        let net = one_edge();
        let mut s = spec(2, 1);
        s.depart_not_before = 5;
        let path = [LocationId(0), LocationId(2), LocationId(1)];
        let p = build_schedule(&s, &path, 5, &[0, 0, 0], &net).unwrap();
        assert_eq!(p.steps[0].entry, 5);
        assert_eq!(
            build_schedule(&s, &path, 4, &[0, 0, 0], &net),
            Err(PlanError::EarlyStart {
                start: 4,
                depart: 5
            })
        );
    }

    #[test]
    fn schedule_rejects_gaps() {
        let net = one_edge();
        let s = spec(2, 1);
        assert_eq!(
            build_schedule(&s, &[LocationId(0), LocationId(1)], 0, &[0, 0], &net),
            Err(PlanError::NotAdjacent(LocationId(0), LocationId(1)))
        );
    }

    fn three_step_plan() -> Plan {
        Plan {
            traveller: TravellerId(0),
            steps: vec![
                Step {
                    loc: LocationId(0),
                    entry: 0,
                    exit: 2,
                },
                Step {
                    loc: LocationId(2),
                    entry: 0,
                    exit: 5,
                },
                Step {
                    loc: LocationId(1),
                    entry: 3,
                    exit: 5,
                },
            ],
            waits: vec![0, 0, 0],
        }
    }

    #[test]
    fn consistency_cases() {
        let s = spec(2, 1);
        let req = three_step_plan();
        let same = ProposedPlan::verbatim(&req);
        assert_eq!(
            check_consistency(&req, &same, &s),
            Ok(Consistency::Consistent)
        );

        let mut one = same.clone();
        one.steps[2].entry += 3;
        one.steps[2].exit += 3;
        assert_eq!(
            check_consistency(&req, &one, &s),
            Ok(Consistency::FirstDeviation { step: 2, delay: 3 })
        );

        let mut two = one.clone();
        two.steps[1].entry += 1;
        two.steps[1].exit += 1;
        assert_eq!(
            check_consistency(&req, &two, &s),
            Ok(Consistency::FirstDeviation { step: 1, delay: 1 })
        );

        let mut stray = same.clone();
        stray.steps[0].loc = LocationId(9);
        assert_eq!(
            check_consistency(&req, &stray, &s),
            Err(ProtocolViolation::UnrequestedLocation(
                TravellerId(0),
                LocationId(9)
            ))
        );

        let mut early = same.clone();
        early.steps[2].entry -= 1;
        early.steps[2].exit -= 1;
        assert!(matches!(
            check_consistency(&req, &early, &s),
            Err(ProtocolViolation::EarlierThanRequested(..))
        ));
    }

    #[test]
    fn assemble_orders_by_entry() {
        let req = three_step_plan();
        let p = ProposedPlan::assemble(
            &req,
            vec![
                (LocationId(1), TimeSlot::new(3, 5)),
                (LocationId(2), TimeSlot::new(0, 5)),
                (LocationId(0), TimeSlot::new(0, 2)),
            ],
        );
        let locs: Vec<_> = p.steps.iter().map(|s| s.loc).collect();
        assert_eq!(locs, vec![LocationId(0), LocationId(2), LocationId(1)]);
        assert!(p.steps.iter().all(|s| !s.deviated));
    }

    fn single(t: u32, loc: u32, entry: Tick, exit: Tick) -> Plan {
        Plan {
            traveller: TravellerId(t),
            steps: vec![Step {
                loc: LocationId(loc),
                entry,
                exit,
            }],
            waits: vec![0],
        }
    }

    #[test]
    fn separation_boundaries() {
        let t_min = 2;
        let disjoint = SolutionSet {
            plans: vec![single(0, 1, 0, 5), single(1, 2, 0, 5)],
            cost: 0,
        };
        assert_eq!(validate_solution(&disjoint, t_min), Validation::Valid);
        let edge = SolutionSet {
            plans: vec![single(0, 1, 0, 5), single(1, 1, 5 + t_min, 10 + t_min)],
            cost: 0,
        };
        assert_eq!(validate_solution(&edge, t_min), Validation::Valid);
        let tight = SolutionSet {
            plans: vec![single(0, 1, 0, 5), single(1, 1, 5 + t_min - 1, 10 + t_min)],
            cost: 0,
        };
        assert!(matches!(
            validate_solution(&tight, t_min),
            Validation::Conflict {
                location: LocationId(1),
                ..
            }
        ));
    }
}
