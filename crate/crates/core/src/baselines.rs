//! Comparison planners.
//!
//! [`priority_plan`] plans travellers one at a time in precedence order,
//! each avoiding the reservations of those before it. [`brute_force_optimal`]
//! enumerates joint schedules of tiny instances to find the least total cost.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::netmodel::{cost_to_go, LocationId, RoadNetwork, Tick, TravellerId, TravellerSpec};
use crate::plan::{build_schedule, tpp, traversal_duration, Plan, SolutionSet, TimeSlot};
use crate::router::traveller_precedence;
use crate::traveller::{constrained_shortest_path, Constraint};

pub const ORACLE_MAX_TRAVELLERS: usize = 3;
pub const ORACLE_MAX_LOCATIONS: usize = 12;
pub const ORACLE_MAX_HORIZON: Tick = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("no travellers")]
    Empty,
    #[error("{0} cannot be scheduled")]
    Infeasible(TravellerId),
    #[error("no conflict-free joint schedule within the horizon")]
    NoJointSchedule,
    #[error("instance too large: {what} = {value} exceeds {limit}")]
    TooLarge {
        what: &'static str,
        value: u64,
        limit: u64,
    },
}

/// Reserved slots per location.
#[derive(Clone, Debug, Default)]
pub struct ReservationTable {
    slots: BTreeMap<LocationId, Vec<(TravellerId, TimeSlot)>>,
}

impl ReservationTable {
    pub fn reserve(&mut self, plan: &Plan) {
        for s in &plan.steps {
            let list = self.slots.entry(s.loc).or_default();
            let at = list.partition_point(|(_, x)| x.entry <= s.entry);
            list.insert(at, (plan.traveller, s.slot()));
        }
    }

    pub fn slots(&self, loc: LocationId) -> &[(TravellerId, TimeSlot)] {
        self.slots.get(&loc).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Whether `slot` keeps the separation rule with every reservation at `loc`.
    pub fn admits(&self, loc: LocationId, slot: &TimeSlot, t_min: Tick) -> bool {
        self.slots(loc)
            .iter()
            .all(|(_, s)| slot.separated(s, t_min))
    }

    /// Each reservation widened by `t_min` on both sides as a forbidden window.
    pub fn constraints(&self, t_min: Tick) -> Vec<Constraint> {
        self.slots
            .iter()
            .flat_map(|(&loc, list)| {
                list.iter().map(move |(_, s)| Constraint {
                    loc,
                    from: s.entry.saturating_sub(t_min),
                    until: s.exit + t_min,
                })
            })
            .collect()
    }
}

/// Sequential planning in precedence order against a growing reservation table.
pub fn priority_plan(
    specs: &[TravellerSpec],
    net: &RoadNetwork,
    t_min: Tick,
) -> Result<SolutionSet, BaselineError> {
    if specs.is_empty() {
        return Err(BaselineError::Empty);
    }
    let mut order: Vec<&TravellerSpec> = specs.iter().collect();
    order.sort_by_key(|s| traveller_precedence(s));
    let mut table = ReservationTable::default();
    let mut plans = Vec::with_capacity(specs.len());
    for spec in order {
        let plan = constrained_shortest_path(spec, net, &table.constraints(t_min))
            .ok_or(BaselineError::Infeasible(spec.id))?;
        table.reserve(&plan);
        plans.push(plan);
    }
    Ok(SolutionSet::new(plans, specs, net))
}

struct Candidate<'a> {
    spec: &'a TravellerSpec,
    dur: Vec<Tick>,
    to_go: Vec<Option<Tick>>,
    lag: Tick,
}

struct Oracle<'a> {
    net: &'a RoadNetwork,
    travellers: Vec<Candidate<'a>>,
    t_min: Tick,
    horizon: Tick,
    table: ReservationTable,
    chosen: Vec<(Vec<LocationId>, Vec<Tick>)>,
}

impl Oracle<'_> {
    /// Lower bound on the cost of travellers `i..`.
    fn rest(&self, i: usize) -> Tick {
        self.travellers[i..]
            .iter()
            .map(|c| c.to_go[c.spec.source.index()].unwrap_or(0))
            .sum()
    }

    /// Schedules travellers `i..` within a total cost of `budget`.
    fn traveller(&mut self, i: usize, budget: Tick) -> bool {
        if i == self.travellers.len() {
            return true;
        }
        let Some(own) = budget.checked_sub(self.rest(i + 1)) else {
            return false;
        };
        let c = &self.travellers[i];
        let src = c.spec.source;
        let (depart, d) = (c.spec.depart_not_before, c.dur[src.index()]);
        let Some(slack) = own.checked_sub(c.to_go[src.index()].expect("checked reachable")) else {
            return false;
        };
        for w0 in 0..=slack {
            let mut path = vec![src];
            let mut waits = vec![w0];
            if self.step(i, &mut path, &mut waits, depart + w0, w0 + d, budget) {
                return true;
            }
        }
        false
    }

    /// Extends traveller `i`'s partial plan whose head entered the last
    /// location of `path` at `entry`. `spent` is the cost so far including
    /// that location's duration.
    fn step(
        &mut self,
        i: usize,
        path: &mut Vec<LocationId>,
        waits: &mut Vec<Tick>,
        entry: Tick,
        spent: Tick,
        budget: Tick,
    ) -> bool {
        let own = budget - self.rest(i + 1);
        let c = &self.travellers[i];
        let here = *path.last().expect("non-empty");
        let d = c.dur[here.index()];
        let bound = spent - d + c.to_go[here.index()].expect("on a route to the goal");
        if bound > own {
            return false;
        }
        if here == c.spec.destination {
            let slot = TimeSlot::new(entry, entry + d);
            if slot.exit > self.horizon || !self.table.admits(here, &slot, self.t_min) {
                return false;
            }
            let spec = c.spec;
            let plan = build_schedule(spec, path, spec.depart_not_before, waits, self.net)
                .expect("enumerated plans are well formed");
            self.table.reserve(&plan);
            self.chosen.push((path.clone(), waits.clone()));
            if self.traveller(i + 1, budget - spent) {
                return true;
            }
            self.chosen.pop();
            self.unreserve(&plan);
            return false;
        }
        let lag = c.lag;
        let neighbours: Vec<LocationId> = self.net.neighbours(here).to_vec();
        for w in 0..=own - bound {
            let slot = TimeSlot::new(entry, entry + d + w);
            // a longer stay only adds conflicts
            if slot.exit > self.horizon || !self.table.admits(here, &slot, self.t_min) {
                break;
            }
            for &n in &neighbours {
                let c = &self.travellers[i];
                let Some(n_to_go) = c.to_go[n.index()] else {
                    continue;
                };
                if path.contains(&n) || spent + w + n_to_go > own {
                    continue;
                }
                let nd = c.dur[n.index()];
                path.push(n);
                waits.push(w);
                let found = self.step(i, path, waits, slot.exit - lag, spent + w + nd, budget);
                path.pop();
                waits.pop();
                if found {
                    return true;
                }
            }
        }
        false
    }

    fn unreserve(&mut self, plan: &Plan) {
        for s in &plan.steps {
            if let Some(list) = self.table.slots.get_mut(&s.loc) {
                if let Some(pos) = list
                    .iter()
                    .position(|(t, x)| *t == plan.traveller && *x == s.slot())
                {
                    list.remove(pos);
                }
            }
        }
    }
}

/// Least total cost conflict-free joint schedule in which every occupancy
/// ends by `horizon`.
///
/// Budgets are tried in increasing order from the sum of the individual
/// optima; within a budget travellers are fixed in id order and each one's
/// plans are tried in `w0, l0, w1, l1, ...` order, so the result is the
/// first optimal solution in that order.
pub fn brute_force_optimal(
    specs: &[TravellerSpec],
    net: &RoadNetwork,
    t_min: Tick,
    horizon: Tick,
) -> Result<SolutionSet, BaselineError> {
    if specs.is_empty() {
        return Err(BaselineError::Empty);
    }
    let limits = [
        (
            "travellers",
            specs.len() as u64,
            ORACLE_MAX_TRAVELLERS as u64,
        ),
        ("locations", net.len() as u64, ORACLE_MAX_LOCATIONS as u64),
        ("horizon", horizon, ORACLE_MAX_HORIZON),
    ];
    for (what, value, limit) in limits {
        if value > limit {
            return Err(BaselineError::TooLarge { what, value, limit });
        }
    }
    let mut sorted: Vec<&TravellerSpec> = specs.iter().collect();
    sorted.sort_by_key(|s| s.id);
    let mut travellers = Vec::new();
    for spec in sorted {
        let to_go = cost_to_go(net, spec, spec.destination);
        if to_go[spec.source.index()].is_none() {
            return Err(BaselineError::Infeasible(spec.id));
        }
        travellers.push(Candidate {
            spec,
            dur: net
                .locations()
                .iter()
                .map(|l| traversal_duration(spec, l))
                .collect(),
            to_go,
            lag: tpp(spec),
        });
    }
    let mut oracle = Oracle {
        net,
        travellers,
        t_min,
        horizon,
        table: ReservationTable::default(),
        chosen: Vec::new(),
    };
    let lower = oracle.rest(0);
    // completion = departure + cost - tpp * (hops - 1) must not pass the horizon
    let upper: Tick = oracle
        .travellers
        .iter()
        .map(|c| horizon.saturating_sub(c.spec.depart_not_before) + c.lag * net.len() as Tick)
        .sum();
    for budget in lower..=upper {
        if oracle.traveller(0, budget) {
            let plans = oracle
                .chosen
                .iter()
                .zip(&oracle.travellers)
                .map(|((path, waits), c)| {
                    build_schedule(c.spec, path, c.spec.depart_not_before, waits, net)
                        .expect("enumerated plans are well formed")
                })
                .collect();
            return Ok(SolutionSet::new(plans, specs, net));
        }
    }
    Err(BaselineError::NoJointSchedule)
}
