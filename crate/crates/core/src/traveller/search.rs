//! Least-cost schedule under forbidden occupancy intervals.
//!
//! A* over states `(location, entry, pending wait)`: the head sits at the end
//! of `location`, having entered it at `entry`, and has idled `pending` ticks
//! so far. Each tick of idling costs 1; moving on costs the duration of the
//! next location. The pre-departure phase is modelled by a virtual start
//! state whose pending wait is the departure delay.
//!
//! Once the optimum is known, the lexicographically smallest optimal plan is
//! read out of the predecessor DAG, where a plan is the sequence
//! `w0, l0, w1, l1, ...` of waits and location ids. Moving on therefore beats
//! idling, and with no constraints the result equals the unconstrained
//! shortest path with zero waits.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::Constraint;
use crate::netmodel::{cost_to_go, LocationId, RoadNetwork, Tick, TravellerSpec};
use crate::plan::{build_schedule, tpp, traversal_duration, Plan};

const START: u32 = u32::MAX;
const DFS_BUDGET: usize = 1_000_000;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct State {
    loc: u32,
    entry: Tick,
    wait: Tick,
}

struct Forbidden<'a> {
    by_loc: HashMap<LocationId, Vec<&'a Constraint>>,
}

impl<'a> Forbidden<'a> {
    fn new(constraints: &'a [Constraint]) -> Self {
        let mut by_loc: HashMap<LocationId, Vec<&Constraint>> = HashMap::new();
        for c in constraints {
            by_loc.entry(c.loc).or_default().push(c);
        }
        Forbidden { by_loc }
    }

    fn clear(&self, loc: LocationId, entry: Tick, exit: Tick) -> bool {
        self.by_loc
            .get(&loc)
            .is_none_or(|cs| cs.iter().all(|c| !(entry < c.until && c.from < exit)))
    }
}

/// The time-expanded search space of one traveller.
struct Space<'a> {
    net: &'a RoadNetwork,
    forbidden: Forbidden<'a>,
    dur: Vec<Tick>,
    to_go: Vec<Option<Tick>>,
    unconstrained: Tick,
    lag: Tick,
    horizon: Tick,
    src: LocationId,
}

impl Space<'_> {
    fn heuristic(&self, s: &State) -> Tick {
        if s.loc == START {
            self.unconstrained
        } else {
            let i = s.loc as usize;
            self.to_go[i].expect("reached locations are connected") - self.dur[i]
        }
    }

    fn successors(&self, s: &State) -> Vec<(State, Tick)> {
        let mut succ = Vec::with_capacity(6);
        if s.loc == START {
            if s.entry < self.horizon {
                succ.push((
                    State {
                        loc: START,
                        entry: s.entry + 1,
                        wait: 0,
                    },
                    1,
                ));
            }
            let d = self.dur[self.src.index()];
            if s.entry + d <= self.horizon && self.forbidden.clear(self.src, s.entry, s.entry + d) {
                succ.push((
                    State {
                        loc: self.src.0,
                        entry: s.entry,
                        wait: 0,
                    },
                    d,
                ));
            }
        } else {
            let here = LocationId(s.loc);
            let end = s.entry + self.dur[here.index()] + s.wait;
            if end < self.horizon && self.forbidden.clear(here, s.entry, end + 1) {
                succ.push((
                    State {
                        wait: s.wait + 1,
                        ..*s
                    },
                    1,
                ));
            }
            let next_entry = end - self.lag;
            for &n in self.net.neighbours(here) {
                let d = self.dur[n.index()];
                if next_entry + d <= self.horizon
                    && self.forbidden.clear(n, next_entry, next_entry + d)
                {
                    succ.push((
                        State {
                            loc: n.0,
                            entry: next_entry,
                            wait: 0,
                        },
                        d,
                    ));
                }
            }
        }
        succ
    }
}

/// Least-cost plan whose every occupancy window avoids the constraints on
/// its location, departing no earlier than the traveller's departure time.
///
/// The search is bounded by `max(departure, latest constraint end) +
/// unconstrained cost`, which always admits the plan that idles at the start
/// until every constraint has expired. `None` means the destination is
/// unreachable.
///
/// When every optimal schedule of the state graph revisits a location, a
/// slower search over partial plans with their visited sets finds the
/// cheapest simple one instead; the `w0, l0, ...` tie-break does not apply
/// to that case.
pub fn constrained_shortest_path(
    spec: &TravellerSpec,
    net: &RoadNetwork,
    constraints: &[Constraint],
) -> Option<Plan> {
    let to_go = cost_to_go(net, spec, spec.destination);
    let unconstrained = to_go[spec.source.index()]?;
    let depart = spec.depart_not_before;
    let latest = constraints.iter().map(|c| c.until).max().unwrap_or(0);
    let space = Space {
        net,
        forbidden: Forbidden::new(constraints),
        dur: net
            .locations()
            .iter()
            .map(|l| traversal_duration(spec, l))
            .collect(),
        to_go,
        unconstrained,
        lag: tpp(spec),
        horizon: depart.max(latest) + unconstrained,
        src: spec.source,
    };
    let dest = spec.destination.0;

    let start = State {
        loc: START,
        entry: depart,
        wait: 0,
    };
    let mut g: HashMap<State, Tick> = HashMap::from([(start, 0)]);
    let mut preds: HashMap<State, Vec<State>> = HashMap::new();
    let mut closed: HashSet<State> = HashSet::new();
    let mut heap = BinaryHeap::from([Reverse((unconstrained, start))]);
    let mut goals = Vec::new();
    let mut best: Option<Tick> = None;

    while let Some(Reverse((f, s))) = heap.pop() {
        if best.is_some_and(|b| f > b) {
            break;
        }
        if !closed.insert(s) {
            continue;
        }
        let gs = g[&s];
        if s.loc == dest {
            best.get_or_insert(gs);
            goals.push(s);
            continue;
        }
        for (t, cost) in space.successors(&s) {
            let ng = gs + cost;
            match g.get(&t) {
                Some(&old) if ng > old => {}
                Some(&old) if ng == old => preds.entry(t).or_default().push(s),
                _ => {
                    g.insert(t, ng);
                    preds.insert(t, vec![s]);
                    heap.push(Reverse((ng + space.heuristic(&t), t)));
                }
            }
        }
    }

    if goals.is_empty() {
        return None;
    }

    // States lying on some optimal plan, with forward links between them.
    let mut on_optimal: HashSet<State> = goals.iter().copied().collect();
    let mut stack = goals.clone();
    let mut succ: HashMap<State, Vec<State>> = HashMap::new();
    while let Some(t) = stack.pop() {
        for &p in preds.get(&t).map(Vec::as_slice).unwrap_or(&[]) {
            succ.entry(p).or_default().push(t);
            if on_optimal.insert(p) {
                stack.push(p);
            }
        }
    }
    // moves before idling, smaller location ids first
    for next in succ.values_mut() {
        next.sort_by_key(|t| (t.wait != 0 || t.loc == START, t.loc));
        next.dedup();
    }

    let route = match lexicographic_route(start, &succ, dest) {
        Some(route) => route,
        None => simple_route(&space, start, dest)?,
    };
    let mut path = Vec::new();
    let mut waits = Vec::new();
    let mut pending = 0;
    for s in &route {
        if s.loc == START {
            pending = s.entry - depart;
        } else if s.wait == 0 {
            path.push(LocationId(s.loc));
            waits.push(pending);
            pending = 0;
        } else {
            pending = s.wait;
        }
    }
    let plan = build_schedule(spec, &path, depart, &waits, net).expect("search follows adjacency");
    debug_assert!(plan
        .steps
        .iter()
        .all(|st| space.forbidden.clear(st.loc, st.entry, st.exit)));
    Some(plan)
}

struct Partial {
    state: State,
    g: Tick,
    parent: Option<usize>,
    visited_hash: u64,
}

fn location_hash(loc: u32) -> u64 {
    let mut z = (loc as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Best-first search over partial plans that never revisit a location.
/// Partial plans meeting in the same state with the same visited set are
/// merged, the cheaper one surviving.
fn simple_route(space: &Space, start: State, dest: u32) -> Option<Vec<State>> {
    let mut nodes = vec![Partial {
        state: start,
        g: 0,
        parent: None,
        visited_hash: 0,
    }];
    let visited = |nodes: &[Partial], mut i: usize| -> Vec<u32> {
        let mut locs = Vec::new();
        loop {
            let loc = nodes[i].state.loc;
            if loc != START && locs.last() != Some(&loc) {
                locs.push(loc);
            }
            match nodes[i].parent {
                Some(p) => i = p,
                None => break,
            }
        }
        locs.sort_unstable();
        locs
    };
    let mut seen: HashMap<(State, u64), Vec<usize>> = HashMap::new();
    let mut heap = BinaryHeap::from([Reverse((space.heuristic(&start), 0usize))]);
    while let Some(Reverse((_, i))) = heap.pop() {
        let s = nodes[i].state;
        if s.loc == dest {
            let mut route = Vec::new();
            let mut cursor = Some(i);
            while let Some(c) = cursor {
                route.push(nodes[c].state);
                cursor = nodes[c].parent;
            }
            route.reverse();
            return Some(route);
        }
        let here = visited(&nodes, i);
        for (t, cost) in space.successors(&s) {
            let moving = t.loc != s.loc;
            if moving && t.loc != START && here.binary_search(&t.loc).is_ok() {
                continue;
            }
            let visited_hash = if moving && t.loc != START {
                nodes[i].visited_hash ^ location_hash(t.loc)
            } else {
                nodes[i].visited_hash
            };
            let g = nodes[i].g + cost;
            let key = (t, visited_hash);
            let mut next_set = here.clone();
            if moving && t.loc != START {
                let at = next_set.binary_search(&t.loc).unwrap_err();
                next_set.insert(at, t.loc);
            }
            let bucket = seen.entry(key).or_default();
            if bucket
                .iter()
                .any(|&j| nodes[j].g <= g && visited(&nodes, j) == next_set)
            {
                continue;
            }
            bucket.push(nodes.len());
            nodes.push(Partial {
                state: t,
                g,
                parent: Some(i),
                visited_hash,
            });
            heap.push(Reverse((g + space.heuristic(&t), nodes.len() - 1)));
        }
    }
    None
}

/// Depth-first walk through the optimal DAG in preference order, rejecting
/// routes that revisit a location.
fn lexicographic_route(
    start: State,
    succ: &HashMap<State, Vec<State>>,
    dest: u32,
) -> Option<Vec<State>> {
    let mut route = vec![start];
    let mut cursor = vec![0usize];
    let mut visited: HashSet<u32> = HashSet::new();
    let mut budget = DFS_BUDGET;
    while let Some(&top) = route.last() {
        if top.loc == dest {
            return Some(route);
        }
        budget = budget.checked_sub(1)?;
        let options = succ.get(&top).map(Vec::as_slice).unwrap_or(&[]);
        let i = cursor.last_mut().expect("cursor tracks route");
        let next = options[*i..]
            .iter()
            .position(|t| t.loc == top.loc || !visited.contains(&t.loc));
        match next {
            Some(off) => {
                let t = options[*i + off];
                *i += off + 1;
                if t.loc != top.loc && t.loc != START {
                    visited.insert(t.loc);
                }
                route.push(t);
                cursor.push(0);
            }
            None => {
                let dead = route.pop().expect("non-empty");
                cursor.pop();
                if let Some(&prev) = route.last() {
                    if prev.loc != dead.loc {
                        visited.remove(&dead.loc);
                    }
                }
            }
        }
    }
    None
}
