//! Traveller agent: best-first negotiation over a constraint tree.
//!
//! Every round the traveller offers the plan of its least-cost open node to
//! the Routers. A proposal that matches the request slot for slot is
//! accepted. Otherwise two children are generated from the first delayed
//! location: one that idles for the imposed delay right before that
//! location, and one that re-plans with the delayed window forbidden.

mod search;

pub use search::constrained_shortest_path;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::netmodel::{LocationId, RoadNetwork, Tick, TravellerId, TravellerSpec};
use crate::plan::{
    build_schedule, check_consistency, plan_cost, Consistency, Plan, ProposedPlan,
    ProtocolViolation,
};
use crate::router::Request;

/// Forbids occupying `loc` at any time in `[from, until)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    pub loc: LocationId,
    pub from: Tick,
    pub until: Tick,
}

impl Constraint {
    pub fn violated_by(&self, plan: &Plan) -> bool {
        plan.steps
            .iter()
            .any(|s| s.loc == self.loc && s.slot().intersects(self.from, self.until))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CtNode {
    pub id: usize,
    pub plan: Plan,
    pub constraints: Vec<Constraint>,
    pub cost: Tick,
    pub parent: Option<usize>,
    pub explored: bool,
}

/// Unexplored nodes ordered by cost, then insertion order.
#[derive(Debug, Default)]
pub struct OpenSet {
    heap: BinaryHeap<Reverse<(Tick, u64, usize)>>,
    inserted: u64,
}

impl OpenSet {
    pub fn push(&mut self, cost: Tick, node: usize) {
        self.heap.push(Reverse((cost, self.inserted, node)));
        self.inserted += 1;
    }

    pub fn pop(&mut self) -> Option<(Tick, usize)> {
        self.heap.pop().map(|Reverse((c, _, n))| (c, n))
    }

    pub fn min_cost(&self) -> Option<Tick> {
        self.heap.peek().map(|Reverse((c, _, _))| *c)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravellerStatus {
    Negotiating,
    PlanFound,
    Failed,
}

/// Counters kept while searching; the `*_violations` fields record breaches
/// of the cost-monotonicity and accept-at-minimum properties.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TravellerStats {
    pub explored: usize,
    pub generated: usize,
    pub wait_children: usize,
    pub detour_children: usize,
    pub duplicates: usize,
    /// Wait-children dropped because they broke an inherited constraint.
    pub wait_children_blocked: usize,
    /// Detour-children dropped because they were cheaper than their parent.
    pub detours_below_parent: usize,
    pub child_cost_violations: usize,
    pub acceptance_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Accepted(Plan),
    Expanded(Vec<usize>),
}

#[derive(Debug)]
pub struct TravellerState {
    spec: TravellerSpec,
    tree: Vec<CtNode>,
    open: OpenSet,
    seen: HashSet<(Vec<LocationId>, Vec<Tick>)>,
    current: Option<usize>,
    status: TravellerStatus,
    final_plan: Option<Plan>,
    stats: TravellerStats,
}

impl TravellerState {
    /// Root node: shortest path on an empty network, leaving at departure time.
    pub fn init(spec: TravellerSpec, net: &RoadNetwork) -> TravellerState {
        let mut state = TravellerState {
            spec,
            tree: Vec::new(),
            open: OpenSet::default(),
            seen: HashSet::new(),
            current: None,
            status: TravellerStatus::Negotiating,
            final_plan: None,
            stats: TravellerStats::default(),
        };
        let root = crate::netmodel::shortest_path(
            net,
            &state.spec,
            state.spec.source,
            state.spec.destination,
        )
        .ok()
        .and_then(|path| {
            let waits = vec![0; path.len()];
            build_schedule(
                &state.spec,
                &path,
                state.spec.depart_not_before,
                &waits,
                net,
            )
            .ok()
        });
        match root {
            Some(plan) => {
                state.insert(plan, Vec::new(), None, net);
            }
            None => state.status = TravellerStatus::Failed,
        }
        state
    }

    pub fn id(&self) -> TravellerId {
        self.spec.id
    }

    pub fn spec(&self) -> &TravellerSpec {
        &self.spec
    }

    pub fn status(&self) -> TravellerStatus {
        self.status
    }

    pub fn final_plan(&self) -> Option<&Plan> {
        self.final_plan.as_ref()
    }

    pub fn stats(&self) -> &TravellerStats {
        &self.stats
    }

    pub fn tree(&self) -> &[CtNode] {
        &self.tree
    }

    pub fn open(&self) -> &OpenSet {
        &self.open
    }

    /// Plan currently under negotiation.
    pub fn current(&self) -> Option<&CtNode> {
        self.current.map(|i| &self.tree[i])
    }

    fn insert(
        &mut self,
        plan: Plan,
        constraints: Vec<Constraint>,
        parent: Option<usize>,
        net: &RoadNetwork,
    ) -> Option<usize> {
        if !self.seen.insert((plan.path(), plan.waits.clone())) {
            self.stats.duplicates += 1;
            return None;
        }
        let id = self.tree.len();
        let cost = plan_cost(&plan, &self.spec, net);
        if let Some(p) = parent {
            if cost < self.tree[p].cost {
                self.stats.child_cost_violations += 1;
            }
        }
        self.tree.push(CtNode {
            id,
            plan,
            constraints,
            cost,
            parent,
            explored: false,
        });
        self.open.push(cost, id);
        self.stats.generated += 1;
        Some(id)
    }

    fn requests_for(&self, plan: &Plan, committed: bool) -> Vec<Request> {
        plan.steps
            .iter()
            .map(|s| Request {
                traveller: self.spec.id,
                loc: s.loc,
                slot: s.slot(),
                speed: self.spec.speed,
                length: self.spec.length,
                committed,
            })
            .collect()
    }

    /// Takes the least-cost open node under negotiation and returns one
    /// request per location of its plan. Fails the traveller when the open
    /// set is exhausted.
    pub fn next_request(&mut self) -> Option<Vec<Request>> {
        if self.status != TravellerStatus::Negotiating {
            return None;
        }
        let node = match self.current {
            Some(n) => n,
            None => match self.open.pop() {
                Some((_, n)) => {
                    self.stats.explored += 1;
                    self.tree[n].explored = true;
                    self.current = Some(n);
                    n
                }
                None => {
                    self.status = TravellerStatus::Failed;
                    return None;
                }
            },
        };
        Some(self.requests_for(&self.tree[node].plan, false))
    }

    /// Requests re-sent every round once a plan has been accepted.
    pub fn committed_requests(&self) -> Vec<Request> {
        self.final_plan
            .as_ref()
            .map(|p| self.requests_for(p, true))
            .unwrap_or_default()
    }

    /// Handles the Routers' answer to the current request.
    pub fn process_proposals(
        &mut self,
        proposal: &ProposedPlan,
        net: &RoadNetwork,
    ) -> Result<Outcome, ProtocolViolation> {
        let node = self.current.ok_or_else(|| {
            ProtocolViolation::Message(format!("{} has no outstanding request", self.spec.id))
        })?;
        let verdict = check_consistency(&self.tree[node].plan, proposal, &self.spec)?;
        self.current = None;
        match verdict {
            Consistency::Consistent => {
                if self
                    .open
                    .min_cost()
                    .is_some_and(|m| m < self.tree[node].cost)
                {
                    self.stats.acceptance_violations += 1;
                }
                let plan = self.tree[node].plan.clone();
                self.final_plan = Some(plan.clone());
                self.status = TravellerStatus::PlanFound;
                Ok(Outcome::Accepted(plan))
            }
            Consistency::FirstDeviation { step, delay } => {
                Ok(Outcome::Expanded(self.expand(node, step, delay, net)))
            }
        }
    }

    fn expand(&mut self, node: usize, step: usize, delay: Tick, net: &RoadNetwork) -> Vec<usize> {
        let parent = self.tree[node].clone();
        let mut children = Vec::new();

        let mut waits = parent.plan.waits.clone();
        waits[step] += delay;
        let waited = build_schedule(
            &self.spec,
            &parent.plan.path(),
            self.spec.depart_not_before,
            &waits,
            net,
        )
        .expect("parent path is valid");
        if parent.constraints.iter().any(|c| c.violated_by(&waited)) {
            self.stats.wait_children_blocked += 1;
        } else if let Some(id) = self.insert(waited, parent.constraints.clone(), Some(node), net) {
            self.stats.wait_children += 1;
            children.push(id);
        }

        let deviated = parent.plan.steps[step];
        let mut constraints = parent.constraints.clone();
        constraints.push(Constraint {
            loc: deviated.loc,
            from: deviated.entry,
            until: deviated.entry + delay,
        });
        constraints.sort();
        constraints.dedup();
        if let Some(detour) = constrained_shortest_path(&self.spec, net, &constraints) {
            if plan_cost(&detour, &self.spec, net) < parent.cost {
                self.stats.detours_below_parent += 1;
            } else if let Some(id) = self.insert(detour, constraints, Some(node), net) {
                self.stats.detour_children += 1;
                children.push(id);
            }
        }
        children
    }

    /// Constraint tree as JSON, for debugging.
    pub fn ct_dump(&self) -> serde_json::Value {
        serde_json::json!({
            "traveller": self.spec.id,
            "status": self.status,
            "nodes": self.tree,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{ProposedStep, TimeSlot};

    fn spec(src: u32, dst: u32, depart: Tick) -> TravellerSpec {
        TravellerSpec {
            id: TravellerId(0),
            length: 2,
            speed: 1,
            source: LocationId(src),
            destination: LocationId(dst),
            depart_not_before: depart,
        }
    }

    /// n0 - e2 - n1, edge length 3.
    fn one_edge() -> RoadNetwork {
        let mut b = RoadNetwork::builder();
        let a = b.add_node(0, None);
        let z = b.add_node(0, None);
        b.add_edge(a, z, 3, None).unwrap();
        b.build()
    }

    /// Diamond s=0, top=1, bottom=2, t=3; edges 4:(0,1) 5:(1,3) 6:(0,2) 7:(2,3).
    fn diamond(top: u32, bottom: u32) -> RoadNetwork {
        let mut b = RoadNetwork::builder();
        let n: Vec<_> = (0..4).map(|_| b.add_node(0, None)).collect();
        b.add_edge(n[0], n[1], top, None).unwrap();
        b.add_edge(n[1], n[3], top, None).unwrap();
        b.add_edge(n[0], n[2], bottom, None).unwrap();
        b.add_edge(n[2], n[3], bottom, None).unwrap();
        b.build()
    }

    fn delayed(plan: &Plan, step: usize, by: Tick) -> ProposedPlan {
        let slots = plan.steps.iter().enumerate().map(|(i, s)| {
            let shift = if i == step { by } else { 0 };
            (s.loc, TimeSlot::new(s.entry + shift, s.exit + shift))
        });
        ProposedPlan::assemble(plan, slots)
    }

    #[test]
    fn root_plan() {
        let net = one_edge();
        let mut t = TravellerState::init(spec(0, 1, 0), &net);
        let reqs = t.next_request().unwrap();
        assert_eq!(reqs.len(), 3);
        assert_eq!(reqs[0].slot.entry, 0);
        assert_eq!(t.open().len(), 0);

        let mut late = TravellerState::init(spec(0, 1, 7), &net);
        assert_eq!(late.next_request().unwrap()[0].slot.entry, 7);
    }

    #[test]
    fn unreachable_destination_fails() {
        let mut b = RoadNetwork::builder();
        b.add_node(0, None);
        b.add_node(0, None);
        let net = b.build();
        let mut t = TravellerState::init(spec(0, 1, 0), &net);
        assert_eq!(t.status(), TravellerStatus::Failed);
        assert!(t.next_request().is_none());
    }

    #[test]
    fn verbatim_proposal_accepted() {
        let net = one_edge();
        let mut t = TravellerState::init(spec(0, 1, 0), &net);
        t.next_request().unwrap();
        let plan = t.current().unwrap().plan.clone();
        let out = t
            .process_proposals(&ProposedPlan::verbatim(&plan), &net)
            .unwrap();
        assert_eq!(out, Outcome::Accepted(plan.clone()));
        assert_eq!(t.status(), TravellerStatus::PlanFound);
        assert_eq!(t.final_plan(), Some(&plan));
        assert!(t.committed_requests().iter().all(|r| r.committed));
    }

    #[test]
    fn least_cost_then_insertion_order() {
        let mut open = OpenSet::default();
        open.push(13, 0);
        open.push(9, 1);
        open.push(9, 2);
        assert_eq!(open.pop(), Some((9, 1)));
        assert_eq!(open.pop(), Some((9, 2)));
        assert_eq!(open.pop(), Some((13, 0)));
    }

    #[test]
    fn diamond_children() {
        // top edges length 3 (dur 5), bottom length 4 (dur 6):
        // root goes over the top with cost 16; the bottom costs 18.
        let net = diamond(3, 4);
        let mut t = TravellerState::init(spec(0, 3, 0), &net);
        t.next_request().unwrap();
        let root = t.current().unwrap().clone();
        assert_eq!(root.cost, 16);
        assert_eq!(root.plan.path()[2], LocationId(1));
        // step 2 is node 1 (entry 3): delay it by 3
        let out = t
            .process_proposals(&delayed(&root.plan, 2, 3), &net)
            .unwrap();
        let Outcome::Expanded(children) = out else {
            panic!("expected expansion")
        };
        assert_eq!(children.len(), 2);
        let wait = &t.tree()[children[0]];
        assert_eq!(wait.cost, root.cost + 3);
        assert_eq!(wait.plan.waits[2], 3);
        assert!(wait.constraints.is_empty());
        let detour = &t.tree()[children[1]];
        assert_eq!(
            detour.constraints,
            vec![Constraint {
                loc: LocationId(1),
                from: 3,
                until: 6
            }]
        );
        assert!(!detour.constraints[0].violated_by(&detour.plan));
        // around [3, 6) on node 1: idling on the top costs 19, the bottom 18
        assert_eq!(detour.cost, 18);
        assert_eq!(detour.plan.path()[2], LocationId(2));
        assert!(t.stats().child_cost_violations == 0);
    }

    #[test]
    fn bridge_yields_only_wait_child() {
        let net = one_edge();
        let mut t = TravellerState::init(spec(0, 1, 0), &net);
        t.next_request().unwrap();
        let root = t.current().unwrap().plan.clone();
        let out = t.process_proposals(&delayed(&root, 1, 3), &net).unwrap();
        assert_eq!(out, Outcome::Expanded(vec![1]));
        assert_eq!(t.stats().duplicates, 1);
        assert_eq!(t.tree()[1].plan.waits, vec![0, 3, 0]);
    }

    #[test]
    fn early_proposal_is_violation() {
        let net = one_edge();
        let mut t = TravellerState::init(spec(0, 1, 5), &net);
        t.next_request().unwrap();
        let plan = t.current().unwrap().plan.clone();
        let mut p = ProposedPlan::verbatim(&plan);
        p.steps[0] = ProposedStep {
            entry: 4,
            exit: 6,
            ..p.steps[0]
        };
        assert!(t.process_proposals(&p, &net).is_err());
    }

    #[test]
    fn violation_keeps_request_outstanding() {
        let net = one_edge();
        let mut t = TravellerState::init(spec(0, 1, 0), &net);
        t.next_request().unwrap();
        let plan = t.current().unwrap().plan.clone();
        let mut p = ProposedPlan::verbatim(&plan);
        p.steps[0].loc = LocationId(42);
        assert!(t.process_proposals(&p, &net).is_err());
        assert!(t.current().is_some());
    }
}
