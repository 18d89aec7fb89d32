use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::host::{partition, LocalHost, RemoteHost, TravellerHost};
use super::message::{
    AgentId, MessageKind, Payload, RoundEvent, RoundMessage, SequenceGuard, TravellerSummary,
};
use super::transport::Transport;
use super::EngineError;
use crate::netmodel::{shortest_path, LocationId, RoadNetwork, Tick, TravellerId, TravellerSpec};
use crate::plan::{validate_plan, validate_solution, SolutionSet, TimeSlot, Validation};
use crate::router::{Request, Router};
use crate::traveller::TravellerStatus;

/// Upper bound applied to the default round budget.
pub const MAX_ROUNDS_CAP: u64 = 100_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub t_min: Tick,
    /// `None` derives a budget from the travellers' root paths.
    pub max_rounds: Option<u64>,
    pub parallel: bool,
    pub trace: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            t_min: 1,
            max_rounds: None,
            parallel: false,
            trace: false,
        }
    }
}

/// Sum over travellers of `2^min(k, 12)`, `k` being the hop count of the
/// unconstrained route, capped at [`MAX_ROUNDS_CAP`].
pub fn default_max_rounds(specs: &[TravellerSpec], net: &RoadNetwork) -> u64 {
    specs
        .iter()
        .map(|s| {
            let k = shortest_path(net, s, s.source, s.destination)
                .map(|p| p.len() as u32)
                .unwrap_or(0);
            1u64 << k.min(12)
        })
        .sum::<u64>()
        .clamp(1, MAX_ROUNDS_CAP)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RoundReport {
    pub round: u64,
    pub requests: usize,
    pub proposals_delivered: usize,
    pub acceptances: usize,
    pub expansions: usize,
    pub failures: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    TravellerFailed,
    RoundLimit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TravellerReport {
    pub id: TravellerId,
    pub status: TravellerStatus,
    pub failed_round: Option<u64>,
    pub ct_nodes: usize,
    pub explored: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub reason: FailureReason,
    pub rounds: u64,
    pub travellers: Vec<TravellerReport>,
    /// Plans of the travellers that did converge.
    pub partial: SolutionSet,
}

impl FailureReport {
    pub fn failed(&self) -> impl Iterator<Item = &TravellerReport> {
        self.travellers
            .iter()
            .filter(|t| t.status != TravellerStatus::PlanFound)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Termination {
    Solved(SolutionSet),
    Failed(FailureReport),
}

impl Termination {
    pub fn solution(&self) -> Option<&SolutionSet> {
        match self {
            Termination::Solved(s) => Some(s),
            Termination::Failed(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EngineMetrics {
    pub rounds: u64,
    pub messages_sent: u64,
    pub ct_nodes_expanded: u64,
    pub ct_nodes: u64,
}

/// Hub of the negotiation: owns the Routers, drives synchronous rounds and
/// relays messages between them and the traveller hosts.
pub struct EngineState {
    net: Arc<RoadNetwork>,
    specs: Vec<TravellerSpec>,
    config: EngineConfig,
    hosts: Vec<Box<dyn TravellerHost>>,
    owner: HashMap<TravellerId, usize>,
    routers: Vec<Router>,
    status: BTreeMap<TravellerId, TravellerStatus>,
    guard: SequenceGuard,
    round: u64,
    converged: bool,
    messages_sent: u64,
    trace: Vec<String>,
    summaries: Vec<TravellerSummary>,
}

impl EngineState {
    pub fn new(
        net: Arc<RoadNetwork>,
        specs: Vec<TravellerSpec>,
        config: EngineConfig,
        mut hosts: Vec<Box<dyn TravellerHost>>,
    ) -> Result<EngineState, EngineError> {
        let mut specs = specs;
        specs.sort_by_key(|s| s.id);
        for pair in specs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(crate::netmodel::NetError::DuplicateTraveller(pair[0].id).into());
            }
        }
        for s in &specs {
            s.validate(&net)?;
        }
        let mut owner = HashMap::new();
        for (h, host) in hosts.iter().enumerate() {
            for t in host.travellers() {
                if owner.insert(t, h).is_some() {
                    return Err(EngineError::Hosting(format!("{t} is hosted twice")));
                }
            }
        }
        if owner.len() != specs.len() || specs.iter().any(|s| !owner.contains_key(&s.id)) {
            return Err(EngineError::Hosting("hosts and travellers differ".into()));
        }
        let routers = net.locations().iter().map(|l| Router::new(l.id)).collect();
        let mut status: BTreeMap<TravellerId, TravellerStatus> = specs
            .iter()
            .map(|s| (s.id, TravellerStatus::Negotiating))
            .collect();
        let mut guard = SequenceGuard::default();
        let mut messages_sent = 0;
        for (h, host) in hosts.iter_mut().enumerate() {
            for msg in host.init()? {
                guard
                    .admit(&msg)
                    .map_err(|e| EngineError::protocol(e.to_string(), &msg))?;
                match (msg.kind, msg.sender) {
                    (MessageKind::Failed, AgentId::Traveller(t)) if owner.get(&t) == Some(&h) => {
                        status.insert(t, TravellerStatus::Failed);
                        messages_sent += 1;
                    }
                    _ => return Err(EngineError::protocol("unexpected message at init", &msg)),
                }
            }
        }
        let converged = status.values().all(|s| *s != TravellerStatus::Negotiating);
        Ok(EngineState {
            net,
            specs,
            config,
            hosts,
            owner,
            routers,
            status,
            guard,
            round: 0,
            converged,
            messages_sent,
            trace: Vec::new(),
            summaries: Vec::new(),
        })
    }

    /// All travellers in this process.
    pub fn local(
        net: Arc<RoadNetwork>,
        specs: Vec<TravellerSpec>,
        config: EngineConfig,
    ) -> Result<EngineState, EngineError> {
        let host = LocalHost::new(net.clone(), specs.clone(), config.parallel);
        EngineState::new(net, specs, config, vec![Box::new(host)])
    }

    /// Travellers spread round-robin by id over this process and one worker
    /// per transport.
    pub fn distributed(
        net: Arc<RoadNetwork>,
        specs: Vec<TravellerSpec>,
        config: EngineConfig,
        workers: Vec<Box<dyn Transport>>,
    ) -> Result<EngineState, EngineError> {
        let mut parts = partition(&specs, workers.len() + 1).into_iter();
        let mut hosts: Vec<Box<dyn TravellerHost>> = vec![Box::new(LocalHost::new(
            net.clone(),
            parts.next().unwrap_or_default(),
            config.parallel,
        ))];
        for (i, (transport, part)) in workers.into_iter().zip(parts).enumerate() {
            let host = RemoteHost::assign(transport, i as u32 + 1, &net, part, config.parallel)?;
            hosts.push(Box::new(host));
        }
        EngineState::new(net, specs, config, hosts)
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn status(&self) -> &BTreeMap<TravellerId, TravellerStatus> {
        &self.status
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    /// Per-traveller summaries, filled in when the run terminates.
    pub fn summaries(&self) -> &[TravellerSummary] {
        &self.summaries
    }

    pub fn metrics(&self) -> EngineMetrics {
        EngineMetrics {
            rounds: self.round,
            messages_sent: self.messages_sent,
            ct_nodes_expanded: self.summaries.iter().map(|s| s.stats.explored as u64).sum(),
            ct_nodes: self.summaries.iter().map(|s| s.ct_nodes as u64).sum(),
        }
    }

    fn admit_request(
        &mut self,
        host: usize,
        msg: &RoundMessage,
    ) -> Result<Option<Request>, EngineError> {
        self.guard
            .admit(msg)
            .map_err(|e| EngineError::protocol(e.to_string(), msg))?;
        let sender = match msg.sender {
            AgentId::Traveller(t) if self.owner.get(&t) == Some(&host) => t,
            _ => return Err(EngineError::protocol("sender not hosted here", msg)),
        };
        if msg.round != self.round {
            return Err(EngineError::protocol("message from another round", msg));
        }
        match (&msg.kind, &msg.payload) {
            (
                MessageKind::ReserveRequest | MessageKind::Finalized,
                Payload::Request { request },
            ) if request.traveller == sender
                && msg.recipient == AgentId::Router(request.loc)
                && request.committed == (msg.kind == MessageKind::Finalized)
                && request.loc.index() < self.routers.len()
                && request.slot.exit >= request.slot.entry =>
            {
                Ok(Some(*request))
            }
            (MessageKind::Failed, Payload::Failure { .. }) if msg.recipient == AgentId::Hub => {
                self.status.insert(sender, TravellerStatus::Failed);
                Ok(None)
            }
            _ => Err(EngineError::protocol("malformed traveller message", msg)),
        }
    }

    /// One request, allocate, process cycle.
    pub fn run_round(&mut self) -> Result<RoundReport, EngineError> {
        if self.converged {
            return Err(EngineError::Converged);
        }
        self.round += 1;
        let round = self.round;
        let mut report = RoundReport {
            round,
            ..RoundReport::default()
        };

        let mut inbox: BTreeMap<LocationId, Vec<Request>> = BTreeMap::new();
        for h in 0..self.hosts.len() {
            let msgs = self.hosts[h].request_phase(round)?;
            for msg in &msgs {
                self.messages_sent += 1;
                match self.admit_request(h, msg)? {
                    Some(r) => {
                        let queue = inbox.entry(r.loc).or_default();
                        if queue.iter().any(|q| q.traveller == r.traveller) {
                            return Err(EngineError::protocol("location requested twice", msg));
                        }
                        queue.push(r);
                        report.requests += 1;
                    }
                    None => report.failures += 1,
                }
            }
        }

        let t_min = self.config.t_min;
        let routers = &self.routers;
        let groups: Vec<(LocationId, Vec<Request>)> = inbox.into_iter().collect();
        let allocate =
            |(loc, reqs): &(LocationId, Vec<Request>)| routers[loc.index()].allocate(reqs, t_min);
        let granted: Vec<BTreeMap<TravellerId, TimeSlot>> = if self.config.parallel {
            groups.par_iter().map(allocate).collect()
        } else {
            groups.iter().map(allocate).collect()
        };

        let mut outboxes: Vec<Vec<RoundMessage>> = vec![Vec::new(); self.hosts.len()];
        for ((loc, reqs), slots) in groups.iter().zip(&granted) {
            for r in reqs {
                let slot = slots[&r.traveller];
                if self.config.trace {
                    self.trace.push(format!(
                        "round={round} loc={loc} traveller={} committed={} requested={}..{} granted={}..{}",
                        r.traveller, r.committed, r.slot.entry, r.slot.exit, slot.entry, slot.exit
                    ));
                }
                outboxes[self.owner[&r.traveller]].push(RoundMessage::allocation(
                    round,
                    r.traveller,
                    *loc,
                    slot,
                ));
            }
        }

        for (h, outbox) in outboxes.into_iter().enumerate() {
            let n = outbox.len() as u64;
            self.messages_sent += n;
            report.proposals_delivered += n as usize;
            for event in self.hosts[h].process_phase(round, outbox)? {
                match event {
                    RoundEvent::Accepted { traveller } => {
                        if self.owner.get(&traveller) != Some(&h) {
                            return Err(EngineError::Hosting(format!(
                                "foreign event for {traveller}"
                            )));
                        }
                        self.status.insert(traveller, TravellerStatus::PlanFound);
                        report.acceptances += 1;
                    }
                    RoundEvent::Expanded { .. } => report.expansions += 1,
                }
            }
        }

        self.converged = self
            .status
            .values()
            .all(|s| *s != TravellerStatus::Negotiating);
        Ok(report)
    }

    /// Runs rounds until no traveller is negotiating or the budget is spent.
    pub fn run_to_convergence(&mut self, max_rounds: u64) -> Result<Termination, EngineError> {
        if max_rounds == 0 {
            return Err(EngineError::ZeroRounds);
        }
        while !self.converged && self.round < max_rounds {
            self.run_round()?;
        }
        self.finish()
    }

    /// Runs with the configured or default round budget.
    pub fn run(&mut self) -> Result<Termination, EngineError> {
        let budget = self
            .config
            .max_rounds
            .unwrap_or_else(|| default_max_rounds(&self.specs, &self.net));
        self.run_to_convergence(budget)
    }

    fn finish(&mut self) -> Result<Termination, EngineError> {
        let mut summaries = Vec::new();
        for host in &mut self.hosts {
            summaries.extend(host.summary(self.config.trace)?);
        }
        for host in &mut self.hosts {
            host.shutdown()?;
        }
        summaries.sort_by_key(|s| s.id);
        self.summaries = summaries;

        let by_id: HashMap<TravellerId, &TravellerSpec> =
            self.specs.iter().map(|s| (s.id, s)).collect();
        let mut plans = Vec::new();
        for s in &self.summaries {
            if let Some(plan) = &s.plan {
                validate_plan(plan, by_id[&s.id], &self.net)
                    .map_err(|e| EngineError::InvariantBreach(format!("plan of {}: {e}", s.id)))?;
                plans.push(plan.clone());
            }
        }
        let solution = SolutionSet::new(plans, &self.specs, &self.net);
        if let Validation::Conflict {
            location,
            first,
            second,
        } = validate_solution(&solution, self.config.t_min)
        {
            return Err(EngineError::InvariantBreach(format!(
                "{} and {} conflict at {location}",
                first.0, second.0
            )));
        }
        if self
            .summaries
            .iter()
            .all(|s| s.status == TravellerStatus::PlanFound)
        {
            return Ok(Termination::Solved(solution));
        }
        let reason = if self
            .summaries
            .iter()
            .any(|s| s.status == TravellerStatus::Failed)
        {
            FailureReason::TravellerFailed
        } else {
            FailureReason::RoundLimit
        };
        Ok(Termination::Failed(FailureReport {
            reason,
            rounds: self.round,
            travellers: self
                .summaries
                .iter()
                .map(|s| TravellerReport {
                    id: s.id,
                    status: s.status,
                    failed_round: s.failed_round,
                    ct_nodes: s.ct_nodes,
                    explored: s.stats.explored,
                })
                .collect(),
            partial: solution,
        }))
    }
}
