use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;

use super::message::{
    AgentId, Control, MessageKind, Payload, RoundEvent, RoundMessage, SequenceGuard,
    TravellerSummary,
};
use super::transport::Transport;
use super::EngineError;
use crate::netmodel::{LocationId, RoadNetwork, TravellerId, TravellerSpec};
use crate::plan::{check_consistency, Consistency, ProposedPlan, ProtocolViolation, TimeSlot};
use crate::traveller::{Outcome, TravellerState, TravellerStatus};

/// Runs a subset of the travellers on behalf of the engine.
pub trait TravellerHost: Send {
    fn travellers(&self) -> Vec<TravellerId>;
    /// `Failed` messages for travellers that could not start (round 0).
    fn init(&mut self) -> Result<Vec<RoundMessage>, EngineError>;
    /// Phase 1: every traveller's requests for `round`.
    fn request_phase(&mut self, round: u64) -> Result<Vec<RoundMessage>, EngineError>;
    /// Phase 3: delivers the Routers' proposals.
    fn process_phase(
        &mut self,
        round: u64,
        proposals: Vec<RoundMessage>,
    ) -> Result<Vec<RoundEvent>, EngineError>;
    fn summary(&mut self, trees: bool) -> Result<Vec<TravellerSummary>, EngineError>;
    fn shutdown(&mut self) -> Result<(), EngineError> {
        Ok(())
    }
}

/// Travellers in this process, optionally stepped in parallel.
pub struct LocalHost {
    net: Arc<RoadNetwork>,
    states: Vec<TravellerState>,
    failed_round: HashMap<TravellerId, u64>,
    guard: SequenceGuard,
    parallel: bool,
}

impl LocalHost {
    pub fn new(net: Arc<RoadNetwork>, specs: Vec<TravellerSpec>, parallel: bool) -> LocalHost {
        let states = specs
            .into_iter()
            .map(|s| TravellerState::init(s, &net))
            .collect();
        LocalHost {
            net,
            states,
            failed_round: HashMap::new(),
            guard: SequenceGuard::default(),
            parallel,
        }
    }

    fn step_requests(state: &mut TravellerState, round: u64) -> (Vec<RoundMessage>, bool) {
        match state.status() {
            TravellerStatus::Negotiating => match state.next_request() {
                Some(reqs) => (
                    reqs.into_iter()
                        .map(|r| RoundMessage::request(round, r, false))
                        .collect(),
                    false,
                ),
                None => (
                    vec![RoundMessage::failed(
                        round,
                        state.id(),
                        "constraint tree exhausted",
                    )],
                    true,
                ),
            },
            TravellerStatus::PlanFound => (
                state
                    .committed_requests()
                    .into_iter()
                    .map(|r| RoundMessage::request(round, r, true))
                    .collect(),
                false,
            ),
            TravellerStatus::Failed => (Vec::new(), false),
        }
    }

    fn step_process(
        state: &mut TravellerState,
        slots: &[(LocationId, TimeSlot)],
        net: &RoadNetwork,
    ) -> Result<Option<RoundEvent>, ProtocolViolation> {
        let id = state.id();
        match state.status() {
            TravellerStatus::Negotiating => {
                let request = match state.current() {
                    Some(node) => node.plan.clone(),
                    None if slots.is_empty() => return Ok(None),
                    None => {
                        return Err(ProtocolViolation::Message(format!(
                            "{id} received proposals without a request"
                        )))
                    }
                };
                let proposal = ProposedPlan::assemble(&request, slots.iter().copied());
                Ok(Some(match state.process_proposals(&proposal, net)? {
                    Outcome::Accepted(_) => RoundEvent::Accepted { traveller: id },
                    Outcome::Expanded(children) => RoundEvent::Expanded {
                        traveller: id,
                        children: children.len(),
                    },
                }))
            }
            TravellerStatus::PlanFound => {
                let plan = state.final_plan().expect("accepted plan");
                let proposal = ProposedPlan::assemble(plan, slots.iter().copied());
                match check_consistency(plan, &proposal, state.spec())? {
                    Consistency::Consistent => Ok(None),
                    Consistency::FirstDeviation { step, delay } => Err(ProtocolViolation::Message(
                        format!("accepted plan of {id} delayed by {delay} at step {step}"),
                    )),
                }
            }
            TravellerStatus::Failed if slots.is_empty() => Ok(None),
            TravellerStatus::Failed => Err(ProtocolViolation::Message(format!(
                "{id} failed but received proposals"
            ))),
        }
    }
}

impl TravellerHost for LocalHost {
    fn travellers(&self) -> Vec<TravellerId> {
        self.states.iter().map(TravellerState::id).collect()
    }

    fn init(&mut self) -> Result<Vec<RoundMessage>, EngineError> {
        let mut out = Vec::new();
        for s in &self.states {
            if s.status() == TravellerStatus::Failed {
                self.failed_round.insert(s.id(), 0);
                out.push(RoundMessage::failed(0, s.id(), "destination unreachable"));
            }
        }
        Ok(out)
    }

    fn request_phase(&mut self, round: u64) -> Result<Vec<RoundMessage>, EngineError> {
        let stepped: Vec<(Vec<RoundMessage>, bool)> = if self.parallel {
            self.states
                .par_iter_mut()
                .map(|s| Self::step_requests(s, round))
                .collect()
        } else {
            self.states
                .iter_mut()
                .map(|s| Self::step_requests(s, round))
                .collect()
        };
        let mut out = Vec::new();
        for (state, (msgs, failed)) in self.states.iter().zip(stepped) {
            if failed {
                self.failed_round.insert(state.id(), round);
            }
            out.extend(msgs);
        }
        Ok(out)
    }

    fn process_phase(
        &mut self,
        _round: u64,
        proposals: Vec<RoundMessage>,
    ) -> Result<Vec<RoundEvent>, EngineError> {
        let known: HashSet<TravellerId> = self.travellers().into_iter().collect();
        let mut by_traveller: HashMap<TravellerId, (Vec<(LocationId, TimeSlot)>, usize)> =
            HashMap::new();
        for (i, msg) in proposals.iter().enumerate() {
            self.guard
                .admit(msg)
                .map_err(|e| EngineError::protocol(e.to_string(), msg))?;
            let (traveller, loc, slot) = match (&msg.kind, msg.recipient, &msg.payload) {
                (
                    MessageKind::AllocationProposal,
                    AgentId::Traveller(t),
                    Payload::Allocation { loc, slot },
                ) if known.contains(&t) && msg.sender == AgentId::Router(*loc) => (t, *loc, *slot),
                _ => return Err(EngineError::protocol("unexpected message", msg)),
            };
            by_traveller
                .entry(traveller)
                .or_insert((Vec::new(), i))
                .0
                .push((loc, slot));
        }
        let net = &*self.net;
        let empty = (Vec::new(), usize::MAX);
        let step = |s: &mut TravellerState| {
            let (slots, first) = by_traveller.get(&s.id()).unwrap_or(&empty);
            Self::step_process(s, slots, net).map_err(|v| (v, *first))
        };
        let results: Vec<_> = if self.parallel {
            self.states.par_iter_mut().map(step).collect()
        } else {
            self.states.iter_mut().map(step).collect()
        };
        let mut events = Vec::new();
        for r in results {
            match r {
                Ok(Some(e)) => events.push(e),
                Ok(None) => {}
                Err((violation, first)) => {
                    return Err(match proposals.get(first) {
                        Some(msg) => EngineError::protocol(violation.to_string(), msg),
                        None => EngineError::Violation(violation),
                    })
                }
            }
        }
        Ok(events)
    }

    fn summary(&mut self, trees: bool) -> Result<Vec<TravellerSummary>, EngineError> {
        Ok(self
            .states
            .iter()
            .map(|s| TravellerSummary {
                id: s.id(),
                status: s.status(),
                plan: s.final_plan().cloned(),
                stats: s.stats().clone(),
                ct_nodes: s.tree().len(),
                failed_round: self.failed_round.get(&s.id()).copied(),
                tree: trees.then(|| s.ct_dump()),
            })
            .collect())
    }
}

/// Proxy for travellers hosted by a worker process.
pub struct RemoteHost {
    transport: Box<dyn Transport>,
    worker: u32,
    travellers: Vec<TravellerId>,
}

impl RemoteHost {
    /// Hands `specs` to the worker at the other end of `transport`.
    pub fn assign(
        mut transport: Box<dyn Transport>,
        worker: u32,
        net: &RoadNetwork,
        specs: Vec<TravellerSpec>,
        parallel: bool,
    ) -> Result<RemoteHost, EngineError> {
        let travellers = specs.iter().map(|s| s.id).collect();
        transport.send(&RoundMessage::control(
            AgentId::Hub,
            AgentId::Worker(worker),
            Control::Assign {
                worker,
                network: net.to_json(),
                travellers: specs,
                parallel,
            },
        ))?;
        Ok(RemoteHost {
            transport,
            worker,
            travellers,
        })
    }

    fn send_control(&mut self, control: Control) -> Result<(), EngineError> {
        let msg = RoundMessage::control(AgentId::Hub, AgentId::Worker(self.worker), control);
        Ok(self.transport.send(&msg)?)
    }

    fn recv_control(&mut self) -> Result<Control, EngineError> {
        let msg = self.transport.recv()?;
        match msg.payload {
            Payload::Control {
                control: Control::Error { message },
            } => Err(EngineError::Worker(message)),
            Payload::Control { control } => Ok(control),
            _ => Err(EngineError::protocol("expected a control message", &msg)),
        }
    }

    /// Collects traveller messages up to the closing `Done`.
    fn collect(&mut self, round: u64) -> Result<Vec<RoundMessage>, EngineError> {
        let mut out = Vec::new();
        loop {
            let msg = self.transport.recv()?;
            match &msg.payload {
                Payload::Control {
                    control: Control::Done { round: r, count },
                } if *r == round && *count == out.len() => return Ok(out),
                Payload::Control {
                    control: Control::Error { message },
                } => return Err(EngineError::Worker(message.clone())),
                Payload::Control { .. } => {
                    return Err(EngineError::protocol("unexpected control message", &msg))
                }
                _ => out.push(msg),
            }
        }
    }
}

impl TravellerHost for RemoteHost {
    fn travellers(&self) -> Vec<TravellerId> {
        self.travellers.clone()
    }

    fn init(&mut self) -> Result<Vec<RoundMessage>, EngineError> {
        self.send_control(Control::Init)?;
        self.collect(0)
    }

    fn request_phase(&mut self, round: u64) -> Result<Vec<RoundMessage>, EngineError> {
        self.send_control(Control::StartRound { round })?;
        self.collect(round)
    }

    fn process_phase(
        &mut self,
        round: u64,
        proposals: Vec<RoundMessage>,
    ) -> Result<Vec<RoundEvent>, EngineError> {
        let count = proposals.len();
        for p in &proposals {
            self.transport.send(p)?;
        }
        self.send_control(Control::Process { round, count })?;
        match self.recv_control()? {
            Control::Events { round: r, events } if r == round => Ok(events),
            other => Err(EngineError::Worker(format!(
                "expected events, got {other:?}"
            ))),
        }
    }

    fn summary(&mut self, trees: bool) -> Result<Vec<TravellerSummary>, EngineError> {
        self.send_control(Control::Summarize { trees })?;
        match self.recv_control()? {
            Control::Summary { travellers } => Ok(travellers),
            other => Err(EngineError::Worker(format!(
                "expected summary, got {other:?}"
            ))),
        }
    }

    fn shutdown(&mut self) -> Result<(), EngineError> {
        self.send_control(Control::Halt)
    }
}

/// Worker side of [`RemoteHost`]: waits for an assignment, then answers the
/// hub until told to halt.
pub fn serve_worker(transport: &mut dyn Transport) -> Result<(), EngineError> {
    let first = transport.recv()?;
    let (worker, mut host) = match first.payload {
        Payload::Control {
            control:
                Control::Assign {
                    worker,
                    network,
                    travellers,
                    parallel,
                },
        } => {
            let net = RoadNetwork::from_json(&network)?;
            (worker, LocalHost::new(Arc::new(net), travellers, parallel))
        }
        _ => return Err(EngineError::protocol("expected an assignment", &first)),
    };
    let me = AgentId::Worker(worker);
    let reply = |t: &mut dyn Transport, control: Control| {
        t.send(&RoundMessage::control(me, AgentId::Hub, control))
    };
    let mut inbox: Vec<RoundMessage> = Vec::new();
    loop {
        let msg = transport.recv()?;
        let control = match msg.payload {
            Payload::Control { control } => control,
            _ => {
                inbox.push(msg);
                continue;
            }
        };
        let result = match control {
            Control::Init | Control::StartRound { .. } => {
                let round = match control {
                    Control::StartRound { round } => round,
                    _ => 0,
                };
                let msgs = if round == 0 {
                    host.init()
                } else {
                    host.request_phase(round)
                };
                msgs.and_then(|msgs| {
                    for m in &msgs {
                        transport.send(m)?;
                    }
                    let count = msgs.len();
                    Ok(reply(transport, Control::Done { round, count })?)
                })
            }
            Control::Process { round, count } => {
                let proposals = std::mem::take(&mut inbox);
                if proposals.len() != count {
                    Err(EngineError::Worker(format!(
                        "expected {count} proposals, received {}",
                        proposals.len()
                    )))
                } else {
                    host.process_phase(round, proposals)
                        .and_then(|events| Ok(reply(transport, Control::Events { round, events })?))
                }
            }
            Control::Summarize { trees } => host
                .summary(trees)
                .and_then(|travellers| Ok(reply(transport, Control::Summary { travellers })?)),
            Control::Halt => return Ok(()),
            other => Err(EngineError::Worker(format!("unexpected {other:?}"))),
        };
        if let Err(e) = result {
            let _ = reply(
                transport,
                Control::Error {
                    message: e.to_string(),
                },
            );
            return Err(e);
        }
    }
}

/// Splits travellers (sorted by id) round-robin over `parts` processes.
pub fn partition(specs: &[TravellerSpec], parts: usize) -> Vec<Vec<TravellerSpec>> {
    let mut sorted = specs.to_vec();
    sorted.sort_by_key(|s| s.id);
    let mut out = vec![Vec::new(); parts.max(1)];
    for (i, s) in sorted.into_iter().enumerate() {
        out[i % parts.max(1)].push(s);
    }
    out
}
