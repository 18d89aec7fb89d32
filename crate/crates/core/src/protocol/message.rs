use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::netmodel::{LocationId, TravellerId, TravellerSpec};
use crate::plan::{Plan, TimeSlot};
use crate::router::Request;
use crate::traveller::{TravellerStats, TravellerStatus};

pub const WIRE_VERSION: u32 = 1;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Traveller(TravellerId),
    Router(LocationId),
    Hub,
    Worker(u32),
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Traveller(t) => write!(f, "traveller {t}"),
            AgentId::Router(l) => write!(f, "router {l}"),
            AgentId::Hub => write!(f, "hub"),
            AgentId::Worker(w) => write!(f, "worker {w}"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ReserveRequest,
    AllocationProposal,
    /// Re-sent request of a traveller whose plan was accepted.
    Finalized,
    Failed,
    /// Orchestration between the hub and worker processes.
    Control,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Payload {
    Request { request: Request },
    Allocation { loc: LocationId, slot: TimeSlot },
    Failure { reason: String },
    Control { control: Control },
}

/// Outcome of one traveller's processing step.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum RoundEvent {
    Accepted {
        traveller: TravellerId,
    },
    Expanded {
        traveller: TravellerId,
        children: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TravellerSummary {
    pub id: TravellerId,
    pub status: TravellerStatus,
    pub plan: Option<Plan>,
    pub stats: TravellerStats,
    pub ct_nodes: usize,
    /// Round in which the traveller failed; 0 means at initialisation.
    pub failed_round: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Control {
    Assign {
        worker: u32,
        network: serde_json::Value,
        travellers: Vec<TravellerSpec>,
        parallel: bool,
    },
    Init,
    StartRound {
        round: u64,
    },
    Process {
        round: u64,
        count: usize,
    },
    Done {
        round: u64,
        count: usize,
    },
    Events {
        round: u64,
        events: Vec<RoundEvent>,
    },
    Summarize {
        trees: bool,
    },
    Summary {
        travellers: Vec<TravellerSummary>,
    },
    Error {
        message: String,
    },
    Halt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundMessage {
    pub v: u32,
    pub kind: MessageKind,
    pub round: u64,
    pub sender: AgentId,
    pub recipient: AgentId,
    pub payload: Payload,
}

impl RoundMessage {
    pub fn new(
        kind: MessageKind,
        round: u64,
        sender: AgentId,
        recipient: AgentId,
        payload: Payload,
    ) -> RoundMessage {
        RoundMessage {
            v: WIRE_VERSION,
            kind,
            round,
            sender,
            recipient,
            payload,
        }
    }

    pub fn control(sender: AgentId, recipient: AgentId, control: Control) -> RoundMessage {
        let round = match &control {
            Control::StartRound { round }
            | Control::Process { round, .. }
            | Control::Done { round, .. }
            | Control::Events { round, .. } => *round,
            _ => 0,
        };
        RoundMessage::new(
            MessageKind::Control,
            round,
            sender,
            recipient,
            Payload::Control { control },
        )
    }

    pub fn request(round: u64, request: Request, committed: bool) -> RoundMessage {
        let kind = if committed {
            MessageKind::Finalized
        } else {
            MessageKind::ReserveRequest
        };
        RoundMessage::new(
            kind,
            round,
            AgentId::Traveller(request.traveller),
            AgentId::Router(request.loc),
            Payload::Request { request },
        )
    }

    pub fn allocation(
        round: u64,
        traveller: TravellerId,
        loc: LocationId,
        slot: TimeSlot,
    ) -> RoundMessage {
        RoundMessage::new(
            MessageKind::AllocationProposal,
            round,
            AgentId::Router(loc),
            AgentId::Traveller(traveller),
            Payload::Allocation { loc, slot },
        )
    }

    pub fn failed(round: u64, traveller: TravellerId, reason: impl Into<String>) -> RoundMessage {
        RoundMessage::new(
            MessageKind::Failed,
            round,
            AgentId::Traveller(traveller),
            AgentId::Hub,
            Payload::Failure {
                reason: reason.into(),
            },
        )
    }

    pub fn is_control(&self) -> bool {
        self.kind == MessageKind::Control
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutOfOrder {
    pub sender: AgentId,
    pub recipient: AgentId,
    pub last: u64,
    pub got: u64,
}

impl fmt::Display for OutOfOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> {}: round {} arrived after round {}",
            self.sender, self.recipient, self.got, self.last
        )
    }
}

/// Receiver-side check of the per-pair FIFO contract: round numbers on each
/// (sender, recipient) channel must strictly increase. Control messages are
/// not sequenced.
#[derive(Debug, Default)]
pub struct SequenceGuard {
    last: HashMap<(AgentId, AgentId), u64>,
}

impl SequenceGuard {
    pub fn admit(&mut self, msg: &RoundMessage) -> Result<(), OutOfOrder> {
        if msg.is_control() {
            return Ok(());
        }
        let key = (msg.sender, msg.recipient);
        match self.last.get(&key) {
            Some(&last) if msg.round <= last => Err(OutOfOrder {
                sender: msg.sender,
                recipient: msg.recipient,
                last,
                got: msg.round,
            }),
            _ => {
                self.last.insert(key, msg.round);
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(round: u64) -> RoundMessage {
        RoundMessage::request(
            round,
            Request {
                traveller: TravellerId(1),
                loc: LocationId(4),
                slot: TimeSlot::new(0, 3),
                speed: 1,
                length: 1,
                committed: false,
            },
            false,
        )
    }

    #[test]
    fn guard_accepts_increasing_rounds() {
        let mut g = SequenceGuard::default();
        for r in [1, 2, 5] {
            g.admit(&req(r)).unwrap();
        }
    }

    #[test]
    fn guard_rejects_repeat_and_regression() {
        let mut g = SequenceGuard::default();
        g.admit(&req(2)).unwrap();
        assert!(g.admit(&req(2)).is_err());
        let err = g.admit(&req(1)).unwrap_err();
        assert_eq!((err.last, err.got), (2, 1));
    }

    #[test]
    fn guard_is_per_pair() {
        let mut g = SequenceGuard::default();
        g.admit(&req(3)).unwrap();
        let mut other = req(1);
        other.recipient = AgentId::Router(LocationId(5));
        g.admit(&other).unwrap();
    }

    #[test]
    fn control_messages_are_not_sequenced() {
        let mut g = SequenceGuard::default();
        let m = RoundMessage::control(AgentId::Hub, AgentId::Worker(1), Control::Init);
        g.admit(&m).unwrap();
        g.admit(&m).unwrap();
    }
}
