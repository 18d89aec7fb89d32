//! Decentralised multi-agent path finding for spatially extended agents.
//!
//! Travellers (convoys, trains: anything with a length) plan their own routes
//! and negotiate time on each network location with the Router that owns it.
//! Rounds of request and proposal continue until every traveller holds a plan
//! that all of its Routers granted unchanged.

pub mod baselines;
pub mod cli;
pub mod netmodel;
pub mod plan;
pub mod protocol;
pub mod router;
pub mod traveller;

pub use netmodel::{LocationId, RoadNetwork, Tick, TravellerId, TravellerSpec, WorldConfig};
pub use plan::{Plan, SolutionSet};
