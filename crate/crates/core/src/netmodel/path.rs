use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::{LocationId, RoadNetwork, Tick, TravellerSpec};
use crate::plan::traversal_duration;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("{to} is unreachable from {from}")]
pub struct Unreachable {
    pub from: LocationId,
    pub to: LocationId,
}

/// Minimal summed traversal duration from every location to `to`, counting
/// the location's own duration and the destination's. `None` if disconnected.
pub fn cost_to_go(net: &RoadNetwork, spec: &TravellerSpec, to: LocationId) -> Vec<Option<Tick>> {
    let dur: Vec<Tick> = net
        .locations()
        .iter()
        .map(|l| traversal_duration(spec, l))
        .collect();
    let mut dist: Vec<Option<Tick>> = vec![None; net.len()];
    let mut heap = BinaryHeap::new();
    dist[to.index()] = Some(dur[to.index()]);
    heap.push(Reverse((dur[to.index()], to)));
    while let Some(Reverse((d, loc))) = heap.pop() {
        if dist[loc.index()] != Some(d) {
            continue;
        }
        for &n in net.neighbours(loc) {
            let nd = d + dur[n.index()];
            if dist[n.index()].is_none_or(|old| nd < old) {
                dist[n.index()] = Some(nd);
                heap.push(Reverse((nd, n)));
            }
        }
    }
    dist
}

/// Minimum-duration path for `spec`, alternating node and edge ids.
///
/// Among equal-cost paths the lexicographically smallest id sequence wins.
pub fn shortest_path(
    net: &RoadNetwork,
    spec: &TravellerSpec,
    from: LocationId,
    to: LocationId,
) -> Result<Vec<LocationId>, Unreachable> {
    let unreachable = Unreachable { from, to };
    if net.get(from).is_none() || net.get(to).is_none() {
        return Err(unreachable);
    }
    let dist = cost_to_go(net, spec, to);
    let mut remaining = dist[from.index()].ok_or(unreachable)?;
    let mut path = vec![from];
    let mut here = from;
    while here != to {
        remaining -= traversal_duration(spec, net.location(here));
        // neighbours are sorted, so the first on an optimal path is the smallest
        here = *net
            .neighbours(here)
            .iter()
            .find(|n| dist[n.index()] == Some(remaining))
            .expect("cost-to-go is consistent");
        path.push(here);
    }
    Ok(path)
}
