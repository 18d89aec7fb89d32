//! Road network model: nodes and edges are both schedulable locations.
//!
//! Grid maps in the MovingAI format are read by [`parse_map`]; extended
//! scenario files (agent length, speed and departure time appended to the
//! standard columns) by [`parse_scenario`].

mod map;
mod path;
mod scenario;

pub use map::parse_map;
pub use path::{cost_to_go, shortest_path, Unreachable};
pub use scenario::{parse_scenario, scenario_map_name};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer time unit used throughout the engine.
pub type Tick = u64;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationId(pub u32);

impl LocationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TravellerId(pub u32);

impl fmt::Display for TravellerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Node,
    Edge { endpoints: (LocationId, LocationId) },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub id: LocationId,
    pub kind: LocationKind,
    pub length: u32,
    /// `None` means unbounded.
    pub speed_limit: Option<u32>,
    /// Grid cell `(row, col)` for nodes read from a map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<(u32, u32)>,
}

impl Location {
    pub fn is_node(&self) -> bool {
        matches!(self.kind, LocationKind::Node)
    }
}

/// Physical parameters and task of one traveller.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TravellerSpec {
    pub id: TravellerId,
    pub length: u32,
    pub speed: u32,
    pub source: LocationId,
    pub destination: LocationId,
    pub depart_not_before: Tick,
}

impl TravellerSpec {
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), NetError> {
        if self.length == 0 {
            return Err(NetError::InvalidTraveller(
                self.id,
                "length must be positive",
            ));
        }
        if self.speed == 0 {
            return Err(NetError::InvalidTraveller(
                self.id,
                "speed must be positive",
            ));
        }
        if self.source == self.destination {
            return Err(NetError::InvalidTraveller(
                self.id,
                "source equals destination",
            ));
        }
        for loc in [self.source, self.destination] {
            match net.get(loc) {
                Some(l) if l.is_node() => {}
                _ => {
                    return Err(NetError::InvalidTraveller(
                        self.id,
                        "endpoint is not a node",
                    ))
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub edge_length: u32,
    pub node_length: u32,
    pub t_min: Tick,
    /// `None` means unbounded.
    pub default_speed_limit: Option<u32>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            edge_length: 10,
            node_length: 0,
            t_min: 1,
            default_speed_limit: None,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.edge_length == 0 {
            return Err(NetError::Config("edge_length must be positive"));
        }
        if self.default_speed_limit == Some(0) {
            return Err(NetError::Config("speed limit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("malformed map header: {0}")]
    Header(String),
    #[error("map row {row} has {found} cells, expected {expected}")]
    RowLength {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("map has {found} rows, expected {expected}")]
    RowCount { found: usize, expected: usize },
    #[error("unknown terrain {0:?} at row {1}, col {2}")]
    Terrain(char, usize, usize),
    #[error("map has no passable cells")]
    NoPassableCells,
    #[error("scenario line {line}: {reason}")]
    Scenario { line: usize, reason: String },
    #[error("traveller {0}: {1}")]
    InvalidTraveller(TravellerId, &'static str),
    #[error("duplicate traveller id {0}")]
    DuplicateTraveller(TravellerId),
    #[error("unknown location {0}")]
    UnknownLocation(LocationId),
    #[error("edge endpoint {0} is not a node")]
    NotANode(LocationId),
    #[error("invalid config: {0}")]
    Config(&'static str),
}

/// Dimensions and passability of the grid a network was read from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: u32,
    pub width: u32,
    pub passable: Vec<bool>,
}

/// Nodes and edges of a road network plus their symmetric adjacency.
///
/// Ids are dense indices. A node is adjacent only to its incident edges and
/// an edge only to its two endpoints. Read-only after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoadNetwork {
    locations: Vec<Location>,
    adjacency: Vec<Vec<LocationId>>,
    grid: Option<GridShape>,
    cells: HashMap<(u32, u32), LocationId>,
}

impl RoadNetwork {
    pub fn builder() -> NetworkBuilder {
        NetworkBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn get(&self, id: LocationId) -> Option<&Location> {
        self.locations.get(id.index())
    }

    pub fn location(&self, id: LocationId) -> &Location {
        &self.locations[id.index()]
    }

    pub fn neighbours(&self, id: LocationId) -> &[LocationId] {
        &self.adjacency[id.index()]
    }

    pub fn adjacent(&self, a: LocationId, b: LocationId) -> bool {
        self.adjacency
            .get(a.index())
            .is_some_and(|n| n.contains(&b))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Location> {
        self.locations.iter().filter(|l| l.is_node())
    }

    pub fn edges(&self) -> impl Iterator<Item = &Location> {
        self.locations.iter().filter(|l| !l.is_node())
    }

    pub fn node_count(&self) -> usize {
        self.nodes().count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Node at grid cell `(row, col)`, if the network came from a map.
    pub fn node_at(&self, row: u32, col: u32) -> Option<LocationId> {
        self.cells.get(&(row, col)).copied()
    }

    pub fn grid(&self) -> Option<&GridShape> {
        self.grid.as_ref()
    }

    /// Debug serialization `{nodes: [...], edges: [...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = self.nodes().cloned().collect();
        let edges: Vec<_> = self.edges().cloned().collect();
        serde_json::json!({ "nodes": nodes, "edges": edges })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<RoadNetwork, NetError> {
        #[derive(Deserialize)]
        struct Raw {
            nodes: Vec<Location>,
            edges: Vec<Location>,
        }
        let raw: Raw = serde_json::from_value(value.clone())
            .map_err(|e| NetError::Header(format!("network json: {e}")))?;
        let mut all: Vec<Location> = raw.nodes.into_iter().chain(raw.edges).collect();
        all.sort_by_key(|l| l.id);
        for (i, l) in all.iter().enumerate() {
            if l.id.index() != i {
                return Err(NetError::UnknownLocation(l.id));
            }
        }
        let mut b = NetworkBuilder::default();
        for l in all {
            match l.kind {
                LocationKind::Node => {
                    let id = b.add_node(l.length, l.speed_limit);
                    if let Some((r, c)) = l.cell {
                        b.cells.insert((r, c), id);
                        b.locations[id.index()].cell = Some((r, c));
                    }
                }
                LocationKind::Edge { endpoints: (a, z) } => {
                    b.add_edge(a, z, l.length, l.speed_limit)?;
                }
            }
        }
        Ok(b.build())
    }
}

#[derive(Default, Debug)]
pub struct NetworkBuilder {
    locations: Vec<Location>,
    adjacency: Vec<Vec<LocationId>>,
    cells: HashMap<(u32, u32), LocationId>,
    grid: Option<GridShape>,
}

impl NetworkBuilder {
    pub fn add_node(&mut self, length: u32, speed_limit: Option<u32>) -> LocationId {
        let id = LocationId(self.locations.len() as u32);
        self.locations.push(Location {
            id,
            kind: LocationKind::Node,
            length,
            speed_limit,
            cell: None,
        });
        self.adjacency.push(Vec::new());
        id
    }

    pub(crate) fn add_cell_node(&mut self, row: u32, col: u32, cfg: &WorldConfig) -> LocationId {
        let id = self.add_node(cfg.node_length, cfg.default_speed_limit);
        self.locations[id.index()].cell = Some((row, col));
        self.cells.insert((row, col), id);
        id
    }

    pub fn add_edge(
        &mut self,
        a: LocationId,
        b: LocationId,
        length: u32,
        speed_limit: Option<u32>,
    ) -> Result<LocationId, NetError> {
        for end in [a, b] {
            match self.locations.get(end.index()) {
                None => return Err(NetError::UnknownLocation(end)),
                Some(l) if !l.is_node() => return Err(NetError::NotANode(end)),
                Some(_) => {}
            }
        }
        let id = LocationId(self.locations.len() as u32);
        self.locations.push(Location {
            id,
            kind: LocationKind::Edge { endpoints: (a, b) },
            length,
            speed_limit,
            cell: None,
        });
        self.adjacency.push(vec![a, b]);
        self.adjacency[a.index()].push(id);
        self.adjacency[b.index()].push(id);
        Ok(id)
    }

    pub(crate) fn set_grid(&mut self, grid: GridShape) {
        self.grid = Some(grid);
    }

    pub fn build(mut self) -> RoadNetwork {
        for adj in &mut self.adjacency {
            adj.sort();
            adj.dedup();
        }
        RoadNetwork {
            locations: self.locations,
            adjacency: self.adjacency,
            grid: self.grid,
            cells: self.cells,
        }
    }
}
