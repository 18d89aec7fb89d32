#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use demapf::netmodel::{
    parse_map, LocationId, RoadNetwork, TravellerId, TravellerSpec, WorldConfig,
};
use demapf::plan::SolutionSet;
use demapf::protocol::{EngineConfig, EngineState, Termination};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn map_text(rows: &[&str]) -> String {
    format!(
        "type octile\nheight {}\nwidth {}\nmap\n{}\n",
        rows.len(),
        rows[0].len(),
        rows.join("\n")
    )
}

pub fn grid(rows: &[&str], edge_length: u32) -> RoadNetwork {
    let cfg = WorldConfig {
        edge_length,
        ..WorldConfig::default()
    };
    parse_map(&map_text(rows), &cfg).unwrap()
}

pub fn empty_grid(h: usize, w: usize) -> RoadNetwork {
    let row = ".".repeat(w);
    grid(&vec![row.as_str(); h], 10)
}

pub fn at(net: &RoadNetwork, row: u32, col: u32) -> LocationId {
    net.node_at(row, col).unwrap()
}

pub fn spec(
    id: u32,
    (length, speed): (u32, u32),
    source: LocationId,
    destination: LocationId,
    depart: u64,
) -> TravellerSpec {
    TravellerSpec {
        id: TravellerId(id),
        length,
        speed,
        source,
        destination,
        depart_not_before: depart,
    }
}

/// `n` travellers with distinct sources and distinct destinations on a
/// grid without obstacles.
pub fn random_specs(rng: &mut ChaCha8Rng, net: &RoadNetwork, n: usize) -> Vec<TravellerSpec> {
    let nodes: Vec<LocationId> = net.nodes().map(|l| l.id).collect();
    let sources: Vec<LocationId> = nodes.choose_multiple(rng, n).copied().collect();
    let mut specs = Vec::with_capacity(n);
    let mut taken = Vec::new();
    for (i, &s) in sources.iter().enumerate() {
        let d = loop {
            let d = *nodes.choose(rng).unwrap();
            if d != s && !taken.contains(&d) {
                break d;
            }
        };
        taken.push(d);
        specs.push(spec(
            i as u32,
            (rng.gen_range(1..=4), rng.gen_range(1..=3)),
            s,
            d,
            0,
        ));
    }
    specs
}

/// Scenarios of the conflict-freedom suite: 8x8 empty grid, 2-10
/// travellers, lengths 1-4, speeds 1-3.
pub fn grid8_suite(count: usize, seed: u64) -> (Arc<RoadNetwork>, Vec<Vec<TravellerSpec>>) {
    let net = empty_grid(8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suite = (0..count)
        .map(|_| {
            let n = rng.gen_range(2..=10);
            random_specs(&mut rng, &net, n)
        })
        .collect();
    (Arc::new(net), suite)
}

pub fn run_local(
    net: &Arc<RoadNetwork>,
    specs: &[TravellerSpec],
    cfg: EngineConfig,
) -> (EngineState, Termination) {
    let mut engine = EngineState::local(net.clone(), specs.to_vec(), cfg).unwrap();
    let outcome = engine.run().unwrap();
    (engine, outcome)
}

pub fn solve_local(net: &Arc<RoadNetwork>, specs: &[TravellerSpec]) -> SolutionSet {
    match run_local(net, specs, EngineConfig::default()).1 {
        Termination::Solved(s) => s,
        Termination::Failed(f) => panic!("no solution: {f:?}"),
    }
}

/// Scenario file text for `specs` on a grid network.
pub fn scen_text(net: &RoadNetwork, specs: &[TravellerSpec], map_name: &str) -> String {
    let shape = net.grid().unwrap();
    let mut out = String::from("version 1\n");
    for s in specs {
        let (sr, sc) = net.location(s.source).cell.unwrap();
        let (gr, gc) = net.location(s.destination).cell.unwrap();
        out.push_str(&format!(
            "0\t{map_name}\t{}\t{}\t{sc}\t{sr}\t{gc}\t{gr}\t1\t{}\t{}\t{}\t{}\n",
            shape.width, shape.height, s.length, s.speed, s.depart_not_before, s.id.0
        ));
    }
    out
}

pub struct Curated {
    pub name: &'static str,
    pub net: Arc<RoadNetwork>,
    pub specs: Vec<TravellerSpec>,
}

/// Tiny contention instances (at most 3 travellers, at most 12 locations)
/// built from the classic conflict patterns: following, overtaking,
/// head-on, crossing, merging and bottlenecks.
pub fn curated_suite() -> Vec<Curated> {
    let line3 = grid(&["..."], 2);
    let line4 = grid(&["...."], 2);
    let line6 = grid(&["......"], 2);
    let square = grid(&["..", ".."], 2);
    let plus = grid(&["@.@", "...", "@.@"], 2);
    let tee = grid(&["...", "@.@"], 2);
    let ell = grid(&["...", ".@@"], 2);
    let bridge = grid(&[".."], 2);

    type Row = (u32, (u32, u32), (u32, u32), (u32, u32), u64);
    let mut out = Vec::new();
    let mut add = |name: &'static str, net: &RoadNetwork, rows: &[Row]| {
        let specs = rows
            .iter()
            .map(|&(id, body, (sr, sc), (gr, gc), dep)| {
                spec(id, body, at(net, sr, sc), at(net, gr, gc), dep)
            })
            .collect();
        assert!(net.len() <= 12, "{name} has {} locations", net.len());
        out.push(Curated {
            name,
            net: Arc::new(net.clone()),
            specs,
        });
    };

    add(
        "line4-follow-speed",
        &line4,
        &[
            (0, (2, 1), (0, 0), (0, 3), 0),
            (1, (2, 2), (0, 0), (0, 3), 0),
        ],
    );
    add(
        "line4-follow-length",
        &line4,
        &[
            (0, (1, 1), (0, 0), (0, 3), 0),
            (1, (3, 1), (0, 0), (0, 3), 0),
        ],
    );
    add(
        "line4-follow-3",
        &line4,
        &[
            (0, (1, 1), (0, 0), (0, 3), 0),
            (1, (2, 2), (0, 0), (0, 3), 0),
            (2, (3, 3), (0, 0), (0, 3), 0),
        ],
    );
    add(
        "line6-overtake",
        &line6,
        &[
            (0, (2, 1), (0, 0), (0, 5), 0),
            (1, (2, 3), (0, 0), (0, 5), 2),
        ],
    );
    add(
        "line6-overtake-3",
        &line6,
        &[
            (0, (1, 1), (0, 0), (0, 5), 0),
            (1, (2, 2), (0, 0), (0, 5), 1),
            (2, (3, 3), (0, 0), (0, 5), 2),
        ],
    );
    add(
        "line3-swap-equal",
        &line3,
        &[
            (0, (2, 2), (0, 0), (0, 2), 0),
            (1, (2, 2), (0, 2), (0, 0), 0),
        ],
    );
    add(
        "line3-swap-speeds",
        &line3,
        &[
            (0, (1, 1), (0, 0), (0, 2), 0),
            (1, (2, 3), (0, 2), (0, 0), 0),
        ],
    );
    add(
        "line4-swap",
        &line4,
        &[
            (0, (2, 1), (0, 0), (0, 3), 0),
            (1, (1, 2), (0, 3), (0, 0), 0),
        ],
    );
    add(
        "line4-swap-3",
        &line4,
        &[
            (0, (1, 1), (0, 0), (0, 3), 0),
            (1, (2, 2), (0, 3), (0, 0), 0),
            (2, (1, 3), (0, 1), (0, 3), 0),
        ],
    );
    add(
        "plus-cross-equal",
        &plus,
        &[
            (0, (2, 2), (0, 1), (2, 1), 0),
            (1, (2, 2), (1, 0), (1, 2), 0),
        ],
    );
    add(
        "plus-cross-speeds",
        &plus,
        &[
            (0, (1, 1), (0, 1), (2, 1), 0),
            (1, (3, 3), (1, 0), (1, 2), 0),
        ],
    );
    add(
        "plus-cross-3",
        &plus,
        &[
            (0, (2, 2), (0, 1), (2, 1), 0),
            (1, (2, 1), (1, 0), (1, 2), 0),
            (2, (1, 3), (1, 2), (1, 0), 0),
        ],
    );
    add(
        "plus-merge",
        &plus,
        &[
            (0, (2, 2), (1, 0), (2, 1), 0),
            (1, (2, 2), (1, 2), (2, 1), 0),
        ],
    );
    add(
        "plus-head-on",
        &plus,
        &[
            (0, (2, 1), (0, 1), (2, 1), 0),
            (1, (1, 2), (2, 1), (0, 1), 0),
        ],
    );
    add(
        "tee-merge",
        &tee,
        &[
            (0, (1, 1), (0, 0), (1, 1), 0),
            (1, (2, 2), (0, 2), (1, 1), 0),
        ],
    );
    add(
        "tee-through",
        &tee,
        &[
            (0, (2, 2), (0, 0), (0, 2), 0),
            (1, (1, 1), (1, 1), (0, 0), 0),
        ],
    );
    add(
        "tee-3",
        &tee,
        &[
            (0, (1, 1), (0, 0), (1, 1), 0),
            (1, (2, 2), (0, 2), (0, 0), 0),
            (2, (3, 1), (1, 1), (0, 2), 0),
        ],
    );
    add(
        "square-swap-diag",
        &square,
        &[
            (0, (2, 2), (0, 0), (1, 1), 0),
            (1, (2, 2), (1, 1), (0, 0), 0),
        ],
    );
    add(
        "square-same-diag",
        &square,
        &[
            (0, (1, 1), (0, 0), (1, 1), 0),
            (1, (2, 3), (0, 0), (1, 1), 0),
        ],
    );
    add(
        "square-rotate-3",
        &square,
        &[
            (0, (1, 1), (0, 0), (1, 1), 0),
            (1, (2, 2), (0, 1), (1, 0), 0),
            (2, (3, 3), (1, 1), (0, 0), 0),
        ],
    );
    add(
        "ell-swap",
        &ell,
        &[
            (0, (2, 1), (1, 0), (0, 2), 0),
            (1, (1, 2), (0, 2), (1, 0), 0),
        ],
    );
    add(
        "ell-follow-3",
        &ell,
        &[
            (0, (1, 1), (1, 0), (0, 2), 0),
            (1, (2, 2), (1, 0), (0, 2), 0),
            (2, (3, 1), (1, 0), (0, 2), 1),
        ],
    );
    add(
        "bridge-3",
        &bridge,
        &[
            (0, (1, 1), (0, 0), (0, 1), 0),
            (1, (2, 2), (0, 0), (0, 1), 0),
            (2, (3, 3), (0, 0), (0, 1), 0),
        ],
    );
    add(
        "line6-convoy-swap-3",
        &line6,
        &[
            (0, (2, 2), (0, 0), (0, 5), 0),
            (1, (2, 2), (0, 5), (0, 0), 0),
            (2, (1, 3), (0, 2), (0, 4), 0),
        ],
    );
    out
}
