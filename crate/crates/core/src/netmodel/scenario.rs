use std::collections::HashSet;

use super::{NetError, RoadNetwork, TravellerId, TravellerSpec};

/// Reads an extended `.scen` file.
///
/// Columns: bucket, map, width, height, sx, sy, gx, gy, base_cost, length,
/// speed, depart_time and an optional traveller id (defaults to the row
/// index). `x` is the column and `y` the row of the grid.
pub fn parse_scenario(text: &str, net: &RoadNetwork) -> Result<Vec<TravellerSpec>, NetError> {
    let mut specs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("version")) {
            continue;
        }
        let err = |reason: String| NetError::Scenario {
            line: i + 1,
            reason,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 12 && cols.len() != 13 {
            return Err(err(format!(
                "expected 12 or 13 columns, found {}",
                cols.len()
            )));
        }
        let int = |idx: usize, name: &str| -> Result<u64, NetError> {
            cols[idx]
                .parse::<u64>()
                .map_err(|_| err(format!("bad {name} {:?}", cols[idx])))
        };
        let (sx, sy, gx, gy) = (int(4, "sx")?, int(5, "sy")?, int(6, "gx")?, int(7, "gy")?);
        cols[8]
            .parse::<f64>()
            .map_err(|_| err(format!("bad base_cost {:?}", cols[8])))?;
        let length = int(9, "length")?;
        let speed = int(10, "speed")?;
        let depart = int(11, "depart_time")?;
        if length == 0 || length > u32::MAX as u64 {
            return Err(err("length must be a positive integer".into()));
        }
        if speed == 0 || speed > u32::MAX as u64 {
            return Err(err("speed must be a positive integer".into()));
        }
        let id = if cols.len() == 13 {
            TravellerId(int(12, "id")? as u32)
        } else {
            TravellerId(specs.len() as u32)
        };
        let cell = |x: u64, y: u64| {
            u32::try_from(y)
                .ok()
                .zip(u32::try_from(x).ok())
                .and_then(|(r, c)| net.node_at(r, c))
                .ok_or_else(|| err(format!("({x},{y}) is not a passable cell")))
        };
        let spec = TravellerSpec {
            id,
            length: length as u32,
            speed: speed as u32,
            source: cell(sx, sy)?,
            destination: cell(gx, gy)?,
            depart_not_before: depart,
        };
        spec.validate(net)?;
        if !seen.insert(id) {
            return Err(NetError::DuplicateTraveller(id));
        }
        specs.push(spec);
    }
    Ok(specs)
}

/// Map file named in the first data row.
pub fn scenario_map_name(text: &str) -> Option<&str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("version"))
        .find_map(|l| l.split_whitespace().nth(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{parse_map, WorldConfig};

    fn grid8() -> RoadNetwork {
        let rows = ["........"; 8].join("\n");
        let text = format!("type octile\nheight 8\nwidth 8\nmap\n{rows}\n");
        parse_map(&text, &WorldConfig::default()).unwrap()
    }

    #[test]
    fn direct_field_mapping() {
        let net = grid8();
        let specs =
            parse_scenario("version 1\n0\tm\t8\t8\t0\t0\t7\t7\t14\t2\t1\t0\n", &net).unwrap();
        assert_eq!(specs.len(), 1);
        let s = &specs[0];
        assert_eq!((s.length, s.speed, s.depart_not_before), (2, 1, 0));
        assert_eq!(s.source, net.node_at(0, 0).unwrap());
        assert_eq!(s.destination, net.node_at(7, 7).unwrap());
        // space separated also accepted
        let specs = parse_scenario("0 m 8 8 0 0 7 7 14 2 1 0", &net).unwrap();
        assert_eq!(specs[0].length, 2);
    }

    #[test]
    fn empty_after_version() {
        assert!(parse_scenario("version 1\n", &grid8()).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_rows() {
        let net = grid8();
        assert!(parse_scenario("0 m 8 8 0 0 7 7 14 2 0 0", &net).is_err());
        assert!(parse_scenario("0 m 8 8 0 0 7 7 14 0 1 0", &net).is_err());
        assert!(parse_scenario("0 m 8 8 0 0 9 7 14 2 1 0", &net).is_err());
        assert!(parse_scenario("0 m 8 8 0 0 0 0 14 2 1 0", &net).is_err());
        let dup = "0 m 8 8 0 0 7 7 14 2 1 0 5\n0 m 8 8 1 0 7 7 14 2 1 0 5\n";
        assert_eq!(
            parse_scenario(dup, &net),
            Err(NetError::DuplicateTraveller(TravellerId(5)))
        );
    }

    #[test]
    fn blocked_cell_rejected() {
        let text = "type octile\nheight 1\nwidth 3\nmap\n.@.\n";
        let net = parse_map(text, &WorldConfig::default()).unwrap();
        let err = parse_scenario("0 m 3 1 1 0 2 0 2 1 1 0", &net).unwrap_err();
        assert!(matches!(err, NetError::Scenario { line: 1, .. }));
    }

    #[test]
    fn map_name_from_first_row() {
        let text = "version 1\n0\tarena.map\t8\t8\t0\t0\t1\t0\t1\t1\t1\t0\n";
        assert_eq!(scenario_map_name(text), Some("arena.map"));
        assert_eq!(scenario_map_name("version 1\n"), None);
    }
}
