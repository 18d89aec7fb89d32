use super::{GridShape, LocationId, NetError, NetworkBuilder, RoadNetwork, WorldConfig};

fn passable(c: char) -> Option<bool> {
    match c {
        '.' | 'G' | 'S' => Some(true),
        '@' | 'O' | 'T' | 'W' => Some(false),
        _ => None,
    }
}

fn header_value(line: Option<&str>, key: &str) -> Result<u32, NetError> {
    let line = line.ok_or_else(|| NetError::Header(format!("missing `{key}` line")))?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => v
            .parse()
            .map_err(|_| NetError::Header(format!("bad {key} value {v:?}"))),
        _ => Err(NetError::Header(format!(
            "expected `{key} <n>`, got {line:?}"
        ))),
    }
}

/// Reads a MovingAI grid map into a 4-connected road network.
///
/// Nodes are numbered row-major over passable cells; edges follow, in
/// row-major order of their first cell, right neighbour before down.
pub fn parse_map(text: &str, cfg: &WorldConfig) -> Result<RoadNetwork, NetError> {
    cfg.validate()?;
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    let ty = lines
        .next()
        .ok_or_else(|| NetError::Header("empty map".into()))?;
    if !ty.starts_with("type ") {
        return Err(NetError::Header(format!("expected `type ...`, got {ty:?}")));
    }
    let height = header_value(lines.next(), "height")?;
    let width = header_value(lines.next(), "width")?;
    if lines.next().map(str::trim) != Some("map") {
        return Err(NetError::Header("expected `map` line".into()));
    }

    let mut grid = Vec::with_capacity((height * width) as usize);
    let mut rows = 0usize;
    for (r, line) in lines.enumerate() {
        if line.is_empty() && r >= height as usize {
            continue;
        }
        let cells: Vec<char> = line.chars().collect();
        if cells.len() != width as usize {
            return Err(NetError::RowLength {
                row: r,
                found: cells.len(),
                expected: width as usize,
            });
        }
        for (c, ch) in cells.into_iter().enumerate() {
            grid.push(passable(ch).ok_or(NetError::Terrain(ch, r, c))?);
        }
        rows += 1;
    }
    if rows != height as usize {
        return Err(NetError::RowCount {
            found: rows,
            expected: height as usize,
        });
    }
    if !grid.iter().any(|&p| p) {
        return Err(NetError::NoPassableCells);
    }

    let mut b = NetworkBuilder::default();
    let at = |r: u32, c: u32| grid[(r * width + c) as usize];
    for r in 0..height {
        for c in 0..width {
            if at(r, c) {
                b.add_cell_node(r, c, cfg);
            }
        }
    }
    let node = |b: &NetworkBuilder, r: u32, c: u32| -> LocationId { b.cells[&(r, c)] };
    for r in 0..height {
        for c in 0..width {
            if !at(r, c) {
                continue;
            }
            let here = node(&b, r, c);
            if c + 1 < width && at(r, c + 1) {
                let right = node(&b, r, c + 1);
                b.add_edge(here, right, cfg.edge_length, cfg.default_speed_limit)?;
            }
            if r + 1 < height && at(r + 1, c) {
                let down = node(&b, r + 1, c);
                b.add_edge(here, down, cfg.edge_length, cfg.default_speed_limit)?;
            }
        }
    }
    b.set_grid(GridShape {
        height,
        width,
        passable: grid,
    });
    Ok(b.build())
}

impl RoadNetwork {
    /// Writes the grid a network was parsed from back out as a map file.
    pub fn to_map_text(&self) -> Option<String> {
        let g = self.grid()?;
        let mut out = format!("type octile\nheight {}\nwidth {}\nmap\n", g.height, g.width);
        for row in g.passable.chunks(g.width as usize) {
            out.extend(row.iter().map(|&p| if p { '.' } else { '@' }));
            out.push('\n');
        }
        Some(out)
    }
}
