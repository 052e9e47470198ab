use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::geom::Cell;

/// Immutable occupancy layer loaded from a map file.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticMap {
    width: i32,
    height: i32,
    resolution: f64,
    occupied: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("map line {line}: {message}")]
pub struct MapError {
    pub line: usize,
    pub message: String,
}

impl StaticMap {
    pub fn empty(width: i32, height: i32) -> Self {
        Self::from_fn(width, height, |_| false)
    }

    pub fn from_fn(width: i32, height: i32, mut occupied: impl FnMut(Cell) -> bool) -> Self {
        assert!(width > 0 && height > 0, "map must have positive extent");
        let mut cells = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                cells.push(occupied(Cell::new(x, y)));
            }
        }
        Self { width, height, resolution: 1.0, occupied: cells }
    }

    /// Parses `W H resolution` followed by H rows of `.` and `#`; row 0 is y = 0.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let err = |line: usize, message: String| MapError { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let (n, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(n, format!("expected `W H resolution`, got `{header}`")));
        }
        let dim = |s: &str| s.parse::<i32>().ok().filter(|v| *v > 0);
        let (Some(width), Some(height)) = (dim(fields[0]), dim(fields[1])) else {
            return Err(err(n, "width and height must be positive integers".into()));
        };
        let resolution: f64 = fields[2]
            .parse()
            .ok()
            .filter(|r: &f64| *r > 0.0)
            .ok_or_else(|| err(n, "resolution must be a positive number".into()))?;
        let mut occupied = Vec::with_capacity((width * height) as usize);
        let mut rows = 0;
        for (n, row) in lines {
            if row.is_empty() {
                continue;
            }
            if rows == height {
                return Err(err(n, format!("more than {height} rows")));
            }
            if row.chars().count() != width as usize {
                return Err(err(n, format!("row has {} cells, expected {width}", row.chars().count())));
            }
            for ch in row.chars() {
                match ch {
                    '.' => occupied.push(false),
                    '#' => occupied.push(true),
                    other => return Err(err(n, format!("unexpected character `{other}`"))),
                }
            }
            rows += 1;
        }
        if rows != height {
            return Err(err(text.lines().count().max(1), format!("expected {height} rows, found {rows}")));
        }
        Ok(Self { width, height, resolution, occupied })
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    /// Out-of-bounds cells count as occupied.
    pub fn is_occupied(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.occupied[(c.y * self.width + c.x) as usize]
    }
}

impl fmt::Display for StaticMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {} {}", self.width, self.height, self.resolution)?;
        for y in 0..self.height {
            for x in 0..self.width {
                f.write_str(if self.is_occupied(Cell::new(x, y)) { "#" } else { "." })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Global,
    Local,
    All,
}

/// One robot's view: the shared static layer plus its own clearable
/// global and local costmap layers.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    map: Arc<StaticMap>,
    global: BTreeSet<Cell>,
    local: BTreeSet<Cell>,
}

impl OccupancyGrid {
    pub fn new(map: Arc<StaticMap>) -> Self {
        Self { map, global: BTreeSet::new(), local: BTreeSet::new() }
    }

    pub fn map(&self) -> &StaticMap {
        &self.map
    }

    pub fn blocked_global(&self, c: Cell) -> bool {
        self.map.is_occupied(c) || self.global.contains(&c)
    }

    pub fn blocked_local(&self, c: Cell) -> bool {
        self.map.is_occupied(c) || self.local.contains(&c)
    }

    pub fn layer(&self, layer: Layer) -> &BTreeSet<Cell> {
        match layer {
            Layer::Global => &self.global,
            Layer::Local | Layer::All => &self.local,
        }
    }

    /// Marks an observed obstacle in both costmap layers.
    pub fn mark(&mut self, c: Cell) {
        self.global.insert(c);
        self.local.insert(c);
    }

    /// Forgets an obstacle that is observed to be gone.
    pub fn unmark(&mut self, c: Cell) {
        self.global.remove(&c);
        self.local.remove(&c);
    }

    pub fn clear(&mut self, layer: Layer) {
        match layer {
            Layer::Global => self.global.clear(),
            Layer::Local => self.local.clear(),
            Layer::All => {
                self.global.clear();
                self.local.clear();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints_map_files() {
        let text = "4 2 0.05\n..#.\n#...\n";
        let m = StaticMap::parse(text).unwrap();
        assert!(m.is_occupied(Cell::new(2, 0)));
        assert!(m.is_occupied(Cell::new(0, 1)));
        assert!(!m.is_occupied(Cell::new(0, 0)));
        assert!(m.is_occupied(Cell::new(4, 0)));
        assert_eq!(m.to_string(), "4 2 0.05\n..#.\n#...\n");
    }

    #[test]
    fn map_errors_carry_lines() {
        assert_eq!(StaticMap::parse("2 2 1\n..\n.x\n").unwrap_err().line, 3);
        assert_eq!(StaticMap::parse("2 2 1\n...\n").unwrap_err().line, 2);
        assert_eq!(StaticMap::parse("2 1\n").unwrap_err().line, 1);
        assert!(StaticMap::parse("2 2 1\n..\n").is_err());
    }

    #[test]
    fn clearing_layers() {
        let mut g = OccupancyGrid::new(Arc::new(StaticMap::empty(5, 5)));
        g.mark(Cell::new(1, 1));
        g.clear(Layer::Local);
        assert!(g.blocked_global(Cell::new(1, 1)) && !g.blocked_local(Cell::new(1, 1)));
        g.clear(Layer::Global);
        assert!(!g.blocked_global(Cell::new(1, 1)));
        g.clear(Layer::All);
        g.mark(Cell::new(2, 2));
        g.clear(Layer::All);
        assert!(g.layer(Layer::Global).is_empty() && g.layer(Layer::Local).is_empty());
    }
}
