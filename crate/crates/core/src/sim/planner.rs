//! 4-connected A* with a Manhattan heuristic.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::grid::OccupancyGrid;
use crate::geom::Cell;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("cell {0} is outside the map")]
    OutOfBounds(Cell),
    #[error("start cell {0} is statically occupied")]
    StartOccupied(Cell),
    #[error("no path to {0}")]
    NoPath(Cell),
}

impl PlanError {
    /// Input errors are distinct from an honest planning failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, PlanError::NoPath(_))
    }
}

/// Neighbors in (y, x) order.
pub fn neighbors(c: Cell) -> [Cell; 4] {
    [
        Cell::new(c.x, c.y - 1),
        Cell::new(c.x - 1, c.y),
        Cell::new(c.x + 1, c.y),
        Cell::new(c.x, c.y + 1),
    ]
}

/// Shortest path from `from` to `to` over cells where `blocked` is false.
/// The path excludes `from` and ends at `to`; it is empty when they coincide.
pub fn astar(
    width: i32,
    height: i32,
    blocked: impl Fn(Cell) -> bool,
    from: Cell,
    to: Cell,
) -> Result<Vec<Cell>, PlanError> {
    let inside = |c: Cell| c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
    for c in [from, to] {
        if !inside(c) {
            return Err(PlanError::OutOfBounds(c));
        }
    }
    if from == to {
        return Ok(Vec::new());
    }
    if blocked(to) {
        return Err(PlanError::NoPath(to));
    }
    let idx = |c: Cell| (c.y * width + c.x) as usize;
    let n = (width * height) as usize;
    let mut g = vec![u32::MAX; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(from)] = 0;
    open.push(Reverse((from.manhattan(to), 0u32, from.y, from.x)));
    while let Some(Reverse((_, cost, y, x))) = open.pop() {
        let cur = Cell::new(x, y);
        if closed[idx(cur)] {
            continue;
        }
        closed[idx(cur)] = true;
        if cur == to {
            let mut path = vec![cur];
            let mut at = cur;
            while let Some(p) = parent[idx(at)] {
                if p == from {
                    break;
                }
                path.push(p);
                at = p;
            }
            path.reverse();
            return Ok(path);
        }
        for nb in neighbors(cur) {
            if !inside(nb) || blocked(nb) || closed[idx(nb)] {
                continue;
            }
            let ng = cost + 1;
            if ng < g[idx(nb)] {
                g[idx(nb)] = ng;
                parent[idx(nb)] = Some(cur);
                open.push(Reverse((ng + nb.manhattan(to), ng, nb.y, nb.x)));
            }
        }
    }
    Err(PlanError::NoPath(to))
}

/// Plans over the static and global costmap layers.
pub fn plan_global(grid: &OccupancyGrid, from: Cell, to: Cell) -> Result<Vec<Cell>, PlanError> {
    let map = grid.map();
    if map.in_bounds(from) && map.is_occupied(from) {
        return Err(PlanError::StartOccupied(from));
    }
    astar(map.width(), map.height(), |c| grid.blocked_global(c), from, to)
}
