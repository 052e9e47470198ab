use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Integer grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Navigation command: a target cell plus a final heading in whole degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub cell: Cell,
    pub heading_deg: i32,
}

impl Goal {
    pub fn new(cell: Cell) -> Self {
        Self { cell, heading_deg: 0 }
    }

    /// Canonical form used for command equality.
    pub fn canonical(self) -> Self {
        Self { cell: self.cell, heading_deg: self.heading_deg.rem_euclid(360) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cell: Cell,
    /// Heading in radians, kept in `[0, 2π)`.
    pub theta: f64,
}

impl Pose {
    pub fn new(cell: Cell, theta: f64) -> Self {
        Self { cell, theta: normalize_angle(theta) }
    }
}

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}
