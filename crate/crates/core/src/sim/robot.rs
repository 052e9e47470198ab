use std::f64::consts::TAU;

use super::grid::OccupancyGrid;
use crate::bt::Status;
use crate::geom::{Cell, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct RobotConfig {
    /// Arrival tolerance in cells.
    pub epsilon: u32,
    /// Cells advanced per tick.
    pub speed: u32,
    pub spin_duration: u32,
    pub wait_duration: u32,
    /// Battery percentage below which the battery is not fair.
    pub battery_threshold: f64,
    /// Battery percentage drained per robot tick.
    pub drain: f64,
    /// Manhattan radius within which obstacles are observed.
    pub sensor_range: u32,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            epsilon: 0,
            speed: 1,
            spin_duration: 8,
            wait_duration: 5,
            battery_threshold: 20.0,
            drain: 0.05,
            sensor_range: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowStep {
    Progressed,
    Arrived,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("robot has no current path")]
pub struct NoPath;

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub pose: Pose,
    pub battery: f64,
    /// Remaining cells of the current path and the cell it leads to.
    pub path: Option<(Vec<Cell>, Cell)>,
    pub backup: Cell,
}

impl RobotState {
    pub fn new(start: Cell, backup: Cell) -> Self {
        Self { pose: Pose::new(start, 0.0), battery: 100.0, path: None, backup }
    }

    pub fn set_path(&mut self, path: Vec<Cell>, target: Cell) {
        self.path = Some((path, target));
    }

    pub fn battery_step(&mut self, drain: f64) -> f64 {
        self.battery = (self.battery - drain).max(0.0);
        self.battery
    }

    pub fn battery_fair(&self, threshold: f64) -> bool {
        self.battery >= threshold
    }

    /// Advances up to `speed` cells, checking each next cell against the
    /// static and local costmap layers.
    pub fn follow_step(&mut self, grid: &OccupancyGrid, cfg: &RobotConfig) -> Result<FollowStep, NoPath> {
        let (path, target) = self.path.as_mut().ok_or(NoPath)?;
        let target = *target;
        for _ in 0..cfg.speed.max(1) {
            if self.pose.cell.manhattan(target) <= cfg.epsilon {
                return Ok(FollowStep::Arrived);
            }
            let Some(&next) = path.first() else {
                return Ok(FollowStep::Blocked);
            };
            if grid.blocked_local(next) {
                return Ok(FollowStep::Blocked);
            }
            let (dx, dy) = (next.x - self.pose.cell.x, next.y - self.pose.cell.y);
            self.pose = Pose::new(next, (dy as f64).atan2(dx as f64));
            path.remove(0);
        }
        if self.pose.cell.manhattan(target) <= cfg.epsilon {
            Ok(FollowStep::Arrived)
        } else {
            Ok(FollowStep::Progressed)
        }
    }
}

/// A full turn in place over a fixed number of ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Spin {
    total: u32,
    done: u32,
    start: Option<f64>,
}

impl Spin {
    pub fn new(total: u32) -> Self {
        Self { total: total.max(1), done: 0, start: None }
    }

    pub fn step(&mut self, pose: &mut Pose) -> Status {
        let start = *self.start.get_or_insert(pose.theta);
        self.done += 1;
        if self.done >= self.total {
            pose.theta = start;
            return Status::Success;
        }
        *pose = Pose::new(pose.cell, start + TAU * self.done as f64 / self.total as f64);
        Status::Running
    }
}

/// Running for `ticks - 1` ticks, then Success.
#[derive(Debug, Clone, PartialEq)]
pub struct Wait {
    total: u32,
    done: u32,
}

impl Wait {
    pub fn new(total: u32) -> Self {
        Self { total: total.max(1), done: 0 }
    }

    pub fn step(&mut self) -> Status {
        self.done += 1;
        if self.done >= self.total {
            Status::Success
        } else {
            Status::Running
        }
    }
}
