/// Default tick period, in virtual time units.
pub const DEFAULT_PERIOD: u64 = 100;

/// Per-tree virtual clock. Every tick advances time by exactly one period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickClock {
    period: u64,
    now: u64,
    ticks: u64,
}

impl TickClock {
    pub fn new(period: u64) -> Self {
        Self::starting_at(period, 0)
    }

    /// Clock whose first tick lands at `start + period`.
    pub fn starting_at(period: u64, start: u64) -> Self {
        assert!(period > 0, "tick period must be positive");
        Self { period, now: start, ticks: 0 }
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn tick_index(&self) -> u64 {
        self.ticks
    }

    /// Time at which the next tick will fire.
    pub fn next_due(&self) -> u64 {
        self.now + self.period
    }

    pub fn advance(&mut self) -> u64 {
        self.now += self.period;
        self.ticks += 1;
        self.now
    }
}

impl Default for TickClock {
    fn default() -> Self {
        Self::new(DEFAULT_PERIOD)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_strictly_increase_by_period() {
        let mut c = TickClock::new(7);
        let mut last = c.now();
        for k in 1..=10 {
            let t = c.advance();
            assert_eq!(t, last + 7);
            assert_eq!(c.tick_index(), k);
            last = t;
        }
    }
}
