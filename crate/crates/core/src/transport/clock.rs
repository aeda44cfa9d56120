//! Simulated and wall clocks.

use std::time::Instant;

/// Nanoseconds since the start of a session.
pub type Nanos = u64;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

pub fn secs(ns: Nanos) -> f64 {
    ns as f64 / NANOS_PER_SEC as f64
}

/// Monotone simulated time; only moves when told to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Nanos,
}

impl VirtualClock {
    pub fn new(start: Nanos) -> Self {
        VirtualClock { now: start }
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn advance(&mut self, dt: Nanos) {
        self.now += dt;
    }

    /// Moves forward to `t`; earlier timestamps are ignored.
    pub fn advance_to(&mut self, t: Nanos) {
        self.now = self.now.max(t);
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Clock {
    Simulated(VirtualClock),
    Wall(Instant),
}

impl Clock {
    pub fn simulated() -> Self {
        Clock::Simulated(VirtualClock::default())
    }

    pub fn wall() -> Self {
        Clock::Wall(Instant::now())
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, Clock::Simulated(_))
    }

    pub fn now(&self) -> Nanos {
        match self {
            Clock::Simulated(c) => c.now(),
            Clock::Wall(start) => start.elapsed().as_nanos() as Nanos,
        }
    }

    /// Accounts `dt` of modeled work. Wall clocks measure instead.
    pub fn advance(&mut self, dt: Nanos) {
        if let Clock::Simulated(c) = self {
            c.advance(dt);
        }
    }

    pub fn advance_to(&mut self, t: Nanos) {
        if let Clock::Simulated(c) = self {
            c.advance_to(t);
        }
    }
}
