//! Wall-clock and virtual timing.
//!
//! Runtimes are normally wall-clock. For reproducible runs with mock
//! providers, [`Timing::Virtual`] measures time on a per-thread virtual
//! clock that only advances when a provider calls [`charge`]. A pipeline
//! run stays on one thread, so per-item virtual latencies are deterministic.

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    #[default]
    Wall,
    Virtual,
}

thread_local! {
    // integer microseconds: differences are exact however long the thread runs
    static VIRTUAL_US: Cell<u64> = const { Cell::new(0) };
}

/// Advances the calling thread's virtual clock (resolution 1 µs).
pub fn charge(ms: f64) {
    let us = (ms.max(0.0) * 1000.0).round() as u64;
    VIRTUAL_US.with(|c| c.set(c.get() + us));
}

fn virtual_now() -> u64 {
    VIRTUAL_US.with(Cell::get)
}

#[derive(Debug, Clone, Copy)]
pub struct Stopwatch {
    timing: Timing,
    wall: Instant,
    virt: u64,
}

impl Stopwatch {
    pub fn start(timing: Timing) -> Self {
        Self {
            timing,
            wall: Instant::now(),
            virt: virtual_now(),
        }
    }

    pub fn elapsed_ms(&self) -> f64 {
        match self.timing {
            Timing::Wall => self.wall.elapsed().as_secs_f64() * 1000.0,
            Timing::Virtual => (virtual_now() - self.virt) as f64 / 1000.0,
        }
    }
}
