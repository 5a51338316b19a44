//! Request throttling against an injectable clock, so throttle behavior is
//! testable without waiting on wall time.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

/// Wall-clock time relative to construction.
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> SystemClock {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(std::time::Duration::from_millis(ms));
    }
}

/// Virtual clock for tests and replays: sleeping advances time instantly.
pub struct MockClock {
    now: AtomicU64,
    sleeps: Mutex<Vec<u64>>,
}

impl MockClock {
    pub fn new() -> MockClock {
        MockClock {
            now: AtomicU64::new(0),
            sleeps: Mutex::new(Vec::new()),
        }
    }

    pub fn sleeps(&self) -> Vec<u64> {
        self.sleeps.lock().expect("mock clock lock").clone()
    }
}

impl Default for MockClock {
    fn default() -> Self {
        MockClock::new()
    }
}

impl Clock for MockClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_ms(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
        self.sleeps.lock().expect("mock clock lock").push(ms);
    }
}

const WINDOW_MS: u64 = 60_000;

/// Sliding-window limiter: at most `rpm` acquisitions inside any 60-second
/// window (closed on both ends).
pub struct RateLimiter {
    rpm: u32,
    window: VecDeque<u64>,
}

impl RateLimiter {
    pub fn new(rpm: u32) -> RateLimiter {
        RateLimiter {
            rpm: rpm.max(1),
            window: VecDeque::new(),
        }
    }

    /// Block (via the clock) until a request slot is free; returns the
    /// timestamp recorded for the request.
    pub fn acquire(&mut self, clock: &dyn Clock) -> u64 {
        let mut now = clock.now_ms();
        loop {
            while self
                .window
                .front()
                .map(|&t| now.saturating_sub(t) > WINDOW_MS)
                .unwrap_or(false)
            {
                self.window.pop_front();
            }
            if self.window.len() < self.rpm as usize {
                break;
            }
            let oldest = *self.window.front().expect("window non-empty");
            let wait = (oldest + WINDOW_MS + 1).saturating_sub(now).max(1);
            clock.sleep_ms(wait);
            now = clock.now_ms();
        }
        self.window.push_back(now);
        now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_rpm_admits_at_most_thirty_per_minute() {
        let clock = MockClock::new();
        let mut limiter = RateLimiter::new(30);
        let stamps: Vec<u64> = (0..40).map(|_| limiter.acquire(&clock)).collect();
        // Oracle: any 31 consecutive requests must span strictly more than
        // one minute.
        for pair in stamps.windows(31) {
            assert!(pair[30] - pair[0] > 60_000, "{:?}", (pair[0], pair[30]));
        }
        // The first 30 go through immediately; the 31st waits.
        assert_eq!(stamps[29], 0);
        assert!(stamps[30] > 60_000);
        assert!(!clock.sleeps().is_empty());
    }

    #[test]
    fn under_the_limit_nothing_sleeps() {
        let clock = MockClock::new();
        let mut limiter = RateLimiter::new(30);
        for _ in 0..30 {
            limiter.acquire(&clock);
        }
        assert!(clock.sleeps().is_empty());
        assert_eq!(clock.now_ms(), 0);
    }
}
