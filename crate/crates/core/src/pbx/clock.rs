use std::collections::BTreeMap;
use std::time::Duration;

use crate::SimTime;

/// Virtual time plus a timer queue. Timers fire in time order; equal times
/// fire in scheduling order.
#[derive(Debug, Clone)]
pub struct VirtualClock<E> {
    now: SimTime,
    seq: u64,
    pending: BTreeMap<(SimTime, u64), E>,
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        VirtualClock { now: SimTime::ZERO, seq: 0, pending: BTreeMap::new() }
    }
}

impl<E> VirtualClock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedule `event` at `at`. Times in the past are clamped to now.
    pub fn schedule(&mut self, at: SimTime, event: E) {
        let at = at.max(self.now);
        self.seq += 1;
        self.pending.insert((at, self.seq), event);
    }

    pub fn schedule_in(&mut self, delay: Duration, event: E) {
        self.schedule(self.now + delay, event);
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.pending.keys().next().map(|(t, _)| *t)
    }

    /// Pop the earliest timer and move the clock to its time.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let ((at, _), event) = self.pending.pop_first()?;
        self.now = at;
        Some((at, event))
    }

    /// Pop the earliest timer only if it is due at or before `limit`.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        if self.peek_time()? > limit {
            return None;
        }
        self.pop()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_in_time_then_insertion_order() {
        let mut c = VirtualClock::new();
        c.schedule(SimTime::from_secs(2), "b");
        c.schedule(SimTime::from_secs(1), "a");
        c.schedule(SimTime::from_secs(2), "c");
        let order: Vec<&str> = std::iter::from_fn(|| c.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, ["a", "b", "c"]);
        assert_eq!(c.now(), SimTime::from_secs(2));
    }

    #[test]
    fn time_never_decreases() {
        let mut c = VirtualClock::new();
        c.schedule(SimTime::from_secs(5), 1);
        c.pop();
        c.schedule(SimTime::from_secs(1), 2);
        assert_eq!(c.pop(), Some((SimTime::from_secs(5), 2)));
        assert_eq!(c.pop_until(SimTime::from_secs(9)), None);
    }
}
