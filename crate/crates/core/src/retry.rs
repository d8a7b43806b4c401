//! Bounded retry queue with exponential backoff, shared by the node push path
//! and the collector's forwarder.

use std::collections::VecDeque;

use crate::clock::NANOS_PER_SEC;

/// Capacity of a retry queue, in points.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

/// Exponential backoff: `base · 2^(failures−1)`, capped.
#[derive(Debug, Clone)]
pub struct Backoff {
    pub base_ns: i64,
    pub cap_ns: i64,
    failures: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new(NANOS_PER_SEC, 60 * NANOS_PER_SEC)
    }
}

impl Backoff {
    pub fn new(base_ns: i64, cap_ns: i64) -> Self {
        Self {
            base_ns,
            cap_ns,
            failures: 0,
        }
    }

    /// Records a failure and returns the delay before the next attempt.
    pub fn fail(&mut self) -> i64 {
        self.failures = self.failures.saturating_add(1);
        self.current()
    }

    pub fn current(&self) -> i64 {
        if self.failures == 0 {
            return 0;
        }
        let shift = (self.failures - 1).min(40);
        self.base_ns.saturating_mul(1i64 << shift).min(self.cap_ns)
    }

    pub fn reset(&mut self) {
        self.failures = 0;
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }
}

/// FIFO of pending items with a fixed capacity. When full, the oldest item is
/// dropped and counted.
#[derive(Debug)]
pub struct RetryQueue<T> {
    items: VecDeque<T>,
    capacity: usize,
    dropped: u64,
    backoff: Backoff,
    next_attempt_ns: i64,
}

impl<T> RetryQueue<T> {
    pub fn new(capacity: usize, backoff: Backoff) -> Self {
        Self {
            items: VecDeque::new(),
            capacity,
            dropped: 0,
            backoff,
            next_attempt_ns: i64::MIN,
        }
    }

    /// Appends an item; returns the evicted oldest item if the queue was full.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() >= self.capacity {
            self.dropped += 1;
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn ready(&self, now_ns: i64) -> bool {
        !self.items.is_empty() && now_ns >= self.next_attempt_ns
    }

    pub fn next_attempt_ns(&self) -> i64 {
        self.next_attempt_ns
    }

    pub fn backoff(&self) -> &Backoff {
        &self.backoff
    }

    /// Attempts to deliver the whole queue, oldest first, as one batch. On
    /// success the queue is emptied and the backoff reset; on failure nothing
    /// is removed and the next attempt is pushed out by the backoff delay.
    pub fn try_flush<E>(
        &mut self,
        now_ns: i64,
        deliver: impl FnOnce(&[T]) -> Result<(), E>,
    ) -> Option<Result<usize, E>> {
        if !self.ready(now_ns) {
            return None;
        }
        let slice = self.items.make_contiguous();
        match deliver(slice) {
            Ok(()) => {
                let n = self.items.len();
                self.items.clear();
                self.backoff.reset();
                self.next_attempt_ns = i64::MIN;
                Some(Ok(n))
            }
            Err(e) => {
                self.next_attempt_ns = now_ns.saturating_add(self.backoff.fail());
                Some(Err(e))
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}
