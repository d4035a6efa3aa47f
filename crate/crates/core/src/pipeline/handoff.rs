//! Two-buffer exchange between consecutive pipeline stages.
//!
//! Exactly two buffers circulate per link. The producer fills one while the
//! consumer holds the other; ownership moves only at `publish` and `take`,
//! so a buffer is never visible to both sides at once.

use std::sync::{Condvar, Mutex, MutexGuard};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backpressure {
    /// Producer waits for the consumer; nothing is lost.
    Block,
    /// Producer never waits for a busy consumer: if the consumer still holds
    /// its buffer when the producer needs a new one, the unconsumed buffer
    /// is reclaimed and counted.
    DropOldest,
    /// Producer never waits; an unconsumed buffer is handed back with its
    /// contents so the producer can append to it.
    Coalesce,
}

/// A buffer handed to the producer.
pub struct Acquired<T> {
    pub buf: T,
    /// The buffer still holds published data that was never consumed.
    pub pending: bool,
}

struct State<T> {
    free: Vec<T>,
    ready: Option<(u64, T)>,
    closed: bool,
    published: u64,
    dropped: u64,
    last_taken: u64,
}

pub struct Handoff<T> {
    state: Mutex<State<T>>,
    changed: Condvar,
    policy: Backpressure,
}

impl<T> Handoff<T> {
    pub fn new(a: T, b: T, policy: Backpressure) -> Self {
        let state = State {
            free: vec![a, b],
            ready: None,
            closed: false,
            published: 0,
            dropped: 0,
            last_taken: 0,
        };
        Self {
            state: Mutex::new(state),
            changed: Condvar::new(),
            policy,
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// A buffer for the producer's next generation, or `None` once closed.
    pub fn acquire(&self) -> Option<Acquired<T>> {
        let mut s = self.lock();
        loop {
            if s.closed {
                return None;
            }
            if self.policy == Backpressure::Coalesce {
                if let Some((_, buf)) = s.ready.take() {
                    return Some(Acquired { buf, pending: true });
                }
            }
            if let Some(buf) = s.free.pop() {
                return Some(Acquired {
                    buf,
                    pending: false,
                });
            }
            if self.policy == Backpressure::DropOldest {
                if let Some((_, buf)) = s.ready.take() {
                    s.dropped += 1;
                    return Some(Acquired {
                        buf,
                        pending: false,
                    });
                }
            }
            s = self.changed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Hands a filled buffer to the consumer. Returns false if the link was
    /// closed, in which case the buffer is discarded.
    ///
    /// With two buffers per link, finding the slot still occupied means the
    /// consumer holds neither buffer: it is idle and merely not scheduled
    /// yet. Block and DropOldest both wait for it here; only Coalesce, whose
    /// `acquire` already took the slot back, never reaches this state.
    pub fn publish(&self, buf: T) -> bool {
        let mut s = self.lock();
        if self.policy != Backpressure::Coalesce {
            while s.ready.is_some() && !s.closed {
                s = self.changed.wait(s).unwrap_or_else(|e| e.into_inner());
            }
        }
        if s.closed {
            return false;
        }
        if let Some((_, old)) = s.ready.take() {
            s.dropped += 1;
            s.free.push(old);
        }
        s.published += 1;
        let generation = s.published;
        s.ready = Some((generation, buf));
        self.changed.notify_all();
        true
    }

    /// Next published buffer with its generation; `None` when the producer
    /// has closed the link and nothing is pending.
    pub fn take(&self) -> Option<(u64, T)> {
        let mut s = self.lock();
        loop {
            if let Some((generation, buf)) = s.ready.take() {
                debug_assert!(
                    generation > s.last_taken,
                    "generation {generation} after {}",
                    s.last_taken
                );
                s.last_taken = generation;
                self.changed.notify_all();
                return Some((generation, buf));
            }
            if s.closed {
                return None;
            }
            s = self.changed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Returns a consumed buffer to the producer.
    pub fn release(&self, buf: T) {
        let mut s = self.lock();
        debug_assert!(s.free.len() < 2, "more than two buffers on one link");
        s.free.push(buf);
        self.changed.notify_all();
    }

    /// Wakes both sides. Pending data can still be taken; acquire and
    /// publish fail from now on.
    pub fn close(&self) {
        let mut s = self.lock();
        s.closed = true;
        self.changed.notify_all();
    }

    pub fn published(&self) -> u64 {
        self.lock().published
    }

    pub fn dropped(&self) -> u64 {
        self.lock().dropped
    }
}
