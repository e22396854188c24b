//! Deterministic discrete-event core.
//!
//! A binary heap keyed by `(fire_at, seq)` where `seq` is a monotone
//! insertion counter, so events at the same instant dispatch in insertion
//! order and two runs over the same schedule are bit-identical.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use crate::time::SimTime;

/// Opaque identifier of a scheduled event (its insertion sequence number).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventHandle(pub u64);

/// A scheduled event carrying a domain-specific kind.
#[derive(Clone, Debug)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: K,
}

struct HeapEntry<K> {
    fire_at: SimTime,
    seq: u64,
    kind: K,
}

// Reverse ordering: BinaryHeap is a max-heap, we want the smallest key first.
impl<K> Ord for HeapEntry<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl<K> PartialOrd for HeapEntry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> PartialEq for HeapEntry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<K> Eq for HeapEntry<K> {}

/// A handler error wrapped with the event that triggered it.
#[derive(Debug)]
pub struct RunError<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub source: E,
}

impl<E: fmt::Display> fmt::Display for RunError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "event seq {} at {} failed: {}",
            self.seq, self.fire_at, self.source
        )
    }
}

impl<E: std::error::Error + 'static> std::error::Error for RunError<E> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Reacts to dispatched events; may schedule more.
pub trait EventHandler<K> {
    type Error;

    fn handle(&mut self, engine: &mut Engine<K>, event: Event<K>) -> Result<(), Self::Error>;
}

/// The event queue plus the simulation clock.
pub struct Engine<K> {
    heap: BinaryHeap<HeapEntry<K>>,
    next_seq: u64,
    now: SimTime,
}

impl<K> Default for Engine<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Engine<K> {
    pub fn new() -> Self {
        Engine {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `kind` to fire at `fire_at`.
    ///
    /// Panics if `fire_at` is before the current clock; scheduling into the
    /// past is always a bug in the caller.
    pub fn schedule(&mut self, fire_at: SimTime, kind: K) -> EventHandle {
        assert!(
            fire_at >= self.now,
            "scheduled event at {fire_at} behind clock {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry { fire_at, seq, kind });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, kind: K) -> EventHandle {
        self.schedule(self.now + delay, kind)
    }

    /// Pops the next event with `fire_at <= t_end`, advancing the clock to
    /// its fire time. Returns `None` when nothing is due.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<Event<K>> {
        match self.heap.peek() {
            Some(entry) if entry.fire_at <= t_end => {
                let entry = self.heap.pop().expect("peeked entry");
                debug_assert!(entry.fire_at >= self.now, "clock would run backwards");
                self.now = entry.fire_at;
                Some(Event {
                    fire_at: entry.fire_at,
                    seq: entry.seq,
                    kind: entry.kind,
                })
            }
            _ => None,
        }
    }

    /// Dispatches every event due at or before `t_end` through `handler`,
    /// in `(fire_at, seq)` order, then parks the clock at `t_end`.
    ///
    /// Returns the number of events dispatched. A handler error aborts the
    /// run immediately, identifying the offending event.
    pub fn run_until<H>(&mut self, t_end: SimTime, handler: &mut H) -> Result<u64, RunError<H::Error>>
    where
        H: EventHandler<K>,
    {
        assert!(
            t_end >= self.now,
            "run_until({t_end}) behind clock {}",
            self.now
        );
        let mut dispatched = 0u64;
        while let Some(event) = self.pop_due(t_end) {
            let (fire_at, seq) = (event.fire_at, event.seq);
            handler
                .handle(self, event)
                .map_err(|source| RunError { fire_at, seq, source })?;
            dispatched += 1;
        }
        self.now = t_end;
        Ok(dispatched)
    }
}
