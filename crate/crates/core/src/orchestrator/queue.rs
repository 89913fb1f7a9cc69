//! Per-species circular trajectory queues.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::Trajectory;

/// Bounded FIFO of segments for one species. Enqueue never blocks: at
/// capacity the oldest unconsumed segment is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryQueue {
    species: usize,
    capacity: usize,
    items: VecDeque<Trajectory>,
    dropped: u64,
}

impl TrajectoryQueue {
    pub fn new(species: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::arg("queue capacity must be positive"));
        }
        Ok(Self {
            species,
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
            dropped: 0,
        })
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Segments overwritten so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn enqueue(&mut self, segment: Trajectory) -> Result<()> {
        if segment.species != self.species {
            return Err(Error::integrity(format!(
                "segment of species {} offered to the queue of species {}",
                segment.species, self.species
            )));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.dropped += 1;
        }
        self.items.push_back(segment);
        Ok(())
    }

    /// Removes and returns the `n` oldest segments, or nothing if fewer are
    /// queued.
    pub fn dequeue_batch(&mut self, n: usize) -> Option<Vec<Trajectory>> {
        (n > 0 && self.items.len() >= n).then(|| self.items.drain(..n).collect())
    }
}

/// A [`TrajectoryQueue`] shared between producer threads and one consumer.
#[derive(Debug)]
pub struct SharedQueue {
    state: Mutex<(TrajectoryQueue, bool)>,
    ready: Condvar,
}

impl SharedQueue {
    pub fn new(queue: TrajectoryQueue) -> Self {
        Self {
            state: Mutex::new((queue, false)),
            ready: Condvar::new(),
        }
    }

    pub fn enqueue(&self, segment: Trajectory) -> Result<()> {
        let mut guard = self.state.lock().expect("queue lock poisoned");
        guard.0.enqueue(segment)?;
        drop(guard);
        self.ready.notify_one();
        Ok(())
    }

    /// Wakes the consumer; once closed, `dequeue_batch` returns `None` as
    /// soon as fewer than a full batch remains.
    pub fn close(&self) {
        self.state.lock().expect("queue lock poisoned").1 = true;
        self.ready.notify_all();
    }

    /// Blocks until `n` segments are available (returning them) or the
    /// queue is closed with fewer than `n` left.
    pub fn dequeue_batch(&self, n: usize) -> Option<Vec<Trajectory>> {
        let mut guard = self.state.lock().expect("queue lock poisoned");
        loop {
            if let Some(batch) = guard.0.dequeue_batch(n) {
                return Some(batch);
            }
            if guard.1 {
                return None;
            }
            guard = self.ready.wait(guard).expect("queue lock poisoned");
        }
    }

    /// Like [`Self::dequeue_batch`] but gives up after `timeout`.
    pub fn dequeue_batch_timeout(&self, n: usize, timeout: Duration) -> Option<Vec<Trajectory>> {
        let guard = self.state.lock().expect("queue lock poisoned");
        let (mut guard, _) = self
            .ready
            .wait_timeout_while(guard, timeout, |(q, closed)| q.len() < n && !*closed)
            .expect("queue lock poisoned");
        guard.0.dequeue_batch(n)
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock poisoned").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_inner(self) -> TrajectoryQueue {
        self.state.into_inner().expect("queue lock poisoned").0
    }
}
