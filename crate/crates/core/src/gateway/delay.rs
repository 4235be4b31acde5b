//! Order-preserving latency injection.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Draws a delay in µs from `N(mean, sigma)` truncated at zero.
pub fn sample_delay_us<R: Rng + ?Sized>(mean_ms: f64, sigma_ms: f64, rng: &mut R) -> u64 {
    let ms = if sigma_ms > 0.0 {
        Normal::new(mean_ms, sigma_ms).expect("finite sigma").sample(rng)
    } else {
        mean_ms
    };
    (ms.max(0.0) * 1000.0).round() as u64
}

struct Entry<T> {
    due_us: u64,
    order: u64,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.due_us, self.order) == (other.due_us, other.order)
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due_us, self.order).cmp(&(other.due_us, other.order))
    }
}

/// Timer queue whose release times never decrease within a key, so items on
/// one key come out in the order they went in whatever the jitter.
pub struct DelayLine<K, T> {
    heap: BinaryHeap<Reverse<Entry<T>>>,
    last_due: HashMap<K, u64>,
    order: u64,
}

impl<K: Eq + Hash, T> Default for DelayLine<K, T> {
    fn default() -> Self {
        DelayLine {
            heap: BinaryHeap::new(),
            last_due: HashMap::new(),
            order: 0,
        }
    }
}

impl<K: Eq + Hash, T> DelayLine<K, T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedules `item` for `now + delay`, pushed back if needed to stay behind
    /// the previous item on `key`. Returns the release time.
    pub fn push(&mut self, key: K, now_us: u64, delay_us: u64, item: T) -> u64 {
        let last = self.last_due.entry(key).or_insert(0);
        let due_us = (now_us + delay_us).max(*last);
        *last = due_us;
        self.order += 1;
        self.heap.push(Reverse(Entry {
            due_us,
            order: self.order,
            item,
        }));
        due_us
    }

    /// Items whose release time has come, earliest first.
    pub fn pop_due(&mut self, now_us: u64) -> Vec<(u64, T)> {
        let mut out = Vec::new();
        while self.heap.peek().is_some_and(|Reverse(e)| e.due_us <= now_us) {
            let Reverse(e) = self.heap.pop().expect("peeked");
            out.push((e.due_us, e.item));
        }
        out
    }

    pub fn next_due(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.due_us)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Drops every pending item matching `pred`.
    pub fn retain(&mut self, mut keep: impl FnMut(&T) -> bool) {
        let entries = std::mem::take(&mut self.heap).into_vec();
        self.heap = entries.into_iter().filter(|Reverse(e)| keep(&e.item)).collect();
    }
}
