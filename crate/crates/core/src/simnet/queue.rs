use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::SimTime;

struct Slot<T> {
    at: SimTime,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Slot<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<T> Eq for Slot<T> {}

impl<T> PartialOrd for Slot<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Slot<T> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Timestamp-ordered event queue; equal timestamps pop in insertion order.
pub struct EventQueue<T> {
    heap: BinaryHeap<Slot<T>>,
    next_seq: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: SimTime, item: T) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Slot { at, seq, item });
    }

    pub fn pop(&mut self) -> Option<(SimTime, T)> {
        self.heap.pop().map(|s| (s.at, s.item))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|s| s.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(mut q: EventQueue<&'static str>) -> Vec<&'static str> {
        std::iter::from_fn(|| q.pop().map(|(_, x)| x)).collect()
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::new();
        q.push(SimTime::from_millis(5), "a");
        q.push(SimTime::from_millis(5), "b");
        assert_eq!(drain(q), vec!["a", "b"]);
    }

    #[test]
    fn insertion_order_of_distinct_times_is_irrelevant() {
        let items = [(3, "c"), (1, "a"), (2, "b"), (9, "d")];
        let mut forward = EventQueue::new();
        let mut backward = EventQueue::new();
        for &(t, x) in &items {
            forward.push(SimTime::from_millis(t), x);
        }
        for &(t, x) in items.iter().rev() {
            backward.push(SimTime::from_millis(t), x);
        }
        assert_eq!(drain(forward), vec!["a", "b", "c", "d"]);
        assert_eq!(drain(backward), vec!["a", "b", "c", "d"]);
    }
}
