//! Time-ordered event queue. Time is kept in integer microseconds so that
//! ordering never depends on floating-point rounding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::NodeId;

use super::node::Packet;

/// Simulation time in microseconds.
pub type SimTime = u64;

pub const MICROS_PER_SECOND: f64 = 1e6;

pub fn to_secs(t: SimTime) -> f64 {
    t as f64 / MICROS_PER_SECOND
}

/// Rounds to the nearest microsecond; negative and NaN inputs map to 0, huge
/// ones saturate.
pub fn from_secs(s: f64) -> SimTime {
    if !(s > 0.0) {
        return 0;
    }
    let us = (s * MICROS_PER_SECOND).round();
    if us >= u64::MAX as f64 {
        u64::MAX
    } else {
        us as SimTime
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// Local packet arrival at a source node.
    Generate { node: NodeId },
    /// A transmission finished; the packet reaches `to`.
    TxComplete { from: NodeId, to: NodeId, packet: Packet },
    /// Retry a paced transmitter.
    Wake { node: NodeId },
    /// A delaying node releases a held packet into its queues.
    Release { node: NodeId, packet: Packet },
    ControlTick,
    Sample,
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: the heap pops the earliest time, then the earliest insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { time, seq, event });
    }

    pub fn pop(&mut self) -> Option<(SimTime, Event)> {
        self.heap.pop().map(|s| (s.time, s.event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|s| s.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Packets carried by pending events, for in-flight accounting.
    pub fn carried_packets(&self) -> impl Iterator<Item = &Packet> {
        self.heap.iter().filter_map(|s| match &s.event {
            Event::TxComplete { packet, .. } | Event::Release { packet, .. } => Some(packet),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_then_insertion_order() {
        let mut q = EventQueue::new();
        q.push(5, Event::Sample);
        q.push(1, Event::Wake { node: NodeId(1) });
        q.push(5, Event::ControlTick);
        q.push(1, Event::Wake { node: NodeId(2) });
        let got: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(
            got,
            vec![
                (1, Event::Wake { node: NodeId(1) }),
                (1, Event::Wake { node: NodeId(2) }),
                (5, Event::Sample),
                (5, Event::ControlTick),
            ]
        );
    }

    #[test]
    fn second_conversions() {
        assert_eq!(from_secs(0.02), 20_000);
        assert_eq!(from_secs(-1.0), 0);
        assert_eq!(from_secs(f64::NAN), 0);
        assert_eq!(from_secs(f64::INFINITY), u64::MAX);
        assert_eq!(to_secs(1_500_000), 1.5);
    }
}
